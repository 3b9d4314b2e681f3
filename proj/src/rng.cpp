#include "rlgen/rng.hpp"

namespace rlgen {

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xCBF29CE484222325ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001B3ull;
  }
  return h;
}

namespace {
std::uint64_t finalize(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}
}  // namespace

std::uint64_t seed_tree(std::uint64_t root, const std::string_view* labels,
                        std::size_t n_labels) {
  std::uint64_t h = finalize(root + 0x9E3779B97F4A7C15ull);
  for (std::size_t i = 0; i < n_labels; ++i) h = finalize(h ^ fnv1a64(labels[i]));
  return h;
}

}  // namespace rlgen
