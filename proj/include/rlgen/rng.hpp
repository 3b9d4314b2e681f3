#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace rlgen {

/// SplitMix64: a counter-based generator. The state advances by the
/// golden-ratio increment and each output is a bijective 64-bit finalizer
/// of the state, so the stream depends only on the seed and is identical
/// on every platform. Reference: Steele, Lea & Flood (2014), as published
/// in Vigna's public-domain implementation.
class SplitMix64 {
 public:
  explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next() {
    std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ull);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }

 private:
  std::uint64_t state_;
};

/// Stream generator used throughout the project. All floating-point
/// transforms are written out explicitly (no std::*_distribution) so the
/// draw sequence is fixed by the seed alone.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  std::uint64_t next_u64() { return gen_.next(); }

  /// Uniform double in [0, 1), 53 mantissa bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  /// Uniform double in (0, 1]; safe as a log() argument.
  double uniform_pos() {
    return static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n). Multiply-shift mapping; the bias of at most
  /// n/2^64 is negligible for the small n used here.
  int uniform_int(int n) {
    return static_cast<int>((static_cast<unsigned __int128>(next_u64()) *
                             static_cast<unsigned __int128>(n)) >>
                            64);
  }

  /// Standard normal via Box-Muller, second value cached.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double u1 = uniform_pos();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * M_PI * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  /// Index sampled from a probability vector by inverse-CDF scan.
  int categorical(const Eigen::VectorXd& probs) {
    const double u = uniform();
    double cum = 0.0;
    for (Eigen::Index i = 0; i < probs.size(); ++i) {
      cum += probs[i];
      if (u < cum) return static_cast<int>(i);
    }
    return static_cast<int>(probs.size() - 1);
  }

  /// Flat Dirichlet draw: normalized iid Exp(1) variables.
  Eigen::VectorXd dirichlet_flat(int n) {
    Eigen::VectorXd g(n);
    for (int i = 0; i < n; ++i) g[i] = -std::log(uniform_pos());
    return g / g.sum();
  }

  void fill_gaussian(Eigen::Ref<Eigen::MatrixXd> m, double stddev = 1.0) {
    for (Eigen::Index j = 0; j < m.cols(); ++j)
      for (Eigen::Index i = 0; i < m.rows(); ++i) m(i, j) = stddev * normal();
  }

  void fill_uniform(Eigen::Ref<Eigen::MatrixXd> m, double lo, double hi) {
    for (Eigen::Index j = 0; j < m.cols(); ++j)
      for (Eigen::Index i = 0; i < m.rows(); ++i) m(i, j) = uniform(lo, hi);
  }

  /// Fisher-Yates permutation of 0..n-1.
  std::vector<int> permutation(int n) {
    std::vector<int> p(n);
    for (int i = 0; i < n; ++i) p[i] = i;
    for (int i = n - 1; i > 0; --i) std::swap(p[i], p[uniform_int(i + 1)]);
    return p;
  }

 private:
  SplitMix64 gen_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

/// FNV-1a 64-bit hash of a byte string.
std::uint64_t fnv1a64(std::string_view bytes);

/// Derives one child seed from a root seed and a label path. Each label is
/// folded in as h = finalize(h ^ fnv1a64(label)), with the SplitMix64
/// finalizer; the result is therefore a pure function of (root, labels) and
/// identical across platforms. Integer labels are folded as their decimal
/// strings.
std::uint64_t seed_tree(std::uint64_t root, const std::string_view* labels,
                        std::size_t n_labels);

inline std::uint64_t seed_tree(std::uint64_t root,
                               std::initializer_list<std::string_view> labels) {
  return seed_tree(root, labels.begin(), labels.size());
}

namespace detail {
inline std::string to_label(std::string_view s) { return std::string(s); }
inline std::string to_label(const char* s) { return std::string(s); }
inline std::string to_label(const std::string& s) { return s; }
template <typename T>
  requires std::is_integral_v<T>
inline std::string to_label(T v) {
  return std::to_string(v);
}
}  // namespace detail

/// Variadic front end for seed_tree; accepts strings and integers.
template <typename... Labels>
std::uint64_t derive_seed(std::uint64_t root, Labels&&... labels) {
  const std::string strs[] = {detail::to_label(labels)...};
  std::string_view views[sizeof...(labels)];
  for (std::size_t i = 0; i < sizeof...(labels); ++i) views[i] = strs[i];
  return seed_tree(root, views, sizeof...(labels));
}

}  // namespace rlgen
