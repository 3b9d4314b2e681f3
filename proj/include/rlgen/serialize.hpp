#pragma once

#include <json.hpp>

#include <filesystem>
#include <optional>
#include <string>

#include "rlgen/bounds.hpp"
#include "rlgen/mdp.hpp"
#include "rlgen/policy.hpp"
#include "rlgen/rendering.hpp"
#include "rlgen/robustness.hpp"
#include "rlgen/trainer.hpp"

namespace rlgen {

using Json = nlohmann::json;

// ---- MDP ----
// Keys: n_states, n_actions, reward [s][a], transition [s][a][s'], rho,
// gamma. Doubles survive the round trip exactly (shortest round-trippable
// decimal form).
Json mdp_to_json(const TabularMdp& mdp);
TabularMdp mdp_from_json(const Json& j);

// ---- Rendering family ----
// Keys: family_id, obs_dim, seeds, weights, train_mask, and the coin-family
// extras when applicable. Observation tables regenerate deterministically
// from the per-member seeds, so they are not stored.
Json family_to_json(const RenderingFamily& family, const FamilySpec& spec);
RenderingFamily family_from_json(const Json& j, const TabularMdp& mdp,
                                 const CoinGridworld* grid, FamilySpec* spec_out = nullptr);

/// An environment bundle ties the underlying MDP, its construction recipe,
/// and a rendering family into one file (the gen-mdp output).
struct EnvBundle {
  TabularMdp mdp;
  RenderingFamily family;
  FamilySpec family_spec;
  std::optional<CoinGridworld> grid;  // present for coin environments
};

Json bundle_to_json(const EnvBundle& bundle);
EnvBundle bundle_from_json(const Json& j);

// ---- Policy checkpoints ----
// JSON header (arch, dims, optional seed note) plus the flat float64
// parameter vector as base64 of its little-endian bytes; bit-exact.
Json policy_to_json(const ObservationPolicy& policy);
ObservationPolicy policy_from_json(const Json& j);

// ---- Reports ----
Json theorem_check_to_json(const TheoremCheck& check);
Json bound_report_to_json(const BoundReport& report);
Json robustness_record_to_json(const RobustnessRecord& record,
                               bool reverse_primary);

// ---- Base64 ----
std::string base64_encode(const unsigned char* data, std::size_t len);
std::vector<unsigned char> base64_decode(const std::string& text);

// ---- Files ----
/// Writes via a temp file in the same directory, then renames, so readers
/// never observe a truncated file.
void atomic_write_file(const std::filesystem::path& path,
                       const std::string& content);
std::string read_file(const std::filesystem::path& path);

/// Doubles formatted with %.17g ("nan" for NaN); deterministic CSV cell.
std::string format_double(double v);

std::string metrics_to_csv(const std::vector<MetricsRow>& metrics);
std::string embeddings_to_csv(const std::vector<EmbeddingRow>& rows);

}  // namespace rlgen
