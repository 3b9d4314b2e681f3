#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "rlgen/bounds.hpp"
#include "rlgen/serialize.hpp"
#include "rlgen/trainer.hpp"

namespace rlgen {

/// Error in a key=value config file, carrying the offending line number.
struct ConfigError : std::runtime_error {
  ConfigError(const std::string& file, int line, const std::string& msg)
      : std::runtime_error(file + ":" + std::to_string(line) + ": " + msg),
        line_number(line) {}
  int line_number;
};

/// Flat key=value configuration with [section] headers, '#' comments, no
/// nesting. Every getter records the key as claimed; expect_only rejects
/// unclaimed keys so typos fail loudly.
class KvConfig {
 public:
  static KvConfig parse_file(const std::filesystem::path& path);
  static KvConfig parse_string(const std::string& text,
                               const std::string& name);

  bool has(const std::string& section, const std::string& key) const;
  std::string get_string(const std::string& section, const std::string& key,
                         const std::string& fallback) const;
  double get_double(const std::string& section, const std::string& key,
                    double fallback) const;
  int get_int(const std::string& section, const std::string& key,
              int fallback) const;
  long long get_int64(const std::string& section, const std::string& key,
                      long long fallback) const;
  std::uint64_t get_uint64(const std::string& section, const std::string& key,
                           std::uint64_t fallback) const;
  bool get_bool(const std::string& section, const std::string& key,
                bool fallback) const;

  /// Throws ConfigError if the section holds a key outside `allowed`, or if
  /// the file has a section outside `sections`.
  void expect_only(const std::string& section,
                   const std::set<std::string>& allowed) const;
  void expect_sections(const std::set<std::string>& sections) const;

 private:
  struct Entry {
    std::string value;
    int line = 0;
  };
  std::string name_;
  std::map<std::string, std::map<std::string, Entry>> sections_;
  std::map<std::string, int> section_lines_;

  const Entry* find(const std::string& section, const std::string& key) const;
};

/// Applies the [train] section onto a PpoConfig; unknown keys throw.
PpoConfig ppo_config_from_kv(const KvConfig& kv, const PpoConfig& defaults);

struct CampaignOptions {
  int instances = 1000;
  int max_states = 6;
  int max_actions = 3;
  int max_functions = 8;
  int max_train = 4;
  std::uint64_t seed = 1;
  int workers = 1;
  double gamma = 0.9;
};

struct CampaignSummary {
  int instances = 0;
  int failures = 0;
  /// Minimum observed slack per check: thm1..thm5, corollary.
  std::array<double, 6> min_slack{};
  double runtime_seconds = 0.0;
};

struct CampaignInstance {
  TabularMdp mdp;
  RenderingFamily family;
  FamilySpec family_spec;
  ObservationPolicy pi;
  ObservationPolicy pi_tilde;
};

/// Deterministic instance generator: random MDP, permute-onehot or affine
/// family, and a linear-softmax policy pair whose logit tables are Gaussian
/// with scale 1/temperature, temperatures swept over {0.1, 1, 10}.
CampaignInstance make_campaign_instance(const CampaignOptions& options,
                                        int index);

struct CampaignResult {
  std::vector<BoundReport> reports;
  CampaignSummary summary;
  int first_failure = -1;  // instance index, or -1
};

/// Verifies Theorems 1-5 and the Corollary on every instance, plus the
/// performance-difference identity (1e-9 absolute). Instances are
/// independent; `workers` threads split them by index, and the output is
/// identical for any worker count.
CampaignResult run_campaign(const CampaignOptions& options);

Json campaign_result_to_json(const CampaignResult& result);
Json counterexample_to_json(const CampaignInstance& instance,
                            const BoundReport& report);

/// Worker count from the RLGEN_WORKERS environment variable, or fallback.
int worker_count_from_env(int fallback);

/// CLI entry point. Exit codes: 0 success, 1 verification or runtime
/// failure, 2 usage or config error.
int run_cli(int argc, const char* const* argv);

}  // namespace rlgen
