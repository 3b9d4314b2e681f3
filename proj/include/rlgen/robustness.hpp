#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <vector>

#include "rlgen/mdp.hpp"
#include "rlgen/policy.hpp"
#include "rlgen/rendering.hpp"
#include "rlgen/trainer.hpp"

namespace rlgen {

/// A bank of random dense linear maps applied to raw observations, the
/// flat-vector analog of random perturbation layers. Entries are standard
/// Gaussian; the bank regenerates bit-exactly from its seed.
struct PerturbationSuite {
  int n_perturbations = 0;
  std::uint64_t seed = 0;
  std::vector<Matrix> maps;  // each obs_dim x obs_dim
};

PerturbationSuite make_perturbation_suite(int obs_dim, int n_perturbations,
                                          std::uint64_t seed);

struct RobustnessRecord {
  /// Per interaction step, the mean over the suite of
  /// KL(policy(o) || policy(M o)); this is the primary direction.
  Vector per_step_mean_kl;
  double summary_mean = 0.0;
  double summary_std = 0.0;  // population standard deviation (divisor n)
  /// Same statistics with the KL arguments swapped.
  Vector per_step_mean_kl_reverse;
  double reverse_summary_mean = 0.0;
  double reverse_summary_std = 0.0;
};

/// Rolls out n_steps consecutive steps (one rendering function from the
/// split, actions sampled from the unperturbed policy) and measures the
/// policy's KL sensitivity to the perturbation bank at each step.
RobustnessRecord robustness_test(const ObservationPolicy& policy,
                                 const TabularMdp& mdp,
                                 const RenderingFamily& family,
                                 const PerturbationSuite& suite,
                                 int n_steps, std::uint64_t rollout_seed,
                                 Split split = Split::Eval);

struct EmbeddingRow {
  int obs_id = 0;
  int perturbation_id = 0;  // -1 marks the unperturbed observation
  Vector features;
};

/// Encoder features for every (observation, perturbation) pair, plus an
/// unperturbed row per observation, for external projection tools.
std::vector<EmbeddingRow> export_embeddings(const ObservationPolicy& policy,
                                            const Matrix& observations,
                                            const PerturbationSuite& suite);

/// Mean pairwise L2 distance between feature rows within each obs_id group,
/// averaged over groups; a dispersion statistic for embedding exports.
double embedding_dispersion(const std::vector<EmbeddingRow>& rows);

/// Re-trains policy and value heads with baseline PPO while the encoder
/// parameters of the checkpoint stay bit-identical (their gradient slice is
/// zeroed). Rejects checkpoints without an encoder.
TrainResult frozen_encoder_retrain(const ObservationPolicy& checkpoint,
                                   const TabularMdp& mdp,
                                   const RenderingFamily& family,
                                   const PpoConfig& config);

}  // namespace rlgen
