#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <utility>
#include <vector>

#include "rlgen/mdp.hpp"
#include "rlgen/policy.hpp"
#include "rlgen/rendering.hpp"

namespace rlgen {

struct TrajectoryStep {
  Vector obs;
  int action = 0;
  double reward = 0.0;
  double log_prob_old = 0.0;
  double value_old = 0.0;
  int f_index = 0;
};

/// One fixed-horizon rollout segment plus the bootstrap value at the state
/// after the last step.
struct Trajectory {
  std::vector<TrajectoryStep> steps;
  double bootstrap_value = 0.0;

  void validate() const;
};

/// Generalized advantage estimation. Returns (advantages, returns) with
/// returns_t = value_old_t + advantage_t.
std::pair<Vector, Vector> gae_advantages(const Trajectory& traj, double gamma,
                                         double lambda);

struct PpoConfig {
  double gamma = 0.99;
  double gae_lambda = 0.95;
  double clip_eps = 0.2;
  double value_coef = 0.5;    // c1
  double entropy_coef = 0.01; // c2
  double kl_weight = 1.0;     // alpha (mutual-learning mode only)
  int update_epochs = 3;
  int minibatches = 8;
  int horizon = 64;
  int n_workers = 8;
  double learning_rate = 5e-4;
  long long total_steps = 2000000;
  std::uint64_t seed = 0;
  bool normalize_advantages = true;
  /// Differentiate the mutual-learning KL through the peer snapshot as well
  /// (default: the peer is a fixed target).
  bool kl_joint_grad = false;
  /// Iterations between exact/empirical return evaluations in the log.
  int exact_eval_every = 10;
  /// Episodes per empirical return estimate.
  int est_episodes = 24;
  PolicyArch arch = PolicyArch::OneHiddenMlp;
  int hidden_dim = 32;

  void validate() const;
};

/// PPO loss on one minibatch: L_p + c1 L_v - c2 L_e. Components are the
/// unweighted per-term means.
double ppo_loss(const ObservationPolicy& policy, const Minibatch& batch,
                const PpoConfig& config, LossBreakdown* components = nullptr);

/// Mutual-learning loss: PPO loss plus alpha * mean KL(peer || self), the
/// peer distribution treated as a constant.
double dml_loss(const ObservationPolicy& policy, const Matrix& peer_probs,
                const Minibatch& batch, const PpoConfig& config,
                LossBreakdown* components = nullptr);

struct MetricsRow {
  int iteration = 0;
  long long steps = 0;
  double train_return_emp = 0.0;  // NaN between estimation points
  double eval_return_emp = 0.0;
  double eta_exact = 0.0;
  double zeta_exact = 0.0;
  double kl_between_agents = 0.0;  // NaN in baseline mode
  double entropy = 0.0;
  double loss_policy = 0.0;
  double loss_value = 0.0;
  double loss_entropy = 0.0;
  double loss_kl = 0.0;
  double loss_total = 0.0;
};

enum class TrainMode { Baseline, Dml };

struct TrainedAgent {
  ObservationPolicy policy;
  /// FNV-1a hash of the parameter bytes after every iteration; used to
  /// compare trajectories bit-exactly.
  std::vector<std::uint64_t> param_trace;
};

struct TrainResult {
  std::vector<TrainedAgent> agents;
  std::vector<MetricsRow> metrics;
};

struct TrainOptions {
  /// Per-agent initial policies; empty means fresh seeded initialization.
  std::vector<ObservationPolicy> initial_policies;
  /// Elementwise gradient multiplier (0 freezes a parameter); empty = none.
  Vector gradient_mask;
};

/// Adam with bias correction; beta = (0.9, 0.999), eps = 1e-8.
class AdamOptimizer {
 public:
  AdamOptimizer(int dim, double lr, double beta1 = 0.9, double beta2 = 0.999,
                double eps = 1e-8);
  void step(Vector& params, const Vector& grad);

 private:
  double lr_, beta1_, beta2_, eps_;
  long t_ = 0;
  Vector m_, v_;
};

std::uint64_t params_hash(const ObservationPolicy& policy);

/// Baseline mode trains one agent with clipped-surrogate PPO; Dml mode
/// trains two agents that collect data independently and pull toward each
/// other through the KL term. Deterministic in the config seed; with
/// kl_weight = 0 the Dml-mode agent 0 reproduces a baseline run bit for bit.
TrainResult train(const TabularMdp& mdp, const RenderingFamily& family,
                  const PpoConfig& config, TrainMode mode);
TrainResult train_with_options(const TabularMdp& mdp,
                               const RenderingFamily& family,
                               const PpoConfig& config, TrainMode mode,
                               const TrainOptions& options);

/// One horizon-length collection segment: a fresh rendering function from
/// the split, a fresh initial state, then on-policy steps.
Trajectory collect_segment(const TabularMdp& mdp, const RenderingFamily& family,
                           const ObservationPolicy& policy, int horizon,
                           Rng& rng, Split split = Split::Train);

}  // namespace rlgen
