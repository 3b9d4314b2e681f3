#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <utility>

#include "rlgen/mdp.hpp"

namespace rlgen {

enum class PolicyArch { LinearSoftmax, OneHiddenMlp };

/// Parametric observation policy with a shared encoder and two heads
/// (softmax action head, scalar value head). Parameters live in one flat
/// vector; see ParamLayout for the block order.
///
/// OneHiddenMlp:   features = tanh(W_enc * obs + b_enc)
/// LinearSoftmax:  features = obs (identity encoder, no encoder params)
/// then            logits = W_pol * features + b_pol
///                 value  = w_val . features + b_val
struct ObservationPolicy {
  PolicyArch arch = PolicyArch::OneHiddenMlp;
  int obs_dim = 0;
  int n_actions = 0;
  int hidden_dim = 0;  // 0 for LinearSoftmax
  std::uint64_t init_seed = 0;
  Vector params;
};

/// Offsets of the parameter blocks inside ObservationPolicy::params.
/// Matrices are stored column-major. Block order:
///   [W_enc | b_enc | W_pol | b_pol | w_val | b_val]
/// with the encoder blocks absent (size 0) for LinearSoftmax.
struct ParamLayout {
  int feat_dim = 0;
  int enc_w = 0, enc_w_size = 0;
  int enc_b = 0, enc_b_size = 0;
  int pol_w = 0, pol_w_size = 0;
  int pol_b = 0, pol_b_size = 0;
  int val_w = 0, val_w_size = 0;
  int val_b = 0;
  int total = 0;

  int encoder_size() const { return enc_w_size + enc_b_size; }
};

ParamLayout param_layout(PolicyArch arch, int obs_dim, int n_actions,
                         int hidden_dim);
inline ParamLayout param_layout(const ObservationPolicy& p) {
  return param_layout(p.arch, p.obs_dim, p.n_actions, p.hidden_dim);
}

/// Gaussian weights (std 0.1), zero biases, deterministic in the seed.
ObservationPolicy init_policy(PolicyArch arch, int obs_dim, int n_actions,
                              int hidden_dim, std::uint64_t seed);

struct PolicyEval {
  Vector probs;
  Vector log_probs;
  double value = 0.0;
  Vector features;  // encoder output, exposed for robustness tooling
};

/// Deterministic forward pass. Throws on dimension mismatch or non-finite
/// observation entries. The softmax is log-sum-exp stabilized.
PolicyEval forward(const ObservationPolicy& policy, const Vector& obs);

/// One PPO/DML minibatch. peer_probs (rows: samples) holds the peer
/// policy's action distributions on the same observations and is treated
/// as constant; leave it empty when no KL term is active.
struct Minibatch {
  Matrix obs;                // N x obs_dim
  Eigen::VectorXi actions;   // N
  Vector log_prob_old;       // N
  Vector advantages;         // N
  Vector returns;            // N
  Matrix peer_probs;         // N x n_actions or empty

  int size() const { return static_cast<int>(obs.rows()); }
};

/// Which loss terms are active and with what weights. The scalar total is
///   policy_coef * L_clip + value_coef * L_v - entropy_coef * L_e
///   + kl_coef * mean_t KL(peer_t || self_t),
/// every term a mean over the minibatch.
struct LossSpec {
  double clip_eps = 0.2;
  double policy_coef = 1.0;
  double value_coef = 0.5;
  double entropy_coef = 0.01;
  double kl_coef = 0.0;
};

struct LossBreakdown {
  double total = 0.0;
  double policy = 0.0;
  double value = 0.0;
  double entropy = 0.0;  // mean entropy (the bonus enters total negatively)
  double kl = 0.0;       // mean KL(peer || self)
};

/// Flat gradient aligned with ObservationPolicy::params.
struct GradientVector {
  Vector grad;
};

LossBreakdown evaluate_loss(const ObservationPolicy& policy,
                            const LossSpec& spec, const Minibatch& batch);

/// Analytic gradient of the scalar total loss. The peer distribution inside
/// the KL term is a constant (no gradient flows to the peer). Throws with
/// the offending sample index if an intermediate is non-finite.
std::pair<LossBreakdown, GradientVector> loss_and_gradient(
    const ObservationPolicy& policy, const LossSpec& spec,
    const Minibatch& batch);

inline GradientVector backward(const ObservationPolicy& policy,
                               const LossSpec& spec, const Minibatch& batch) {
  return loss_and_gradient(policy, spec, batch).second;
}

/// Gradient of mean_t KL(self_t || const_probs_t) with respect to this
/// policy's parameters, where the policy plays the *first* KL argument.
/// Used when the mutual-learning KL term is differentiated through both
/// agents instead of stop-gradient on the peer.
GradientVector kl_as_source_gradient(const ObservationPolicy& policy,
                                     const Matrix& obs,
                                     const Matrix& const_probs);

}  // namespace rlgen
