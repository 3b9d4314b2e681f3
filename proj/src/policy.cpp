#include "rlgen/policy.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace rlgen {

namespace {

using MapMat = Eigen::Map<Matrix>;
using MapConstMat = Eigen::Map<const Matrix>;
using MapVec = Eigen::Map<Vector>;
using MapConstVec = Eigen::Map<const Vector>;

struct ForwardScratch {
  Vector features;   // encoder output
  Vector logits;
  Vector log_probs;
  Vector probs;
  double value = 0.0;
};

ForwardScratch run_forward(const ObservationPolicy& policy,
                           const ParamLayout& lay,
                           const Eigen::Ref<const Vector>& obs) {
  ForwardScratch f;
  if (policy.arch == PolicyArch::OneHiddenMlp) {
    MapConstMat w_enc(policy.params.data() + lay.enc_w, policy.hidden_dim,
                      policy.obs_dim);
    MapConstVec b_enc(policy.params.data() + lay.enc_b, policy.hidden_dim);
    f.features = ((w_enc * obs) + b_enc).array().tanh();
  } else {
    f.features = obs;
  }
  MapConstMat w_pol(policy.params.data() + lay.pol_w, policy.n_actions,
                    lay.feat_dim);
  MapConstVec b_pol(policy.params.data() + lay.pol_b, policy.n_actions);
  MapConstVec w_val(policy.params.data() + lay.val_w, lay.feat_dim);
  f.logits = w_pol * f.features + b_pol;
  f.value = w_val.dot(f.features) + policy.params[lay.val_b];

  const double m = f.logits.maxCoeff();
  const double lse = m + std::log((f.logits.array() - m).exp().sum());
  f.log_probs = f.logits.array() - lse;
  f.probs = f.log_probs.array().exp();
  return f;
}

}  // namespace

ParamLayout param_layout(PolicyArch arch, int obs_dim, int n_actions,
                         int hidden_dim) {
  ParamLayout lay;
  lay.feat_dim = (arch == PolicyArch::OneHiddenMlp) ? hidden_dim : obs_dim;
  int off = 0;
  if (arch == PolicyArch::OneHiddenMlp) {
    lay.enc_w = off;
    lay.enc_w_size = hidden_dim * obs_dim;
    off += lay.enc_w_size;
    lay.enc_b = off;
    lay.enc_b_size = hidden_dim;
    off += lay.enc_b_size;
  }
  lay.pol_w = off;
  lay.pol_w_size = n_actions * lay.feat_dim;
  off += lay.pol_w_size;
  lay.pol_b = off;
  lay.pol_b_size = n_actions;
  off += lay.pol_b_size;
  lay.val_w = off;
  lay.val_w_size = lay.feat_dim;
  off += lay.val_w_size;
  lay.val_b = off;
  lay.total = off + 1;
  return lay;
}

ObservationPolicy init_policy(PolicyArch arch, int obs_dim, int n_actions,
                              int hidden_dim, std::uint64_t seed) {
  if (obs_dim < 1 || n_actions < 1)
    throw std::invalid_argument("init_policy: bad dimensions");
  if (arch == PolicyArch::OneHiddenMlp && hidden_dim < 1)
    throw std::invalid_argument("init_policy: mlp needs hidden_dim >= 1");
  if (arch == PolicyArch::LinearSoftmax) hidden_dim = 0;

  ObservationPolicy p;
  p.arch = arch;
  p.obs_dim = obs_dim;
  p.n_actions = n_actions;
  p.hidden_dim = hidden_dim;
  p.init_seed = seed;
  const ParamLayout lay = param_layout(p);
  p.params = Vector::Zero(lay.total);

  Rng rng(seed);
  constexpr double kInitStd = 0.1;
  if (arch == PolicyArch::OneHiddenMlp) {
    MapMat w_enc(p.params.data() + lay.enc_w, hidden_dim, obs_dim);
    rng.fill_gaussian(w_enc, kInitStd);
  }
  MapMat w_pol(p.params.data() + lay.pol_w, n_actions, lay.feat_dim);
  rng.fill_gaussian(w_pol, kInitStd);
  MapMat w_val(p.params.data() + lay.val_w, lay.feat_dim, 1);
  rng.fill_gaussian(w_val, kInitStd);
  return p;
}

PolicyEval forward(const ObservationPolicy& policy, const Vector& obs) {
  if (obs.size() != policy.obs_dim)
    throw std::invalid_argument("forward: observation dimension mismatch");
  if (!obs.allFinite())
    throw std::invalid_argument("forward: non-finite observation");
  const ParamLayout lay = param_layout(policy);
  ForwardScratch f = run_forward(policy, lay, obs);
  PolicyEval out;
  out.probs = std::move(f.probs);
  out.log_probs = std::move(f.log_probs);
  out.value = f.value;
  out.features = std::move(f.features);
  return out;
}

namespace {

void check_batch(const ObservationPolicy& policy, const Minibatch& batch) {
  const int n = batch.size();
  if (n == 0) throw std::invalid_argument("minibatch is empty");
  if (batch.obs.cols() != policy.obs_dim)
    throw std::invalid_argument("minibatch: observation dimension mismatch");
  if (batch.actions.size() != n || batch.log_prob_old.size() != n ||
      batch.advantages.size() != n || batch.returns.size() != n)
    throw std::invalid_argument("minibatch: column length mismatch");
}

[[noreturn]] void nonfinite(int sample) {
  throw std::runtime_error("non-finite intermediate at sample " +
                           std::to_string(sample));
}

}  // namespace

LossBreakdown evaluate_loss(const ObservationPolicy& policy,
                            const LossSpec& spec, const Minibatch& batch) {
  return loss_and_gradient(policy, spec, batch).first;
}

std::pair<LossBreakdown, GradientVector> loss_and_gradient(
    const ObservationPolicy& policy, const LossSpec& spec,
    const Minibatch& batch) {
  check_batch(policy, batch);
  const ParamLayout lay = param_layout(policy);
  const int n = batch.size();
  const double inv_n = 1.0 / n;
  const bool use_kl = spec.kl_coef != 0.0;
  if (use_kl && (batch.peer_probs.rows() != n ||
                 batch.peer_probs.cols() != policy.n_actions))
    throw std::invalid_argument("minibatch: peer_probs shape mismatch");

  LossBreakdown loss;
  Vector grad = Vector::Zero(lay.total);
  MapMat g_pol_w(grad.data() + lay.pol_w, policy.n_actions, lay.feat_dim);
  MapVec g_pol_b(grad.data() + lay.pol_b, policy.n_actions);
  MapVec g_val_w(grad.data() + lay.val_w, lay.feat_dim);
  MapConstMat w_pol(policy.params.data() + lay.pol_w, policy.n_actions,
                    lay.feat_dim);
  MapConstVec w_val(policy.params.data() + lay.val_w, lay.feat_dim);

  for (int t = 0; t < n; ++t) {
    const auto obs_t = batch.obs.row(t).transpose();
    const ForwardScratch f = run_forward(policy, lay, obs_t);
    if (!f.log_probs.allFinite() || !std::isfinite(f.value)) nonfinite(t);

    const int a = batch.actions[t];
    if (a < 0 || a >= policy.n_actions)
      throw std::invalid_argument("minibatch: action index out of range");
    const double adv = batch.advantages[t];
    const double ratio = std::exp(f.log_probs[a] - batch.log_prob_old[t]);
    if (!std::isfinite(ratio)) nonfinite(t);

    // dL/dlogits for this sample, accumulated term by term.
    Vector dz = Vector::Zero(policy.n_actions);

    // Clipped surrogate: -min(ratio*A, clip(ratio)*A). Gradient flows only
    // through the unclipped branch when it attains the min.
    const double unclipped = ratio * adv;
    const double clipped =
        std::clamp(ratio, 1.0 - spec.clip_eps, 1.0 + spec.clip_eps) * adv;
    loss.policy -= inv_n * std::min(unclipped, clipped);
    if (spec.policy_coef != 0.0 && unclipped <= clipped) {
      const double c = -spec.policy_coef * inv_n * adv * ratio;
      dz += c * (-f.probs);
      dz[a] += c;
    }

    // Value head: (1/2)(V - R)^2.
    const double verr = f.value - batch.returns[t];
    loss.value += inv_n * 0.5 * verr * verr;
    const double dv = spec.value_coef * inv_n * verr;

    // Entropy bonus: H = -sum p log p; dH/dz_j = -p_j (log p_j + H).
    const double entropy = -(f.probs.array() * f.log_probs.array()).sum();
    loss.entropy += inv_n * entropy;
    if (spec.entropy_coef != 0.0)
      dz += spec.entropy_coef * inv_n *
            (f.probs.array() * (f.log_probs.array() + entropy)).matrix();

    // Mutual-learning term: KL(peer || self), peer constant; d/dz = p - q.
    if (use_kl) {
      const auto q = batch.peer_probs.row(t).transpose();
      loss.kl += inv_n * kl_divergence(q, f.probs);
      dz += spec.kl_coef * inv_n * (f.probs - q);
    }

    // Backpropagate dz and dv through the heads into the features.
    g_pol_w.noalias() += dz * f.features.transpose();
    g_pol_b += dz;
    g_val_w += dv * f.features;
    grad[lay.val_b] += dv;
    if (policy.arch == PolicyArch::OneHiddenMlp) {
      Vector dfeat = w_pol.transpose() * dz + dv * w_val;
      Vector dpre =
          (1.0 - f.features.array().square()).matrix().cwiseProduct(dfeat);
      MapMat g_enc_w(grad.data() + lay.enc_w, policy.hidden_dim,
                     policy.obs_dim);
      MapVec g_enc_b(grad.data() + lay.enc_b, policy.hidden_dim);
      g_enc_w.noalias() += dpre * obs_t.transpose();
      g_enc_b += dpre;
    }
  }

  loss.total = spec.policy_coef * loss.policy + spec.value_coef * loss.value -
               spec.entropy_coef * loss.entropy + spec.kl_coef * loss.kl;
  if (!std::isfinite(loss.total)) nonfinite(-1);
  return {loss, GradientVector{std::move(grad)}};
}

GradientVector kl_as_source_gradient(const ObservationPolicy& policy,
                                     const Matrix& obs,
                                     const Matrix& const_probs) {
  const int n = static_cast<int>(obs.rows());
  if (n == 0) throw std::invalid_argument("kl_as_source_gradient: empty batch");
  if (const_probs.rows() != n || const_probs.cols() != policy.n_actions)
    throw std::invalid_argument("kl_as_source_gradient: shape mismatch");
  const ParamLayout lay = param_layout(policy);
  const double inv_n = 1.0 / n;

  Vector grad = Vector::Zero(lay.total);
  MapMat g_pol_w(grad.data() + lay.pol_w, policy.n_actions, lay.feat_dim);
  MapVec g_pol_b(grad.data() + lay.pol_b, policy.n_actions);
  MapConstMat w_pol(policy.params.data() + lay.pol_w, policy.n_actions,
                    lay.feat_dim);

  for (int t = 0; t < n; ++t) {
    const auto obs_t = obs.row(t).transpose();
    const ForwardScratch f = run_forward(policy, lay, obs_t);
    const auto c = const_probs.row(t).transpose();
    const double kl = kl_divergence(f.probs, c);
    // d KL(q || c) / dz_j = q_j (log(q_j / c_j) - KL), q = softmax(z).
    Vector dz(policy.n_actions);
    for (int j = 0; j < policy.n_actions; ++j)
      dz[j] = inv_n * f.probs[j] *
              (f.log_probs[j] - std::log(c[j]) - kl);
    g_pol_w.noalias() += dz * f.features.transpose();
    g_pol_b += dz;
    if (policy.arch == PolicyArch::OneHiddenMlp) {
      Vector dfeat = w_pol.transpose() * dz;
      Vector dpre =
          (1.0 - f.features.array().square()).matrix().cwiseProduct(dfeat);
      MapMat g_enc_w(grad.data() + lay.enc_w, policy.hidden_dim,
                     policy.obs_dim);
      MapVec g_enc_b(grad.data() + lay.enc_b, policy.hidden_dim);
      g_enc_w.noalias() += dpre * obs_t.transpose();
      g_enc_b += dpre;
    }
  }
  return GradientVector{std::move(grad)};
}

}  // namespace rlgen
