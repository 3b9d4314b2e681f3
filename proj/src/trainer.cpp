#include "rlgen/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace rlgen {

namespace {
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
}

void Trajectory::validate() const {
  for (std::size_t t = 0; t < steps.size(); ++t) {
    const TrajectoryStep& s = steps[t];
    if (!std::isfinite(s.reward) || !std::isfinite(s.value_old) ||
        !std::isfinite(s.log_prob_old) || s.log_prob_old > 0.0)
      throw std::invalid_argument("Trajectory: bad step " + std::to_string(t));
  }
  if (!std::isfinite(bootstrap_value))
    throw std::invalid_argument("Trajectory: non-finite bootstrap value");
}

std::pair<Vector, Vector> gae_advantages(const Trajectory& traj, double gamma,
                                         double lambda) {
  const int n = static_cast<int>(traj.steps.size());
  if (n == 0) throw std::invalid_argument("gae_advantages: empty trajectory");
  Vector adv(n), ret(n);
  double running = 0.0;
  for (int t = n - 1; t >= 0; --t) {
    const double next_value =
        (t + 1 < n) ? traj.steps[t + 1].value_old : traj.bootstrap_value;
    const double delta =
        traj.steps[t].reward + gamma * next_value - traj.steps[t].value_old;
    running = delta + gamma * lambda * running;
    adv[t] = running;
    ret[t] = traj.steps[t].value_old + running;
  }
  return {adv, ret};
}

void PpoConfig::validate() const {
  if (clip_eps <= 0.0 || clip_eps >= 1.0)
    throw std::invalid_argument("PpoConfig: clip_eps must be in (0, 1)");
  if (gamma <= 0.0 || gamma > 1.0)
    throw std::invalid_argument("PpoConfig: gamma must be in (0, 1]");
  if (gae_lambda <= 0.0 || gae_lambda > 1.0)
    throw std::invalid_argument("PpoConfig: gae_lambda must be in (0, 1]");
  if (kl_weight < 0.0)
    throw std::invalid_argument("PpoConfig: kl_weight must be >= 0");
  if (update_epochs < 1 || minibatches < 1 || horizon < 1 || n_workers < 1)
    throw std::invalid_argument("PpoConfig: counts must be >= 1");
  if (learning_rate < 0.0)
    throw std::invalid_argument("PpoConfig: learning_rate must be >= 0");
  if (total_steps < 0)
    throw std::invalid_argument("PpoConfig: total_steps must be >= 0");
  if (exact_eval_every < 1 || est_episodes < 1)
    throw std::invalid_argument("PpoConfig: eval cadence must be >= 1");
  if (arch == PolicyArch::OneHiddenMlp && hidden_dim < 1)
    throw std::invalid_argument("PpoConfig: hidden_dim must be >= 1");
}

double ppo_loss(const ObservationPolicy& policy, const Minibatch& batch,
                const PpoConfig& config, LossBreakdown* components) {
  LossSpec spec;
  spec.clip_eps = config.clip_eps;
  spec.policy_coef = 1.0;
  spec.value_coef = config.value_coef;
  spec.entropy_coef = config.entropy_coef;
  spec.kl_coef = 0.0;
  const LossBreakdown lb = evaluate_loss(policy, spec, batch);
  if (components) *components = lb;
  return lb.total;
}

double dml_loss(const ObservationPolicy& policy, const Matrix& peer_probs,
                const Minibatch& batch, const PpoConfig& config,
                LossBreakdown* components) {
  LossSpec spec;
  spec.clip_eps = config.clip_eps;
  spec.policy_coef = 1.0;
  spec.value_coef = config.value_coef;
  spec.entropy_coef = config.entropy_coef;
  spec.kl_coef = config.kl_weight;
  Minibatch with_peer = batch;
  with_peer.peer_probs = peer_probs;
  const LossBreakdown lb = evaluate_loss(policy, spec, with_peer);
  if (components) *components = lb;
  return lb.total;
}

AdamOptimizer::AdamOptimizer(int dim, double lr, double beta1, double beta2,
                             double eps)
    : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps),
      m_(Vector::Zero(dim)), v_(Vector::Zero(dim)) {}

void AdamOptimizer::step(Vector& params, const Vector& grad) {
  ++t_;
  m_ = beta1_ * m_ + (1.0 - beta1_) * grad;
  v_ = beta2_ * v_ + (1.0 - beta2_) * grad.cwiseProduct(grad);
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  params.array() -=
      lr_ * (m_.array() / bc1) / ((v_.array() / bc2).sqrt() + eps_);
}

std::uint64_t params_hash(const ObservationPolicy& policy) {
  return fnv1a64(std::string_view(
      reinterpret_cast<const char*>(policy.params.data()),
      static_cast<std::size_t>(policy.params.size()) * sizeof(double)));
}

Trajectory collect_segment(const TabularMdp& mdp, const RenderingFamily& family,
                           const ObservationPolicy& policy, int horizon,
                           Rng& rng, Split split) {
  Trajectory traj;
  traj.steps.reserve(horizon);
  const int f_idx = sample_function(family, split, rng);
  const RenderingFunction& f = family.members[f_idx];
  int s = rng.categorical(mdp.rho);
  for (int t = 0; t < horizon; ++t) {
    TrajectoryStep step;
    step.obs = f.obs_table.row(s).transpose();
    step.f_index = f_idx;
    const PolicyEval eval = forward(policy, step.obs);
    step.action = rng.categorical(eval.probs);
    step.log_prob_old = eval.log_probs[step.action];
    step.value_old = eval.value;
    step.reward = mdp.reward(s, step.action);
    s = rng.categorical(mdp.transition[step.action].row(s).transpose());
    traj.steps.push_back(std::move(step));
  }
  traj.bootstrap_value = forward(policy, f.obs_table.row(s).transpose()).value;
  return traj;
}

namespace {

struct FlatBatch {
  Matrix obs;
  Eigen::VectorXi actions;
  Vector log_prob_old;
  Vector advantages;
  Vector returns;
  double mean_entropy = 0.0;
};

FlatBatch flatten(const std::vector<Trajectory>& trajectories,
                  const PpoConfig& config, const ObservationPolicy& policy) {
  int total = 0;
  for (const Trajectory& t : trajectories) total += static_cast<int>(t.steps.size());
  FlatBatch flat;
  flat.obs.resize(total, policy.obs_dim);
  flat.actions.resize(total);
  flat.log_prob_old.resize(total);
  flat.advantages.resize(total);
  flat.returns.resize(total);

  int row = 0;
  double entropy_sum = 0.0;
  for (const Trajectory& traj : trajectories) {
    const auto [adv, ret] =
        gae_advantages(traj, config.gamma, config.gae_lambda);
    for (std::size_t t = 0; t < traj.steps.size(); ++t) {
      const TrajectoryStep& s = traj.steps[t];
      flat.obs.row(row) = s.obs.transpose();
      flat.actions[row] = s.action;
      flat.log_prob_old[row] = s.log_prob_old;
      flat.advantages[row] = adv[static_cast<int>(t)];
      flat.returns[row] = ret[static_cast<int>(t)];
      ++row;
    }
  }
  // Entropy of the collecting policy over the batch.
  for (int r = 0; r < total; ++r) {
    const PolicyEval eval = forward(policy, flat.obs.row(r).transpose());
    entropy_sum -= (eval.probs.array() * eval.log_probs.array()).sum();
  }
  flat.mean_entropy = entropy_sum / total;
  return flat;
}

Minibatch slice_batch(const FlatBatch& flat, const std::vector<int>& perm,
                      int begin, int end, bool normalize) {
  const int n = end - begin;
  Minibatch mb;
  mb.obs.resize(n, flat.obs.cols());
  mb.actions.resize(n);
  mb.log_prob_old.resize(n);
  mb.advantages.resize(n);
  mb.returns.resize(n);
  for (int k = 0; k < n; ++k) {
    const int idx = perm[begin + k];
    mb.obs.row(k) = flat.obs.row(idx);
    mb.actions[k] = flat.actions[idx];
    mb.log_prob_old[k] = flat.log_prob_old[idx];
    mb.advantages[k] = flat.advantages[idx];
    mb.returns[k] = flat.returns[idx];
  }
  if (normalize && n > 1) {
    const double mean = mb.advantages.mean();
    const double sq = (mb.advantages.array() - mean).square().sum() / n;
    mb.advantages = (mb.advantages.array() - mean) / (std::sqrt(sq) + 1e-8);
  }
  return mb;
}

Matrix peer_distribution(const ObservationPolicy& peer, const Matrix& obs) {
  Matrix probs(obs.rows(), peer.n_actions);
  for (int r = 0; r < obs.rows(); ++r)
    probs.row(r) = forward(peer, obs.row(r).transpose()).probs.transpose();
  return probs;
}

// One-time self-check per run: the analytic gradient of the first minibatch
// must match central finite differences. At this point no update has been
// applied, so every ratio sits at 1, far from the clip kinks.
void spot_check_gradient(const ObservationPolicy& policy, const LossSpec& spec,
                         const Minibatch& batch, const Vector& analytic) {
  constexpr double kStep = 1e-5;
  ObservationPolicy probe = policy;
  for (Eigen::Index i = 0; i < policy.params.size(); ++i) {
    probe.params[i] = policy.params[i] + kStep;
    const double up = evaluate_loss(probe, spec, batch).total;
    probe.params[i] = policy.params[i] - kStep;
    const double down = evaluate_loss(probe, spec, batch).total;
    probe.params[i] = policy.params[i];
    const double fd = (up - down) / (2.0 * kStep);
    const double denom =
        std::max({1e-3, std::abs(fd), std::abs(analytic[i])});
    if (std::abs(analytic[i] - fd) / denom > 1e-4)
      throw std::runtime_error(
          "train: analytic gradient disagrees with finite differences at "
          "parameter " +
          std::to_string(i));
  }
}

}  // namespace

TrainResult train(const TabularMdp& mdp, const RenderingFamily& family,
                  const PpoConfig& config, TrainMode mode) {
  return train_with_options(mdp, family, config, mode, TrainOptions{});
}

TrainResult train_with_options(const TabularMdp& mdp,
                               const RenderingFamily& family,
                               const PpoConfig& config, TrainMode mode,
                               const TrainOptions& options) {
  config.validate();
  if (family.split_empty(Split::Train))
    throw std::invalid_argument("train: empty train split");
  const bool has_eval = !family.split_empty(Split::Eval);
  const int n_agents = (mode == TrainMode::Dml) ? 2 : 1;
  const int obs_dim = family.members[0].obs_dim;
  const bool kl_active = mode == TrainMode::Dml && config.kl_weight != 0.0;

  TrainResult result;
  result.agents.resize(n_agents);
  std::vector<AdamOptimizer> optimizers;
  std::vector<Rng> shuffle_rngs;
  std::vector<std::vector<Rng>> worker_rngs(n_agents);
  for (int i = 0; i < n_agents; ++i) {
    if (static_cast<int>(options.initial_policies.size()) > i)
      result.agents[i].policy = options.initial_policies[i];
    else
      result.agents[i].policy =
          init_policy(config.arch, obs_dim, mdp.n_actions, config.hidden_dim,
                      derive_seed(config.seed, "agent", i, "init"));
    optimizers.emplace_back(
        static_cast<int>(result.agents[i].policy.params.size()),
        config.learning_rate);
    shuffle_rngs.emplace_back(derive_seed(config.seed, "agent", i, "shuffle"));
    for (int w = 0; w < config.n_workers; ++w)
      worker_rngs[i].emplace_back(
          derive_seed(config.seed, "agent", i, "worker", w));
  }
  if (options.gradient_mask.size() != 0 &&
      options.gradient_mask.size() != result.agents[0].policy.params.size())
    throw std::invalid_argument("train: gradient mask length mismatch");

  const long long batch_steps =
      static_cast<long long>(config.horizon) * config.n_workers;
  const long long iterations =
      config.total_steps == 0
          ? 0
          : (config.total_steps + batch_steps - 1) / batch_steps;

  LossSpec spec;
  spec.clip_eps = config.clip_eps;
  spec.policy_coef = 1.0;
  spec.value_coef = config.value_coef;
  spec.entropy_coef = config.entropy_coef;
  spec.kl_coef = kl_active ? config.kl_weight : 0.0;

  for (long long it = 0; it < iterations; ++it) {
    // Collection: each agent gathers its own data (independent streams).
    std::vector<FlatBatch> batches(n_agents);
    for (int i = 0; i < n_agents; ++i) {
      std::vector<Trajectory> segments;
      segments.reserve(config.n_workers);
      for (int w = 0; w < config.n_workers; ++w)
        segments.push_back(collect_segment(mdp, family,
                                           result.agents[i].policy,
                                           config.horizon, worker_rngs[i][w]));
      batches[i] = flatten(segments, config, result.agents[i].policy);
    }
    const int batch_size = static_cast<int>(batches[0].obs.rows());
    const int per_mb = batch_size / config.minibatches;
    if (per_mb < 1)
      throw std::invalid_argument("train: more minibatches than samples");

    LossBreakdown agent0_mean;
    int agent0_updates = 0;

    for (int epoch = 0; epoch < config.update_epochs; ++epoch) {
      // Frozen peer snapshots for this epoch.
      std::vector<ObservationPolicy> snapshots;
      snapshots.reserve(n_agents);
      for (int i = 0; i < n_agents; ++i)
        snapshots.push_back(result.agents[i].policy);

      std::vector<std::vector<int>> perms(n_agents);
      for (int i = 0; i < n_agents; ++i)
        perms[i] = shuffle_rngs[i].permutation(batch_size);

      for (int mb = 0; mb < config.minibatches; ++mb) {
        const int begin = mb * per_mb;
        const int end = (mb == config.minibatches - 1) ? batch_size
                                                       : begin + per_mb;
        // Gradients for all agents are computed before any update is
        // applied, so the two updates are simultaneous.
        std::vector<Vector> grads(n_agents);
        for (int i = 0; i < n_agents; ++i) {
          Minibatch chunk = slice_batch(batches[i], perms[i], begin, end,
                                        config.normalize_advantages);
          if (kl_active)
            chunk.peer_probs =
                peer_distribution(snapshots[1 - i], chunk.obs);
          auto [lb, grad] =
              loss_and_gradient(result.agents[i].policy, spec, chunk);
          grads[i] = std::move(grad.grad);
          if (it == 0 && epoch == 0 && mb == 0 && i == 0)
            spot_check_gradient(result.agents[i].policy, spec, chunk,
                                grads[i]);
          if (kl_active && config.kl_joint_grad) {
            // The same KL term, differentiated through this agent where it
            // appears as the peer in the other agent's loss.
            Minibatch peer_chunk =
                slice_batch(batches[1 - i], perms[1 - i], begin, end, false);
            const Matrix frozen =
                peer_distribution(snapshots[1 - i], peer_chunk.obs);
            grads[i] += config.kl_weight *
                        kl_as_source_gradient(result.agents[i].policy,
                                              peer_chunk.obs, frozen)
                            .grad;
          }
          if (!grads[i].allFinite())
            throw std::runtime_error("train: non-finite gradient, aborting");
          if (!std::isfinite(lb.total))
            throw std::runtime_error("train: non-finite loss, aborting");
          if (i == 0) {
            agent0_mean.total += lb.total;
            agent0_mean.policy += lb.policy;
            agent0_mean.value += lb.value;
            agent0_mean.entropy += lb.entropy;
            agent0_mean.kl += lb.kl;
            ++agent0_updates;
          }
        }
        for (int i = 0; i < n_agents; ++i) {
          if (options.gradient_mask.size() != 0)
            grads[i] = grads[i].cwiseProduct(options.gradient_mask);
          optimizers[i].step(result.agents[i].policy.params, grads[i]);
        }
      }
    }

    for (int i = 0; i < n_agents; ++i)
      result.agents[i].param_trace.push_back(
          params_hash(result.agents[i].policy));

    MetricsRow row;
    row.iteration = static_cast<int>(it);
    row.steps = (it + 1) * batch_steps;
    row.entropy = batches[0].mean_entropy;
    row.loss_policy = agent0_mean.policy / agent0_updates;
    row.loss_value = agent0_mean.value / agent0_updates;
    row.loss_entropy = agent0_mean.entropy / agent0_updates;
    row.loss_kl = agent0_mean.kl / agent0_updates;
    row.loss_total = agent0_mean.total / agent0_updates;

    if (mode == TrainMode::Dml) {
      const Matrix p0 = peer_distribution(result.agents[0].policy, batches[0].obs);
      const Matrix p1 = peer_distribution(result.agents[1].policy, batches[0].obs);
      double kl_sum = 0.0;
      for (int r = 0; r < batch_size; ++r)
        kl_sum += kl_divergence(p1.row(r).transpose(), p0.row(r).transpose());
      row.kl_between_agents = kl_sum / batch_size;
    } else {
      row.kl_between_agents = kNaN;
    }

    const bool eval_point =
        (it % config.exact_eval_every == 0) || (it == iterations - 1);
    if (eval_point) {
      const Vector train_w = family.split_weights(Split::Train);
      double eta = 0.0, zeta = 0.0;
      for (int m = 0; m < family.size(); ++m) {
        const UnderlyingPolicy mu =
            lift_policy(result.agents[0].policy, family.members[m], mdp);
        const double ret = discounted_return(mdp, mu);
        eta += train_w[m] * ret;
        zeta += family.weights[m] * ret;
      }
      row.eta_exact = eta;
      row.zeta_exact = zeta;
      row.train_return_emp =
          estimate_return(mdp, family, result.agents[0].policy,
                          config.est_episodes,
                          derive_seed(config.seed, "agent", 0, "est-train", it),
                          Split::Train)
              .first;
      row.eval_return_emp =
          has_eval ? estimate_return(mdp, family, result.agents[0].policy,
                                     config.est_episodes,
                                     derive_seed(config.seed, "agent", 0,
                                                 "est-eval", it),
                                     Split::Eval)
                         .first
                   : kNaN;
    } else {
      row.eta_exact = kNaN;
      row.zeta_exact = kNaN;
      row.train_return_emp = kNaN;
      row.eval_return_emp = kNaN;
    }
    result.metrics.push_back(row);
  }
  return result;
}

}  // namespace rlgen
