#include "rlgen/robustness.hpp"

#include <cmath>
#include <stdexcept>

namespace rlgen {

PerturbationSuite make_perturbation_suite(int obs_dim, int n_perturbations,
                                          std::uint64_t seed) {
  if (obs_dim < 1 || n_perturbations < 1)
    throw std::invalid_argument("make_perturbation_suite: bad sizes");
  PerturbationSuite suite;
  suite.n_perturbations = n_perturbations;
  suite.seed = seed;
  suite.maps.reserve(n_perturbations);
  for (int k = 0; k < n_perturbations; ++k) {
    Rng rng(derive_seed(seed, "perturbation", k));
    Matrix m(obs_dim, obs_dim);
    rng.fill_gaussian(m);
    suite.maps.push_back(std::move(m));
  }
  return suite;
}

namespace {

void summarize(const Vector& xs, double& mean, double& std_dev) {
  mean = xs.mean();
  std_dev = std::sqrt((xs.array() - mean).square().sum() / xs.size());
}

}  // namespace

RobustnessRecord robustness_test(const ObservationPolicy& policy,
                                 const TabularMdp& mdp,
                                 const RenderingFamily& family,
                                 const PerturbationSuite& suite,
                                 int n_steps, std::uint64_t rollout_seed,
                                 Split split) {
  if (n_steps < 1)
    throw std::invalid_argument("robustness_test: n_steps must be >= 1");
  Rng rng(rollout_seed);
  const int f_idx = sample_function(family, split, rng);
  const RenderingFunction& f = family.members[f_idx];
  int s = rng.categorical(mdp.rho);

  RobustnessRecord record;
  record.per_step_mean_kl.resize(n_steps);
  record.per_step_mean_kl_reverse.resize(n_steps);

  for (int t = 0; t < n_steps; ++t) {
    const Vector obs = f.obs_table.row(s).transpose();
    const PolicyEval clean = forward(policy, obs);
    double kl_sum = 0.0, kl_rev_sum = 0.0;
    for (const Matrix& m : suite.maps) {
      const PolicyEval perturbed = forward(policy, m * obs);
      kl_sum += kl_divergence(clean.probs, perturbed.probs);
      kl_rev_sum += kl_divergence(perturbed.probs, clean.probs);
    }
    record.per_step_mean_kl[t] = kl_sum / suite.n_perturbations;
    record.per_step_mean_kl_reverse[t] = kl_rev_sum / suite.n_perturbations;

    // The rollout itself follows the unperturbed policy.
    const int a = rng.categorical(clean.probs);
    s = rng.categorical(mdp.transition[a].row(s).transpose());
  }
  summarize(record.per_step_mean_kl, record.summary_mean, record.summary_std);
  summarize(record.per_step_mean_kl_reverse, record.reverse_summary_mean,
            record.reverse_summary_std);
  return record;
}

std::vector<EmbeddingRow> export_embeddings(const ObservationPolicy& policy,
                                            const Matrix& observations,
                                            const PerturbationSuite& suite) {
  if (observations.rows() == 0)
    throw std::invalid_argument("export_embeddings: no observations");
  std::vector<EmbeddingRow> rows;
  rows.reserve(static_cast<std::size_t>(observations.rows()) *
               (suite.n_perturbations + 1));
  for (int o = 0; o < observations.rows(); ++o) {
    const Vector obs = observations.row(o).transpose();
    rows.push_back({o, -1, forward(policy, obs).features});
    for (int k = 0; k < suite.n_perturbations; ++k)
      rows.push_back({o, k, forward(policy, suite.maps[k] * obs).features});
  }
  return rows;
}

double embedding_dispersion(const std::vector<EmbeddingRow>& rows) {
  double group_sum = 0.0;
  int groups = 0;
  for (std::size_t begin = 0; begin < rows.size();) {
    std::size_t end = begin;
    while (end < rows.size() && rows[end].obs_id == rows[begin].obs_id) ++end;
    double pair_sum = 0.0;
    int pairs = 0;
    for (std::size_t i = begin; i < end; ++i)
      for (std::size_t j = i + 1; j < end; ++j) {
        pair_sum += (rows[i].features - rows[j].features).norm();
        ++pairs;
      }
    if (pairs > 0) {
      group_sum += pair_sum / pairs;
      ++groups;
    }
    begin = end;
  }
  return groups > 0 ? group_sum / groups : 0.0;
}

TrainResult frozen_encoder_retrain(const ObservationPolicy& checkpoint,
                                   const TabularMdp& mdp,
                                   const RenderingFamily& family,
                                   const PpoConfig& config) {
  if (checkpoint.arch != PolicyArch::OneHiddenMlp)
    throw std::invalid_argument(
        "frozen_encoder_retrain: checkpoint has no encoder (linear-softmax)");
  const ParamLayout lay = param_layout(checkpoint);

  // Fresh heads, the checkpoint's encoder.
  ObservationPolicy start =
      init_policy(PolicyArch::OneHiddenMlp, checkpoint.obs_dim,
                  checkpoint.n_actions, checkpoint.hidden_dim,
                  derive_seed(config.seed, "head-reinit"));
  start.params.head(lay.encoder_size()) =
      checkpoint.params.head(lay.encoder_size());

  TrainOptions options;
  options.initial_policies = {start};
  options.gradient_mask = Vector::Ones(lay.total);
  options.gradient_mask.head(lay.encoder_size()).setZero();
  return train_with_options(mdp, family, config, TrainMode::Baseline, options);
}

}  // namespace rlgen
