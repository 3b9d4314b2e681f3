#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "rlgen/bounds.hpp"
#include "rlgen/robustness.hpp"

using namespace rlgen;

namespace {

struct Setup {
  CoinGridworld grid;
  RenderingFamily family;
};

Setup coin_setup(std::uint64_t seed) {
  Setup s;
  s.grid = coin_gridworld(2, 2, 2, 0.95);
  FamilySpec spec;
  spec.kind = FamilyKind::CoinDistractor;
  spec.n_background_channels = 2;
  spec.background_scale = 2.0;
  spec.palette_size = 2;
  spec.obs_dim = 2 * s.grid.n_cells + 2;
  s.family = make_family(s.grid.mdp, spec, 4, 2, seed, &s.grid);
  return s;
}

ObservationPolicy constant_policy(int obs_dim, int n_actions) {
  ObservationPolicy p;
  p.arch = PolicyArch::LinearSoftmax;
  p.obs_dim = obs_dim;
  p.n_actions = n_actions;
  p.hidden_dim = 0;
  p.params = Vector::Zero(param_layout(p).total);
  return p;
}

}  // namespace

TEST_CASE("perturbation suite regenerates bit-exactly from its seed") {
  const PerturbationSuite a = make_perturbation_suite(6, 10, 99);
  const PerturbationSuite b = make_perturbation_suite(6, 10, 99);
  REQUIRE(a.maps.size() == 10);
  for (int k = 0; k < 10; ++k) CHECK(a.maps[k] == b.maps[k]);
}

TEST_CASE("observation-independent policies measure zero sensitivity") {
  const Setup s = coin_setup(1);
  const ObservationPolicy p =
      constant_policy(s.family.members[0].obs_dim, 4);
  const PerturbationSuite suite =
      make_perturbation_suite(p.obs_dim, 20, 2);
  const RobustnessRecord record =
      robustness_test(p, s.grid.mdp, s.family, suite, 50, 3, Split::Eval);
  CHECK(record.summary_mean == 0.0);
  CHECK(record.summary_std == 0.0);
  CHECK(record.per_step_mean_kl.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("identity maps measure zero sensitivity") {
  const Setup s = coin_setup(4);
  const int obs_dim = s.family.members[0].obs_dim;
  const ObservationPolicy p =
      init_policy(PolicyArch::OneHiddenMlp, obs_dim, 4, 8, 5);
  PerturbationSuite suite;
  suite.n_perturbations = 3;
  suite.seed = 0;
  suite.maps.assign(3, Matrix::Identity(obs_dim, obs_dim));
  const RobustnessRecord record =
      robustness_test(p, s.grid.mdp, s.family, suite, 30, 6, Split::Train);
  CHECK(record.summary_mean == 0.0);
  CHECK(record.summary_std == 0.0);
}

TEST_CASE("robustness test is deterministic given its seeds") {
  const Setup s = coin_setup(7);
  const int obs_dim = s.family.members[0].obs_dim;
  const ObservationPolicy p =
      init_policy(PolicyArch::OneHiddenMlp, obs_dim, 4, 8, 8);
  const PerturbationSuite suite = make_perturbation_suite(obs_dim, 15, 9);
  const RobustnessRecord a =
      robustness_test(p, s.grid.mdp, s.family, suite, 40, 10, Split::Eval);
  const RobustnessRecord b =
      robustness_test(p, s.grid.mdp, s.family, suite, 40, 10, Split::Eval);
  CHECK(a.per_step_mean_kl == b.per_step_mean_kl);
  CHECK(a.summary_mean == b.summary_mean);
}

TEST_CASE("summary statistics recompute independently") {
  const Setup s = coin_setup(11);
  const int obs_dim = s.family.members[0].obs_dim;
  const ObservationPolicy p =
      init_policy(PolicyArch::OneHiddenMlp, obs_dim, 4, 8, 12);
  const PerturbationSuite suite = make_perturbation_suite(obs_dim, 10, 13);
  const RobustnessRecord record =
      robustness_test(p, s.grid.mdp, s.family, suite, 25, 14, Split::Train);

  double mean = 0.0;
  for (int t = 0; t < 25; ++t) mean += record.per_step_mean_kl[t];
  mean /= 25;
  double var = 0.0;
  for (int t = 0; t < 25; ++t) {
    const double d = record.per_step_mean_kl[t] - mean;
    var += d * d;
  }
  var /= 25;  // population variance by convention
  CHECK(std::abs(record.summary_mean - mean) <= 1e-12);
  CHECK(std::abs(record.summary_std - std::sqrt(var)) <= 1e-12);
  CHECK(record.per_step_mean_kl.minCoeff() >= 0.0);
}

TEST_CASE("embeddings: zero encoder weights give zero features") {
  const int obs_dim = 5;
  ObservationPolicy p;
  p.arch = PolicyArch::OneHiddenMlp;
  p.obs_dim = obs_dim;
  p.n_actions = 3;
  p.hidden_dim = 6;
  p.params = Vector::Zero(param_layout(p).total);
  Matrix obs = Matrix::Random(4, obs_dim);
  const PerturbationSuite suite = make_perturbation_suite(obs_dim, 3, 15);
  for (const EmbeddingRow& row : export_embeddings(p, obs, suite))
    CHECK(row.features.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("embeddings: identity perturbation equals the unperturbed row") {
  const int obs_dim = 5;
  const ObservationPolicy p =
      init_policy(PolicyArch::OneHiddenMlp, obs_dim, 3, 6, 16);
  PerturbationSuite suite;
  suite.n_perturbations = 1;
  suite.seed = 0;
  suite.maps = {Matrix::Identity(obs_dim, obs_dim)};
  Matrix obs = Matrix::Random(3, obs_dim);
  const auto rows = export_embeddings(p, obs, suite);
  REQUIRE(rows.size() == 6);  // (unperturbed + 1 map) x 3 observations
  for (std::size_t i = 0; i < rows.size(); i += 2) {
    CHECK(rows[i].perturbation_id == -1);
    CHECK(rows[i + 1].perturbation_id == 0);
    CHECK(rows[i].features == rows[i + 1].features);
  }
}

TEST_CASE("embedding dispersion is zero for constant features") {
  std::vector<EmbeddingRow> rows;
  for (int o = 0; o < 2; ++o)
    for (int k = -1; k < 3; ++k)
      rows.push_back({o, k, Vector::Ones(4)});
  CHECK(embedding_dispersion(rows) == 0.0);
}

TEST_CASE("frozen-encoder retraining keeps the encoder bit-identical") {
  const Setup s = coin_setup(20);
  const int obs_dim = s.family.members[0].obs_dim;
  const ObservationPolicy checkpoint =
      init_policy(PolicyArch::OneHiddenMlp, obs_dim, 4, 8, 21);
  PpoConfig config;
  config.total_steps = 1024;
  config.horizon = 32;
  config.n_workers = 2;
  config.minibatches = 2;
  config.hidden_dim = 8;
  config.exact_eval_every = 4;
  config.est_episodes = 4;
  config.seed = 22;
  const TrainResult result =
      frozen_encoder_retrain(checkpoint, s.grid.mdp, s.family, config);
  const ParamLayout lay = param_layout(checkpoint);
  CHECK(result.agents[0].policy.params.head(lay.encoder_size()) ==
        checkpoint.params.head(lay.encoder_size()));
  // Heads did move.
  CHECK(result.agents[0]
            .policy.params.tail(lay.total - lay.encoder_size())
            .cwiseAbs()
            .sum() > 0.0);
}

TEST_CASE("zero learning rate never changes any parameter") {
  const Setup s = coin_setup(23);
  const int obs_dim = s.family.members[0].obs_dim;
  const ObservationPolicy checkpoint =
      init_policy(PolicyArch::OneHiddenMlp, obs_dim, 4, 8, 24);
  PpoConfig config;
  config.total_steps = 512;
  config.horizon = 32;
  config.n_workers = 2;
  config.minibatches = 2;
  config.hidden_dim = 8;
  config.learning_rate = 0.0;
  config.exact_eval_every = 4;
  config.est_episodes = 4;
  config.seed = 25;
  const TrainResult result =
      frozen_encoder_retrain(checkpoint, s.grid.mdp, s.family, config);
  // Encoder identical to the checkpoint; heads identical to their fresh
  // re-initialization.
  const ParamLayout lay = param_layout(checkpoint);
  const ObservationPolicy fresh_heads = init_policy(
      PolicyArch::OneHiddenMlp, obs_dim, 4, 8, derive_seed(config.seed, "head-reinit"));
  CHECK(result.agents[0].policy.params.head(lay.encoder_size()) ==
        checkpoint.params.head(lay.encoder_size()));
  CHECK(result.agents[0].policy.params.tail(lay.total - lay.encoder_size()) ==
        fresh_heads.params.tail(lay.total - lay.encoder_size()));
}

TEST_CASE("linear-softmax checkpoints are rejected for the ablation") {
  const Setup s = coin_setup(26);
  const ObservationPolicy linear =
      constant_policy(s.family.members[0].obs_dim, 4);
  PpoConfig config;
  CHECK_THROWS_AS(
      frozen_encoder_retrain(linear, s.grid.mdp, s.family, config),
      std::invalid_argument);
}
