#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "oracles.hpp"
#include "rlgen/mdp.hpp"
#include "rlgen/rendering.hpp"

using namespace rlgen;

namespace {

TabularMdp one_state_mdp(double reward, double gamma) {
  TabularMdp mdp;
  mdp.n_states = 1;
  mdp.n_actions = 1;
  mdp.reward = Matrix::Constant(1, 1, reward);
  mdp.transition = {Matrix::Constant(1, 1, 1.0)};
  mdp.rho = Vector::Constant(1, 1.0);
  mdp.gamma = gamma;
  return mdp;
}

UnderlyingPolicy uniform_policy(int n_states, int n_actions) {
  UnderlyingPolicy mu;
  mu.probs = Matrix::Constant(n_states, n_actions, 1.0 / n_actions);
  return mu;
}

}  // namespace

TEST_CASE("single-state geometric series") {
  const TabularMdp mdp = one_state_mdp(1.0, 0.5);
  const auto sol = solve_values(mdp, uniform_policy(1, 1));
  CHECK(sol.v[0] == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(discounted_return(mdp, uniform_policy(1, 1)) ==
        doctest::Approx(2.0).epsilon(1e-12));
}

TEST_CASE("two-state chain values by hand") {
  TabularMdp mdp;
  mdp.n_states = 2;
  mdp.n_actions = 1;
  mdp.reward = Matrix::Zero(2, 1);
  mdp.reward(1, 0) = 1.0;
  Matrix p(2, 2);
  p << 0, 1, 0, 1;  // s0 -> s1, s1 absorbing
  mdp.transition = {p};
  mdp.rho = Vector::Zero(2);
  mdp.rho[0] = 1.0;
  mdp.gamma = 0.9;
  mdp.validate();

  const auto sol = solve_values(mdp, uniform_policy(2, 1));
  CHECK(sol.v[1] == doctest::Approx(10.0).epsilon(1e-12));
  CHECK(sol.v[0] == doctest::Approx(9.0).epsilon(1e-12));
}

TEST_CASE("values match Monte-Carlo rollouts within 3 SE") {
  const TabularMdp mdp = random_mdp(5, 3, 99, 0.9);
  const UnderlyingPolicy mu = random_policy(5, 3, 100);
  const auto sol = solve_values(mdp, mu);
  const int horizon = truncation_horizon(0.9, 1.0, 1e-8);
  std::mt19937_64 gen(2024);
  for (int s = 0; s < 5; ++s) {
    const auto [mean, se] =
        oracle::mc_state_value(mdp, mu, s, 200000, horizon, gen);
    CHECK(std::abs(sol.v[s] - mean) <= 3.0 * se);
  }
}

TEST_CASE("visitation of the single absorbing state") {
  const TabularMdp mdp = one_state_mdp(0.0, 0.7);
  CHECK(visitation(mdp, uniform_policy(1, 1)).d[0] ==
        doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("visitation of a deterministic two-cycle") {
  TabularMdp mdp;
  mdp.n_states = 2;
  mdp.n_actions = 1;
  mdp.reward = Matrix::Zero(2, 1);
  Matrix p(2, 2);
  p << 0, 1, 1, 0;
  mdp.transition = {p};
  mdp.rho = Vector::Zero(2);
  mdp.rho[0] = 1.0;
  mdp.gamma = 0.5;
  const auto d = visitation(mdp, uniform_policy(2, 1)).d;
  CHECK(d[0] == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
  CHECK(d[1] == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
}

TEST_CASE("visitation matches the truncated power series") {
  const TabularMdp mdp = random_mdp(6, 3, 7, 0.9);
  const UnderlyingPolicy mu = random_policy(6, 3, 8);
  const int horizon = truncation_horizon(0.9, 1.0, 1e-12);
  const Vector expected = oracle::power_series_visitation(mdp, mu, horizon);
  const Vector got = visitation(mdp, mu).d;
  CHECK((got - expected).cwiseAbs().maxCoeff() <= 1e-9);
  CHECK(got.minCoeff() >= 0.0);
  CHECK(got.sum() == doctest::Approx(1.0).epsilon(1e-10));
}

TEST_CASE("visitation-form return equals rho^T V") {
  for (int seed = 0; seed < 20; ++seed) {
    const TabularMdp mdp = random_mdp(6, 3, seed, 0.9);
    const UnderlyingPolicy mu = random_policy(6, 3, seed + 1000);
    const auto sol = solve_values(mdp, mu);
    CHECK(std::abs(discounted_return(mdp, mu) - mdp.rho.dot(sol.v)) <= 1e-9);
  }
}

TEST_CASE("zero reward means zero return") {
  TabularMdp mdp = random_mdp(4, 2, 5, 0.9);
  mdp.reward.setZero();
  CHECK(discounted_return(mdp, random_policy(4, 2, 6)) ==
        doctest::Approx(0.0).epsilon(1e-15));
}

TEST_CASE("tv_distance basics") {
  Vector p(2), q(2);
  p << 0.5, 0.5;
  q << 0.5, 0.5;
  CHECK(tv_distance(p, q) == 0.0);
  q << 0.25, 0.75;
  CHECK(tv_distance(p, q) == doctest::Approx(0.25).epsilon(1e-15));
  p << 1.0, 0.0;
  q << 0.0, 1.0;
  CHECK(tv_distance(p, q) == doctest::Approx(1.0).epsilon(1e-15));
  Vector longer(3);
  CHECK_THROWS_AS(tv_distance(p, longer), std::invalid_argument);
}

TEST_CASE("random_mdp is deterministic and valid") {
  const TabularMdp a = random_mdp(5, 3, 7);
  const TabularMdp b = random_mdp(5, 3, 7);
  CHECK(a.reward == b.reward);
  CHECK(a.rho == b.rho);
  for (int k = 0; k < 3; ++k) CHECK(a.transition[k] == b.transition[k]);
  CHECK_NOTHROW(a.validate());

  const TabularMdp tiny = random_mdp(1, 1, 0);
  CHECK(tiny.reward(0, 0) >= 0.0);
  CHECK(tiny.reward(0, 0) <= 1.0);
  CHECK_NOTHROW(tiny.validate());
}

TEST_CASE("Bellman residual stays below 1e-9") {
  for (int seed = 0; seed < 30; ++seed) {
    const TabularMdp mdp = random_mdp(8, 4, seed, 0.9);
    const UnderlyingPolicy mu = random_policy(8, 4, seed + 50);
    const auto sol = solve_values(mdp, mu);
    const Vector residual =
        sol.v - (policy_reward(mdp, mu) +
                 mdp.gamma * policy_transition_matrix(mdp, mu) * sol.v);
    CHECK(residual.cwiseAbs().maxCoeff() <= 1e-9);
    // adv = q - v exactly, and the policy-averaged advantage vanishes.
    CHECK((sol.adv - (sol.q.colwise() - sol.v)).cwiseAbs().maxCoeff() <=
          1e-12);
    const Vector avg_adv =
        (mu.probs.array() * sol.adv.array()).rowwise().sum();
    CHECK(avg_adv.cwiseAbs().maxCoeff() <= 1e-10);
  }
}

TEST_CASE("performance-difference identity on random policy pairs") {
  for (int seed = 0; seed < 25; ++seed) {
    const TabularMdp mdp = random_mdp(6, 3, seed, 0.9);
    const UnderlyingPolicy mu = random_policy(6, 3, seed + 200);
    const UnderlyingPolicy mu_tilde = random_policy(6, 3, seed + 400);
    const auto sol = solve_values(mdp, mu);
    const Vector d_tilde = visitation(mdp, mu_tilde).d;
    double advantage_form = 0.0;
    for (int s = 0; s < 6; ++s)
      advantage_form +=
          d_tilde[s] * mu_tilde.probs.row(s).dot(sol.adv.row(s));
    advantage_form /= (1.0 - mdp.gamma);
    const double direct =
        discounted_return(mdp, mu_tilde) - discounted_return(mdp, mu);
    CHECK(std::abs(direct - advantage_form) <= 1e-9);
  }
}

TEST_CASE("visitation-shift bound holds on random instances") {
  for (int seed = 0; seed < 25; ++seed) {
    const TabularMdp mdp = random_mdp(6, 3, seed, 0.9);
    const UnderlyingPolicy mu = random_policy(6, 3, seed + 300);
    const UnderlyingPolicy mu_tilde = random_policy(6, 3, seed + 600);
    const Vector d = visitation(mdp, mu).d;
    const Vector d_tilde = visitation(mdp, mu_tilde).d;
    double mean_tv = 0.0;
    for (int s = 0; s < 6; ++s)
      mean_tv += d[s] * tv_distance(mu_tilde.probs.row(s), mu.probs.row(s));
    const double lhs = (d_tilde - d).cwiseAbs().sum();
    const double rhs = 2.0 * mdp.gamma / (1.0 - mdp.gamma) * mean_tv;
    CHECK(lhs <= rhs + 1e-12);
  }
}

TEST_CASE("expected-advantage bound holds per state") {
  for (int seed = 0; seed < 25; ++seed) {
    const TabularMdp mdp = random_mdp(6, 3, seed, 0.9);
    const UnderlyingPolicy mu = random_policy(6, 3, seed + 700);
    const UnderlyingPolicy mu_tilde = random_policy(6, 3, seed + 900);
    const auto sol = solve_values(mdp, mu);
    for (int s = 0; s < 6; ++s) {
      const double lhs = std::abs(mu_tilde.probs.row(s).dot(sol.adv.row(s)));
      const double rhs =
          2.0 * tv_distance(mu_tilde.probs.row(s), mu.probs.row(s)) *
          sol.adv.row(s).cwiseAbs().maxCoeff();
      CHECK(lhs <= rhs + 1e-12);
    }
  }
}

TEST_CASE("validation rejects malformed inputs") {
  TabularMdp mdp = random_mdp(3, 2, 1);
  mdp.gamma = 1.0;
  CHECK_THROWS_AS(mdp.validate(), std::invalid_argument);
  mdp = random_mdp(3, 2, 1);
  mdp.transition[0](0, 0) += 0.5;
  CHECK_THROWS_AS(mdp.validate(), std::invalid_argument);
  mdp = random_mdp(3, 2, 1);
  mdp.rho[0] = -0.1;
  mdp.rho[1] += 0.1;
  CHECK_THROWS_AS(mdp.validate(), std::invalid_argument);
}
