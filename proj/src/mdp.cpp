#include "rlgen/mdp.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace rlgen {

namespace {
void check_distribution(const Vector& p, const char* what) {
  if (p.minCoeff() < 0.0)
    throw std::invalid_argument(std::string(what) + ": negative entry");
  if (std::abs(p.sum() - 1.0) > 1e-12)
    throw std::invalid_argument(std::string(what) + ": does not sum to 1");
}
}  // namespace

void TabularMdp::validate() const {
  if (n_states < 1 || n_actions < 1)
    throw std::invalid_argument("TabularMdp: empty state or action set");
  if (gamma <= 0.0 || gamma >= 1.0)
    throw std::invalid_argument("TabularMdp: gamma must be in (0, 1)");
  if (reward.rows() != n_states || reward.cols() != n_actions)
    throw std::invalid_argument("TabularMdp: reward shape mismatch");
  if (static_cast<int>(transition.size()) != n_actions)
    throw std::invalid_argument("TabularMdp: transition action count mismatch");
  for (const Matrix& pa : transition) {
    if (pa.rows() != n_states || pa.cols() != n_states)
      throw std::invalid_argument("TabularMdp: transition shape mismatch");
    for (int s = 0; s < n_states; ++s)
      check_distribution(pa.row(s).transpose(), "TabularMdp transition row");
  }
  if (rho.size() != n_states)
    throw std::invalid_argument("TabularMdp: rho length mismatch");
  check_distribution(rho, "TabularMdp rho");
}

void UnderlyingPolicy::validate() const {
  for (int s = 0; s < probs.rows(); ++s)
    check_distribution(probs.row(s).transpose(), "UnderlyingPolicy row");
}

Matrix policy_transition_matrix(const TabularMdp& mdp,
                                const UnderlyingPolicy& mu) {
  Matrix p_mu = Matrix::Zero(mdp.n_states, mdp.n_states);
  for (int a = 0; a < mdp.n_actions; ++a)
    p_mu.noalias() += mu.probs.col(a).asDiagonal() * mdp.transition[a];
  return p_mu;
}

Vector policy_reward(const TabularMdp& mdp, const UnderlyingPolicy& mu) {
  return (mdp.reward.array() * mu.probs.array()).rowwise().sum();
}

ValueSolution solve_values(const TabularMdp& mdp, const UnderlyingPolicy& mu) {
  const int n = mdp.n_states;
  const Matrix p_mu = policy_transition_matrix(mdp, mu);
  const Matrix system = Matrix::Identity(n, n) - mdp.gamma * p_mu;

  ValueSolution sol;
  sol.v = system.partialPivLu().solve(policy_reward(mdp, mu));
  sol.q.resize(n, mdp.n_actions);
  for (int a = 0; a < mdp.n_actions; ++a)
    sol.q.col(a) = mdp.reward.col(a) + mdp.gamma * (mdp.transition[a] * sol.v);
  sol.adv = sol.q.colwise() - sol.v;
  return sol;
}

VisitationDistribution visitation(const TabularMdp& mdp,
                                  const UnderlyingPolicy& mu) {
  const int n = mdp.n_states;
  const Matrix p_mu = policy_transition_matrix(mdp, mu);
  const Matrix system = Matrix::Identity(n, n) - mdp.gamma * p_mu.transpose();

  VisitationDistribution out;
  out.d = system.partialPivLu().solve((1.0 - mdp.gamma) * mdp.rho);
  return out;
}

double discounted_return(const TabularMdp& mdp, const UnderlyingPolicy& mu) {
  const Vector d = visitation(mdp, mu).d;
  return d.dot(policy_reward(mdp, mu)) / (1.0 - mdp.gamma);
}

Vector optimal_values(const TabularMdp& mdp, double tol, int max_iters) {
  Vector v = Vector::Zero(mdp.n_states);
  Vector next(mdp.n_states);
  for (int it = 0; it < max_iters; ++it) {
    for (int s = 0; s < mdp.n_states; ++s) {
      double best = -std::numeric_limits<double>::infinity();
      for (int a = 0; a < mdp.n_actions; ++a) {
        const double q =
            mdp.reward(s, a) + mdp.gamma * mdp.transition[a].row(s).dot(v);
        best = std::max(best, q);
      }
      next[s] = best;
    }
    const double delta = (next - v).cwiseAbs().maxCoeff();
    v = next;
    if (delta < tol * (1.0 - mdp.gamma) / (2.0 * mdp.gamma)) break;
  }
  return v;
}

UnderlyingPolicy greedy_policy(const TabularMdp& mdp, const Vector& v) {
  UnderlyingPolicy mu;
  mu.probs = Matrix::Zero(mdp.n_states, mdp.n_actions);
  for (int s = 0; s < mdp.n_states; ++s) {
    int best_a = 0;
    double best_q = -std::numeric_limits<double>::infinity();
    for (int a = 0; a < mdp.n_actions; ++a) {
      const double q =
          mdp.reward(s, a) + mdp.gamma * mdp.transition[a].row(s).dot(v);
      if (q > best_q) {
        best_q = q;
        best_a = a;
      }
    }
    mu.probs(s, best_a) = 1.0;
  }
  return mu;
}

TabularMdp random_mdp(int n_states, int n_actions, std::uint64_t seed,
                      double gamma) {
  if (n_states < 1 || n_actions < 1)
    throw std::invalid_argument("random_mdp: sizes must be >= 1");
  Rng rng(seed);
  TabularMdp mdp;
  mdp.n_states = n_states;
  mdp.n_actions = n_actions;
  mdp.gamma = gamma;
  mdp.reward.resize(n_states, n_actions);
  rng.fill_uniform(mdp.reward, 0.0, 1.0);
  mdp.transition.resize(n_actions);
  for (int a = 0; a < n_actions; ++a) {
    mdp.transition[a].resize(n_states, n_states);
    for (int s = 0; s < n_states; ++s)
      mdp.transition[a].row(s) = rng.dirichlet_flat(n_states).transpose();
  }
  mdp.rho = rng.dirichlet_flat(n_states);
  return mdp;
}

UnderlyingPolicy random_policy(int n_states, int n_actions,
                               std::uint64_t seed) {
  Rng rng(seed);
  UnderlyingPolicy mu;
  mu.probs.resize(n_states, n_actions);
  for (int s = 0; s < n_states; ++s)
    mu.probs.row(s) = rng.dirichlet_flat(n_actions).transpose();
  return mu;
}

}  // namespace rlgen
