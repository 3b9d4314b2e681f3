#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <stdexcept>
#include <vector>

#include "rlgen/rng.hpp"

namespace rlgen {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Finite MDP (S, A, r, P, rho, gamma). Transitions are stored per action:
/// transition[a](s, s') is the probability of moving to s' when taking a in s.
struct TabularMdp {
  int n_states = 0;
  int n_actions = 0;
  Matrix reward;                    // n_states x n_actions
  std::vector<Matrix> transition;   // n_actions matrices, n_states x n_states
  Vector rho;                       // initial state distribution
  double gamma = 0.9;

  /// Throws std::invalid_argument unless every transition row and rho are
  /// distributions (1e-12) and gamma is in (0, 1).
  void validate() const;
};

/// Row-stochastic policy over underlying states: probs(s, a).
struct UnderlyingPolicy {
  Matrix probs;

  void validate() const;
};

struct ValueSolution {
  Vector v;     // state values
  Matrix q;     // state-action values
  Matrix adv;   // q - v, broadcast over actions
};

/// Normalized discounted visitation distribution d(s).
struct VisitationDistribution {
  Vector d;
};

/// State-to-state transition matrix under a fixed policy:
/// P_mu(s, s') = sum_a mu(a|s) P(s'|s, a).
Matrix policy_transition_matrix(const TabularMdp& mdp,
                                const UnderlyingPolicy& mu);

/// Expected per-state reward under a policy: r_mu(s) = sum_a mu(a|s) r(s, a).
Vector policy_reward(const TabularMdp& mdp, const UnderlyingPolicy& mu);

/// Exact policy evaluation: solves (I - gamma P_mu) V = r_mu directly, then
/// Q(s,a) = r(s,a) + gamma sum_s' P(s'|s,a) V(s') and adv = Q - V.
ValueSolution solve_values(const TabularMdp& mdp, const UnderlyingPolicy& mu);

/// Solves (I - gamma P_mu^T) d = (1 - gamma) rho for the normalized
/// discounted visitation distribution.
VisitationDistribution visitation(const TabularMdp& mdp,
                                  const UnderlyingPolicy& mu);

/// Expected discounted return in visitation form:
/// (1/(1-gamma)) sum_s d(s) sum_a mu(a|s) r(s,a); equals rho^T V.
double discounted_return(const TabularMdp& mdp, const UnderlyingPolicy& mu);

/// Optimal state values by value iteration, to the given sup-norm tolerance.
Vector optimal_values(const TabularMdp& mdp, double tol = 1e-12,
                      int max_iters = 1000000);

/// Greedy deterministic policy with respect to a value function.
UnderlyingPolicy greedy_policy(const TabularMdp& mdp, const Vector& v);

/// Total variation distance between two distributions of equal length:
/// 0.5 * sum |p - q|. Throws on length mismatch.
template <typename DerivedP, typename DerivedQ>
double tv_distance(const Eigen::MatrixBase<DerivedP>& p,
                   const Eigen::MatrixBase<DerivedQ>& q) {
  if (p.size() != q.size())
    throw std::invalid_argument("tv_distance: length mismatch");
  return 0.5 * (p - q).cwiseAbs().sum();
}

/// KL divergence D_KL(p || q) between strictly positive distributions.
template <typename DerivedP, typename DerivedQ>
double kl_divergence(const Eigen::MatrixBase<DerivedP>& p,
                     const Eigen::MatrixBase<DerivedQ>& q) {
  if (p.size() != q.size())
    throw std::invalid_argument("kl_divergence: length mismatch");
  double kl = 0.0;
  for (Eigen::Index i = 0; i < p.size(); ++i)
    if (p[i] > 0.0) kl += p[i] * std::log(p[i] / q[i]);
  return kl;
}

/// Random MDP instance: flat-Dirichlet transition rows and initial
/// distribution, rewards uniform in [0, 1]. Deterministic in the seed.
TabularMdp random_mdp(int n_states, int n_actions, std::uint64_t seed,
                      double gamma = 0.9);

/// Random row-stochastic policy (flat Dirichlet rows).
UnderlyingPolicy random_policy(int n_states, int n_actions, std::uint64_t seed);

}  // namespace rlgen
