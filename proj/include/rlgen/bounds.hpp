#pragma once

#include <Eigen/Dense>

#include <vector>

#include "rlgen/mdp.hpp"
#include "rlgen/rendering.hpp"

namespace rlgen {

/// Everything exact DP can say about one policy on one rendered variant:
/// the lifted underlying policy, its value solution, visitation
/// distribution, and discounted return.
struct LiftedPolicy {
  UnderlyingPolicy mu;
  ValueSolution values;
  VisitationDistribution visit;
  double ret = 0.0;
};

LiftedPolicy lift_and_solve(const ObservationPolicy& pi,
                            const RenderingFunction& f, const TabularMdp& mdp);

/// A (pi, pi_tilde) pair lifted against every member of a family. base[i]
/// and tilde[i] correspond to family.members[i].
struct PolicyPair {
  std::vector<LiftedPolicy> base;
  std::vector<LiftedPolicy> tilde;
};

PolicyPair make_policy_pair(const ObservationPolicy& pi,
                            const ObservationPolicy& pi_tilde,
                            const RenderingFamily& family,
                            const TabularMdp& mdp);

struct TheoremCheck {
  double lhs = 0.0;
  double rhs = 0.0;
  bool holds = true;
  /// Signed margin in the non-strict direction; negative means violated.
  double slack = 0.0;
};

/// Every scalar appearing in the performance bounds, plus verdicts. All
/// expectations over the family are exact finite sums; eval-split
/// quantities are zero by convention when the eval split is empty.
struct BoundReport {
  double eta_pi = 0.0, eta_pi_tilde = 0.0;
  double zeta_pi = 0.0, zeta_pi_tilde = 0.0;
  double surrogate = 0.0;  // L_pi(pi_tilde)
  double partition_z = 1.0;
  double r_max = 0.0;
  double eps_train = 0.0;
  double delta_train = 0.0, delta_eval = 0.0;
  double sigma_train = 0.0, sigma_eval = 0.0;
  double div_train = 0.0, div_1 = 0.0, div_2 = 0.0, div_eval = 0.0;
  double robustness_pi = 0.0, robustness_pi_tilde = 0.0;
  double c_train = 0.0, c_pi = 0.0, c_pi_tilde = 0.0, c_const = 0.0;
  TheoremCheck thm1, thm2, thm3, thm4, thm5, corollary;

  bool all_hold() const {
    return thm1.holds && thm2.holds && thm3.holds && thm4.holds &&
           thm5.holds && corollary.holds;
  }
};

/// Exact split-weighted returns: first = train-split expectation (eta),
/// second = full expectation (zeta).
std::pair<double, double> training_and_generalization_returns(
    const std::vector<LiftedPolicy>& lifted, const RenderingFamily& family);

/// First-order surrogate of the train performance around pi, evaluated at
/// pi_tilde:
///   L = eta(pi) + 1/(1-gamma) E_{f~p_train, s~d^{mu_f}, a~mu~_f}[A^{mu_f}].
double surrogate(const PolicyPair& pair, const RenderingFamily& family,
                 const TabularMdp& mdp);

struct SupConstants {
  double eps_train = 0.0;
  double delta_train = 0.0, delta_eval = 0.0;
  double sigma_train = 0.0, sigma_eval = 0.0;
};

/// Exact maxima over (split, state, action) of the advantage- and
/// TV-based constants used by the bounds.
SupConstants sup_constants(const PolicyPair& pair,
                           const RenderingFamily& family);

struct DivergenceTerms {
  double d_train = 0.0;  // f ~ p_train, s ~ d^{mu_f}
  double d_1 = 0.0;      // f ~ p_train, s ~ d^{mu~_f}
  double d_2 = 0.0;      // f ~ p_eval,  s ~ d^{mu~_f}
  double d_eval = 0.0;   // f ~ p_eval,  s ~ d^{mu_f}
};

/// Exact expected TV distances between the lifted pair under the four
/// (split, visitation) pairings.
DivergenceTerms divergence_terms(const PolicyPair& pair,
                                 const RenderingFamily& family);

/// Robustness to irrelevant features: the maximum over states and ordered
/// member pairs of the TV distance between the policy's lifted behaviors.
double r_robustness(const std::vector<LiftedPolicy>& lifted);
double r_robustness(const ObservationPolicy& pi, const RenderingFamily& family,
                    const TabularMdp& mdp);

/// Inequality checks. Tolerance: slack >= -1e-9 * max(1, |lhs|, |rhs|),
/// absorbing linear-solve rounding only.
TheoremCheck verify_theorem1(const PolicyPair& pair,
                             const RenderingFamily& family,
                             const TabularMdp& mdp);
TheoremCheck verify_theorem2(const PolicyPair& pair,
                             const RenderingFamily& family,
                             const TabularMdp& mdp);
TheoremCheck verify_theorem3(const PolicyPair& pair,
                             const RenderingFamily& family,
                             const TabularMdp& mdp);
TheoremCheck verify_theorem4(const PolicyPair& pair,
                             const RenderingFamily& family,
                             const TabularMdp& mdp);
TheoremCheck verify_theorem5(const PolicyPair& pair,
                             const RenderingFamily& family,
                             const TabularMdp& mdp);
TheoremCheck verify_corollary(const PolicyPair& pair,
                              const RenderingFamily& family,
                              const TabularMdp& mdp);

/// Computes every report field and all six verdicts in one pass.
BoundReport compute_bound_report(const PolicyPair& pair,
                                 const RenderingFamily& family,
                                 const TabularMdp& mdp);
BoundReport compute_bound_report(const ObservationPolicy& pi,
                                 const ObservationPolicy& pi_tilde,
                                 const RenderingFamily& family,
                                 const TabularMdp& mdp);

/// Largest absolute residual of the two performance-difference identities
/// (train and full split); exact DP should leave only rounding.
double performance_difference_residual(const PolicyPair& pair,
                                       const RenderingFamily& family,
                                       const TabularMdp& mdp);

}  // namespace rlgen
