#include "rlgen/bounds.hpp"

#include <algorithm>
#include <cmath>

namespace rlgen {

LiftedPolicy lift_and_solve(const ObservationPolicy& pi,
                            const RenderingFunction& f, const TabularMdp& mdp) {
  LiftedPolicy out;
  out.mu = lift_policy(pi, f, mdp);
  out.values = solve_values(mdp, out.mu);
  out.visit = visitation(mdp, out.mu);
  out.ret = out.visit.d.dot(policy_reward(mdp, out.mu)) / (1.0 - mdp.gamma);
  return out;
}

PolicyPair make_policy_pair(const ObservationPolicy& pi,
                            const ObservationPolicy& pi_tilde,
                            const RenderingFamily& family,
                            const TabularMdp& mdp) {
  PolicyPair pair;
  pair.base.reserve(family.size());
  pair.tilde.reserve(family.size());
  for (const RenderingFunction& f : family.members) {
    pair.base.push_back(lift_and_solve(pi, f, mdp));
    pair.tilde.push_back(lift_and_solve(pi_tilde, f, mdp));
  }
  return pair;
}

std::pair<double, double> training_and_generalization_returns(
    const std::vector<LiftedPolicy>& lifted, const RenderingFamily& family) {
  const Vector train_w = family.split_weights(Split::Train);
  double eta = 0.0, zeta = 0.0;
  for (int i = 0; i < family.size(); ++i) {
    eta += train_w[i] * lifted[i].ret;
    zeta += family.weights[i] * lifted[i].ret;
  }
  return {eta, zeta};
}

namespace {

/// Per-state expected advantage of the tilde policy under the base policy's
/// advantage function: g(s) = sum_a mu~(a|s) A^{mu}(s, a).
Vector expected_advantage(const LiftedPolicy& base, const LiftedPolicy& tilde) {
  return (tilde.mu.probs.array() * base.values.adv.array()).rowwise().sum();
}

/// Per-state TV distance between the lifted pair.
Vector tv_by_state(const LiftedPolicy& base, const LiftedPolicy& tilde) {
  return 0.5 * (tilde.mu.probs - base.mu.probs).cwiseAbs().rowwise().sum();
}

double tolerance(double lhs, double rhs) {
  return 1e-9 * std::max({1.0, std::abs(lhs), std::abs(rhs)});
}

TheoremCheck check_lower_bound(double lhs, double rhs) {
  TheoremCheck c;
  c.lhs = lhs;
  c.rhs = rhs;
  c.slack = lhs - rhs;
  c.holds = c.slack >= -tolerance(lhs, rhs);
  return c;
}

TheoremCheck check_upper_bound(double lhs, double rhs) {
  TheoremCheck c;
  c.lhs = lhs;
  c.rhs = rhs;
  c.slack = rhs - lhs;
  c.holds = c.slack >= -tolerance(lhs, rhs);
  return c;
}

}  // namespace

double surrogate(const PolicyPair& pair, const RenderingFamily& family,
                 const TabularMdp& mdp) {
  const Vector train_w = family.split_weights(Split::Train);
  double eta_pi = 0.0, correction = 0.0;
  for (int i = 0; i < family.size(); ++i) {
    if (train_w[i] == 0.0) continue;
    eta_pi += train_w[i] * pair.base[i].ret;
    correction += train_w[i] *
                  pair.base[i].visit.d.dot(
                      expected_advantage(pair.base[i], pair.tilde[i]));
  }
  return eta_pi + correction / (1.0 - mdp.gamma);
}

SupConstants sup_constants(const PolicyPair& pair,
                           const RenderingFamily& family) {
  SupConstants sup;
  for (int i = 0; i < family.size(); ++i) {
    const bool in_train = family.train_mask[i] != 0;
    const double max_exp_adv =
        expected_advantage(pair.base[i], pair.tilde[i]).cwiseAbs().maxCoeff();
    const double max_abs_adv = pair.base[i].values.adv.cwiseAbs().maxCoeff();
    const double max_tv = tv_by_state(pair.base[i], pair.tilde[i]).maxCoeff();
    if (in_train) {
      sup.eps_train = std::max(sup.eps_train, max_exp_adv);
      sup.delta_train = std::max(sup.delta_train, max_abs_adv);
      sup.sigma_train = std::max(sup.sigma_train, max_tv);
    } else {
      sup.delta_eval = std::max(sup.delta_eval, max_abs_adv);
      sup.sigma_eval = std::max(sup.sigma_eval, max_tv);
    }
  }
  return sup;
}

DivergenceTerms divergence_terms(const PolicyPair& pair,
                                 const RenderingFamily& family) {
  DivergenceTerms div;
  const Vector train_w = family.split_weights(Split::Train);
  const bool has_eval = !family.split_empty(Split::Eval);
  const Vector eval_w = has_eval ? family.split_weights(Split::Eval)
                                 : Vector::Zero(family.size());
  for (int i = 0; i < family.size(); ++i) {
    const Vector tv = tv_by_state(pair.base[i], pair.tilde[i]);
    const double under_base = pair.base[i].visit.d.dot(tv);
    const double under_tilde = pair.tilde[i].visit.d.dot(tv);
    div.d_train += train_w[i] * under_base;
    div.d_1 += train_w[i] * under_tilde;
    div.d_2 += eval_w[i] * under_tilde;
    div.d_eval += eval_w[i] * under_base;
  }
  return div;
}

double r_robustness(const std::vector<LiftedPolicy>& lifted) {
  double r = 0.0;
  for (std::size_t i = 0; i < lifted.size(); ++i)
    for (std::size_t j = 0; j < lifted.size(); ++j) {
      if (i == j) continue;
      const int n_states = static_cast<int>(lifted[i].mu.probs.rows());
      for (int s = 0; s < n_states; ++s)
        r = std::max(r, tv_distance(lifted[i].mu.probs.row(s),
                                    lifted[j].mu.probs.row(s)));
    }
  return r;
}

double r_robustness(const ObservationPolicy& pi, const RenderingFamily& family,
                    const TabularMdp& mdp) {
  std::vector<LiftedPolicy> lifted;
  lifted.reserve(family.size());
  for (const RenderingFunction& f : family.members) {
    LiftedPolicy lp;
    lp.mu = lift_policy(pi, f, mdp);
    lifted.push_back(std::move(lp));
  }
  return r_robustness(lifted);
}

BoundReport compute_bound_report(const PolicyPair& pair,
                                 const RenderingFamily& family,
                                 const TabularMdp& mdp) {
  BoundReport rep;
  const double gamma = mdp.gamma;
  const double horizon_factor = 1.0 / (1.0 - gamma);

  std::tie(rep.eta_pi, rep.zeta_pi) =
      training_and_generalization_returns(pair.base, family);
  std::tie(rep.eta_pi_tilde, rep.zeta_pi_tilde) =
      training_and_generalization_returns(pair.tilde, family);
  rep.surrogate = surrogate(pair, family, mdp);
  rep.partition_z = family.partition_z();
  rep.r_max = mdp.reward.cwiseAbs().maxCoeff();

  const SupConstants sup = sup_constants(pair, family);
  rep.eps_train = sup.eps_train;
  rep.delta_train = sup.delta_train;
  rep.delta_eval = sup.delta_eval;
  rep.sigma_train = sup.sigma_train;
  rep.sigma_eval = sup.sigma_eval;

  const DivergenceTerms div = divergence_terms(pair, family);
  rep.div_train = div.d_train;
  rep.div_1 = div.d_1;
  rep.div_2 = div.d_2;
  rep.div_eval = div.d_eval;

  rep.robustness_pi = r_robustness(pair.base);
  rep.robustness_pi_tilde = r_robustness(pair.tilde);

  const double one_minus_z = 1.0 - rep.partition_z;
  const double eps_term =
      2.0 * gamma * rep.eps_train * horizon_factor * horizon_factor;
  const double train_amp = 1.0 + 2.0 * gamma * rep.sigma_train * horizon_factor;
  const double eval_amp = 1.0 + 2.0 * gamma * rep.sigma_eval * horizon_factor;

  rep.thm1 = check_lower_bound(rep.eta_pi_tilde,
                               rep.surrogate - eps_term * rep.div_train);

  rep.thm2 = check_lower_bound(
      rep.zeta_pi_tilde,
      rep.surrogate - 2.0 * rep.r_max * one_minus_z * horizon_factor -
          eps_term * rep.div_train -
          2.0 * rep.delta_train * one_minus_z * horizon_factor * rep.div_1 -
          2.0 * rep.delta_eval * one_minus_z * horizon_factor * rep.div_2);

  rep.thm3 = check_upper_bound(rep.div_1, train_amp * rep.div_train);
  rep.thm4 = check_upper_bound(rep.div_2, eval_amp * rep.div_eval);
  rep.thm5 = check_upper_bound(rep.div_eval,
                               train_amp * rep.robustness_pi +
                                   rep.robustness_pi_tilde + rep.div_train);

  rep.c_train = 2.0 * rep.delta_train * one_minus_z * horizon_factor * train_amp +
                eps_term +
                2.0 * rep.delta_eval * one_minus_z * horizon_factor * eval_amp;
  rep.c_pi = 2.0 * rep.delta_eval * one_minus_z * horizon_factor * eval_amp *
             train_amp;
  rep.c_pi_tilde =
      2.0 * rep.delta_eval * one_minus_z * horizon_factor * eval_amp;
  rep.c_const = 2.0 * rep.r_max * one_minus_z * horizon_factor;

  rep.corollary = check_lower_bound(
      rep.zeta_pi_tilde,
      rep.surrogate - rep.c_train * rep.div_train -
          rep.c_pi * rep.robustness_pi - rep.c_pi_tilde * rep.robustness_pi_tilde -
          rep.c_const);
  return rep;
}

BoundReport compute_bound_report(const ObservationPolicy& pi,
                                 const ObservationPolicy& pi_tilde,
                                 const RenderingFamily& family,
                                 const TabularMdp& mdp) {
  return compute_bound_report(make_policy_pair(pi, pi_tilde, family, mdp),
                              family, mdp);
}

TheoremCheck verify_theorem1(const PolicyPair& pair,
                             const RenderingFamily& family,
                             const TabularMdp& mdp) {
  return compute_bound_report(pair, family, mdp).thm1;
}
TheoremCheck verify_theorem2(const PolicyPair& pair,
                             const RenderingFamily& family,
                             const TabularMdp& mdp) {
  return compute_bound_report(pair, family, mdp).thm2;
}
TheoremCheck verify_theorem3(const PolicyPair& pair,
                             const RenderingFamily& family,
                             const TabularMdp& mdp) {
  return compute_bound_report(pair, family, mdp).thm3;
}
TheoremCheck verify_theorem4(const PolicyPair& pair,
                             const RenderingFamily& family,
                             const TabularMdp& mdp) {
  return compute_bound_report(pair, family, mdp).thm4;
}
TheoremCheck verify_theorem5(const PolicyPair& pair,
                             const RenderingFamily& family,
                             const TabularMdp& mdp) {
  return compute_bound_report(pair, family, mdp).thm5;
}
TheoremCheck verify_corollary(const PolicyPair& pair,
                              const RenderingFamily& family,
                              const TabularMdp& mdp) {
  return compute_bound_report(pair, family, mdp).corollary;
}

double performance_difference_residual(const PolicyPair& pair,
                                       const RenderingFamily& family,
                                       const TabularMdp& mdp) {
  const double horizon_factor = 1.0 / (1.0 - mdp.gamma);
  const auto [eta_pi, zeta_pi] =
      training_and_generalization_returns(pair.base, family);
  const auto [eta_tilde, zeta_tilde] =
      training_and_generalization_returns(pair.tilde, family);

  const Vector train_w = family.split_weights(Split::Train);
  double train_form = 0.0, full_form = 0.0;
  for (int i = 0; i < family.size(); ++i) {
    const double per_f =
        pair.tilde[i].visit.d.dot(
            expected_advantage(pair.base[i], pair.tilde[i])) *
        horizon_factor;
    train_form += train_w[i] * per_f;
    full_form += family.weights[i] * per_f;
  }
  return std::max(std::abs((eta_tilde - eta_pi) - train_form),
                  std::abs((zeta_tilde - zeta_pi) - full_form));
}

}  // namespace rlgen
