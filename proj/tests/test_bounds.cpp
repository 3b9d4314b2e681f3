#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "oracles.hpp"
#include "rlgen/bounds.hpp"
#include "rlgen/harness.hpp"

using namespace rlgen;

namespace {

FamilySpec spec_of(FamilyKind kind, int obs_dim) {
  FamilySpec spec;
  spec.kind = kind;
  spec.obs_dim = obs_dim;
  return spec;
}

ObservationPolicy table_policy_from_logits(const Matrix& logits) {
  // Linear-softmax over one-hot observations: column s of the weight matrix
  // is the logit vector at state s.
  ObservationPolicy p;
  p.arch = PolicyArch::LinearSoftmax;
  p.obs_dim = static_cast<int>(logits.cols());
  p.n_actions = static_cast<int>(logits.rows());
  p.hidden_dim = 0;
  const ParamLayout lay = param_layout(p);
  p.params = Vector::Zero(lay.total);
  Eigen::Map<Matrix>(p.params.data() + lay.pol_w, p.n_actions, p.obs_dim) =
      logits;
  return p;
}

}  // namespace

TEST_CASE("identical policies: surrogate equals eta, all gaps vanish") {
  const TabularMdp mdp = random_mdp(5, 3, 1, 0.9);
  const auto family =
      make_family(mdp, spec_of(FamilyKind::PermuteOnehot, 5), 6, 3, 2);
  const ObservationPolicy pi =
      init_policy(PolicyArch::LinearSoftmax, 5, 3, 0, 3);
  const BoundReport rep = compute_bound_report(pi, pi, family, mdp);

  CHECK(std::abs(rep.surrogate - rep.eta_pi) <= 1e-9);
  // eps_train is an average of advantages, zero only up to solver rounding.
  CHECK(rep.eps_train <= 1e-10);
  CHECK(rep.sigma_train == 0.0);
  CHECK(rep.sigma_eval == 0.0);
  CHECK(rep.div_train == 0.0);
  CHECK(rep.div_1 == 0.0);
  CHECK(rep.div_2 == 0.0);
  CHECK(rep.div_eval == 0.0);
  // Theorem 1 collapses to equality.
  CHECK(std::abs(rep.thm1.lhs - rep.thm1.rhs) <= 1e-9);
  CHECK(rep.all_hold());
}

TEST_CASE("zero reward zeroes every advantage-based constant") {
  TabularMdp mdp = random_mdp(4, 2, 10, 0.9);
  mdp.reward.setZero();
  const auto family =
      make_family(mdp, spec_of(FamilyKind::Affine, 5), 4, 2, 11);
  const ObservationPolicy pi =
      init_policy(PolicyArch::LinearSoftmax, 5, 2, 0, 12);
  const ObservationPolicy pi_tilde =
      init_policy(PolicyArch::LinearSoftmax, 5, 2, 0, 13);
  const BoundReport rep = compute_bound_report(pi, pi_tilde, family, mdp);
  CHECK(rep.eps_train == 0.0);
  CHECK(rep.delta_train == 0.0);
  CHECK(rep.delta_eval == 0.0);
  CHECK(rep.r_max == 0.0);
  CHECK(rep.eta_pi_tilde == 0.0);
  CHECK(rep.thm1.holds);
  CHECK(rep.thm2.holds);
}

TEST_CASE("single train function reduces the surrogate to the classic form") {
  const TabularMdp mdp = random_mdp(4, 3, 20, 0.9);
  const auto family =
      make_family(mdp, spec_of(FamilyKind::PermuteOnehot, 4), 1, 1, 21);
  const ObservationPolicy pi =
      init_policy(PolicyArch::LinearSoftmax, 4, 3, 0, 22);
  const ObservationPolicy pi_tilde =
      init_policy(PolicyArch::LinearSoftmax, 4, 3, 0, 23);
  const PolicyPair pair = make_policy_pair(pi, pi_tilde, family, mdp);

  // Classic single-MDP surrogate, assembled by hand.
  const LiftedPolicy& base = pair.base[0];
  const LiftedPolicy& tilde = pair.tilde[0];
  double correction = 0.0;
  for (int s = 0; s < mdp.n_states; ++s)
    correction += base.visit.d[s] *
                  tilde.mu.probs.row(s).dot(base.values.adv.row(s));
  const double expected = base.ret + correction / (1.0 - mdp.gamma);
  CHECK(surrogate(pair, family, mdp) ==
        doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("sup constants agree with a swapped-order enumeration") {
  const TabularMdp mdp = random_mdp(6, 3, 30, 0.9);
  const auto family =
      make_family(mdp, spec_of(FamilyKind::Affine, 6), 5, 3, 31);
  const ObservationPolicy pi =
      init_policy(PolicyArch::OneHiddenMlp, 6, 3, 8, 32);
  const ObservationPolicy pi_tilde =
      init_policy(PolicyArch::OneHiddenMlp, 6, 3, 8, 33);
  const PolicyPair pair = make_policy_pair(pi, pi_tilde, family, mdp);
  const SupConstants sup = sup_constants(pair, family);

  double eps_train = 0.0, delta_train = 0.0, delta_eval = 0.0;
  double sigma_train = 0.0, sigma_eval = 0.0;
  // Action-then-state loop order, written independently.
  for (int i = 0; i < family.size(); ++i) {
    const bool train = family.train_mask[i] != 0;
    for (int a = 0; a < mdp.n_actions; ++a)
      for (int s = 0; s < mdp.n_states; ++s) {
        const double abs_adv = std::abs(pair.base[i].values.adv(s, a));
        if (train)
          delta_train = std::max(delta_train, abs_adv);
        else
          delta_eval = std::max(delta_eval, abs_adv);
      }
    for (int s = 0; s < mdp.n_states; ++s) {
      double exp_adv = 0.0, tv = 0.0;
      for (int a = 0; a < mdp.n_actions; ++a) {
        exp_adv += pair.tilde[i].mu.probs(s, a) * pair.base[i].values.adv(s, a);
        tv += 0.5 * std::abs(pair.tilde[i].mu.probs(s, a) -
                             pair.base[i].mu.probs(s, a));
      }
      if (train) {
        eps_train = std::max(eps_train, std::abs(exp_adv));
        sigma_train = std::max(sigma_train, tv);
      } else {
        sigma_eval = std::max(sigma_eval, tv);
      }
    }
  }
  CHECK(sup.eps_train == doctest::Approx(eps_train).epsilon(1e-14));
  CHECK(sup.delta_train == doctest::Approx(delta_train).epsilon(1e-14));
  CHECK(sup.delta_eval == doctest::Approx(delta_eval).epsilon(1e-14));
  CHECK(sup.sigma_train == doctest::Approx(sigma_train).epsilon(1e-14));
  CHECK(sup.sigma_eval == doctest::Approx(sigma_eval).epsilon(1e-14));
}

TEST_CASE("divergence terms match a sampling estimate within 3 SE") {
  const TabularMdp mdp = random_mdp(5, 3, 40, 0.9);
  const auto family =
      make_family(mdp, spec_of(FamilyKind::PermuteOnehot, 5), 4, 2, 41);
  const ObservationPolicy pi =
      init_policy(PolicyArch::LinearSoftmax, 5, 3, 0, 42);
  const ObservationPolicy pi_tilde =
      init_policy(PolicyArch::LinearSoftmax, 5, 3, 0, 43);
  const PolicyPair pair = make_policy_pair(pi, pi_tilde, family, mdp);
  const DivergenceTerms div = divergence_terms(pair, family);

  // Monte Carlo over (f ~ p_train, s ~ d^{mu_f}).
  const Vector train_w = family.split_weights(Split::Train);
  std::mt19937_64 gen(4040);
  const int n = 100000;
  double sum = 0.0, sum_sq = 0.0;
  for (int k = 0; k < n; ++k) {
    const int f = oracle::sample_index(train_w, gen);
    const int s = oracle::sample_index(pair.base[f].visit.d, gen);
    const double tv = tv_distance(pair.tilde[f].mu.probs.row(s),
                                  pair.base[f].mu.probs.row(s));
    sum += tv;
    sum_sq += tv * tv;
  }
  const double mean = sum / n;
  const double se = std::sqrt(
      std::max(0.0, sum_sq / n - mean * mean) / (n - 1));
  CHECK(std::abs(div.d_train - mean) <= 3.0 * se);
}

TEST_CASE("Z=1 zeroes the eval-split divergences by convention") {
  const TabularMdp mdp = random_mdp(4, 2, 50, 0.9);
  const auto family =
      make_family(mdp, spec_of(FamilyKind::PermuteOnehot, 4), 3, 3, 51);
  const ObservationPolicy pi =
      init_policy(PolicyArch::LinearSoftmax, 4, 2, 0, 52);
  const ObservationPolicy pi_tilde =
      init_policy(PolicyArch::LinearSoftmax, 4, 2, 0, 53);
  const BoundReport rep = compute_bound_report(pi, pi_tilde, family, mdp);
  CHECK(rep.partition_z == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(rep.div_2 == 0.0);
  CHECK(rep.div_eval == 0.0);
  CHECK(rep.delta_eval == 0.0);
  CHECK(rep.sigma_eval == 0.0);
  // eta and zeta coincide, and Theorem 2 collapses onto Theorem 1.
  CHECK(rep.eta_pi_tilde == rep.zeta_pi_tilde);
  CHECK(rep.thm2.rhs == doctest::Approx(rep.thm1.rhs).epsilon(1e-14));
  CHECK(rep.thm2.holds == rep.thm1.holds);
}

TEST_CASE("robustness of a single-member family is zero") {
  const TabularMdp mdp = random_mdp(4, 2, 60, 0.9);
  const auto family =
      make_family(mdp, spec_of(FamilyKind::Affine, 5), 1, 1, 61);
  const ObservationPolicy pi =
      init_policy(PolicyArch::OneHiddenMlp, 5, 2, 8, 62);
  CHECK(r_robustness(pi, family, mdp) == 0.0);
}

TEST_CASE("single-member family: eta, zeta, and the per-member return agree") {
  const TabularMdp mdp = random_mdp(4, 2, 63, 0.9);
  const auto family =
      make_family(mdp, spec_of(FamilyKind::Affine, 5), 1, 1, 64);
  const ObservationPolicy pi =
      init_policy(PolicyArch::OneHiddenMlp, 5, 2, 8, 65);
  const PolicyPair pair = make_policy_pair(pi, pi, family, mdp);
  const auto [eta, zeta] =
      training_and_generalization_returns(pair.base, family);
  CHECK(eta == zeta);
  CHECK(eta == pair.base[0].ret);
}

TEST_CASE("identical policies at Z=1: the corollary collapses to equality") {
  const TabularMdp mdp = random_mdp(5, 3, 66, 0.9);
  const auto family =
      make_family(mdp, spec_of(FamilyKind::PermuteOnehot, 5), 4, 4, 67);
  const ObservationPolicy pi =
      init_policy(PolicyArch::LinearSoftmax, 5, 3, 0, 68);
  const BoundReport rep = compute_bound_report(pi, pi, family, mdp);
  CHECK(rep.partition_z == 1.0);
  CHECK(rep.c_const == 0.0);
  CHECK(rep.robustness_pi == rep.robustness_pi_tilde);
  // zeta = eta >= L - 0, and L = eta up to solver rounding.
  CHECK(std::abs(rep.corollary.lhs - rep.corollary.rhs) <= 1e-9);
  CHECK(rep.corollary.holds);
}

TEST_CASE("observation-independent policies have zero robustness") {
  const TabularMdp mdp = random_mdp(5, 3, 70, 0.9);
  const auto family =
      make_family(mdp, spec_of(FamilyKind::Affine, 6), 5, 3, 71);
  ObservationPolicy constant;
  constant.arch = PolicyArch::LinearSoftmax;
  constant.obs_dim = 6;
  constant.n_actions = 3;
  constant.hidden_dim = 0;
  constant.params = Vector::Zero(param_layout(constant).total);
  const ParamLayout lay = param_layout(constant);
  constant.params[lay.pol_b + 1] = 2.0;  // biased but input-independent
  CHECK(r_robustness(constant, family, mdp) == 0.0);
}

TEST_CASE("hand-built two-state two-function instance enumerates exactly") {
  // Underlying 2-state, 2-action MDP; identity and swap renderings.
  TabularMdp mdp = random_mdp(2, 2, 80, 0.9);
  RenderingFamily family;
  family.weights = Vector::Constant(2, 0.5);
  family.train_mask = {1, 0};
  RenderingFunction identity, swap;
  identity.kind = swap.kind = FamilyKind::PermuteOnehot;
  identity.obs_dim = swap.obs_dim = 2;
  identity.obs_table = Matrix::Identity(2, 2);
  swap.obs_table.resize(2, 2);
  swap.obs_table << 0, 1, 1, 0;
  family.members = {identity, swap};
  family.validate();

  // Logits chosen so pi(.|e0) = (0.8, 0.2) and pi(.|e1) = (0.3, 0.7).
  Matrix logits(2, 2);
  logits << std::log(0.8), std::log(0.3), std::log(0.2), std::log(0.7);
  const ObservationPolicy pi = table_policy_from_logits(logits);

  const double r = r_robustness(pi, family, mdp);
  // Exhaustive enumeration over states and ordered pairs.
  std::vector<UnderlyingPolicy> lifted = {lift_policy(pi, identity, mdp),
                                          lift_policy(pi, swap, mdp)};
  double expected = 0.0;
  for (int s = 0; s < 2; ++s)
    for (int i = 0; i < 2; ++i)
      for (int j = 0; j < 2; ++j)
        expected = std::max(expected, tv_distance(lifted[i].probs.row(s),
                                                  lifted[j].probs.row(s)));
  CHECK(r == expected);
  CHECK(r == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("corollary is never tighter than theorem 2") {
  for (int i = 0; i < 50; ++i) {
    CampaignOptions opts;
    opts.instances = 50;
    opts.seed = 777;
    const CampaignInstance inst = make_campaign_instance(opts, i);
    const BoundReport rep =
        compute_bound_report(inst.pi, inst.pi_tilde, inst.family, inst.mdp);
    CHECK(rep.all_hold());
    CHECK(rep.corollary.rhs <= rep.thm2.rhs + 1e-9);
  }
}

TEST_CASE("per-function first-order gap bound holds") {
  // |E_{d~}E_{mu~}[A] - E_{d}E_{mu~}[A]| <= 2 eps gamma/(1-gamma) E_d[TV].
  for (int seed = 0; seed < 20; ++seed) {
    const TabularMdp mdp = random_mdp(5, 3, 9000 + seed, 0.9);
    const auto family =
        make_family(mdp, spec_of(FamilyKind::PermuteOnehot, 5), 2, 1,
                    9100 + seed);
    const ObservationPolicy pi =
        init_policy(PolicyArch::LinearSoftmax, 5, 3, 0, 9200 + seed);
    const ObservationPolicy pi_tilde =
        init_policy(PolicyArch::LinearSoftmax, 5, 3, 0, 9300 + seed);
    const PolicyPair pair = make_policy_pair(pi, pi_tilde, family, mdp);
    for (int f = 0; f < family.size(); ++f) {
      const LiftedPolicy& base = pair.base[f];
      const LiftedPolicy& tilde = pair.tilde[f];
      double under_tilde = 0.0, under_base = 0.0, eps = 0.0, mean_tv = 0.0;
      for (int s = 0; s < mdp.n_states; ++s) {
        const double exp_adv =
            tilde.mu.probs.row(s).dot(base.values.adv.row(s));
        under_tilde += tilde.visit.d[s] * exp_adv;
        under_base += base.visit.d[s] * exp_adv;
        eps = std::max(eps, std::abs(exp_adv));
        mean_tv += base.visit.d[s] * tv_distance(tilde.mu.probs.row(s),
                                                 base.mu.probs.row(s));
      }
      const double lhs = std::abs(under_tilde - under_base);
      const double rhs = 2.0 * eps * mdp.gamma / (1.0 - mdp.gamma) * mean_tv;
      CHECK(lhs <= rhs + 1e-12);
    }
  }
}

TEST_CASE("performance-difference identities hold across the family") {
  for (int i = 0; i < 30; ++i) {
    CampaignOptions opts;
    opts.instances = 30;
    opts.seed = 4242;
    const CampaignInstance inst = make_campaign_instance(opts, i);
    const PolicyPair pair =
        make_policy_pair(inst.pi, inst.pi_tilde, inst.family, inst.mdp);
    CHECK(performance_difference_residual(pair, inst.family, inst.mdp) <=
          1e-9);
  }
}
