#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <string>
#include <vector>

#include "rlgen/mdp.hpp"
#include "rlgen/policy.hpp"

namespace rlgen {

/// How a rendering function turns an underlying state into an observation
/// vector.
///   PermuteOnehot        one-hot of the state at a permuted position
///   Affine               W * onehot(s) + b, Gaussian W and b, retried
///                        until injective
///   Distractor           one-hot state block plus constant background
///                        channels specific to the function
///   CoinDistractor       coin-gridworld encoding: one-hot agent cell,
///                        one-hot coin cell, background channels constant
///                        per function
///   CoinCorrelated       as CoinDistractor, but the first background
///                        channel tracks the coin side; train members share
///                        one side-to-color mapping and eval members use the
///                        swapped mapping
enum class FamilyKind {
  PermuteOnehot,
  Affine,
  Distractor,
  CoinDistractor,
  CoinCorrelated,
};

std::string family_kind_name(FamilyKind kind);
FamilyKind family_kind_from_name(const std::string& name);

/// One rendering function, precomputed as a table of observations per
/// underlying state. Rows must be pairwise distinct (bijection onto image).
struct RenderingFunction {
  FamilyKind kind = FamilyKind::PermuteOnehot;
  std::uint64_t seed = 0;
  int obs_dim = 0;
  Matrix obs_table;  // n_states x obs_dim

  /// Index of the state producing this observation; throws if no row of
  /// obs_table matches within 1e-9 in max norm.
  int invert(const Vector& obs) const;
};

enum class Split { Train, Eval, All };

struct RenderingFamily {
  std::vector<RenderingFunction> members;
  Vector weights;                // distribution p over members
  std::vector<char> train_mask;  // nonzero marks the train split

  int size() const { return static_cast<int>(members.size()); }

  /// Probability mass of the train split under p.
  double partition_z() const;

  std::vector<int> split_indices(Split split) const;
  bool split_empty(Split split) const;

  /// Weights restricted to a split and renormalized; zero elsewhere.
  Vector split_weights(Split split) const;

  /// Checks weight/​mask invariants and per-member injectivity.
  void validate() const;
};

/// How eval members of a correlated coin family break the side-to-color
/// correlation: Swap inverts the mapping, Neutral zeroes the channel.
enum class EvalBreak { Swap, Neutral };

/// Metadata needed to rebuild a family from per-member seeds.
struct FamilySpec {
  FamilyKind kind = FamilyKind::PermuteOnehot;
  int obs_dim = 0;
  // Coin families only:
  int n_background_channels = 2;
  double background_scale = 3.0;
  int palette_size = 2;
  EvalBreak eval_break = EvalBreak::Swap;
};

/// The coin-gridworld underlying environment. State = (agent cell, coin
/// cell); moving onto the coin pays +1 and the next state is a fresh draw
/// from the initial distribution, so the MDP is continuing.
struct CoinGridworld {
  TabularMdp mdp;
  int width = 0, height = 0, n_cells = 0;
  int palette_size = 2;

  int state_index(int agent, int coin) const { return agent * n_cells + coin; }
  int agent_cell(int s) const { return s / n_cells; }
  int coin_cell(int s) const { return s % n_cells; }
  int cell_col(int c) const { return c % width; }
  int cell_row(int c) const { return c / width; }
  /// 0 if the coin sits in the left half of the grid, 1 otherwise.
  int coin_side(int s) const { return 2 * cell_col(coin_cell(s)) >= width ? 1 : 0; }
  /// Manhattan distance from agent to coin.
  int manhattan(int s) const;
};

/// Actions: 0 = left, 1 = right, 2 = up, 3 = down. Moves into walls stay
/// put. Initial distribution: uniform over states with agent != coin.
CoinGridworld coin_gridworld(int width, int height, int palette_size = 2,
                             double gamma = 0.95);

/// Builds one rendering function; deterministic in (spec, seed, is_train).
/// grid may be null for the non-coin kinds. Throws if injectivity cannot be
/// achieved within 100 attempts (Affine) or the dimensions do not fit.
RenderingFunction build_member(const TabularMdp& mdp, const CoinGridworld* grid,
                               const FamilySpec& spec, std::uint64_t seed,
                               bool is_train);

/// Builds a family of n_functions members with uniform weights; the first
/// n_train members form the train split. Member seeds are derived from the
/// family seed.
RenderingFamily make_family(const TabularMdp& mdp, const FamilySpec& spec,
                            int n_functions, int n_train, std::uint64_t seed,
                            const CoinGridworld* grid = nullptr);

/// Underlying policy induced by composing an observation policy with a
/// rendering function: row s = pi(. | obs_table[s]).
UnderlyingPolicy lift_policy(const ObservationPolicy& pi,
                             const RenderingFunction& f, const TabularMdp& mdp);

struct GeneratedStep {
  Vector obs;
  int action = 0;
  double reward = 0.0;
  int underlying_state = 0;  // diagnostics only
  int f_index = 0;
};

/// Samples a member index from the split-restricted, renormalized weights.
/// Throws on an empty split.
int sample_function(const RenderingFamily& family, Split split, Rng& rng);

/// One data-collection episode: sample f from the split, s0 from rho, then
/// o_t = f(s_t), a_t ~ pi(.|o_t), (r_t, s_{t+1}) from the MDP.
std::vector<GeneratedStep> generate_episode(const TabularMdp& mdp,
                                            const RenderingFamily& family,
                                            const ObservationPolicy& pi,
                                            int horizon, std::uint64_t seed,
                                            Split split);

/// Truncation horizon H with gamma^H * r_max below the tolerance; used by
/// Monte-Carlo return estimates.
int truncation_horizon(double gamma, double r_max, double tol = 1e-8);

/// Monte-Carlo estimate of the split-restricted expected discounted return
/// of pi. Returns (mean, standard error).
std::pair<double, double> estimate_return(const TabularMdp& mdp,
                                          const RenderingFamily& family,
                                          const ObservationPolicy& pi,
                                          int n_episodes, std::uint64_t seed,
                                          Split split);

}  // namespace rlgen
