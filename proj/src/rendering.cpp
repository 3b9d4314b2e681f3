#include "rlgen/rendering.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace rlgen {

std::string family_kind_name(FamilyKind kind) {
  switch (kind) {
    case FamilyKind::PermuteOnehot: return "permute-onehot";
    case FamilyKind::Affine: return "affine";
    case FamilyKind::Distractor: return "distractor";
    case FamilyKind::CoinDistractor: return "coin-distractor";
    case FamilyKind::CoinCorrelated: return "distractor-correlated";
  }
  throw std::logic_error("family_kind_name: bad kind");
}

FamilyKind family_kind_from_name(const std::string& name) {
  if (name == "permute-onehot") return FamilyKind::PermuteOnehot;
  if (name == "affine") return FamilyKind::Affine;
  if (name == "distractor") return FamilyKind::Distractor;
  if (name == "coin-distractor") return FamilyKind::CoinDistractor;
  if (name == "distractor-correlated") return FamilyKind::CoinCorrelated;
  throw std::invalid_argument("unknown rendering family: " + name);
}

int RenderingFunction::invert(const Vector& obs) const {
  for (int s = 0; s < obs_table.rows(); ++s)
    if ((obs_table.row(s).transpose() - obs).cwiseAbs().maxCoeff() <= 1e-9)
      return s;
  throw std::invalid_argument("RenderingFunction::invert: observation not in image");
}

double RenderingFamily::partition_z() const {
  // Z is the train mass of a normalized distribution; with no eval members
  // it is 1 by definition, not a rounded sum.
  if (split_empty(Split::Eval)) return 1.0;
  double z = 0.0;
  for (int i = 0; i < size(); ++i)
    if (train_mask[i]) z += weights[i];
  return z;
}

std::vector<int> RenderingFamily::split_indices(Split split) const {
  std::vector<int> idx;
  for (int i = 0; i < size(); ++i) {
    const bool in_train = train_mask[i] != 0;
    if (split == Split::All || (split == Split::Train && in_train) ||
        (split == Split::Eval && !in_train))
      idx.push_back(i);
  }
  return idx;
}

bool RenderingFamily::split_empty(Split split) const {
  return split_indices(split).empty();
}

Vector RenderingFamily::split_weights(Split split) const {
  const std::vector<int> idx = split_indices(split);
  if (idx.empty())
    throw std::invalid_argument("RenderingFamily: empty split requested");
  // A split covering the whole family keeps p bit-exactly (Z = 1 makes the
  // train expectation coincide with the full one).
  if (static_cast<int>(idx.size()) == size()) return weights;
  Vector w = Vector::Zero(size());
  double total = 0.0;
  for (int i : idx) {
    w[i] = weights[i];
    total += weights[i];
  }
  return w / total;
}

void RenderingFamily::validate() const {
  if (members.empty()) throw std::invalid_argument("RenderingFamily: empty");
  if (weights.size() != size() ||
      static_cast<int>(train_mask.size()) != size())
    throw std::invalid_argument("RenderingFamily: field length mismatch");
  if (weights.minCoeff() <= 0.0)
    throw std::invalid_argument("RenderingFamily: weights must be positive");
  if (std::abs(weights.sum() - 1.0) > 1e-12)
    throw std::invalid_argument("RenderingFamily: weights must sum to 1");
  if (split_indices(Split::Train).empty())
    throw std::invalid_argument("RenderingFamily: no train member");
  for (const RenderingFunction& f : members) {
    const int n = static_cast<int>(f.obs_table.rows());
    for (int s = 0; s < n; ++s)
      for (int t = s + 1; t < n; ++t)
        if ((f.obs_table.row(s) - f.obs_table.row(t)).cwiseAbs().maxCoeff() <=
            1e-9)
          throw std::invalid_argument(
              "RenderingFunction: obs_table rows coincide (not injective)");
  }
}

int CoinGridworld::manhattan(int s) const {
  const int a = agent_cell(s), c = coin_cell(s);
  return std::abs(cell_col(a) - cell_col(c)) +
         std::abs(cell_row(a) - cell_row(c));
}

namespace {

// 0 = left, 1 = right, 2 = up, 3 = down; walls clamp.
int move_cell(int cell, int action, int width, int height) {
  int col = cell % width, row = cell / width;
  switch (action) {
    case 0: col = std::max(0, col - 1); break;
    case 1: col = std::min(width - 1, col + 1); break;
    case 2: row = std::max(0, row - 1); break;
    case 3: row = std::min(height - 1, row + 1); break;
    default: throw std::invalid_argument("coin_gridworld: bad action");
  }
  return row * width + col;
}

}  // namespace

CoinGridworld coin_gridworld(int width, int height, int palette_size,
                             double gamma) {
  if (width * height < 2)
    throw std::invalid_argument("coin_gridworld: need at least two cells");
  CoinGridworld g;
  g.width = width;
  g.height = height;
  g.n_cells = width * height;
  g.palette_size = palette_size;

  const int n_states = g.n_cells * g.n_cells;
  const int n_actions = 4;
  TabularMdp& mdp = g.mdp;
  mdp.n_states = n_states;
  mdp.n_actions = n_actions;
  mdp.gamma = gamma;
  mdp.reward = Matrix::Zero(n_states, n_actions);
  mdp.rho = Vector::Zero(n_states);

  // Fresh starts: uniform over agent != coin.
  for (int s = 0; s < n_states; ++s)
    if (g.agent_cell(s) != g.coin_cell(s)) mdp.rho[s] = 1.0;
  mdp.rho /= mdp.rho.sum();

  mdp.transition.assign(n_actions, Matrix::Zero(n_states, n_states));
  for (int s = 0; s < n_states; ++s) {
    const int agent = g.agent_cell(s), coin = g.coin_cell(s);
    for (int a = 0; a < n_actions; ++a) {
      if (agent == coin) {
        // Reset state: any action redraws a fresh start, no reward.
        mdp.transition[a].row(s) = mdp.rho.transpose();
        continue;
      }
      const int next_agent = move_cell(agent, a, width, height);
      if (next_agent == coin) {
        mdp.reward(s, a) = 1.0;
        mdp.transition[a].row(s) = mdp.rho.transpose();
      } else {
        mdp.transition[a](s, g.state_index(next_agent, coin)) = 1.0;
      }
    }
  }
  return g;
}

namespace {

// Evenly spaced palette over [-scale, scale].
double palette_value(int index, int palette_size, double scale) {
  if (palette_size <= 1) return scale;
  return scale * (2.0 * index / (palette_size - 1) - 1.0);
}

Matrix build_permute_onehot(int n_states, int obs_dim, Rng& rng) {
  if (obs_dim < n_states)
    throw std::invalid_argument(
        "permute-onehot family needs obs_dim >= n_states");
  const std::vector<int> perm = rng.permutation(obs_dim);
  Matrix table = Matrix::Zero(n_states, obs_dim);
  for (int s = 0; s < n_states; ++s) table(s, perm[s]) = 1.0;
  return table;
}

bool rows_injective(const Matrix& table) {
  for (int s = 0; s < table.rows(); ++s)
    for (int t = s + 1; t < table.rows(); ++t)
      if ((table.row(s) - table.row(t)).cwiseAbs().maxCoeff() <= 1e-9)
        return false;
  return true;
}

Matrix build_affine(int n_states, int obs_dim, std::uint64_t seed) {
  for (int attempt = 0; attempt < 100; ++attempt) {
    Rng rng(derive_seed(seed, "affine-attempt", attempt));
    Matrix w(obs_dim, n_states);
    rng.fill_gaussian(w);
    Vector b(obs_dim);
    for (int i = 0; i < obs_dim; ++i) b[i] = rng.normal();
    Matrix table(n_states, obs_dim);
    for (int s = 0; s < n_states; ++s)
      table.row(s) = (w.col(s) + b).transpose();
    if (rows_injective(table)) return table;
  }
  throw std::runtime_error(
      "affine rendering function: injectivity not achieved in 100 attempts");
}

Matrix build_distractor(int n_states, int obs_dim, Rng& rng) {
  if (obs_dim <= n_states)
    throw std::invalid_argument("distractor family needs obs_dim > n_states");
  Matrix table = Matrix::Zero(n_states, obs_dim);
  for (int s = 0; s < n_states; ++s) table(s, s) = 1.0;
  // Function-specific constant background channels.
  for (int c = n_states; c < obs_dim; ++c) {
    const double v = rng.uniform();
    table.col(c).setConstant(v);
  }
  return table;
}

Matrix build_coin(const CoinGridworld& grid, const FamilySpec& spec,
                  Rng& rng, bool correlated, bool is_train) {
  const int n_states = grid.mdp.n_states;
  const int pos_dim = 2 * grid.n_cells;
  const int obs_dim = spec.obs_dim;
  if (obs_dim != pos_dim + spec.n_background_channels)
    throw std::invalid_argument(
        "coin family: obs_dim must be 2*cells + background channels");
  if (spec.n_background_channels < 1)
    throw std::invalid_argument("coin family: need a background channel");

  Matrix table = Matrix::Zero(n_states, obs_dim);
  for (int s = 0; s < n_states; ++s) {
    table(s, grid.agent_cell(s)) = 1.0;
    table(s, grid.n_cells + grid.coin_cell(s)) = 1.0;
  }
  const int p = grid.palette_size;
  int first_const_channel = pos_dim;
  if (correlated) {
    // Channel tracking the coin side. Train members share one
    // side-to-color mapping; eval members break it (swap or zero out).
    double left, right;
    if (is_train || spec.eval_break == EvalBreak::Swap) {
      left = palette_value(is_train ? 0 : p - 1, p, spec.background_scale);
      right = palette_value(is_train ? p - 1 : 0, p, spec.background_scale);
    } else {
      left = right = 0.0;
    }
    for (int s = 0; s < n_states; ++s)
      table(s, pos_dim) = grid.coin_side(s) == 0 ? left : right;
    first_const_channel = pos_dim + 1;
  }
  for (int c = first_const_channel; c < obs_dim; ++c) {
    const double v =
        palette_value(rng.uniform_int(p), p, spec.background_scale);
    table.col(c).setConstant(v);
  }
  return table;
}

}  // namespace

RenderingFunction build_member(const TabularMdp& mdp, const CoinGridworld* grid,
                               const FamilySpec& spec, std::uint64_t seed,
                               bool is_train) {
  RenderingFunction f;
  f.kind = spec.kind;
  f.seed = seed;
  f.obs_dim = spec.obs_dim;
  Rng rng(seed);
  switch (spec.kind) {
    case FamilyKind::PermuteOnehot:
      f.obs_table = build_permute_onehot(mdp.n_states, spec.obs_dim, rng);
      break;
    case FamilyKind::Affine:
      f.obs_table = build_affine(mdp.n_states, spec.obs_dim, seed);
      break;
    case FamilyKind::Distractor:
      f.obs_table = build_distractor(mdp.n_states, spec.obs_dim, rng);
      break;
    case FamilyKind::CoinDistractor:
    case FamilyKind::CoinCorrelated: {
      if (grid == nullptr)
        throw std::invalid_argument("coin family requires the gridworld");
      const bool correlated = spec.kind == FamilyKind::CoinCorrelated;
      f.obs_table = build_coin(*grid, spec, rng, correlated, is_train);
      break;
    }
  }
  return f;
}

RenderingFamily make_family(const TabularMdp& mdp, const FamilySpec& spec,
                            int n_functions, int n_train, std::uint64_t seed,
                            const CoinGridworld* grid) {
  if (n_functions < 1 || n_train < 1 || n_train > n_functions)
    throw std::invalid_argument("make_family: need 1 <= n_train <= n_functions");
  const int min_dim =
      static_cast<int>(std::ceil(std::log2(std::max(2, mdp.n_states))));
  if (spec.obs_dim < min_dim)
    throw std::invalid_argument("make_family: obs_dim too small for injectivity");

  RenderingFamily family;
  family.weights = Vector::Constant(n_functions, 1.0 / n_functions);
  family.train_mask.assign(n_functions, 0);
  for (int i = 0; i < n_train; ++i) family.train_mask[i] = 1;
  family.members.reserve(n_functions);
  for (int i = 0; i < n_functions; ++i)
    family.members.push_back(build_member(mdp, grid, spec,
                                          derive_seed(seed, "member", i),
                                          i < n_train));
  family.validate();
  return family;
}

UnderlyingPolicy lift_policy(const ObservationPolicy& pi,
                             const RenderingFunction& f,
                             const TabularMdp& mdp) {
  if (pi.obs_dim != f.obs_dim)
    throw std::invalid_argument("lift_policy: obs_dim mismatch");
  UnderlyingPolicy mu;
  mu.probs.resize(mdp.n_states, pi.n_actions);
  for (int s = 0; s < mdp.n_states; ++s)
    mu.probs.row(s) =
        forward(pi, f.obs_table.row(s).transpose()).probs.transpose();
  return mu;
}

int sample_function(const RenderingFamily& family, Split split, Rng& rng) {
  return rng.categorical(family.split_weights(split));
}

std::vector<GeneratedStep> generate_episode(const TabularMdp& mdp,
                                            const RenderingFamily& family,
                                            const ObservationPolicy& pi,
                                            int horizon, std::uint64_t seed,
                                            Split split) {
  if (horizon < 1) throw std::invalid_argument("generate_episode: horizon >= 1");
  Rng rng(seed);
  const int f_idx = sample_function(family, split, rng);
  const RenderingFunction& f = family.members[f_idx];
  int s = rng.categorical(mdp.rho);

  std::vector<GeneratedStep> episode;
  episode.reserve(horizon);
  for (int t = 0; t < horizon; ++t) {
    GeneratedStep step;
    step.obs = f.obs_table.row(s).transpose();
    step.underlying_state = s;
    step.f_index = f_idx;
    step.action = rng.categorical(forward(pi, step.obs).probs);
    step.reward = mdp.reward(s, step.action);
    s = rng.categorical(mdp.transition[step.action].row(s).transpose());
    episode.push_back(std::move(step));
  }
  return episode;
}

int truncation_horizon(double gamma, double r_max, double tol) {
  if (r_max <= tol) return 1;
  return static_cast<int>(std::ceil(std::log(tol / r_max) / std::log(gamma)));
}

std::pair<double, double> estimate_return(const TabularMdp& mdp,
                                          const RenderingFamily& family,
                                          const ObservationPolicy& pi,
                                          int n_episodes, std::uint64_t seed,
                                          Split split) {
  const double r_max = mdp.reward.cwiseAbs().maxCoeff();
  const int horizon = truncation_horizon(mdp.gamma, r_max);
  double sum = 0.0, sum_sq = 0.0;
  for (int e = 0; e < n_episodes; ++e) {
    const auto episode = generate_episode(mdp, family, pi, horizon,
                                          derive_seed(seed, "episode", e), split);
    double g = 0.0, discount = 1.0;
    for (const GeneratedStep& step : episode) {
      g += discount * step.reward;
      discount *= mdp.gamma;
    }
    sum += g;
    sum_sq += g * g;
  }
  const double mean = sum / n_episodes;
  // Squared standard error of the mean.
  const double se_sq = std::max(0.0, sum_sq / n_episodes - mean * mean) /
                       std::max(1, n_episodes - 1);
  return {mean, std::sqrt(se_sq)};
}

}  // namespace rlgen
