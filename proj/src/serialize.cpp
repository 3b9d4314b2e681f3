#include "rlgen/serialize.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace rlgen {

namespace {

Json vector_to_json(const Vector& v) {
  Json arr = Json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) arr.push_back(v[i]);
  return arr;
}

Vector vector_from_json(const Json& j) {
  Vector v(j.size());
  for (std::size_t i = 0; i < j.size(); ++i) v[static_cast<Eigen::Index>(i)] = j[i].get<double>();
  return v;
}

}  // namespace

Json mdp_to_json(const TabularMdp& mdp) {
  Json j;
  j["n_states"] = mdp.n_states;
  j["n_actions"] = mdp.n_actions;
  Json reward = Json::array();
  for (int s = 0; s < mdp.n_states; ++s) {
    Json row = Json::array();
    for (int a = 0; a < mdp.n_actions; ++a) row.push_back(mdp.reward(s, a));
    reward.push_back(std::move(row));
  }
  j["reward"] = std::move(reward);
  Json transition = Json::array();
  for (int s = 0; s < mdp.n_states; ++s) {
    Json per_action = Json::array();
    for (int a = 0; a < mdp.n_actions; ++a) {
      Json row = Json::array();
      for (int t = 0; t < mdp.n_states; ++t)
        row.push_back(mdp.transition[a](s, t));
      per_action.push_back(std::move(row));
    }
    transition.push_back(std::move(per_action));
  }
  j["transition"] = std::move(transition);
  j["rho"] = vector_to_json(mdp.rho);
  j["gamma"] = mdp.gamma;
  return j;
}

TabularMdp mdp_from_json(const Json& j) {
  TabularMdp mdp;
  mdp.n_states = j.at("n_states").get<int>();
  mdp.n_actions = j.at("n_actions").get<int>();
  mdp.gamma = j.at("gamma").get<double>();
  mdp.reward.resize(mdp.n_states, mdp.n_actions);
  const Json& reward = j.at("reward");
  for (int s = 0; s < mdp.n_states; ++s)
    for (int a = 0; a < mdp.n_actions; ++a)
      mdp.reward(s, a) = reward.at(s).at(a).get<double>();
  mdp.transition.assign(mdp.n_actions,
                        Matrix::Zero(mdp.n_states, mdp.n_states));
  const Json& transition = j.at("transition");
  for (int s = 0; s < mdp.n_states; ++s)
    for (int a = 0; a < mdp.n_actions; ++a)
      for (int t = 0; t < mdp.n_states; ++t)
        mdp.transition[a](s, t) = transition.at(s).at(a).at(t).get<double>();
  mdp.rho = vector_from_json(j.at("rho"));
  mdp.validate();
  return mdp;
}

Json family_to_json(const RenderingFamily& family, const FamilySpec& spec) {
  Json j;
  j["family_id"] = family_kind_name(spec.kind);
  j["obs_dim"] = spec.obs_dim;
  Json seeds = Json::array();
  for (const RenderingFunction& f : family.members) seeds.push_back(f.seed);
  j["seeds"] = std::move(seeds);
  j["weights"] = vector_to_json(family.weights);
  Json mask = Json::array();
  for (char m : family.train_mask) mask.push_back(m != 0);
  j["train_mask"] = std::move(mask);
  if (spec.kind == FamilyKind::CoinDistractor ||
      spec.kind == FamilyKind::CoinCorrelated) {
    j["n_background_channels"] = spec.n_background_channels;
    j["background_scale"] = spec.background_scale;
    j["palette_size"] = spec.palette_size;
    j["eval_break"] =
        spec.eval_break == EvalBreak::Swap ? "swap" : "neutral";
  }
  return j;
}

RenderingFamily family_from_json(const Json& j, const TabularMdp& mdp,
                                 const CoinGridworld* grid,
                                 FamilySpec* spec_out) {
  FamilySpec spec;
  spec.kind = family_kind_from_name(j.at("family_id").get<std::string>());
  spec.obs_dim = j.at("obs_dim").get<int>();
  if (j.contains("n_background_channels"))
    spec.n_background_channels = j.at("n_background_channels").get<int>();
  if (j.contains("background_scale"))
    spec.background_scale = j.at("background_scale").get<double>();
  if (j.contains("palette_size"))
    spec.palette_size = j.at("palette_size").get<int>();
  if (j.contains("eval_break")) {
    const std::string mode = j.at("eval_break").get<std::string>();
    if (mode == "swap")
      spec.eval_break = EvalBreak::Swap;
    else if (mode == "neutral")
      spec.eval_break = EvalBreak::Neutral;
    else
      throw std::invalid_argument("family: unknown eval_break " + mode);
  }

  RenderingFamily family;
  const Json& seeds = j.at("seeds");
  const Json& mask = j.at("train_mask");
  family.weights = vector_from_json(j.at("weights"));
  family.train_mask.resize(mask.size());
  for (std::size_t i = 0; i < mask.size(); ++i)
    family.train_mask[i] = mask[i].get<bool>() ? 1 : 0;
  for (std::size_t i = 0; i < seeds.size(); ++i)
    family.members.push_back(build_member(mdp, grid, spec,
                                          seeds[i].get<std::uint64_t>(),
                                          family.train_mask[i] != 0));
  family.validate();
  if (spec_out) *spec_out = spec;
  return family;
}

Json bundle_to_json(const EnvBundle& bundle) {
  Json j;
  if (bundle.grid.has_value()) {
    j["env"] = {{"kind", "coin-grid"},
                {"width", bundle.grid->width},
                {"height", bundle.grid->height},
                {"palette_size", bundle.grid->palette_size},
                {"gamma", bundle.mdp.gamma}};
  } else {
    j["env"] = {{"kind", "random"}};
  }
  j["mdp"] = mdp_to_json(bundle.mdp);
  j["family"] = family_to_json(bundle.family, bundle.family_spec);
  return j;
}

EnvBundle bundle_from_json(const Json& j) {
  EnvBundle bundle;
  const std::string kind = j.at("env").at("kind").get<std::string>();
  if (kind == "coin-grid") {
    const Json& env = j.at("env");
    bundle.grid = coin_gridworld(env.at("width").get<int>(),
                                 env.at("height").get<int>(),
                                 env.at("palette_size").get<int>(),
                                 env.at("gamma").get<double>());
    bundle.mdp = bundle.grid->mdp;
    // The stored tensors are authoritative; cross-check shape only.
    const TabularMdp stored = mdp_from_json(j.at("mdp"));
    if (stored.n_states != bundle.mdp.n_states ||
        stored.n_actions != bundle.mdp.n_actions)
      throw std::invalid_argument("bundle: stored MDP does not match grid");
    bundle.mdp = stored;
  } else if (kind == "random") {
    bundle.mdp = mdp_from_json(j.at("mdp"));
  } else {
    throw std::invalid_argument("bundle: unknown env kind " + kind);
  }
  bundle.family = family_from_json(
      j.at("family"), bundle.mdp,
      bundle.grid.has_value() ? &bundle.grid.value() : nullptr,
      &bundle.family_spec);
  return bundle;
}

Json policy_to_json(const ObservationPolicy& policy) {
  Json j;
  j["format"] = "rlgen-checkpoint-v1";
  j["arch"] = policy.arch == PolicyArch::LinearSoftmax ? "linear-softmax"
                                                       : "one-hidden-mlp";
  j["obs_dim"] = policy.obs_dim;
  j["n_actions"] = policy.n_actions;
  j["hidden_dim"] = policy.hidden_dim;
  j["seed"] = policy.init_seed;
  // Little-endian float64 bytes; layout documented in policy.hpp.
  j["params_b64"] = base64_encode(
      reinterpret_cast<const unsigned char*>(policy.params.data()),
      static_cast<std::size_t>(policy.params.size()) * sizeof(double));
  j["n_params"] = policy.params.size();
  return j;
}

ObservationPolicy policy_from_json(const Json& j) {
  ObservationPolicy policy;
  const std::string arch = j.at("arch").get<std::string>();
  if (arch == "linear-softmax")
    policy.arch = PolicyArch::LinearSoftmax;
  else if (arch == "one-hidden-mlp")
    policy.arch = PolicyArch::OneHiddenMlp;
  else
    throw std::invalid_argument("checkpoint: unknown arch " + arch);
  policy.obs_dim = j.at("obs_dim").get<int>();
  policy.n_actions = j.at("n_actions").get<int>();
  policy.hidden_dim = j.at("hidden_dim").get<int>();
  if (j.contains("seed")) policy.init_seed = j.at("seed").get<std::uint64_t>();
  const auto bytes = base64_decode(j.at("params_b64").get<std::string>());
  if (bytes.size() % sizeof(double) != 0)
    throw std::invalid_argument("checkpoint: corrupt parameter payload");
  const Eigen::Index n = static_cast<Eigen::Index>(bytes.size() / sizeof(double));
  const ParamLayout lay = param_layout(policy);
  if (n != lay.total)
    throw std::invalid_argument("checkpoint: parameter count mismatch");
  policy.params.resize(n);
  std::memcpy(policy.params.data(), bytes.data(), bytes.size());
  return policy;
}

Json theorem_check_to_json(const TheoremCheck& check) {
  return Json{{"lhs", check.lhs},
              {"rhs", check.rhs},
              {"holds", check.holds},
              {"slack", check.slack}};
}

Json bound_report_to_json(const BoundReport& r) {
  Json j;
  j["eta_pi"] = r.eta_pi;
  j["eta_pi_tilde"] = r.eta_pi_tilde;
  j["zeta_pi"] = r.zeta_pi;
  j["zeta_pi_tilde"] = r.zeta_pi_tilde;
  j["surrogate"] = r.surrogate;
  j["Z"] = r.partition_z;
  j["r_max"] = r.r_max;
  j["eps_train"] = r.eps_train;
  j["delta_train"] = r.delta_train;
  j["delta_eval"] = r.delta_eval;
  j["sigma_train"] = r.sigma_train;
  j["sigma_eval"] = r.sigma_eval;
  j["D_train"] = r.div_train;
  j["D_1"] = r.div_1;
  j["D_2"] = r.div_2;
  j["D_eval"] = r.div_eval;
  j["R_pi"] = r.robustness_pi;
  j["R_pi_tilde"] = r.robustness_pi_tilde;
  j["C_train"] = r.c_train;
  j["C_pi"] = r.c_pi;
  j["C_pi_tilde"] = r.c_pi_tilde;
  j["C"] = r.c_const;
  j["theorem1"] = theorem_check_to_json(r.thm1);
  j["theorem2"] = theorem_check_to_json(r.thm2);
  j["theorem3"] = theorem_check_to_json(r.thm3);
  j["theorem4"] = theorem_check_to_json(r.thm4);
  j["theorem5"] = theorem_check_to_json(r.thm5);
  j["corollary"] = theorem_check_to_json(r.corollary);
  return j;
}

Json robustness_record_to_json(const RobustnessRecord& record,
                               bool reverse_primary) {
  Json j;
  j["kl_direction"] =
      reverse_primary ? "perturbed-first" : "unperturbed-first";
  const Vector& primary = reverse_primary ? record.per_step_mean_kl_reverse
                                          : record.per_step_mean_kl;
  j["per_step_mean_kl"] = vector_to_json(primary);
  j["summary_mean"] =
      reverse_primary ? record.reverse_summary_mean : record.summary_mean;
  j["summary_std"] =
      reverse_primary ? record.reverse_summary_std : record.summary_std;
  j["forward"] = {{"summary_mean", record.summary_mean},
                  {"summary_std", record.summary_std}};
  j["reverse"] = {{"summary_mean", record.reverse_summary_mean},
                  {"summary_std", record.reverse_summary_std}};
  return j;
}

namespace {
constexpr char kB64Alphabet[] =
    "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
}

std::string base64_encode(const unsigned char* data, std::size_t len) {
  std::string out;
  out.reserve((len + 2) / 3 * 4);
  for (std::size_t i = 0; i < len; i += 3) {
    const unsigned b0 = data[i];
    const unsigned b1 = i + 1 < len ? data[i + 1] : 0;
    const unsigned b2 = i + 2 < len ? data[i + 2] : 0;
    out.push_back(kB64Alphabet[b0 >> 2]);
    out.push_back(kB64Alphabet[((b0 & 0x3) << 4) | (b1 >> 4)]);
    out.push_back(i + 1 < len ? kB64Alphabet[((b1 & 0xF) << 2) | (b2 >> 6)]
                              : '=');
    out.push_back(i + 2 < len ? kB64Alphabet[b2 & 0x3F] : '=');
  }
  return out;
}

std::vector<unsigned char> base64_decode(const std::string& text) {
  auto value_of = [](char c) -> int {
    if (c >= 'A' && c <= 'Z') return c - 'A';
    if (c >= 'a' && c <= 'z') return c - 'a' + 26;
    if (c >= '0' && c <= '9') return c - '0' + 52;
    if (c == '+') return 62;
    if (c == '/') return 63;
    if (c == '=') return -1;
    throw std::invalid_argument("base64: bad character");
  };
  if (text.size() % 4 != 0)
    throw std::invalid_argument("base64: length not a multiple of 4");
  std::vector<unsigned char> out;
  out.reserve(text.size() / 4 * 3);
  for (std::size_t i = 0; i < text.size(); i += 4) {
    const int v0 = value_of(text[i]);
    const int v1 = value_of(text[i + 1]);
    const int v2 = value_of(text[i + 2]);
    const int v3 = value_of(text[i + 3]);
    if (v0 < 0 || v1 < 0) throw std::invalid_argument("base64: bad padding");
    out.push_back(static_cast<unsigned char>((v0 << 2) | (v1 >> 4)));
    if (v2 >= 0) out.push_back(static_cast<unsigned char>((v1 << 4) | (v2 >> 2)));
    if (v3 >= 0) out.push_back(static_cast<unsigned char>((v2 << 6) | v3));
  }
  return out;
}

void atomic_write_file(const std::filesystem::path& path,
                       const std::string& content) {
  namespace fs = std::filesystem;
  const fs::path dir = path.parent_path();
  if (!dir.empty()) fs::create_directories(dir);
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open " + tmp.string());
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) throw std::runtime_error("short write to " + tmp.string());
  }
  fs::rename(tmp, path);
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  // Shortest decimal form that parses back to the same double.
  char buf[40];
  for (int precision = 15; precision <= 17; ++precision) {
    std::snprintf(buf, sizeof(buf), "%.*g", precision, v);
    if (std::strtod(buf, nullptr) == v) break;
  }
  return buf;
}

std::string metrics_to_csv(const std::vector<MetricsRow>& metrics) {
  std::string csv =
      "iteration,steps,train_return_emp,eval_return_emp,eta_exact,zeta_exact,"
      "kl_between_agents,entropy,loss_policy,loss_value,loss_entropy,loss_kl,"
      "loss_total\n";
  for (const MetricsRow& m : metrics) {
    csv += std::to_string(m.iteration) + ',' + std::to_string(m.steps) + ',' +
           format_double(m.train_return_emp) + ',' +
           format_double(m.eval_return_emp) + ',' +
           format_double(m.eta_exact) + ',' + format_double(m.zeta_exact) +
           ',' + format_double(m.kl_between_agents) + ',' +
           format_double(m.entropy) + ',' + format_double(m.loss_policy) +
           ',' + format_double(m.loss_value) + ',' +
           format_double(m.loss_entropy) + ',' + format_double(m.loss_kl) +
           ',' + format_double(m.loss_total) + '\n';
  }
  return csv;
}

std::string embeddings_to_csv(const std::vector<EmbeddingRow>& rows) {
  if (rows.empty()) return "obs_id,perturbation_id\n";
  std::string csv = "obs_id,perturbation_id";
  for (Eigen::Index i = 0; i < rows[0].features.size(); ++i)
    csv += ",f" + std::to_string(i);
  csv += '\n';
  for (const EmbeddingRow& r : rows) {
    csv += std::to_string(r.obs_id) + ',' + std::to_string(r.perturbation_id);
    for (Eigen::Index i = 0; i < r.features.size(); ++i)
      csv += ',' + format_double(r.features[i]);
    csv += '\n';
  }
  return csv;
}

}  // namespace rlgen
