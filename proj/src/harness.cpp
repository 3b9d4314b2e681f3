#include "rlgen/harness.hpp"

#include <CLI11.hpp>

#include <atomic>
#include <chrono>
#include <cstdlib>
#include <iostream>
#include <mutex>
#include <sstream>
#include <thread>

namespace rlgen {

// ---------------------------------------------------------------------------
// Config files
// ---------------------------------------------------------------------------

namespace {

std::string trim(const std::string& s) {
  const auto begin = s.find_first_not_of(" \t\r");
  if (begin == std::string::npos) return "";
  const auto end = s.find_last_not_of(" \t\r");
  return s.substr(begin, end - begin + 1);
}

}  // namespace

KvConfig KvConfig::parse_file(const std::filesystem::path& path) {
  return parse_string(read_file(path), path.string());
}

KvConfig KvConfig::parse_string(const std::string& text,
                                const std::string& name) {
  KvConfig kv;
  kv.name_ = name;
  std::istringstream in(text);
  std::string line;
  std::string section;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto comment = line.find('#');
    if (comment != std::string::npos) line = line.substr(0, comment);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']')
        throw ConfigError(name, line_no, "unterminated section header");
      section = trim(line.substr(1, line.size() - 2));
      if (section.empty())
        throw ConfigError(name, line_no, "empty section name");
      kv.section_lines_.emplace(section, line_no);
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(name, line_no, "expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw ConfigError(name, line_no, "empty key");
    if (kv.sections_[section].count(key))
      throw ConfigError(name, line_no, "duplicate key '" + key + "'");
    kv.sections_[section][key] = Entry{value, line_no};
  }
  return kv;
}

const KvConfig::Entry* KvConfig::find(const std::string& section,
                                      const std::string& key) const {
  const auto sec = sections_.find(section);
  if (sec == sections_.end()) return nullptr;
  const auto entry = sec->second.find(key);
  return entry == sec->second.end() ? nullptr : &entry->second;
}

bool KvConfig::has(const std::string& section, const std::string& key) const {
  return find(section, key) != nullptr;
}

std::string KvConfig::get_string(const std::string& section,
                                 const std::string& key,
                                 const std::string& fallback) const {
  const Entry* e = find(section, key);
  return e ? e->value : fallback;
}

double KvConfig::get_double(const std::string& section, const std::string& key,
                            double fallback) const {
  const Entry* e = find(section, key);
  if (!e) return fallback;
  try {
    std::size_t pos = 0;
    const double v = std::stod(e->value, &pos);
    if (pos != e->value.size()) throw std::invalid_argument("");
    return v;
  } catch (const std::exception&) {
    throw ConfigError(name_, e->line, "'" + key + "' is not a number");
  }
}

int KvConfig::get_int(const std::string& section, const std::string& key,
                      int fallback) const {
  return static_cast<int>(get_int64(section, key, fallback));
}

long long KvConfig::get_int64(const std::string& section,
                              const std::string& key,
                              long long fallback) const {
  const Entry* e = find(section, key);
  if (!e) return fallback;
  try {
    std::size_t pos = 0;
    const long long v = std::stoll(e->value, &pos);
    if (pos != e->value.size()) throw std::invalid_argument("");
    return v;
  } catch (const std::exception&) {
    throw ConfigError(name_, e->line, "'" + key + "' is not an integer");
  }
}

std::uint64_t KvConfig::get_uint64(const std::string& section,
                                   const std::string& key,
                                   std::uint64_t fallback) const {
  const Entry* e = find(section, key);
  if (!e) return fallback;
  try {
    std::size_t pos = 0;
    const unsigned long long v = std::stoull(e->value, &pos);
    if (pos != e->value.size()) throw std::invalid_argument("");
    return v;
  } catch (const std::exception&) {
    throw ConfigError(name_, e->line, "'" + key + "' is not an integer");
  }
}

bool KvConfig::get_bool(const std::string& section, const std::string& key,
                        bool fallback) const {
  const Entry* e = find(section, key);
  if (!e) return fallback;
  if (e->value == "true" || e->value == "1" || e->value == "yes") return true;
  if (e->value == "false" || e->value == "0" || e->value == "no") return false;
  throw ConfigError(name_, e->line, "'" + key + "' is not a boolean");
}

void KvConfig::expect_only(const std::string& section,
                           const std::set<std::string>& allowed) const {
  const auto sec = sections_.find(section);
  if (sec == sections_.end()) return;
  for (const auto& [key, entry] : sec->second)
    if (!allowed.count(key))
      throw ConfigError(name_, entry.line,
                        "unknown key '" + key + "' in section [" + section + "]");
}

void KvConfig::expect_sections(const std::set<std::string>& sections) const {
  for (const auto& [section, line] : section_lines_)
    if (!sections.count(section))
      throw ConfigError(name_, line, "unknown section [" + section + "]");
  // Keys before any section header live in the unnamed section "".
  if (sections_.count("") && !sections.count(""))
    throw ConfigError(name_, sections_.at("").begin()->second.line,
                      "key outside any section");
}

PpoConfig ppo_config_from_kv(const KvConfig& kv, const PpoConfig& defaults) {
  static const std::set<std::string> allowed = {
      "gamma",          "gae_lambda",     "clip_eps",
      "value_coef",     "entropy_coef",   "kl_weight",
      "update_epochs",  "minibatches",    "horizon",
      "n_workers",      "learning_rate",  "total_steps",
      "seed",           "normalize_advantages", "kl_joint_grad",
      "exact_eval_every", "est_episodes", "arch",
      "hidden_dim"};
  kv.expect_only("train", allowed);

  PpoConfig c = defaults;
  c.gamma = kv.get_double("train", "gamma", c.gamma);
  c.gae_lambda = kv.get_double("train", "gae_lambda", c.gae_lambda);
  c.clip_eps = kv.get_double("train", "clip_eps", c.clip_eps);
  c.value_coef = kv.get_double("train", "value_coef", c.value_coef);
  c.entropy_coef = kv.get_double("train", "entropy_coef", c.entropy_coef);
  c.kl_weight = kv.get_double("train", "kl_weight", c.kl_weight);
  c.update_epochs = kv.get_int("train", "update_epochs", c.update_epochs);
  c.minibatches = kv.get_int("train", "minibatches", c.minibatches);
  c.horizon = kv.get_int("train", "horizon", c.horizon);
  c.n_workers = kv.get_int("train", "n_workers", c.n_workers);
  c.learning_rate = kv.get_double("train", "learning_rate", c.learning_rate);
  c.total_steps = kv.get_int64("train", "total_steps", c.total_steps);
  c.seed = kv.get_uint64("train", "seed", c.seed);
  c.normalize_advantages =
      kv.get_bool("train", "normalize_advantages", c.normalize_advantages);
  c.kl_joint_grad = kv.get_bool("train", "kl_joint_grad", c.kl_joint_grad);
  c.exact_eval_every =
      kv.get_int("train", "exact_eval_every", c.exact_eval_every);
  c.est_episodes = kv.get_int("train", "est_episodes", c.est_episodes);
  const std::string arch = kv.get_string(
      "train", "arch",
      defaults.arch == PolicyArch::LinearSoftmax ? "linear-softmax"
                                                 : "one-hidden-mlp");
  if (arch == "linear-softmax")
    c.arch = PolicyArch::LinearSoftmax;
  else if (arch == "one-hidden-mlp")
    c.arch = PolicyArch::OneHiddenMlp;
  else
    throw std::invalid_argument("unknown arch: " + arch);
  c.hidden_dim = kv.get_int("train", "hidden_dim", c.hidden_dim);
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// Bound-verification campaign
// ---------------------------------------------------------------------------

namespace {

ObservationPolicy make_table_policy(int obs_dim, int n_actions,
                                    double temperature, std::uint64_t seed) {
  ObservationPolicy p;
  p.arch = PolicyArch::LinearSoftmax;
  p.obs_dim = obs_dim;
  p.n_actions = n_actions;
  p.hidden_dim = 0;
  const ParamLayout lay = param_layout(p);
  p.params = Vector::Zero(lay.total);
  Rng rng(seed);
  Eigen::Map<Matrix> w(p.params.data() + lay.pol_w, n_actions, obs_dim);
  rng.fill_gaussian(w, 1.0 / temperature);
  return p;
}

}  // namespace

CampaignInstance make_campaign_instance(const CampaignOptions& options,
                                        int index) {
  Rng rng(derive_seed(options.seed, "instance", index));
  const int n_states =
      options.max_states <= 2 ? options.max_states
                              : 2 + rng.uniform_int(options.max_states - 1);
  const int n_actions =
      options.max_actions <= 2 ? options.max_actions
                               : 2 + rng.uniform_int(options.max_actions - 1);
  const int n_functions = 1 + rng.uniform_int(options.max_functions);
  // Keep a slice of Z = 1 instances in the mix.
  int n_train;
  if (n_functions == 1 || rng.uniform() < 0.125)
    n_train = n_functions;
  else
    n_train = 1 + rng.uniform_int(std::min(n_functions, options.max_train));

  CampaignInstance inst;
  inst.mdp = random_mdp(n_states, n_actions,
                        derive_seed(options.seed, "instance", index, "mdp"),
                        options.gamma);
  inst.family_spec.kind =
      (index % 2 == 0) ? FamilyKind::PermuteOnehot : FamilyKind::Affine;
  inst.family_spec.obs_dim =
      inst.family_spec.kind == FamilyKind::PermuteOnehot
          ? n_states
          : std::max(2, static_cast<int>(std::ceil(std::log2(n_states))) + 1);
  inst.family = make_family(inst.mdp, inst.family_spec, n_functions, n_train,
                            derive_seed(options.seed, "instance", index, "family"));

  static constexpr double kTemps[3] = {0.1, 1.0, 10.0};
  const double temp_pi = kTemps[index % 3];
  const double temp_tilde = kTemps[(index / 3) % 3];
  inst.pi = make_table_policy(
      inst.family_spec.obs_dim, n_actions, temp_pi,
      derive_seed(options.seed, "instance", index, "pi"));
  inst.pi_tilde = make_table_policy(
      inst.family_spec.obs_dim, n_actions, temp_tilde,
      derive_seed(options.seed, "instance", index, "pi-tilde"));
  return inst;
}

CampaignResult run_campaign(const CampaignOptions& options) {
  const auto t0 = std::chrono::steady_clock::now();
  CampaignResult result;
  result.reports.resize(options.instances);
  std::vector<double> identity_residuals(options.instances, 0.0);
  std::vector<char> ok(options.instances, 1);

  std::atomic<int> next{0};
  std::exception_ptr worker_error;
  std::mutex error_mutex;
  auto worker = [&]() {
    try {
      for (;;) {
        const int i = next.fetch_add(1);
        if (i >= options.instances) return;
        const CampaignInstance inst = make_campaign_instance(options, i);
        const PolicyPair pair =
            make_policy_pair(inst.pi, inst.pi_tilde, inst.family, inst.mdp);
        result.reports[i] = compute_bound_report(pair, inst.family, inst.mdp);
        identity_residuals[i] =
            performance_difference_residual(pair, inst.family, inst.mdp);
        ok[i] = result.reports[i].all_hold() && identity_residuals[i] <= 1e-9;
      }
    } catch (...) {
      const std::lock_guard<std::mutex> lock(error_mutex);
      if (!worker_error) worker_error = std::current_exception();
      next.store(options.instances);  // drain remaining work
    }
  };

  const int n_threads = std::max(1, options.workers);
  if (n_threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(n_threads);
    for (int t = 0; t < n_threads; ++t) pool.emplace_back(worker);
    for (std::thread& t : pool) t.join();
  }
  if (worker_error) std::rethrow_exception(worker_error);

  result.summary.instances = options.instances;
  result.summary.min_slack.fill(std::numeric_limits<double>::infinity());
  for (int i = 0; i < options.instances; ++i) {
    if (!ok[i]) {
      ++result.summary.failures;
      if (result.first_failure < 0) result.first_failure = i;
    }
    const BoundReport& r = result.reports[i];
    const TheoremCheck* checks[6] = {&r.thm1, &r.thm2, &r.thm3,
                                     &r.thm4, &r.thm5, &r.corollary};
    for (int k = 0; k < 6; ++k)
      result.summary.min_slack[k] =
          std::min(result.summary.min_slack[k], checks[k]->slack);
  }
  result.summary.runtime_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
          .count();
  return result;
}

Json campaign_result_to_json(const CampaignResult& result) {
  Json j;
  j["summary"] = {
      {"instances", result.summary.instances},
      {"failures", result.summary.failures},
      {"min_slack_per_theorem",
       {{"theorem1", result.summary.min_slack[0]},
        {"theorem2", result.summary.min_slack[1]},
        {"theorem3", result.summary.min_slack[2]},
        {"theorem4", result.summary.min_slack[3]},
        {"theorem5", result.summary.min_slack[4]},
        {"corollary", result.summary.min_slack[5]}}}};
  Json reports = Json::array();
  for (const BoundReport& r : result.reports)
    reports.push_back(bound_report_to_json(r));
  j["reports"] = std::move(reports);
  return j;
}

Json counterexample_to_json(const CampaignInstance& instance,
                            const BoundReport& report) {
  Json j;
  j["mdp"] = mdp_to_json(instance.mdp);
  j["family"] = family_to_json(instance.family, instance.family_spec);
  j["pi"] = policy_to_json(instance.pi);
  j["pi_tilde"] = policy_to_json(instance.pi_tilde);
  j["report"] = bound_report_to_json(report);
  return j;
}

int worker_count_from_env(int fallback) {
  const char* env = std::getenv("RLGEN_WORKERS");
  if (env == nullptr) return fallback;
  try {
    return std::max(1, std::stoi(env));
  } catch (const std::exception&) {
    return fallback;
  }
}

// ---------------------------------------------------------------------------
// CLI
// ---------------------------------------------------------------------------

namespace {

namespace fs = std::filesystem;

struct EnvFlags {
  std::string env = "random";
  std::string family = "affine";
  int states = 6;
  int actions = 3;
  double gamma = 0.9;
  int width = 3;
  int height = 2;
  int palette_size = 2;
  double grid_gamma = 0.95;
  int n_functions = 10;
  int n_train = 5;
  int obs_dim = 0;  // 0 = derive from the family kind
  int bg_channels = 3;
  double bg_scale = 3.0;
  std::string eval_break = "swap";
};

void merge_env_section(const KvConfig& kv, EnvFlags& flags) {
  static const std::set<std::string> allowed = {
      "family",     "states",     "actions",   "gamma",
      "width",      "height",     "palette_size", "n_functions",
      "n_train",    "obs_dim",    "bg_channels",  "bg_scale",
      "eval_break"};
  kv.expect_only("env", allowed);
  flags.family = kv.get_string("env", "family", flags.family);
  flags.states = kv.get_int("env", "states", flags.states);
  flags.actions = kv.get_int("env", "actions", flags.actions);
  flags.gamma = kv.get_double("env", "gamma", flags.gamma);
  flags.grid_gamma = kv.get_double("env", "gamma", flags.grid_gamma);
  flags.width = kv.get_int("env", "width", flags.width);
  flags.height = kv.get_int("env", "height", flags.height);
  flags.palette_size = kv.get_int("env", "palette_size", flags.palette_size);
  flags.n_functions = kv.get_int("env", "n_functions", flags.n_functions);
  flags.n_train = kv.get_int("env", "n_train", flags.n_train);
  flags.obs_dim = kv.get_int("env", "obs_dim", flags.obs_dim);
  flags.bg_channels = kv.get_int("env", "bg_channels", flags.bg_channels);
  flags.bg_scale = kv.get_double("env", "bg_scale", flags.bg_scale);
  flags.eval_break = kv.get_string("env", "eval_break", flags.eval_break);
}

EvalBreak eval_break_from_name(const std::string& name) {
  if (name == "swap") return EvalBreak::Swap;
  if (name == "neutral") return EvalBreak::Neutral;
  throw std::invalid_argument("eval_break must be swap or neutral");
}

EnvBundle build_env_bundle(const EnvFlags& flags, std::uint64_t seed) {
  EnvBundle bundle;
  if (flags.env == "coin-grid") {
    bundle.grid = coin_gridworld(flags.width, flags.height, flags.palette_size,
                                 flags.grid_gamma);
    bundle.mdp = bundle.grid->mdp;
    FamilyKind kind = family_kind_from_name(flags.family);
    if (kind == FamilyKind::Distractor) kind = FamilyKind::CoinDistractor;
    if (kind != FamilyKind::CoinDistractor && kind != FamilyKind::CoinCorrelated)
      throw std::invalid_argument(
          "coin-grid supports the distractor and distractor-correlated families");
    bundle.family_spec.kind = kind;
    bundle.family_spec.n_background_channels = flags.bg_channels;
    bundle.family_spec.background_scale = flags.bg_scale;
    bundle.family_spec.palette_size = flags.palette_size;
    bundle.family_spec.eval_break = eval_break_from_name(flags.eval_break);
    bundle.family_spec.obs_dim =
        2 * bundle.grid->n_cells + flags.bg_channels;
    bundle.family =
        make_family(bundle.mdp, bundle.family_spec, flags.n_functions,
                    flags.n_train, derive_seed(seed, "family"),
                    &bundle.grid.value());
  } else if (flags.env == "random") {
    bundle.mdp = random_mdp(flags.states, flags.actions,
                            derive_seed(seed, "mdp"), flags.gamma);
    bundle.family_spec.kind = family_kind_from_name(flags.family);
    int obs_dim = flags.obs_dim;
    if (obs_dim == 0) {
      switch (bundle.family_spec.kind) {
        case FamilyKind::PermuteOnehot: obs_dim = flags.states; break;
        case FamilyKind::Affine:
          obs_dim = std::max(
              2, static_cast<int>(std::ceil(std::log2(flags.states))) + 2);
          break;
        case FamilyKind::Distractor:
          obs_dim = flags.states + flags.bg_channels;
          break;
        default:
          throw std::invalid_argument(
              "random env supports permute-onehot, affine, distractor");
      }
    }
    bundle.family_spec.obs_dim = obs_dim;
    bundle.family = make_family(bundle.mdp, bundle.family_spec,
                                flags.n_functions, flags.n_train,
                                derive_seed(seed, "family"));
  } else if (flags.env.size() > 5 &&
             flags.env.substr(flags.env.size() - 5) == ".json") {
    bundle = bundle_from_json(Json::parse(read_file(flags.env)));
  } else {
    throw std::invalid_argument("unknown env: " + flags.env +
                                " (expected random, coin-grid, or a .json bundle)");
  }
  // Dense direct solves are O(n^3); keep instances desk-sized.
  if (bundle.mdp.n_states > 256)
    throw std::invalid_argument(
        "environment has " + std::to_string(bundle.mdp.n_states) +
        " states; the dense-solver cap is 256");
  return bundle;
}

std::string describe_ppo_config(const PpoConfig& c, const EnvFlags& env,
                                const std::string& mode) {
  std::ostringstream out;
  out << "# resolved run configuration\n";
  out << "mode = " << mode << "\n\n";
  out << "[env]\n";
  if (env.env.size() > 5 && env.env.substr(env.env.size() - 5) == ".json") {
    out << "# loaded from bundle: " << env.env << "\n\n";
  } else {
    out << "family = " << env.family << "\n";
    if (env.env == "coin-grid") {
      out << "width = " << env.width << "\nheight = " << env.height
          << "\npalette_size = " << env.palette_size
          << "\ngamma = " << format_double(env.grid_gamma)
          << "\nbg_channels = " << env.bg_channels
          << "\nbg_scale = " << format_double(env.bg_scale)
          << "\neval_break = " << env.eval_break << "\n";
    } else {
      out << "states = " << env.states << "\nactions = " << env.actions
          << "\ngamma = " << format_double(env.gamma) << "\n";
      if (env.obs_dim != 0) out << "obs_dim = " << env.obs_dim << "\n";
    }
    out << "n_functions = " << env.n_functions
        << "\nn_train = " << env.n_train << "\n\n";
  }
  out << "[train]\n";
  out << "gamma = " << format_double(c.gamma) << "\n";
  out << "gae_lambda = " << format_double(c.gae_lambda) << "\n";
  out << "clip_eps = " << format_double(c.clip_eps) << "\n";
  out << "value_coef = " << format_double(c.value_coef) << "\n";
  out << "entropy_coef = " << format_double(c.entropy_coef) << "\n";
  out << "kl_weight = " << format_double(c.kl_weight) << "\n";
  out << "update_epochs = " << c.update_epochs << "\n";
  out << "minibatches = " << c.minibatches << "\n";
  out << "horizon = " << c.horizon << "\n";
  out << "n_workers = " << c.n_workers << "\n";
  out << "learning_rate = " << format_double(c.learning_rate) << "\n";
  out << "total_steps = " << c.total_steps << "\n";
  out << "seed = " << c.seed << "\n";
  out << "normalize_advantages = " << (c.normalize_advantages ? "true" : "false")
      << "\n";
  out << "kl_joint_grad = " << (c.kl_joint_grad ? "true" : "false") << "\n";
  out << "exact_eval_every = " << c.exact_eval_every << "\n";
  out << "est_episodes = " << c.est_episodes << "\n";
  out << "arch = "
      << (c.arch == PolicyArch::LinearSoftmax ? "linear-softmax"
                                              : "one-hidden-mlp")
      << "\n";
  out << "hidden_dim = " << c.hidden_dim << "\n";
  return out.str();
}

int cmd_gen_mdp(const EnvFlags& flags, std::uint64_t seed,
                const std::string& out_path) {
  const EnvBundle bundle = build_env_bundle(flags, seed);
  atomic_write_file(out_path, bundle_to_json(bundle).dump(2) + "\n");
  std::cout << "wrote " << out_path << " (" << bundle.mdp.n_states
            << " states, " << bundle.family.size() << " rendering functions, Z="
            << format_double(bundle.family.partition_z()) << ")\n";
  return 0;
}

int cmd_verify_bounds(const CampaignOptions& options,
                      const std::string& out_path) {
  const CampaignResult result = run_campaign(options);
  atomic_write_file(out_path, campaign_result_to_json(result).dump(2) + "\n");
  std::cout << "campaign: " << result.summary.instances << " instances, "
            << result.summary.failures << " failures, "
            << format_double(result.summary.runtime_seconds) << " s\n";
  if (result.summary.failures > 0) {
    const CampaignInstance bad =
        make_campaign_instance(options, result.first_failure);
    const fs::path ce_path = out_path + ".counterexample.json";
    atomic_write_file(
        ce_path,
        counterexample_to_json(bad, result.reports[result.first_failure])
                .dump(2) +
            "\n");
    std::cout << "counterexample written to " << ce_path.string() << "\n";
    return 1;
  }
  return 0;
}

int cmd_train(const EnvFlags& flags, const std::string& mode_name,
              const std::string& config_path, std::uint64_t seed,
              bool seed_given, const std::string& out_dir) {
  PpoConfig config;
  EnvFlags env = flags;
  if (!config_path.empty()) {
    const KvConfig kv = KvConfig::parse_file(config_path);
    kv.expect_sections({"train", "env"});
    config = ppo_config_from_kv(kv, config);
    merge_env_section(kv, env);
  }
  if (seed_given) config.seed = seed;

  TrainMode mode;
  if (mode_name == "baseline")
    mode = TrainMode::Baseline;
  else if (mode_name == "dml")
    mode = TrainMode::Dml;
  else
    throw std::invalid_argument("unknown mode: " + mode_name);

  const EnvBundle bundle = build_env_bundle(env, config.seed);
  const TrainResult result = train(bundle.mdp, bundle.family, config, mode);

  fs::create_directories(out_dir);
  atomic_write_file(fs::path(out_dir) / "bundle.json",
                    bundle_to_json(bundle).dump(2) + "\n");
  atomic_write_file(fs::path(out_dir) / "config.txt",
                    describe_ppo_config(config, env, mode_name));
  atomic_write_file(fs::path(out_dir) / "metrics.csv",
                    metrics_to_csv(result.metrics));
  for (std::size_t i = 0; i < result.agents.size(); ++i)
    atomic_write_file(
        fs::path(out_dir) / ("agent" + std::to_string(i) + ".json"),
        policy_to_json(result.agents[i].policy).dump(2) + "\n");
  if (!result.metrics.empty()) {
    const MetricsRow& last = result.metrics.back();
    std::cout << "trained " << result.agents.size() << " agent(s), "
              << last.steps << " steps; exact eta="
              << format_double(last.eta_exact)
              << " zeta=" << format_double(last.zeta_exact) << "\n";
  } else {
    std::cout << "zero-step run; initial checkpoint written unchanged\n";
  }
  return 0;
}

int cmd_robustness(const std::string& checkpoint_path,
                   const std::string& bundle_path, int n_perturbations,
                   int n_steps, std::uint64_t seed, const std::string& split,
                   bool reverse_kl, const std::string& out_path,
                   const std::string& embeddings_path) {
  const ObservationPolicy policy =
      policy_from_json(Json::parse(read_file(checkpoint_path)));
  const EnvBundle bundle = bundle_from_json(Json::parse(read_file(bundle_path)));
  Split s;
  if (split == "train")
    s = Split::Train;
  else if (split == "eval")
    s = Split::Eval;
  else
    throw std::invalid_argument("split must be train or eval");

  const PerturbationSuite suite = make_perturbation_suite(
      policy.obs_dim, n_perturbations, derive_seed(seed, "suite"));
  const RobustnessRecord record =
      robustness_test(policy, bundle.mdp, bundle.family, suite, n_steps,
                      derive_seed(seed, "rollout"), s);
  atomic_write_file(out_path,
                    robustness_record_to_json(record, reverse_kl).dump(2) + "\n");
  std::cout << "robustness: mean=" << format_double(record.summary_mean)
            << " std=" << format_double(record.summary_std) << " over "
            << n_steps << " steps x " << n_perturbations << " perturbations\n";

  if (!embeddings_path.empty()) {
    const int member = bundle.family.split_indices(s).front();
    const Matrix& observations = bundle.family.members[member].obs_table;
    const auto rows = export_embeddings(policy, observations, suite);
    atomic_write_file(embeddings_path, embeddings_to_csv(rows));
    std::cout << "embeddings written to " << embeddings_path << "\n";
  }
  return 0;
}

int cmd_ablation(const std::string& checkpoint_path,
                 const std::string& bundle_path,
                 const std::string& config_path, std::uint64_t seed,
                 bool seed_given, const std::string& out_dir) {
  const ObservationPolicy checkpoint =
      policy_from_json(Json::parse(read_file(checkpoint_path)));
  const EnvBundle bundle = bundle_from_json(Json::parse(read_file(bundle_path)));
  PpoConfig config;
  if (!config_path.empty()) {
    const KvConfig kv = KvConfig::parse_file(config_path);
    kv.expect_sections({"train", "env"});
    config = ppo_config_from_kv(kv, config);
  }
  if (seed_given) config.seed = seed;

  const TrainResult result =
      frozen_encoder_retrain(checkpoint, bundle.mdp, bundle.family, config);
  fs::create_directories(out_dir);
  atomic_write_file(fs::path(out_dir) / "metrics.csv",
                    metrics_to_csv(result.metrics));
  atomic_write_file(fs::path(out_dir) / "agent0.json",
                    policy_to_json(result.agents[0].policy).dump(2) + "\n");
  if (!result.metrics.empty()) {
    const MetricsRow& last = result.metrics.back();
    std::cout << "retrained heads on frozen encoder; exact zeta="
              << format_double(last.zeta_exact) << "\n";
  }
  return 0;
}

int cmd_replay(const std::string& path) {
  const Json j = Json::parse(read_file(path));
  const TabularMdp mdp = mdp_from_json(j.at("mdp"));
  const RenderingFamily family =
      family_from_json(j.at("family"), mdp, nullptr);
  const ObservationPolicy pi = policy_from_json(j.at("pi"));
  const ObservationPolicy pi_tilde = policy_from_json(j.at("pi_tilde"));
  const BoundReport report =
      compute_bound_report(pi, pi_tilde, family, mdp);
  const char* names[6] = {"theorem1", "theorem2", "theorem3",
                          "theorem4", "theorem5", "corollary"};
  const TheoremCheck* checks[6] = {&report.thm1, &report.thm2, &report.thm3,
                                   &report.thm4, &report.thm5,
                                   &report.corollary};
  bool all = true;
  for (int k = 0; k < 6; ++k) {
    std::cout << names[k] << ": " << (checks[k]->holds ? "holds" : "VIOLATED")
              << " (lhs=" << format_double(checks[k]->lhs)
              << ", rhs=" << format_double(checks[k]->rhs)
              << ", slack=" << format_double(checks[k]->slack) << ")\n";
    all = all && checks[k]->holds;
  }
  return all ? 0 : 1;
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
  CLI::App app{
      "rlgen: exact verification of RL generalization bounds on tabular MDPs "
      "plus PPO / mutual-learning training on rendered variants"};
  app.require_subcommand(1);
  int rc = 0;

  // gen-mdp
  auto* gen = app.add_subcommand(
      "gen-mdp", "Generate an underlying MDP and a rendering family");
  auto gen_flags = std::make_shared<EnvFlags>();
  auto gen_seed = std::make_shared<std::uint64_t>(7);
  auto gen_out = std::make_shared<std::string>();
  gen->add_option("--env", gen_flags->env, "random | coin-grid");
  gen->add_option("--family", gen_flags->family,
                  "permute-onehot | affine | distractor | distractor-correlated");
  gen->add_option("--states", gen_flags->states, "states (random env)");
  gen->add_option("--actions", gen_flags->actions, "actions (random env)");
  gen->add_option("--gamma", gen_flags->gamma, "discount factor (random env)");
  gen->add_option("--width", gen_flags->width, "grid width (coin-grid)");
  gen->add_option("--height", gen_flags->height, "grid height (coin-grid)");
  gen->add_option("--grid-gamma", gen_flags->grid_gamma,
                  "discount factor (coin-grid)");
  gen->add_option("--palette-size", gen_flags->palette_size,
                  "background palette size");
  gen->add_option("--n-functions", gen_flags->n_functions,
                  "rendering functions in the family");
  gen->add_option("--n-train", gen_flags->n_train, "train-split size");
  gen->add_option("--obs-dim", gen_flags->obs_dim,
                  "observation dimension (0 = derive)");
  gen->add_option("--bg-channels", gen_flags->bg_channels,
                  "background channels (distractor kinds)");
  gen->add_option("--bg-scale", gen_flags->bg_scale,
                  "background channel magnitude");
  gen->add_option("--eval-break", gen_flags->eval_break,
                  "how eval members break the correlation: swap | neutral");
  gen->add_option("--seed", *gen_seed, "root seed");
  gen->add_option("--out", *gen_out, "output bundle path")->required();
  gen->callback(
      [gen_flags, gen_seed, gen_out, &rc]() {
        rc = cmd_gen_mdp(*gen_flags, *gen_seed, *gen_out);
      });

  // verify-bounds
  auto* verify = app.add_subcommand(
      "verify-bounds",
      "Randomized exact verification of the performance bounds");
  auto camp = std::make_shared<CampaignOptions>();
  auto verify_out = std::make_shared<std::string>();
  auto verify_workers = std::make_shared<int>(0);
  verify->add_option("--instances", camp->instances, "instance count");
  verify->add_option("--states", camp->max_states, "max states per instance");
  verify->add_option("--actions", camp->max_actions, "max actions");
  verify->add_option("--functions", camp->max_functions,
                     "max rendering functions");
  verify->add_option("--train", camp->max_train, "max train-split size");
  verify->add_option("--gamma", camp->gamma, "discount factor");
  verify->add_option("--seed", camp->seed, "root seed");
  verify->add_option("--workers", *verify_workers,
                     "worker threads (default: RLGEN_WORKERS or 1)");
  verify->add_option("--out", *verify_out, "output report path")->required();
  verify->callback([camp, verify_out, verify_workers, &rc]() {
    camp->workers = *verify_workers > 0 ? *verify_workers
                                        : worker_count_from_env(1);
    rc = cmd_verify_bounds(*camp, *verify_out);
  });

  // train
  auto* tr = app.add_subcommand("train",
                                "PPO baseline or two-agent mutual learning");
  auto tr_flags = std::make_shared<EnvFlags>();
  auto tr_mode = std::make_shared<std::string>("baseline");
  auto tr_config = std::make_shared<std::string>();
  auto tr_seed = std::make_shared<std::uint64_t>(0);
  auto tr_out = std::make_shared<std::string>();
  tr->add_option("--mode", *tr_mode, "baseline | dml");
  tr->add_option("--env", tr_flags->env,
                 "random | coin-grid | path to a bundle .json");
  tr->add_option("--family", tr_flags->family, "rendering family");
  tr->add_option("--eval-break", tr_flags->eval_break,
                 "how eval members break the correlation: swap | neutral");
  auto* tr_seed_opt = tr->add_option("--seed", *tr_seed, "root seed");
  tr->add_option("--config", *tr_config, "key=value config file");
  tr->add_option("--out", *tr_out, "run directory")->required();
  tr->callback([tr_flags, tr_mode, tr_config, tr_seed, tr_seed_opt, tr_out,
                &rc]() {
    rc = cmd_train(*tr_flags, *tr_mode, *tr_config, *tr_seed,
                   tr_seed_opt->count() > 0, *tr_out);
  });

  // robustness
  auto* rob = app.add_subcommand(
      "robustness", "Random-perturbation KL sensitivity of a checkpoint");
  auto rob_ckpt = std::make_shared<std::string>();
  auto rob_bundle = std::make_shared<std::string>();
  auto rob_n_pert = std::make_shared<int>(100);
  auto rob_n_steps = std::make_shared<int>(100);
  auto rob_seed = std::make_shared<std::uint64_t>(11);
  auto rob_split = std::make_shared<std::string>("eval");
  auto rob_reverse = std::make_shared<bool>(false);
  auto rob_out = std::make_shared<std::string>();
  auto rob_emb = std::make_shared<std::string>();
  rob->add_option("--checkpoint", *rob_ckpt, "policy checkpoint")->required();
  rob->add_option("--family", *rob_bundle, "environment bundle .json")
      ->required();
  rob->add_option("--n-perturbations", *rob_n_pert, "perturbation maps");
  rob->add_option("--n-steps", *rob_n_steps, "consecutive interaction steps");
  rob->add_option("--seed", *rob_seed, "root seed");
  rob->add_option("--split", *rob_split, "train | eval");
  rob->add_flag("--reverse-kl", *rob_reverse,
                "report KL(perturbed || unperturbed) as the primary direction");
  rob->add_option("--out", *rob_out, "output JSON path")->required();
  rob->add_option("--embeddings-out", *rob_emb,
                  "also export encoder features as CSV");
  rob->callback([rob_ckpt, rob_bundle, rob_n_pert, rob_n_steps, rob_seed,
                 rob_split, rob_reverse, rob_out, rob_emb, &rc]() {
    rc = cmd_robustness(*rob_ckpt, *rob_bundle, *rob_n_pert, *rob_n_steps,
                        *rob_seed, *rob_split, *rob_reverse, *rob_out,
                        *rob_emb);
  });

  // ablation
  auto* abl = app.add_subcommand(
      "ablation", "Retrain policy/value heads on a frozen encoder");
  auto abl_ckpt = std::make_shared<std::string>();
  auto abl_bundle = std::make_shared<std::string>();
  auto abl_config = std::make_shared<std::string>();
  auto abl_seed = std::make_shared<std::uint64_t>(0);
  auto abl_out = std::make_shared<std::string>();
  abl->add_option("--checkpoint", *abl_ckpt, "source checkpoint")->required();
  abl->add_option("--family", *abl_bundle, "environment bundle .json")
      ->required();
  abl->add_option("--config", *abl_config, "key=value config file");
  auto* abl_seed_opt = abl->add_option("--seed", *abl_seed, "root seed");
  abl->add_option("--out", *abl_out, "run directory")->required();
  abl->callback([abl_ckpt, abl_bundle, abl_config, abl_seed, abl_seed_opt,
                 abl_out, &rc]() {
    rc = cmd_ablation(*abl_ckpt, *abl_bundle, *abl_config, *abl_seed,
                      abl_seed_opt->count() > 0, *abl_out);
  });

  // replay-counterexample
  auto* replay = app.add_subcommand(
      "replay-counterexample", "Recompute the verdicts of a saved instance");
  auto replay_path = std::make_shared<std::string>();
  replay->add_option("file", *replay_path, "counterexample JSON")->required();
  replay->callback([replay_path, &rc]() { rc = cmd_replay(*replay_path); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return rc;
}

}  // namespace rlgen
