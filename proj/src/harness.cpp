#include "advrl/harness.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <map>
#include <mutex>
#include <sstream>
#include <thread>

namespace advrl {

namespace fs = std::filesystem;

// ------------------------------------------------------------------ metrics

MetricsRow aggregate(const std::vector<EpisodeResult>& episodes, MetricsRow context) {
  MetricsRow row = std::move(context);
  row.episodes = episodes.size();
  std::size_t successes = 0;
  double queries = 0.0, l2 = 0.0;
  for (const auto& e : episodes) {
    if (!e.success) continue;
    ++successes;
    queries += static_cast<double>(e.queries);
    l2 += e.l2;
  }
  row.asr = episodes.empty() ? 0.0 : double(successes) / double(episodes.size());
  row.aq.reset();
  row.l2.reset();
  if (successes > 0) {
    row.aq = queries / double(successes);
    row.l2 = l2 / double(successes);
  }
  return row;
}

const char* const kResultsHeader = "attack,variant,split,victim,seed,update,episodes,asr,aq,l2";
const char* const kEpisodesHeader =
    "attack,variant,split,victim,seed,update,episode,source_id,success,queries,l2";

namespace {

std::string fmt(double v) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

double to_double(const std::string& s) {
  double v = 0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw IoError("bad number '" + s + "' in results file");
  }
  return v;
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += ch;
    }
  }
  out.push_back(cur);
  return out;
}

std::string context_prefix(const MetricsRow& r) {
  return r.attack + ',' + r.variant + ',' + r.split + ',' + r.victim + ',' + std::to_string(r.seed) +
         ',' + std::to_string(r.update);
}

void ensure_parent(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
}

bool needs_header(const fs::path& path) {
  std::error_code ec;
  return !fs::exists(path, ec) || fs::file_size(path, ec) == 0;
}

}  // namespace

std::string format_row(const MetricsRow& r) {
  return context_prefix(r) + ',' + std::to_string(r.episodes) + ',' + fmt(r.asr) + ',' +
         (r.aq ? fmt(*r.aq) : "") + ',' + (r.l2 ? fmt(*r.l2) : "");
}

MetricsRow parse_row(const std::string& line) {
  const auto f = split_csv(line);
  if (f.size() != 10) throw IoError("results row has " + std::to_string(f.size()) + " fields: " + line);
  MetricsRow r;
  r.attack = f[0];
  r.variant = f[1];
  r.split = f[2];
  r.victim = f[3];
  r.seed = std::stoull(f[4]);
  r.update = std::stoi(f[5]);
  r.episodes = std::stoull(f[6]);
  r.asr = to_double(f[7]);
  if (!f[8].empty()) r.aq = to_double(f[8]);
  if (!f[9].empty()) r.l2 = to_double(f[9]);
  return r;
}

void write_results(const std::vector<MetricsRow>& rows, const fs::path& path) {
  ensure_parent(path);
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write results file " + path.string());
  out << kResultsHeader << '\n';
  for (const auto& r : rows) out << format_row(r) << '\n';
  if (!out) throw IoError("write failed for " + path.string());
}

void append_results(const std::vector<MetricsRow>& rows, const fs::path& path) {
  ensure_parent(path);
  const bool header = needs_header(path);
  std::ofstream out(path, std::ios::app);
  if (!out) throw IoError("cannot append to results file " + path.string());
  if (header) out << kResultsHeader << '\n';
  for (const auto& r : rows) out << format_row(r) << '\n';
  if (!out) throw IoError("append failed for " + path.string());
}

std::vector<MetricsRow> read_results(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open results file " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != kResultsHeader) {
    throw IoError(path.string() + ": missing or unexpected results header");
  }
  std::vector<MetricsRow> rows;
  while (std::getline(in, line)) {
    if (!line.empty()) rows.push_back(parse_row(line));
  }
  return rows;
}

void merge_results(const std::vector<fs::path>& parts, const fs::path& path) {
  std::vector<MetricsRow> rows;
  for (const auto& p : parts) {
    if (!fs::exists(p)) continue;
    auto part = read_results(p);
    rows.insert(rows.end(), part.begin(), part.end());
  }
  write_results(rows, path);
  for (const auto& p : parts) fs::remove(p);
}

void append_episodes(const std::vector<EpisodeLogRow>& rows, const fs::path& path) {
  ensure_parent(path);
  const bool header = needs_header(path);
  std::ofstream out(path, std::ios::app);
  if (!out) throw IoError("cannot append to episode log " + path.string());
  if (header) out << kEpisodesHeader << '\n';
  for (const auto& r : rows) {
    out << context_prefix(r.context) << ',' << r.episode << ',' << r.result.source_id << ','
        << int(r.result.success) << ',' << r.result.queries << ',' << fmt(r.result.l2) << '\n';
  }
  if (!out) throw IoError("append failed for " + path.string());
}

std::vector<EpisodeLogRow> read_episodes(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open episode log " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != kEpisodesHeader) {
    throw IoError(path.string() + ": missing or unexpected episode header");
  }
  std::vector<EpisodeLogRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto f = split_csv(line);
    if (f.size() != 11) throw IoError("episode row has wrong field count: " + line);
    EpisodeLogRow r;
    r.context.attack = f[0];
    r.context.variant = f[1];
    r.context.split = f[2];
    r.context.victim = f[3];
    r.context.seed = std::stoull(f[4]);
    r.context.update = std::stoi(f[5]);
    r.episode = std::stoull(f[6]);
    r.result.source_id = std::stoll(f[7]);
    r.result.success = f[8] == "1";
    r.result.queries = std::stoull(f[9]);
    r.result.l2 = to_double(f[10]);
    rows.push_back(r);
  }
  return rows;
}

// ------------------------------------------------------------------ config

void ExperimentConfig::validate() const {
  env.validate();
  ppo.validate();
  if (seeds.empty()) throw ConfigError("seeds list must be nonempty");
  if (eval_every < 1) throw ConfigError("eval_every must be >= 1");
  if (eval_episodes < 0) throw ConfigError("eval_episodes must be >= 0");
  if (workers < 1) throw ConfigError("workers must be >= 1");
  if (dataset.kind != "synthetic" && dataset.kind != "cifar10") {
    throw ConfigError("dataset must be synthetic or cifar10");
  }
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& v) {
  T out{};
  auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc() || res.ptr != v.data() + v.size()) {
    throw ConfigError("config key '" + key + "': cannot parse '" + v + "'");
  }
  return out;
}

using Setter = std::function<void(ExperimentConfig&, const std::string&, const std::string&)>;

template <typename T, typename Get>
Setter num(Get get) {
  return [get](ExperimentConfig& c, const std::string& k, const std::string& v) {
    get(c) = parse_number<T>(k, v);
  };
}

template <typename Get>
Setter str(Get get) {
  return [get](ExperimentConfig& c, const std::string&, const std::string& v) { get(c) = v; };
}

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = {
      {"variant", [](ExperimentConfig& c, const std::string&, const std::string& v) {
         try {
           c.env.variant = parse_variant(v);
         } catch (const InvalidParameter& e) {
           throw ConfigError(e.what());
         }
       }},
      {"eps", num<double>([](ExperimentConfig& c) -> double& { return c.env.eps; })},
      {"c", num<double>([](ExperimentConfig& c) -> double& { return c.env.c; })},
      {"num_pairs", num<int>([](ExperimentConfig& c) -> int& { return c.env.num_pairs; })},
      {"theta", num<double>([](ExperimentConfig& c) -> double& { return c.env.theta; })},
      {"t_max", num<int>([](ExperimentConfig& c) -> int& { return c.env.t_max; })},
      {"gamma", num<double>([](ExperimentConfig& c) -> double& { return c.ppo.gamma; })},
      {"gae_lambda", num<double>([](ExperimentConfig& c) -> double& { return c.ppo.gae_lambda; })},
      {"clip_range", num<double>([](ExperimentConfig& c) -> double& { return c.ppo.clip_range; })},
      {"learning_rate", num<double>([](ExperimentConfig& c) -> double& { return c.ppo.learning_rate; })},
      {"epochs", num<int>([](ExperimentConfig& c) -> int& { return c.ppo.epochs; })},
      {"minibatch", num<int>([](ExperimentConfig& c) -> int& { return c.ppo.minibatch; })},
      {"rollout_length", num<int>([](ExperimentConfig& c) -> int& { return c.ppo.rollout_length; })},
      {"total_updates", num<int>([](ExperimentConfig& c) -> int& { return c.ppo.total_updates; })},
      {"value_coef", num<double>([](ExperimentConfig& c) -> double& { return c.ppo.value_coef; })},
      {"entropy_coef", num<double>([](ExperimentConfig& c) -> double& { return c.ppo.entropy_coef; })},
      {"max_grad_norm", num<double>([](ExperimentConfig& c) -> double& { return c.ppo.max_grad_norm; })},
      {"anneal", [](ExperimentConfig& c, const std::string& k, const std::string& v) {
         c.ppo.anneal = parse_number<int>(k, v) != 0;
       }},
      {"policy_conv1", num<int>([](ExperimentConfig& c) -> int& { return c.policy.conv1; })},
      {"policy_conv2", num<int>([](ExperimentConfig& c) -> int& { return c.policy.conv2; })},
      {"policy_hidden1", num<int>([](ExperimentConfig& c) -> int& { return c.policy.hidden1; })},
      {"policy_hidden2", num<int>([](ExperimentConfig& c) -> int& { return c.policy.hidden2; })},
      {"init_log_std", num<double>([](ExperimentConfig& c) -> double& { return c.policy.init_log_std; })},
      {"victim_epochs", num<int>([](ExperimentConfig& c) -> int& { return c.victim_train.epochs; })},
      {"victim_lr", num<double>([](ExperimentConfig& c) -> double& { return c.victim_train.lr; })},
      {"victim_momentum", num<double>([](ExperimentConfig& c) -> double& { return c.victim_train.momentum; })},
      {"victim_weight_decay", num<double>([](ExperimentConfig& c) -> double& { return c.victim_train.weight_decay; })},
      {"victim_batch", num<int>([](ExperimentConfig& c) -> int& { return c.victim_train.batch_size; })},
      {"target_acc", num<double>([](ExperimentConfig& c) -> double& { return c.victim_train.target_acc; })},
      {"dataset", str([](ExperimentConfig& c) -> std::string& { return c.dataset.kind; })},
      {"classes", num<int>([](ExperimentConfig& c) -> int& { return c.dataset.synthetic.classes; })},
      {"side", num<int>([](ExperimentConfig& c) -> int& { return c.dataset.synthetic.side; })},
      {"channels", num<int>([](ExperimentConfig& c) -> int& { return c.dataset.synthetic.channels; })},
      {"per_class", num<int>([](ExperimentConfig& c) -> int& { return c.dataset.synthetic.per_class; })},
      {"noise", num<double>([](ExperimentConfig& c) -> double& { return c.dataset.synthetic.noise; })},
      {"blobs_per_class", num<int>([](ExperimentConfig& c) -> int& { return c.dataset.synthetic.blobs_per_class; })},
      {"blob_amplitude", num<double>([](ExperimentConfig& c) -> double& { return c.dataset.synthetic.blob_amplitude; })},
      {"blob_radius", num<double>([](ExperimentConfig& c) -> double& { return c.dataset.synthetic.blob_radius; })},
      {"test_per_class", num<int>([](ExperimentConfig& c) -> int& { return c.dataset.test_per_class; })},
      {"data_seed", num<std::uint64_t>([](ExperimentConfig& c) -> std::uint64_t& { return c.dataset.seed; })},
      {"cifar_dir", str([](ExperimentConfig& c) -> std::string& { return c.dataset.cifar_dir; })},
      {"seeds", [](ExperimentConfig& c, const std::string& k, const std::string& v) {
         c.seeds.clear();
         std::string item;
         std::istringstream in(v);
         while (std::getline(in, item, ',')) c.seeds.push_back(parse_number<std::uint64_t>(k, trim(item)));
       }},
      {"eval_every", num<int>([](ExperimentConfig& c) -> int& { return c.eval_every; })},
      {"eval_episodes", num<int>([](ExperimentConfig& c) -> int& { return c.eval_episodes; })},
      {"baseline_budget", num<std::uint64_t>([](ExperimentConfig& c) -> std::uint64_t& { return c.baseline_budget; })},
      {"victim_path", str([](ExperimentConfig& c) -> std::string& { return c.victim_path; })},
      {"victim_id", str([](ExperimentConfig& c) -> std::string& { return c.victim_id; })},
      {"out_dir", str([](ExperimentConfig& c) -> std::string& { return c.out_dir; })},
      {"workers", num<int>([](ExperimentConfig& c) -> int& { return c.workers; })},
  };
  return table;
}

}  // namespace

ExperimentConfig parse_config(const std::string& text, ExperimentConfig base) {
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(line_no) + ": expected key = value");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    const auto it = setters().find(key);
    if (it == setters().end()) {
      throw ConfigError("config line " + std::to_string(line_no) + ": unknown key '" + key + "'");
    }
    it->second(base, key, value);
  }
  return base;
}

ExperimentConfig load_config(const fs::path& path, ExperimentConfig base) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), std::move(base));
}

std::string config_to_text(const ExperimentConfig& c) {
  std::ostringstream os;
  os.precision(17);
  os << "variant = " << to_string(c.env.variant) << "\neps = " << c.env.eps << "\nc = " << c.env.c
     << "\nnum_pairs = " << c.env.num_pairs << "\ntheta = " << c.env.theta
     << "\nt_max = " << c.env.t_max << '\n';
  std::istringstream ppo(ppo_config_to_text(c.ppo));
  std::string line;
  while (std::getline(ppo, line)) {
    const auto eq = line.find('=');
    os << line.substr(0, eq) << " = " << line.substr(eq + 1) << '\n';
  }
  os << "policy_conv1 = " << c.policy.conv1 << "\npolicy_conv2 = " << c.policy.conv2
     << "\npolicy_hidden1 = " << c.policy.hidden1 << "\npolicy_hidden2 = " << c.policy.hidden2
     << "\ninit_log_std = " << c.policy.init_log_std << "\nvictim_epochs = " << c.victim_train.epochs
     << "\nvictim_lr = " << c.victim_train.lr << "\nvictim_momentum = " << c.victim_train.momentum
     << "\nvictim_weight_decay = " << c.victim_train.weight_decay
     << "\nvictim_batch = " << c.victim_train.batch_size << "\ntarget_acc = " << c.victim_train.target_acc
     << "\ndataset = " << c.dataset.kind << "\nclasses = " << c.dataset.synthetic.classes
     << "\nside = " << c.dataset.synthetic.side << "\nchannels = " << c.dataset.synthetic.channels
     << "\nper_class = " << c.dataset.synthetic.per_class << "\nnoise = " << c.dataset.synthetic.noise
     << "\nblobs_per_class = " << c.dataset.synthetic.blobs_per_class
     << "\nblob_amplitude = " << c.dataset.synthetic.blob_amplitude
     << "\nblob_radius = " << c.dataset.synthetic.blob_radius
     << "\ntest_per_class = " << c.dataset.test_per_class << "\ndata_seed = " << c.dataset.seed << '\n';
  if (!c.dataset.cifar_dir.empty()) os << "cifar_dir = " << c.dataset.cifar_dir << '\n';
  os << "seeds = ";
  for (std::size_t i = 0; i < c.seeds.size(); ++i) os << (i ? "," : "") << c.seeds[i];
  os << "\neval_every = " << c.eval_every << "\neval_episodes = " << c.eval_episodes
     << "\nbaseline_budget = " << c.baseline_budget << '\n';
  if (!c.victim_path.empty()) os << "victim_path = " << c.victim_path << '\n';
  os << "victim_id = " << c.victim_id << "\nout_dir = " << c.out_dir << "\nworkers = " << c.workers << '\n';
  return os.str();
}

// ------------------------------------------------------------------ pipeline

DatasetSplit prepare_data(const DatasetConfig& config) {
  DatasetSplit split;
  Dataset test;
  if (config.kind == "synthetic") {
    split.train = generate_synthetic(config.synthetic, config.seed, 0);
    SyntheticSpec test_spec = config.synthetic;
    test_spec.per_class = config.test_per_class;
    test = generate_synthetic(test_spec, config.seed, 1'000'000);
  } else if (config.kind == "cifar10") {
    if (config.cifar_dir.empty()) throw ConfigError("dataset cifar10 requires cifar_dir");
    const fs::path dir(config.cifar_dir);
    split.train = Dataset{kCifarShape, kCifarClasses, {}};
    for (int b = 1; b <= 5; ++b) {
      auto part = load_cifar10_file(dir / ("data_batch_" + std::to_string(b) + ".bin"),
                                    std::int64_t(b - 1) * 10000);
      split.train.samples.insert(split.train.samples.end(), part.samples.begin(), part.samples.end());
    }
    test = load_cifar10_file(dir / "test_batch.bin", 50000);
  } else {
    throw ConfigError("unknown dataset kind '" + config.kind + "'");
  }
  auto [d, d_prime] = partition(test, config.seed ^ 0x5eedULL);
  split.attack_train = std::move(d);
  split.attack_test = std::move(d_prime);
  return split;
}

VictimBundle prepare_victim(const ExperimentConfig& config, const DatasetSplit& data) {
  VictimBundle bundle;
  Dataset test = data.attack_train;
  test.samples.insert(test.samples.end(), data.attack_test.samples.begin(), data.attack_test.samples.end());
  if (!config.victim_path.empty() && fs::exists(config.victim_path)) {
    auto model = std::make_shared<Classifier>(Classifier::from_checkpoint(read_checkpoint(config.victim_path)));
    if (model->features() != data.train.shape.size() || model->classes() != data.train.classes) {
      throw ConfigError("victim checkpoint " + config.victim_path + " does not match the dataset");
    }
    bundle.train_acc = model->accuracy(data.train);
    bundle.test_acc = model->accuracy(test);
    bundle.model = std::move(model);
    return bundle;
  }
  RngStream rng(config.dataset.seed, 0x51c71a);
  VictimTrainResult trained = train_victim(data.train, test, default_victim_spec(data.train.shape, data.train.classes),
                                           config.victim_train, rng);
  if (!config.victim_path.empty()) write_checkpoint(config.victim_path, trained.params.to_checkpoint());
  bundle.train_acc = trained.train_acc;
  bundle.test_acc = trained.test_acc;
  bundle.model = std::make_shared<Classifier>(std::move(trained.params));
  return bundle;
}

EvalResult evaluate_policy(const Policy& policy, std::shared_ptr<const Classifier> victim,
                           const Dataset& split, const EnvConfig& env, int episode_count,
                           const RngStream& rng, MetricsRow context,
                           std::vector<TransitionRecord>* trace) {
  if (split.empty()) throw InvalidParameter("evaluate_policy: empty split");
  VictimOracle oracle(std::move(victim));
  RngStream picker = rng.split(0);
  const std::size_t count = episode_count == 0 ? split.size() : static_cast<std::size_t>(episode_count);
  EvalResult out;
  out.episodes.reserve(count);
  for (std::size_t e = 0; e < count; ++e) {
    const LabeledSample& sample =
        episode_count == 0 ? split.samples[e]
                           : split.samples[static_cast<std::size_t>(picker.uniform_int(std::int64_t(split.size())))];
    RngStream episode_rng = rng.split(e + 1);
    out.episodes.push_back(run_policy_episode(policy, env, sample, oracle, episode_rng, trace,
                                              static_cast<std::int64_t>(e)));
  }
  if (context.variant.empty()) context.variant = to_string(env.variant);
  if (context.attack.empty()) context.attack = "rl";
  out.row = aggregate(out.episodes, std::move(context));
  return out;
}

PolicyConfig make_policy_config(const ExperimentConfig& config, const Dataset& data) {
  PolicyConfig p = config.policy;
  p.shape = data.shape;
  p.classes = data.classes;
  p.num_pairs = config.env.num_pairs;
  p.theta = config.env.theta;
  return p;
}

TrainingRun train_agent(const ExperimentConfig& config, std::shared_ptr<const Classifier> victim,
                        const Dataset& attack_train, std::uint64_t seed, const TrainingLogs& logs,
                        const ProgressFn& progress) {
  config.env.validate();
  config.ppo.validate();
  RngStream root(seed, 0xa11);
  RngStream init_rng = root.split(1);
  RngStream update_rng = root.split(3);
  const RngStream eval_rng = root.split(4);
  TrainingRun run{seed, {}, {}, Policy(make_policy_config(config, attack_train), init_rng)};
  nn::Adam optimizer(config.ppo.learning_rate);
  RolloutCollector collector(config.env, victim, attack_train, root.split(2));
  TransitionBuffer buffer;

  MetricsRow context;
  context.attack = "rl";
  context.variant = to_string(config.env.variant);
  context.split = "D";
  context.victim = config.victim_id;
  context.seed = seed;
  auto log_episodes = [&](const std::vector<EpisodeResult>& episodes, const std::string& split,
                          int update) {
    if (logs.episodes_csv.empty()) return;
    MetricsRow tag = context;
    tag.split = split;
    tag.update = update;
    std::vector<EpisodeLogRow> rows;
    rows.reserve(episodes.size());
    for (std::size_t i = 0; i < episodes.size(); ++i) rows.push_back({tag, i, episodes[i]});
    append_episodes(rows, logs.episodes_csv);
  };
  auto evaluate_at = [&](int update) {
    context.update = update;
    // Same evaluation stream at every point: identical start samples.
    EvalResult r = evaluate_policy(run.policy, victim, attack_train, config.env, config.eval_episodes,
                                   eval_rng, context);
    run.curve.push_back(r.row);
    if (!logs.curve_csv.empty()) append_results({r.row}, logs.curve_csv);
    log_episodes(r.episodes, "D", update);
    if (progress) {
      progress("seed " + std::to_string(seed) + " update " + std::to_string(update) + ": asr " +
               fmt(r.row.asr) + " aq " + (r.row.aq ? fmt(*r.row.aq) : "-") + " l2 " +
               (r.row.l2 ? fmt(*r.row.l2) : "-"));
    }
  };

  evaluate_at(0);
  const int total = config.ppo.total_updates;
  std::vector<EpisodeResult> finished;
  for (int u = 0; u < total; ++u) {
    const AnnealPoint schedule = anneal(u, config.ppo);
    finished.clear();
    collector.collect(run.policy, buffer, config.ppo.rollout_length, &finished);
    log_episodes(finished, "rollout", u);
    run.updates.push_back(ppo_update(run.policy, optimizer, buffer, config.ppo, schedule.learning_rate,
                                     schedule.clip_range, update_rng));
    if ((u + 1) % config.eval_every == 0 || u + 1 == total) evaluate_at(u + 1);
  }
  return run;
}

std::vector<TrainingRun> run_training(const ExperimentConfig& config,
                                      std::shared_ptr<const Classifier> victim,
                                      const DatasetSplit& data, const ProgressFn& progress) {
  config.validate();
  std::vector<TrainingRun> runs;
  const TrainingLogs logs{fs::path(config.out_dir) / "training.csv",
                          fs::path(config.out_dir) / "episodes.csv"};
  write_results({}, logs.curve_csv);
  std::error_code ec;
  fs::remove(logs.episodes_csv, ec);
  for (std::uint64_t seed : config.seeds) {
    runs.push_back(train_agent(config, victim, data.attack_train, seed, logs, progress));
  }
  return runs;
}

void run_parallel(std::vector<std::function<void()>> jobs, int workers) {
  if (workers <= 1 || jobs.size() <= 1) {
    for (auto& job : jobs) job();
    return;
  }
  std::mutex mutex;
  std::size_t next = 0;
  std::exception_ptr error;
  auto worker = [&] {
    for (;;) {
      std::size_t i;
      {
        std::lock_guard lock(mutex);
        if (next >= jobs.size() || error) return;
        i = next++;
      }
      try {
        jobs[i]();
      } catch (...) {
        std::lock_guard lock(mutex);
        if (!error) error = std::current_exception();
      }
    }
  };
  std::vector<std::thread> threads;
  for (int w = 0; w < std::min<int>(workers, static_cast<int>(jobs.size())); ++w) threads.emplace_back(worker);
  for (auto& t : threads) t.join();
  if (error) std::rethrow_exception(error);
}

namespace {

double median_success_queries(const std::vector<EpisodeResult>& episodes) {
  std::vector<double> q;
  for (const auto& e : episodes) {
    if (e.success) q.push_back(static_cast<double>(e.queries));
  }
  if (q.empty()) return 0.0;
  std::sort(q.begin(), q.end());
  const std::size_t mid = q.size() / 2;
  return q.size() % 2 ? q[mid] : 0.5 * (q[mid - 1] + q[mid]);
}

// Sweep rows share the results header, so the cell parameters go into the
// attack field (no commas).
std::string cell_label(const std::string& name, const SweepCell& cell) {
  if (name == "sweep_eps") return "rl[eps=" + fmt(cell.eps) + "]";
  if (name == "sweep_c") return "rl[c=" + fmt(cell.c) + "]";
  return "rl[N=" + std::to_string(cell.num_pairs) + ";theta=" + fmt(cell.theta) + "]";
}

std::vector<SweepCell> run_cells(const ExperimentConfig& base, std::vector<SweepCell> cells,
                                 Variant variant, const std::string& name,
                                 std::shared_ptr<const Classifier> victim, const DatasetSplit& data,
                                 const ProgressFn& progress) {
  base.validate();
  std::mutex progress_mutex;
  ProgressFn safe_progress;
  if (progress) {
    safe_progress = [&](const std::string& msg) {
      std::lock_guard lock(progress_mutex);
      progress(msg);
    };
  }
  const fs::path out_dir(base.out_dir);
  std::vector<fs::path> parts;
  std::vector<std::function<void()>> jobs;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    parts.push_back(out_dir / (".part-" + name + "-" + std::to_string(i) + ".csv"));
    jobs.push_back([&, i] {
      SweepCell& cell = cells[i];
      ExperimentConfig cfg = base;
      cfg.env.variant = variant;
      cfg.env.eps = cell.eps;
      cfg.env.c = cell.c;
      cfg.env.num_pairs = cell.num_pairs;
      cfg.env.theta = cell.theta;
      TrainingRun run = train_agent(cfg, victim, data.attack_train, cell.seed, {}, safe_progress);
      MetricsRow context = run.curve.back();
      context.attack = cell_label(name, cell);
      EvalResult eval = evaluate_policy(run.policy, victim, data.attack_train, cfg.env, 0,
                                        RngStream(cell.seed, 0xe7a1), context);
      cell.row = eval.row;
      cell.median_queries = median_success_queries(eval.episodes);
      cell.policy = std::make_shared<const Policy>(std::move(run.policy));
      write_results({cell.row}, parts[i]);
    });
  }
  run_parallel(std::move(jobs), base.workers);
  merge_results(parts, out_dir / (name + ".csv"));
  return cells;
}

}  // namespace

std::vector<SweepCell> sweep_epsilon(const ExperimentConfig& base, const std::vector<double>& eps_list,
                                     std::shared_ptr<const Classifier> victim, const DatasetSplit& data,
                                     const ProgressFn& progress) {
  std::vector<SweepCell> cells;
  for (double eps : eps_list) {
    if (!(eps > 0)) throw InvalidParameter("sweep_epsilon: eps values must be > 0");
    for (std::uint64_t seed : base.seeds) {
      cells.push_back({eps, base.env.c, base.env.num_pairs, base.env.theta, seed, {}, 0.0, nullptr});
    }
  }
  return run_cells(base, std::move(cells), Variant::MaxLoss, "sweep_eps", std::move(victim), data, progress);
}

std::vector<SweepCell> sweep_c(const ExperimentConfig& base, const std::vector<double>& c_list,
                               std::shared_ptr<const Classifier> victim, const DatasetSplit& data,
                               const ProgressFn& progress) {
  std::vector<SweepCell> cells;
  for (double c : c_list) {
    if (!(c > 0)) throw InvalidParameter("sweep_c: c values must be > 0");
    for (std::uint64_t seed : base.seeds) {
      cells.push_back({base.env.eps, c, base.env.num_pairs, base.env.theta, seed, {}, 0.0, nullptr});
    }
  }
  return run_cells(base, std::move(cells), Variant::MinNorm, "sweep_c", std::move(victim), data, progress);
}

std::vector<SweepCell> sweep_action_space(const ExperimentConfig& base, const std::vector<int>& n_list,
                                          const std::vector<double>& theta_list,
                                          std::shared_ptr<const Classifier> victim,
                                          const DatasetSplit& data, const ProgressFn& progress) {
  std::vector<SweepCell> cells;
  for (int n : n_list) {
    if (n < 1) throw InvalidParameter("sweep_action_space: N must be >= 1");
    for (double theta : theta_list) {
      if (!(theta > 0 && theta < 1)) throw InvalidParameter("sweep_action_space: theta must lie in (0, 1)");
      for (std::uint64_t seed : base.seeds) {
        cells.push_back({base.env.eps, base.env.c, n, theta, seed, {}, 0.0, nullptr});
      }
    }
  }
  cells = run_cells(base, std::move(cells), base.env.variant, "sweep_action", std::move(victim), data,
                    progress);
  const fs::path grid = fs::path(base.out_dir) / "sweep_action_grid.csv";
  std::ofstream out(grid);
  if (!out) throw IoError("cannot write " + grid.string());
  out << "N,theta,seed,asr,median_queries,l2\n";
  for (const auto& c : cells) {
    out << c.num_pairs << ',' << fmt(c.theta) << ',' << c.seed << ',' << fmt(c.row.asr) << ','
        << fmt(c.median_queries) << ',' << (c.row.l2 ? fmt(*c.row.l2) : "") << '\n';
  }
  if (!out) throw IoError("write failed for " + grid.string());
  return cells;
}

std::vector<SweepSummary> summarize_by(const std::vector<SweepCell>& cells, bool by_c) {
  std::vector<SweepSummary> out;
  for (const auto& cell : cells) {
    const double param = by_c ? cell.c : cell.eps;
    auto it = std::find_if(out.begin(), out.end(), [&](const SweepSummary& s) { return s.param == param; });
    if (it == out.end()) {
      out.push_back({param, 0.0, std::nullopt, {}, {}});
      it = std::prev(out.end());
    }
    it->asr_per_seed.push_back(cell.row.asr);
    if (cell.row.l2) it->l2_per_seed.push_back(*cell.row.l2);
  }
  for (auto& s : out) {
    double sum = 0.0;
    for (double a : s.asr_per_seed) sum += a;
    s.mean_asr = sum / double(s.asr_per_seed.size());
    if (!s.l2_per_seed.empty()) {
      double l2 = 0.0;
      for (double v : s.l2_per_seed) l2 += v;
      s.mean_l2 = l2 / double(s.l2_per_seed.size());
    }
  }
  return out;
}

double zero_budget_asr(const Classifier& victim, const Dataset& split) {
  return 1.0 - victim.accuracy(split);
}

EvalResult evaluate_random_search(std::shared_ptr<const Classifier> victim, const Dataset& split,
                                  const EnvConfig& env, std::uint64_t budget, const RngStream& rng,
                                  MetricsRow context) {
  VictimOracle oracle(std::move(victim));
  EvalResult out;
  for (std::size_t i = 0; i < split.size(); ++i) {
    RngStream r = rng.split(i);
    const auto res = random_search_attack(oracle, split.samples[i], env.eps, env.num_pairs, env.theta,
                                          budget, r);
    out.episodes.push_back({split.samples[i].source_id, res.success, res.queries, res.distortion, 0, 0.0});
  }
  context.attack = "random_search";
  if (context.variant.empty()) context.variant = "maxloss";
  out.row = aggregate(out.episodes, std::move(context));
  return out;
}

EvalResult evaluate_square(std::shared_ptr<const Classifier> victim, const Dataset& split, double eps,
                           std::uint64_t budget, const RngStream& rng, MetricsRow context,
                           double* max_distortion) {
  VictimOracle oracle(std::move(victim));
  EvalResult out;
  double worst = 0.0;
  for (std::size_t i = 0; i < split.size(); ++i) {
    RngStream r = rng.split(i);
    const auto res = square_attack_l2(oracle, split.samples[i], split.shape, eps, budget, r);
    worst = std::max(worst, res.distortion);
    out.episodes.push_back({split.samples[i].source_id, res.success, res.queries, res.distortion, 0, 0.0});
  }
  if (max_distortion) *max_distortion = worst;
  context.attack = "square";
  if (context.variant.empty()) context.variant = "maxloss";
  out.row = aggregate(out.episodes, std::move(context));
  return out;
}

std::vector<MetricsRow> compare_attacks(const ExperimentConfig& config, const CompareInputs& inputs,
                                        std::shared_ptr<const Classifier> victim,
                                        const DatasetSplit& data, const ProgressFn& progress) {
  if (inputs.agents.empty()) throw InvalidParameter("compare_attacks: no trained agents supplied");
  std::vector<MetricsRow> rows;
  MetricsRow context;
  context.victim = config.victim_id;
  context.seed = inputs.seed;
  context.update = config.ppo.total_updates;
  const RngStream rng(inputs.seed, 0xc0de);
  for (const auto& [env, policy] : inputs.agents) {
    if (policy == nullptr) throw InvalidParameter("compare_attacks: missing policy");
    for (const auto& [name, split] : {std::pair<std::string, const Dataset*>{"D", &data.attack_train},
                                      {"D'", &data.attack_test}}) {
      MetricsRow ctx = context;
      ctx.split = name;
      rows.push_back(evaluate_policy(*policy, victim, *split, env, 0, rng.split(rows.size()), ctx).row);
      if (progress) progress(format_row(rows.back()));
    }
  }
  // Baselines attack D' only, with the Max Loss budget of the first Max Loss agent.
  EnvConfig env = config.env;
  for (const auto& [e, p] : inputs.agents) {
    if (e.variant == Variant::MaxLoss) {
      env = e;
      break;
    }
  }
  MetricsRow ctx = context;
  ctx.split = "D'";
  ctx.update = 0;
  rows.push_back(evaluate_random_search(victim, data.attack_test, env,
                                        static_cast<std::uint64_t>(env.t_max) + 1, rng.split(100), ctx).row);
  if (progress) progress(format_row(rows.back()));
  rows.push_back(evaluate_square(victim, data.attack_test, env.eps, config.baseline_budget, rng.split(101), ctx).row);
  if (progress) progress(format_row(rows.back()));
  return rows;
}

}  // namespace advrl
