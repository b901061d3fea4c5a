// Command-line front end for the attack harness.
//
// Exit codes: 0 success, 1 trace verification found violations, 2 config
// error, 3 training failure, 4 I/O error.

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "advrl/errors.hpp"
#include "advrl/harness.hpp"

namespace fs = std::filesystem;
using namespace advrl;

namespace {

struct CommonOptions {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string dataset;
  std::string variant;
};

void add_common(CLI::App* cmd, CommonOptions& o) {
  cmd->add_option("--config", o.config_path, "Flat key = value experiment config");
  cmd->add_option("--seed", o.seed, "Run a single seed instead of the config seed list");
  cmd->add_option("--out", o.out, "Output directory");
  cmd->add_option("--dataset", o.dataset, "synthetic or cifar10");
  cmd->add_option("--variant", o.variant, "maxloss or minnorm");
}

ExperimentConfig resolve(const CommonOptions& o) {
  ExperimentConfig cfg = o.config_path.empty() ? ExperimentConfig{} : load_config(o.config_path);
  if (o.seed) cfg.seeds = {*o.seed};
  if (!o.out.empty()) cfg.out_dir = o.out;
  if (!o.dataset.empty()) cfg = parse_config("dataset = " + o.dataset, cfg);
  if (!o.variant.empty()) cfg = parse_config("variant = " + o.variant, cfg);
  if (cfg.victim_path.empty()) cfg.victim_path = (fs::path(cfg.out_dir) / "victim.bin").string();
  cfg.validate();
  return cfg;
}

void log_line(const std::string& s) { std::cerr << s << '\n'; }

fs::path policy_path(const ExperimentConfig& cfg, std::uint64_t seed) {
  return fs::path(cfg.out_dir) / ("policy_" + to_string(cfg.env.variant) + "_seed" + std::to_string(seed) + ".bin");
}

Policy load_policy(const fs::path& path) { return Policy::from_checkpoint(read_checkpoint(path)); }

std::vector<double> parse_doubles(const std::string& list) {
  std::vector<double> out;
  for (const auto& item : CLI::detail::split(list, ',')) {
    try {
      out.push_back(std::stod(item));
    } catch (const std::exception&) {
      throw ConfigError("not a number list: " + list);
    }
  }
  if (out.empty()) throw ConfigError("empty value list");
  return out;
}

void print_rows(const std::vector<MetricsRow>& rows) {
  std::cout << kResultsHeader << '\n';
  for (const auto& r : rows) std::cout << format_row(r) << '\n';
}

void print_cells(const std::vector<SweepCell>& cells) {
  std::vector<MetricsRow> rows;
  for (const auto& c : cells) rows.push_back(c.row);
  print_rows(rows);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Reinforcement-learning black-box adversarial attacks"};
  app.require_subcommand(1);

  CommonOptions common;
  auto* train_victim_cmd = app.add_subcommand("train-victim", "Train (or load) the victim classifier");
  add_common(train_victim_cmd, common);

  auto* attack_train = app.add_subcommand("attack-train", "Train attack agents for every seed");
  add_common(attack_train, common);

  std::string policy_file, split_name = "D", trace_file;
  int episodes = -1;
  auto* eval = app.add_subcommand("eval", "Evaluate a trained agent on D or D'");
  add_common(eval, common);
  eval->add_option("--policy", policy_file, "Policy checkpoint")->required();
  eval->add_option("--split", split_name, "D or D'")->check(CLI::IsMember({"D", "D'"}));
  eval->add_option("--episodes", episodes, "Episode count (0 = every sample once)");
  eval->add_option("--trace", trace_file, "Write the transition log to this CSV");

  std::string eps_list = "0.1,0.3,0.5";
  auto* sweep_eps = app.add_subcommand("sweep-eps", "Max Loss ASR across epsilon");
  add_common(sweep_eps, common);
  sweep_eps->add_option("--values", eps_list, "Comma-separated epsilon grid");

  std::string c_list = "0.001,0.01,0.1";
  auto* sweep_c_cmd = app.add_subcommand("sweep-c", "Min Norm ASR and distortion across c");
  add_common(sweep_c_cmd, common);
  sweep_c_cmd->add_option("--values", c_list, "Comma-separated c grid");

  std::string n_list = "1,5,10", theta_list = "0.01,0.05,0.1";
  auto* sweep_action = app.add_subcommand("sweep-action", "Factorial (N, theta) sweep");
  add_common(sweep_action, common);
  sweep_action->add_option("--n-values", n_list, "Comma-separated N grid");
  sweep_action->add_option("--theta-values", theta_list, "Comma-separated theta grid");

  std::string maxloss_policy, minnorm_policy;
  auto* compare = app.add_subcommand("compare", "RL agents on D and D', baselines on D'");
  add_common(compare, common);
  compare->add_option("--maxloss-policy", maxloss_policy, "Max Loss policy checkpoint");
  compare->add_option("--minnorm-policy", minnorm_policy, "Min Norm policy checkpoint");

  std::vector<std::string> trace_files;
  auto* verify = app.add_subcommand("verify-traces", "Replay environment invariants over transition logs");
  verify->add_option("traces", trace_files, "Transition CSV files")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (verify->parsed()) {
      bool ok = true;
      for (const auto& f : trace_files) {
        const TraceReport report = verify_traces(read_trajectory(f));
        std::cout << f << ": " << report.transitions << " transitions, " << report.episodes
                  << " episodes, " << report.violations.size() << " violations\n";
        for (const auto& v : report.violations) std::cout << "  " << v << '\n';
        ok = ok && report.ok();
      }
      return ok ? 0 : 1;
    }

    const ExperimentConfig cfg = resolve(common);
    fs::create_directories(cfg.out_dir);
    const DatasetSplit data = prepare_data(cfg.dataset);
    const VictimBundle victim = prepare_victim(cfg, data);
    log_line("victim " + cfg.victim_path + " train_acc " + std::to_string(victim.train_acc) +
             " test_acc " + std::to_string(victim.test_acc));

    if (train_victim_cmd->parsed()) {
      std::cout << "train_acc," << victim.train_acc << "\ntest_acc," << victim.test_acc << '\n';
    } else if (attack_train->parsed()) {
      const auto runs = run_training(cfg, victim.model, data, log_line);
      for (const auto& run : runs) {
        write_checkpoint(policy_path(cfg, run.seed), run.policy.to_checkpoint(ppo_config_to_text(cfg.ppo)));
      }
      std::vector<MetricsRow> rows;
      for (const auto& run : runs) rows.insert(rows.end(), run.curve.begin(), run.curve.end());
      print_rows(rows);
    } else if (eval->parsed()) {
      const Policy policy = load_policy(policy_file);
      const Dataset& split = split_name == "D" ? data.attack_train : data.attack_test;
      MetricsRow context;
      context.split = split_name;
      context.victim = cfg.victim_id;
      context.seed = cfg.seeds.front();
      std::vector<TransitionRecord> trace;
      const EvalResult r =
          evaluate_policy(policy, victim.model, split, cfg.env, episodes < 0 ? cfg.eval_episodes : episodes,
                          RngStream(cfg.seeds.front(), 0xe7a1), context, trace_file.empty() ? nullptr : &trace);
      if (!trace_file.empty()) write_trajectory(trace_file, trace);
      write_results({r.row}, fs::path(cfg.out_dir) / "eval.csv");
      print_rows({r.row});
    } else if (sweep_eps->parsed()) {
      print_cells(sweep_epsilon(cfg, parse_doubles(eps_list), victim.model, data, log_line));
    } else if (sweep_c_cmd->parsed()) {
      print_cells(sweep_c(cfg, parse_doubles(c_list), victim.model, data, log_line));
    } else if (sweep_action->parsed()) {
      std::vector<int> ns;
      for (double v : parse_doubles(n_list)) ns.push_back(static_cast<int>(v));
      print_cells(sweep_action_space(cfg, ns, parse_doubles(theta_list), victim.model, data, log_line));
    } else if (compare->parsed()) {
      if (maxloss_policy.empty() && minnorm_policy.empty()) {
        throw ConfigError("compare needs --maxloss-policy and/or --minnorm-policy");
      }
      std::vector<Policy> policies;
      std::vector<EnvConfig> envs;
      for (const auto& [file, variant] : {std::pair{maxloss_policy, "maxloss"}, {minnorm_policy, "minnorm"}}) {
        if (file.empty()) continue;
        policies.push_back(load_policy(file));
        envs.push_back(parse_config(std::string("variant = ") + variant, cfg).env);
      }
      CompareInputs inputs;
      inputs.seed = cfg.seeds.front();
      for (std::size_t i = 0; i < policies.size(); ++i) inputs.agents.push_back({envs[i], &policies[i]});
      const auto rows = compare_attacks(cfg, inputs, victim.model, data, log_line);
      write_results(rows, fs::path(cfg.out_dir) / "compare.csv");
      print_rows(rows);
    }
    return 0;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const InvalidParameter& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const TrainingFailed& e) {
    std::cerr << "training failed: " << e.what() << " (accuracy " << e.achieved_accuracy << ")\n";
    return 3;
  } catch (const IoError& e) {
    std::cerr << "I/O error: " << e.what() << '\n';
    return 4;
  } catch (const MalformedFile& e) {
    std::cerr << "I/O error: " << e.what() << '\n';
    return 4;
  } catch (const CorruptRecord& e) {
    std::cerr << "I/O error: " << e.what() << '\n';
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
