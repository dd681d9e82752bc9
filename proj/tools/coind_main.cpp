#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "coind/experiment.hpp"

namespace fs = std::filesystem;
using namespace coind;

namespace {

struct CommonOpts {
  std::string preset;
  std::string config_path;
  std::uint64_t seed = 0;
  bool seed_set = false;
  std::string out_dir;
};

void add_common(CLI::App* cmd, CommonOpts& opts) {
  cmd->add_option("--preset", opts.preset, "built-in preset name (see `coind presets`)");
  cmd->add_option("--config", opts.config_path, "experiment config JSON file");
  cmd->add_option("--seed", opts.seed, "override the master seed")->each([&](const std::string&) {
    opts.seed_set = true;
  });
  cmd->add_option("--out", opts.out_dir, "override the output directory");
}

ExperimentConfig resolve_config(const CommonOpts& opts) {
  ExperimentConfig cfg;
  if (!opts.config_path.empty()) {
    std::ifstream f(opts.config_path);
    if (!f) throw IoError("cannot open config: " + opts.config_path);
    std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    cfg = experiment_from_json(text);
  } else if (!opts.preset.empty()) {
    cfg = make_preset(opts.preset);
  } else {
    throw ConfigError("either --preset or --config is required");
  }
  if (opts.seed_set) cfg.seed = opts.seed;
  if (!opts.out_dir.empty()) cfg.output_dir = opts.out_dir;
  return cfg;
}

void print_parse_error(const std::string& expr, const ParseError& e) {
  std::cerr << "parse error: " << e.what() << "\n  " << expr << "\n  ";
  for (int i = 0; i < e.position; ++i) std::cerr << ' ';
  std::cerr << "^\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"coind: compositional diffusion on analytic blob worlds"};
  app.require_subcommand(1);

  CommonOpts gen_opts, train_opts, sample_opts, eval_opts, report_opts, runall_opts;

  auto* presets_cmd = app.add_subcommand("presets", "list built-in presets");

  auto* gen = app.add_subcommand("gen-data", "generate dataset files");
  add_common(gen, gen_opts);

  auto* train = app.add_subcommand("train", "train a model on the generated dataset");
  add_common(train, train_opts);
  std::string objective_name = "coind";
  double lambda = -1.0;
  std::string run_label;
  bool resume = false;
  train->add_option("--objective", objective_name, "vanilla | coind | theoretical_bound");
  train->add_option("--lambda", lambda, "CI strength (defaults to the config value)");
  train->add_option("--label", run_label, "run directory label (defaults to the objective)");
  train->add_flag("--resume", resume, "not supported");

  auto* sample = app.add_subcommand("sample", "sample a logical expression from a checkpoint");
  add_common(sample, sample_opts);
  std::string checkpoint, expression, out_csv = "samples.csv", plan_path;
  int count = 1000;
  sample->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
  sample->add_option("--expr", expression, "expression, e.g. 'c1=4 & !(c2=2 | c2=3)'")->required();
  sample->add_option("--count", count, "number of samples");
  sample->add_option("--out-csv", out_csv, "output CSV path");
  sample->add_option("--dump-plan", plan_path, "also write the compiled plan JSON here");

  auto* eval = app.add_subcommand("eval", "evaluate a trained run");
  add_common(eval, eval_opts);
  std::string eval_run = "coind";
  std::vector<std::string> tasks = {"and", "not", "joint"};
  eval->add_option("--run", eval_run, "run label to evaluate");
  eval->add_option("--tasks", tasks, "tasks: and not joint")->delimiter(',');

  auto* report = app.add_subcommand("report", "render reports from per-run eval JSON files");
  add_common(report, report_opts);

  auto* runall = app.add_subcommand("run-all", "gen-data + train vanilla/coind + eval + report");
  add_common(runall, runall_opts);
  bool all_presets = false;
  runall->add_flag("--all-presets", all_presets, "run every shipped preset end-to-end");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (presets_cmd->parsed()) {
      for (const auto& name : preset_names()) std::cout << name << "\n";
      return 0;
    }
    if (gen->parsed()) {
      ExperimentConfig cfg = resolve_config(gen_opts);
      cmd_gen_data(cfg);
      std::cout << "dataset written to " << cfg.data_dir() << "\n";
      return 0;
    }
    if (train->parsed()) {
      if (resume) throw ConfigError("--resume is not supported; training always starts fresh");
      ExperimentConfig cfg = resolve_config(train_opts);
      const Objective objective = objective_from_string(objective_name);
      if (lambda < 0.0) lambda = objective == Objective::Vanilla ? 0.0 : cfg.training.lambda;
      if (run_label.empty()) run_label = to_string(objective);
      auto history = cmd_train(cfg, run_label, objective, lambda);
      const auto& last = history.back();
      std::cout << "trained " << run_label << ": final score_loss=" << last.losses.score_loss
                << " ci_loss=" << last.losses.ci_loss << "\n"
                << "checkpoint: " << cfg.run_dir(run_label) << "/checkpoint.bin\n";
      return 0;
    }
    if (sample->parsed()) {
      ExperimentConfig cfg = resolve_config(sample_opts);
      try {
        cmd_sample(cfg, checkpoint, expression, count, out_csv, plan_path);
      } catch (const ParseError& e) {
        print_parse_error(expression, e);
        return 2;
      }
      std::cout << "samples written to " << out_csv << "\n";
      return 0;
    }
    if (eval->parsed()) {
      ExperimentConfig cfg = resolve_config(eval_opts);
      EvalReport r = cmd_eval(cfg, eval_run, tasks);
      fs::create_directories(cfg.eval_dir());
      std::ofstream(cfg.eval_dir() + "/run_" + eval_run + ".json") << eval_report_to_json(r) << "\n";
      std::cout << "run=" << r.run_label << " jsd=" << r.jsd;
      for (const auto& [task, cs] : r.cs) std::cout << " cs_" << task << "=" << cs;
      std::cout << " H=" << r.entropy_bits << "\n";
      return 0;
    }
    if (report->parsed()) {
      ExperimentConfig cfg = resolve_config(report_opts);
      std::vector<EvalReport> reports;
      for (const auto& entry : fs::directory_iterator(cfg.eval_dir())) {
        const std::string name = entry.path().filename().string();
        if (name.rfind("run_", 0) == 0 && entry.path().extension() == ".json") {
          std::ifstream f(entry.path());
          std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
          reports.push_back(eval_report_from_json(text));
        }
      }
      if (reports.empty()) throw IoError("no run_*.json eval files under " + cfg.eval_dir());
      cmd_report(cfg, reports);
      std::cout << "report written to " << cfg.eval_dir() << "\n";
      return 0;
    }
    if (runall->parsed()) {
      std::vector<ExperimentConfig> configs;
      if (all_presets) {
        for (const auto& name : preset_names()) {
          ExperimentConfig cfg = make_preset(name);
          if (runall_opts.seed_set) cfg.seed = runall_opts.seed;
          if (!runall_opts.out_dir.empty()) cfg.output_dir = runall_opts.out_dir;
          configs.push_back(std::move(cfg));
        }
      } else {
        configs.push_back(resolve_config(runall_opts));
      }
      for (const ExperimentConfig& cfg : configs) {
        std::cout << "== " << cfg.name << " ==\n";
        auto reports = run_all(cfg);
        for (const auto& r : reports) {
          std::cout << r.run_label << ": jsd=" << r.jsd;
          for (const auto& [task, cs] : r.cs) std::cout << " cs_" << task << "=" << cs;
          std::cout << "\n";
        }
        std::cout << "artifacts under " << cfg.output_dir << "/" << cfg.name << "\n";
      }
      return 0;
    }
  } catch (const ParseError& e) {
    std::cerr << "parse error at position " << e.position << ": " << e.what() << "\n";
    return 2;
  } catch (const UnsupportedFragmentError& e) {
    std::cerr << "unsupported expression: " << e.what() << "\n";
    return 2;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const ConstraintError& e) {
    std::cerr << "constraint violation: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
