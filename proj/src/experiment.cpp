#include "coind/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include <nlohmann/json.hpp>

namespace coind {

namespace fs = std::filesystem;

ScoreModelConfig ExperimentConfig::model_config() const {
  ScoreModelConfig mc;
  mc.cardinalities = cardinalities;
  mc.x_dim = static_cast<int>(cardinalities.size());
  mc.hidden_width = hidden_width;
  mc.hidden_layers = hidden_layers;
  mc.time_features = time_features;
  mc.embed_dim = embed_dim;
  return mc;
}

namespace {

nlohmann::json params_to_json(const SupportParams& p) {
  nlohmann::json j = nlohmann::json::object();
  if (p.a) j["a"] = *p.a;
  if (p.b) j["b"] = *p.b;
  if (!p.mu.empty()) j["mu"] = p.mu;
  if (p.s != 1.0) j["s"] = p.s;
  if (!p.cells.empty()) {
    nlohmann::json cells = nlohmann::json::array();
    for (const auto& [c, prob] : p.cells) cells.push_back({c, prob});
    j["cells"] = cells;
  }
  return j;
}

SupportParams params_from_json(const nlohmann::json& j) {
  SupportParams p;
  for (const auto& [key, value] : j.items()) {
    if (key == "a") p.a = value.get<double>();
    else if (key == "b") p.b = value.get<double>();
    else if (key == "mu") p.mu = value.get<std::vector<double>>();
    else if (key == "s") p.s = value.get<double>();
    else if (key == "cells") {
      for (const auto& cell : value)
        p.cells.emplace_back(cell.at(0).get<Composition>(), cell.at(1).get<double>());
    } else {
      throw ConfigError("unknown support param: " + key);
    }
  }
  return p;
}

}  // namespace

std::string experiment_to_json(const ExperimentConfig& c) {
  nlohmann::json j;
  j["name"] = c.name;
  j["world"] = {{"cardinalities", c.cardinalities}, {"sigma", c.sigma}};
  j["support"] = {{"kind", to_string(c.support_kind)}, {"params", params_to_json(c.support_params)}};
  j["data"] = {{"train_count", c.train_count}, {"test_count", c.test_count}};
  j["schedule"] = {{"T", c.T}, {"beta_start", c.beta_start}, {"beta_end", c.beta_end}};
  j["model"] = {{"hidden_width", c.hidden_width},
                {"hidden_layers", c.hidden_layers},
                {"time_features", c.time_features},
                {"embed_dim", c.embed_dim}};
  j["training"] = nlohmann::json::parse(training_config_to_json(c.training));
  j["sampler"] = {{"method", c.sampler_method},
                  {"steps", c.sampler_steps},
                  {"langevin_steps_per_level", c.langevin_steps_per_level},
                  {"langevin_eta", c.langevin_eta},
                  {"count", c.sample_count}};
  j["diagnostics"] = {{"timestep_count", c.classifier_cfg.timestep_count},
                      {"band_lo", c.classifier_cfg.band_lo},
                      {"band_hi", c.classifier_cfg.band_hi},
                      {"noise_draws_per_t", c.classifier_cfg.noise_draws_per_t},
                      {"jsd_eval_count", c.jsd_eval_count},
                      {"cs_samples_per_relation", c.cs_samples_per_relation},
                      {"cs_max_relations", c.cs_max_relations}};
  j["output_dir"] = c.output_dir;
  j["seed"] = c.seed;
  return j.dump(2);
}

ExperimentConfig experiment_from_json(const std::string& text) {
  nlohmann::json j = nlohmann::json::parse(text);
  ExperimentConfig c;
  for (const auto& [key, value] : j.items()) {
    if (key == "name") c.name = value.get<std::string>();
    else if (key == "world") {
      c.cardinalities = value.at("cardinalities").get<std::vector<int>>();
      c.sigma = value.at("sigma").get<double>();
    } else if (key == "support") {
      c.support_kind = support_kind_from_string(value.at("kind").get<std::string>());
      if (value.contains("params")) c.support_params = params_from_json(value.at("params"));
    } else if (key == "data") {
      c.train_count = value.at("train_count").get<int>();
      c.test_count = value.at("test_count").get<int>();
    } else if (key == "schedule") {
      c.T = value.at("T").get<int>();
      c.beta_start = value.at("beta_start").get<double>();
      c.beta_end = value.at("beta_end").get<double>();
    } else if (key == "model") {
      c.hidden_width = value.at("hidden_width").get<int>();
      c.hidden_layers = value.at("hidden_layers").get<int>();
      c.time_features = value.at("time_features").get<int>();
      c.embed_dim = value.at("embed_dim").get<int>();
    } else if (key == "training") {
      c.training = training_config_from_json(value.dump());
    } else if (key == "sampler") {
      c.sampler_method = value.at("method").get<std::string>();
      c.sampler_steps = value.at("steps").get<int>();
      c.langevin_steps_per_level = value.at("langevin_steps_per_level").get<int>();
      c.langevin_eta = value.at("langevin_eta").get<double>();
      c.sample_count = value.at("count").get<int>();
    } else if (key == "diagnostics") {
      c.classifier_cfg.timestep_count = value.at("timestep_count").get<int>();
      c.classifier_cfg.band_lo = value.at("band_lo").get<double>();
      c.classifier_cfg.band_hi = value.at("band_hi").get<double>();
      c.classifier_cfg.noise_draws_per_t = value.at("noise_draws_per_t").get<int>();
      c.jsd_eval_count = value.at("jsd_eval_count").get<int>();
      c.cs_samples_per_relation = value.at("cs_samples_per_relation").get<int>();
      c.cs_max_relations = value.at("cs_max_relations").get<int>();
    } else if (key == "output_dir") {
      c.output_dir = value.get<std::string>();
    } else if (key == "seed") {
      c.seed = value.get<std::uint64_t>();
    } else {
      throw ConfigError("unknown experiment config key: " + key);
    }
  }
  return c;
}

std::vector<std::string> preset_names() {
  return {"gaussian2d-orthogonal", "grid10-uniform", "grid10-nonuniform", "grid10-diagonal",
          "grid4x4x4-orthogonal"};
}

ExperimentConfig make_preset(const std::string& name) {
  ExperimentConfig c;
  c.name = name;
  if (name == "gaussian2d-orthogonal") {
    c.cardinalities = {2, 2};
    c.sigma = 0.3;
    c.support_kind = SupportKind::OrthogonalPartial;
    c.train_count = 4096;
    c.test_count = 2048;
    c.training.steps = 20000;
    c.cs_samples_per_relation = 1000;
  } else if (name == "grid10-uniform" || name == "grid10-nonuniform" || name == "grid10-diagonal") {
    c.cardinalities = {10, 10};
    c.sigma = 0.04;
    c.train_count = 20000;
    c.test_count = 2000;
    c.training.steps = 24000;
    c.jsd_eval_count = 192;
    c.cs_samples_per_relation = 50;
    c.cs_max_relations = 20;
    if (name == "grid10-uniform") {
      c.support_kind = SupportKind::Uniform;
    } else if (name == "grid10-nonuniform") {
      c.support_kind = SupportKind::NonUniform;
      c.support_params.a = 0.9 / 19.0;  // 90% of the mass on the diagonal band
    } else {
      c.support_kind = SupportKind::DiagonalPartial;
    }
  } else if (name == "grid4x4x4-orthogonal") {
    c.cardinalities = {4, 4, 4};
    c.sigma = 0.1;
    c.support_kind = SupportKind::OrthogonalPartial;
    c.train_count = 12000;
    c.test_count = 1500;
    c.training.steps = 4000;
    c.jsd_eval_count = 128;
    c.cs_samples_per_relation = 40;
    c.cs_max_relations = 12;
  } else {
    throw ConfigError("unknown preset: " + name + " (see `coind presets`)");
  }
  return c;
}

// ---------------------------------------------------------------------------
// Pipeline
// ---------------------------------------------------------------------------

void cmd_gen_data(const ExperimentConfig& config) {
  const WorldConfig world = config.world();
  const SupportPattern support = config.support();
  fs::create_directories(config.data_dir());
  Dataset train =
      generate_dataset(world, support, config.train_count, derive_seed(config.seed, "data.train"));
  Dataset test =
      generate_dataset(world, support, config.test_count, derive_seed(config.seed, "data.test"));
  write_dataset_csv(train, config.data_dir() + "/train.csv", config.data_dir() + "/train.json");
  write_dataset_csv(test, config.data_dir() + "/test.csv", config.data_dir() + "/test.json");
  std::ofstream cfg(config.data_dir() + "/experiment.json");
  cfg << experiment_to_json(config) << "\n";
}

Dataset load_train_dataset(const ExperimentConfig& config) {
  return read_dataset_csv(config.data_dir() + "/train.csv", config.data_dir() + "/train.json");
}

Dataset load_test_dataset(const ExperimentConfig& config) {
  return read_dataset_csv(config.data_dir() + "/test.csv", config.data_dir() + "/test.json");
}

std::vector<TrainRecord> cmd_train(const ExperimentConfig& config, const std::string& run_label,
                                   Objective objective, double lambda) {
  Dataset train = load_train_dataset(config);
  const NoiseSchedule schedule = config.schedule();

  TrainingConfig tc = config.training;
  tc.objective = objective;
  tc.lambda = lambda;
  tc.seed = derive_seed(config.seed, "train." + run_label);

  ScoreModel model(config.model_config(), derive_seed(config.seed, "init." + run_label));
  auto history = coind::train(model, train, schedule, tc);

  fs::create_directories(config.run_dir(run_label));
  model.save_checkpoint(config.run_dir(run_label) + "/checkpoint.bin", schedule);
  write_training_log(config.run_dir(run_label) + "/loss.csv", history);
  std::ofstream cfg(config.run_dir(run_label) + "/config.json");
  cfg << training_config_to_json(tc) << "\n";
  return history;
}

void cmd_sample(const ExperimentConfig& config, const std::string& checkpoint_path,
                const std::string& expression, int count, const std::string& out_csv,
                const std::string& plan_json_path) {
  auto [model, schedule] = ScoreModel::load_checkpoint(checkpoint_path);
  const WorldConfig world = config.world();
  ExprPtr expr = parse_expression(expression);
  GuidancePlan plan = compile(*expr, world.space);

  if (!plan_json_path.empty()) {
    std::ofstream pj(plan_json_path);
    pj << plan_to_json(plan) << "\n";
  }

  Rng rng(derive_seed(config.seed, "sample." + expression));
  std::vector<Vec> samples;
  if (config.sampler_method == "langevin") {
    LangevinOptions opt{config.langevin_steps_per_level, config.langevin_eta};
    samples = sample_langevin(plan, model_score_scorer(model, schedule), schedule, opt, count, rng);
  } else {
    samples = sample_reverse(plan, model_eps_scorer(model), schedule, config.sampler_steps, count, rng);
  }

  fs::create_directories(fs::path(out_csv).parent_path().empty()
                             ? fs::path(".")
                             : fs::path(out_csv).parent_path());
  std::ofstream f(out_csv);
  if (!f) throw IoError("cannot open for writing: " + out_csv);
  const int n = world.dim();
  for (int i = 0; i < n; ++i) f << "x" << i << ",";
  for (int i = 0; i < n; ++i) f << "label" << i << (i + 1 < n ? "," : "");
  f << "\n";
  char buf[64];
  for (const Vec& x : samples) {
    const ClassifierResult cls = analytic_classifier(world, x);
    for (int i = 0; i < n; ++i) {
      std::snprintf(buf, sizeof(buf), "%.17g,", x[i]);
      f << buf;
    }
    for (int i = 0; i < n; ++i) f << cls.labels[i] << (i + 1 < n ? "," : "");
    f << "\n";
  }
}

LabelClassifier make_analytic_label_classifier(const WorldConfig& world) {
  return [world](const Vec& x) -> Composition { return analytic_classifier(world, x).labels; };
}

std::vector<Relation> build_relations(const ExperimentConfig& config, const std::string& task,
                                      const SupportPattern& support) {
  const AttributeSpace space = support.space();
  const int n = space.attribute_count();

  std::vector<Composition> targets = unseen_compositions(support);
  if (targets.empty()) {
    for (std::int64_t i = 0; i < space.composition_count(); ++i)
      targets.push_back(space.composition_at(i));
  }
  if (static_cast<int>(targets.size()) > config.cs_max_relations) {
    // deterministic spread over the target list
    std::vector<Composition> picked;
    const double stride = static_cast<double>(targets.size()) / config.cs_max_relations;
    for (int k = 0; k < config.cs_max_relations; ++k)
      picked.push_back(targets[static_cast<size_t>(k * stride)]);
    targets = std::move(picked);
  }

  std::vector<Relation> relations;
  for (const Composition& c : targets) {
    Relation rel;
    std::vector<ExprPtr> lits;
    if (task == "and") {
      for (int i = 0; i < n; ++i) lits.push_back(make_literal(i, c[i]));
      rel.expr = n == 1 ? lits[0] : make_and(lits);
      rel.allowed = {c};
    } else if (task == "joint") {
      // handled by a full-condition plan at sampling time; the expression is
      // the same conjunction, the sampler recognizes the task by name
      for (int i = 0; i < n; ++i) lits.push_back(make_literal(i, c[i]));
      rel.expr = n == 1 ? lits[0] : make_and(lits);
      rel.allowed = {c};
    } else if (task == "not") {
      // conjunction on all but the last attribute, negation on the last:
      // the desk analog of "digit AND NOT(color OR color)"
      const int k = n - 1;
      const int m = space.cardinality(k);
      const int negate = std::min(2, m - 1);
      std::vector<ExprPtr> neg_lits;
      std::set<int> negated;
      for (int l = 1; l <= negate; ++l) {
        const int v = (c[k] + l) % m;
        neg_lits.push_back(make_literal(k, v));
        negated.insert(v);
      }
      for (int i = 0; i < k; ++i) lits.push_back(make_literal(i, c[i]));
      lits.push_back(make_not(neg_lits.size() == 1 ? neg_lits[0] : make_or(neg_lits)));
      rel.expr = make_and(lits);
      for (int v = 0; v < m; ++v) {
        if (negated.count(v)) continue;
        Composition ok = c;
        ok[k] = v;
        rel.allowed.insert(ok);
      }
    } else {
      throw ConfigError("unknown task: " + task + " (expected and|not|joint)");
    }
    std::string label = task + "(";
    for (int i = 0; i < n; ++i) label += (i ? "," : "") + std::to_string(c[i]);
    rel.name = label + ")";
    relations.push_back(std::move(rel));
  }
  return relations;
}

RelationSampler make_relation_sampler(const ExperimentConfig& config, const ScoreModel& model,
                                      const NoiseSchedule& schedule) {
  const bool joint_task_full_cond = true;
  return [&config, &model, &schedule, joint_task_full_cond](const Relation& rel,
                                                            int count) -> std::vector<Vec> {
    GuidancePlan plan;
    if (joint_task_full_cond && rel.name.rfind("joint", 0) == 0) {
      // single fully-set condition term
      const Composition& c = *rel.allowed.begin();
      plan = cfg_plan(ConditionVector(c.begin(), c.end()), Rational(1));
    } else {
      plan = compile(*rel.expr, AttributeSpace(config.cardinalities));
    }
    Rng rng(derive_seed(config.seed, "sample." + rel.name));
    if (config.sampler_method == "langevin") {
      LangevinOptions opt{config.langevin_steps_per_level, config.langevin_eta};
      return sample_langevin(plan, model_score_scorer(model, schedule), schedule, opt, count, rng);
    }
    return sample_reverse(plan, model_eps_scorer(model), schedule, config.sampler_steps, count, rng);
  };
}

EvalReport cmd_eval(const ExperimentConfig& config, const std::string& run_label,
                    const std::vector<std::string>& tasks) {
  if (tasks.empty()) throw ConfigError("task list must not be empty");
  auto [model, schedule] = ScoreModel::load_checkpoint(config.run_dir(run_label) + "/checkpoint.bin");
  const WorldConfig world = config.world();
  const SupportPattern support = config.support();
  Dataset test = load_test_dataset(config);

  EvalReport report;
  report.run_label = run_label;
  report.support = to_string(config.support_kind);
  report.samples_per_relation = config.cs_samples_per_relation;
  {
    std::ifstream cfg(config.run_dir(run_label) + "/config.json");
    if (cfg) {
      std::string text((std::istreambuf_iterator<char>(cfg)), std::istreambuf_iterator<char>());
      TrainingConfig tc = training_config_from_json(text);
      report.objective = to_string(tc.objective);
      report.lambda = tc.lambda;
    }
  }

  // JSD on a test-split subsample
  std::vector<Vec> xs;
  const int count = std::min<int>(config.jsd_eval_count, static_cast<int>(test.samples.size()));
  xs.reserve(count);
  for (int i = 0; i < count; ++i) xs.push_back(test.samples[i].x);
  ImplicitClassifierConfig icc = config.classifier_cfg;
  icc.seed = derive_seed(config.seed, "icc");
  report.jsd = jsd_violation(model, schedule, xs, config.cardinalities, icc);

  const LabelClassifier classifier = make_analytic_label_classifier(world);
  const RelationSampler sampler = make_relation_sampler(config, model, schedule);
  for (const std::string& task : tasks) {
    const auto relations = build_relations(config, task, support);
    report.cs[task] = conformity_score(sampler, relations, classifier, config.cs_samples_per_relation,
                                       &report.skipped_relations);
  }

  // diversity: condition on attribute 0 alone, measure entropy of attribute 1
  if (world.dim() >= 2) {
    const int m0 = config.cardinalities[0];
    std::vector<Vec> pooled;
    const int values = std::min(4, m0);
    for (int v = 0; v < values; ++v) {
      GuidancePlan plan = cfg_plan(only_set(world.dim(), 0, v), Rational(1));
      Rng rng(derive_seed(config.seed, "diversity." + run_label + "." + std::to_string(v)));
      std::vector<Vec> samples;
      if (config.sampler_method == "langevin") {
        LangevinOptions opt{config.langevin_steps_per_level, config.langevin_eta};
        samples = sample_langevin(plan, model_score_scorer(model, schedule), schedule, opt,
                                  config.cs_samples_per_relation, rng);
      } else {
        samples = sample_reverse(plan, model_eps_scorer(model), schedule, config.sampler_steps,
                                 config.cs_samples_per_relation, rng);
      }
      pooled.insert(pooled.end(), samples.begin(), samples.end());
    }
    report.entropy_bits = diversity_entropy(pooled, classifier, 1, config.cardinalities[1]);
  }
  return report;
}

namespace {

nlohmann::json report_to_json(const EvalReport& r) {
  nlohmann::json j;
  j["run"] = r.run_label;
  j["support"] = r.support;
  j["objective"] = r.objective;
  j["lambda"] = r.lambda;
  j["jsd"] = r.jsd;
  j["cs"] = r.cs;
  j["entropy_bits"] = r.entropy_bits;
  j["samples_per_relation"] = r.samples_per_relation;
  j["skipped_relations"] = r.skipped_relations;
  return j;
}

}  // namespace

std::string eval_report_to_json(const EvalReport& report) { return report_to_json(report).dump(2); }

EvalReport eval_report_from_json(const std::string& text) {
  nlohmann::json j = nlohmann::json::parse(text);
  EvalReport r;
  r.run_label = j.at("run").get<std::string>();
  r.support = j.at("support").get<std::string>();
  r.objective = j.at("objective").get<std::string>();
  r.lambda = j.at("lambda").get<double>();
  r.jsd = j.at("jsd").get<double>();
  r.cs = j.at("cs").get<std::map<std::string, double>>();
  r.entropy_bits = j.at("entropy_bits").get<double>();
  r.samples_per_relation = j.at("samples_per_relation").get<int>();
  r.skipped_relations = j.at("skipped_relations").get<std::vector<std::string>>();
  return r;
}

void cmd_report(const ExperimentConfig& config, const std::vector<EvalReport>& reports) {
  fs::create_directories(config.eval_dir());

  nlohmann::json all = nlohmann::json::array();
  for (const auto& r : reports) all.push_back(report_to_json(r));
  std::ofstream(config.eval_dir() + "/report.json") << all.dump(2) << "\n";

  std::vector<std::string> task_names;
  for (const auto& r : reports)
    for (const auto& [task, cs] : r.cs)
      if (std::find(task_names.begin(), task_names.end(), task) == task_names.end())
        task_names.push_back(task);

  {
    std::ofstream csv(config.eval_dir() + "/report.csv");
    csv << "run,support,objective,lambda,jsd";
    for (const auto& t : task_names) csv << ",cs_" << t;
    csv << ",entropy_bits\n";
    for (const auto& r : reports) {
      csv << r.run_label << "," << r.support << "," << r.objective << "," << r.lambda << ","
          << r.jsd;
      for (const auto& t : task_names) {
        csv << ",";
        if (auto it = r.cs.find(t); it != r.cs.end()) csv << it->second;
      }
      csv << "," << r.entropy_bits << "\n";
    }
  }
  {
    std::ofstream md(config.eval_dir() + "/report.md");
    md << "| Support | Method | JSD |";
    for (const auto& t : task_names) md << " " << t << " (CS) |";
    md << " H (bits) |\n|---|---|---|";
    for (size_t i = 0; i < task_names.size(); ++i) md << "---|";
    md << "---|\n";
    char buf[64];
    for (const auto& r : reports) {
      std::string method = r.objective;
      if (r.objective == "coind") {
        std::snprintf(buf, sizeof(buf), "coind (lambda=%g)", r.lambda);
        method = buf;
      }
      std::snprintf(buf, sizeof(buf), "%.4f", r.jsd);
      md << "| " << r.support << " | " << method << " | " << buf << " |";
      for (const auto& t : task_names) {
        if (auto it = r.cs.find(t); it != r.cs.end()) {
          std::snprintf(buf, sizeof(buf), " %.4f |", it->second);
          md << buf;
        } else {
          md << " - |";
        }
      }
      std::snprintf(buf, sizeof(buf), " %.3f |\n", r.entropy_bits);
      md << buf;
    }
  }
  {
    std::ofstream pairs(config.eval_dir() + "/jsd_cs_pairs.csv");
    pairs << "run,jsd,cs_and\n";
    for (const auto& r : reports) {
      if (auto it = r.cs.find("and"); it != r.cs.end())
        pairs << r.run_label << "," << r.jsd << "," << it->second << "\n";
    }
  }
}

std::vector<EvalReport> run_all(const ExperimentConfig& config) {
  cmd_gen_data(config);
  cmd_train(config, "vanilla", Objective::Vanilla, 0.0);
  cmd_train(config, "coind", Objective::CoInD, config.training.lambda);
  std::vector<EvalReport> reports;
  const std::vector<std::string> tasks = {"and", "not", "joint"};
  reports.push_back(cmd_eval(config, "vanilla", tasks));
  reports.push_back(cmd_eval(config, "coind", tasks));
  cmd_report(config, reports);
  return reports;
}

}  // namespace coind
