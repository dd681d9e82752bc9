#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "coind/diagnostics.hpp"
#include "coind/sampling.hpp"
#include "coind/training.hpp"

namespace coind {

/// Whole-pipeline configuration. One master seed; stage seeds are derived by
/// hashing the stage name with it (see derive_seed).
struct ExperimentConfig {
  std::string name = "experiment";

  // world
  std::vector<int> cardinalities = {2, 2};
  double sigma = 0.3;

  // support
  SupportKind support_kind = SupportKind::Uniform;
  SupportParams support_params;

  // data
  int train_count = 4096;
  int test_count = 2048;

  // schedule
  int T = 200;
  double beta_start = 5e-4;
  double beta_end = 0.1;

  // model
  int hidden_width = 128;
  int hidden_layers = 3;
  int time_features = 32;
  int embed_dim = 16;

  // training defaults (objective/lambda overridable per run)
  TrainingConfig training;

  // sampling
  std::string sampler_method = "reverse";  // "reverse" | "langevin"
  int sampler_steps = 100;
  int langevin_steps_per_level = 20;
  double langevin_eta = 0.3;
  int sample_count = 1000;

  // diagnostics
  ImplicitClassifierConfig classifier_cfg;
  int jsd_eval_count = 256;
  int cs_samples_per_relation = 50;
  int cs_max_relations = 20;

  std::string output_dir = "out";
  std::uint64_t seed = 17;

  AttributeSpace space() const { return AttributeSpace(cardinalities); }
  WorldConfig world() const { return make_world(space(), sigma); }
  SupportPattern support() const { return build_support(space(), support_kind, support_params); }
  NoiseSchedule schedule() const { return build_schedule(T, beta_start, beta_end); }
  ScoreModelConfig model_config() const;

  std::string data_dir() const { return output_dir + "/" + name + "/data"; }
  std::string run_dir(const std::string& run_label) const {
    return output_dir + "/" + name + "/" + run_label;
  }
  std::string eval_dir() const { return output_dir + "/" + name + "/eval"; }
};

std::string experiment_to_json(const ExperimentConfig& config);
ExperimentConfig experiment_from_json(const std::string& text);

/// Shipped presets: gaussian2d-orthogonal, grid10-uniform, grid10-nonuniform,
/// grid10-diagonal, grid4x4x4-orthogonal.
std::vector<std::string> preset_names();
ExperimentConfig make_preset(const std::string& name);

// ---------------------------------------------------------------------------
// Pipeline commands (the CLI maps onto these)
// ---------------------------------------------------------------------------

/// Writes train.csv/test.csv plus the JSON sidecar under data_dir().
void cmd_gen_data(const ExperimentConfig& config);

Dataset load_train_dataset(const ExperimentConfig& config);
Dataset load_test_dataset(const ExperimentConfig& config);

/// Trains one run (objective + lambda) on the generated dataset; writes
/// checkpoint.bin, loss.csv and config.json under run_dir(label).
/// Returns the training history.
std::vector<TrainRecord> cmd_train(const ExperimentConfig& config, const std::string& run_label,
                                   Objective objective, double lambda);

/// Samples a logical expression with the run's checkpoint; writes a CSV of
/// samples with analytic-classifier labels appended, and optionally the
/// compiled plan JSON.
void cmd_sample(const ExperimentConfig& config, const std::string& checkpoint_path,
                const std::string& expression, int count, const std::string& out_csv,
                const std::string& plan_json_path = {});

struct EvalReport {
  std::string run_label;
  std::string support;
  std::string objective;
  double lambda = 0.0;
  double jsd = 0.0;
  std::map<std::string, double> cs;  // task name -> conformity score
  double entropy_bits = 0.0;         // uncontrolled-attribute diversity
  int samples_per_relation = 0;
  std::vector<std::string> skipped_relations;
};

/// Evaluates a trained run: JSD violation on the test split, conformity
/// scores for the requested tasks ("and", "not", "joint"), and diversity
/// entropy under single-attribute conditioning.
EvalReport cmd_eval(const ExperimentConfig& config, const std::string& run_label,
                    const std::vector<std::string>& tasks);

std::string eval_report_to_json(const EvalReport& report);
EvalReport eval_report_from_json(const std::string& text);

/// Renders eval reports as JSON + CSV + Markdown plus the (JSD, CS) pairs
/// CSV used for the correlation analysis; files land in eval_dir().
void cmd_report(const ExperimentConfig& config, const std::vector<EvalReport>& reports);

/// gen-data, train vanilla + coind, eval both, report. Returns the reports.
std::vector<EvalReport> run_all(const ExperimentConfig& config);

// helpers shared with the acceptance suite
std::vector<Relation> build_relations(const ExperimentConfig& config, const std::string& task,
                                      const SupportPattern& support);
RelationSampler make_relation_sampler(const ExperimentConfig& config, const ScoreModel& model,
                                      const NoiseSchedule& schedule);
LabelClassifier make_analytic_label_classifier(const WorldConfig& world);

}  // namespace coind
