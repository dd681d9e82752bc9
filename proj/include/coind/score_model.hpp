#pragma once

#include <memory>
#include <string>
#include <vector>

#include "coind/schedule.hpp"

namespace coind {

/// Behavioral contract for conditional noise prediction. Implemented by the
/// trainable network and by analytic / test-double predictors.
class NoisePredictor {
 public:
  virtual ~NoisePredictor() = default;
  virtual int dim() const = 0;
  virtual int attribute_count() const = 0;
  virtual Vec predict_eps(const Vec& x_t, int t, const ConditionVector& cond) const = 0;

  /// Row-per-sample batched form; the default loops over predict_eps.
  virtual Mat predict_eps_batch(const Mat& x_t, const std::vector<int>& ts,
                                const std::vector<ConditionVector>& conds) const;
};

struct ScoreModelConfig {
  std::vector<int> cardinalities;
  int x_dim = 0;  // defaults to the attribute count when 0
  int hidden_width = 128;
  int hidden_layers = 3;
  int time_features = 32;
  int embed_dim = 16;

  int attribute_count() const { return static_cast<int>(cardinalities.size()); }
  int effective_x_dim() const { return x_dim > 0 ? x_dim : attribute_count(); }
  int input_dim() const {
    return effective_x_dim() + time_features + attribute_count() * embed_dim;
  }
};

/// MLP noise predictor: input = [x_t | sinusoidal(t) | per-attribute
/// condition embeddings], SiLU hidden layers, linear output. Each attribute
/// owns an embedding table with a dedicated learned null row. Parameters
/// live in one flat vector; gradients are hand-derived layer backprop.
class ScoreModel : public NoisePredictor {
 public:
  ScoreModel(ScoreModelConfig config, std::uint64_t init_seed);

  const ScoreModelConfig& config() const { return cfg_; }
  int dim() const override { return cfg_.effective_x_dim(); }
  int attribute_count() const override { return cfg_.attribute_count(); }

  int param_count() const { return static_cast<int>(params_.size()); }
  Vec& params() { return params_; }
  const Vec& params() const { return params_; }

  /// Intermediate activations kept for the backward pass.
  struct Cache {
    Mat input;                 // B x input_dim
    std::vector<Mat> pre;      // pre-activations per hidden layer
    std::vector<Mat> act;      // activations per hidden layer
    std::vector<ConditionVector> conds;
  };

  Mat forward_batch(const Mat& x_t, const std::vector<int>& ts,
                    const std::vector<ConditionVector>& conds, Cache* cache = nullptr) const;

  /// Accumulates d(sum_b <dout_b, out_b>)/dparams into `grad`.
  void backward_batch(const Cache& cache, const Mat& dout, Vec& grad) const;

  Vec predict_eps(const Vec& x_t, int t, const ConditionVector& cond) const override;
  Mat predict_eps_batch(const Mat& x_t, const std::vector<int>& ts,
                        const std::vector<ConditionVector>& conds) const override;

  /// Embedding row for a value index, or the null row for kNull.
  Vec embedding_row(int attribute, int value) const;

  /// Forward with explicit per-attribute embeddings shared across the batch
  /// (conditioning handle path, used for attribute interpolation).
  Mat forward_batch_embedded(const Mat& x_t, const std::vector<int>& ts,
                             const std::vector<Vec>& attr_embeddings) const;

  Vec time_features(int t) const;

  void save_checkpoint(const std::string& path, const NoiseSchedule& schedule) const;
  static std::pair<ScoreModel, NoiseSchedule> load_checkpoint(const std::string& path);

 private:
  struct Layout {
    int offset_W(int layer) const { return w_off[layer]; }
    int offset_b(int layer) const { return b_off[layer]; }
    int offset_E(int attr) const { return e_off[attr]; }
    std::vector<int> w_off, b_off, e_off;
    std::vector<int> in_size, out_size;  // per linear layer
    int total = 0;
  };

  void build_layout();
  void build_time_table();
  Mat assemble_input(const Mat& x_t, const std::vector<int>& ts,
                     const std::vector<ConditionVector>* conds,
                     const std::vector<Vec>* attr_embeddings) const;
  Mat run_layers(Mat input, Cache* cache) const;

  ScoreModelConfig cfg_;
  Layout layout_;
  Vec params_;
  Mat time_table_;  // precomputed sinusoidal features, row t-1
};

}  // namespace coind
