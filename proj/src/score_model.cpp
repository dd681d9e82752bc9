#include "coind/score_model.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include <nlohmann/json.hpp>

namespace coind {

static_assert(std::endian::native == std::endian::little,
              "checkpoint format assumes a little-endian host");

#if defined(__GLIBC__)
// The training loop frees megabyte-sized activation buffers every step;
// without these thresholds glibc trims the heap on each free and the next
// step pays the page faults back (4x wall-clock on cold processes).
namespace {
const bool malloc_tuned = [] {
  mallopt(M_TRIM_THRESHOLD, 256 << 20);
  mallopt(M_MMAP_THRESHOLD, 64 << 20);
  return true;
}();
}  // namespace
#endif

Mat NoisePredictor::predict_eps_batch(const Mat& x_t, const std::vector<int>& ts,
                                      const std::vector<ConditionVector>& conds) const {
  Mat out(x_t.rows(), dim());
  for (Eigen::Index b = 0; b < x_t.rows(); ++b)
    out.row(b) = predict_eps(x_t.row(b).transpose(), ts[b], conds[b]).transpose();
  return out;
}

namespace {

// vectorized SiLU via Eigen array exp
inline Mat silu_of(const Mat& z) {
  return (z.array() / (1.0 + (-z.array()).exp())).matrix();
}

// d silu / dz = s (1 + z (1 - s)) with s = sigmoid(z)
inline Mat silu_grad_of(const Mat& z) {
  const auto s = 1.0 / (1.0 + (-z.array()).exp());
  return (s * (1.0 + z.array() * (1.0 - s))).matrix();
}

}  // namespace

ScoreModel::ScoreModel(ScoreModelConfig config, std::uint64_t init_seed) : cfg_(std::move(config)) {
  if (cfg_.cardinalities.empty()) throw ConfigError("score model requires at least one attribute");
  if (cfg_.hidden_layers < 1) throw ConfigError("score model requires hidden_layers >= 1");
  if (cfg_.time_features % 2 != 0) throw ConfigError("time_features must be even");
  build_layout();
  params_.resize(layout_.total);

  Rng rng(init_seed);
  const int L = cfg_.hidden_layers + 1;
  for (int l = 0; l < L; ++l) {
    const int in = layout_.in_size[l];
    const int out = layout_.out_size[l];
    const double std = std::sqrt(1.0 / in);
    Eigen::Map<Mat> W(params_.data() + layout_.offset_W(l), in, out);
    for (int j = 0; j < out; ++j)
      for (int i = 0; i < in; ++i) W(i, j) = std * rng.normal();
    Eigen::Map<Vec>(params_.data() + layout_.offset_b(l), out).setZero();
  }
  for (int a = 0; a < cfg_.attribute_count(); ++a) {
    const int rows = cfg_.cardinalities[a] + 1;  // + null row
    Eigen::Map<Mat> E(params_.data() + layout_.offset_E(a), rows, cfg_.embed_dim);
    for (int j = 0; j < cfg_.embed_dim; ++j)
      for (int i = 0; i < rows; ++i) E(i, j) = rng.normal();
  }
  build_time_table();
}

void ScoreModel::build_time_table() {
  const int max_t = 4096;  // covers any desk-scale schedule
  time_table_.resize(max_t, cfg_.time_features);
  const int half = cfg_.time_features / 2;
  for (int t = 1; t <= max_t; ++t) {
    for (int k = 0; k < half; ++k) {
      const double omega = std::exp(-std::log(10000.0) * k / static_cast<double>(half));
      time_table_(t - 1, 2 * k) = std::sin(t * omega);
      time_table_(t - 1, 2 * k + 1) = std::cos(t * omega);
    }
  }
}

void ScoreModel::build_layout() {
  const int L = cfg_.hidden_layers + 1;
  layout_.in_size.resize(L);
  layout_.out_size.resize(L);
  for (int l = 0; l < L; ++l) {
    layout_.in_size[l] = l == 0 ? cfg_.input_dim() : cfg_.hidden_width;
    layout_.out_size[l] = l == L - 1 ? cfg_.effective_x_dim() : cfg_.hidden_width;
  }
  int off = 0;
  layout_.w_off.resize(L);
  layout_.b_off.resize(L);
  for (int l = 0; l < L; ++l) {
    layout_.w_off[l] = off;
    off += layout_.in_size[l] * layout_.out_size[l];
    layout_.b_off[l] = off;
    off += layout_.out_size[l];
  }
  layout_.e_off.resize(cfg_.attribute_count());
  for (int a = 0; a < cfg_.attribute_count(); ++a) {
    layout_.e_off[a] = off;
    off += (cfg_.cardinalities[a] + 1) * cfg_.embed_dim;
  }
  layout_.total = off;
}

Vec ScoreModel::time_features(int t) const {
  if (t >= 1 && t <= time_table_.rows()) return time_table_.row(t - 1).transpose();
  const int W = cfg_.time_features;
  const int half = W / 2;
  Vec f(W);
  for (int k = 0; k < half; ++k) {
    const double omega = std::exp(-std::log(10000.0) * k / static_cast<double>(half));
    f[2 * k] = std::sin(t * omega);
    f[2 * k + 1] = std::cos(t * omega);
  }
  return f;
}

Vec ScoreModel::embedding_row(int attribute, int value) const {
  const int m = cfg_.cardinalities.at(attribute);
  const int row = value == kNull ? m : value;
  if (row < 0 || row > m) throw ShapeError("condition value outside attribute cardinality");
  Eigen::Map<const Mat> E(params_.data() + layout_.offset_E(attribute), m + 1, cfg_.embed_dim);
  return E.row(row).transpose();
}

Mat ScoreModel::assemble_input(const Mat& x_t, const std::vector<int>& ts,
                               const std::vector<ConditionVector>* conds,
                               const std::vector<Vec>* attr_embeddings) const {
  const int B = static_cast<int>(x_t.rows());
  const int xd = cfg_.effective_x_dim();
  if (x_t.cols() != xd) throw ShapeError("x_t has wrong dimension");
  if (static_cast<int>(ts.size()) != B) throw ShapeError("one timestep per sample required");
  Mat input(B, cfg_.input_dim());
  input.leftCols(xd) = x_t;
  for (int b = 0; b < B; ++b) {
    const int t = ts[b];
    if (t >= 1 && t <= time_table_.rows())
      input.block(b, xd, 1, cfg_.time_features) = time_table_.row(t - 1);
    else
      input.block(b, xd, 1, cfg_.time_features) = time_features(t).transpose();
  }
  int col = xd + cfg_.time_features;
  for (int a = 0; a < cfg_.attribute_count(); ++a) {
    const int m = cfg_.cardinalities[a];
    Eigen::Map<const Mat> E(params_.data() + layout_.offset_E(a), m + 1, cfg_.embed_dim);
    if (conds != nullptr) {
      for (int b = 0; b < B; ++b) {
        const int v = (*conds)[b][a];
        const int row = v == kNull ? m : v;
        if (row < 0 || row > m) throw ShapeError("condition value outside attribute cardinality");
        input.block(b, col, 1, cfg_.embed_dim) = E.row(row);
      }
    } else {
      input.block(0, col, B, cfg_.embed_dim).rowwise() = (*attr_embeddings)[a].transpose();
    }
    col += cfg_.embed_dim;
  }
  return input;
}

Mat ScoreModel::run_layers(Mat input, Cache* cache) const {
  const int L = cfg_.hidden_layers + 1;
  if (cache != nullptr) {
    cache->pre.clear();
    cache->act.clear();
    cache->pre.reserve(L - 1);  // no reallocation: `cur` points into these
    cache->act.reserve(L - 1);
    cache->input = std::move(input);
  }
  const Mat* cur = cache != nullptr ? &cache->input : &input;
  Mat local_z, local_h;
  for (int l = 0; l < L; ++l) {
    Eigen::Map<const Mat> W(params_.data() + layout_.offset_W(l), layout_.in_size[l],
                            layout_.out_size[l]);
    Eigen::Map<const Vec> b(params_.data() + layout_.offset_b(l), layout_.out_size[l]);
    Mat z;
    z.noalias() = (*cur) * W;
    z.rowwise() += b.transpose();
    if (l == L - 1) return z;  // linear output layer
    if (cache != nullptr) {
      cache->pre.push_back(std::move(z));
      cache->act.push_back(silu_of(cache->pre.back()));
      cur = &cache->act.back();
    } else {
      local_z = std::move(z);
      local_h = silu_of(local_z);
      cur = &local_h;
    }
  }
  return *cur;  // unreachable
}

Mat ScoreModel::forward_batch(const Mat& x_t, const std::vector<int>& ts,
                              const std::vector<ConditionVector>& conds, Cache* cache) const {
  if (conds.size() != static_cast<size_t>(x_t.rows()))
    throw ShapeError("one condition per sample required");
  Mat input = assemble_input(x_t, ts, &conds, nullptr);
  if (cache != nullptr) cache->conds = conds;
  return run_layers(std::move(input), cache);
}

Mat ScoreModel::forward_batch_embedded(const Mat& x_t, const std::vector<int>& ts,
                                       const std::vector<Vec>& attr_embeddings) const {
  if (static_cast<int>(attr_embeddings.size()) != cfg_.attribute_count())
    throw ShapeError("one embedding per attribute required");
  return run_layers(assemble_input(x_t, ts, nullptr, &attr_embeddings), nullptr);
}

void ScoreModel::backward_batch(const Cache& cache, const Mat& dout, Vec& grad) const {
  if (grad.size() != params_.size()) throw ShapeError("gradient buffer has wrong size");
  const int L = cfg_.hidden_layers + 1;
  const int B = static_cast<int>(cache.input.rows());

  Mat delta = dout;  // gradient w.r.t. layer pre-activation, starting at the linear output
  for (int l = L - 1; l >= 0; --l) {
    const Mat& below = l == 0 ? cache.input : cache.act[l - 1];
    Eigen::Map<Mat> dW(grad.data() + layout_.offset_W(l), layout_.in_size[l], layout_.out_size[l]);
    Eigen::Map<Vec> db(grad.data() + layout_.offset_b(l), layout_.out_size[l]);
    dW.noalias() += below.transpose() * delta;
    db += delta.colwise().sum().transpose();
    if (l == 0) {
      // only the embedding segment of the input carries parameters
      Eigen::Map<const Mat> W(params_.data() + layout_.offset_W(0), layout_.in_size[0],
                              layout_.out_size[0]);
      const int emb_start = cfg_.effective_x_dim() + cfg_.time_features;
      const int emb_cols = cfg_.attribute_count() * cfg_.embed_dim;
      Mat dinput_emb = delta * W.middleRows(emb_start, emb_cols).transpose();
      for (int a = 0; a < cfg_.attribute_count(); ++a) {
        const int m = cfg_.cardinalities[a];
        Eigen::Map<Mat> dE(grad.data() + layout_.offset_E(a), m + 1, cfg_.embed_dim);
        for (int b = 0; b < B; ++b) {
          const int v = cache.conds[b][a];
          dE.row(v == kNull ? m : v) += dinput_emb.block(b, a * cfg_.embed_dim, 1, cfg_.embed_dim);
        }
      }
    } else {
      Eigen::Map<const Mat> W(params_.data() + layout_.offset_W(l), layout_.in_size[l],
                              layout_.out_size[l]);
      Mat dh = delta * W.transpose();
      delta = dh.cwiseProduct(silu_grad_of(cache.pre[l - 1]));
    }
  }
}

Vec ScoreModel::predict_eps(const Vec& x_t, int t, const ConditionVector& cond) const {
  Mat X(1, x_t.size());
  X.row(0) = x_t.transpose();
  return forward_batch(X, {t}, {cond}).row(0).transpose();
}

Mat ScoreModel::predict_eps_batch(const Mat& x_t, const std::vector<int>& ts,
                                  const std::vector<ConditionVector>& conds) const {
  return forward_batch(x_t, ts, conds);
}

namespace {
constexpr char kMagic[9] = "COINDCK1";
}

void ScoreModel::save_checkpoint(const std::string& path, const NoiseSchedule& schedule) const {
  nlohmann::json header;
  header["architecture"] = {
      {"cardinalities", cfg_.cardinalities}, {"x_dim", cfg_.x_dim},
      {"hidden_width", cfg_.hidden_width},   {"hidden_layers", cfg_.hidden_layers},
      {"time_features", cfg_.time_features}, {"embed_dim", cfg_.embed_dim}};
  header["schedule"] = {{"T", schedule.T}, {"betas", schedule.betas}};
  const std::string htext = header.dump();

  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open for writing: " + path);
  f.write(kMagic, 8);
  const std::uint64_t hlen = htext.size();
  f.write(reinterpret_cast<const char*>(&hlen), 8);
  f.write(htext.data(), static_cast<std::streamsize>(htext.size()));
  const std::uint64_t count = params_.size();
  f.write(reinterpret_cast<const char*>(&count), 8);
  f.write(reinterpret_cast<const char*>(params_.data()),
          static_cast<std::streamsize>(count * sizeof(double)));
  if (!f) throw IoError("write failed: " + path);
}

std::pair<ScoreModel, NoiseSchedule> ScoreModel::load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open: " + path);
  char magic[8];
  f.read(magic, 8);
  if (std::memcmp(magic, kMagic, 8) != 0) throw IoError("not a coind checkpoint: " + path);
  std::uint64_t hlen = 0;
  f.read(reinterpret_cast<char*>(&hlen), 8);
  std::string htext(hlen, '\0');
  f.read(htext.data(), static_cast<std::streamsize>(hlen));
  nlohmann::json header = nlohmann::json::parse(htext);

  ScoreModelConfig cfg;
  const auto& arch = header.at("architecture");
  cfg.cardinalities = arch.at("cardinalities").get<std::vector<int>>();
  cfg.x_dim = arch.at("x_dim").get<int>();
  cfg.hidden_width = arch.at("hidden_width").get<int>();
  cfg.hidden_layers = arch.at("hidden_layers").get<int>();
  cfg.time_features = arch.at("time_features").get<int>();
  cfg.embed_dim = arch.at("embed_dim").get<int>();

  NoiseSchedule schedule;
  schedule.T = header.at("schedule").at("T").get<int>();
  schedule.betas = header.at("schedule").at("betas").get<std::vector<double>>();
  schedule.alpha_bars.resize(schedule.T);
  double abar = 1.0;
  for (int i = 0; i < schedule.T; ++i) {
    abar *= 1.0 - schedule.betas[i];
    schedule.alpha_bars[i] = abar;
  }

  ScoreModel model(cfg, 0);
  std::uint64_t count = 0;
  f.read(reinterpret_cast<char*>(&count), 8);
  if (count != static_cast<std::uint64_t>(model.param_count()))
    throw IoError("checkpoint parameter count does not match architecture");
  f.read(reinterpret_cast<char*>(model.params_.data()),
         static_cast<std::streamsize>(count * sizeof(double)));
  if (!f) throw IoError("truncated checkpoint: " + path);
  return {std::move(model), std::move(schedule)};
}

}  // namespace coind
