#include "fbbs/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "fbbs/errors.hpp"
#include "fbbs/inference.hpp"
#include "fbbs/training.hpp"

namespace fbbs {

namespace {

using Mat = ad::Matrix<float>;

std::string layer_name(std::size_t i) { return "mlp." + std::to_string(i); }

std::size_t n_layers(const ParameterSet<float>& p) { return p.size() / 2; }

ad::Var<float> mlp_forward(ad::Tape<float>& tape, const ParameterSet<float>& params, const Mat& features,
                           std::vector<ad::Var<float>>* leaves = nullptr) {
  auto h = tape.constant_ref(features);
  const std::size_t n = n_layers(params);
  for (std::size_t i = 0; i < n; ++i) {
    auto w = tape.variable_ref(params.tensors[2 * i]);
    auto b = tape.variable_ref(params.tensors[2 * i + 1]);
    if (leaves) leaves->insert(leaves->end(), {w, b});
    h = ad::linear(h, w, b);
    if (i + 1 < n) h = ad::silu(h);
  }
  return h;
}

}  // namespace

BeamVector exhaustive_select(const ComplexVector& h, const Codebook& cb, int budget, std::optional<double> noise_snr_db,
                             Rng& rng) {
  const Eigen::VectorXd rsrp = measure_rsrp(h, cb, noise_snr_db, rng);
  const std::vector<int> probed = uniform_probe_indices(budget, cb.n_beams());
  int best = probed.front();
  for (int k : probed)
    if (rsrp[k] > rsrp[best]) best = k;
  return cb.beam(best);
}

void DiscriminativeConfig::validate() const {
  for (int d : hidden_dims)
    if (d < 1) throw ConfigError("discriminative hidden widths must be positive");
  if (epochs < 1) throw ConfigError("discriminative epochs must be at least 1");
  if (batch_size < 1) throw ConfigError("discriminative batch_size must be at least 1");
  if (!(learning_rate > 0.0)) throw ConfigError("discriminative learning_rate must be positive");
}

Mat discriminative_features(std::span<const Prompt> prompts, const PromptNormalization& norm, int budget) {
  Mat f(prompts.size(), budget);
  for (std::size_t b = 0; b < prompts.size(); ++b) {
    const Prompt& p = prompts[b];
    if (p.q_active() != budget) throw DimensionError("prompt budget does not match the discriminative predictor");
    Eigen::Index j = 0;
    for (Eigen::Index i = 0; i < p.values.size(); ++i)
      if (p.mask[i]) f(b, j++) = static_cast<float>(norm.feature(p.values[i]));
  }
  return f;
}

DiscriminativePredictor::DiscriminativePredictor(Checkpoint ckpt, bool use_ema) : ckpt_(std::move(ckpt)), use_ema_(use_ema) {
  if (!ckpt_.is_discriminative()) throw ConfigError("checkpoint holds a velocity model, not a discriminative baseline");
  const auto& p = ckpt_.weights(use_ema_);
  if (p.size() < 2 || p.size() % 2 != 0) throw FormatError("malformed discriminative checkpoint");
  Eigen::Index width = ckpt_.config.cond_dim;
  for (std::size_t i = 0; i < n_layers(p); ++i) {
    const Mat& w = p.at(layer_name(i) + ".weight");
    const Mat& b = p.at(layer_name(i) + ".bias");
    if (w.rows() != width || b.rows() != 1 || b.cols() != w.cols()) throw FormatError("discriminative layer shape mismatch");
    width = w.cols();
  }
  if (width != 2 * ckpt_.config.seq_len) throw FormatError("discriminative output width must be 2 N_t");
}

Mat DiscriminativePredictor::predict(std::span<const Prompt> prompts) const {
  ad::Tape<float> tape(false);
  const Mat f = discriminative_features(prompts, ckpt_.normalization, budget());
  return mlp_forward(tape, ckpt_.weights(use_ema_), f).value();
}

BeamVector DiscriminativePredictor::predict_beam(const Prompt& prompt) const {
  const Mat z = predict(std::span<const Prompt>(&prompt, 1));
  return recover_beam(z.row(0).cast<double>());
}

Checkpoint train_discriminative(const Dataset& dataset, int budget, const DiscriminativeConfig& cfg) {
  cfg.validate();
  const int n_t = dataset.n_antennas();
  const auto records = dataset.train();
  if (records.empty()) throw ConfigError("empty training split");
  const std::vector<int> probed = uniform_probe_indices(budget, n_t);

  const Mat targets = target_latents(records);
  const std::vector<Eigen::VectorXd> reports = noiseless_reports(records, n_t);

  Checkpoint ckpt;
  ckpt.normalization = fit_normalization(reports);
  ckpt.amp_scale = dataset.amp_scale;
  std::vector<int> widths = cfg.hidden_dims;
  if (widths.empty()) widths = {4 * n_t, 4 * n_t};
  ckpt.config.embed_dim = widths.front();
  ckpt.config.n_blocks = 0;
  ckpt.config.n_heads = 1;
  ckpt.config.seq_len = n_t;
  ckpt.config.cond_dim = budget;

  std::vector<Prompt> prompts;
  prompts.reserve(records.size());
  for (const auto& r : reports) prompts.push_back(make_prompt(r, probed));
  const Mat features = discriminative_features(prompts, ckpt.normalization, budget);

  Rng init_rng(cfg.seed, /*stream=*/0xd15c);
  ParameterSet<float> params;
  widths.push_back(2 * n_t);
  int fan_in = budget;
  for (std::size_t i = 0; i < widths.size(); ++i) {
    const int fan_out = widths[i];
    Mat w = Mat::Zero(fan_in, fan_out);
    if (i + 1 < widths.size()) {
      const double a = std::sqrt(6.0 / (fan_in + fan_out));
      for (Eigen::Index k = 0; k < w.size(); ++k) w.data()[k] = static_cast<float>(init_rng.uniform(-a, a));
    }
    params.add(layer_name(i) + ".weight", std::move(w));
    params.add(layer_name(i) + ".bias", Mat::Zero(1, fan_out));
    fan_in = fan_out;
  }

  ParameterSet<float> ema = params;
  auto opt = OptimizerState<float>::for_params(params);
  const AdamWOptions adam{cfg.learning_rate, cfg.weight_decay};
  Rng shuffle_rng(cfg.seed, /*stream=*/0x5417);
  std::vector<Eigen::Index> order(records.size());
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t bsz = std::min<std::size_t>(cfg.batch_size, order.size() - start);
      Mat f(bsz, features.cols()), y(bsz, targets.cols());
      for (std::size_t i = 0; i < bsz; ++i) {
        f.row(i) = features.row(order[start + i]);
        y.row(i) = targets.row(order[start + i]);
      }
      ad::Tape<float> tape(true);
      std::vector<ad::Var<float>> leaves;
      tape.backward(ad::mse(mlp_forward(tape, params, f, &leaves), y));
      ParameterSet<float> grads = params.zeros_like();
      for (std::size_t i = 0; i < leaves.size(); ++i) grads.tensors[i] = tape.grad(leaves[i]);
      adamw_step(params, grads, opt, adam);
      ema_update(ema, params, 0.995);
    }
    if (!params.all_finite()) throw Error("discriminative training diverged");
  }
  ckpt.raw = std::move(params);
  ckpt.ema = std::move(ema);
  return ckpt;
}

}  // namespace fbbs
