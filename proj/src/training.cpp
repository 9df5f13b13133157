#include "fbbs/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "fbbs/errors.hpp"
#include "fbbs/probing.hpp"

namespace fbbs {

void TrainConfig::validate(int q_max) const {
  if (max_epochs < 2 || stage1_epochs < 1 || stage1_epochs >= max_epochs)
    throw ConfigError("need 0 < stage1_epochs < max_epochs");
  if (batch_size < 1) throw ConfigError("batch_size must be positive");
  if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be non-negative");
  if (!(p > 0.0 && p <= 1.0)) throw ConfigError("p must lie in (0, 1]");
  if (!(p_full > 0.0 && p_full <= 1.0)) throw ConfigError("p_full must lie in (0, 1]");
  if (!(ema_decay > 0.0 && ema_decay <= 1.0)) throw ConfigError("ema_decay must lie in (0, 1]");
  if (budget_set.empty()) throw ConfigError("budget_set is empty");
  for (int q : budget_set)
    if (q < 1 || q > q_max) throw ConfigError("budget_set entry " + std::to_string(q) + " outside [1, Q_max]");
}

template <typename Scalar>
void adamw_step(ParameterSet<Scalar>& params, const ParameterSet<Scalar>& grads, OptimizerState<Scalar>& state,
                const AdamWOptions& opts) {
  if (grads.size() != params.size() || state.first_moment.size() != params.size())
    throw DimensionError("optimizer state does not match parameters");
  ++state.step;
  const double bc1 = 1.0 - std::pow(opts.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(opts.beta2, static_cast<double>(state.step));
  const auto b1 = static_cast<Scalar>(opts.beta1), b2 = static_cast<Scalar>(opts.beta2);
  const auto step_size = static_cast<Scalar>(opts.learning_rate / bc1);
  const auto inv_sqrt_bc2 = static_cast<Scalar>(1.0 / std::sqrt(bc2));
  const auto eps = static_cast<Scalar>(opts.eps);
  const auto decay = static_cast<Scalar>(1.0 - opts.learning_rate * opts.weight_decay);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto p = params.tensors[i].array();
    const auto g = grads.tensors[i].array();
    auto m = state.first_moment.tensors[i].array();
    auto v = state.second_moment.tensors[i].array();
    m = b1 * m + (Scalar(1) - b1) * g;
    v = b2 * v + (Scalar(1) - b2) * g.square();
    p *= decay;
    p -= step_size * m / (v.sqrt() * inv_sqrt_bc2 + eps);
  }
}

template <typename Scalar>
void ema_update(ParameterSet<Scalar>& ema, const ParameterSet<Scalar>& params, double decay) {
  if (ema.size() != params.size()) throw DimensionError("EMA shadow does not mirror parameters");
  const auto d = static_cast<Scalar>(decay);
  for (std::size_t i = 0; i < params.size(); ++i)
    ema.tensors[i] = d * ema.tensors[i] + (Scalar(1) - d) * params.tensors[i];
}

template <typename Scalar>
Latent<Scalar> interpolate(const Latent<Scalar>& x0, const Latent<Scalar>& x1, std::span<const double> t) {
  Latent<Scalar> out(x0.rows(), x0.cols());
  for (Eigen::Index b = 0; b < x0.rows(); ++b) {
    const auto tb = static_cast<Scalar>(t[b]);
    out.row(b) = (Scalar(1) - tb) * x0.row(b) + tb * x1.row(b);
  }
  return out;
}

template <typename Scalar>
Latent<Scalar> standard_normal(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  Latent<Scalar> z(rows, cols);
  for (Eigen::Index i = 0; i < z.size(); ++i) z.data()[i] = static_cast<Scalar>(rng.normal());
  return z;
}

template <typename Scalar>
Stage1Draw<Scalar> draw_stage1(const Latent<Scalar>& x1, Rng& rng) {
  Stage1Draw<Scalar> d;
  d.x0 = standard_normal<Scalar>(x1.rows(), x1.cols(), rng);
  d.t.resize(x1.rows());
  for (auto& t : d.t) t = rng.uniform();
  d.xt = interpolate<Scalar>(d.x0, x1, d.t);
  d.target = x1 - d.x0;
  return d;
}

template <typename Scalar>
Stage2Draw<Scalar> draw_stage2(const Latent<Scalar>& x1, double p, Rng& rng) {
  const auto batch = static_cast<std::size_t>(x1.rows());
  Stage2Draw<Scalar> d;
  d.x0 = standard_normal<Scalar>(x1.rows(), x1.cols(), rng);
  d.r.resize(batch);
  d.s.resize(batch);
  d.t.resize(batch);
  d.kappa.resize(batch);
  d.boundary.assign(batch, false);
  for (std::size_t b = 0; b < batch; ++b) {
    const double u0 = rng.uniform(), u1 = rng.uniform();
    d.r[b] = std::min(u0, u1);
    d.t[b] = std::max(u0, u1);
  }
  std::vector<std::size_t> order(batch);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  const auto n_boundary = static_cast<std::size_t>(std::floor(p * static_cast<double>(batch) + 1e-9));
  for (std::size_t i = 0; i < n_boundary; ++i) {
    d.boundary[order[i]] = true;
    d.r[order[i]] = d.t[order[i]];
  }
  for (std::size_t b = 0; b < batch; ++b) {
    d.kappa[b] = rng.uniform();
    d.s[b] = (1.0 - d.kappa[b]) * d.t[b] + d.kappa[b] * d.r[b];
  }
  d.xr = interpolate<Scalar>(d.x0, x1, d.r);
  return d;
}

template <typename Scalar>
Latent<Scalar> split_target(const VelocityField<Scalar>& field, const Stage2Draw<Scalar>& draw, const Latent<Scalar>& x1,
                            const PromptBatch<Scalar>& prompts) {
  Latent<Scalar> target = x1 - draw.x0;
  std::vector<int> rows;
  for (std::size_t b = 0; b < draw.boundary.size(); ++b)
    if (!draw.boundary[b] && draw.t[b] > draw.r[b]) rows.push_back(static_cast<int>(b));
  if (rows.empty()) return target;

  Latent<Scalar> xr(rows.size(), x1.cols());
  std::vector<double> r(rows.size()), s(rows.size()), t(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    xr.row(i) = draw.xr.row(rows[i]);
    r[i] = draw.r[rows[i]];
    s[i] = draw.s[rows[i]];
    t[i] = draw.t[rows[i]];
  }
  const PromptBatch<Scalar> sub = prompts.select(rows);
  const Latent<Scalar> u_rs = field(xr, r, s, sub);
  Latent<Scalar> xs(xr.rows(), xr.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) xs.row(i) = xr.row(i) + static_cast<Scalar>(s[i] - r[i]) * u_rs.row(i);
  const Latent<Scalar> u_st = field(xs, s, t, sub);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto k = static_cast<Scalar>(draw.kappa[rows[i]]);
    target.row(rows[i]) = (Scalar(1) - k) * u_rs.row(i) + k * u_st.row(i);
  }
  return target;
}

template <typename Scalar>
LossResult<Scalar> regression_loss(const VelocityModel<Scalar>& model, const Latent<Scalar>& x, std::span<const double> r,
                                   std::span<const double> t, const PromptBatch<Scalar>& prompts,
                                   const Latent<Scalar>& target) {
  ad::Tape<Scalar> tape;
  const auto bound = model.bind(tape);
  const auto pred = model.forward(tape, bound, x, r, t, prompts);
  const auto loss = ad::mse(pred, target);
  tape.backward(loss);
  LossResult<Scalar> out;
  out.loss = static_cast<double>(loss.value()(0, 0));
  out.grads.names = model.params().names;
  out.grads.tensors.reserve(bound.size());
  for (const auto& v : bound) out.grads.tensors.push_back(tape.grad(v));
  return out;
}

template <typename Scalar>
LossResult<Scalar> stage1_loss(const VelocityModel<Scalar>& model, const Latent<Scalar>& x1,
                               const PromptBatch<Scalar>& prompts, Rng& rng) {
  const Stage1Draw<Scalar> d = draw_stage1<Scalar>(x1, rng);
  return regression_loss<Scalar>(model, d.xt, d.t, d.t, prompts, d.target);
}

template <typename Scalar>
LossResult<Scalar> stage2_loss(const VelocityModel<Scalar>& model, const Latent<Scalar>& x1,
                               const PromptBatch<Scalar>& prompts, double p, Rng& rng) {
  const Stage2Draw<Scalar> d = draw_stage2<Scalar>(x1, p, rng);
  const VelocityField<Scalar> field = [&model](const Latent<Scalar>& x, std::span<const double> r,
                                               std::span<const double> t, const PromptBatch<Scalar>& pr) {
    return model.predict(x, r, t, pr);
  };
  const Latent<Scalar> target = split_target<Scalar>(field, d, x1, prompts);
  return regression_loss<Scalar>(model, d.xr, d.r, d.t, prompts, target);
}

Latent<float> target_latents(std::span<const DatasetRecord> records) {
  if (records.empty()) return {};
  const Eigen::Index n = records.front().target.phase_row.size();
  Latent<float> x(records.size(), 2 * n);
  for (std::size_t i = 0; i < records.size(); ++i) {
    x.row(i).leftCols(n) = records[i].target.phase_row.transpose().cast<float>();
    // Beam recovery ignores a positive per-user scale, so each amplitude row
    // is brought to unit RMS. Path loss would otherwise spread row levels
    // over decades and the loss would be dominated by a few near users.
    const double rms = records[i].target.amp_row.norm() / std::sqrt(static_cast<double>(n));
    x.row(i).rightCols(n) = (records[i].target.amp_row / (rms > 0.0 ? rms : 1.0)).transpose().cast<float>();
  }
  return x;
}

std::vector<Eigen::VectorXd> noiseless_reports(std::span<const DatasetRecord> records, int n_antennas) {
  const Codebook cb = dft_codebook(ArrayGeometry{n_antennas, 0.5});
  Rng unused(0);
  std::vector<Eigen::VectorXd> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back(measure_rsrp(r.channel.h, cb, std::nullopt, unused));
  return out;
}

PromptNormalization fit_normalization(std::span<const Eigen::VectorXd> reports) {
  double sum = 0.0, sum_sq = 0.0;
  std::size_t count = 0;
  for (const auto& c : reports)
    for (Eigen::Index i = 0; i < c.size(); ++i) {
      const double db = 10.0 * std::log10(c[i] + 1e-12);
      sum += db;
      sum_sq += db * db;
      ++count;
    }
  if (count == 0) throw ConfigError("no reports to normalize");
  PromptNormalization norm;
  norm.mean_db = sum / static_cast<double>(count);
  norm.std_db = std::sqrt(std::max(sum_sq / static_cast<double>(count) - norm.mean_db * norm.mean_db, 1e-12));
  return norm;
}

TrainResult train(const Dataset& dataset, const ModelConfig& model_config, const TrainConfig& cfg,
                  const EpochCallback& on_epoch) {
  model_config.validate();
  const int n_t = dataset.n_antennas();
  if (model_config.seq_len != n_t) throw ConfigError("model seq_len does not match the dataset's N_t");
  cfg.validate(n_t);
  const auto records = dataset.train();
  if (records.empty()) throw ConfigError("empty training split");

  const Latent<float> targets = target_latents(records);
  const std::vector<Eigen::VectorXd> reports = noiseless_reports(records, n_t);

  TrainResult result;
  Checkpoint& ckpt = result.final;
  ckpt.config = model_config;
  ckpt.normalization = fit_normalization(reports);
  ckpt.amp_scale = dataset.amp_scale;

  VelocityModel<float> model(model_config, init_parameters<float>(model_config, cfg.seed));
  ParameterSet<float> ema = model.params();
  auto opt = OptimizerState<float>::for_params(model.params());
  const AdamWOptions adam{cfg.learning_rate, cfg.weight_decay};

  Rng shuffle_rng(cfg.seed, /*stream=*/0x5417);
  Rng mask_rng(cfg.seed, /*stream=*/0x3a5c);
  Rng loss_rng(cfg.seed, /*stream=*/0x1055);
  std::vector<std::size_t> order(records.size());
  std::iota(order.begin(), order.end(), 0);
  std::int64_t step = 0;

  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    const int stage = epoch <= cfg.stage1_epochs ? 1 : 2;
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double epoch_loss = 0.0;
    int n_batches = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t bsz = std::min<std::size_t>(cfg.batch_size, order.size() - start);
      Latent<float> x1(bsz, targets.cols());
      const auto masks = stochastic_batch_masks(static_cast<int>(bsz), cfg.p_full, cfg.budget_set, n_t, mask_rng);
      std::vector<Prompt> prompts;
      prompts.reserve(bsz);
      for (std::size_t i = 0; i < bsz; ++i) {
        const std::size_t idx = order[start + i];
        x1.row(i) = targets.row(idx);
        prompts.push_back(apply_mask(reports[idx], masks[i]));
      }
      const auto batch = encode_prompts<float>(prompts, ckpt.normalization);
      const LossResult<float> lr = stage == 1 ? stage1_loss<float>(model, x1, batch, loss_rng)
                                              : stage2_loss<float>(model, x1, batch, cfg.p, loss_rng);
      adamw_step(model.params(), lr.grads, opt, adam);
      ema_update(ema, model.params(), cfg.ema_decay);
      result.history.push_back({epoch, ++step, stage, lr.loss});
      epoch_loss += lr.loss;
      ++n_batches;
    }
    if (!model.params().all_finite()) throw Error("training diverged (non-finite parameters)");
    if (on_epoch) on_epoch(epoch, stage, epoch_loss / std::max(1, n_batches));
    if (epoch == cfg.stage1_epochs) {
      result.teacher = ckpt;
      result.teacher.raw = model.params();
      result.teacher.ema = ema;
    }
  }
  ckpt.raw = model.params();
  ckpt.ema = std::move(ema);
  return result;
}

void write_loss_csv(std::span<const LossRecord> history, const std::filesystem::path& path) {
  std::ofstream os(path);
  if (!os) throw ConfigError("cannot open " + path.string() + " for writing");
  os << "epoch,step,stage,loss\n";
  char buf[64];
  for (const auto& r : history) {
    std::snprintf(buf, sizeof(buf), "%.9g", r.loss);
    os << r.epoch << ',' << r.step << ',' << r.stage << ',' << buf << '\n';
  }
}

#define FBBS_INSTANTIATE(S)                                                                                          \
  template void adamw_step<S>(ParameterSet<S>&, const ParameterSet<S>&, OptimizerState<S>&, const AdamWOptions&);   \
  template void ema_update<S>(ParameterSet<S>&, const ParameterSet<S>&, double);                                    \
  template Latent<S> interpolate<S>(const Latent<S>&, const Latent<S>&, std::span<const double>);                   \
  template Latent<S> standard_normal<S>(Eigen::Index, Eigen::Index, Rng&);                                          \
  template Stage1Draw<S> draw_stage1<S>(const Latent<S>&, Rng&);                                                    \
  template Stage2Draw<S> draw_stage2<S>(const Latent<S>&, double, Rng&);                                            \
  template Latent<S> split_target<S>(const VelocityField<S>&, const Stage2Draw<S>&, const Latent<S>&,               \
                                     const PromptBatch<S>&);                                                         \
  template LossResult<S> regression_loss<S>(const VelocityModel<S>&, const Latent<S>&, std::span<const double>,     \
                                            std::span<const double>, const PromptBatch<S>&, const Latent<S>&);      \
  template LossResult<S> stage1_loss<S>(const VelocityModel<S>&, const Latent<S>&, const PromptBatch<S>&, Rng&);   \
  template LossResult<S> stage2_loss<S>(const VelocityModel<S>&, const Latent<S>&, const PromptBatch<S>&, double,  \
                                        Rng&);

FBBS_INSTANTIATE(float)
FBBS_INSTANTIATE(double)
#undef FBBS_INSTANTIATE

}  // namespace fbbs
