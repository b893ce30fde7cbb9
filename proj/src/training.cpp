// SPDX-License-Identifier: Apache-2.0
#include "nca/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "nca/error.hpp"
#include "nca/loss.hpp"

namespace nca {

OptState OptState::fresh(const RuleParams& params, const AdamWHyper& hyper) {
  return OptState{Tensor(params.w1.shape()), Tensor(params.b1.shape()), Tensor(params.w2.shape()),
                  Tensor(params.w1.shape()), Tensor(params.b1.shape()), Tensor(params.w2.shape()),
                  0, hyper};
}

namespace {

void adamw_tensor(Tensor& theta, const Tensor& grad, Tensor& m, Tensor& v, const AdamWHyper& h,
                  double bias1, double bias2) {
  if (theta.shape() != grad.shape() || theta.shape() != m.shape() || theta.shape() != v.shape())
    throw ShapeError("adamw_step: parameter/gradient/moment shapes differ");
  for (std::size_t i = 0; i < theta.size(); ++i) {
    const double g = grad[i];
    const double mi = h.beta1 * m[i] + (1.0 - h.beta1) * g;
    const double vi = h.beta2 * v[i] + (1.0 - h.beta2) * g * g;
    const double m_hat = mi / bias1;
    const double v_hat = vi / bias2;
    const double th = theta[i];
    theta[i] = static_cast<float>(th - h.lr * (m_hat / (std::sqrt(v_hat) + h.eps) +
                                               h.weight_decay * th));
    m[i] = static_cast<float>(mi);
    v[i] = static_cast<float>(vi);
  }
}

}  // namespace

void adamw_step(RuleParams& params, const Grads& grads, OptState& opt) {
  if (!grads.all_finite()) throw DivergenceError("adamw_step: non-finite gradient");
  opt.t += 1;
  const double bias1 = 1.0 - std::pow(opt.hyper.beta1, static_cast<double>(opt.t));
  const double bias2 = 1.0 - std::pow(opt.hyper.beta2, static_cast<double>(opt.t));
  adamw_tensor(params.w1, grads.g_w1, opt.m_w1, opt.v_w1, opt.hyper, bias1, bias2);
  adamw_tensor(params.b1, grads.g_b1, opt.m_b1, opt.v_b1, opt.hyper, bias1, bias2);
  adamw_tensor(params.w2, grads.g_w2, opt.m_w2, opt.v_w2, opt.hyper, bias1, bias2);
  if (!params.w1.all_finite() || !params.b1.all_finite() || !params.w2.all_finite())
    throw DivergenceError("adamw_step: non-finite parameter update");
}

void clip_global_norm(Grads& grads, double max_norm) {
  if (max_norm <= 0.0) return;
  const double norm = grads.global_norm();
  if (norm > max_norm) grads.scale(static_cast<float>(max_norm / norm));
}

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (t_min < 1 || t_max < t_min) throw ConfigError("need 1 <= t_min <= t_max");
  if (t_eval < 0) throw ConfigError("t_eval must be >= 0");
  if (!(adam.lr >= 0.0)) throw ConfigError("lr must be >= 0");
  if (!(adam.beta1 >= 0.0 && adam.beta1 < 1.0 && adam.beta2 >= 0.0 && adam.beta2 < 1.0))
    throw ConfigError("AdamW betas must be in [0, 1)");
  if (!(adam.eps > 0.0) || !(adam.weight_decay >= 0.0))
    throw ConfigError("AdamW eps must be > 0 and weight_decay >= 0");
  if (!(clip_norm >= 0.0)) throw ConfigError("clip_norm must be >= 0");
}

std::uint64_t eval_fire_seed(std::uint64_t seed, const std::string& sample_id) {
  return derive_seed(seed, "eval-fire", {detail::fnv1a(sample_id)});
}

double train_epoch(RuleParams& params, OptState& opt, const std::vector<Sample>& data,
                   const TrainConfig& cfg, int epoch) {
  cfg.validate();
  if (data.empty()) throw ConfigError("train_epoch: no training samples");
  const auto e = static_cast<std::uint64_t>(epoch);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng shuffle = make_rng(cfg.seed, "shuffle", {e});
  std::shuffle(order.begin(), order.end(), shuffle);
  Rng iterations = make_rng(cfg.seed, "iterations", {e});

  const std::size_t n_batches = (data.size() + cfg.batch_size - 1) / cfg.batch_size;
  const auto span = static_cast<std::uint64_t>(cfg.t_max - cfg.t_min + 1);
  const std::size_t n_cls = params.config.n_cls;
  double total = 0.0;
  for (std::size_t b = 0; b < n_batches; ++b) {
    const int steps = cfg.t_min + static_cast<int>(iterations() % span);
    const std::size_t begin = b * cfg.batch_size;
    const std::size_t end = std::min(begin + cfg.batch_size, data.size());
    const float weight = 1.0f / static_cast<float>(end - begin);

    Grads acc = Grads::zeros_like(params);
    double batch_loss = 0.0;
    for (std::size_t k = begin; k < end; ++k) {
      const Sample& s = data[order[k]];
      Rng fire = make_rng(cfg.seed, "fire", {e, b, k - begin});
      try {
        const ForwardResult fwd =
            forward_with_tape(seed_grid(s.image, params.config), params, steps, fire,
                              cfg.tape_budget);
        const LossAndGrad lg = dice_objective(fwd.final, one_hot(s.mask, n_cls));
        acc.add_scaled(backward(fwd.tape, params, lg.grad_state), weight);
        batch_loss += lg.loss;
      } catch (const DivergenceError& err) {
        throw DivergenceError("epoch " + std::to_string(epoch) + ", batch " + std::to_string(b) +
                                  ", sample " + s.sample_id + ": " + err.what(),
                              err.step());
      }
    }
    clip_global_norm(acc, cfg.clip_norm);
    adamw_step(params, acc, opt);
    total += batch_loss / static_cast<double>(end - begin);
  }
  return total / static_cast<double>(n_batches);
}

double validation_loss(const RuleParams& params, const std::vector<Sample>& samples, int t_eval,
                       std::uint64_t seed) {
  if (samples.empty()) throw ConfigError("validation_loss: no samples");
  double total = 0.0;
  for (const Sample& s : samples) {
    Rng fire(eval_fire_seed(seed, s.sample_id));
    const CellGrid out = rollout(seed_grid(s.image, params.config), params, t_eval, fire);
    total += dice_loss(softmax_over_channels(read_class_logits(out)),
                       one_hot(s.mask, params.config.n_cls));
  }
  return total / static_cast<double>(samples.size());
}

std::size_t select_best(std::span<const double> history) {
  if (history.empty()) throw ConfigError("select_best: empty history");
  std::size_t best = 0;
  for (std::size_t i = 1; i < history.size(); ++i)
    if (history[i] < history[best]) best = i;
  return best;
}

TrainLog::TrainLog(const std::filesystem::path& path, std::uint64_t seed, std::string run_id,
                   bool append)
    : seed_(seed), run_id_(std::move(run_id)) {
  const bool fresh = !append || !std::filesystem::exists(path);
  out_.open(path, fresh ? std::ios::trunc : std::ios::app);
  if (!out_) throw IoError("cannot open training log " + path.string());
  if (fresh) out_ << "epoch,split,metric,value,seed,run_id\n";
}

void TrainLog::record(int epoch, const std::string& split, const std::string& metric,
                      double value) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.9g", value);
  out_ << epoch << ',' << split << ',' << metric << ',' << buf << ',' << seed_ << ','
       << run_id_ << '\n';
  out_.flush();
  if (!out_) throw IoError("training log write failed");
}

Sections opt_sections(const OptState& opt, int epochs_done, int best_epoch, double best_val) {
  return {{"adam.m.w1", opt.m_w1},
          {"adam.m.b1", opt.m_b1},
          {"adam.m.w2", opt.m_w2},
          {"adam.v.w1", opt.v_w1},
          {"adam.v.b1", opt.v_b1},
          {"adam.v.w2", opt.v_w2},
          {"progress", Tensor({4}, {static_cast<float>(epochs_done), static_cast<float>(opt.t),
                                    static_cast<float>(best_epoch),
                                    static_cast<float>(best_val)})}};
}

std::optional<ResumeState> resume_state(const Checkpoint& ckpt, const AdamWHyper& hyper) {
  const Tensor* progress = find_section(ckpt.extra, "progress");
  if (!progress) return std::nullopt;
  ResumeState r{OptState::fresh(ckpt.params, hyper)};
  auto take = [&](const char* name, Tensor& dst) {
    const Tensor* t = find_section(ckpt.extra, name);
    if (!t || t->shape() != dst.shape())
      throw CheckpointError(std::string("checkpoint optimizer section '") + name +
                            "' missing or misshaped");
    dst = *t;
  };
  take("adam.m.w1", r.opt.m_w1);
  take("adam.m.b1", r.opt.m_b1);
  take("adam.m.w2", r.opt.m_w2);
  take("adam.v.w1", r.opt.v_w1);
  take("adam.v.b1", r.opt.v_b1);
  take("adam.v.w2", r.opt.v_w2);
  if (progress->shape() != Shape{4}) throw CheckpointError("checkpoint progress misshaped");
  r.epochs_done = static_cast<int>((*progress)[0]);
  r.opt.t = static_cast<std::uint64_t>((*progress)[1]);
  r.best_epoch = static_cast<int>((*progress)[2]);
  r.best_val = (*progress)[3];
  return r;
}

TrainResult train_model(const RuleParams& init, const std::vector<Sample>& train,
                        const std::vector<Sample>& val, const TrainConfig& cfg,
                        const TrainHooks& hooks, const std::optional<ResumeState>& resume,
                        const std::optional<RuleParams>& resume_best) {
  cfg.validate();
  if (val.empty()) throw ConfigError("train_model: model selection needs validation samples");
  TrainResult result{init, init, -1, {}, false, {}};
  RuleParams& params = result.last;
  OptState opt = resume ? resume->opt : OptState::fresh(params, cfg.adam);
  opt.hyper = cfg.adam;
  int start = 0;
  // Selection history. Values are rounded to float so a resumed run, which
  // only sees the checkpointed best, compares exactly like an unbroken one.
  std::vector<double> history;
  if (resume && resume->best_epoch >= 0) {
    start = resume->epochs_done;
    result.best_epoch = resume->best_epoch;
    result.best = resume_best.value_or(init);
    history.push_back(static_cast<float>(resume->best_val));
  }
  const std::uint64_t val_seed = derive_seed(cfg.seed, "validation");

  for (int epoch = start; epoch < cfg.epochs; ++epoch) {
    EpochStats stats{epoch, 0.0, 0.0};
    try {
      stats.train_loss = train_epoch(params, opt, train, cfg, epoch);
      stats.val_loss = validation_loss(params, val, cfg.t_eval, val_seed);
    } catch (const DivergenceError& e) {
      result.diverged = true;
      result.divergence = e.what();
      break;
    }
    history.push_back(static_cast<float>(stats.val_loss));
    const bool is_best = select_best(history) == history.size() - 1;
    if (is_best) {
      result.best = params;
      result.best_epoch = epoch;
    }
    result.history.push_back(stats);
    if (hooks.on_epoch) hooks.on_epoch(stats, params, opt, is_best);
  }
  return result;
}

}  // namespace nca
