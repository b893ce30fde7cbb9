// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "nca/bptt.hpp"
#include "nca/checkpoint.hpp"
#include "nca/nca.hpp"
#include "nca/sample.hpp"

namespace nca {

struct AdamWHyper {
  double lr = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

struct OptState {
  Tensor m_w1, m_b1, m_w2;
  Tensor v_w1, v_b1, v_w2;
  std::uint64_t t = 0;
  AdamWHyper hyper;

  static OptState fresh(const RuleParams& params, const AdamWHyper& hyper);
};

/// Decoupled-weight-decay Adam:
///   m <- b1 m + (1 - b1) g,  v <- b2 v + (1 - b2) g^2,
///   theta <- theta - lr (m_hat / (sqrt(v_hat) + eps) + wd theta)
/// with bias-corrected m_hat, v_hat. Per-element arithmetic is done in double
/// and rounded once. Only w1, b1 and w2 are touched.
void adamw_step(RuleParams& params, const Grads& grads, OptState& opt);

/// Scales `grads` down to `max_norm` if its global norm exceeds it.
void clip_global_norm(Grads& grads, double max_norm);

struct TrainConfig {
  int epochs = 100;
  std::size_t batch_size = 32;
  int t_min = 64;
  int t_max = 256;
  int t_eval = 128;
  AdamWHyper adam;
  double clip_norm = 0.0;  // global-norm clipping, 0 disables
  std::uint64_t seed = 0;
  bool reproducible = true;
  std::size_t tape_budget = kDefaultTapeBudget;

  void validate() const;
};

/// Fire-mask seed for evaluating one sample; depends only on (seed, id).
std::uint64_t eval_fire_seed(std::uint64_t seed, const std::string& sample_id);

/// One pass over `data` in a seeded shuffled order. Each batch draws its step
/// count uniformly from [t_min, t_max], back-propagates the mean Dice loss and
/// takes one AdamW step. Returns the mean batch loss.
double train_epoch(RuleParams& params, OptState& opt, const std::vector<Sample>& data,
                   const TrainConfig& cfg, int epoch);

/// Mean soft Dice loss at cfg.t_eval steps.
double validation_loss(const RuleParams& params, const std::vector<Sample>& samples, int t_eval,
                       std::uint64_t seed);

/// Index of the minimum; ties resolve to the earliest epoch.
std::size_t select_best(std::span<const double> history);

struct EpochStats {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
};

/// Append-only CSV: epoch,split,metric,value,seed,run_id
class TrainLog {
 public:
  TrainLog(const std::filesystem::path& path, std::uint64_t seed, std::string run_id,
           bool append = false);
  void record(int epoch, const std::string& split, const std::string& metric, double value);

 private:
  std::ofstream out_;
  std::uint64_t seed_;
  std::string run_id_;
};

/// Optimizer moments and progress packed into checkpoint sections.
Sections opt_sections(const OptState& opt, int epochs_done, int best_epoch, double best_val);
struct ResumeState {
  OptState opt;
  int epochs_done = 0;
  int best_epoch = -1;
  double best_val = 0.0;
};
std::optional<ResumeState> resume_state(const Checkpoint& ckpt, const AdamWHyper& hyper);

struct TrainResult {
  RuleParams best;
  RuleParams last;
  int best_epoch = -1;
  std::vector<EpochStats> history;
  bool diverged = false;
  std::string divergence;
};

struct TrainHooks {
  /// After every epoch, with the current params and optimizer state.
  std::function<void(const EpochStats&, const RuleParams&, const OptState&, bool is_best)> on_epoch;
};

/// Trains from `init` (or a resume state) and keeps the epoch with the lowest
/// validation Dice loss. The validation set is the only data used for model
/// selection. A divergence stops training; the best model so far is kept
/// and `diverged` is set.
TrainResult train_model(const RuleParams& init, const std::vector<Sample>& train,
                        const std::vector<Sample>& val, const TrainConfig& cfg,
                        const TrainHooks& hooks = {},
                        const std::optional<ResumeState>& resume = std::nullopt,
                        const std::optional<RuleParams>& resume_best = std::nullopt);

}  // namespace nca
