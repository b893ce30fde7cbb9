// SPDX-License-Identifier: Apache-2.0
//
// Leave-one-domain-out protocol: train on every domain but one, select the
// model on held-out source data (IID), test on the excluded domain (OOD).
#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "nca/dataset.hpp"
#include "nca/nca.hpp"
#include "nca/training.hpp"

namespace nca {

struct LodoSplit {
  std::string target_domain;
  Manifest train;
  Manifest iid_val;
  Manifest ood_test;
};

/// Holds out round(val_fraction * n) samples of every source domain for IID
/// validation; the whole target domain becomes the OOD test set.
LodoSplit make_lodo_splits(const Manifest& manifest, const std::string& target_domain,
                           double val_fraction, std::uint64_t seed);

/// Same as make_lodo_splits but with every domain as a source.
LodoSplit make_source_split(const Manifest& manifest, double val_fraction, std::uint64_t seed);

/// Argmax label map after a t_eval-step rollout (ties to the lowest class).
Tensor predict_labels(const RuleParams& params, const Tensor& image, int t_eval,
                      std::uint64_t fire_seed);

struct SampleEval {
  std::string sample_id;
  std::string domain;
  std::vector<double> per_class;
  double mean_foreground = 0.0;
};

std::vector<SampleEval> evaluate_samples(const RuleParams& params,
                                         const std::vector<Sample>& samples, int t_eval,
                                         std::uint64_t seed);

/// Mean foreground Dice over samples.
double evaluate(const RuleParams& params, const std::vector<Sample>& samples, int t_eval,
                std::uint64_t seed);

struct RunRecord {
  std::string target;
  int run = 0;
  double iid = 0.0;
  double ood = 0.0;
  bool excluded = false;
  std::string note;
  int best_epoch = -1;
};

struct ReportRow {
  double ood = 0.0;
  double iid = 0.0;
  double gap = 0.0;  // iid - ood
  int runs = 0;
};

struct TargetSummary {
  std::string target;
  ReportRow raw;       // every run, failures included
  ReportRow filtered;  // excluded runs dropped
};

struct ExperimentReport {
  std::vector<RunRecord> runs;
  std::vector<TargetSummary> targets;
  ReportRow raw;
  ReportRow filtered;
  int n_runs = 0;
};

/// Aggregates run records: per-target means over runs, then means over
/// targets. Gap is always IID minus OOD.
ExperimentReport summarize(std::vector<RunRecord> runs, const std::vector<std::string>& targets,
                           int n_runs);

struct ExperimentConfig {
  NcaConfig model;
  TrainConfig train;
  int n_runs = 5;
  std::vector<std::string> targets;  // empty: every domain
  double val_fraction = 0.2;
  std::uint64_t seed = 0;
  /// When set, per-run logs and best checkpoints go under <out_dir>/runs/.
  std::optional<std::filesystem::path> out_dir;
};

using ProgressFn = std::function<void(const std::string&)>;

ExperimentReport run_lodo(const SampleSource& source, const ExperimentConfig& config,
                          const ProgressFn& progress = {});

/// CSV: target,run,split,dice,excluded
void write_report_csv(std::ostream& out, const ExperimentReport& report);

/// Table with one OOD column per target then Mean OOD, Mean IID, Mean Gap.
std::string format_report_table(const ExperimentReport& report);

}  // namespace nca
