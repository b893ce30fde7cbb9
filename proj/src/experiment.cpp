// SPDX-License-Identifier: Apache-2.0
#include "nca/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <ostream>
#include <sstream>

#include "nca/error.hpp"
#include "nca/loss.hpp"

namespace nca {

namespace {

LodoSplit split_sources(const Manifest& manifest, const std::vector<std::string>& sources,
                        const std::string& target, double val_fraction, std::uint64_t seed) {
  if (!(val_fraction >= 0.0 && val_fraction < 1.0))
    throw ConfigError("val_fraction must be in [0, 1)");
  LodoSplit split{target, {}, {}, {}};
  std::vector<std::size_t> train_idx, val_idx;
  for (const auto& domain : sources) {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < manifest.size(); ++i)
      if (manifest[i].domain == domain) members.push_back(i);
    if (members.empty()) throw ConfigError("domain '" + domain + "' has no samples");
    std::sort(members.begin(), members.end(), [&](std::size_t a, std::size_t b) {
      return manifest[a].sample_id < manifest[b].sample_id;
    });
    Rng rng = make_rng(seed, "split", {detail::fnv1a(domain)});
    std::shuffle(members.begin(), members.end(), rng);
    const auto n_val = static_cast<std::size_t>(
        std::llround(val_fraction * static_cast<double>(members.size())));
    val_idx.insert(val_idx.end(), members.begin(), members.begin() + n_val);
    train_idx.insert(train_idx.end(), members.begin() + n_val, members.end());
  }
  std::sort(train_idx.begin(), train_idx.end());
  std::sort(val_idx.begin(), val_idx.end());
  for (std::size_t i : train_idx) split.train.push_back(manifest[i]);
  for (std::size_t i : val_idx) split.iid_val.push_back(manifest[i]);
  if (!target.empty())
    for (const auto& e : manifest)
      if (e.domain == target) split.ood_test.push_back(e);
  if (split.train.empty()) throw ConfigError("split leaves no training samples");
  return split;
}

double mean_of(const std::vector<double>& v) {
  if (v.empty()) return std::nan("");
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

ReportRow make_row(const std::vector<double>& ood, const std::vector<double>& iid) {
  ReportRow row{mean_of(ood), mean_of(iid), 0.0, static_cast<int>(ood.size())};
  row.gap = row.iid - row.ood;
  return row;
}

std::string fmt(double v) {
  if (std::isnan(v)) return "n/a";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3f", v);
  return buf;
}

}  // namespace

LodoSplit make_lodo_splits(const Manifest& manifest, const std::string& target_domain,
                           double val_fraction, std::uint64_t seed) {
  const auto domains = manifest_domains(manifest);
  if (std::find(domains.begin(), domains.end(), target_domain) == domains.end())
    throw ConfigError("target domain '" + target_domain + "' has no samples");
  std::vector<std::string> sources;
  for (const auto& d : domains)
    if (d != target_domain) sources.push_back(d);
  if (sources.size() < 2)
    throw ConfigError("leave-one-domain-out needs at least two source domains");
  return split_sources(manifest, sources, target_domain, val_fraction, seed);
}

LodoSplit make_source_split(const Manifest& manifest, double val_fraction, std::uint64_t seed) {
  const auto domains = manifest_domains(manifest);
  if (domains.empty()) throw ConfigError("empty manifest");
  return split_sources(manifest, domains, "", val_fraction, seed);
}

Tensor predict_labels(const RuleParams& params, const Tensor& image, int t_eval,
                      std::uint64_t fire_seed) {
  Rng fire(fire_seed);
  const CellGrid out = rollout(seed_grid(image, params.config), params, t_eval, fire);
  return argmax_over_channels(read_class_logits(out));
}

std::vector<SampleEval> evaluate_samples(const RuleParams& params,
                                         const std::vector<Sample>& samples, int t_eval,
                                         std::uint64_t seed) {
  if (samples.empty()) throw ConfigError("evaluate: empty sample list");
  std::vector<SampleEval> out;
  out.reserve(samples.size());
  for (const Sample& s : samples) {
    const Tensor pred =
        predict_labels(params, s.image, t_eval, eval_fire_seed(seed, s.sample_id));
    const DiceScore score = dice_score(pred, s.mask, params.config.n_cls);
    out.push_back({s.sample_id, s.domain, score.per_class, score.mean_foreground});
  }
  return out;
}

double evaluate(const RuleParams& params, const std::vector<Sample>& samples, int t_eval,
                std::uint64_t seed) {
  double total = 0.0;
  for (const auto& e : evaluate_samples(params, samples, t_eval, seed)) total += e.mean_foreground;
  return total / static_cast<double>(samples.size());
}

ExperimentReport summarize(std::vector<RunRecord> runs, const std::vector<std::string>& targets,
                           int n_runs) {
  ExperimentReport report;
  report.n_runs = n_runs;
  std::vector<double> raw_ood, raw_iid, f_ood, f_iid;
  for (const auto& target : targets) {
    std::vector<double> ood, iid, ood_ok, iid_ok;
    for (const auto& r : runs) {
      if (r.target != target) continue;
      ood.push_back(r.ood);
      iid.push_back(r.iid);
      if (!r.excluded) {
        ood_ok.push_back(r.ood);
        iid_ok.push_back(r.iid);
      }
    }
    TargetSummary t{target, make_row(ood, iid), make_row(ood_ok, iid_ok)};
    if (t.raw.runs > 0) {
      raw_ood.push_back(t.raw.ood);
      raw_iid.push_back(t.raw.iid);
    }
    if (t.filtered.runs > 0) {
      f_ood.push_back(t.filtered.ood);
      f_iid.push_back(t.filtered.iid);
    }
    report.targets.push_back(std::move(t));
  }
  report.raw = make_row(raw_ood, raw_iid);
  report.filtered = make_row(f_ood, f_iid);
  report.runs = std::move(runs);
  return report;
}

ExperimentReport run_lodo(const SampleSource& source, const ExperimentConfig& config,
                          const ProgressFn& progress) {
  config.model.validate();
  config.train.validate();
  if (config.n_runs < 1) throw ConfigError("n_runs must be >= 1");
  const Manifest& manifest = source.manifest();
  const auto domains = manifest_domains(manifest);
  const std::vector<std::string> targets = config.targets.empty() ? domains : config.targets;

  std::map<std::string, Sample> cache;
  for (const auto& e : manifest) cache.emplace(e.sample_id, source.load(e));
  auto gather = [&](const Manifest& entries) {
    std::vector<Sample> out;
    for (const auto& e : entries) out.push_back(cache.at(e.sample_id));
    return out;
  };

  std::vector<RunRecord> runs;
  for (const auto& target : targets) {
    for (int r = 0; r < config.n_runs; ++r) {
      const std::uint64_t run_seed =
          derive_seed(config.seed, "run", {detail::fnv1a(target), static_cast<std::uint64_t>(r)});
      const LodoSplit split = make_lodo_splits(manifest, target, config.val_fraction, run_seed);
      const std::vector<Sample> train = gather(split.train);
      const std::vector<Sample> val = gather(split.iid_val);

      Rng init_rng = make_rng(run_seed, "init");
      const RuleParams init = RuleParams::init(config.model, init_rng);
      TrainConfig tc = config.train;
      tc.seed = run_seed;

      std::optional<TrainLog> log;
      std::filesystem::path run_dir;
      if (config.out_dir) {
        run_dir = *config.out_dir / "runs" / target / ("run" + std::to_string(r));
        std::filesystem::create_directories(run_dir);
        log.emplace(run_dir / "train_log.csv", run_seed, target + "/" + std::to_string(r));
      }
      TrainHooks hooks;
      hooks.on_epoch = [&](const EpochStats& s, const RuleParams&, const OptState&, bool) {
        if (log) {
          log->record(s.epoch, "train", "dice_loss", s.train_loss);
          log->record(s.epoch, "iid_val", "dice_loss", s.val_loss);
        }
        if (progress) {
          char buf[160];
          std::snprintf(buf, sizeof buf, "[%s run %d] epoch %d train %.4f val %.4f",
                        target.c_str(), r, s.epoch, s.train_loss, s.val_loss);
          progress(buf);
        }
      };

      // Model selection sees only the source-domain validation split.
      TrainResult result = train_model(init, train, val, tc, hooks);
      RunRecord rec{target, r, 0.0, 0.0, result.diverged, result.divergence, result.best_epoch};
      try {
        rec.iid = evaluate(result.best, val, tc.t_eval, run_seed);
        rec.ood = evaluate(result.best, gather(split.ood_test), tc.t_eval, run_seed);
      } catch (const DivergenceError& e) {
        rec.excluded = true;
        rec.note = std::string("evaluation diverged: ") + e.what();
      }
      if (config.out_dir) {
        save_checkpoint(run_dir / "best.ncat", Checkpoint{result.best, {}});
      }
      if (progress) {
        char buf[200];
        std::snprintf(buf, sizeof buf, "[%s run %d] best epoch %d  IID %.4f  OOD %.4f%s",
                      target.c_str(), r, rec.best_epoch, rec.iid, rec.ood,
                      rec.excluded ? "  (excluded)" : "");
        progress(buf);
      }
      runs.push_back(std::move(rec));
    }
  }
  return summarize(std::move(runs), targets, config.n_runs);
}

void write_report_csv(std::ostream& out, const ExperimentReport& report) {
  out << "target,run,split,dice,excluded\n";
  char buf[64];
  for (const auto& r : report.runs) {
    for (const auto& [split, value] : {std::pair{"iid", r.iid}, std::pair{"ood", r.ood}}) {
      std::snprintf(buf, sizeof buf, "%.9g", value);
      out << r.target << ',' << r.run << ',' << split << ',' << buf << ','
          << (r.excluded ? 1 : 0) << '\n';
    }
  }
}

std::string format_report_table(const ExperimentReport& report) {
  std::ostringstream os;
  char buf[64];
  os << "Out-of-domain foreground Dice per target domain (" << report.n_runs
     << " run(s) per target)\n\n";
  std::snprintf(buf, sizeof buf, "%-10s", "");
  os << buf;
  for (const auto& t : report.targets) {
    std::snprintf(buf, sizeof buf, " %10s", t.target.c_str());
    os << buf;
  }
  os << " | Mean OOD   Mean IID   Mean Gap\n";
  for (const auto& [label, pick] :
       {std::pair<const char*, bool>{"raw", true}, std::pair<const char*, bool>{"filtered", false}}) {
    std::snprintf(buf, sizeof buf, "%-10s", label);
    os << buf;
    for (const auto& t : report.targets) {
      std::snprintf(buf, sizeof buf, " %10s", fmt(pick ? t.raw.ood : t.filtered.ood).c_str());
      os << buf;
    }
    const ReportRow& agg = pick ? report.raw : report.filtered;
    std::snprintf(buf, sizeof buf, " | %8s   %8s   %8s\n", fmt(agg.ood).c_str(),
                  fmt(agg.iid).c_str(), fmt(agg.gap).c_str());
    os << buf;
  }
  os << "\nPer target (raw):\n";
  for (const auto& t : report.targets) {
    std::snprintf(buf, sizeof buf, "  %-10s", t.target.c_str());
    os << buf << " IID " << fmt(t.raw.iid) << "  OOD " << fmt(t.raw.ood) << "  gap "
       << fmt(t.raw.gap) << '\n';
  }
  int excluded = 0;
  for (const auto& r : report.runs) {
    if (!r.excluded) continue;
    if (excluded++ == 0) os << "\nExcluded runs:\n";
    os << "  " << r.target << " run " << r.run << ": " << r.note << '\n';
  }
  return os.str();
}

}  // namespace nca
