// SPDX-License-Identifier: Apache-2.0
#include "commands.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cerrno>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>

#include "nca/bptt.hpp"
#include "nca/checkpoint.hpp"
#include "nca/datagen.hpp"
#include "nca/dataset.hpp"
#include "nca/error.hpp"
#include "nca/experiment.hpp"
#include "nca/nca.hpp"
#include "nca/tensor_io.hpp"
#include "nca/training.hpp"

namespace fs = std::filesystem;

namespace nca::cli {

namespace {

enum class Kind { Int, UInt, Real, Bool, Text, List };

struct Key {
  std::string name;
  Kind kind;
  std::string fallback;
  std::string help;
};

const char* const kDomainFields[] = {"gamma",       "contrast",     "brightness",
                                     "noise_sigma", "blur_radius", "texture_freq"};

// domain.<name>.<field>
std::optional<std::pair<std::string, std::string>> split_domain_key(const std::string& key) {
  if (key.rfind("domain.", 0) != 0) return std::nullopt;
  const std::string rest = key.substr(7);
  const auto dot = rest.rfind('.');
  if (dot == std::string::npos || dot == 0) return std::nullopt;
  const std::string field = rest.substr(dot + 1);
  if (std::find(std::begin(kDomainFields), std::end(kDomainFields), field) ==
      std::end(kDomainFields))
    return std::nullopt;
  return std::pair{rest.substr(0, dot), field};
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(s);
  while (std::getline(in, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

class Settings {
 public:
  std::map<std::string, std::vector<std::string>> values;
  std::map<std::string, Kind> kinds;
  std::vector<std::pair<std::string, std::string>> domain_overrides;

  const std::vector<std::string>& raw(const std::string& key) const {
    const auto it = values.find(key);
    if (it == values.end()) throw ConfigError("internal: undeclared key " + key);
    return it->second;
  }
  std::string text(const std::string& key) const {
    const auto& v = raw(key);
    return v.empty() ? std::string{} : v.front();
  }
  std::vector<std::string> list(const std::string& key) const { return raw(key); }

  std::int64_t integer(const std::string& key) const {
    const std::string s = text(key);
    std::int64_t v = 0;
    const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || p != s.data() + s.size())
      throw ConfigError("'" + key + "' expects an integer, got '" + s + "'");
    return v;
  }
  std::uint64_t unsigned_integer(const std::string& key) const {
    const std::string s = text(key);
    std::uint64_t v = 0;
    const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || p != s.data() + s.size())
      throw ConfigError("'" + key + "' expects a non-negative integer, got '" + s + "'");
    return v;
  }
  std::size_t size(const std::string& key) const {
    return static_cast<std::size_t>(unsigned_integer(key));
  }
  int small_int(const std::string& key) const {
    const std::int64_t v = integer(key);
    if (v < -1'000'000'000 || v > 1'000'000'000) throw ConfigError("'" + key + "' out of range");
    return static_cast<int>(v);
  }
  double real(const std::string& key) const { return parse_real(key, text(key)); }
  bool flag(const std::string& key) const {
    const std::string s = text(key);
    if (s == "true" || s == "1" || s == "on" || s == "yes") return true;
    if (s == "false" || s == "0" || s == "off" || s == "no") return false;
    throw ConfigError("'" + key + "' expects true or false, got '" + s + "'");
  }

  static double parse_real(const std::string& key, const std::string& s) {
    errno = 0;
    char* end = nullptr;
    const double v = std::strtod(s.c_str(), &end);
    if (s.empty() || end != s.c_str() + s.size() || errno == ERANGE || !std::isfinite(v))
      throw ConfigError("'" + key + "' expects a number, got '" + s + "'");
    return v;
  }
};

struct Io {
  std::ostream& out;
  std::ostream& err;
};

using Handler = std::function<int(const Settings&, Io&)>;

struct Command {
  Command(std::string n, std::string a, std::vector<Key> k, bool overrides, Handler h)
      : name(std::move(n)), about(std::move(a)), keys(std::move(k)),
        domain_overrides(overrides), run(std::move(h)) {}

  std::string name;
  std::string about;
  std::vector<Key> keys;
  bool domain_overrides = false;
  Handler run;

  CLI::App* app = nullptr;
  std::map<std::string, CLI::Option*> options;
  std::map<std::string, std::vector<std::string>> cli_values;
  std::map<std::string, bool> cli_flags;
  std::string config_path;
};

// ---------------------------------------------------------------------------
// Key tables

std::vector<Key> common_keys(const std::string& out_default) {
  return {
      {"seed", Kind::UInt, "0", "root seed for every random stream"},
      {"out", Kind::Text, out_default, "output directory"},
      {"reproducible", Kind::Bool, "true",
       "ordered reductions; every kernel already reduces in a fixed order"},
  };
}

std::vector<Key> model_keys() {
  return {
      {"state_dim", Kind::UInt, "32", "cell state channels D"},
      {"hidden", Kind::UInt, "128", "hidden units H"},
      {"n_cls", Kind::UInt, "4", "class channels, background included"},
      {"fire_rate", Kind::Real, "0.5", "per-cell update probability"},
  };
}

std::vector<Key> train_keys() {
  return {
      {"epochs", Kind::Int, "100", "training epochs"},
      {"batch_size", Kind::UInt, "32", "samples per optimizer step"},
      {"t_min", Kind::Int, "64", "fewest steps per training batch"},
      {"t_max", Kind::Int, "256", "most steps per training batch"},
      {"t_eval", Kind::Int, "128", "steps for validation and evaluation"},
      {"lr", Kind::Real, "5e-4", "AdamW learning rate"},
      {"beta1", Kind::Real, "0.9", "AdamW beta1"},
      {"beta2", Kind::Real, "0.999", "AdamW beta2"},
      {"adam_eps", Kind::Real, "1e-8", "AdamW epsilon"},
      {"weight_decay", Kind::Real, "0.01", "AdamW decoupled weight decay"},
      {"clip_norm", Kind::Real, "0", "global gradient-norm clip, 0 disables (10 is a sane guard)"},
      {"tape_budget_mb", Kind::UInt, "3072", "refuse rollouts whose tape exceeds this"},
      {"val_fraction", Kind::Real, "0.2", "held-out share of each source domain"},
  };
}

std::vector<Key> concat(std::initializer_list<std::vector<Key>> parts) {
  std::vector<Key> out;
  for (const auto& p : parts) out.insert(out.end(), p.begin(), p.end());
  return out;
}

// ---------------------------------------------------------------------------
// Shared helpers

NcaConfig model_config(const Settings& s, std::size_t d_img) {
  NcaConfig c;
  c.d_img = d_img;
  c.n_cls = s.size("n_cls");
  c.state_dim = s.size("state_dim");
  c.hidden = s.size("hidden");
  c.fire_rate = static_cast<float>(s.real("fire_rate"));
  c.validate();
  return c;
}

TrainConfig train_config(const Settings& s) {
  TrainConfig t;
  t.epochs = s.small_int("epochs");
  t.batch_size = s.size("batch_size");
  t.t_min = s.small_int("t_min");
  t.t_max = s.small_int("t_max");
  t.t_eval = s.small_int("t_eval");
  t.adam.lr = s.real("lr");
  t.adam.beta1 = s.real("beta1");
  t.adam.beta2 = s.real("beta2");
  t.adam.eps = s.real("adam_eps");
  t.adam.weight_decay = s.real("weight_decay");
  t.clip_norm = s.real("clip_norm");
  t.seed = s.unsigned_integer("seed");
  t.reproducible = s.flag("reproducible");
  t.tape_budget = s.size("tape_budget_mb") << 20;
  t.validate();
  return t;
}

fs::path output_dir(const Settings& s) {
  const fs::path out = s.text("out");
  if (out.empty()) throw ConfigError("--out must not be empty");
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec) throw IoError("cannot create " + out.string() + ": " + ec.message());
  return out;
}

std::string require_text(const Settings& s, const std::string& key) {
  std::string v = s.text(key);
  if (v.empty()) {
    std::string flag = key;
    std::replace(flag.begin(), flag.end(), '_', '-');
    throw ConfigError("--" + flag + " is required");
  }
  return v;
}

std::string toml_string(const std::string& s) {
  std::string out = "\"";
  for (char c : s) {
    if (c == '"' || c == '\\') out += '\\';
    out += c;
  }
  return out + "\"";
}

void echo_config(const fs::path& path, const std::string& command, const Command& cmd,
                 const Settings& s) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("cannot write " + path.string());
  f << "# nca " << command << ", resolved configuration\n";
  for (const Key& k : cmd.keys) {
    const auto& v = s.raw(k.name);
    f << k.name << " = ";
    switch (k.kind) {
      case Kind::Text:
        f << toml_string(v.empty() ? std::string{} : v.front());
        break;
      case Kind::List: {
        f << '[';
        for (std::size_t i = 0; i < v.size(); ++i) f << (i ? ", " : "") << toml_string(v[i]);
        f << ']';
        break;
      }
      case Kind::Bool:
        f << (s.flag(k.name) ? "true" : "false");
        break;
      default:
        f << v.front();
    }
    f << '\n';
  }
  for (const auto& [key, value] : s.domain_overrides) f << key << " = " << value << '\n';
  if (!f) throw IoError("write failed: " + path.string());
}

std::string fmt(const char* spec, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

void check_compatible(const RuleParams& params, const Sample& s) {
  if (s.image.dim(0) != params.config.d_img)
    throw CheckpointError("sample " + s.sample_id + " has " + std::to_string(s.image.dim(0)) +
                          " image channel(s); checkpoint expects " +
                          std::to_string(params.config.d_img));
  for (float v : s.mask.data())
    if (v >= static_cast<float>(params.config.n_cls))
      throw CheckpointError("sample " + s.sample_id + " has class ids beyond the checkpoint's " +
                            std::to_string(params.config.n_cls) + " classes");
}

// ---------------------------------------------------------------------------
// Commands

std::vector<DomainSpec> resolve_domains(const Settings& s) {
  const auto names = s.list("domains");
  if (names.empty()) throw ConfigError("no domains configured");
  const auto defaults = default_domains();
  std::vector<DomainSpec> out;
  for (const auto& name : names) {
    auto it = std::find_if(defaults.begin(), defaults.end(),
                           [&](const DomainSpec& d) { return d.name == name; });
    out.push_back(it != defaults.end() ? *it : identity_domain(name));
  }
  for (const auto& [key, value] : s.domain_overrides) {
    const auto parts = split_domain_key(key);
    auto it = std::find_if(out.begin(), out.end(),
                           [&](const DomainSpec& d) { return d.name == parts->first; });
    if (it == out.end())
      throw ConfigError("'" + key + "' names a domain not listed in 'domains'");
    const std::string& field = parts->second;
    const double v = Settings::parse_real(key, value);
    if (field == "gamma") it->gamma = v;
    else if (field == "contrast") it->contrast = v;
    else if (field == "brightness") it->brightness = v;
    else if (field == "noise_sigma") it->noise_sigma = v;
    else if (field == "texture_freq") it->texture_freq = v;
    else if (field == "blur_radius") {
      if (v != std::floor(v) || v < 0 || v > 1000) throw ConfigError("'" + key + "' must be an integer");
      it->blur_radius = static_cast<int>(v);
    }
  }
  return out;
}

int cmd_gen_data(const Settings& s, Io& io, const Command& cmd) {
  GenDatasetOptions o;
  o.domains = resolve_domains(s);
  o.n_per_domain = s.size("n_per_domain");
  o.rows = s.size("rows");
  o.cols = s.size("cols");
  o.seed = s.unsigned_integer("seed");
  const fs::path out = output_dir(s);
  const Manifest manifest = gen_dataset(o, out);
  echo_config(out / "config.toml", "gen-data", cmd, s);
  io.out << "wrote " << manifest.size() << " samples (" << o.rows << "x" << o.cols << ") to "
         << out.string() << '\n';
  for (const auto& d : manifest_domains(manifest)) {
    const auto n = std::count_if(manifest.begin(), manifest.end(),
                                 [&](const ManifestEntry& e) { return e.domain == d; });
    io.out << "  " << d << ": " << n << '\n';
  }
  return kOk;
}

int cmd_train(const Settings& s, Io& io, const Command& cmd) {
  const TrainConfig tc = train_config(s);
  const std::uint64_t seed = tc.seed;
  const DirectoryDataset ds(require_text(s, "data"));
  const std::string target = s.text("target");
  const double vf = s.real("val_fraction");
  const LodoSplit split = target.empty() ? make_source_split(ds.manifest(), vf, seed)
                                         : make_lodo_splits(ds.manifest(), target, vf, seed);
  const std::vector<Sample> train = load_samples(ds, split.train);
  const std::vector<Sample> val = load_samples(ds, split.iid_val);
  const NcaConfig model = model_config(s, train.front().image.dim(0));

  const fs::path out = output_dir(s);
  std::optional<ResumeState> resume;
  std::optional<RuleParams> resume_best;
  RuleParams init;
  const std::string resume_path = s.text("resume");
  if (!resume_path.empty()) {
    const Checkpoint ckpt = load_checkpoint(resume_path);
    if (!(ckpt.params.config == model))
      throw CheckpointError("resume checkpoint was trained with a different model config");
    resume = resume_state(ckpt, tc.adam);
    if (!resume) throw CheckpointError(resume_path + " carries no training progress");
    init = ckpt.params;
    const fs::path best_path = out / "best.ncat";
    if (resume->best_epoch >= 0) {
      if (!fs::exists(best_path))
        throw CheckpointError("resuming needs " + best_path.string() + " from the earlier run");
      resume_best = load_checkpoint(best_path).params;
    }
  } else {
    Rng init_rng = make_rng(seed, "init");
    init = RuleParams::init(model, init_rng);
  }
  for (const Sample& smp : train) check_compatible(init, smp);

  echo_config(out / "config.toml", "train", cmd, s);
  const std::string run_id = target.empty() ? "all-domains" : "target-" + target;
  TrainLog log(out / "train_log.csv", seed, run_id, resume.has_value());
  io.out << "training on " << train.size() << " samples, validating on " << val.size()
         << (target.empty() ? "" : " (held-out target: " + target + ")") << '\n';

  int best_epoch = resume ? resume->best_epoch : -1;
  double best_val = resume ? resume->best_val : 0.0;
  TrainHooks hooks;
  hooks.on_epoch = [&](const EpochStats& st, const RuleParams& params, const OptState& opt,
                       bool is_best) {
    log.record(st.epoch, "train", "dice_loss", st.train_loss);
    log.record(st.epoch, "iid_val", "dice_loss", st.val_loss);
    if (is_best) {
      best_epoch = st.epoch;
      best_val = st.val_loss;
      save_checkpoint(out / "best.ncat", Checkpoint{params, {}});
    }
    char name[32];
    std::snprintf(name, sizeof name, "epoch_%03d.ncat", st.epoch);
    save_checkpoint(out / name,
                    Checkpoint{params, opt_sections(opt, st.epoch + 1, best_epoch, best_val)});
    io.out << "epoch " << st.epoch << "  train_loss " << fmt("%.6f", st.train_loss)
           << "  val_dice_loss " << fmt("%.6f", st.val_loss) << (is_best ? "  *" : "") << std::endl;
  };

  const TrainResult result = train_model(init, train, val, tc, hooks, resume, resume_best);
  if (result.diverged) {
    const int start = resume ? resume->epochs_done : 0;
    io.err << "diverged in epoch " << start + static_cast<int>(result.history.size()) << ": "
           << result.divergence << '\n';
    return kDivergence;
  }
  io.out << "best epoch " << result.best_epoch << '\n';
  return kOk;
}

int cmd_eval(const Settings& s, Io& io, const Command& cmd) {
  const Checkpoint ckpt = load_checkpoint(require_text(s, "checkpoint"));
  const RuleParams& params = ckpt.params;
  const DirectoryDataset ds(require_text(s, "data"));
  const int t_eval = s.small_int("t_eval");
  if (t_eval < 0) throw ConfigError("t_eval must be >= 0");
  const auto domains = s.list("eval_domains");
  Manifest entries;
  for (const auto& e : ds.manifest())
    if (domains.empty() || std::find(domains.begin(), domains.end(), e.domain) != domains.end())
      entries.push_back(e);
  if (entries.empty()) throw ConfigError("no samples to evaluate");
  const std::vector<Sample> samples = load_samples(ds, entries);
  for (const Sample& smp : samples) check_compatible(params, smp);

  const auto evals = evaluate_samples(params, samples, t_eval, s.unsigned_integer("seed"));
  const fs::path out = output_dir(s);
  echo_config(out / "config.toml", "eval", cmd, s);
  std::ofstream csv(out / "metrics.csv", std::ios::trunc);
  if (!csv) throw IoError("cannot write metrics.csv");
  const std::size_t n_cls = params.config.n_cls;
  csv << "sample_id,domain";
  for (std::size_t c = 1; c < n_cls; ++c) csv << ",dice_class" << c;
  csv << ",mean_foreground\n";
  std::vector<double> class_sum(n_cls, 0.0);
  double total = 0.0;
  std::map<std::string, std::pair<double, int>> per_domain;
  for (const auto& e : evals) {
    csv << e.sample_id << ',' << e.domain;
    for (std::size_t c = 1; c < n_cls; ++c) {
      csv << ',' << fmt("%.9g", e.per_class[c]);
      class_sum[c] += e.per_class[c];
    }
    csv << ',' << fmt("%.9g", e.mean_foreground) << '\n';
    total += e.mean_foreground;
    per_domain[e.domain].first += e.mean_foreground;
    per_domain[e.domain].second += 1;
  }
  const double n = static_cast<double>(evals.size());
  csv << "mean,all";
  for (std::size_t c = 1; c < n_cls; ++c) csv << ',' << fmt("%.9g", class_sum[c] / n);
  csv << ',' << fmt("%.9g", total / n) << '\n';
  if (!csv) throw IoError("write failed: metrics.csv");

  io.out << "mean foreground Dice " << fmt("%.4f", total / n) << " over " << evals.size()
         << " samples at t_eval=" << t_eval << '\n';
  for (const auto& [d, acc] : per_domain)
    io.out << "  " << d << ": " << fmt("%.4f", acc.first / acc.second) << " (" << acc.second
           << ")\n";
  return kOk;
}

int cmd_logo(const Settings& s, Io& io, const Command& cmd) {
  const DirectoryDataset ds(require_text(s, "data"));
  if (ds.manifest().empty()) throw ConfigError("dataset has no samples");
  ExperimentConfig ec;
  ec.model = model_config(s, ds.load(ds.manifest().front()).image.dim(0));
  ec.train = train_config(s);
  ec.n_runs = s.small_int("n_runs");
  ec.targets = s.list("targets");
  ec.val_fraction = s.real("val_fraction");
  ec.seed = s.unsigned_integer("seed");
  const fs::path out = output_dir(s);
  ec.out_dir = out;
  echo_config(out / "config.toml", "logo", cmd, s);

  const ExperimentReport report =
      run_lodo(ds, ec, [&](const std::string& line) { io.out << line << std::endl; });
  std::ofstream csv(out / "report.csv", std::ios::trunc);
  write_report_csv(csv, report);
  const std::string table = format_report_table(report);
  std::ofstream txt(out / "report.txt", std::ios::trunc);
  txt << table;
  if (!csv || !txt) throw IoError("cannot write report files under " + out.string());
  io.out << '\n' << table;
  return kOk;
}

int cmd_gradcheck(const Settings& s, Io& io, const Command&) {
  const std::uint64_t seed = s.unsigned_integer("seed");
  const NcaConfig model = model_config(s, 1);
  const std::size_t rows = s.size("rows"), cols = s.size("cols");
  if (rows == 0 || cols == 0) throw ConfigError("rows and cols must be positive");

  Rng init_rng = make_rng(seed, "init");
  RuleParams params = RuleParams::init(model, init_rng);
  // A zero w2 makes every gradient but dL/dw2 vanish; probe a generic point.
  Rng weight_rng = make_rng(seed, "gradcheck-weights");
  for (float& w : params.w2.data()) w = 0.2f * (uniform01(weight_rng) - 0.5f);
  for (float& b : params.b1.data()) b = 0.1f * (uniform01(weight_rng) - 0.5f);

  Rng sample_rng = make_rng(seed, "gradcheck-sample");
  Sample sample{Tensor({1, rows, cols}), Tensor({rows, cols}), "gradcheck", "gradcheck"};
  for (float& v : sample.image.data()) v = uniform01(sample_rng);
  for (float& v : sample.mask.data()) v = static_cast<float>(sample_rng() % model.n_cls);

  GradCheckOptions o;
  o.steps = s.small_int("steps");
  o.eps = s.real("eps");
  o.n_probe = s.small_int("n_probe");
  o.seed = seed;
  o.corrupt_backward = s.flag("corrupt_backward");
  if (o.steps < 1 || o.n_probe < 1 || !(o.eps > 0.0))
    throw ConfigError("gradcheck needs steps >= 1, n_probe >= 1 and eps > 0");
  const double tolerance = s.real("tolerance");

  const GradCheckReport rep = grad_check(params, sample, o);
  const bool pass = rep.probes > 0 && rep.max_rel_error <= tolerance;
  io.out << "probed " << rep.probes << " coordinates (" << rep.skipped_kinks
         << " skipped at ReLU kinks), max_rel_error " << fmt("%.3e", rep.max_rel_error)
         << ", tolerance " << fmt("%.1e", tolerance) << ": " << (pass ? "PASS" : "FAIL") << '\n';

  const std::string out_text = s.text("out");
  if (!out_text.empty()) {
    const fs::path out = output_dir(s);
    std::ofstream csv(out / "gradcheck.csv", std::ios::trunc);
    csv << "tensor,index,analytic,numeric,error\n";
    const char* names[] = {"w1", "b1", "w2", "fixed_kernels"};
    for (const auto& r : rep.results)
      csv << names[static_cast<int>(r.coord.tensor)] << ',' << r.coord.index << ','
          << fmt("%.9e", r.analytic) << ',' << fmt("%.9e", r.numeric) << ','
          << fmt("%.3e", r.error) << '\n';
    if (!csv) throw IoError("cannot write gradcheck.csv");
  }
  return pass ? kOk : kFailed;
}

void write_ppm(const fs::path& path, const Tensor& labels) {
  static constexpr unsigned char kPalette[][3] = {
      {0, 0, 0}, {230, 159, 0}, {86, 180, 233}, {0, 158, 115},
      {240, 228, 66}, {0, 114, 178}, {213, 94, 0}, {204, 121, 167}};
  const std::size_t rows = labels.dim(0), cols = labels.dim(1);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot write " + path.string());
  f << "P6\n" << cols << ' ' << rows << "\n255\n";
  for (float v : labels.data()) {
    const auto c = static_cast<std::size_t>(v) % std::size(kPalette);
    f.write(reinterpret_cast<const char*>(kPalette[c]), 3);
  }
  if (!f) throw IoError("write failed: " + path.string());
}

int cmd_rollout(const Settings& s, Io& io, const Command& cmd) {
  const Checkpoint ckpt = load_checkpoint(require_text(s, "checkpoint"));
  const RuleParams& params = ckpt.params;
  Tensor image = nca::io::load_tensor(require_text(s, "image"));
  if (image.rank() == 2) image = Tensor({1, image.dim(0), image.dim(1)}, image.values());
  if (image.rank() != 3 || image.dim(0) != params.config.d_img)
    throw CheckpointError("image shape " + shape_to_string(image.shape()) +
                          " does not match the checkpoint's " +
                          std::to_string(params.config.d_img) + " image channel(s)");
  const int steps = s.small_int("steps");
  if (steps < 0) throw ConfigError("steps must be >= 0");

  const fs::path out = output_dir(s);
  echo_config(out / "config.toml", "rollout", cmd, s);
  Rng fire = make_rng(s.unsigned_integer("seed"), "rollout-fire");
  CellGrid grid = seed_grid(image, params.config);
  char name[32];
  for (int t = 0; t <= steps; ++t) {
    if (t > 0) grid = rollout(std::move(grid), params, 1, fire);
    std::snprintf(name, sizeof name, "frame_%04d.ppm", t);
    write_ppm(out / name, argmax_over_channels(read_class_logits(grid)));
  }
  io.out << "wrote " << steps + 1 << " frames to " << out.string() << '\n';
  return kOk;
}

// ---------------------------------------------------------------------------
// Wiring

std::vector<Command> make_commands() {
  std::vector<Command> cmds;
  cmds.push_back({"gen-data", "Generate the synthetic multi-domain dataset",
                  concat({common_keys("data"),
                          {{"domains", Kind::List, "mild,moderate,severe",
                            "domains to render (built-in or identity-based)"},
                           {"n_per_domain", Kind::UInt, "200", "samples per domain"},
                           {"rows", Kind::UInt, "64", "image height"},
                           {"cols", Kind::UInt, "64", "image width"}}}),
                  true, nullptr});

  cmds.push_back({"train", "Train one model; per-epoch and best checkpoints plus a CSV log",
                  concat({common_keys("runs/train"), model_keys(), train_keys(),
                          {{"data", Kind::Text, "", "dataset directory"},
                           {"target", Kind::Text, "",
                            "domain to hold out entirely (empty: train on all domains)"},
                           {"resume", Kind::Text, "", "epoch checkpoint to continue from"}}}),
                  false, nullptr});
  cmds.push_back({"eval", "Per-sample and mean foreground Dice of a checkpoint",
                  concat({common_keys("runs/eval"),
                          {{"checkpoint", Kind::Text, "", "checkpoint file"},
                           {"data", Kind::Text, "", "dataset directory"},
                           {"t_eval", Kind::Int, "128", "rollout steps"},
                           {"eval_domains", Kind::List, "", "restrict to these domains"}}}),
                  false, nullptr});
  cmds.push_back({"logo", "Leave-one-domain-out experiment and report",
                  concat({common_keys("runs/logo"), model_keys(), train_keys(),
                          {{"data", Kind::Text, "", "dataset directory"},
                           {"n_runs", Kind::Int, "5", "runs per target domain"},
                           {"targets", Kind::List, "", "target domains (empty: all)"}}}),
                  false, nullptr});
  cmds.push_back({"gradcheck", "Compare BPTT gradients with finite differences",
                  concat({common_keys(""),
                          {{"state_dim", Kind::UInt, "8", "cell state channels D"},
                           {"hidden", Kind::UInt, "16", "hidden units H"},
                           {"n_cls", Kind::UInt, "4", "class channels"},
                           {"fire_rate", Kind::Real, "1.0", "per-cell update probability"},
                           {"rows", Kind::UInt, "8", "grid height"},
                           {"cols", Kind::UInt, "8", "grid width"},
                           {"steps", Kind::Int, "4", "rollout steps"},
                           {"n_probe", Kind::Int, "64", "coordinates to probe"},
                           {"eps", Kind::Real, "1e-3", "finite-difference step"},
                           {"tolerance", Kind::Real, "1e-3", "largest accepted relative error"},
                           {"corrupt_backward", Kind::Bool, "false",
                            "test hook: perturb the analytic gradient"}}}),
                  false, nullptr});
  cmds.push_back({"rollout", "Write the class map of every step as PPM frames",
                  concat({common_keys("runs/rollout"),
                          {{"checkpoint", Kind::Text, "", "checkpoint file"},
                           {"image", Kind::Text, "", "NCAT image, [I, J] or [d_img, I, J]"},
                           {"steps", Kind::Int, "128", "rollout steps T; T + 1 frames"}}}),
                  false, nullptr});

  for (auto& c : cmds) {
    Command* self = &c;
    if (c.name == "gen-data") c.run = [self](const Settings& s, Io& io) { return cmd_gen_data(s, io, *self); };
    if (c.name == "train") c.run = [self](const Settings& s, Io& io) { return cmd_train(s, io, *self); };
    if (c.name == "eval") c.run = [self](const Settings& s, Io& io) { return cmd_eval(s, io, *self); };
    if (c.name == "logo") c.run = [self](const Settings& s, Io& io) { return cmd_logo(s, io, *self); };
    if (c.name == "gradcheck") c.run = [self](const Settings& s, Io& io) { return cmd_gradcheck(s, io, *self); };
    if (c.name == "rollout") c.run = [self](const Settings& s, Io& io) { return cmd_rollout(s, io, *self); };
  }
  return cmds;
}

std::string flag_name(const std::string& key) {
  std::string f = key;
  std::replace(f.begin(), f.end(), '_', '-');
  return "--" + f;
}

Settings resolve(Command& cmd, const std::set<std::string>& all_keys) {
  Settings s;
  std::map<std::string, std::vector<std::string>> from_file;
  if (!cmd.config_path.empty()) {
    if (!fs::exists(cmd.config_path)) throw IoError("config file not found: " + cmd.config_path);
    std::vector<CLI::ConfigItem> items;
    try {
      items = CLI::ConfigTOML().from_file(cmd.config_path);
    } catch (const CLI::Error& e) {
      throw ConfigError("cannot parse " + cmd.config_path + ": " + e.what());
    }
    for (const auto& item : items) {
      if (item.name == "++" || item.name == "--") continue;
      std::string key;
      for (const auto& p : item.parents) key += p + ".";
      key += item.name;
      if (split_domain_key(key)) {
        if (cmd.domain_overrides) {
          if (item.inputs.size() != 1) throw ConfigError("'" + key + "' expects one number");
          s.domain_overrides.emplace_back(key, item.inputs.front());
        }
        continue;
      }
      if (!all_keys.count(key)) throw ConfigError("unknown config key '" + key + "'");
      from_file[key] = item.inputs;
    }
  }
  for (const Key& k : cmd.keys) {
    s.kinds[k.name] = k.kind;
    std::vector<std::string> v;
    const CLI::Option* opt = cmd.options.at(k.name);
    if (opt->count() > 0) {
      v = k.kind == Kind::Bool ? std::vector<std::string>{cmd.cli_flags[k.name] ? "true" : "false"}
                               : cmd.cli_values[k.name];
    } else if (auto it = from_file.find(k.name); it != from_file.end()) {
      v = it->second;
    } else {
      v = k.kind == Kind::List ? split_list(k.fallback) : std::vector<std::string>{k.fallback};
    }
    if (k.kind == Kind::List) {
      std::vector<std::string> flat;
      for (const auto& item : v)
        for (auto& part : split_list(item)) flat.push_back(part);
      v = flat;
    } else if (v.size() != 1) {
      throw ConfigError("'" + k.name + "' expects a single value");
    }
    s.values[k.name] = v;
  }
  // Fail early on malformed values.
  for (const Key& k : cmd.keys) {
    switch (k.kind) {
      case Kind::Int: s.integer(k.name); break;
      case Kind::UInt: s.unsigned_integer(k.name); break;
      case Kind::Real: s.real(k.name); break;
      case Kind::Bool: s.flag(k.name); break;
      default: break;
    }
  }
  return s;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Neural cellular automata segmentation with leave-one-domain-out evaluation", "nca"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "nca 0.1.0");
  std::vector<Command> cmds = make_commands();
  std::set<std::string> all_keys;
  for (auto& c : cmds) {
    c.app = app.add_subcommand(c.name, c.about);
    c.app->add_option("--config", c.config_path, "flat TOML file; flags override its values");
    for (const Key& k : c.keys) {
      all_keys.insert(k.name);
      const std::string help = k.help + (k.fallback.empty() ? "" : " [" + k.fallback + "]");
      if (k.kind == Kind::Bool) {
        c.options[k.name] = c.app->add_flag(flag_name(k.name), c.cli_flags[k.name], help);
      } else {
        CLI::Option* o = c.app->add_option(flag_name(k.name), c.cli_values[k.name], help);
        if (k.kind == Kind::List) o->delimiter(',');
        else o->expected(1);
        c.options[k.name] = o;
      }
    }
  }

  std::vector<std::string> rev(args.rbegin(), args.rend() - (args.empty() ? 0 : 1));
  try {
    app.parse(rev);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kConfig;
  }

  Io io{out, err};
  for (auto& c : cmds) {
    if (!c.app->parsed()) continue;
    try {
      const Settings s = resolve(c, all_keys);
      return c.run(s, io);
    } catch (const ConfigError& e) {
      err << "config error: " << e.what() << '\n';
      return kConfig;
    } catch (const IoError& e) {
      err << "I/O error: " << e.what() << '\n';
      return kIo;
    } catch (const FormatError& e) {
      err << "I/O error: " << e.what() << '\n';
      return kIo;
    } catch (const fs::filesystem_error& e) {
      err << "I/O error: " << e.what() << '\n';
      return kIo;
    } catch (const DivergenceError& e) {
      err << "diverged: " << e.what() << '\n';
      return kDivergence;
    } catch (const CheckpointError& e) {
      err << "checkpoint mismatch: " << e.what() << '\n';
      return kCheckpoint;
    } catch (const std::exception& e) {
      err << "error: " << e.what() << '\n';
      return kFailed;
    }
  }
  return kConfig;
}

}  // namespace nca::cli
