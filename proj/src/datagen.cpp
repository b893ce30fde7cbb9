// SPDX-License-Identifier: Apache-2.0
#include "nca/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <random>

#include "nca/error.hpp"
#include "nca/tensor_io.hpp"

namespace nca {

namespace {

// Clean-render intensities per class: background, ring, pool, blob.
constexpr float kClassIntensity[kSyntheticClasses] = {0.20f, 0.70f, 0.45f, 0.92f};
constexpr double kTextureAmplitude = 0.06;

struct Ellipse {
  double cy, cx, ay, ax, angle;
  // Normalised radius^2 of (y, x); <= 1 inside.
  double r2(double y, double x) const {
    const double dy = y - cy, dx = x - cx;
    const double c = std::cos(angle), s = std::sin(angle);
    const double u = c * dx + s * dy;
    const double v = -s * dx + c * dy;
    return (u * u) / (ax * ax) + (v * v) / (ay * ay);
  }
  double bound() const { return std::max(ax, ay); }
};

double uniform(Rng& rng, double lo, double hi) {
  return lo + (hi - lo) * static_cast<double>(uniform01(rng));
}

bool try_layout(Rng& rng, std::size_t rows, std::size_t cols, Tensor& mask) {
  const double size = static_cast<double>(std::min(rows, cols));
  const int n_struct = 1 + static_cast<int>(rng() % 3);

  struct Placed {
    Ellipse outer;
    double thickness;
    bool ring;
  };
  std::vector<Placed> placed;
  for (int s = 0; s < n_struct; ++s) {
    const bool ring = s == 0;
    const double lo = ring ? 0.18 : 0.07, hi = ring ? 0.27 : 0.12;
    Placed p{};
    p.ring = ring;
    p.outer.ay = uniform(rng, lo, hi) * size;
    p.outer.ax = uniform(rng, lo, hi) * size;
    p.outer.angle = uniform(rng, 0.0, std::numbers::pi);
    p.thickness = ring ? std::max(2.0, uniform(rng, 0.06, 0.09) * size) : 0.0;
    const double r = p.outer.bound() + 1.0;
    p.outer.cy = uniform(rng, r, static_cast<double>(rows) - 1.0 - r);
    p.outer.cx = uniform(rng, r, static_cast<double>(cols) - 1.0 - r);
    if (ring && std::min(p.outer.ax, p.outer.ay) - p.thickness < 1.5) return false;
    for (const auto& q : placed) {
      const double dist = std::hypot(p.outer.cy - q.outer.cy, p.outer.cx - q.outer.cx);
      if (dist < p.outer.bound() + q.outer.bound() + 2.0) return false;
    }
    placed.push_back(p);
  }

  mask.fill(0.0f);
  for (const auto& p : placed) {
    Ellipse inner = p.outer;
    inner.ax -= p.thickness;
    inner.ay -= p.thickness;
    for (std::size_t i = 0; i < rows; ++i) {
      for (std::size_t j = 0; j < cols; ++j) {
        const double y = static_cast<double>(i), x = static_cast<double>(j);
        if (p.outer.r2(y, x) > 1.0) continue;
        float cls = 3.0f;
        if (p.ring) cls = inner.r2(y, x) <= 1.0 ? 2.0f : 1.0f;
        mask.at(i, j) = cls;
      }
    }
  }
  // A ring thin enough to vanish on the pixel grid counts as degenerate.
  bool has_ring = false, has_pool = false;
  for (float v : mask.data()) {
    has_ring |= v == 1.0f;
    has_pool |= v == 2.0f;
  }
  return has_ring && has_pool;
}

Tensor box_blur(const Tensor& image, int radius) {
  if (radius <= 0) return image;
  const std::size_t rows = image.dim(1), cols = image.dim(2);
  Tensor out(image.shape());
  const long r = radius;
  for (std::size_t c = 0; c < image.dim(0); ++c) {
    for (long i = 0; i < static_cast<long>(rows); ++i) {
      for (long j = 0; j < static_cast<long>(cols); ++j) {
        double acc = 0.0;
        int count = 0;
        for (long di = -r; di <= r; ++di) {
          for (long dj = -r; dj <= r; ++dj) {
            const long ii = i + di, jj = j + dj;
            if (ii < 0 || jj < 0 || ii >= static_cast<long>(rows) || jj >= static_cast<long>(cols))
              continue;
            acc += image.at(c, static_cast<std::size_t>(ii), static_cast<std::size_t>(jj));
            ++count;
          }
        }
        out.at(c, static_cast<std::size_t>(i), static_cast<std::size_t>(j)) =
            static_cast<float>(acc / count);
      }
    }
  }
  return out;
}

}  // namespace

void DomainSpec::validate() const {
  if (name.empty()) throw ConfigError("domain needs a name");
  if (!(gamma > 0.0)) throw ConfigError("domain " + name + ": gamma must be > 0");
  if (!(noise_sigma >= 0.0)) throw ConfigError("domain " + name + ": noise_sigma must be >= 0");
  if (blur_radius < 0) throw ConfigError("domain " + name + ": blur_radius must be >= 0");
  if (!(texture_freq >= 0.0)) throw ConfigError("domain " + name + ": texture_freq must be >= 0");
}

DomainSpec identity_domain(std::string name) { return DomainSpec{std::move(name)}; }

std::vector<DomainSpec> default_domains() {
  return {
      DomainSpec{"mild", 1.0, 1.0, 0.0, 0.03, 0, 0.0},
      DomainSpec{"moderate", 0.8, 0.9, 0.05, 0.05, 1, 4.0},
      DomainSpec{"severe", 1.6, 0.7, -0.05, 0.08, 1, 8.0},
  };
}

Tensor gen_geometry(Rng& geometry_rng, std::size_t rows, std::size_t cols) {
  if (rows < 32 || cols < 32) throw ConfigError("synthetic images must be at least 32x32");
  Tensor mask({rows, cols});
  for (int attempt = 0; attempt < 100; ++attempt)
    if (try_layout(geometry_rng, rows, cols, mask)) return mask;
  throw ConfigError("could not place non-overlapping structures after 100 attempts");
}

Tensor clean_render(const Tensor& mask) {
  Tensor image({1, mask.dim(0), mask.dim(1)});
  for (std::size_t p = 0; p < mask.size(); ++p)
    image[p] = kClassIntensity[static_cast<std::size_t>(mask[p])];
  return image;
}

Tensor apply_appearance(const Tensor& clean, const Tensor& mask, const DomainSpec& spec,
                        Rng& appearance_rng) {
  spec.validate();
  const std::size_t rows = clean.dim(1), cols = clean.dim(2);
  Tensor img = clean;

  if (spec.texture_freq > 0.0) {
    const double theta = uniform(appearance_rng, 0.0, std::numbers::pi);
    const double phase = uniform(appearance_rng, 0.0, 2.0 * std::numbers::pi);
    const double k = 2.0 * std::numbers::pi * spec.texture_freq / static_cast<double>(cols);
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t j = 0; j < cols; ++j)
        if (mask.at(i, j) == 0.0f)
          img.at(0, i, j) += static_cast<float>(
              kTextureAmplitude *
              std::sin(k * (std::cos(theta) * j + std::sin(theta) * i) + phase));
  }

  for (float& v : img.data()) {
    const double g = std::pow(std::max(0.0, static_cast<double>(v)), spec.gamma);
    v = static_cast<float>(spec.contrast * g + spec.brightness);
  }
  img = box_blur(img, spec.blur_radius);
  if (spec.noise_sigma > 0.0) {
    std::normal_distribution<double> noise(0.0, spec.noise_sigma);
    for (float& v : img.data()) v = static_cast<float>(v + noise(appearance_rng));
  }
  for (float& v : img.data()) v = std::clamp(v, 0.0f, 1.0f);
  return img;
}

Sample gen_sample(const DomainSpec& spec, Rng& geometry_rng, Rng& appearance_rng,
                  std::size_t rows, std::size_t cols, std::string sample_id) {
  Tensor mask = gen_geometry(geometry_rng, rows, cols);
  Tensor image = apply_appearance(clean_render(mask), mask, spec, appearance_rng);
  return Sample{std::move(image), std::move(mask), spec.name, std::move(sample_id)};
}

Manifest gen_dataset(const GenDatasetOptions& options, const std::filesystem::path& out_dir) {
  if (options.domains.empty()) throw ConfigError("gen_dataset: no domains");
  if (options.n_per_domain == 0) throw ConfigError("gen_dataset: n_per_domain must be positive");
  for (std::size_t a = 0; a < options.domains.size(); ++a) {
    options.domains[a].validate();
    for (std::size_t b = 0; b < a; ++b)
      if (options.domains[a].name == options.domains[b].name)
        throw ConfigError("duplicate domain name " + options.domains[a].name);
  }

  std::error_code ec;
  std::filesystem::create_directories(out_dir / "images", ec);
  std::filesystem::create_directories(out_dir / "masks", ec);
  if (ec) throw IoError("cannot create " + out_dir.string() + ": " + ec.message());

  Manifest manifest;
  for (std::size_t d = 0; d < options.domains.size(); ++d) {
    const DomainSpec& spec = options.domains[d];
    for (std::size_t i = 0; i < options.n_per_domain; ++i) {
      char id[128];
      std::snprintf(id, sizeof id, "%s_%05zu", spec.name.c_str(), i);
      Rng geometry = make_rng(options.seed, "geometry", {d, i});
      Rng appearance = make_rng(options.seed, "appearance", {d, i});
      const Sample s = gen_sample(spec, geometry, appearance, options.rows, options.cols, id);
      ManifestEntry e{id, spec.name, "images/" + std::string(id) + ".ncat",
                      "masks/" + std::string(id) + ".ncat", options.rows, options.cols};
      io::save_tensor(out_dir / e.image_path, s.image);
      io::save_tensor(out_dir / e.mask_path, s.mask);
      manifest.push_back(std::move(e));
    }
  }
  save_manifest(out_dir / "manifest.json", manifest);
  return manifest;
}

}  // namespace nca
