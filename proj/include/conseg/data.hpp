// conseg/data.hpp

// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// THIS CODE IS PROVIDED *AS IS* BASIS, WITHOUT WARRANTIES OR CONDITIONS OF ANY
// KIND, EITHER EXPRESS OR IMPLIED, INCLUDING WITHOUT LIMITATION ANY IMPLIED
// WARRANTIES OR CONDITIONS OF TITLE, FITNESS FOR A PARTICULAR PURPOSE,
// MERCHANTABILITY OR NON-INFRINGEMENT.
// See the Apache 2 License for the specific language governing permissions and
// limitations under the License.

// Dataset handling: the on-disk tile/mask layout with pipe grouping, seeded
// per-pipe training-subset selection, class-prior statistics, prediction
// binarization, and a synthetic generator that renders imbalanced particle
// tiles in the same layout for small self-contained experiments.
//
// Layout contract:
//   root/labelled/images/<pipe>_<tile>.png    8-bit RGB
//   root/labelled/masks/<pipe>_<tile>.png     8-bit gray, 0 or 255 only
//   root/unlabelled/images/<pipe>_<tile>.png  8-bit RGB
// Mask value 255 is the aggregate class (stored as label 1), 0 is the
// suspension class (label 0).

#ifndef CONSEG_DATA_HPP_
#define CONSEG_DATA_HPP_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "conseg/errors.hpp"
#include "conseg/losses.hpp"
#include "conseg/metrics.hpp"
#include "conseg/png_io.hpp"
#include "conseg/rng.hpp"
#include "conseg/tensor.hpp"

namespace conseg {

constexpr std::uint64_t kSubsetStream = 201;

struct LabelledTile {
  Tensor<float> image;  // (1, 3, ts, ts) in [0,1]
  LabelMask mask;
  std::string pipe_id;
  std::string name;  // file name without extension
};

struct UnlabelledTile {
  Tensor<float> image;
  std::string pipe_id;
  std::string name;
};

struct DatasetSplit {
  std::vector<LabelledTile> labelled;
  std::vector<UnlabelledTile> unlabelled;
  int tile_size = 0;
};

// ---------------------------------------------------------------------------
// PNG <-> tensor conversions

inline Tensor<float> DecodeImageTile(const PngBuffer &png,
                                     const std::string &path) {
  if (png.channels != 3)
    throw DatasetError("expected an RGB image: " + path);
  Tensor<float> img(1, 3, png.height, png.width);
  const std::size_t npix = static_cast<std::size_t>(png.height) * png.width;
  for (std::size_t i = 0; i < npix; ++i)
    for (int c = 0; c < 3; ++c)
      img[static_cast<std::size_t>(c) * npix + i] =
          static_cast<float>(png.pixels[i * 3 + c]) / 255.0f;
  return img;
}

inline Tensor<float> ReadImageTile(const std::string &path) {
  return DecodeImageTile(ReadPng(path), path);
}

inline LabelMask ReadMaskFile(const std::string &path) {
  PngBuffer png = ReadPng(path);
  if (png.channels != 1)
    throw DatasetError("expected a grayscale mask: " + path);
  LabelMask mask(png.height, png.width);
  for (std::size_t i = 0; i < png.pixels.size(); ++i) {
    const unsigned char v = png.pixels[i];
    if (v != 0 && v != 255)
      throw DatasetError("non-binary mask value " + std::to_string(int(v)) +
                         " in " + path);
    mask.v[i] = v == 255 ? 1 : 0;
  }
  return mask;
}

inline void WriteImageTile(const std::string &path, const Tensor<float> &img) {
  if (img.n() != 1 || img.c() != 3)
    throw InputError("image tile must have shape (1,3,h,w), got " +
                     img.ShapeString());
  PngBuffer png;
  png.width = img.w();
  png.height = img.h();
  png.channels = 3;
  const std::size_t npix = static_cast<std::size_t>(png.height) * png.width;
  png.pixels.resize(npix * 3);
  for (std::size_t i = 0; i < npix; ++i)
    for (int c = 0; c < 3; ++c) {
      const float v = std::min(1.0f, std::max(0.0f, img[c * npix + i]));
      png.pixels[i * 3 + c] =
          static_cast<unsigned char>(std::lround(v * 255.0f));
    }
  WritePng(path, png);
}

inline void WriteMaskFile(const std::string &path, const LabelMask &mask) {
  PngBuffer png;
  png.width = mask.w;
  png.height = mask.h;
  png.channels = 1;
  png.pixels.resize(mask.size());
  for (std::size_t i = 0; i < mask.size(); ++i)
    png.pixels[i] = mask.v[i] ? 255 : 0;
  WritePng(path, png);
}

// ---------------------------------------------------------------------------
// Loading

namespace detail {

inline std::vector<std::string> ListPngNames(const std::string &dir) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir))
    throw DatasetError("missing directory: " + dir);
  std::vector<std::string> names;
  for (const auto &entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    const fs::path p = entry.path();
    if (p.extension() == ".png") names.push_back(p.filename().string());
  }
  std::sort(names.begin(), names.end());
  return names;
}

inline std::string PipeIdOf(const std::string &file_name) {
  const auto pos = file_name.find('_');
  if (pos == std::string::npos || pos == 0)
    throw DatasetError("file name is not <pipe>_<tile>.png: " + file_name);
  return file_name.substr(0, pos);
}

inline std::string StemOf(const std::string &file_name) {
  return file_name.substr(0, file_name.rfind('.'));
}

}  // namespace detail

// Reads the whole directory tree eagerly. Ordering is lexicographic by file
// name, so a given tree always produces the same split.
inline DatasetSplit LoadDataset(const std::string &root) {
  namespace fs = std::filesystem;
  const std::string img_dir = root + "/labelled/images";
  const std::string mask_dir = root + "/labelled/masks";
  const std::string unl_dir = root + "/unlabelled/images";

  DatasetSplit split;
  auto check_size = [&split](int h, int w, const std::string &path) {
    if (h != w) throw DatasetError("tile is not square: " + path);
    if (split.tile_size == 0) split.tile_size = h;
    if (h != split.tile_size)
      throw DatasetError("tile size mismatch (" + std::to_string(h) + " vs " +
                         std::to_string(split.tile_size) + "): " + path);
  };

  for (const std::string &name : detail::ListPngNames(img_dir)) {
    LabelledTile tile;
    tile.pipe_id = detail::PipeIdOf(name);
    tile.name = detail::StemOf(name);
    const std::string img_path = img_dir + "/" + name;
    const std::string mask_path = mask_dir + "/" + name;
    if (!fs::exists(mask_path))
      throw DatasetError("missing mask for labelled image: " + mask_path);
    tile.image = ReadImageTile(img_path);
    tile.mask = ReadMaskFile(mask_path);
    check_size(tile.image.h(), tile.image.w(), img_path);
    if (tile.mask.h != tile.image.h() || tile.mask.w != tile.image.w())
      throw DatasetError("mask size does not match its image: " + mask_path);
    split.labelled.push_back(std::move(tile));
  }
  if (split.labelled.empty())
    throw DatasetError("no labelled images found under " + img_dir);

  if (fs::is_directory(unl_dir)) {
    for (const std::string &name : detail::ListPngNames(unl_dir)) {
      UnlabelledTile tile;
      tile.pipe_id = detail::PipeIdOf(name);
      tile.name = detail::StemOf(name);
      const std::string img_path = unl_dir + "/" + name;
      tile.image = ReadImageTile(img_path);
      check_size(tile.image.h(), tile.image.w(), img_path);
      split.unlabelled.push_back(std::move(tile));
    }
  }
  return split;
}

// ---------------------------------------------------------------------------
// Training-subset selection

struct TrainingSubset {
  DatasetSplit train;    // k labelled tiles per pipe, unlabelled unchanged
  DatasetSplit heldout;  // every labelled tile not selected; no unlabelled
};

// Samples k labelled tiles per pipe without replacement, seeded. The
// remaining labelled tiles form the held-out evaluation set. Within both
// outputs the original lexicographic tile order is preserved.
inline TrainingSubset SelectTrainingSubset(const DatasetSplit &split, int k,
                                           std::uint64_t seed) {
  if (k < 1) throw InputError("tiles per pipe must be >= 1, got " +
                              std::to_string(k));
  std::map<std::string, std::vector<std::size_t>> by_pipe;
  for (std::size_t i = 0; i < split.labelled.size(); ++i)
    by_pipe[split.labelled[i].pipe_id].push_back(i);

  Rng rng(MixSeed(seed, kSubsetStream));
  std::vector<bool> chosen(split.labelled.size(), false);
  for (auto &[pipe, indices] : by_pipe) {
    if (static_cast<std::size_t>(k) > indices.size())
      throw InputError("pipe " + pipe + " has " +
                       std::to_string(indices.size()) +
                       " labelled tiles, cannot select " + std::to_string(k));
    // partial Fisher-Yates: the first k slots end up uniform without
    // replacement
    for (int j = 0; j < k; ++j) {
      const std::size_t pick =
          j + static_cast<std::size_t>(rng.UniformInt(indices.size() - j));
      std::swap(indices[j], indices[pick]);
      chosen[indices[j]] = true;
    }
  }

  TrainingSubset out;
  out.train.tile_size = split.tile_size;
  out.heldout.tile_size = split.tile_size;
  for (std::size_t i = 0; i < split.labelled.size(); ++i) {
    if (chosen[i])
      out.train.labelled.push_back(split.labelled[i]);
    else
      out.heldout.labelled.push_back(split.labelled[i]);
  }
  out.train.unlabelled = split.unlabelled;
  return out;
}

// ---------------------------------------------------------------------------
// Class prior

// Per-image class proportions reduced to a prior: mu is the mean proportion
// per class, sigma the population standard deviation over images, floored so
// a single-image prior stays usable downstream.
inline ClassPrior ComputeClassPrior(const std::vector<LabelMask> &masks) {
  if (masks.empty())
    throw InputError("class prior needs at least one mask");
  std::vector<double> fractions;
  fractions.reserve(masks.size());
  for (const LabelMask &m : masks) {
    if (m.size() == 0) throw InputError("class prior given an empty mask");
    std::size_t agg = 0;
    for (std::uint8_t v : m.v) agg += v;
    fractions.push_back(static_cast<double>(agg) /
                        static_cast<double>(m.size()));
  }
  double mean = 0.0;
  for (double f : fractions) mean += f;
  mean /= static_cast<double>(fractions.size());
  double var = 0.0;
  for (double f : fractions) var += (f - mean) * (f - mean);
  var /= static_cast<double>(fractions.size());
  const double sigma = std::max(std::sqrt(var), kSigmaFloor);

  ClassPrior prior;
  prior.mu = {mean, 1.0 - mean};
  prior.sigma = {sigma, sigma};
  Validate(prior);
  return prior;
}

// ---------------------------------------------------------------------------
// Binarization

// Hard labels from a probability map; the threshold itself counts as
// aggregate, so binarize(p, t) is monotone non-increasing in t.
template <typename T>
std::vector<LabelMask> Binarize(const Tensor<T> &pred,
                                double threshold = 0.5) {
  if (!(threshold >= 0.0 && threshold <= 1.0))
    throw InputError("binarization threshold must lie in [0,1], got " +
                     std::to_string(threshold));
  if (pred.c() != 1)
    throw InputError("probability map must have one channel, got " +
                     pred.ShapeString());
  std::vector<LabelMask> out;
  out.reserve(pred.n());
  const std::size_t npix = static_cast<std::size_t>(pred.h()) * pred.w();
  for (int n = 0; n < pred.n(); ++n) {
    LabelMask m(pred.h(), pred.w());
    const T *p = pred.Plane(n, 0);
    for (std::size_t i = 0; i < npix; ++i)
      m.v[i] = static_cast<double>(p[i]) >= threshold ? 1 : 0;
    out.push_back(std::move(m));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic generator

struct SynthConfig {
  int tile_size = 128;
  int num_labelled = 8;
  int num_unlabelled = 16;
  int tiles_per_pipe = 4;  // consecutive tiles grouped under one pipe id
  double target_minority_fraction = 0.36;
  double diameter_min = 10.0;  // particle max-diameter range, pixels
  double diameter_max = 48.0;
  double texture_noise_level = 0.08;
  std::uint64_t seed = 0;
};

inline void Validate(const SynthConfig &c) {
  if (c.tile_size < 16)
    throw ConfigError("synthetic tile_size must be >= 16, got " +
                      std::to_string(c.tile_size));
  if (c.num_labelled < 1)
    throw ConfigError("synthetic num_labelled must be >= 1");
  if (c.num_unlabelled < 0)
    throw ConfigError("synthetic num_unlabelled must be >= 0");
  if (c.tiles_per_pipe < 1)
    throw ConfigError("synthetic tiles_per_pipe must be >= 1");
  if (!(c.target_minority_fraction > 0.0 &&
        c.target_minority_fraction < 1.0))
    throw ConfigError("target_minority_fraction must lie in (0,1), got " +
                      std::to_string(c.target_minority_fraction));
  if (!(c.diameter_min > 0.0) || !(c.diameter_max >= c.diameter_min))
    throw ConfigError("particle diameter range must be positive and ordered");
  if (c.diameter_max > c.tile_size)
    throw ConfigError("diameter_max exceeds the tile size");
  if (!(c.texture_noise_level >= 0.0 && c.texture_noise_level <= 0.5))
    throw ConfigError("texture_noise_level must lie in [0, 0.5]");
}

namespace detail {

// One rendered tile: mask plus RGB image, both tile_size square.
struct SynthTile {
  LabelMask mask;
  Tensor<float> image;
};

// Renders one tile from its own rng stream: textured suspension background,
// non-overlapping darker ellipses for the aggregate class. Particle
// diameters are log-uniform, biasing towards small particles. The per-tile
// aggregate budget is drawn around the dataset target so tiles vary while
// the dataset mean stays inside the contract.
inline SynthTile RenderSynthTile(const SynthConfig &cfg, Rng *rng,
                                 const std::string &tile_name) {
  const int ts = cfg.tile_size;
  const std::size_t npix = static_cast<std::size_t>(ts) * ts;
  SynthTile tile{LabelMask(ts, ts), Tensor<float>(1, 3, ts, ts)};

  const double budget_slack = 0.03;
  double want = cfg.target_minority_fraction + 0.015 * rng->Normal();
  want = std::min(cfg.target_minority_fraction + 0.015,
                  std::max(cfg.target_minority_fraction - 0.03, want));

  // low-frequency background texture from a few random sinusoids
  double fx[3], fy[3], ph[3];
  for (int i = 0; i < 3; ++i) {
    fx[i] = rng->Uniform(0.5, 3.0) * 2.0 * M_PI / ts;
    fy[i] = rng->Uniform(0.5, 3.0) * 2.0 * M_PI / ts;
    ph[i] = rng->Uniform(0.0, 2.0 * M_PI);
  }
  const double base_gray = 0.55 + rng->Uniform(-0.06, 0.06);

  struct Particle {
    double cy, cx, a, b, ct, st, albedo;
  };
  std::vector<Particle> placed;
  std::size_t aggregate_pixels = 0;
  int consecutive_rejects = 0;
  const int reject_limit = 400;
  std::vector<std::pair<int, int>> candidate;

  while (static_cast<double>(aggregate_pixels) / npix < want) {
    if (consecutive_rejects >= reject_limit)
      throw DatasetError(
          "could not reach aggregate fraction " + std::to_string(want) +
          " for tile " + tile_name +
          "; widen the diameter range or lower the target");
    const double d = rng->LogUniform(cfg.diameter_min, cfg.diameter_max);
    const double aspect = rng->Uniform(0.45, 1.0);
    const double theta = rng->Uniform(0.0, M_PI);
    const double cy = rng->Uniform(0.0, ts);
    const double cx = rng->Uniform(0.0, ts);
    const double a = d / 2.0, b = aspect * d / 2.0;
    const double ct = std::cos(theta), st = std::sin(theta);

    candidate.clear();
    const int y0 = std::max(0, static_cast<int>(std::floor(cy - a)));
    const int y1 = std::min(ts - 1, static_cast<int>(std::ceil(cy + a)));
    const int x0 = std::max(0, static_cast<int>(std::floor(cx - a)));
    const int x1 = std::min(ts - 1, static_cast<int>(std::ceil(cx + a)));
    bool overlap = false;
    for (int y = y0; y <= y1 && !overlap; ++y) {
      for (int x = x0; x <= x1; ++x) {
        const double dy = y + 0.5 - cy, dx = x + 0.5 - cx;
        const double u = (dx * ct + dy * st) / a;
        const double v = (-dx * st + dy * ct) / b;
        if (u * u + v * v > 1.0) continue;
        if (tile.mask.at(y, x)) {
          overlap = true;
          break;
        }
        candidate.emplace_back(y, x);
      }
    }
    const double frac_after =
        static_cast<double>(aggregate_pixels + candidate.size()) / npix;
    if (overlap || candidate.empty() || frac_after > want + budget_slack) {
      ++consecutive_rejects;
      continue;
    }
    consecutive_rejects = 0;
    for (auto [y, x] : candidate) tile.mask.at(y, x) = 1;
    aggregate_pixels += candidate.size();
    placed.push_back({cy, cx, a, b, ct, st,
                      0.22 + rng->Uniform(-0.05, 0.05)});
  }

  // paint: background first, then particle interiors; quantize to 8 bits so
  // the in-memory tensor equals what a reader of the written file sees
  std::vector<float> albedo_at(npix, 0.0f);
  for (const Particle &p : placed) {
    const int y0 = std::max(0, static_cast<int>(std::floor(p.cy - p.a)));
    const int y1 = std::min(ts - 1, static_cast<int>(std::ceil(p.cy + p.a)));
    const int x0 = std::max(0, static_cast<int>(std::floor(p.cx - p.a)));
    const int x1 = std::min(ts - 1, static_cast<int>(std::ceil(p.cx + p.a)));
    for (int y = y0; y <= y1; ++y)
      for (int x = x0; x <= x1; ++x) {
        const double dy = y + 0.5 - p.cy, dx = x + 0.5 - p.cx;
        const double u = (dx * p.ct + dy * p.st) / p.a;
        const double v = (-dx * p.st + dy * p.ct) / p.b;
        if (u * u + v * v <= 1.0)
          albedo_at[static_cast<std::size_t>(y) * ts + x] =
              static_cast<float>(p.albedo);
      }
  }
  for (int y = 0; y < ts; ++y) {
    for (int x = 0; x < ts; ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * ts + x;
      double v;
      if (tile.mask.v[i]) {
        v = albedo_at[i];
      } else {
        v = base_gray;
        for (int s = 0; s < 3; ++s)
          v += 0.04 * std::sin(fx[s] * x + fy[s] * y + ph[s]);
      }
      for (int c = 0; c < 3; ++c) {
        double pix =
            v + rng->Uniform(-cfg.texture_noise_level,
                             cfg.texture_noise_level);
        pix = std::min(1.0, std::max(0.0, pix));
        const int q = static_cast<int>(std::lround(pix * 255.0));
        tile.image[static_cast<std::size_t>(c) * npix + i] =
            static_cast<float>(q) / 255.0f;
      }
    }
  }
  return tile;
}

}  // namespace detail

// Renders the configured number of tiles into `root` using the standard
// layout and returns the same data as an in-memory split. Tile t draws all
// its randomness from MixSeed(seed, t), so outputs are reproducible and
// independent of generation order.
inline DatasetSplit GenerateSynthetic(const SynthConfig &cfg,
                                      const std::string &root) {
  Validate(cfg);
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(root + "/labelled/images", ec);
  fs::create_directories(root + "/labelled/masks", ec);
  fs::create_directories(root + "/unlabelled/images", ec);
  if (!fs::is_directory(root + "/labelled/masks"))
    throw DatasetError("cannot create dataset directories under " + root);

  DatasetSplit split;
  split.tile_size = cfg.tile_size;
  const int total = cfg.num_labelled + cfg.num_unlabelled;
  char buf[64];
  for (int t = 0; t < total; ++t) {
    const bool labelled = t < cfg.num_labelled;
    const int within_kind = labelled ? t : t - cfg.num_labelled;
    const int pipe = within_kind / cfg.tiles_per_pipe;
    const int tile_no = within_kind % cfg.tiles_per_pipe;
    std::snprintf(buf, sizeof(buf), "%s%02d", labelled ? "lp" : "up", pipe);
    const std::string pipe_id(buf);
    std::snprintf(buf, sizeof(buf), "%s_%03d", pipe_id.c_str(), tile_no);
    const std::string name(buf);

    Rng rng(MixSeed(cfg.seed, static_cast<std::uint64_t>(t)));
    detail::SynthTile tile = detail::RenderSynthTile(cfg, &rng, name);

    if (labelled) {
      WriteImageTile(root + "/labelled/images/" + name + ".png", tile.image);
      WriteMaskFile(root + "/labelled/masks/" + name + ".png", tile.mask);
      split.labelled.push_back(
          {std::move(tile.image), std::move(tile.mask), pipe_id, name});
    } else {
      WriteImageTile(root + "/unlabelled/images/" + name + ".png",
                     tile.image);
      split.unlabelled.push_back({std::move(tile.image), pipe_id, name});
    }
  }
  return split;
}

}  // namespace conseg

#endif  // CONSEG_DATA_HPP_
