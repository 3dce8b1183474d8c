#pragma once
// Training-corpus assembly: derived channels (segmentation + wavelet detail
// bands) and randomized affine variants of each source image.
//
// Channel layout of one sample, all at source dimensions:
//   0 source image
//   1 segmented rendering (filter + k-means, via prep::segment_image)
//   2 wavelet H detail of the source, deepest level, resized
//   3 wavelet V detail, likewise
//   4 wavelet D detail, likewise
// Channels 1..4 are pure functions of channel 0 and the configs, so an
// affine variant derives them from the warped source, never by warping the
// derived images.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mammopipe/image.hpp"
#include "mammopipe/mias.hpp"
#include "mammopipe/preprocess.hpp"
#include "mammopipe/rng.hpp"
#include "mammopipe/wavelet.hpp"

namespace mammopipe::aug {

struct Interval {
  double lo = 0.0;
  double hi = 0.0;

  bool contains(double x) const { return x >= lo && x <= hi; }
  bool operator==(const Interval&) const = default;
};

// Sampling ranges for the random affine map. Defaults keep a centered mass
// inside the frame.
struct AffineRanges {
  Interval rotation_deg{-15.0, 15.0};
  Interval translate_px{-20.0, 20.0};  // both axes draw from this range
  Interval scale{0.9, 1.1};
  Interval shear_deg{-10.0, 10.0};

  static AffineRanges identity() {
    return {{0.0, 0.0}, {0.0, 0.0}, {1.0, 1.0}, {0.0, 0.0}};
  }
  bool operator==(const AffineRanges&) const = default;
};

struct AffineSample {
  double rotation_deg = 0.0;
  double dx = 0.0;
  double dy = 0.0;
  double scale = 1.0;
  double shear_deg = 0.0;
};

inline AffineSample sample_affine(const AffineRanges& ranges,
                                  SplitMix64& rng) {
  AffineSample s;
  s.rotation_deg = rng.uniform(ranges.rotation_deg.lo, ranges.rotation_deg.hi);
  s.dx = rng.uniform(ranges.translate_px.lo, ranges.translate_px.hi);
  s.dy = rng.uniform(ranges.translate_px.lo, ranges.translate_px.hi);
  s.scale = rng.uniform(ranges.scale.lo, ranges.scale.hi);
  s.shear_deg = rng.uniform(ranges.shear_deg.lo, ranges.shear_deg.hi);
  return s;
}

// Applies rotate(shear(scale(translate(p)))) about the image center with
// bilinear sampling; samples falling outside the source are background (0).
inline GrayImage warp_affine(const GrayImage& img, const AffineSample& p) {
  if (!(p.scale > 0.0))
    throw std::invalid_argument("warp_affine: scale must be > 0");
  if (!(std::abs(p.shear_deg) < 90.0))
    throw std::invalid_argument(
        "warp_affine: shear must lie within (-90, 90) degrees");
  const double rad = p.rotation_deg * M_PI / 180.0;
  const double shr = std::tan(p.shear_deg * M_PI / 180.0);
  // Forward linear part, R = [c -s; s c], Sh = [1 shr; 0 1], S = scale*I:
  // M = R*Sh*S = scale * [c, c*shr - s; s, s*shr + c]
  const double c = std::cos(rad), s = std::sin(rad);
  const double a = p.scale * c;
  const double b = p.scale * (c * shr - s);
  const double d = p.scale * s;
  const double e = p.scale * (s * shr + c);
  const double det = a * e - b * d;
  if (std::abs(det) < 1e-9)
    throw std::invalid_argument("warp_affine: degenerate affine map");

  const double inv_a = e / det;
  const double inv_b = -b / det;
  const double inv_d = -d / det;
  const double inv_e = a / det;

  const double cx = (static_cast<double>(img.width) - 1.0) / 2.0;
  const double cy = (static_cast<double>(img.height) - 1.0) / 2.0;

  GrayImage out(img.width, img.height, img.max_val);
  for (std::size_t y = 0; y < img.height; ++y) {
    for (std::size_t x = 0; x < img.width; ++x) {
      // Invert: q = C + M (p - C) + t  =>  p = M^-1 (q - C - t) + C.
      const double qx = static_cast<double>(x) - cx - p.dx;
      const double qy = static_cast<double>(y) - cy - p.dy;
      double sx = inv_a * qx + inv_b * qy + cx;
      double sy = inv_d * qx + inv_e * qy + cy;
      // Epsilon absorbs roundoff at the frame border (a 360-degree turn
      // must not push edge samples outside).
      const double eps = 1e-9;
      const double max_x = static_cast<double>(img.width - 1);
      const double max_y = static_cast<double>(img.height - 1);
      if (sx < -eps || sy < -eps || sx > max_x + eps || sy > max_y + eps)
        continue;  // background 0
      sx = std::clamp(sx, 0.0, max_x);
      sy = std::clamp(sy, 0.0, max_y);
      const std::size_t x0 = static_cast<std::size_t>(sx);
      const std::size_t y0 = static_cast<std::size_t>(sy);
      const std::size_t x1 = std::min(x0 + 1, img.width - 1);
      const std::size_t y1 = std::min(y0 + 1, img.height - 1);
      const double fx = sx - static_cast<double>(x0);
      const double fy = sy - static_cast<double>(y0);
      const double top = img.at(x0, y0) * (1.0 - fx) + img.at(x1, y0) * fx;
      const double bot = img.at(x0, y1) * (1.0 - fx) + img.at(x1, y1) * fx;
      out.at(x, y) = clamp_to_range(top * (1.0 - fy) + bot * fy, img.max_val);
    }
  }
  return out;
}

inline GrayImage random_affine(const GrayImage& img, const AffineRanges& ranges,
                               std::uint64_t seed) {
  SplitMix64 rng(seed);
  return warp_affine(img, sample_affine(ranges, rng));
}

// ---------------------------------------------------------------------------
// Corpus assembly

enum class Provenance { Original, Affine };

// Channels-of-one-sample keeps every derived view tied to a single label;
// Samples feeds each view as an independent single-channel sample instead
// (for ablation runs).
enum class AugmentMode { Channels, Samples };

struct AugmentedSample {
  std::vector<GrayImage> channels;
  mias::MiasRecord record;
  Provenance provenance = Provenance::Original;
  std::uint64_t affine_seed = 0;  // meaningful for Provenance::Affine
};

struct AugmentConfig {
  AffineRanges ranges;
  std::size_t copies = 2;  // affine variants per source image
  AugmentMode mode = AugmentMode::Channels;

  bool operator==(const AugmentConfig&) const = default;
};

inline std::vector<GrayImage> derive_channels(
    const GrayImage& source, const prep::SegmenterConfig& seg_cfg,
    const wav::WaveletConfig& wav_cfg) {
  std::vector<GrayImage> channels;
  channels.reserve(5);
  channels.push_back(source);
  channels.push_back(prep::segment_image(source, seg_cfg));
  wav::WaveletPyramid pyramid =
      wav::multilevel_dwt(source, wav_cfg.levels, wav_cfg.family);
  const wav::SubbandSet& deepest = pyramid.levels.back();
  for (const Grid* band : {&deepest.horiz, &deepest.vert, &deepest.diag})
    channels.push_back(wav::resize_to_original(*band, source.width,
                                               source.height, source.max_val));
  return channels;
}

inline std::vector<AugmentedSample> assemble_training_set(
    const mias::Dataset& dataset, const prep::SegmenterConfig& seg_cfg,
    const wav::WaveletConfig& wav_cfg, const AugmentConfig& aug_cfg,
    std::uint64_t seed) {
  std::vector<AugmentedSample> corpus;

  auto emit = [&](const GrayImage& source, const mias::MiasRecord& record,
                  Provenance prov, std::uint64_t affine_seed) {
    try {
      auto channels = derive_channels(source, seg_cfg, wav_cfg);
      if (aug_cfg.mode == AugmentMode::Channels) {
        corpus.push_back({std::move(channels), record, prov, affine_seed});
      } else {
        for (auto& ch : channels)
          corpus.push_back({{std::move(ch)}, record, prov, affine_seed});
      }
    } catch (const std::exception& e) {
      throw std::runtime_error("sample " + record.id + ": " + e.what());
    }
  };

  std::map<std::string, std::size_t> occurrence;
  for (const auto& sample : dataset.samples) {
    if (!sample.image)
      throw std::runtime_error("sample " + sample.record.id +
                               ": image not loaded");
    // Oversampled duplicates share an id; the occurrence index keeps their
    // affine variants distinct while staying independent of any parallel
    // processing order.
    const std::size_t occ = occurrence[sample.record.id]++;
    emit(*sample.image, sample.record, Provenance::Original, 0);
    for (std::size_t copy = 0; copy < aug_cfg.copies; ++copy) {
      std::uint64_t s = derive_seed(seed, sample.record.id,
                                    copy + aug_cfg.copies * occ);
      GrayImage warped = random_affine(*sample.image, aug_cfg.ranges, s);
      emit(warped, sample.record, Provenance::Affine, s);
    }
  }
  return corpus;
}

// Writes channel PGMs plus a JSON-lines manifest:
//   {"id":..., "provenance":..., "label7":..., "label3":..., "channels":[...]}
inline std::filesystem::path write_corpus(
    const std::filesystem::path& dir,
    const std::vector<AugmentedSample>& corpus) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  fs::path manifest_path = dir / "manifest.jsonl";
  std::ofstream manifest(manifest_path, std::ios::trunc);
  if (!manifest)
    throw std::runtime_error("cannot write " + manifest_path.string());

  static const char* kChannelNames[] = {"src", "seg", "wh", "wv", "wd"};
  std::size_t counter = 0;
  for (const auto& sample : corpus) {
    nlohmann::json line;
    std::string stem = sample.record.id + "_" + std::to_string(counter++);
    line["id"] = sample.record.id;
    line["provenance"] = sample.provenance == Provenance::Original
                             ? "original"
                             : "affine:" + std::to_string(sample.affine_seed);
    line["label7"] = mias::to_string(sample.record.abnormality);
    line["label3"] = mias::to_string(sample.record.severity);
    nlohmann::json paths = nlohmann::json::array();
    for (std::size_t ch = 0; ch < sample.channels.size(); ++ch) {
      std::string name =
          stem + "_" +
          (ch < 5 ? kChannelNames[ch] : std::to_string(ch)) + ".pgm";
      write_pgm_file(dir / name, sample.channels[ch]);
      paths.push_back(name);
    }
    line["channels"] = paths;
    manifest << line.dump() << "\n";
  }
  return manifest_path;
}

}  // namespace mammopipe::aug
