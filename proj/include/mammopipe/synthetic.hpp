#pragma once
// Seeded synthetic mammogram-like dataset: noisy backgrounds, soft Gaussian
// blobs (benign proxy) and spiculated star shapes (malignant proxy), written
// as PGM files plus a metadata file in the mini-MIAS info format. Serves as
// the license-free substrate for end-to-end runs and acceptance checks.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "mammopipe/image.hpp"
#include "mammopipe/pgm.hpp"
#include "mammopipe/rng.hpp"

namespace mammopipe::synth {

struct SyntheticConfig {
  std::size_t count = 120;      // total images, split into thirds
  std::size_t image_size = 128; // square images
  std::uint64_t seed = 7;
  double background_mean = 60.0;
  double noise_sd = 7.0;
};

struct GeneratedImage {
  std::string id;
  GrayImage image;
  std::string info_line;
};

namespace detail {

inline GrayImage background(const SyntheticConfig& cfg, SplitMix64& rng) {
  GrayImage img(cfg.image_size, cfg.image_size, 255);
  for (auto& p : img.pixels)
    p = clamp_to_range(cfg.background_mean + cfg.noise_sd * rng.gaussian(),
                       255);
  return img;
}

struct Lesion {
  double cx, cy, sigma, amplitude;
};

inline Lesion sample_lesion(const SyntheticConfig& cfg, SplitMix64& rng) {
  const double sz = static_cast<double>(cfg.image_size);
  Lesion l;
  l.cx = rng.uniform(0.30 * sz, 0.70 * sz);
  l.cy = rng.uniform(0.30 * sz, 0.70 * sz);
  l.sigma = rng.uniform(sz / 13.0, sz / 8.5);
  l.amplitude = rng.uniform(110.0, 150.0);
  return l;
}

inline void add_gaussian_blob(GrayImage& img, const Lesion& l) {
  for (std::size_t y = 0; y < img.height; ++y)
    for (std::size_t x = 0; x < img.width; ++x) {
      const double dx = static_cast<double>(x) - l.cx;
      const double dy = static_cast<double>(y) - l.cy;
      const double r2 = dx * dx + dy * dy;
      const double add = l.amplitude * std::exp(-r2 / (2.0 * l.sigma * l.sigma));
      img.at(x, y) = clamp_to_range(img.at(x, y) + add, img.max_val);
    }
}

// Bright core plus narrow radial arms that decay slower than the core.
inline void add_spiculated_star(GrayImage& img, const Lesion& l, int spikes,
                                double phase) {
  const double arm_sigma = 2.2 * l.sigma;
  for (std::size_t y = 0; y < img.height; ++y)
    for (std::size_t x = 0; x < img.width; ++x) {
      const double dx = static_cast<double>(x) - l.cx;
      const double dy = static_cast<double>(y) - l.cy;
      const double r2 = dx * dx + dy * dy;
      const double core =
          l.amplitude * std::exp(-r2 / (2.0 * l.sigma * l.sigma));
      const double theta = std::atan2(dy, dx);
      const double lobe = std::max(0.0, std::cos(spikes * theta + phase));
      // Arms fade near the core so the center peak stays below saturation.
      const double fade = r2 / (r2 + l.sigma * l.sigma);
      const double arms = 0.9 * l.amplitude * fade *
                          std::exp(-r2 / (2.0 * arm_sigma * arm_sigma)) *
                          std::pow(lobe, 9.0);
      img.at(x, y) = clamp_to_range(img.at(x, y) + core + arms, img.max_val);
    }
}

}  // namespace detail

// Class layout: first third NORM, second third CIRC/Benign (blobs), final
// third SPIC/Malignant (stars); a remainder goes to NORM. Lesion centers and
// radii (2 sigma) land in the metadata coordinate fields.
inline std::vector<GeneratedImage> generate_synthetic(
    const SyntheticConfig& cfg) {
  static const char* kTissues[] = {"F", "G", "D"};
  std::vector<GeneratedImage> out;
  const std::size_t third = cfg.count / 3;
  for (std::size_t i = 0; i < cfg.count; ++i) {
    SplitMix64 rng(derive_seed(cfg.seed, "synthetic", i));
    GeneratedImage g;
    char idbuf[16];
    std::snprintf(idbuf, sizeof idbuf, "syn%03zu", i + 1);
    g.id = idbuf;
    g.image = detail::background(cfg, rng);
    const char* tissue = kTissues[i % 3];

    if (i >= third && i < 2 * third) {
      detail::Lesion l = detail::sample_lesion(cfg, rng);
      detail::add_gaussian_blob(g.image, l);
      g.info_line = g.id + std::string(" ") + tissue + " CIRC B " +
                    std::to_string(static_cast<long>(std::lround(l.cx))) + " " +
                    std::to_string(static_cast<long>(std::lround(l.cy))) + " " +
                    std::to_string(static_cast<long>(std::lround(2.0 * l.sigma)));
    } else if (i >= 2 * third && i < 3 * third) {
      detail::Lesion l = detail::sample_lesion(cfg, rng);
      const int spikes = 5 + static_cast<int>(rng.uniform_int(4));
      const double phase = rng.uniform(0.0, 6.28318530717958647692);
      detail::add_spiculated_star(g.image, l, spikes, phase);
      g.info_line = g.id + std::string(" ") + tissue + " SPIC M " +
                    std::to_string(static_cast<long>(std::lround(l.cx))) + " " +
                    std::to_string(static_cast<long>(std::lround(l.cy))) + " " +
                    std::to_string(static_cast<long>(std::lround(2.0 * l.sigma)));
    } else {
      g.info_line = g.id + std::string(" ") + tissue + " NORM";
    }
    out.push_back(std::move(g));
  }
  return out;
}

// Writes {id}.pgm files plus info.txt into `dir`.
inline void write_synthetic_dataset(const std::filesystem::path& dir,
                                    const SyntheticConfig& cfg) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  auto images = generate_synthetic(cfg);
  std::ofstream info(dir / "info.txt", std::ios::trunc);
  if (!info)
    throw std::runtime_error("cannot write " + (dir / "info.txt").string());
  for (const auto& g : images) {
    write_pgm_file(dir / (g.id + ".pgm"), g.image);
    info << g.info_line << "\n";
  }
}

}  // namespace mammopipe::synth
