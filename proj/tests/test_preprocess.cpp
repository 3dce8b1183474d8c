#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <set>
#include <vector>

#include "mammopipe/preprocess.hpp"
#include "mammopipe/rng.hpp"
#include "mammopipe/synthetic.hpp"

using namespace mammopipe;
using namespace mammopipe::prep;

namespace {

double mse(const GrayImage& a, const GrayImage& b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.pixels.size(); ++i) {
    double d = static_cast<double>(a.pixels[i]) - b.pixels[i];
    acc += d * d;
  }
  return acc / static_cast<double>(a.pixels.size());
}

// Exhaustive 2-cluster optimum over every label assignment of tiny inputs.
double brute_force_best_2means(const std::vector<double>& xs) {
  const std::size_t n = xs.size();
  double best = std::numeric_limits<double>::infinity();
  for (unsigned mask = 0; mask < (1u << n); ++mask) {
    double sum[2] = {0, 0};
    std::size_t cnt[2] = {0, 0};
    for (std::size_t i = 0; i < n; ++i) {
      int g = (mask >> i) & 1;
      sum[g] += xs[i];
      cnt[g]++;
    }
    if (cnt[0] == 0 || cnt[1] == 0) continue;
    double mean[2] = {sum[0] / cnt[0], sum[1] / cnt[1]};
    double cost = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      int g = (mask >> i) & 1;
      cost += (xs[i] - mean[g]) * (xs[i] - mean[g]);
    }
    best = std::min(best, cost);
  }
  return best;
}

}  // namespace

TEST_CASE("filter leaves a constant image untouched", "[preprocess]") {
  GrayImage img(7, 7, 255, 120);
  CHECK(adaptive_mean_filter(img, 3, 1.0) == img);
  CHECK(adaptive_mean_filter(img, 5, 0.5) == img);
}

TEST_CASE("filter replaces an isolated outlier by the window mean",
          "[preprocess]") {
  GrayImage img(5, 5, 255, 0);
  img.at(2, 2) = 255;
  GrayImage out = adaptive_mean_filter(img, 3, 1.0);

  // Oracle: mean and population stddev of the 3x3 neighborhood written out.
  const double mean = 255.0 / 9.0;
  const double sd = std::sqrt(255.0 * 255.0 / 9.0 - mean * mean);
  REQUIRE(std::abs(255.0 - mean) > 1.0 * sd);  // center is flagged as noise
  CHECK(out.at(2, 2) == std::lround(mean));    // 28

  // The neighbors see |0 - mean| < sd, so they pass through.
  for (std::size_t y = 0; y < 5; ++y)
    for (std::size_t x = 0; x < 5; ++x)
      if (!(x == 2 && y == 2)) CHECK(out.at(x, y) == 0);
}

TEST_CASE("filter reduces salt-and-pepper error on a gradient",
          "[preprocess]") {
  const std::size_t n = 24;
  GrayImage clean(n, n, 255);
  for (std::size_t y = 0; y < n; ++y)
    for (std::size_t x = 0; x < n; ++x)
      clean.at(x, y) = static_cast<std::uint16_t>(4 * (x + y));

  GrayImage noisy = clean;
  SplitMix64 rng(17);
  for (int i = 0; i < 40; ++i) {
    std::size_t x = rng.uniform_int(n), y = rng.uniform_int(n);
    noisy.at(x, y) = rng.uniform() < 0.5 ? 0 : 255;
  }
  GrayImage filtered = adaptive_mean_filter(noisy, 3, 2.0);
  CHECK(mse(filtered, clean) < mse(noisy, clean));
}

TEST_CASE("filter validates its window", "[preprocess]") {
  GrayImage img(4, 4, 255, 10);
  CHECK_THROWS_AS(adaptive_mean_filter(img, 4, 1.0), std::invalid_argument);
  CHECK_THROWS_AS(adaptive_mean_filter(img, 1, 1.0), std::invalid_argument);
  CHECK_THROWS_AS(adaptive_mean_filter(img, 3, 0.0), std::invalid_argument);
}

TEST_CASE("k-means separates two exact value groups", "[preprocess]") {
  GrayImage img(2, 2, 255);
  img.pixels = {0, 0, 200, 200};
  SegmentationResult r = kmeans_segment(img, 2, 1);
  REQUIRE(r.centroids.size() == 2);
  CHECK(r.centroids[0] == 0.0);
  CHECK(r.centroids[1] == 200.0);
  CHECK(r.objective == 0.0);
  CHECK(r.labels == std::vector<std::uint32_t>{0, 0, 1, 1});
}

TEST_CASE("k=1 recovers the global mean", "[preprocess]") {
  GrayImage img(3, 2, 255);
  img.pixels = {10, 20, 30, 40, 50, 60};
  SegmentationResult r = kmeans_segment(img, 1, 7);
  REQUIRE(r.centroids.size() == 1);
  CHECK(r.centroids[0] == Catch::Approx(35.0).margin(1e-12));
  double expect_obj = 0.0;
  for (auto p : img.pixels) expect_obj += (p - 35.0) * (p - 35.0);
  CHECK(r.objective == Catch::Approx(expect_obj).margin(1e-9));
}

TEST_CASE("k-means matches the exhaustive optimum on tiny images",
          "[preprocess]") {
  SplitMix64 rng(2024);
  for (int trial = 0; trial < 50; ++trial) {
    GrayImage img(6, 1, 255);
    std::set<std::uint16_t> used;
    for (auto& p : img.pixels) {
      std::uint16_t v;
      do {
        v = static_cast<std::uint16_t>(rng.uniform_int(256));
      } while (used.count(v));
      used.insert(v);
      p = v;
    }
    SegmentationResult r = kmeans_segment(img, 2, 1000 + trial);
    std::vector<double> xs(img.pixels.begin(), img.pixels.end());
    double best = brute_force_best_2means(xs);
    CHECK(r.objective == Catch::Approx(best).margin(1e-9));
  }
}

TEST_CASE("objective trace never increases", "[preprocess]") {
  SplitMix64 rng(5);
  GrayImage img(16, 16, 255);
  for (auto& p : img.pixels)
    p = static_cast<std::uint16_t>(rng.uniform_int(256));
  SegmentationResult r = kmeans_segment(img, 4, 3);
  REQUIRE(r.objective_trace.size() >= 2);
  for (std::size_t i = 1; i < r.objective_trace.size(); ++i)
    CHECK(r.objective_trace[i] <= r.objective_trace[i - 1] + 1e-9);
  CHECK(r.objective == r.objective_trace.back());
}

TEST_CASE("k-means validates k against distinct intensities", "[preprocess]") {
  GrayImage img(2, 2, 255);
  img.pixels = {5, 5, 9, 9};
  CHECK_THROWS_AS(kmeans_segment(img, 3, 1), std::invalid_argument);
  CHECK_THROWS_AS(kmeans_segment(img, 0, 1), std::invalid_argument);
  CHECK_NOTHROW(kmeans_segment(img, 2, 1));
}

TEST_CASE("segmentation is canonical across seeds", "[preprocess]") {
  // Bimodal image: both seeds converge to the same two centroids, so the
  // canonicalized results must be identical.
  SplitMix64 rng(8);
  GrayImage img(12, 12, 255);
  for (auto& p : img.pixels)
    p = static_cast<std::uint16_t>(rng.uniform() < 0.5
                                       ? 40 + rng.uniform_int(10)
                                       : 200 + rng.uniform_int(10));
  SegmentationResult a = kmeans_segment(img, 2, 1);
  SegmentationResult b = kmeans_segment(img, 2, 99);
  CHECK(a.centroids == b.centroids);
  CHECK(a.labels == b.labels);
}

TEST_CASE("labels_to_gray renders centroids", "[preprocess]") {
  GrayImage img(2, 2, 255);
  img.pixels = {0, 0, 200, 200};
  GrayImage seg = labels_to_gray(kmeans_segment(img, 2, 1));
  CHECK(seg.pixels == std::vector<std::uint16_t>{0, 0, 200, 200});

  GrayImage mean_img(3, 2, 255);
  mean_img.pixels = {10, 20, 30, 40, 50, 60};
  GrayImage flat = labels_to_gray(kmeans_segment(mean_img, 1, 1));
  for (auto p : flat.pixels) CHECK(p == 35);
}

TEST_CASE("labels_to_gray emits at most k distinct values", "[preprocess]") {
  GrayImage ramp(16, 16, 255);
  for (std::size_t i = 0; i < ramp.pixels.size(); ++i)
    ramp.pixels[i] = static_cast<std::uint16_t>(i % 256);
  GrayImage seg = labels_to_gray(kmeans_segment(ramp, 4, 2));
  std::set<std::uint16_t> distinct(seg.pixels.begin(), seg.pixels.end());
  CHECK(distinct.size() == 4);
}

TEST_CASE("segment_image survives low-diversity inputs", "[preprocess]") {
  GrayImage flat(8, 8, 255, 33);
  SegmenterConfig cfg;  // k = 4 > 1 distinct value; clamped internally
  GrayImage seg = segment_image(flat, cfg);
  for (auto p : seg.pixels) CHECK(p == 33);
}

TEST_CASE("filter is nearly idempotent on a synthetic mammogram",
          "[preprocess]") {
  synth::SyntheticConfig cfg;
  cfg.count = 3;
  cfg.image_size = 64;
  cfg.seed = 21;
  auto images = synth::generate_synthetic(cfg);
  for (const auto& g : images) {
    GrayImage once = adaptive_mean_filter(g.image, 3, 2.0);
    GrayImage twice = adaptive_mean_filter(once, 3, 2.0);
    std::size_t changed = 0;
    for (std::size_t i = 0; i < once.pixels.size(); ++i)
      if (once.pixels[i] != twice.pixels[i]) ++changed;
    CHECK(static_cast<double>(changed) <
          0.01 * static_cast<double>(once.pixels.size()));
  }
}
