#pragma once
// Noise removal and intensity segmentation.
//
// adaptive_mean_filter: a pixel that deviates from its neighborhood mean by
// more than deviation_factor * neighborhood stddev is treated as noise and
// replaced by that mean. Everything else passes through untouched.
//
// kmeans_segment: Lloyd iterations over the 1-D intensity histogram with
// k-means++ initialization. Running on the histogram instead of raw pixels
// is an exact reformulation (pixels sharing a value share a cluster) and
// keeps 1024x1024 scans cheap.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "mammopipe/image.hpp"
#include "mammopipe/rng.hpp"

namespace mammopipe::prep {

// Borders use edge replication. Replacement means are rounded half away
// from zero (std::lround); the stddev is the population form (divide by N).
inline GrayImage adaptive_mean_filter(const GrayImage& img, int window,
                                      double deviation_factor) {
  if (window < 3 || window % 2 == 0)
    throw std::invalid_argument("adaptive_mean_filter: window must be odd and >= 3");
  if (!(deviation_factor > 0.0))
    throw std::invalid_argument("adaptive_mean_filter: deviation_factor must be > 0");

  const long r = window / 2;
  const long w = static_cast<long>(img.width);
  const long h = static_cast<long>(img.height);
  GrayImage out = img;
  for (long y = 0; y < h; ++y) {
    for (long x = 0; x < w; ++x) {
      double sum = 0.0, sum_sq = 0.0;
      for (long dy = -r; dy <= r; ++dy) {
        long yy = std::clamp(y + dy, 0L, h - 1);
        for (long dx = -r; dx <= r; ++dx) {
          long xx = std::clamp(x + dx, 0L, w - 1);
          double p = img.at(static_cast<std::size_t>(xx),
                            static_cast<std::size_t>(yy));
          sum += p;
          sum_sq += p * p;
        }
      }
      const double n = static_cast<double>(window) * window;
      const double mean = sum / n;
      const double var = std::max(0.0, sum_sq / n - mean * mean);
      const double sd = std::sqrt(var);
      const double p = img.at(static_cast<std::size_t>(x),
                              static_cast<std::size_t>(y));
      if (std::abs(p - mean) > deviation_factor * sd)
        out.at(static_cast<std::size_t>(x), static_cast<std::size_t>(y)) =
            clamp_to_range(mean, img.max_val);
    }
  }
  return out;
}

struct SegmentationResult {
  std::size_t width = 0;
  std::size_t height = 0;
  int max_val = 255;
  std::size_t k = 0;
  std::vector<std::uint32_t> labels;    // per pixel, in [0, k)
  std::vector<double> centroids;        // ascending after canonicalization
  double objective = 0.0;               // sum of squared distances
  std::size_t iterations = 0;
  std::vector<double> objective_trace;  // non-increasing, one entry per pass
};

namespace detail {

struct Bin {
  double value;
  double weight;  // pixel count
};

inline std::size_t nearest_centroid(double v, const std::vector<double>& c) {
  std::size_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < c.size(); ++j) {
    double d = (v - c[j]) * (v - c[j]);
    if (d < best_d) {
      best_d = d;
      best = j;
    }
  }
  return best;
}

// Weighted k-means++ seeding over histogram bins.
inline std::vector<double> kmeanspp_init(const std::vector<Bin>& bins,
                                         std::size_t k, SplitMix64& rng) {
  std::vector<double> centroids;
  centroids.reserve(k);
  double total_w = 0.0;
  for (const auto& b : bins) total_w += b.weight;

  // First centroid: weight-proportional draw.
  {
    double target = rng.uniform() * total_w;
    double acc = 0.0;
    std::size_t pick = bins.size() - 1;
    for (std::size_t i = 0; i < bins.size(); ++i) {
      acc += bins[i].weight;
      if (target < acc) {
        pick = i;
        break;
      }
    }
    centroids.push_back(bins[pick].value);
  }
  // Remaining centroids: proportional to weight * squared distance.
  std::vector<double> d2(bins.size());
  while (centroids.size() < k) {
    double total = 0.0;
    for (std::size_t i = 0; i < bins.size(); ++i) {
      double v = bins[i].value;
      double d = v - centroids[nearest_centroid(v, centroids)];
      d2[i] = bins[i].weight * d * d;
      total += d2[i];
    }
    std::size_t pick = bins.size() - 1;
    if (total > 0.0) {
      double target = rng.uniform() * total;
      double acc = 0.0;
      for (std::size_t i = 0; i < bins.size(); ++i) {
        acc += d2[i];
        if (target < acc) {
          pick = i;
          break;
        }
      }
    } else {
      // All mass sits on chosen centroids; take the first unused value.
      for (std::size_t i = 0; i < bins.size(); ++i) {
        if (std::find(centroids.begin(), centroids.end(), bins[i].value) ==
            centroids.end()) {
          pick = i;
          break;
        }
      }
    }
    centroids.push_back(bins[pick].value);
  }
  return centroids;
}

struct LloydOutcome {
  std::vector<double> centroids;
  std::vector<std::size_t> assignment;  // per bin
  double objective = 0.0;
  std::size_t iterations = 0;
  std::vector<double> objective_trace;
};

inline double bin_cost(const std::vector<Bin>& bins,
                       const std::vector<std::size_t>& assign,
                       const std::vector<double>& c) {
  double cost = 0.0;
  for (std::size_t i = 0; i < bins.size(); ++i) {
    double d = bins[i].value - c[assign[i]];
    cost += bins[i].weight * d * d;
  }
  return cost;
}

// Exact 1-D k-means over histogram bins: contiguous-partition dynamic
// program with divide-and-conquer row minimization. Returns the optimal
// cluster means, used as one candidate initialization; Lloyd started there
// is already converged, so the best-of result is the true 1-D optimum
// (plain k-means++ starts can stall in local minima on small inputs).
inline std::vector<double> optimal_partition_init(const std::vector<Bin>& bins,
                                                  std::size_t k) {
  const std::size_t n = bins.size();
  std::vector<double> w(n + 1, 0.0), wx(n + 1, 0.0), wx2(n + 1, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    w[i + 1] = w[i] + bins[i].weight;
    wx[i + 1] = wx[i] + bins[i].weight * bins[i].value;
    wx2[i + 1] = wx2[i] + bins[i].weight * bins[i].value * bins[i].value;
  }
  // Weighted SSE of bins [i, j] (inclusive, 0-based) about their mean.
  auto cost = [&](std::size_t i, std::size_t j) {
    const double ww = w[j + 1] - w[i];
    const double sx = wx[j + 1] - wx[i];
    const double sx2 = wx2[j + 1] - wx2[i];
    return std::max(0.0, sx2 - sx * sx / ww);
  };

  const double kInf = std::numeric_limits<double>::infinity();
  std::vector<std::vector<double>> dp(k, std::vector<double>(n, kInf));
  std::vector<std::vector<std::size_t>> cut(k, std::vector<std::size_t>(n, 0));
  for (std::size_t j = 0; j < n; ++j) dp[0][j] = cost(0, j);

  // Fill row c over column range [lo, hi] knowing the optimal split point
  // is monotone in j.
  auto fill = [&](auto&& self, std::size_t c, std::size_t lo, std::size_t hi,
                  std::size_t opt_lo, std::size_t opt_hi) -> void {
    if (lo > hi) return;
    const std::size_t mid = lo + (hi - lo) / 2;
    double best = kInf;
    std::size_t best_i = opt_lo;
    const std::size_t i_hi = std::min(opt_hi, mid);
    for (std::size_t i = std::max(opt_lo, c); i <= i_hi; ++i) {
      const double v = dp[c - 1][i - 1] + cost(i, mid);
      if (v < best) {
        best = v;
        best_i = i;
      }
    }
    dp[c][mid] = best;
    cut[c][mid] = best_i;
    if (mid > lo) self(self, c, lo, mid - 1, opt_lo, best_i);
    if (mid < hi) self(self, c, mid + 1, hi, best_i, opt_hi);
  };
  for (std::size_t c = 1; c < k; ++c) fill(fill, c, c, n - 1, c, n - 1);

  std::vector<double> centroids(k);
  std::size_t j = n - 1;
  for (std::size_t c = k; c-- > 0;) {
    const std::size_t i = c == 0 ? 0 : cut[c][j];
    centroids[c] = (wx[j + 1] - wx[i]) / (w[j + 1] - w[i]);
    if (c > 0) j = i - 1;
  }
  return centroids;
}

inline LloydOutcome lloyd(const std::vector<Bin>& bins,
                          std::vector<double> centroids, std::size_t max_iter,
                          double tol) {
  const std::size_t k = centroids.size();
  LloydOutcome out;
  std::vector<std::size_t> assign(bins.size(), 0);

  auto assign_all = [&]() {
    for (std::size_t i = 0; i < bins.size(); ++i)
      assign[i] = nearest_centroid(bins[i].value, centroids);
  };

  std::size_t iter = 0;
  for (; iter < max_iter; ++iter) {
    assign_all();
    out.objective_trace.push_back(bin_cost(bins, assign, centroids));

    std::vector<double> sum(k, 0.0), weight(k, 0.0);
    for (std::size_t i = 0; i < bins.size(); ++i) {
      sum[assign[i]] += bins[i].weight * bins[i].value;
      weight[assign[i]] += bins[i].weight;
    }
    std::vector<double> next(k);
    for (std::size_t j = 0; j < k; ++j)
      next[j] = weight[j] > 0.0 ? sum[j] / weight[j] : centroids[j];

    // Empty cluster: re-seed at the value farthest from its nearest
    // centroid. Cost cannot increase since nothing was assigned there.
    for (std::size_t j = 0; j < k; ++j) {
      if (weight[j] > 0.0) continue;
      double far_d = -1.0, far_v = next[j];
      for (const auto& b : bins) {
        double d = b.value - next[nearest_centroid(b.value, next)];
        if (d * d > far_d) {
          far_d = d * d;
          far_v = b.value;
        }
      }
      next[j] = far_v;
    }

    double shift = 0.0;
    for (std::size_t j = 0; j < k; ++j)
      shift = std::max(shift, std::abs(next[j] - centroids[j]));
    centroids = std::move(next);
    if (shift < tol) {
      ++iter;
      break;
    }
  }
  assign_all();
  out.objective_trace.push_back(bin_cost(bins, assign, centroids));
  out.centroids = std::move(centroids);
  out.assignment = std::move(assign);
  out.objective = out.objective_trace.back();
  out.iterations = iter;
  return out;
}

}  // namespace detail

// Best of `restarts` k-means++ initializations, each run to convergence
// (centroid shift < tol) or max_iter. Fully deterministic for a fixed seed.
inline SegmentationResult kmeans_segment(const GrayImage& img, std::size_t k,
                                         std::uint64_t seed,
                                         std::size_t max_iter = 100,
                                         double tol = 1e-6,
                                         std::size_t restarts = 8) {
  if (k < 1) throw std::invalid_argument("kmeans_segment: k must be >= 1");
  if (img.size() == 0)
    throw std::invalid_argument("kmeans_segment: empty image");
  if (restarts < 1) restarts = 1;

  std::vector<std::size_t> hist(static_cast<std::size_t>(img.max_val) + 1, 0);
  for (std::uint16_t p : img.pixels) hist[p]++;
  std::vector<detail::Bin> bins;
  for (std::size_t v = 0; v < hist.size(); ++v)
    if (hist[v] > 0)
      bins.push_back({static_cast<double>(v), static_cast<double>(hist[v])});

  if (k > bins.size())
    throw std::invalid_argument(
        "kmeans_segment: k exceeds the number of distinct intensities (" +
        std::to_string(bins.size()) + ")");

  // Candidate initializations: the exact contiguous-partition optimum plus
  // seeded k-means++ restarts; the lowest final objective wins.
  detail::LloydOutcome best =
      detail::lloyd(bins, detail::optimal_partition_init(bins, k), max_iter,
                    tol);
  for (std::size_t r = 0; r < restarts; ++r) {
    SplitMix64 rng(derive_seed(seed, "kmeans", r));
    auto init = detail::kmeanspp_init(bins, k, rng);
    auto run = detail::lloyd(bins, std::move(init), max_iter, tol);
    if (run.objective < best.objective) best = std::move(run);
  }

  // Canonicalize: sort centroids ascending and remap the assignment.
  std::vector<std::size_t> order(k);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return best.centroids[a] < best.centroids[b];
  });
  std::vector<std::size_t> rank(k);
  for (std::size_t j = 0; j < k; ++j) rank[order[j]] = j;

  SegmentationResult result;
  result.width = img.width;
  result.height = img.height;
  result.max_val = img.max_val;
  result.k = k;
  result.centroids.resize(k);
  for (std::size_t j = 0; j < k; ++j)
    result.centroids[j] = best.centroids[order[j]];
  result.objective = best.objective;
  result.iterations = best.iterations;
  result.objective_trace = std::move(best.objective_trace);

  // Value -> canonical cluster lookup, then per-pixel labels.
  std::vector<std::uint32_t> value_label(hist.size(), 0);
  for (std::size_t i = 0; i < bins.size(); ++i)
    value_label[static_cast<std::size_t>(bins[i].value)] =
        static_cast<std::uint32_t>(rank[best.assignment[i]]);
  result.labels.resize(img.size());
  for (std::size_t i = 0; i < img.size(); ++i)
    result.labels[i] = value_label[img.pixels[i]];
  return result;
}

// Renders each cluster at its centroid intensity; with sorted centroids the
// region ordering is stable across seeds that reach the same solution.
inline GrayImage labels_to_gray(const SegmentationResult& result) {
  GrayImage out(result.width, result.height, result.max_val);
  std::vector<std::uint16_t> lut(result.k);
  for (std::size_t j = 0; j < result.k; ++j)
    lut[j] = clamp_to_range(result.centroids[j], result.max_val);
  for (std::size_t i = 0; i < result.labels.size(); ++i)
    out.pixels[i] = lut[result.labels[i]];
  return out;
}

struct SegmenterConfig {
  int window = 3;
  double deviation_factor = 2.0;
  std::size_t k = 4;
  std::uint64_t seed = 1;

  bool operator==(const SegmenterConfig&) const = default;
};

// Filter + cluster + render, the preprocessing unit the corpus assembly
// uses. k is clamped to the number of distinct intensities so degenerate
// inputs (constant tiles) never abort a batch run.
inline GrayImage segment_image(const GrayImage& img,
                               const SegmenterConfig& cfg) {
  GrayImage filtered =
      adaptive_mean_filter(img, cfg.window, cfg.deviation_factor);
  std::vector<bool> seen(static_cast<std::size_t>(filtered.max_val) + 1,
                         false);
  std::size_t distinct = 0;
  for (std::uint16_t p : filtered.pixels)
    if (!seen[p]) {
      seen[p] = true;
      ++distinct;
    }
  std::size_t k = std::min(cfg.k, distinct);
  return labels_to_gray(kmeans_segment(filtered, k, cfg.seed));
}

}  // namespace mammopipe::prep
