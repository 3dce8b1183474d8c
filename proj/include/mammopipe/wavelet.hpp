#pragma once
// Separable 2-D discrete wavelet transform (orthonormal Haar) with exact
// synthesis, multi-level pyramids and upsampling of detail bands back to
// image size.
//
// One level on a 2x2 block [[a,b],[c,d]] yields
//   A = (a+b+c+d)/2   H = (a-b+c-d)/2
//   V = (a+b-c-d)/2   D = (a-b-c+d)/2
// i.e. two 1-D orthonormal Haar passes (rows then columns). Odd lengths are
// handled by half-sample symmetric extension: the trailing sample is
// duplicated, its detail coefficient is exactly zero and synthesis drops the
// phantom sample, so odd round-trips are exact too.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "mammopipe/image.hpp"
#include "mammopipe/pgm.hpp"

namespace mammopipe::wav {

inline constexpr double kInvSqrt2 = 0.70710678118654752440;

struct SubbandSet {
  int level = 1;
  std::size_t parent_width = 0;   // dimensions of the grid this was built from
  std::size_t parent_height = 0;
  Grid approx;  // A
  Grid horiz;   // H, row-detail
  Grid vert;    // V, column-detail
  Grid diag;    // D
};

struct WaveletPyramid {
  std::vector<SubbandSet> levels;  // j = 1..J
  Grid final_approx;
  std::size_t original_width = 0;
  std::size_t original_height = 0;
  std::string family;
};

namespace detail {

inline void require_haar(std::string_view family) {
  if (family != "haar")
    throw std::invalid_argument("unsupported wavelet family '" +
                                std::string(family) + "' (supported: haar)");
}

// 1-D analysis along x for every row: in (w x h) -> approx/detail
// (ceil(w/2) x h).
inline void analyze_rows(const Grid& in, Grid& approx, Grid& detail) {
  const std::size_t half = (in.width + 1) / 2;
  approx = Grid(half, in.height);
  detail = Grid(half, in.height);
  for (std::size_t y = 0; y < in.height; ++y) {
    for (std::size_t i = 0; i < half; ++i) {
      double a = in.at(2 * i, y);
      double b = (2 * i + 1 < in.width) ? in.at(2 * i + 1, y) : a;
      approx.at(i, y) = (a + b) * kInvSqrt2;
      detail.at(i, y) = (a - b) * kInvSqrt2;
    }
  }
}

inline void analyze_cols(const Grid& in, Grid& approx, Grid& detail) {
  const std::size_t half = (in.height + 1) / 2;
  approx = Grid(in.width, half);
  detail = Grid(in.width, half);
  for (std::size_t i = 0; i < half; ++i) {
    for (std::size_t x = 0; x < in.width; ++x) {
      double a = in.at(x, 2 * i);
      double b = (2 * i + 1 < in.height) ? in.at(x, 2 * i + 1) : a;
      approx.at(x, i) = (a + b) * kInvSqrt2;
      detail.at(x, i) = (a - b) * kInvSqrt2;
    }
  }
}

inline Grid synthesize_rows(const Grid& approx, const Grid& detail,
                            std::size_t out_width) {
  Grid out(out_width, approx.height);
  for (std::size_t y = 0; y < approx.height; ++y) {
    for (std::size_t i = 0; i < approx.width; ++i) {
      double a = (approx.at(i, y) + detail.at(i, y)) * kInvSqrt2;
      double b = (approx.at(i, y) - detail.at(i, y)) * kInvSqrt2;
      out.at(2 * i, y) = a;
      if (2 * i + 1 < out_width) out.at(2 * i + 1, y) = b;
    }
  }
  return out;
}

inline Grid synthesize_cols(const Grid& approx, const Grid& detail,
                            std::size_t out_height) {
  Grid out(approx.width, out_height);
  for (std::size_t i = 0; i < approx.height; ++i) {
    for (std::size_t x = 0; x < approx.width; ++x) {
      double a = (approx.at(x, i) + detail.at(x, i)) * kInvSqrt2;
      double b = (approx.at(x, i) - detail.at(x, i)) * kInvSqrt2;
      out.at(x, 2 * i) = a;
      if (2 * i + 1 < out_height) out.at(x, 2 * i + 1) = b;
    }
  }
  return out;
}

}  // namespace detail

inline SubbandSet dwt2d_level(const Grid& grid,
                              std::string_view family = "haar") {
  detail::require_haar(family);
  if (grid.width == 0 || grid.height == 0)
    throw std::invalid_argument("dwt2d_level: empty grid");

  Grid row_lo, row_hi;
  detail::analyze_rows(grid, row_lo, row_hi);

  SubbandSet sb;
  sb.parent_width = grid.width;
  sb.parent_height = grid.height;
  detail::analyze_cols(row_lo, sb.approx, sb.vert);
  detail::analyze_cols(row_hi, sb.horiz, sb.diag);
  return sb;
}

inline Grid idwt2d(const SubbandSet& sb, std::string_view family = "haar") {
  detail::require_haar(family);
  const auto& a = sb.approx;
  if (a.width != sb.horiz.width || a.height != sb.horiz.height ||
      a.width != sb.vert.width || a.height != sb.vert.height ||
      a.width != sb.diag.width || a.height != sb.diag.height)
    throw std::invalid_argument("idwt2d: subband dimensions disagree");
  if (sb.parent_width == 0 || sb.parent_height == 0)
    throw std::invalid_argument("idwt2d: parent dimensions missing");

  Grid row_lo = detail::synthesize_cols(sb.approx, sb.vert, sb.parent_height);
  Grid row_hi = detail::synthesize_cols(sb.horiz, sb.diag, sb.parent_height);
  return detail::synthesize_rows(row_lo, row_hi, sb.parent_width);
}

inline WaveletPyramid multilevel_dwt(const GrayImage& img, int levels,
                                     std::string_view family = "haar") {
  detail::require_haar(family);
  if (levels < 1)
    throw std::invalid_argument("multilevel_dwt: levels must be >= 1");
  const std::size_t min_dim = std::min(img.width, img.height);
  if (min_dim < (std::size_t{1} << levels))
    throw std::invalid_argument(
        "multilevel_dwt: image " + std::to_string(img.width) + "x" +
        std::to_string(img.height) + " too small for " +
        std::to_string(levels) + " levels");

  WaveletPyramid pyramid;
  pyramid.original_width = img.width;
  pyramid.original_height = img.height;
  pyramid.family = std::string(family);

  Grid current = to_grid(img);
  for (int j = 1; j <= levels; ++j) {
    SubbandSet sb = dwt2d_level(current, family);
    sb.level = j;
    current = sb.approx;
    pyramid.levels.push_back(std::move(sb));
  }
  pyramid.final_approx = current;
  return pyramid;
}

// Verification inverse: folds the pyramid back into the original-size grid.
inline Grid reconstruct(const WaveletPyramid& pyramid) {
  if (pyramid.levels.empty())
    throw std::invalid_argument("reconstruct: empty pyramid");
  Grid current = pyramid.final_approx;
  for (auto it = pyramid.levels.rbegin(); it != pyramid.levels.rend(); ++it) {
    SubbandSet sb = *it;
    sb.approx = std::move(current);
    current = idwt2d(sb, pyramid.family);
  }
  return current;
}

// Upsamples a coefficient grid to target size (corner-aligned bilinear) and
// min-max normalizes into [0, max_val]; detail coefficients are signed so a
// fixed affine map onto the pixel range is required before a network or a
// PGM file can consume them.
inline GrayImage resize_to_original(const Grid& grid, std::size_t target_w,
                                    std::size_t target_h, int max_val = 255,
                                    std::string_view mode = "bilinear") {
  if (mode != "bilinear")
    throw std::invalid_argument("resize_to_original: unsupported mode '" +
                                std::string(mode) + "'");
  if (target_w == 0 || target_h == 0)
    throw std::invalid_argument("resize_to_original: zero target dimension");
  return grid_to_image_minmax(bilinear_resize(grid, target_w, target_h),
                              max_val);
}

// Writes every subband as {id}_L{j}_{A|H|V|D}.pgm (min-max normalized).
inline std::vector<std::filesystem::path> export_pyramid(
    const std::filesystem::path& dir, const std::string& id,
    const WaveletPyramid& pyramid, int max_val = 255) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  std::vector<fs::path> written;
  for (const auto& sb : pyramid.levels) {
    const std::pair<const char*, const Grid*> bands[] = {
        {"A", &sb.approx}, {"H", &sb.horiz}, {"V", &sb.vert}, {"D", &sb.diag}};
    for (const auto& [name, grid] : bands) {
      fs::path p =
          dir / (id + "_L" + std::to_string(sb.level) + "_" + name + ".pgm");
      write_pgm_file(p, grid_to_image_minmax(*grid, max_val));
      written.push_back(std::move(p));
    }
  }
  return written;
}

struct WaveletConfig {
  std::string family = "haar";
  int levels = 3;

  bool operator==(const WaveletConfig&) const = default;
};

}  // namespace mammopipe::wav
