#pragma once
// Pixel containers: integer grayscale images (what files hold) and
// real-valued grids (what the math runs on), plus bilinear resampling.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

namespace mammopipe {

struct GrayImage {
  std::size_t width = 0;
  std::size_t height = 0;
  int max_val = 255;  // 255 for 8-bit data, up to 65535 for 16-bit
  std::vector<std::uint16_t> pixels;  // row-major, every value <= max_val

  GrayImage() = default;
  GrayImage(std::size_t w, std::size_t h, int maxv = 255,
            std::uint16_t fill = 0)
      : width(w), height(h), max_val(maxv), pixels(w * h, fill) {}

  std::uint16_t& at(std::size_t x, std::size_t y) {
    return pixels[y * width + x];
  }
  std::uint16_t at(std::size_t x, std::size_t y) const {
    return pixels[y * width + x];
  }
  std::size_t size() const { return pixels.size(); }
  bool same_dims(const GrayImage& o) const {
    return width == o.width && height == o.height;
  }
  bool operator==(const GrayImage& o) const {
    return width == o.width && height == o.height && max_val == o.max_val &&
           pixels == o.pixels;
  }
};

struct Grid {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<double> v;  // row-major

  Grid() = default;
  Grid(std::size_t w, std::size_t h, double fill = 0.0)
      : width(w), height(h), v(w * h, fill) {}

  double& at(std::size_t x, std::size_t y) { return v[y * width + x]; }
  double at(std::size_t x, std::size_t y) const { return v[y * width + x]; }
  std::size_t size() const { return v.size(); }
};

inline Grid to_grid(const GrayImage& img) {
  Grid g(img.width, img.height);
  for (std::size_t i = 0; i < img.pixels.size(); ++i)
    g.v[i] = static_cast<double>(img.pixels[i]);
  return g;
}

inline std::uint16_t clamp_to_range(double x, int max_val) {
  long r = std::lround(x);
  if (r < 0) r = 0;
  if (r > max_val) r = max_val;
  return static_cast<std::uint16_t>(r);
}

// Bilinear resampling with corner alignment: source position of output
// pixel i is i*(src-1)/(dst-1), so corner samples map onto corners exactly
// and equal dimensions reproduce the input bit for bit. A singleton axis
// degenerates to a constant along that axis.
inline Grid bilinear_resize(const Grid& src, std::size_t tw, std::size_t th) {
  if (src.width == 0 || src.height == 0)
    throw std::invalid_argument("bilinear_resize: empty source grid");
  if (tw == 0 || th == 0)
    throw std::invalid_argument("bilinear_resize: zero target dimension");
  Grid out(tw, th);
  const double sx_scale =
      tw > 1 ? static_cast<double>(src.width - 1) / (tw - 1) : 0.0;
  const double sy_scale =
      th > 1 ? static_cast<double>(src.height - 1) / (th - 1) : 0.0;
  for (std::size_t y = 0; y < th; ++y) {
    double sy = y * sy_scale;
    std::size_t y0 = static_cast<std::size_t>(sy);
    std::size_t y1 = std::min(y0 + 1, src.height - 1);
    double fy = sy - y0;
    for (std::size_t x = 0; x < tw; ++x) {
      double sx = x * sx_scale;
      std::size_t x0 = static_cast<std::size_t>(sx);
      std::size_t x1 = std::min(x0 + 1, src.width - 1);
      double fx = sx - x0;
      double top = src.at(x0, y0) * (1.0 - fx) + src.at(x1, y0) * fx;
      double bot = src.at(x0, y1) * (1.0 - fx) + src.at(x1, y1) * fx;
      out.at(x, y) = top * (1.0 - fy) + bot * fy;
    }
  }
  return out;
}

// Min-max normalization onto [0, max_val]; a constant grid maps to zero.
inline GrayImage grid_to_image_minmax(const Grid& g, int max_val) {
  if (g.width == 0 || g.height == 0)
    throw std::invalid_argument("grid_to_image_minmax: empty grid");
  auto [mn_it, mx_it] = std::minmax_element(g.v.begin(), g.v.end());
  double mn = *mn_it, mx = *mx_it;
  GrayImage out(g.width, g.height, max_val);
  if (mx > mn) {
    double scale = static_cast<double>(max_val) / (mx - mn);
    for (std::size_t i = 0; i < g.v.size(); ++i)
      out.pixels[i] = clamp_to_range((g.v[i] - mn) * scale, max_val);
  }
  return out;
}

inline GrayImage resize_image(const GrayImage& img, std::size_t tw,
                              std::size_t th) {
  Grid g = bilinear_resize(to_grid(img), tw, th);
  GrayImage out(tw, th, img.max_val);
  for (std::size_t i = 0; i < g.v.size(); ++i)
    out.pixels[i] = clamp_to_range(g.v[i], img.max_val);
  return out;
}

}  // namespace mammopipe
