#pragma once
// PGM (portable graymap) reader/writer. Handles binary P5 and ASCII P2,
// header comments, and 16-bit big-endian rasters (maxval > 255).

#include <cctype>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "mammopipe/image.hpp"

namespace mammopipe {

class PgmError : public std::runtime_error {
 public:
  enum class Kind { BadMagic, BadHeader, BadMaxVal, Truncated, BadPixel };

  PgmError(Kind kind, const std::string& msg)
      : std::runtime_error(msg), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

namespace detail {

// Skips whitespace and '#' comments (which run to end of line).
inline void skip_pgm_space(std::string_view data, std::size_t& pos) {
  while (pos < data.size()) {
    char c = data[pos];
    if (c == '#') {
      while (pos < data.size() && data[pos] != '\n') ++pos;
    } else if (std::isspace(static_cast<unsigned char>(c))) {
      ++pos;
    } else {
      break;
    }
  }
}

inline long read_pgm_int(std::string_view data, std::size_t& pos,
                         const char* what) {
  skip_pgm_space(data, pos);
  if (pos >= data.size() ||
      !std::isdigit(static_cast<unsigned char>(data[pos])))
    throw PgmError(PgmError::Kind::BadHeader,
                   std::string("pgm: expected integer for ") + what);
  long value = 0;
  while (pos < data.size() &&
         std::isdigit(static_cast<unsigned char>(data[pos]))) {
    value = value * 10 + (data[pos] - '0');
    if (value > 1000000000L)
      throw PgmError(PgmError::Kind::BadHeader,
                     std::string("pgm: integer overflow in ") + what);
    ++pos;
  }
  return value;
}

}  // namespace detail

inline GrayImage decode_pgm(std::string_view data) {
  if (data.size() < 2 || data[0] != 'P' || (data[1] != '5' && data[1] != '2'))
    throw PgmError(PgmError::Kind::BadMagic,
                   "pgm: magic must be P5 (binary) or P2 (ascii)");
  const bool binary = data[1] == '5';
  std::size_t pos = 2;

  long w = detail::read_pgm_int(data, pos, "width");
  long h = detail::read_pgm_int(data, pos, "height");
  long maxv = detail::read_pgm_int(data, pos, "maxval");
  if (w < 1 || h < 1)
    throw PgmError(PgmError::Kind::BadHeader, "pgm: dimensions must be >= 1");
  if (maxv < 1 || maxv > 65535)
    throw PgmError(PgmError::Kind::BadMaxVal,
                   "pgm: maxval " + std::to_string(maxv) +
                       " outside [1, 65535]");

  GrayImage img(static_cast<std::size_t>(w), static_cast<std::size_t>(h),
                static_cast<int>(maxv));
  const std::size_t count = img.size();

  if (binary) {
    // Exactly one whitespace byte separates the header from the raster.
    if (pos >= data.size() ||
        !std::isspace(static_cast<unsigned char>(data[pos])))
      throw PgmError(PgmError::Kind::BadHeader,
                     "pgm: missing separator before raster");
    ++pos;
    const bool wide = maxv > 255;  // two bytes per sample, big-endian
    const std::size_t need = count * (wide ? 2 : 1);
    if (data.size() - pos < need)
      throw PgmError(PgmError::Kind::Truncated,
                     "pgm: raster truncated, need " + std::to_string(need) +
                         " bytes, have " + std::to_string(data.size() - pos));
    for (std::size_t i = 0; i < count; ++i) {
      std::uint32_t value;
      if (wide) {
        value = (static_cast<std::uint8_t>(data[pos]) << 8) |
                static_cast<std::uint8_t>(data[pos + 1]);
        pos += 2;
      } else {
        value = static_cast<std::uint8_t>(data[pos]);
        ++pos;
      }
      if (value > static_cast<std::uint32_t>(maxv))
        throw PgmError(PgmError::Kind::BadPixel,
                       "pgm: sample " + std::to_string(value) +
                           " exceeds maxval " + std::to_string(maxv));
      img.pixels[i] = static_cast<std::uint16_t>(value);
    }
  } else {
    for (std::size_t i = 0; i < count; ++i) {
      detail::skip_pgm_space(data, pos);
      if (pos >= data.size())
        throw PgmError(PgmError::Kind::Truncated,
                       "pgm: ascii raster ends after " + std::to_string(i) +
                           " of " + std::to_string(count) + " samples");
      long value = detail::read_pgm_int(data, pos, "sample");
      if (value > maxv)
        throw PgmError(PgmError::Kind::BadPixel,
                       "pgm: sample " + std::to_string(value) +
                           " exceeds maxval " + std::to_string(maxv));
      img.pixels[i] = static_cast<std::uint16_t>(value);
    }
  }
  return img;
}

inline std::string encode_pgm(const GrayImage& img, bool binary = true) {
  std::ostringstream out;
  out << (binary ? "P5" : "P2") << "\n"
      << img.width << " " << img.height << "\n"
      << img.max_val << "\n";
  if (binary) {
    std::string raster;
    const bool wide = img.max_val > 255;
    raster.reserve(img.size() * (wide ? 2 : 1));
    for (std::uint16_t p : img.pixels) {
      if (wide) raster.push_back(static_cast<char>(p >> 8));
      raster.push_back(static_cast<char>(p & 0xFF));
    }
    out << raster;
  } else {
    std::size_t per_line = 0;
    for (std::size_t i = 0; i < img.pixels.size(); ++i) {
      out << img.pixels[i];
      if (++per_line == 16 || i + 1 == img.pixels.size()) {
        out << "\n";
        per_line = 0;
      } else {
        out << " ";
      }
    }
  }
  return out.str();
}

inline GrayImage read_pgm_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw std::runtime_error("cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return decode_pgm(buf.str());
}

inline void write_pgm_file(const std::filesystem::path& path,
                           const GrayImage& img, bool binary = true) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out)
    throw std::runtime_error("cannot write " + path.string());
  out << encode_pgm(img, binary);
}

}  // namespace mammopipe
