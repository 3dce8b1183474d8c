#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <string>

#include "mammopipe/pgm.hpp"
#include "mammopipe/rng.hpp"

using namespace mammopipe;

TEST_CASE("binary P5 decode", "[pgm]") {
  std::string data = "P5 2 2 255\n";
  data += std::string("\x00\x80\xFF\x40", 4);
  GrayImage img = decode_pgm(data);
  REQUIRE(img.width == 2);
  REQUIRE(img.height == 2);
  CHECK(img.max_val == 255);
  CHECK(img.pixels == std::vector<std::uint16_t>{0, 128, 255, 64});
}

TEST_CASE("ascii P2 decode", "[pgm]") {
  GrayImage img = decode_pgm("P2 1 1 255\n42\n");
  REQUIRE(img.width == 1);
  REQUIRE(img.height == 1);
  CHECK(img.pixels[0] == 42);
}

TEST_CASE("header comments are skipped", "[pgm]") {
  std::string data = "P2\n# a comment\n2 # inline\n1\n# more\n255\n7 9\n";
  GrayImage img = decode_pgm(data);
  REQUIRE(img.width == 2);
  CHECK(img.pixels[0] == 7);
  CHECK(img.pixels[1] == 9);
}

TEST_CASE("16-bit P5 is big-endian", "[pgm]") {
  std::string data = "P5 2 1 65535\n";
  data += std::string("\x01\x02\xFF\xFE", 4);  // 0x0102, 0xFFFE
  GrayImage img = decode_pgm(data);
  CHECK(img.max_val == 65535);
  CHECK(img.pixels[0] == 0x0102);
  CHECK(img.pixels[1] == 0xFFFE);
}

TEST_CASE("decode errors are distinct", "[pgm]") {
  auto kind_of = [](const std::string& data) {
    try {
      decode_pgm(data);
    } catch (const PgmError& e) {
      return e.kind();
    }
    FAIL("expected a PgmError");
    return PgmError::Kind::BadMagic;
  };
  CHECK(kind_of("P6 1 1 255\nx") == PgmError::Kind::BadMagic);
  CHECK(kind_of("Q5 1 1 255\nx") == PgmError::Kind::BadMagic);
  CHECK(kind_of("P5 2 2 255\nab") == PgmError::Kind::Truncated);
  CHECK(kind_of("P2 2 1 255\n3") == PgmError::Kind::Truncated);
  CHECK(kind_of("P5 1 1 0\nx") == PgmError::Kind::BadMaxVal);
  CHECK(kind_of("P5 1 1 70000\nxx") == PgmError::Kind::BadMaxVal);
  CHECK(kind_of("P2 1 1 100\n200\n") == PgmError::Kind::BadPixel);
  CHECK(kind_of("P5") == PgmError::Kind::BadHeader);
}

TEST_CASE("encode/decode round-trips random images", "[pgm]") {
  SplitMix64 rng(99);
  for (int trial = 0; trial < 24; ++trial) {
    std::size_t w = 1 + rng.uniform_int(9);
    std::size_t h = 1 + rng.uniform_int(9);
    int maxv = trial % 3 == 0 ? 65535 : 255;
    GrayImage img(w, h, maxv);
    for (auto& p : img.pixels)
      p = static_cast<std::uint16_t>(rng.uniform_int(maxv + 1));

    GrayImage p5 = decode_pgm(encode_pgm(img, true));
    GrayImage p2 = decode_pgm(encode_pgm(img, false));
    CHECK(p5 == img);
    CHECK(p2 == img);
  }
}

TEST_CASE("file io round trip", "[pgm]") {
  namespace fs = std::filesystem;
  fs::path dir = fs::temp_directory_path() / "mammopipe_pgm_test";
  fs::create_directories(dir);
  GrayImage img(3, 2, 255);
  for (std::size_t i = 0; i < img.pixels.size(); ++i)
    img.pixels[i] = static_cast<std::uint16_t>(40 * i);
  write_pgm_file(dir / "t.pgm", img);
  CHECK(read_pgm_file(dir / "t.pgm") == img);
  fs::remove_all(dir);
}
