#pragma once
// Mini-MIAS ingest: metadata parsing, labeled dataset assembly, stratified
// train/validation splitting and oversampling-based class balancing.
//
// Info-file line format (whitespace separated):
//   id tissue class [severity [x y radius]]
// NORM lines have no severity; abnormal lines may omit the coordinates
// (widely distributed findings have no meaningful center).

#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "mammopipe/image.hpp"
#include "mammopipe/pgm.hpp"
#include "mammopipe/rng.hpp"

namespace mammopipe::mias {

enum class Tissue { Fatty, FattyGlandular, Dense };
enum class Abnormality { CALC, CIRC, SPIC, MISC, ARCH, ASYM, NORM };
enum class Severity { Benign, Malignant, Normal };

inline constexpr std::size_t kAbnormalityCount = 7;
inline constexpr std::size_t kSeverityCount = 3;

inline const char* to_string(Tissue t) {
  switch (t) {
    case Tissue::Fatty: return "F";
    case Tissue::FattyGlandular: return "G";
    case Tissue::Dense: return "D";
  }
  return "?";
}

inline const char* to_string(Abnormality a) {
  switch (a) {
    case Abnormality::CALC: return "CALC";
    case Abnormality::CIRC: return "CIRC";
    case Abnormality::SPIC: return "SPIC";
    case Abnormality::MISC: return "MISC";
    case Abnormality::ARCH: return "ARCH";
    case Abnormality::ASYM: return "ASYM";
    case Abnormality::NORM: return "NORM";
  }
  return "?";
}

inline const char* to_string(Severity s) {
  switch (s) {
    case Severity::Benign: return "Benign";
    case Severity::Malignant: return "Malignant";
    case Severity::Normal: return "Normal";
  }
  return "?";
}

struct MiasRecord {
  std::string id;
  Tissue tissue = Tissue::Fatty;
  Abnormality abnormality = Abnormality::NORM;
  Severity severity = Severity::Normal;
  std::optional<std::pair<int, int>> center;  // (x, y) pixels
  std::optional<int> radius;                  // pixels

  int label7() const { return static_cast<int>(abnormality); }
  int label3() const { return static_cast<int>(severity); }
};

struct ParseIssue {
  std::size_t line_number = 0;  // 1-based
  std::string line;
  std::string message;
};

struct MetadataParse {
  std::vector<MiasRecord> records;  // one per well-formed line
  std::vector<ParseIssue> issues;   // rejected lines, with line numbers
};

namespace detail {

inline std::optional<Tissue> parse_tissue(std::string_view tok) {
  if (tok == "F") return Tissue::Fatty;
  if (tok == "G") return Tissue::FattyGlandular;
  if (tok == "D") return Tissue::Dense;
  return std::nullopt;
}

inline std::optional<Abnormality> parse_abnormality(std::string_view tok) {
  if (tok == "CALC") return Abnormality::CALC;
  if (tok == "CIRC") return Abnormality::CIRC;
  if (tok == "SPIC") return Abnormality::SPIC;
  if (tok == "MISC") return Abnormality::MISC;
  if (tok == "ARCH") return Abnormality::ARCH;
  if (tok == "ASYM") return Abnormality::ASYM;
  if (tok == "NORM") return Abnormality::NORM;
  return std::nullopt;
}

inline bool parse_int(const std::string& tok, int& out) {
  try {
    std::size_t used = 0;
    int v = std::stoi(tok, &used);
    if (used != tok.size()) return false;
    out = v;
    return true;
  } catch (const std::exception&) {
    return false;
  }
}

}  // namespace detail

inline MetadataParse parse_mias_metadata(std::string_view text) {
  MetadataParse result;
  std::istringstream stream{std::string(text)};
  std::string line;
  std::size_t line_number = 0;

  auto reject = [&](const std::string& msg) {
    result.issues.push_back({line_number, line, msg});
  };

  while (std::getline(stream, line)) {
    ++line_number;
    if (!line.empty() && line.back() == '\r') line.pop_back();

    std::istringstream fields(line);
    std::vector<std::string> tok;
    std::string t;
    while (fields >> t) tok.push_back(t);
    if (tok.empty() || tok[0][0] == '#') continue;  // blank or comment

    if (tok.size() != 3 && tok.size() != 4 && tok.size() != 7) {
      reject("expected 3, 4 or 7 fields, got " + std::to_string(tok.size()));
      continue;
    }

    MiasRecord rec;
    rec.id = tok[0];
    auto tissue = detail::parse_tissue(tok[1]);
    if (!tissue) {
      reject("unknown tissue token '" + tok[1] + "'");
      continue;
    }
    rec.tissue = *tissue;
    auto abn = detail::parse_abnormality(tok[2]);
    if (!abn) {
      reject("unknown class token '" + tok[2] + "'");
      continue;
    }
    rec.abnormality = *abn;

    if (rec.abnormality == Abnormality::NORM) {
      if (tok.size() != 3) {
        reject("NORM line must not carry severity or coordinates");
        continue;
      }
      rec.severity = Severity::Normal;
    } else {
      if (tok.size() == 3) {
        reject("abnormal record is missing a severity token");
        continue;
      }
      if (tok[3] == "B") {
        rec.severity = Severity::Benign;
      } else if (tok[3] == "M") {
        rec.severity = Severity::Malignant;
      } else {
        reject("severity token must be B or M, got '" + tok[3] + "'");
        continue;
      }
      if (tok.size() == 7) {
        int x = 0, y = 0, r = 0;
        if (!detail::parse_int(tok[4], x) || !detail::parse_int(tok[5], y) ||
            !detail::parse_int(tok[6], r)) {
          reject("coordinates must be integers");
          continue;
        }
        rec.center = std::make_pair(x, y);
        rec.radius = r;
      }
    }
    result.records.push_back(std::move(rec));
  }
  return result;
}

// ---------------------------------------------------------------------------
// Datasets

struct Sample {
  std::shared_ptr<const GrayImage> image;
  MiasRecord record;
  bool oversampled = false;  // true for balancing duplicates
};

struct Dataset {
  std::vector<Sample> samples;
  std::uint64_t split_seed = 0;

  std::array<std::size_t, kAbnormalityCount> class_counts() const {
    std::array<std::size_t, kAbnormalityCount> counts{};
    for (const auto& s : samples) counts[s.record.label7()]++;
    return counts;
  }

  std::array<std::size_t, kSeverityCount> severity_counts() const {
    std::array<std::size_t, kSeverityCount> counts{};
    for (const auto& s : samples) counts[s.record.label3()]++;
    return counts;
  }
};

// Stratified split. Within each class the indices are shuffled with a
// class-specific stream derived from `seed`; the validation share is
// floor((1 - train_fraction) * n) and the fractional leftover sample stays
// in training.
inline std::pair<Dataset, Dataset> split_train_val(
    const Dataset& dataset, double train_fraction, std::uint64_t seed,
    std::vector<std::string>* warnings = nullptr) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0))
    throw std::invalid_argument("train_fraction must be in (0, 1)");

  std::array<std::vector<std::size_t>, kAbnormalityCount> by_class;
  for (std::size_t i = 0; i < dataset.samples.size(); ++i)
    by_class[dataset.samples[i].record.label7()].push_back(i);

  Dataset train, val;
  train.split_seed = seed;
  val.split_seed = seed;
  for (std::size_t c = 0; c < kAbnormalityCount; ++c) {
    auto& idx = by_class[c];
    if (idx.empty()) {
      if (warnings)
        warnings->push_back(std::string("class ") +
                            to_string(static_cast<Abnormality>(c)) +
                            " has no samples; skipped");
      continue;
    }
    SplitMix64 rng(derive_seed(seed, "split", c));
    shuffle(idx, rng);
    std::size_t val_count = static_cast<std::size_t>(
        std::floor((1.0 - train_fraction) * static_cast<double>(idx.size())));
    std::size_t train_count = idx.size() - val_count;
    for (std::size_t i = 0; i < idx.size(); ++i) {
      (i < train_count ? train : val).samples.push_back(dataset.samples[idx[i]]);
    }
  }
  return {std::move(train), std::move(val)};
}

// Oversamples every class up to the largest class count by drawing with
// replacement. Originals are always kept; duplicates carry the oversampled
// flag.
inline Dataset balance_classes(const Dataset& dataset, std::uint64_t seed) {
  std::array<std::vector<std::size_t>, kAbnormalityCount> by_class;
  for (std::size_t i = 0; i < dataset.samples.size(); ++i)
    by_class[dataset.samples[i].record.label7()].push_back(i);

  std::size_t target = 0;
  for (const auto& idx : by_class) target = std::max(target, idx.size());
  if (target == 0)
    throw std::invalid_argument("balance_classes: dataset is empty");

  Dataset out;
  out.split_seed = dataset.split_seed;
  out.samples = dataset.samples;
  for (std::size_t c = 0; c < kAbnormalityCount; ++c) {
    const auto& idx = by_class[c];
    if (idx.empty()) continue;
    SplitMix64 rng(derive_seed(seed, "balance", c));
    for (std::size_t n = idx.size(); n < target; ++n) {
      Sample dup = dataset.samples[idx[rng.uniform_int(idx.size())]];
      dup.oversampled = true;
      out.samples.push_back(std::move(dup));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Directory ingest

struct IngestSummary {
  std::array<std::size_t, kAbnormalityCount> class_counts{};
  std::array<std::size_t, kSeverityCount> severity_counts{};
  std::size_t total = 0;
  std::vector<ParseIssue> parse_issues;
  std::vector<std::string> duplicate_ids;   // extra info lines, first kept
  std::vector<std::string> missing_images;  // id listed, no readable file
  std::vector<std::string> decode_failures; // file present but undecodable
  std::vector<std::string> discrepancies;   // human-readable findings

  nlohmann::json to_json() const {
    nlohmann::json j;
    for (std::size_t c = 0; c < kAbnormalityCount; ++c)
      j["class_counts"][to_string(static_cast<Abnormality>(c))] =
          class_counts[c];
    for (std::size_t s = 0; s < kSeverityCount; ++s)
      j["severity_counts"][to_string(static_cast<Severity>(s))] =
          severity_counts[s];
    j["total"] = total;
    j["duplicate_ids"] = duplicate_ids;
    j["missing_images"] = missing_images;
    j["decode_failures"] = decode_failures;
    j["discrepancies"] = discrepancies;
    nlohmann::json issues = nlohmann::json::array();
    for (const auto& issue : parse_issues)
      issues.push_back({{"line", issue.line_number},
                        {"text", issue.line},
                        {"message", issue.message}});
    j["parse_issues"] = issues;
    return j;
  }
};

struct IngestResult {
  Dataset dataset;
  IngestSummary summary;
};

inline std::filesystem::path find_info_file(
    const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  for (const char* name : {"info.txt", "Info.txt", "INFO.txt", "mias.txt"}) {
    fs::path p = dir / name;
    if (fs::exists(p)) return p;
  }
  // Fall back to the unique .txt in the directory, if there is one.
  std::vector<fs::path> txts;
  if (fs::exists(dir))
    for (const auto& e : fs::directory_iterator(dir))
      if (e.path().extension() == ".txt") txts.push_back(e.path());
  if (txts.size() == 1) return txts.front();
  throw std::runtime_error("no metadata file found in " + dir.string() +
                           " (expected info.txt)");
}

// Reads the info file plus one PGM per record id ({id}.pgm). Images with
// several metadata lines keep the first line only; the rest are reported.
// `load_images` can be turned off for metadata-only scans.
inline IngestResult ingest_directory(const std::filesystem::path& dir,
                                     bool load_images = true) {
  namespace fs = std::filesystem;
  if (!fs::exists(dir))
    throw std::runtime_error("dataset directory " + dir.string() +
                             " does not exist");
  fs::path info_path = find_info_file(dir);
  std::ifstream in(info_path);
  std::ostringstream buf;
  buf << in.rdbuf();

  MetadataParse parsed = parse_mias_metadata(buf.str());

  IngestResult result;
  result.summary.parse_issues = parsed.issues;

  std::map<std::string, bool> seen;
  for (const auto& rec : parsed.records) {
    if (seen.count(rec.id)) {
      if (!seen[rec.id]) {
        result.summary.duplicate_ids.push_back(rec.id);
        result.summary.discrepancies.push_back(
            "id " + rec.id + " has multiple metadata lines; kept the first");
        seen[rec.id] = true;
      }
      continue;
    }
    seen[rec.id] = false;

    Sample sample;
    sample.record = rec;
    if (load_images) {
      fs::path img_path = dir / (rec.id + ".pgm");
      if (!fs::exists(img_path)) {
        result.summary.missing_images.push_back(rec.id);
        continue;
      }
      try {
        sample.image =
            std::make_shared<GrayImage>(read_pgm_file(img_path));
      } catch (const PgmError& e) {
        result.summary.decode_failures.push_back(rec.id + ": " + e.what());
        continue;
      }
    }
    result.dataset.samples.push_back(std::move(sample));
  }

  result.summary.class_counts = result.dataset.class_counts();
  result.summary.severity_counts = result.dataset.severity_counts();
  result.summary.total = result.dataset.samples.size();
  for (const auto& issue : parsed.issues)
    result.summary.discrepancies.push_back(
        "line " + std::to_string(issue.line_number) + " rejected: " +
        issue.message);
  if (!result.summary.missing_images.empty())
    result.summary.discrepancies.push_back(
        std::to_string(result.summary.missing_images.size()) +
        " image file(s) listed in the metadata are missing");
  if (!result.summary.decode_failures.empty())
    result.summary.discrepancies.push_back(
        std::to_string(result.summary.decode_failures.size()) +
        " image file(s) failed to decode");
  return result;
}

}  // namespace mammopipe::mias
