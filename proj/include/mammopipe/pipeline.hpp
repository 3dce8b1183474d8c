#pragma once
// End-to-end orchestration: resolved run configuration (JSON round-trip),
// the experiment runner (ingest -> split -> preprocess -> augment -> cascade
// training -> one-vs-rest evaluation) and the two-condition comparison
// report. The CLI is a thin wrapper over these entry points.

#include <array>
#include <cctype>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mammopipe/augment.hpp"
#include "mammopipe/cascade.hpp"
#include "mammopipe/eval.hpp"
#include "mammopipe/mias.hpp"
#include "mammopipe/nn.hpp"
#include "mammopipe/pgm.hpp"
#include "mammopipe/preprocess.hpp"
#include "mammopipe/rng.hpp"
#include "mammopipe/synthetic.hpp"
#include "mammopipe/wavelet.hpp"

namespace mammopipe::pipe {

enum class Condition { OriginalOnly, Preprocessed };

inline const char* to_string(Condition c) {
  return c == Condition::OriginalOnly ? "original_only" : "preprocessed";
}

inline Condition condition_from_string(const std::string& s) {
  if (s == "original_only") return Condition::OriginalOnly;
  if (s == "preprocessed") return Condition::Preprocessed;
  throw std::invalid_argument("unknown condition '" + s +
                              "' (original_only|preprocessed)");
}

struct RunConfig {
  std::string dataset_path;
  std::string output_dir;
  std::uint64_t seed = 1;
  Condition condition = Condition::Preprocessed;
  double train_fraction = 0.75;
  bool balance = true;
  std::size_t input_size = 48;  // network input side length
  bool export_corpus = false;
  prep::SegmenterConfig segmenter;
  wav::WaveletConfig wavelet;
  aug::AugmentConfig augment;
  nn::TrainConfig train;

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["dataset_path"] = dataset_path;
    j["output_dir"] = output_dir;
    j["seed"] = seed;
    j["condition"] = to_string(condition);
    j["train_fraction"] = train_fraction;
    j["balance"] = balance;
    j["input_size"] = input_size;
    j["export_corpus"] = export_corpus;
    j["segmenter"] = {{"window", segmenter.window},
                      {"dev_factor", segmenter.deviation_factor},
                      {"k", segmenter.k},
                      {"seed", segmenter.seed}};
    j["wavelet"] = {{"family", wavelet.family}, {"levels", wavelet.levels}};
    j["augment"] = {
        {"copies", augment.copies},
        {"mode", augment.mode == aug::AugmentMode::Channels ? "channels"
                                                            : "samples"},
        {"rotation_deg", {augment.ranges.rotation_deg.lo,
                          augment.ranges.rotation_deg.hi}},
        {"translate_px", {augment.ranges.translate_px.lo,
                          augment.ranges.translate_px.hi}},
        {"scale", {augment.ranges.scale.lo, augment.ranges.scale.hi}},
        {"shear_deg", {augment.ranges.shear_deg.lo,
                       augment.ranges.shear_deg.hi}}};
    j["train"] = {{"max_epochs", train.max_epochs},
                  {"mini_batch", train.mini_batch},
                  {"learn_rate", train.learn_rate},
                  {"head_lr_multiplier", train.head_lr_multiplier},
                  {"momentum", train.momentum}};
    return j;
  }

  static RunConfig from_json(const nlohmann::json& j) {
    RunConfig c;
    c.dataset_path = j.value("dataset_path", c.dataset_path);
    c.output_dir = j.value("output_dir", c.output_dir);
    c.seed = j.value("seed", c.seed);
    if (j.contains("condition"))
      c.condition = condition_from_string(j.at("condition").get<std::string>());
    c.train_fraction = j.value("train_fraction", c.train_fraction);
    c.balance = j.value("balance", c.balance);
    c.input_size = j.value("input_size", c.input_size);
    c.export_corpus = j.value("export_corpus", c.export_corpus);
    if (j.contains("segmenter")) {
      const auto& s = j.at("segmenter");
      c.segmenter.window = s.value("window", c.segmenter.window);
      c.segmenter.deviation_factor =
          s.value("dev_factor", c.segmenter.deviation_factor);
      c.segmenter.k = s.value("k", c.segmenter.k);
      c.segmenter.seed = s.value("seed", c.segmenter.seed);
    }
    if (j.contains("wavelet")) {
      const auto& w = j.at("wavelet");
      c.wavelet.family = w.value("family", c.wavelet.family);
      c.wavelet.levels = w.value("levels", c.wavelet.levels);
    }
    if (j.contains("augment")) {
      const auto& a = j.at("augment");
      c.augment.copies = a.value("copies", c.augment.copies);
      if (a.contains("mode"))
        c.augment.mode = a.at("mode").get<std::string>() == "samples"
                             ? aug::AugmentMode::Samples
                             : aug::AugmentMode::Channels;
      auto interval = [&](const char* key, aug::Interval& out) {
        if (a.contains(key)) {
          out.lo = a.at(key).at(0).get<double>();
          out.hi = a.at(key).at(1).get<double>();
        }
      };
      interval("rotation_deg", c.augment.ranges.rotation_deg);
      interval("translate_px", c.augment.ranges.translate_px);
      interval("scale", c.augment.ranges.scale);
      interval("shear_deg", c.augment.ranges.shear_deg);
    }
    if (j.contains("train")) {
      const auto& t = j.at("train");
      c.train.max_epochs = t.value("max_epochs", c.train.max_epochs);
      c.train.mini_batch = t.value("mini_batch", c.train.mini_batch);
      c.train.learn_rate = t.value("learn_rate", c.train.learn_rate);
      c.train.head_lr_multiplier =
          t.value("head_lr_multiplier", c.train.head_lr_multiplier);
      c.train.momentum = t.value("momentum", c.train.momentum);
    }
    return c;
  }
};

inline const std::vector<std::string>& severity_class_names() {
  static const std::vector<std::string> names = {"Benign", "Malignant",
                                                 "Normal"};
  return names;
}

namespace detail {

// Single-channel corpus for the original_only condition; affine copies are
// still applied (basic augmentation is independent of preprocessing).
inline std::vector<aug::AugmentedSample> assemble_original_only(
    const mias::Dataset& dataset, const aug::AugmentConfig& aug_cfg,
    std::uint64_t seed) {
  std::vector<aug::AugmentedSample> corpus;
  std::map<std::string, std::size_t> occurrence;
  for (const auto& sample : dataset.samples) {
    if (!sample.image)
      throw std::runtime_error("sample " + sample.record.id +
                               ": image not loaded");
    const std::size_t occ = occurrence[sample.record.id]++;
    corpus.push_back(
        {{*sample.image}, sample.record, aug::Provenance::Original, 0});
    for (std::size_t copy = 0; copy < aug_cfg.copies; ++copy) {
      std::uint64_t s = derive_seed(seed, sample.record.id,
                                    copy + aug_cfg.copies * occ);
      corpus.push_back({{aug::random_affine(*sample.image, aug_cfg.ranges, s)},
                        sample.record,
                        aug::Provenance::Affine,
                        s});
    }
  }
  return corpus;
}

inline std::vector<aug::AugmentedSample> assemble_for_condition(
    const mias::Dataset& dataset, const RunConfig& cfg,
    const aug::AugmentConfig& aug_cfg, std::uint64_t seed) {
  if (cfg.condition == Condition::OriginalOnly)
    return assemble_original_only(dataset, aug_cfg, seed);
  return aug::assemble_training_set(dataset, cfg.segmenter, cfg.wavelet,
                                    aug_cfg, seed);
}

}  // namespace detail

struct RunResult {
  nlohmann::json summary;
  std::filesystem::path summary_path;
  eval::OneVsRestReport report;
};

// Executes one full experiment and writes every artifact under
// cfg.output_dir: checkpoints + wiring descriptor, per-stage history CSVs,
// ROC points CSV, AUC table (CSV and aligned text), one SVG per class, and
// summary.json embedding the fully resolved config. Identical config + seed
// produces byte-identical artifacts.
inline RunResult run_experiment(const RunConfig& cfg) {
  namespace fs = std::filesystem;
  if (!fs::exists(cfg.dataset_path))
    throw std::runtime_error("dataset path " + cfg.dataset_path +
                             " does not exist");
  if (cfg.output_dir.empty())
    throw std::invalid_argument("output_dir must be set");
  fs::create_directories(cfg.output_dir);
  const fs::path out = cfg.output_dir;

  // Ingest and split.
  mias::IngestResult ingest = mias::ingest_directory(cfg.dataset_path);
  if (ingest.dataset.samples.empty())
    throw std::runtime_error("dataset " + cfg.dataset_path +
                             " yielded no usable samples");
  auto [train_ds, val_ds] = mias::split_train_val(
      ingest.dataset, cfg.train_fraction, derive_seed(cfg.seed, "split"));
  if (cfg.balance)
    train_ds = mias::balance_classes(train_ds, derive_seed(cfg.seed, "balance"));

  // Corpus assembly; validation never receives affine copies.
  aug::AugmentConfig train_aug = cfg.augment;
  aug::AugmentConfig val_aug = cfg.augment;
  val_aug.copies = 0;
  auto train_samples = detail::assemble_for_condition(
      train_ds, cfg, train_aug, derive_seed(cfg.seed, "augment"));
  auto val_samples = detail::assemble_for_condition(
      val_ds, cfg, val_aug, derive_seed(cfg.seed, "augment-val"));
  if (cfg.export_corpus)
    aug::write_corpus(out / "corpus", train_samples);

  cascade::CascadeCorpus train_corpus =
      cascade::corpus_from_samples(train_samples, cfg.input_size);
  cascade::CascadeCorpus val_corpus =
      cascade::corpus_from_samples(val_samples, cfg.input_size);

  // Train both stages.
  cascade::CascadeConfig ccfg;
  ccfg.train = cfg.train;
  ccfg.train.seed = derive_seed(cfg.seed, "cascade");
  cascade::CascadeTrainReport treport;
  cascade::CascadeModel model =
      cascade::train_cascade(train_corpus, val_corpus, ccfg, &treport);

  cascade::save_cascade(model, out, "cascade");
  nn::write_history_csv(treport.stage1_history, out / "stage1_history.csv");
  nn::write_history_csv(treport.stage2_history, out / "stage2_history.csv");

  // Severity evaluation on the validation split.
  auto probs = cascade::cascade_probs(model, val_corpus);
  eval::OneVsRestReport report = eval::one_vs_rest_report(
      probs, val_corpus.label3, severity_class_names());
  eval::write_roc_csv(out / "roc.csv", report);

  eval::AucTable table;
  table.condition_names = {to_string(cfg.condition)};
  double auc_sum = 0.0;
  std::size_t auc_n = 0;
  for (const auto& cls : report.classes) {
    table.class_names.push_back(cls.name);
    table.values.push_back({cls.valid ? cls.curve.auc : -1.0});
    if (cls.valid) {
      auc_sum += cls.curve.auc;
      ++auc_n;
    }
  }
  eval::write_auc_csv(out / "auc.csv", table);
  eval::write_auc_text(out / "auc.txt", table);
  for (const auto& cls : report.classes) {
    if (!cls.valid) continue;
    std::string low = cls.name;
    for (char& ch : low) ch = static_cast<char>(std::tolower(ch));
    eval::write_roc_svg(out / ("roc_" + low + ".svg"),
                        "ROC - " + cls.name + " class",
                        {{to_string(cfg.condition), &cls.curve, false}});
  }

  // Summary.
  nlohmann::json summary;
  summary["condition"] = to_string(cfg.condition);
  summary["config"] = cfg.to_json();
  summary["counts"] = {
      {"dataset", ingest.dataset.samples.size()},
      {"train_images", train_ds.samples.size()},
      {"val_images", val_ds.samples.size()},
      {"train_samples", train_corpus.size()},
      {"val_samples", val_corpus.size()},
  };
  for (std::size_t c = 0; c < mias::kAbnormalityCount; ++c)
    summary["class_counts"][mias::to_string(
        static_cast<mias::Abnormality>(c))] = ingest.summary.class_counts[c];
  nlohmann::json auc;
  for (const auto& cls : report.classes) {
    std::string low = cls.name;
    for (char& ch : low) ch = static_cast<char>(std::tolower(ch));
    if (cls.valid)
      auc[low] = cls.curve.auc;
    else
      auc[low] = nullptr;
  }
  auc["mean"] = auc_n > 0 ? auc_sum / static_cast<double>(auc_n) : 0.0;
  summary["auc"] = auc;
  summary["stage1_final"] = {
      {"train_loss", treport.stage1_history.epochs.back().train_loss},
      {"train_acc", treport.stage1_history.epochs.back().train_acc},
      {"val_acc", treport.stage1_history.epochs.back().val_acc}};
  summary["stage2_final"] = {
      {"train_loss", treport.stage2_history.epochs.back().train_loss},
      {"train_acc", treport.stage2_history.epochs.back().train_acc},
      {"val_acc", treport.stage2_history.epochs.back().val_acc}};
  summary["artifacts"] = {
      {"stage1_checkpoint", "cascade_stage1.ckpt"},
      {"stage2_checkpoint", "cascade_stage2.ckpt"},
      {"wiring", "cascade.json"},
      {"roc_csv", "roc.csv"},
      {"auc_csv", "auc.csv"},
  };

  RunResult result;
  result.summary = summary;
  result.summary_path = out / "summary.json";
  result.report = report;
  std::ofstream os(result.summary_path, std::ios::trunc);
  if (!os)
    throw std::runtime_error("cannot write " + result.summary_path.string());
  os << summary.dump(2) << "\n";
  return result;
}

// ---------------------------------------------------------------------------
// Two-condition comparison report

namespace detail {

inline eval::RocCurve parse_roc_csv_class(const std::filesystem::path& path,
                                          const std::string& cls) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  eval::RocCurve curve;
  std::string line;
  std::getline(is, line);  // header
  while (std::getline(is, line)) {
    std::istringstream row(line);
    std::string name, thr, f, t;
    if (!std::getline(row, name, ',') || !std::getline(row, thr, ',') ||
        !std::getline(row, f, ',') || !std::getline(row, t, ','))
      continue;
    if (name != cls) continue;
    curve.points.push_back({std::stod(f), std::stod(t), std::stod(thr)});
  }
  return curve;
}

}  // namespace detail

// Builds the side-by-side AUC table and overlaid ROC plots (dashed =
// original data, solid = preprocessed) from two completed run directories.
inline nlohmann::json report_comparison(
    const std::filesystem::path& original_dir,
    const std::filesystem::path& preprocessed_dir,
    const std::filesystem::path& out_dir) {
  namespace fs = std::filesystem;
  auto load_summary = [](const fs::path& dir) {
    std::ifstream is(dir / "summary.json");
    if (!is)
      throw std::runtime_error("cannot open " +
                               (dir / "summary.json").string());
    return nlohmann::json::parse(is);
  };
  nlohmann::json orig = load_summary(original_dir);
  nlohmann::json prep = load_summary(preprocessed_dir);
  fs::create_directories(out_dir);

  eval::AucTable table;
  table.condition_names = {"original", "preprocessed"};
  nlohmann::json comparison;
  for (const auto& cls : severity_class_names()) {
    std::string low = cls;
    for (char& ch : low) ch = static_cast<char>(std::tolower(ch));
    auto cell = [&](const nlohmann::json& s) {
      const auto& v = s.at("auc").at(low);
      return v.is_null() ? -1.0 : v.get<double>();
    };
    table.class_names.push_back(cls);
    table.values.push_back({cell(orig), cell(prep)});
    comparison[low] = {{"original", cell(orig) < 0 ? nlohmann::json(nullptr)
                                                   : nlohmann::json(cell(orig))},
                       {"preprocessed",
                        cell(prep) < 0 ? nlohmann::json(nullptr)
                                       : nlohmann::json(cell(prep))}};

    eval::RocCurve oc =
        detail::parse_roc_csv_class(original_dir / "roc.csv", cls);
    eval::RocCurve pc =
        detail::parse_roc_csv_class(preprocessed_dir / "roc.csv", cls);
    oc.auc = cell(orig);
    pc.auc = cell(prep);
    std::vector<eval::SvgSeries> series;
    if (!oc.points.empty()) series.push_back({"original", &oc, true});
    if (!pc.points.empty()) series.push_back({"preprocessed", &pc, false});
    if (!series.empty())
      eval::write_roc_svg(out_dir / ("comparison_" + low + ".svg"),
                          "ROC - " + cls + " class", series);
  }
  eval::write_auc_csv(out_dir / "comparison_auc.csv", table);
  eval::write_auc_text(out_dir / "comparison_auc.txt", table);

  nlohmann::json out;
  out["auc"] = comparison;
  out["original_mean"] = orig.at("auc").at("mean");
  out["preprocessed_mean"] = prep.at("auc").at("mean");
  std::ofstream os(out_dir / "comparison.json", std::ios::trunc);
  os << out.dump(2) << "\n";
  return out;
}

}  // namespace mammopipe::pipe
