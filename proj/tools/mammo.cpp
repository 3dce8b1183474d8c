// mammopipe command-line tool.
//
// Subcommands:
//   ingest      scan a dataset directory, print/write the ingest summary
//   synthetic   generate a seeded synthetic dataset (PGMs + info.txt)
//   preprocess  write filtered/segmented images and wavelet subband exports
//   run         full experiment: split, preprocess, augment, train, evaluate
//   report      side-by-side comparison of two completed runs
//
// A JSON file given with --config supplies defaults; explicit flags override
// it. Every command is deterministic for a fixed config + seed; exit code 0
// means no stage failed.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "mammopipe/mias.hpp"
#include "mammopipe/pipeline.hpp"
#include "mammopipe/preprocess.hpp"
#include "mammopipe/synthetic.hpp"
#include "mammopipe/wavelet.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string dataset_fallback() {
  const char* env = std::getenv("MAMMOPIPE_DATA");
  return env ? std::string(env) : std::string();
}

// --config is honored before regular flag parsing so that command-line
// options override file values.
std::string find_config_arg(int argc, char** argv) {
  for (int i = 1; i < argc; ++i) {
    std::string a = argv[i];
    if (a == "--config" && i + 1 < argc) return argv[i + 1];
    if (a.rfind("--config=", 0) == 0) return a.substr(9);
  }
  return {};
}

int cmd_ingest(const std::string& data, const std::string& output_dir) {
  if (data.empty()) {
    std::cerr << "ingest: no dataset path (use --data or MAMMOPIPE_DATA)\n";
    return 1;
  }
  if (!fs::exists(data)) {
    std::cerr << "ingest: dataset directory " << data << " does not exist\n";
    return 1;
  }
  auto result = mammopipe::mias::ingest_directory(data);
  json summary = result.summary.to_json();
  std::cout << summary.dump(2) << "\n";
  if (!output_dir.empty()) {
    fs::create_directories(output_dir);
    std::ofstream os(fs::path(output_dir) / "ingest_summary.json",
                     std::ios::trunc);
    os << summary.dump(2) << "\n";
  }
  // Missing or undecodable images are listed in the summary but do not fail
  // the scan; an unreadable metadata file throws and exits nonzero.
  return 0;
}

int cmd_synthetic(const mammopipe::synth::SyntheticConfig& cfg,
                  const std::string& output_dir, bool dry_run) {
  if (output_dir.empty()) {
    std::cerr << "synthetic: --output-dir is required\n";
    return 1;
  }
  json echo = {{"count", cfg.count},
               {"image_size", cfg.image_size},
               {"seed", cfg.seed},
               {"output_dir", output_dir}};
  if (dry_run) {
    std::cout << echo.dump(2) << "\n";
    return 0;
  }
  mammopipe::synth::write_synthetic_dataset(output_dir, cfg);
  std::cout << "wrote " << cfg.count << " images + info.txt to " << output_dir
            << "\n";
  return 0;
}

int cmd_preprocess(const mammopipe::pipe::RunConfig& cfg, bool dry_run) {
  if (cfg.dataset_path.empty()) {
    std::cerr << "preprocess: no dataset path (use --data or MAMMOPIPE_DATA)\n";
    return 1;
  }
  if (cfg.output_dir.empty()) {
    std::cerr << "preprocess: --output-dir is required\n";
    return 1;
  }
  if (dry_run) {
    std::cout << cfg.to_json().dump(2) << "\n";
    return 0;
  }
  auto ingest = mammopipe::mias::ingest_directory(cfg.dataset_path);
  fs::create_directories(cfg.output_dir);
  const fs::path out = cfg.output_dir;
  for (const auto& sample : ingest.dataset.samples) {
    const auto& img = *sample.image;
    const std::string& id = sample.record.id;
    auto filtered = mammopipe::prep::adaptive_mean_filter(
        img, cfg.segmenter.window, cfg.segmenter.deviation_factor);
    mammopipe::write_pgm_file(out / (id + "_filtered.pgm"), filtered);
    mammopipe::write_pgm_file(
        out / (id + "_segmented.pgm"),
        mammopipe::prep::segment_image(img, cfg.segmenter));
    auto pyramid = mammopipe::wav::multilevel_dwt(img, cfg.wavelet.levels,
                                                  cfg.wavelet.family);
    mammopipe::wav::export_pyramid(out, id, pyramid, img.max_val);
  }
  std::cout << "preprocessed " << ingest.dataset.samples.size()
            << " image(s) into " << cfg.output_dir << "\n";
  return 0;
}

int cmd_run(const mammopipe::pipe::RunConfig& cfg, bool dry_run) {
  if (cfg.dataset_path.empty()) {
    std::cerr << "run: no dataset path (use --data or MAMMOPIPE_DATA)\n";
    return 1;
  }
  if (dry_run) {
    std::cout << cfg.to_json().dump(2) << "\n";
    return 0;
  }
  auto result = mammopipe::pipe::run_experiment(cfg);
  std::cout << "run complete: " << result.summary_path.string() << "\n";
  std::cout << result.summary.at("auc").dump(2) << "\n";
  return 0;
}

int cmd_report(const std::string& original_dir,
               const std::string& preprocessed_dir,
               const std::string& output_dir) {
  auto comparison = mammopipe::pipe::report_comparison(
      original_dir, preprocessed_dir, output_dir);
  std::cout << comparison.dump(2) << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"mammography screening pipeline"};
  app.require_subcommand(1);

  mammopipe::pipe::RunConfig cfg;
  std::string config_file = find_config_arg(argc, argv);
  if (!config_file.empty()) {
    std::ifstream is(config_file);
    if (!is) {
      std::cerr << "cannot open config file " << config_file << "\n";
      return 1;
    }
    try {
      cfg = mammopipe::pipe::RunConfig::from_json(json::parse(is));
    } catch (const std::exception& e) {
      std::cerr << "config file " << config_file << ": " << e.what() << "\n";
      return 1;
    }
  }
  if (cfg.dataset_path.empty()) cfg.dataset_path = dataset_fallback();

  std::string ignored_config;  // recognized here, consumed by the pre-scan
  bool dry_run = false;
  bool no_balance = false;
  std::string condition_str;

  auto add_common = [&](CLI::App* sub, bool with_train) {
    sub->add_option("--config", ignored_config, "JSON config file");
    sub->add_option("--data", cfg.dataset_path,
                    "dataset directory (default: MAMMOPIPE_DATA)");
    sub->add_option("--output-dir", cfg.output_dir, "artifact directory");
    sub->add_option("--seed", cfg.seed, "master seed");
    sub->add_flag("--dry-run", dry_run,
                  "print the resolved config and write nothing");
    sub->add_option("--window", cfg.segmenter.window,
                    "adaptive filter window (odd)");
    sub->add_option("--dev-factor", cfg.segmenter.deviation_factor,
                    "filter deviation factor");
    sub->add_option("--k", cfg.segmenter.k, "k-means cluster count");
    sub->add_option("--levels", cfg.wavelet.levels, "wavelet levels");
    sub->add_option("--family", cfg.wavelet.family, "wavelet family");
    if (with_train) {
      sub->add_option("--condition", condition_str,
                      "original_only or preprocessed")
          ->check(CLI::IsMember({"original_only", "preprocessed"}));
      sub->add_option("--train-fraction", cfg.train_fraction,
                      "per-class training share");
      sub->add_option("--input-size", cfg.input_size, "network input side");
      sub->add_option("--copies", cfg.augment.copies,
                      "affine copies per image");
      sub->add_option("--epochs", cfg.train.max_epochs, "training epochs");
      sub->add_option("--batch", cfg.train.mini_batch, "mini-batch size");
      sub->add_option("--lr", cfg.train.learn_rate, "learning rate");
      sub->add_option("--momentum", cfg.train.momentum, "SGDM momentum");
      sub->add_flag("--export-corpus", cfg.export_corpus,
                    "write the augmented corpus + manifest");
      sub->add_flag("--no-balance", no_balance, "disable class balancing");
    }
  };

  CLI::App* ingest = app.add_subcommand("ingest", "scan a dataset directory");
  ingest->add_option("--data", cfg.dataset_path,
                     "dataset directory (default: MAMMOPIPE_DATA)");
  ingest->add_option("--output-dir", cfg.output_dir,
                     "where to write ingest_summary.json");

  CLI::App* synthetic =
      app.add_subcommand("synthetic", "generate a synthetic dataset");
  mammopipe::synth::SyntheticConfig syn_cfg;
  synthetic->add_option("--count", syn_cfg.count, "number of images");
  synthetic->add_option("--size", syn_cfg.image_size, "image side length");
  synthetic->add_option("--seed", syn_cfg.seed, "generator seed");
  synthetic->add_option("--output-dir", cfg.output_dir, "target directory");
  synthetic->add_flag("--dry-run", dry_run, "print config and write nothing");

  CLI::App* preprocess = app.add_subcommand(
      "preprocess", "filter, segment and export wavelet subbands");
  add_common(preprocess, false);

  CLI::App* run = app.add_subcommand("run", "execute a full experiment");
  add_common(run, true);

  CLI::App* report =
      app.add_subcommand("report", "compare two completed runs");
  std::string original_dir, preprocessed_dir;
  report->add_option("--original", original_dir, "original-condition run dir")
      ->required();
  report
      ->add_option("--preprocessed", preprocessed_dir,
                   "preprocessed-condition run dir")
      ->required();
  report->add_option("--output-dir", cfg.output_dir, "report directory")
      ->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (!condition_str.empty())
      cfg.condition = mammopipe::pipe::condition_from_string(condition_str);
    if (no_balance) cfg.balance = false;

    if (ingest->parsed()) return cmd_ingest(cfg.dataset_path, cfg.output_dir);
    if (synthetic->parsed())
      return cmd_synthetic(syn_cfg, cfg.output_dir, dry_run);
    if (preprocess->parsed()) return cmd_preprocess(cfg, dry_run);
    if (run->parsed()) return cmd_run(cfg, dry_run);
    if (report->parsed())
      return cmd_report(original_dir, preprocessed_dir, cfg.output_dir);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
