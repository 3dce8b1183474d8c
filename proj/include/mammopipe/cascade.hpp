#pragma once
// Two-stage classifier: stage 1 assigns one of 7 abnormality classes, stage
// 2 consumes the same image plus stage 1's probability vector (joined at its
// first dense layer) and assigns one of 3 severity classes. Stages train
// sequentially; stage 1 is fixed while stage 2 learns.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mammopipe/augment.hpp"
#include "mammopipe/image.hpp"
#include "mammopipe/mias.hpp"
#include "mammopipe/nn.hpp"
#include "mammopipe/rng.hpp"

namespace mammopipe::cascade {

inline constexpr std::size_t kAbnormalityClasses = 7;
inline constexpr std::size_t kSeverityClasses = 3;

struct CascadeModel {
  nn::NetworkSpec stage1;  // 7-class head
  nn::NetworkSpec stage2;  // 3-class head, aux input = stage-1 probabilities
  std::size_t concat_layer_index = 0;

  std::size_t input_size() const { return stage1.in_dims[1]; }
  std::size_t channels() const { return stage1.in_dims[0]; }
};

struct CascadePrediction {
  std::vector<double> abnormality_probs;  // 7 entries, sums to 1
  std::vector<double> severity_probs;     // 3 entries, sums to 1
  int predicted_abnormality = 0;          // argmax, ties to lowest index
  int predicted_severity = 0;
};

// A corpus ready for the two stages: per-sample input tensor plus both
// label spaces.
struct CascadeCorpus {
  std::vector<nn::Tensor> inputs;
  std::vector<int> label7;
  std::vector<int> label3;

  std::size_t size() const { return inputs.size(); }
};

// Converts one multi-channel sample into a (channels, size, size) tensor,
// bilinearly downscaled and mapped to [-1, 1] (zero-centered inputs keep
// first-layer gradients balanced at the fixed learning rate).
inline nn::Tensor sample_to_tensor(const std::vector<GrayImage>& channels,
                                   std::size_t input_size) {
  if (channels.empty())
    throw std::invalid_argument("sample_to_tensor: no channels");
  nn::Tensor t({channels.size(), input_size, input_size});
  for (std::size_t c = 0; c < channels.size(); ++c) {
    Grid g = bilinear_resize(to_grid(channels[c]), input_size, input_size);
    const double scale = 2.0 / static_cast<double>(channels[c].max_val);
    for (std::size_t i = 0; i < g.v.size(); ++i)
      t.v[c * input_size * input_size + i] = g.v[i] * scale - 1.0;
  }
  return t;
}

inline CascadeCorpus corpus_from_samples(
    const std::vector<aug::AugmentedSample>& samples, std::size_t input_size) {
  CascadeCorpus corpus;
  for (const auto& s : samples) {
    corpus.inputs.push_back(sample_to_tensor(s.channels, input_size));
    corpus.label7.push_back(s.record.label7());
    corpus.label3.push_back(s.record.label3());
  }
  return corpus;
}

struct CascadeConfig {
  nn::TrainConfig train;     // shared stage hyper-parameters
  bool hard_labels = false;  // ablation: feed stage 2 a one-hot argmax
                             // instead of the probability vector

  static CascadeConfig with_seed(std::uint64_t seed) {
    CascadeConfig c;
    c.train.seed = seed;
    return c;
  }
};

struct CascadeTrainReport {
  nn::History stage1_history;
  nn::History stage2_history;
};

namespace detail {

inline std::vector<std::vector<double>> stage1_outputs(
    const nn::NetworkSpec& stage1, const std::vector<nn::Tensor>& inputs,
    bool hard_labels) {
  nn::TrainingSet probe;
  probe.inputs = inputs;
  probe.labels.assign(inputs.size(), 0);
  nn::Tensor probs = nn::predict_all(stage1, probe);
  const std::size_t c = probs.dims[1];
  std::vector<std::vector<double>> out(inputs.size(),
                                       std::vector<double>(c, 0.0));
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const double* row = &probs.v[i * c];
    if (hard_labels) {
      int best = 0;
      for (std::size_t j = 1; j < c; ++j)
        if (row[j] > row[best]) best = static_cast<int>(j);
      out[i][best] = 1.0;
    } else {
      out[i].assign(row, row + c);
    }
  }
  return out;
}

}  // namespace detail

// Exposed for ablation studies and tests: trains only the severity stage on
// externally supplied stage-1 output vectors.
inline nn::NetworkSpec train_stage2(
    const CascadeCorpus& train, const std::vector<std::vector<double>>& s1_train,
    const CascadeCorpus& val, const std::vector<std::vector<double>>& s1_val,
    const CascadeConfig& cfg, nn::History* history = nullptr) {
  if (train.size() == 0) throw std::invalid_argument("train_stage2: empty corpus");
  const auto& dims = train.inputs[0].dims;
  nn::NetworkSpec stage2 =
      nn::make_mininet(dims[0], dims[1], dims[2], kSeverityClasses,
                       derive_seed(cfg.train.seed, "stage2-init"),
                       kAbnormalityClasses);
  nn::TrainingSet ts{train.inputs, train.label3, s1_train};
  nn::TrainingSet vs;
  if (val.size() > 0) vs = {val.inputs, val.label3, s1_val};
  nn::TrainConfig tc = cfg.train;
  tc.seed = derive_seed(cfg.train.seed, "stage2-train");
  nn::History h = nn::train(stage2, ts, vs, tc);
  if (history) *history = std::move(h);
  return stage2;
}

// Full cascade training: stage 1 on the 7-way labels, then stage-1 softmax
// outputs are computed for the whole corpus with stage-1 weights fixed, and
// stage 2 trains on (image, stage-1 output) -> severity.
inline CascadeModel train_cascade(const CascadeCorpus& train,
                                  const CascadeCorpus& val,
                                  const CascadeConfig& cfg,
                                  CascadeTrainReport* report = nullptr) {
  if (train.size() == 0)
    throw std::invalid_argument("train_cascade: empty corpus");
  const auto& dims = train.inputs[0].dims;
  if (dims.size() != 3)
    throw std::invalid_argument("train_cascade: inputs must be (c,h,w)");

  CascadeModel model;
  model.stage1 =
      nn::make_mininet(dims[0], dims[1], dims[2], kAbnormalityClasses,
                       derive_seed(cfg.train.seed, "stage1-init"));
  {
    nn::TrainingSet ts{train.inputs, train.label7, {}};
    nn::TrainingSet vs;
    if (val.size() > 0) vs = {val.inputs, val.label7, {}};
    nn::TrainConfig tc = cfg.train;
    tc.seed = derive_seed(cfg.train.seed, "stage1-train");
    nn::History h;
    try {
      h = nn::train(model.stage1, ts, vs, tc);
    } catch (const std::exception& e) {
      throw std::runtime_error(std::string("stage 1: ") + e.what());
    }
    if (report) report->stage1_history = std::move(h);
  }

  auto s1_train =
      detail::stage1_outputs(model.stage1, train.inputs, cfg.hard_labels);
  std::vector<std::vector<double>> s1_val;
  if (val.size() > 0)
    s1_val = detail::stage1_outputs(model.stage1, val.inputs, cfg.hard_labels);

  try {
    nn::History h;
    model.stage2 = train_stage2(train, s1_train, val, s1_val, cfg, &h);
    if (report) report->stage2_history = std::move(h);
  } catch (const std::exception& e) {
    throw std::runtime_error(std::string("stage 2: ") + e.what());
  }
  model.concat_layer_index =
      static_cast<std::size_t>(model.stage2.aux_layer);
  return model;
}

// Severity probabilities for a prepared corpus (validation-time path).
inline std::vector<std::vector<double>> cascade_probs(
    const CascadeModel& model, const CascadeCorpus& corpus) {
  auto s1 = detail::stage1_outputs(model.stage1, corpus.inputs, false);
  nn::TrainingSet set{corpus.inputs, corpus.label3, s1};
  nn::Tensor probs = nn::predict_all(model.stage2, set);
  std::vector<std::vector<double>> out(corpus.size());
  for (std::size_t i = 0; i < corpus.size(); ++i)
    out[i].assign(&probs.v[i * kSeverityClasses],
                  &probs.v[(i + 1) * kSeverityClasses]);
  return out;
}

// Runs the whole pipeline on one raw image: channel derivation (matching the
// training condition), stage 1, stage 2.
inline CascadePrediction predict_cascade(const CascadeModel& model,
                                         const GrayImage& img,
                                         const prep::SegmenterConfig& seg_cfg,
                                         const wav::WaveletConfig& wav_cfg) {
  std::vector<GrayImage> channels;
  if (model.channels() == 1) {
    channels.push_back(img);
  } else {
    channels = aug::derive_channels(img, seg_cfg, wav_cfg);
  }
  if (channels.size() != model.channels())
    throw std::runtime_error("predict_cascade: channel count mismatch");

  nn::Tensor input = sample_to_tensor(channels, model.input_size());
  std::vector<const nn::Tensor*> one = {&input};
  nn::Tensor batch = nn::stack(one);

  nn::Tensor p1 = nn::forward(model.stage1, batch);
  nn::Tensor aux({1, kAbnormalityClasses});
  aux.v = p1.v;
  nn::Tensor p2 = nn::forward(model.stage2, batch, nullptr, &aux);

  CascadePrediction pred;
  pred.abnormality_probs = p1.v;
  pred.severity_probs = p2.v;
  pred.predicted_abnormality =
      nn::argmax_row(p1.v.data(), kAbnormalityClasses);
  pred.predicted_severity =
      nn::argmax_row(p2.v.data(), kSeverityClasses);
  return pred;
}

// ---------------------------------------------------------------------------
// Persistence: two checkpoints plus a JSON wiring descriptor.

inline void save_cascade(const CascadeModel& model,
                         const std::filesystem::path& dir,
                         const std::string& stem = "cascade") {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  const std::string s1 = stem + "_stage1.ckpt";
  const std::string s2 = stem + "_stage2.ckpt";
  nn::save_checkpoint(model.stage1, dir / s1);
  nn::save_checkpoint(model.stage2, dir / s2);
  nlohmann::json wiring = {
      {"stage1_path", s1},
      {"stage2_path", s2},
      {"concat_layer_index", model.concat_layer_index},
      {"aux_dim", kAbnormalityClasses},
  };
  std::ofstream os(dir / (stem + ".json"), std::ios::trunc);
  if (!os)
    throw std::runtime_error("cannot write cascade descriptor in " +
                             dir.string());
  os << wiring.dump(2) << "\n";
}

inline CascadeModel load_cascade(const std::filesystem::path& descriptor) {
  std::ifstream is(descriptor);
  if (!is)
    throw std::runtime_error("cannot open " + descriptor.string());
  nlohmann::json wiring = nlohmann::json::parse(is);
  const auto dir = descriptor.parent_path();
  CascadeModel model;
  model.concat_layer_index = wiring.at("concat_layer_index").get<std::size_t>();
  const std::size_t aux_dim = wiring.at("aux_dim").get<std::size_t>();
  model.stage1 =
      nn::load_checkpoint(dir / wiring.at("stage1_path").get<std::string>());
  model.stage2 =
      nn::load_checkpoint(dir / wiring.at("stage2_path").get<std::string>(),
                          static_cast<int>(model.concat_layer_index), aux_dim);
  return model;
}

}  // namespace mammopipe::cascade
