#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "spatial_diar/audio_io.hpp"
#include "spatial_diar/config.hpp"
#include "spatial_diar/errors.hpp"
#include "spatial_diar/models.hpp"
#include "spatial_diar/nn/checkpoint.hpp"
#include "spatial_diar/nn/optimizer.hpp"
#include "spatial_diar/powerset.hpp"
#include "spatial_diar/signal_frontend.hpp"

namespace spatial_diar {

enum class Stage { Scratch, FrozenAux, JointFinetune };

template <>
struct EnumNames<Stage> {
  static constexpr std::pair<Stage, std::string_view> names[] = {
      {Stage::Scratch, "scratch"},
      {Stage::FrozenAux, "frozen_aux"},
      {Stage::JointFinetune, "joint_finetune"},
  };
};

template <>
struct EnumNames<nn::OptimizerKind> {
  static constexpr std::pair<nn::OptimizerKind, std::string_view> names[] = {
      {nn::OptimizerKind::Adam, "adam"},
      {nn::OptimizerKind::Sgd, "sgd"},
  };
};

struct TrainConfig {
  double segment_len = 8.0;
  double segment_hop = 4.0;
  int batch_size = 1;
  double lr = 1e-3;
  double finetune_lr_scale = 0.1;
  double grad_clip = 5.0;
  int steps = 1000;
  int checkpoint_every = 0;  ///< 0 disables periodic checkpoints
  std::uint64_t seed = 1;
  Stage stage = Stage::Scratch;
  nn::OptimizerKind optimizer = nn::OptimizerKind::Adam;

  template <class B>
  void bind(B& b) {
    b("segment_len", segment_len);
    b("segment_hop", segment_hop);
    b("batch_size", batch_size);
    b("lr", lr);
    b("finetune_lr_scale", finetune_lr_scale);
    b("grad_clip", grad_clip);
    b("steps", steps);
    b("checkpoint_every", checkpoint_every);
    b("seed", seed);
    b("stage", stage);
    b("optimizer", optimizer);
  }

  void validate() const {
    if (!(segment_len > 0) || !(segment_hop > 0)) throw ConfigError("train.segment_len and train.segment_hop must be positive");
    if (segment_hop > segment_len) throw ConfigError("train.segment_hop must not exceed train.segment_len");
    if (batch_size < 1) throw ConfigError("train.batch_size must be positive");
    if (lr < 0 || finetune_lr_scale <= 0 || grad_clip < 0) throw ConfigError("train: learning-rate settings must be non-negative");
    if (steps < 0 || checkpoint_every < 0) throw ConfigError("train.steps and train.checkpoint_every must be non-negative");
  }

  /// Learning rate actually applied in this stage.
  double effective_lr() const { return stage == Stage::JointFinetune ? lr * finetune_lr_scale : lr; }
};

struct SegmentSpan {
  double onset;
  double offset;
};

/// Segment layout over a recording: n = 1 + ceil(max(0, duration - len) / hop); the last
/// segment may run past the end (padded downstream).
inline std::vector<SegmentSpan> segment_spans(double duration, double len, double hop) {
  if (!(len > 0) || !(hop > 0)) throw std::invalid_argument("segment length and hop must be positive");
  const double rest = std::max(0.0, duration - len);
  const auto n = 1 + std::size_t(std::ceil(rest / hop - 1e-9));
  std::vector<SegmentSpan> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back({double(i) * hop, double(i) * hop + len});
  return out;
}

/// One session prepared for training or inference: features on the model frame grid plus
/// the reference (if any) sampled on the same grid.
struct Recording {
  std::string id;
  double duration = 0;
  std::shared_ptr<const FeatureStreams> features;
  ActivityTrack reference;
  std::vector<std::vector<std::uint8_t>> ref_frames;  ///< [speaker][frame]

  double frame_rate() const { return features->frame_rate; }
  std::size_t num_frames() const { return features->frames(); }

  std::vector<int> speaker_counts() const {
    std::vector<int> c(num_frames(), 0);
    for (const auto& a : ref_frames) {
      for (std::size_t t = 0; t < c.size(); ++t) c[t] += a[t];
    }
    return c;
  }
};

inline Recording prepare_recording(std::string id, const MultiChannelAudio& audio, ActivityTrack reference,
                                   const ModelConfig& cfg) {
  audio.validate();
  Recording rec;
  rec.id = std::move(id);
  rec.duration = audio.duration();
  rec.features = std::make_shared<FeatureStreams>(extract_features(audio, cfg.frame_len, cfg.hop));
  reference.duration = std::max(reference.duration, rec.duration);
  rec.ref_frames = reference.frames(rec.frame_rate(), rec.num_frames());
  rec.reference = std::move(reference);
  return rec;
}

struct TrainingExample {
  std::shared_ptr<const FeatureStreams> features;
  std::size_t first_frame = 0;
  std::size_t num_frames = 0;
  std::vector<int> targets;
  std::vector<std::uint8_t> mask;
  std::vector<std::string> local_speakers;  ///< global name of each local index
  std::vector<int> counts;                  ///< reference speaker count per frame

  template <typename T>
  ModelInput<T> input() const {
    auto in = make_model_input<T>(*features, first_frame, num_frames);
    in.count_condition = count_one_hot<T>(counts);
    return in;
  }
};

/// Frame index range [first, first + count) of a segment on the given frame grid.
inline std::pair<std::size_t, std::size_t> segment_frames(const SegmentSpan& span, double frame_rate) {
  const auto first = std::size_t(std::llround(span.onset * frame_rate));
  const auto count = std::size_t(std::llround((span.offset - span.onset) * frame_rate));
  return {first, count};
}

/// Local speakers of a window: greatest-activity S speakers, indexed by first activity.
/// Returns global speaker indices in local order.
inline std::vector<int> local_speaker_order(const std::vector<std::vector<std::uint8_t>>& ref_frames, std::size_t first,
                                            std::size_t count, int capacity) {
  struct Info {
    int global;
    std::size_t first_active;
    std::size_t total;
  };
  std::vector<Info> present;
  for (std::size_t s = 0; s < ref_frames.size(); ++s) {
    Info info{int(s), 0, 0};
    bool seen = false;
    for (std::size_t t = first; t < first + count && t < ref_frames[s].size(); ++t) {
      if (!ref_frames[s][t]) continue;
      if (!seen) info.first_active = t;
      seen = true;
      ++info.total;
    }
    if (seen) present.push_back(info);
  }
  if (int(present.size()) > capacity) {
    std::stable_sort(present.begin(), present.end(), [](const Info& a, const Info& b) {
      return a.total > b.total || (a.total == b.total && a.first_active < b.first_active);
    });
    present.resize(std::size_t(capacity));
  }
  std::stable_sort(present.begin(), present.end(),
                   [](const Info& a, const Info& b) { return a.first_active < b.first_active; });
  std::vector<int> out;
  for (const auto& i : present) out.push_back(i.global);
  return out;
}

inline std::vector<TrainingExample> make_training_examples(const Recording& rec, const PowersetSpace& space,
                                                           const TrainConfig& cfg) {
  std::vector<TrainingExample> out;
  const auto counts_all = rec.speaker_counts();
  const std::size_t total = rec.num_frames();
  for (const auto& span : segment_spans(rec.duration, cfg.segment_len, cfg.segment_hop)) {
    auto [first, count] = segment_frames(span, rec.frame_rate());
    TrainingExample ex;
    ex.features = rec.features;
    ex.first_frame = first;
    ex.num_frames = count;
    const auto order = local_speaker_order(rec.ref_frames, first, count, space.max_speakers());
    std::vector<double> totals(order.size(), 0.0);
    for (std::size_t l = 0; l < order.size(); ++l) {
      for (std::size_t t = first; t < std::min(first + count, total); ++t) totals[l] += rec.ref_frames[std::size_t(order[l])][t];
      ex.local_speakers.push_back(rec.reference.speakers[std::size_t(order[l])]);
    }
    ex.targets.assign(count, 0);
    ex.mask.assign(count, 0);
    ex.counts.assign(count, 0);
    for (std::size_t i = 0; i < count; ++i) {
      const std::size_t t = first + i;
      if (t >= total) continue;
      SpeakerSet active;
      for (std::size_t l = 0; l < order.size(); ++l) {
        if (rec.ref_frames[std::size_t(order[l])][t]) active.push_back(int(l));
      }
      ex.targets[i] = space.encode(active, totals);
      ex.mask[i] = 1;
      ex.counts[i] = counts_all[t];
    }
    out.push_back(std::move(ex));
  }
  return out;
}

struct TrainRecord {
  int step;
  double loss;
  double lr;
  double grad_norm;
};

struct TrainReport {
  std::vector<TrainRecord> records;

  double initial_loss() const { return records.empty() ? 0.0 : records.front().loss; }
  double final_loss() const { return records.empty() ? 0.0 : records.back().loss; }

  /// Mean loss over the first / last `window` records.
  double head_mean(std::size_t window) const { return mean(0, std::min(window, records.size())); }
  double tail_mean(std::size_t window) const {
    const auto w = std::min(window, records.size());
    return mean(records.size() - w, records.size());
  }

  /// Line-delimited JSON records.
  std::string to_jsonl() const {
    std::string out;
    char buf[160];
    for (const auto& r : records) {
      std::snprintf(buf, sizeof buf, "{\"step\": %d, \"loss\": %.9g, \"lr\": %.9g, \"grad_norm\": %.9g}\n", r.step, r.loss,
                    r.lr, r.grad_norm);
      out += buf;
    }
    return out;
  }

 private:
  double mean(std::size_t a, std::size_t b) const {
    if (b <= a) return 0.0;
    double s = 0;
    for (std::size_t i = a; i < b; ++i) s += records[i].loss;
    return s / double(b - a);
  }
};

/// Freezes the auxiliary sub-network for the frozen_aux stage and unfreezes everything else.
template <typename T>
void apply_stage(DiarizationModel<T>& model, Stage stage) {
  model.params().set_frozen("", false);
  if (stage == Stage::FrozenAux) model.params().set_frozen("aux.", true);
}

using CheckpointHook = std::function<void(int step)>;

/// Segment-level training with powerset cross-entropy. Deterministic for a fixed seed.
template <typename T>
TrainReport train(DiarizationModel<T>& model, const std::vector<TrainingExample>& examples, const TrainConfig& cfg,
                  const CheckpointHook& on_checkpoint = {}) {
  cfg.validate();
  if (examples.empty()) throw std::invalid_argument("training needs at least one example");
  apply_stage(model, cfg.stage);
  nn::OptimizerConfig ocfg;
  ocfg.kind = cfg.optimizer;
  ocfg.lr = cfg.effective_lr();
  ocfg.grad_clip = cfg.grad_clip;
  nn::Optimizer<T> opt(ocfg);

  // with a frozen auxiliary network its output is fixed, so compute it once per example
  const bool cache = cfg.stage == Stage::FrozenAux && model.config().kind == ModelKind::Eend && model.has_aux();
  std::vector<nn::Matrix<T>> cached;
  if (cache) {
    nn::NoGradGuard no_grad;
    for (const auto& ex : examples) cached.push_back(model.condition(ex.input<T>())->value());
  }

  std::mt19937_64 rng(cfg.seed);
  std::vector<std::size_t> order(examples.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  std::size_t cursor = 0;

  TrainReport report;
  model.params().zero_grad();
  for (int step = 1; step <= cfg.steps; ++step) {
    double batch_loss = 0;
    for (int b = 0; b < cfg.batch_size; ++b) {
      if (cursor == order.size()) {
        std::shuffle(order.begin(), order.end(), rng);
        cursor = 0;
      }
      const auto idx = order[cursor++];
      const auto& ex = examples[idx];
      auto logits = model.logits(ex.input<T>(), cache ? &cached[idx] : nullptr);
      auto loss = nn::cross_entropy(logits, std::span<const int>(ex.targets), std::span<const std::uint8_t>(ex.mask));
      loss = nn::scale(loss, T(1) / T(cfg.batch_size));
      const double value = double(loss.value()(0, 0));
      if (!std::isfinite(value)) throw NumericError("non-finite loss at step " + std::to_string(step));
      batch_loss += value;
      nn::backward(loss);
    }
    const double norm = opt.step(model.params());
    if (!std::isfinite(norm)) throw NumericError("non-finite gradient norm at step " + std::to_string(step));
    model.params().zero_grad();
    report.records.push_back({step, batch_loss, ocfg.lr, norm});
    if (on_checkpoint && cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0) on_checkpoint(step);
  }
  return report;
}

}  // namespace spatial_diar
