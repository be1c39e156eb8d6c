#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <random>
#include <vector>

#include "model_fixtures.hpp"
#include "spatial_diar/nn/checkpoint.hpp"
#include "spatial_diar/pipeline.hpp"
#include "spatial_diar/scoring.hpp"
#include "spatial_diar/sim.hpp"
#include "spatial_diar/training.hpp"

namespace sd = spatial_diar;
using sd::testing::toy_model_config;

namespace {

// 4 kHz audio, 128-sample frames with a 100-sample hop: 40 frames per second.
sd::ModelConfig small_config(sd::Conditioning cond = sd::Conditioning::None, std::uint64_t seed = 7) {
  auto c = toy_model_config(cond, seed);
  c.frame_len = 128;
  c.hop = 100;
  return c;
}

sd::TrainConfig short_segments() {
  sd::TrainConfig t;
  t.segment_len = 2.0;
  t.segment_hop = 1.0;
  t.steps = 20;
  t.lr = 3e-3;
  return t;
}

sd::Recording simulated_recording(const sd::ModelConfig& mc, std::uint64_t seed, double duration = 10.0,
                                  double overlap = 0.2) {
  sd::SimConfig sc;
  sc.num_speakers = 2;
  sc.sample_rate = 4000;
  sc.duration = duration;
  sc.overlap_ratio = overlap;
  sc.seed = seed;
  auto sim = sd::simulate(sc);
  return sd::prepare_recording("sim" + std::to_string(seed), sim.audio, sim.track, mc);
}

// Recording whose features are irrelevant; only the reference grid matters.
sd::Recording reference_only(const sd::ActivityTrack& ref, double duration, const sd::ModelConfig& mc) {
  sd::MultiChannelAudio audio;
  audio.sample_rate = 4000;
  audio.samples.assign(2, std::vector<float>(std::size_t(duration * 4000), 0.0f));
  return sd::prepare_recording("ref", audio, ref, mc);
}

std::vector<float> snapshot(const sd::nn::ParamStore<float>& store, const std::string& prefix) {
  std::vector<float> out;
  for (const auto& p : store.all()) {
    if (p.name.rfind(prefix, 0) == 0) out.insert(out.end(), p.var.value().data.begin(), p.var.value().data.end());
  }
  return out;
}

}  // namespace

TEST(Segmentation, SixteenSecondsGivesThreeSegments) {
  auto spans = sd::segment_spans(16.0, 8.0, 4.0);
  ASSERT_EQ(spans.size(), 3u);
  EXPECT_DOUBLE_EQ(spans[0].onset, 0.0);
  EXPECT_DOUBLE_EQ(spans[1].onset, 4.0);
  EXPECT_DOUBLE_EQ(spans[2].onset, 8.0);
  EXPECT_DOUBLE_EQ(spans[2].offset, 16.0);
}

TEST(Segmentation, CountLawAndCoverage) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> dur(0.5, 40.0), len(1.0, 10.0), frac(0.1, 1.0);
  for (int i = 0; i < 500; ++i) {
    const double d = dur(rng), l = len(rng), h = l * frac(rng);
    auto spans = sd::segment_spans(d, l, h);
    // independent count: smallest n with (n - 1) * h + l >= d
    std::size_t n = 1;
    while (double(n - 1) * h + l < d - 1e-9) ++n;
    ASSERT_EQ(spans.size(), n) << d << " " << l << " " << h;
    EXPECT_GE(spans.back().offset, d - 1e-9);
  }
  EXPECT_THROW(sd::segment_spans(10, 0, 1), std::invalid_argument);
}

TEST(TrainingExamples, ShortTailIsPaddedAndMasked) {
  const auto mc = small_config();
  sd::ActivityTrack ref;
  ref.add("A", 0.0, 5.0);
  auto rec = reference_only(ref, 5.0, mc);
  auto cfg = short_segments();
  cfg.segment_len = 4.0;
  cfg.segment_hop = 2.0;
  auto ex = sd::make_training_examples(rec, sd::PowersetSpace(mc.max_speakers), cfg);
  ASSERT_EQ(ex.size(), 2u);
  const auto& tail = ex[1];
  EXPECT_EQ(tail.num_frames, 160u);
  EXPECT_EQ(tail.targets.size(), 160u);
  std::size_t valid = 0;
  for (auto m : tail.mask) valid += m;
  EXPECT_EQ(valid, rec.num_frames() - tail.first_frame);
  auto in = tail.input<float>();
  EXPECT_EQ(in.frames(), 160u);
}

TEST(TrainingExamples, ContinuousSpeakerEncodesAsSingleton) {
  const auto mc = small_config();
  const sd::PowersetSpace space(mc.max_speakers);
  sd::ActivityTrack ref;
  ref.add("A", 0.0, 6.0);
  auto rec = reference_only(ref, 6.0, mc);
  auto cfg = short_segments();
  const int cls = space.encode({0});
  for (const auto& ex : sd::make_training_examples(rec, space, cfg)) {
    for (std::size_t i = 0; i < ex.num_frames; ++i) {
      if (ex.mask[i]) {
        ASSERT_EQ(ex.targets[i], cls);
      }
    }
    EXPECT_EQ(ex.local_speakers, std::vector<std::string>{"A"});
  }
}

TEST(TrainingExamples, LocalIndicesFollowFirstActivity) {
  const auto mc = small_config();
  const sd::PowersetSpace space(mc.max_speakers);
  sd::ActivityTrack ref;
  ref.add("A", 0.0, 1.5);
  ref.add("B", 1.0, 4.0);
  auto rec = reference_only(ref, 4.0, mc);
  auto ex = sd::make_training_examples(rec, space, short_segments());
  ASSERT_EQ(ex.size(), 3u);
  // B is local 1 in the first segment and local 0 once A has stopped
  EXPECT_EQ(ex[0].local_speakers, (std::vector<std::string>{"A", "B"}));
  EXPECT_EQ(ex[2].local_speakers, (std::vector<std::string>{"B"}));
  EXPECT_EQ(ex[2].targets[0], space.encode({0}));
  EXPECT_EQ(ex[0].targets[50], space.encode({0, 1}));
  EXPECT_EQ(ex[0].counts[50], 2);
}

TEST(TrainingExamples, CapacityKeepsMostActiveSpeakers) {
  auto mc = small_config();
  mc.max_speakers = 2;
  const sd::PowersetSpace space(mc.max_speakers);
  sd::ActivityTrack ref;
  ref.add("A", 0.0, 0.5);
  ref.add("B", 0.2, 2.0);
  ref.add("C", 0.4, 1.8);
  auto rec = reference_only(ref, 2.0, mc);
  auto cfg = short_segments();
  auto ex = sd::make_training_examples(rec, space, cfg);
  EXPECT_EQ(ex[0].local_speakers, (std::vector<std::string>{"B", "C"}));
  // frame 30 (0.75 s): B and C active, A silent
  EXPECT_EQ(ex[0].targets[30], space.encode({0, 1}));
}

TEST(Training, SmokeRunReducesLoss) {
  const auto mc = small_config();
  sd::DiarizationModel<float> model(mc, mc.bins());
  auto rec = simulated_recording(mc, 11, 20.0);
  auto cfg = short_segments();
  cfg.steps = 200;
  auto examples = sd::make_training_examples(rec, model.space(), cfg);
  auto report = sd::train(model, examples, cfg);
  ASSERT_EQ(report.records.size(), 200u);
  EXPECT_LT(report.tail_mean(20), report.head_mean(20));
  EXPECT_LT(report.final_loss(), report.initial_loss());
}

TEST(Training, SameSeedGivesIdenticalLossSequence) {
  const auto mc = small_config();
  auto rec = simulated_recording(mc, 12);
  auto cfg = short_segments();
  cfg.batch_size = 2;
  std::vector<double> a, b;
  for (auto* out : {&a, &b}) {
    sd::DiarizationModel<float> model(mc, mc.bins());
    auto report = sd::train(model, sd::make_training_examples(rec, model.space(), cfg), cfg);
    for (const auto& r : report.records) out->push_back(r.loss);
  }
  EXPECT_EQ(a, b);
  cfg.seed = 2;
  sd::DiarizationModel<float> model(mc, mc.bins());
  auto report = sd::train(model, sd::make_training_examples(rec, model.space(), cfg), cfg);
  std::vector<double> c;
  for (const auto& r : report.records) c.push_back(r.loss);
  EXPECT_NE(a, c);
}

TEST(Training, ZeroLearningRateChangesNothing) {
  const auto mc = small_config();
  sd::DiarizationModel<float> model(mc, mc.bins());
  auto rec = simulated_recording(mc, 13, 2.0);
  auto cfg = short_segments();
  cfg.lr = 0.0;
  auto examples = sd::make_training_examples(rec, model.space(), cfg);
  ASSERT_EQ(examples.size(), 1u);
  const auto before = snapshot(model.params(), "");
  auto report = sd::train(model, examples, cfg);
  EXPECT_EQ(snapshot(model.params(), ""), before);
  for (const auto& r : report.records) EXPECT_EQ(r.loss, report.initial_loss());
}

TEST(Training, FrozenAuxLeavesAuxiliaryBitwiseUnchanged) {
  const auto mc = small_config(sd::Conditioning::SpatialDiarization);
  sd::DiarizationModel<float> model(mc, mc.bins());
  auto rec = simulated_recording(mc, 14, 6.0);
  auto cfg = short_segments();
  cfg.stage = sd::Stage::FrozenAux;
  const auto aux = snapshot(model.params(), "aux.");
  const auto rest = snapshot(model.params(), "eend.");
  ASSERT_FALSE(aux.empty());
  sd::train(model, sd::make_training_examples(rec, model.space(), cfg), cfg);
  EXPECT_EQ(snapshot(model.params(), "aux."), aux);
  EXPECT_NE(snapshot(model.params(), "eend."), rest);
}

TEST(Training, JointFinetuneScalesLearningRate) {
  const auto mc = small_config(sd::Conditioning::SpatialDiarization);
  sd::DiarizationModel<float> model(mc, mc.bins());
  auto rec = simulated_recording(mc, 15, 2.0);
  auto cfg = short_segments();
  cfg.stage = sd::Stage::JointFinetune;
  cfg.steps = 3;
  const auto aux = snapshot(model.params(), "aux.");
  auto report = sd::train(model, sd::make_training_examples(rec, model.space(), cfg), cfg);
  EXPECT_DOUBLE_EQ(report.records.front().lr, cfg.lr * cfg.finetune_lr_scale);
  EXPECT_NE(snapshot(model.params(), "aux."), aux);
}

TEST(Optimizer, RespectsRandomFreezeMasks) {
  const auto mc = small_config(sd::Conditioning::SpatialConformer);
  auto rec = simulated_recording(mc, 16, 2.0);
  std::mt19937_64 rng(5);
  for (auto kind : {sd::nn::OptimizerKind::Adam, sd::nn::OptimizerKind::Sgd}) {
    for (int trial = 0; trial < 10; ++trial) {
      sd::DiarizationModel<float> model(mc, mc.bins());
      auto examples = sd::make_training_examples(rec, model.space(), short_segments());
      std::vector<bool> frozen;
      for (auto& p : model.params().all()) {
        p.frozen = std::bernoulli_distribution(0.5)(rng);
        frozen.push_back(p.frozen);
      }
      std::vector<std::vector<float>> before;
      for (const auto& p : model.params().all()) before.push_back(p.var.value().data);
      sd::nn::OptimizerConfig oc;
      oc.kind = kind;
      oc.lr = 1e-2;
      sd::nn::Optimizer<float> opt(oc);
      for (int step = 0; step < 3; ++step) {
        model.params().zero_grad();
        const auto& ex = examples.front();
        auto loss = sd::nn::cross_entropy(model.logits(ex.input<float>()), std::span<const int>(ex.targets),
                                          std::span<const std::uint8_t>(ex.mask));
        sd::nn::backward(loss);
        opt.step(model.params());
      }
      std::size_t i = 0, moved = 0, trainable = 0;
      for (const auto& p : model.params().all()) {
        const bool same = p.var.value().data == before[i];
        if (frozen[i]) {
          EXPECT_TRUE(same) << p.name;
        } else {
          ++trainable;
          moved += !same;
        }
        ++i;
      }
      if (trainable > 0) {
        EXPECT_GT(moved, 0u);
      }
    }
  }
}

TEST(Training, MemorizesSingleSegment) {
  const auto mc = small_config();
  sd::DiarizationModel<float> model(mc, mc.bins());
  auto rec = simulated_recording(mc, 17, 2.0, 0.3);
  auto cfg = short_segments();
  cfg.steps = 2000;
  auto examples = sd::make_training_examples(rec, model.space(), cfg);
  ASSERT_EQ(examples.size(), 1u);
  auto report = sd::train(model, examples, cfg);
  EXPECT_LT(report.final_loss(), 0.01);
}

TEST(Training, NonFiniteLossAborts) {
  const auto mc = small_config();
  sd::DiarizationModel<float> model(mc, mc.bins());
  auto rec = simulated_recording(mc, 18, 2.0);
  auto cfg = short_segments();
  auto examples = sd::make_training_examples(rec, model.space(), cfg);
  model.params().find("eend.head.bias")->var.mutable_value().data[0] = std::numeric_limits<float>::quiet_NaN();
  EXPECT_THROW(sd::train(model, examples, cfg), sd::NumericError);
}

TEST(Training, CheckpointHookFiresEveryKSteps) {
  const auto mc = small_config();
  sd::DiarizationModel<float> model(mc, mc.bins());
  auto rec = simulated_recording(mc, 19, 2.0);
  auto cfg = short_segments();
  cfg.steps = 10;
  cfg.checkpoint_every = 3;
  std::vector<int> steps;
  sd::train(model, sd::make_training_examples(rec, model.space(), cfg), cfg, [&](int s) { steps.push_back(s); });
  EXPECT_EQ(steps, (std::vector<int>{3, 6, 9}));
}

TEST(TrainReport, JsonLinesCarryStepLossAndLr) {
  sd::TrainReport r;
  r.records = {{1, 0.5, 1e-3, 2.0}, {2, 0.25, 1e-3, 1.0}};
  EXPECT_EQ(r.to_jsonl(),
            "{\"step\": 1, \"loss\": 0.5, \"lr\": 0.001, \"grad_norm\": 2}\n"
            "{\"step\": 2, \"loss\": 0.25, \"lr\": 0.001, \"grad_norm\": 1}\n");
  EXPECT_DOUBLE_EQ(r.head_mean(1), 0.5);
  EXPECT_DOUBLE_EQ(r.tail_mean(5), 0.375);
}

TEST(SpatialPretraining, CheckpointLoadsAsAuxiliaryAndBeatsUniformFloor) {
  auto mc = small_config();
  mc.kind = sd::ModelKind::SpatialDiarization;
  mc.max_speakers = 2;
  mc.spatial_dim = 16;
  sd::DiarizationModel<float> spatial(mc, mc.bins());
  auto cfg = short_segments();
  cfg.steps = 600;
  std::vector<sd::TrainingExample> examples;
  std::vector<sd::Recording> recs;
  for (std::uint64_t s = 0; s < 3; ++s) recs.push_back(simulated_recording(mc, 30 + s, 30.0, 0.4));
  for (const auto& r : recs) {
    auto ex = sd::make_training_examples(r, spatial.space(), cfg);
    examples.insert(examples.end(), ex.begin(), ex.end());
  }
  sd::train(spatial, examples, cfg);

  auto test = simulated_recording(mc, 40, 30.0, 0.4);
  auto in = sd::make_model_input<float>(*test.features, 0, test.num_frames());
  auto post = spatial.posteriors(in);
  for (std::size_t t = 0; t < post.frames; ++t) {
    double sum = 0;
    for (int c = 0; c < post.classes; ++c) sum += post.at(t, c);
    ASSERT_NEAR(sum, 1.0, 1e-5);
  }

  // uniform posteriors decode to silence (ties go to class 0), so the floor misses all speech
  auto hyp = sd::diarize_recording(spatial, test, cfg);
  auto d = sd::der_by_region(test.reference, hyp);
  EXPECT_LT(d.der_overlap, 1.0);
  EXPECT_LT(d.der_overall, 1.0);

  const auto bytes = sd::nn::encode_checkpoint(spatial.params());
  auto cond = small_config(sd::Conditioning::SpatialDiarization);
  cond.max_speakers = 2;
  cond.spatial_dim = 16;
  sd::DiarizationModel<float> conditioned(cond, cond.bins());
  EXPECT_NO_THROW(sd::nn::load_checkpoint(conditioned.params(), bytes, "aux.", "aux."));
  EXPECT_EQ(snapshot(conditioned.params(), "aux."), snapshot(spatial.params(), "aux."));
}
