#include <gtest/gtest.h>

#include <algorithm>

#include "model_fixtures.hpp"
#include "spatial_diar/nn/grad_check.hpp"
#include "spatial_diar/signal_frontend.hpp"

using namespace spatial_diar;
using namespace spatial_diar::testing;

namespace {

double max_abs_diff(const PowersetPosteriors& a, const PowersetPosteriors& b) {
  double m = 0;
  for (std::size_t i = 0; i < a.values.size(); ++i) m = std::max(m, double(std::abs(a.values[i] - b.values[i])));
  return m;
}

}  // namespace

TEST(ModelConfig, ValidationRejectsBadShapes) {
  auto c = toy_model_config();
  EXPECT_NO_THROW(c.validate());
  c.heads = 3;
  EXPECT_THROW(c.validate(), ConfigError);
  c = toy_model_config();
  c.conv_kernel = 4;
  EXPECT_THROW(c.validate(), ConfigError);
  c = toy_model_config();
  c.frame_len = 24;
  EXPECT_THROW(c.validate(), ConfigError);
  c = toy_model_config();
  c.kind = ModelKind::SpatialDiarization;
  c.conditioning = Conditioning::SpatialEncoder;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Model, PosteriorShapesForEveryVariant) {
  std::mt19937_64 rng(1);
  for (auto cond : {Conditioning::None, Conditioning::SpatialEncoder, Conditioning::SpatialConformer,
                    Conditioning::SpatialDiarization, Conditioning::OracleCount}) {
    auto cfg = toy_model_config(cond);
    DiarizationModel<float> m(cfg, cfg.bins());
    auto in = random_input<float>(12, cfg.bins(), 3, rng);
    in.count_condition = count_one_hot<float>(std::vector<int>(12, 1));
    auto p = m.posteriors(in);
    EXPECT_EQ(p.frames, 12u);
    EXPECT_EQ(p.classes, 7);
    for (std::size_t t = 0; t < p.frames; ++t) {
      double s = 0;
      for (int c = 0; c < p.classes; ++c) s += p.at(t, c);
      EXPECT_NEAR(s, 1.0, 1e-5);
    }
    EXPECT_EQ(m.has_aux(), cfg.has_aux());
  }
  auto cfg = toy_model_config();
  cfg.kind = ModelKind::SpatialDiarization;
  DiarizationModel<float> sd(cfg, cfg.bins());
  EXPECT_EQ(sd.posteriors(random_input<float>(5, cfg.bins(), 1, rng)).classes, 7);
}

TEST(Model, ParameterPrefixes) {
  auto cfg = toy_model_config(Conditioning::SpatialDiarization);
  DiarizationModel<float> m(cfg, cfg.bins());
  for (const auto& p : m.params().all()) {
    const auto head = p.name.substr(0, p.name.find('.'));
    EXPECT_TRUE(head == "stub" || head == "eend" || head == "aux") << p.name;
  }
  EXPECT_NE(m.params().find("aux.head.weight"), nullptr);
  EXPECT_NE(m.params().find("eend.film1.gamma.weight"), nullptr);
  EXPECT_EQ(m.params().find("eend.film2.gamma.weight"), nullptr);
}

TEST(Model, ZeroInitializedFilmIsNeutral) {
  for (auto cond : {Conditioning::SpatialEncoder, Conditioning::SpatialConformer, Conditioning::SpatialDiarization,
                    Conditioning::OracleCount}) {
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
      std::mt19937_64 rng(seed);
      auto base_cfg = toy_model_config(Conditioning::None, seed);
      auto cond_cfg = toy_model_config(cond, seed + 100);
      DiarizationModel<float> base(base_cfg, base_cfg.bins()), conditioned(cond_cfg, cond_cfg.bins());
      copy_shared_params(base, conditioned);
      auto in = random_input<float>(10, base_cfg.bins(), 3, rng);
      std::vector<int> counts(10);
      for (auto& c : counts) c = int(rng() % 3);
      in.count_condition = count_one_hot<float>(counts);
      EXPECT_LE(max_abs_diff(base.posteriors(in), conditioned.posteriors(in)), 1e-6) << "seed " << seed;
    }
  }
}

TEST(Model, NonZeroFilmChangesOutput) {
  std::mt19937_64 rng(3);
  auto cfg = toy_model_config(Conditioning::SpatialEncoder);
  DiarizationModel<double> base(toy_model_config(), cfg.bins()), conditioned(cfg, cfg.bins());
  copy_shared_params(base, conditioned);
  conditioned.params().find("eend.film0.gamma.weight")->var.mutable_value().data[0] = 0.5;
  auto in = random_input<double>(6, cfg.bins(), 1, rng);
  auto a = base.posteriors(in), b = conditioned.posteriors(in);
  EXPECT_GT(max_abs_diff(a, b), 1e-6);
}

TEST(Model, SpatialEncoderHandlesAnyChannelCount) {
  ModelConfig cfg = toy_model_config(Conditioning::SpatialEncoder);
  cfg.frame_len = 64;
  cfg.hop = 32;
  DiarizationModel<double> m(cfg, cfg.bins());
  const auto shared = m.params().count();
  for (int mics : {2, 3, 4, 6}) {
    SimConfig sc;
    sc.array = mics == 4 ? ArrayShape::Square : ArrayShape::Circular;
    sc.num_mics = mics;
    sc.duration = 0.5;
    sc.sample_rate = 8000;
    auto audio = simulate(sc).audio;
    auto fs = extract_features(audio, cfg.frame_len, cfg.hop);
    ASSERT_EQ(fs.size(), std::size_t(1 + mics * (mics - 1)));
    auto in = make_model_input<double>(fs, 0, 20);
    auto cond = m.condition(in);
    ASSERT_TRUE(cond.has_value());
    EXPECT_EQ(cond->rows(), 20u);
    EXPECT_EQ(cond->cols(), std::size_t(cfg.spatial_dim));
    EXPECT_EQ(m.params().count(), shared);
  }
}

TEST(Model, SpatialEmbeddingInvariantToStreamPermutation) {
  std::mt19937_64 rng(4);
  for (auto cond : {Conditioning::SpatialEncoder, Conditioning::SpatialDiarization}) {
    auto cfg = toy_model_config(cond);
    DiarizationModel<double> m(cfg, cfg.bins());
    auto in = random_input<double>(8, cfg.bins(), 6, rng);
    auto a = m.condition(in)->value();
    auto perm = in;
    std::shuffle(perm.streams.begin() + 1, perm.streams.end(), rng);
    auto b = m.condition(perm)->value();
    for (std::size_t i = 0; i < a.data.size(); ++i) EXPECT_NEAR(a.data[i], b.data[i], 1e-6);
  }
}

TEST(Model, MagnitudeOnlyIgnoresIpdStreams) {
  std::mt19937_64 rng(5);
  auto cfg = toy_model_config();
  cfg.kind = ModelKind::SpatialDiarization;
  cfg.spatial_inputs = SpatialInputs::MagnitudeOnly;
  DiarizationModel<double> m(cfg, cfg.bins());
  auto in = random_input<double>(6, cfg.bins(), 3, rng);
  auto alt = in;
  for (std::size_t s = 1; s < alt.streams.size(); ++s) {
    for (auto& v : alt.streams[s].data) v = -v;
  }
  EXPECT_EQ(m.posteriors(in).values, m.posteriors(alt).values);
  EXPECT_EQ(m.spatial_streams(in).size(), 1u);
}

TEST(Model, InputErrors) {
  std::mt19937_64 rng(6);
  auto cfg = toy_model_config(Conditioning::OracleCount);
  DiarizationModel<float> m(cfg, cfg.bins());
  auto in = random_input<float>(6, cfg.bins(), 1, rng);
  in.count_condition = count_one_hot<float>(std::vector<int>(5, 0));
  EXPECT_THROW(m.posteriors(in), std::invalid_argument);
  EXPECT_THROW(m.posteriors(ModelInput<float>{}), std::invalid_argument);
}

TEST(ModelInput, ZeroPadsPastTheEndAndCompressesMagnitude) {
  FeatureStreams fs;
  fs.streams.push_back({2, 2, {0, 1, 2, 3}});
  fs.kinds.push_back(StreamKind::Magnitude);
  fs.pair_of.emplace_back(-1, -1);
  fs.streams.push_back({2, 2, {0.5f, -0.5f, 1, -1}});
  fs.kinds.push_back(StreamKind::CosIpd);
  fs.pair_of.emplace_back(0, 1);
  auto in = make_model_input<double>(fs, 1, 3);
  ASSERT_EQ(in.frames(), 3u);
  EXPECT_NEAR(in.streams[0](0, 1), std::log1p(3.0), 1e-12);
  EXPECT_EQ(in.streams[1](0, 1), -1.0);
  EXPECT_EQ(in.streams[0](2, 0), 0.0);
  auto oh = count_one_hot<float>({0, 1, 2, 5, -1});
  EXPECT_EQ(oh(3, 2), 1.f);
  EXPECT_EQ(oh(4, 0), 1.f);
}

TEST(Model, AssembledModelsPassGradientCheck) {
  for (auto cond : {Conditioning::None, Conditioning::SpatialDiarization, Conditioning::SpatialEncoder,
                    Conditioning::OracleCount}) {
    for (std::uint64_t seed = 1; seed <= 3; ++seed) {
      auto cfg = toy_model_config(cond, seed);
      DiarizationModel<double> m(cfg, cfg.bins());
      std::mt19937_64 rng(seed);
      std::normal_distribution<double> g(0.0, 0.3);
      for (auto& p : m.params().all()) {
        for (auto& v : p.var.mutable_value().data) v = g(rng);
      }
      auto in = random_input<double>(4, cfg.bins(), 1, rng);
      in.count_condition = count_one_hot<double>({0, 1, 2, 1});
      std::vector<int> targets{0, 3, 6, 2};
      auto r = nn::grad_check_params(m.params(), [&] { return nn::cross_entropy(m.logits(in), std::span<const int>(targets)); });
      EXPECT_TRUE(r.passed(1e-4)) << "cond " << int(cond) << " seed " << seed << " err " << r.max_rel_error << " param " << m.params().all()[r.worst_input].name << "[" << r.worst_index << "] a=" << r.analytic << " n=" << r.numeric;
    }
  }
}
