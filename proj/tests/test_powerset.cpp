#include <gtest/gtest.h>

#include <random>

#include "spatial_diar/powerset.hpp"

using namespace spatial_diar;

namespace {

PowersetPosteriors one_hot(const std::vector<int>& cls, int classes) {
  PowersetPosteriors p{cls.size(), classes, std::vector<float>(cls.size() * std::size_t(classes), 0.f)};
  for (std::size_t t = 0; t < cls.size(); ++t) p.values[t * std::size_t(classes) + std::size_t(cls[t])] = 1.f;
  return p;
}

}  // namespace

TEST(Powerset, SmallSpacesEnumerateInOrder) {
  auto s2 = enumerate_classes(2);
  EXPECT_EQ(s2.classes(), (std::vector<SpeakerSet>{{}, {0}, {1}, {0, 1}}));
  EXPECT_EQ(enumerate_classes(3).num_classes(), 7);
  EXPECT_EQ(enumerate_classes(4).num_classes(), 11);
  EXPECT_THROW(enumerate_classes(0), std::invalid_argument);
}

TEST(Powerset, ClassCountLaw) {
  for (int s = 1; s <= 8; ++s) {
    EXPECT_EQ(enumerate_classes(s).num_classes(), 1 + s + s * (s - 1) / 2);
    EXPECT_EQ(PowersetSpace::class_count(s), 1 + s + s * (s - 1) / 2);
  }
}

TEST(Powerset, EncodeFixedExamples) {
  PowersetSpace s3(3);
  EXPECT_EQ(s3.encode({}), 0);
  EXPECT_EQ(s3.encode({1}), 2);
  EXPECT_EQ(s3.decode(5), (SpeakerSet{0, 2}));
  EXPECT_EQ(s3.decode(0), SpeakerSet{});
  EXPECT_THROW(s3.encode({3}), std::invalid_argument);
  EXPECT_THROW(s3.decode(7), std::invalid_argument);
  EXPECT_THROW(s3.decode(-1), std::invalid_argument);
}

TEST(Powerset, ExhaustiveRoundTrip) {
  for (int S = 1; S <= 8; ++S) {
    PowersetSpace space(S);
    std::vector<bool> seen(std::size_t(space.num_classes()), false);
    for (int mask = 0; mask < (1 << S); ++mask) {
      if (__builtin_popcount(unsigned(mask)) > 2) continue;
      SpeakerSet set;
      for (int s = 0; s < S; ++s) {
        if (mask >> s & 1) set.push_back(s);
      }
      const int c = space.encode(set);
      ASSERT_GE(c, 0);
      ASSERT_LT(c, space.num_classes());
      EXPECT_FALSE(seen[std::size_t(c)]);
      seen[std::size_t(c)] = true;
      EXPECT_EQ(space.decode(c), set);
    }
    for (bool b : seen) EXPECT_TRUE(b);
  }
}

TEST(Powerset, TripleKeepsTwoLargestTotals) {
  PowersetSpace s3(3);
  const std::vector<double> totals{5, 9, 7};
  EXPECT_EQ(s3.encode({0, 1, 2}, totals), s3.encode({1, 2}));
  EXPECT_THROW(s3.encode({0, 1, 2}), std::invalid_argument);
}

TEST(Powerset, OversizedSetsKeepTopTwo) {
  std::mt19937 rng(1);
  for (int trial = 0; trial < 300; ++trial) {
    const int S = 3 + int(rng() % 6);
    PowersetSpace space(S);
    std::vector<double> totals(static_cast<std::size_t>(S));
    for (auto& t : totals) t = double(rng() % 5);  // small range forces ties
    SpeakerSet set;
    for (int s = 0; s < S; ++s) {
      if (rng() % 2) set.push_back(s);
    }
    if (set.size() < 3) continue;
    // independent top-two scan; ties keep the lower index
    int a = -1, b = -1;
    for (int s : set) {
      if (a < 0 || totals[std::size_t(s)] > totals[std::size_t(a)]) {
        b = a;
        a = s;
      } else if (b < 0 || totals[std::size_t(s)] > totals[std::size_t(b)]) {
        b = s;
      }
    }
    const int cls = space.encode(set, totals);
    EXPECT_EQ(cls, space.encode({std::min(a, b), std::max(a, b)}));
    // brute force: no pair of active speakers holds more total activity
    double best = 0;
    for (std::size_t i = 0; i < set.size(); ++i) {
      for (std::size_t j = i + 1; j < set.size(); ++j) best = std::max(best, totals[std::size_t(set[i])] + totals[std::size_t(set[j])]);
    }
    const auto& kept = space.decode(cls);
    EXPECT_EQ(totals[std::size_t(kept[0])] + totals[std::size_t(kept[1])], best);
  }
}

TEST(Powerset, PosteriorsToActivityExample) {
  PowersetSpace s2(2);
  std::vector<int> cls(100, 1);
  for (int t = 50; t < 100; ++t) cls[std::size_t(t)] = 3;
  auto track = posteriors_to_activity(one_hot(cls, 4), s2, 50);
  ASSERT_EQ(track.size(), 2u);
  EXPECT_EQ(track.intervals[0], (std::vector<Interval>{{0, 2.0}}));
  EXPECT_EQ(track.intervals[1], (std::vector<Interval>{{1.0, 2.0}}));
}

TEST(Powerset, SilenceAndUniformDecodeEmpty) {
  PowersetSpace s3(3);
  EXPECT_EQ(posteriors_to_activity(one_hot(std::vector<int>(20, 0), 7), s3, 50).size(), 0u);
  PowersetPosteriors uni{20, 7, std::vector<float>(140, 1.f / 7)};
  EXPECT_EQ(posteriors_to_activity(uni, s3, 50).size(), 0u);
}

TEST(Powerset, ArgmaxInvariantToMonotoneRowRescaling) {
  std::mt19937 rng(2);
  std::uniform_real_distribution<float> u(0.01f, 1.f);
  PowersetSpace s4(4);
  PowersetPosteriors p{200, 11, std::vector<float>(2200)};
  for (auto& v : p.values) v = u(rng);
  auto q = p;
  for (std::size_t t = 0; t < 200; ++t) {
    const float scale = u(rng) * 10;
    for (int c = 0; c < 11; ++c) {
      auto& v = q.values[t * 11 + std::size_t(c)];
      v = scale * v * v * v + 0.5f;
    }
  }
  EXPECT_EQ(decode_activity(p, s4), decode_activity(q, s4));
  PowersetSpace s3(3);
  EXPECT_THROW(decode_activity(p, s3), std::invalid_argument);
}
