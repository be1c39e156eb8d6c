#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>
#include <random>

#include "spatial_diar/assignment.hpp"
#include "spatial_diar/scoring.hpp"

using namespace spatial_diar;

namespace {

using Frames = std::vector<std::vector<std::uint8_t>>;

Frames random_frames(std::size_t speakers, std::size_t n, std::mt19937& rng) {
  Frames f(speakers, std::vector<std::uint8_t>(n, 0));
  for (auto& a : f) {
    // runs of activity so that tracks look like speech
    bool on = rng() % 2;
    for (std::size_t t = 0; t < n; ++t) {
      if (rng() % 8 == 0) on = !on;
      a[t] = on;
    }
  }
  return f;
}

std::vector<std::string> names(const char* prefix, std::size_t n) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(prefix + std::to_string(i));
  return out;
}

// Every partial injective mapping hyp -> ref, by recursion.
std::int64_t brute_force_correct(const Frames& hyp, const Frames& ref, std::size_t h, std::vector<bool>& used) {
  if (h == hyp.size()) return 0;
  std::int64_t best = brute_force_correct(hyp, ref, h + 1, used);
  for (std::size_t r = 0; r < ref.size(); ++r) {
    if (used[r]) continue;
    std::int64_t c = 0;
    for (std::size_t t = 0; t < hyp[h].size(); ++t) c += hyp[h][t] & ref[r][t];
    used[r] = true;
    best = std::max(best, c + brute_force_correct(hyp, ref, h + 1, used));
    used[r] = false;
  }
  return best;
}

std::int64_t max_count_frames(const Frames& a, const Frames& b, std::size_t n) {
  std::int64_t s = 0;
  for (std::size_t t = 0; t < n; ++t) {
    int na = 0, nb = 0;
    for (const auto& x : a) na += x[t];
    for (const auto& x : b) nb += x[t];
    s += std::max(na, nb);
  }
  return s;
}

ActivityTrack framed(const Frames& f, const char* prefix, std::size_t n) {
  auto t = track_from_frames(names(prefix, f.size()), f, 100);
  t.duration = double(n) / 100;
  return t;
}

}  // namespace

TEST(Assignment, MatchesBruteForceOnRandomRectangles) {
  std::mt19937 rng(1);
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t rows = rng() % 5, cols = rng() % 5;
    std::vector<std::vector<std::int64_t>> w(rows, std::vector<std::int64_t>(cols));
    for (auto& r : w) {
      for (auto& v : r) v = std::int64_t(rng() % 20);
    }
    auto a = max_weight_assignment(w);
    ASSERT_EQ(a.size(), rows);
    std::vector<int> seen;
    for (int c : a) {
      if (c >= 0) seen.push_back(c);
    }
    std::sort(seen.begin(), seen.end());
    EXPECT_EQ(std::adjacent_find(seen.begin(), seen.end()), seen.end());
    // brute force over column permutations
    std::vector<int> perm(std::max(rows, cols));
    std::iota(perm.begin(), perm.end(), 0);
    std::int64_t best = 0;
    do {
      std::int64_t s = 0;
      for (std::size_t i = 0; i < rows; ++i) {
        if (perm[i] < int(cols)) s += w[i][std::size_t(perm[i])];
      }
      best = std::max(best, s);
    } while (std::next_permutation(perm.begin(), perm.end()));
    EXPECT_EQ(assignment_weight(w, a), best);
  }
}

TEST(Assignment, RaggedMatrixRejected) {
  EXPECT_THROW(max_weight_assignment({{1, 2}, {3}}), std::invalid_argument);
}

TEST(Der, PerfectHypothesisScoresZero) {
  std::mt19937 rng(2);
  auto f = random_frames(3, 300, rng);
  auto ref = framed(f, "r", 300);
  auto d = der(ref, ref);
  EXPECT_EQ(d.der_overall, 0.0);
  EXPECT_EQ(d.miss + d.false_alarm + d.confusion, 0.0);
  EXPECT_EQ(format_der(d), "0.0 (0.0 / 0.0)");
}

TEST(Der, EmptyHypothesisIsAllMiss) {
  ActivityTrack ref;
  ref.add("A", 0, 10);
  ActivityTrack hyp;
  hyp.duration = 10;
  auto d = der(ref, hyp);
  EXPECT_NEAR(d.miss, 10, 1e-9);
  EXPECT_DOUBLE_EQ(d.der_overall, 1.0);
}

TEST(Der, ShiftedSingleSpeakerExample) {
  ActivityTrack ref, hyp;
  ref.add("A", 0, 4);
  ref.duration = 6;
  hyp.add("X", 2, 6);
  auto d = der(ref, hyp);
  EXPECT_NEAR(d.miss, 2, 1e-9);
  EXPECT_NEAR(d.false_alarm, 2, 1e-9);
  EXPECT_NEAR(d.confusion, 0, 1e-9);
  EXPECT_NEAR(d.der_overall, 1.0, 1e-12);
}

TEST(Der, DurationMismatchRejected) {
  ActivityTrack ref, hyp;
  ref.add("A", 0, 4);
  hyp.add("A", 0, 4.5);
  EXPECT_THROW(der(ref, hyp), std::invalid_argument);
  hyp = {};
  hyp.add("A", 0, 4.01);
  EXPECT_NO_THROW(der(ref, hyp));
}

TEST(Der, OptimalMappingEqualsBruteForce) {
  std::mt19937 rng(3);
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t n = 1 + rng() % 200, nr = 1 + rng() % 3, nh = rng() % 4;
    auto rf = random_frames(nr, n, rng), hf = random_frames(nh, n, rng);
    auto d = der(framed(rf, "r", n), framed(hf, "h", n));
    std::vector<bool> used(nr, false);
    const auto best = brute_force_correct(hf, rf, 0, used);
    const auto errors = std::llround((d.miss + d.false_alarm + d.confusion) * 100);
    EXPECT_EQ(max_count_frames(rf, hf, n) - errors, best);
  }
}

TEST(Der, InvariantUnderHypothesisRelabeling) {
  std::mt19937 rng(4);
  for (int trial = 0; trial < 50; ++trial) {
    auto rf = random_frames(3, 150, rng), hf = random_frames(3, 150, rng);
    auto a = der(framed(rf, "r", 150), framed(hf, "h", 150));
    std::shuffle(hf.begin(), hf.end(), rng);
    auto b = der(framed(rf, "r", 150), framed(hf, "q", 150));
    EXPECT_NEAR(a.der_overall, b.der_overall, 1e-12);
  }
}

TEST(Der, AddingFalseAlarmNeverLowersDer) {
  std::mt19937 rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    auto rf = random_frames(2, 200, rng), hf = random_frames(2, 200, rng);
    auto ref = framed(rf, "r", 200);
    auto hyp = framed(hf, "h", 200);
    const auto before = der(ref, hyp).der_overall;
    const double on = double(rng() % 180) / 100;
    hyp.add("fa_only", on, on + 0.2);
    EXPECT_GE(der(ref, hyp).der_overall, before - 1e-12);
  }
}

TEST(Der, IdentityMappingKeptWhenTied) {
  // two identical reference speakers: identity and swap tie; identity must be chosen
  ActivityTrack ref, hyp;
  ref.add("A", 0, 2);
  ref.add("B", 0, 2);
  hyp = ref;
  auto act = [](const ActivityTrack& t) { return t.frames(100, 200); };
  auto m = speaker_mapping(ref, hyp, coactivity(act(hyp), act(ref)));
  EXPECT_EQ(m, (std::vector<int>{0, 1}));
}

TEST(Regions, FullOverlapAndDisjointCases) {
  ActivityTrack both;
  both.add("A", 0, 3);
  both.add("B", 0, 3);
  auto m = region_split(both);
  EXPECT_NEAR(m.duration(Region::Overlap), 3, 1e-9);
  ActivityTrack disjoint;
  disjoint.add("A", 0, 1);
  disjoint.add("B", 1, 2);
  disjoint.duration = 3;
  m = region_split(disjoint);
  EXPECT_NEAR(m.duration(Region::Single), 2, 1e-9);
  EXPECT_NEAR(m.duration(Region::Overlap), 0, 1e-9);
  EXPECT_NEAR(m.duration(Region::Silence), 1, 1e-9);
}

TEST(Regions, PartitionAndComponentDecomposition) {
  std::mt19937 rng(6);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 50 + rng() % 300;
    auto ref = framed(random_frames(3, n, rng), "r", n);
    auto hyp = framed(random_frames(2, n, rng), "h", n);
    auto m = region_split(ref);
    EXPECT_NEAR(m.duration(Region::Silence) + m.duration(Region::Single) + m.duration(Region::Overlap), ref.duration, 1e-9);
    auto d = der_by_region(ref, hyp);
    EXPECT_NEAR(d.silence.duration, m.duration(Region::Silence), 1e-9);
    EXPECT_NEAR(d.overlap.duration, m.duration(Region::Overlap), 1e-9);
    EXPECT_EQ(d.silence.miss + d.silence.confusion, 0.0);
    EXPECT_NEAR(d.miss, d.single.miss + d.overlap.miss, 1e-9);
    EXPECT_NEAR(d.confusion, d.single.confusion + d.overlap.confusion, 1e-9);
    EXPECT_NEAR(d.false_alarm, d.single.false_alarm + d.overlap.false_alarm + d.silence.false_alarm, 1e-9);
    EXPECT_NEAR(d.der_overall, (d.miss + d.false_alarm + d.confusion) / d.total_ref_speech, 1e-12);
  }
}

TEST(Regions, MissingTheOverlappedSpeakerOnlyHurtsOverlap) {
  ActivityTrack ref, hyp;
  ref.add("A", 0, 10);
  ref.add("B", 4, 6);
  hyp.add("A", 0, 10);
  auto d = der_by_region(ref, hyp);
  EXPECT_EQ(d.der_single, 0.0);
  // overlap: 2 s, 4 speaker-seconds, 2 s missed
  EXPECT_NEAR(d.der_overlap, 0.5, 1e-9);
  EXPECT_NEAR(d.der_overall, 2.0 / 12.0, 1e-9);
}

TEST(Macro, AveragesDatasets) {
  DerBreakdown a, b;
  a.der_overall = 0.10;
  b.der_overall = 0.14;
  EXPECT_NEAR(macro_average({a, b}).der_overall, 0.12, 1e-12);
  EXPECT_NEAR(macro_average({a}).der_overall, 0.10, 1e-12);
  EXPECT_THROW(macro_average({}), std::invalid_argument);
}

TEST(Macro, FourDatasetsMatchSecondCodePath) {
  std::mt19937 rng(7);
  std::vector<DerBreakdown> sets;
  for (int i = 0; i < 4; ++i) {
    auto ref = framed(random_frames(2, 200, rng), "r", 200);
    auto hyp = framed(random_frames(2, 200, rng), "h", 200);
    sets.push_back(der_by_region(ref, hyp));
  }
  auto m = macro_average(sets);
  double ov = 0, ovl = 0, sg = 0;
  for (const auto& s : sets) {
    ov += (s.miss + s.false_alarm + s.confusion) / s.total_ref_speech;
    ovl += s.overlap.der();
    sg += s.single.der();
  }
  EXPECT_NEAR(m.der_overall, ov / 4, 1e-12);
  EXPECT_NEAR(m.der_overlap, ovl / 4, 1e-12);
  EXPECT_NEAR(m.der_single, sg / 4, 1e-12);
}

TEST(Report, TableLayoutAndCsv) {
  DerBreakdown d;
  d.der_overall = 0.122;
  d.der_overlap = 0.201;
  d.der_single = 0.087;
  EXPECT_EQ(format_der(d), "12.2 (20.1 / 8.7)");

  ActivityTrack ref;
  ref.add("A", 0, 4);
  ActivityTrack half;
  half.add("A", 0, 2);
  half.duration = 4;
  std::vector<DatasetScores> ds{{"d1", {{"f1", der(ref, ref)}, {"f2", der(ref, half)}}}, {"d2", {{"g1", der(ref, ref)}}}};
  auto rows = build_report(ds);
  ASSERT_EQ(rows.size(), 6u);
  EXPECT_EQ(rows[0].name, "d1/f1");
  EXPECT_EQ(rows[2].name, "d1");
  EXPECT_NEAR(rows[2].score.der_overall, 0.25, 1e-9);  // pooled: 2 s missed of 8 s
  EXPECT_EQ(rows.back().name, "Macro");
  EXPECT_NEAR(rows.back().score.der_overall, 0.125, 1e-9);
  const auto csv = emit_report_csv(rows);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "name,der,der_overlap,der_single,miss,false_alarm,confusion,ref_speech");
  EXPECT_NE(emit_report_text(rows).find("Macro    12.5 (0.0 / 12.5)"), std::string::npos);
}
