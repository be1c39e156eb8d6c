#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "spatial_diar/assignment.hpp"
#include "spatial_diar/audio_io.hpp"

namespace spatial_diar {

inline constexpr double kScoringFrame = 0.01;

enum class Region : std::uint8_t { Silence = 0, Single = 1, Overlap = 2 };

/// Error seconds accumulated over some set of frames.
struct ErrorTotals {
  double miss = 0.0;
  double false_alarm = 0.0;
  double confusion = 0.0;
  double ref_speech = 0.0;  ///< reference speaker-seconds
  double duration = 0.0;    ///< wall-clock seconds covered

  double errors() const { return miss + false_alarm + confusion; }

  /// errors / ref_speech; 0 when there is neither reference speech nor error.
  double der() const {
    if (ref_speech > 0) return errors() / ref_speech;
    return errors() > 0 ? std::numeric_limits<double>::infinity() : 0.0;
  }

  ErrorTotals& operator+=(const ErrorTotals& o) {
    miss += o.miss;
    false_alarm += o.false_alarm;
    confusion += o.confusion;
    ref_speech += o.ref_speech;
    duration += o.duration;
    return *this;
  }
};

struct DerBreakdown {
  double miss = 0.0;
  double false_alarm = 0.0;
  double confusion = 0.0;
  double total_ref_speech = 0.0;
  double der_overall = 0.0;
  double der_overlap = 0.0;
  double der_single = 0.0;
  ErrorTotals silence, single, overlap;

  /// Recomputes the overall fields and ratios from the region totals.
  void finalize() {
    ErrorTotals all = silence;
    all += single;
    all += overlap;
    miss = all.miss;
    false_alarm = all.false_alarm;
    confusion = all.confusion;
    total_ref_speech = all.ref_speech;
    der_overall = all.der();
    der_overlap = overlap.der();
    der_single = single.der();
  }
};

/// Per-frame region labels from the reference speaker count (0 / 1 / 2+).
struct RegionMasks {
  std::vector<Region> frames;
  double frame = kScoringFrame;

  double duration(Region r) const { return double(std::count(frames.begin(), frames.end(), r)) * frame; }
};

inline std::size_t scoring_frames(double duration, double frame) {
  return std::size_t(std::llround(duration / frame));
}

inline RegionMasks region_split(const ActivityTrack& ref, double frame = kScoringFrame) {
  const auto n = scoring_frames(ref.duration, frame);
  auto act = ref.frames(1.0 / frame, n);
  RegionMasks masks;
  masks.frame = frame;
  masks.frames.assign(n, Region::Silence);
  for (std::size_t t = 0; t < n; ++t) {
    int count = 0;
    for (const auto& a : act) count += a[t];
    masks.frames[t] = count == 0 ? Region::Silence : (count == 1 ? Region::Single : Region::Overlap);
  }
  return masks;
}

/// Frame-level co-activity counts: overlap[h][r] = frames where hyp h and ref r are both active.
inline std::vector<std::vector<std::int64_t>> coactivity(const std::vector<std::vector<std::uint8_t>>& hyp,
                                                         const std::vector<std::vector<std::uint8_t>>& ref) {
  std::vector<std::vector<std::int64_t>> m(hyp.size(), std::vector<std::int64_t>(ref.size(), 0));
  for (std::size_t h = 0; h < hyp.size(); ++h) {
    for (std::size_t r = 0; r < ref.size(); ++r) {
      std::int64_t c = 0;
      for (std::size_t t = 0; t < hyp[h].size(); ++t) c += hyp[h][t] & ref[r][t];
      m[h][r] = c;
    }
  }
  return m;
}

/// Optimal hypothesis-to-reference speaker mapping (hyp index -> ref index or -1). When the
/// name-identity mapping is already optimal it is used as is.
inline std::vector<int> speaker_mapping(const ActivityTrack& ref, const ActivityTrack& hyp,
                                        const std::vector<std::vector<std::int64_t>>& overlap) {
  auto best = max_weight_assignment(overlap);
  const auto best_weight = assignment_weight(overlap, best);
  std::vector<int> identity(hyp.size(), -1);
  for (std::size_t h = 0; h < hyp.size(); ++h) identity[h] = ref.find(hyp.speakers[h]);
  if (assignment_weight(overlap, identity) == best_weight) return identity;
  return best;
}

/// Collar-free frame-based DER with a region decomposition. The hypothesis may not extend past
/// the reference duration by more than one frame.
inline DerBreakdown der_by_region(const ActivityTrack& ref, const ActivityTrack& hyp, double frame = kScoringFrame) {
  if (hyp.duration > ref.duration + frame + 1e-9) {
    throw std::invalid_argument("hypothesis extends beyond the reference duration");
  }
  const auto n = scoring_frames(ref.duration, frame);
  const double rate = 1.0 / frame;
  auto ref_act = ref.frames(rate, n);
  auto hyp_act = hyp.frames(rate, n);
  auto mapping = speaker_mapping(ref, hyp, coactivity(hyp_act, ref_act));

  DerBreakdown out;
  for (std::size_t t = 0; t < n; ++t) {
    int nref = 0, nhyp = 0, correct = 0;
    for (const auto& a : ref_act) nref += a[t];
    for (std::size_t h = 0; h < hyp_act.size(); ++h) {
      if (!hyp_act[h][t]) continue;
      ++nhyp;
      if (mapping[h] >= 0 && ref_act[std::size_t(mapping[h])][t]) ++correct;
    }
    ErrorTotals& bucket = nref == 0 ? out.silence : (nref == 1 ? out.single : out.overlap);
    bucket.miss += double(std::max(0, nref - nhyp)) * frame;
    bucket.false_alarm += double(std::max(0, nhyp - nref)) * frame;
    bucket.confusion += double(std::min(nref, nhyp) - correct) * frame;
    bucket.ref_speech += double(nref) * frame;
    bucket.duration += frame;
  }
  out.finalize();
  return out;
}

inline DerBreakdown der(const ActivityTrack& ref, const ActivityTrack& hyp, double frame = kScoringFrame) {
  return der_by_region(ref, hyp, frame);
}

/// Sums error seconds over recordings (a dataset-level pooled score).
inline DerBreakdown pool(const std::vector<DerBreakdown>& parts) {
  DerBreakdown out;
  for (const auto& p : parts) {
    out.silence += p.silence;
    out.single += p.single;
    out.overlap += p.overlap;
  }
  out.finalize();
  return out;
}

/// Unweighted mean across datasets of the three reported ratios (and of the components).
inline DerBreakdown macro_average(const std::vector<DerBreakdown>& per_dataset) {
  if (per_dataset.empty()) throw std::invalid_argument("macro average needs at least one dataset");
  DerBreakdown out;
  const double n = double(per_dataset.size());
  for (const auto& d : per_dataset) {
    out.der_overall += d.der_overall / n;
    out.der_overlap += d.der_overlap / n;
    out.der_single += d.der_single / n;
    out.miss += d.miss / n;
    out.false_alarm += d.false_alarm / n;
    out.confusion += d.confusion / n;
    out.total_ref_speech += d.total_ref_speech / n;
  }
  return out;
}

/// "overall (OV / Single)" in percent with one decimal.
inline std::string format_der(const DerBreakdown& d) {
  char buf[96];
  std::snprintf(buf, sizeof buf, "%.1f (%.1f / %.1f)", 100 * d.der_overall, 100 * d.der_overlap, 100 * d.der_single);
  return buf;
}

struct ReportRow {
  std::string name;
  DerBreakdown score;
};

inline std::string emit_report_csv(const std::vector<ReportRow>& rows) {
  std::string out = "name,der,der_overlap,der_single,miss,false_alarm,confusion,ref_speech\n";
  char buf[256];
  for (const auto& r : rows) {
    const auto& d = r.score;
    std::snprintf(buf, sizeof buf, "%s,%.4f,%.4f,%.4f,%.3f,%.3f,%.3f,%.3f\n", r.name.c_str(), 100 * d.der_overall,
                  100 * d.der_overlap, 100 * d.der_single, d.miss, d.false_alarm, d.confusion, d.total_ref_speech);
    out += buf;
  }
  return out;
}

inline std::string emit_report_text(const std::vector<ReportRow>& rows) {
  std::size_t width = 7;
  for (const auto& r : rows) width = std::max(width, r.name.size());
  auto pad = [width](const std::string& s) { return s + std::string(width - s.size() + 2, ' '); };
  std::string out = pad("System") + "DER (OV / Single)\n";
  for (const auto& r : rows) out += pad(r.name) + format_der(r.score) + "\n";
  return out;
}

/// Per-file rows, a pooled row per dataset, and a Macro row over datasets.
struct DatasetScores {
  std::string name;
  std::vector<ReportRow> files;
};

inline std::vector<ReportRow> build_report(const std::vector<DatasetScores>& datasets, bool include_files = true) {
  std::vector<ReportRow> rows;
  std::vector<DerBreakdown> pooled;
  for (const auto& ds : datasets) {
    std::vector<DerBreakdown> parts;
    for (const auto& f : ds.files) {
      if (include_files) rows.push_back({ds.name + "/" + f.name, f.score});
      parts.push_back(f.score);
    }
    pooled.push_back(pool(parts));
    rows.push_back({ds.name, pooled.back()});
  }
  if (!pooled.empty()) rows.push_back({"Macro", macro_average(pooled)});
  return rows;
}

}  // namespace spatial_diar
