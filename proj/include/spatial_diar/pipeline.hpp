#pragma once

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "spatial_diar/assignment.hpp"
#include "spatial_diar/audio_io.hpp"
#include "spatial_diar/models.hpp"
#include "spatial_diar/powerset.hpp"
#include "spatial_diar/training.hpp"

namespace spatial_diar {

/// Local diarization output of one segment on the model frame grid.
struct LocalHypothesis {
  double onset = 0;
  double offset = 0;
  std::size_t first_frame = 0;
  std::vector<std::vector<std::uint8_t>> activity;  ///< [local speaker][frame within segment]
  PowersetPosteriors posteriors;

  std::size_t frames() const { return activity.empty() ? 0 : activity.front().size(); }
};

/// Runs the model on every segment of a prepared recording. Frames past the end of the
/// recording are dropped from the activity.
template <typename T>
std::vector<LocalHypothesis> infer_segments(const DiarizationModel<T>& model, const Recording& rec, double segment_len,
                                            double segment_hop) {
  std::vector<LocalHypothesis> out;
  const auto counts = rec.speaker_counts();
  for (const auto& span : segment_spans(rec.duration, segment_len, segment_hop)) {
    auto [first, count] = segment_frames(span, rec.frame_rate());
    auto in = make_model_input<T>(*rec.features, first, count);
    if (model.config().conditioning == Conditioning::OracleCount) {
      std::vector<int> c(count, 0);
      for (std::size_t i = 0; i < count && first + i < counts.size(); ++i) c[i] = counts[first + i];
      in.count_condition = count_one_hot<T>(c);
    }
    LocalHypothesis hyp;
    hyp.onset = span.onset;
    hyp.offset = span.offset;
    hyp.first_frame = first;
    hyp.posteriors = model.posteriors(in);
    auto act = decode_activity(hyp.posteriors, model.space());
    const std::size_t keep = first >= rec.num_frames() ? 0 : std::min(count, rec.num_frames() - first);
    for (auto& a : act) a.resize(keep);
    hyp.activity = std::move(act);
    out.push_back(std::move(hyp));
  }
  return out;
}

/// Locals built directly from the reference (every segment sees the true activity).
inline std::vector<LocalHypothesis> reference_locals(const ActivityTrack& ref, double frame_rate, std::size_t num_frames,
                                                     double segment_len, double segment_hop, int capacity) {
  auto frames = ref.frames(frame_rate, num_frames);
  std::vector<LocalHypothesis> out;
  for (const auto& span : segment_spans(ref.duration, segment_len, segment_hop)) {
    auto [first, count] = segment_frames(span, frame_rate);
    LocalHypothesis hyp;
    hyp.onset = span.onset;
    hyp.offset = span.offset;
    hyp.first_frame = first;
    const std::size_t keep = first >= num_frames ? 0 : std::min(count, num_frames - first);
    for (int g : local_speaker_order(frames, first, count, capacity)) {
      std::vector<std::uint8_t> a(frames[std::size_t(g)].begin() + long(first),
                                  frames[std::size_t(g)].begin() + long(first + keep));
      hyp.activity.push_back(std::move(a));
    }
    out.push_back(std::move(hyp));
  }
  return out;
}

/// Per-segment assignment of local speakers to reference speakers maximizing matched frames.
/// Returns the reference index of each local speaker, or -1 when unmatched.
inline std::vector<int> assign_local_speakers(const LocalHypothesis& local,
                                              const std::vector<std::vector<std::uint8_t>>& ref_frames) {
  std::vector<std::vector<std::int64_t>> w(local.activity.size(), std::vector<std::int64_t>(ref_frames.size(), 0));
  for (std::size_t l = 0; l < local.activity.size(); ++l) {
    for (std::size_t r = 0; r < ref_frames.size(); ++r) {
      std::int64_t c = 0;
      for (std::size_t i = 0; i < local.frames(); ++i) {
        const std::size_t t = local.first_frame + i;
        if (t < ref_frames[r].size()) c += local.activity[l][i] & ref_frames[r][t];
      }
      w[l][r] = c;
    }
  }
  auto assignment = max_weight_assignment(w);
  for (std::size_t l = 0; l < assignment.size(); ++l) {
    if (assignment[l] >= 0 && w[l][std::size_t(assignment[l])] == 0) assignment[l] = -1;
  }
  return assignment;
}

/// Oracle stitching onto the recording timeline. Each covering segment votes 0/1 per frame
/// for every label; a label is active where at least half of the covering segments agree.
inline ActivityTrack oracle_stitch(const std::vector<LocalHypothesis>& locals, const ActivityTrack* ref, double frame_rate,
                                   std::size_t num_frames, double duration) {
  if (!ref) throw std::invalid_argument("oracle stitching requires a reference");
  const auto ref_frames = ref->frames(frame_rate, num_frames);
  std::vector<std::string> labels = ref->speakers;
  std::vector<std::vector<int>> votes(labels.size(), std::vector<int>(num_frames, 0));
  std::vector<int> coverage(num_frames, 0);
  int synthetic = 0;
  for (std::size_t seg = 0; seg < locals.size(); ++seg) {
    const auto& local = locals[seg];
    for (std::size_t i = 0; i < local.frames(); ++i) {
      if (local.first_frame + i < num_frames) ++coverage[local.first_frame + i];
    }
    const auto assignment = assign_local_speakers(local, ref_frames);
    for (std::size_t l = 0; l < local.activity.size(); ++l) {
      std::size_t label = 0;
      if (assignment[l] >= 0) {
        label = std::size_t(assignment[l]);
      } else {
        bool any = false;
        for (auto v : local.activity[l]) any = any || v;
        if (!any) continue;
        labels.push_back("unmatched" + std::to_string(synthetic++));
        votes.emplace_back(num_frames, 0);
        label = labels.size() - 1;
      }
      for (std::size_t i = 0; i < local.frames(); ++i) {
        const std::size_t t = local.first_frame + i;
        if (t < num_frames) votes[label][t] += local.activity[l][i];
      }
    }
  }
  std::vector<std::vector<std::uint8_t>> act(labels.size(), std::vector<std::uint8_t>(num_frames, 0));
  for (std::size_t s = 0; s < labels.size(); ++s) {
    for (std::size_t t = 0; t < num_frames; ++t) {
      act[s][t] = coverage[t] > 0 && 2 * votes[s][t] >= coverage[t] ? 1 : 0;
    }
  }
  auto track = track_from_frames(labels, act, frame_rate);
  track.duration = duration;
  for (auto& iv : track.intervals) {
    for (auto& seg : iv) seg.offset = std::min(seg.offset, duration);
  }
  return track;
}

/// infer_segments + oracle_stitch for one prepared recording.
template <typename T>
ActivityTrack diarize_recording(const DiarizationModel<T>& model, const Recording& rec, const TrainConfig& seg) {
  auto locals = infer_segments(model, rec, seg.segment_len, seg.segment_hop);
  return oracle_stitch(locals, &rec.reference, rec.frame_rate(), rec.num_frames(), rec.duration);
}

}  // namespace spatial_diar
