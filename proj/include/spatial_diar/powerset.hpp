#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "spatial_diar/audio_io.hpp"

namespace spatial_diar {

using SpeakerSet = std::vector<int>;  ///< sorted, distinct local speaker indices

/// Powerset class space with at most two concurrent speakers:
/// [{}] ++ [{s} : s < S] ++ [{s, t} : s < t < S], pairs in lexicographic order.
class PowersetSpace {
 public:
  static constexpr int kMaxConcurrent = 2;

  explicit PowersetSpace(int max_speakers) : speakers_(max_speakers) {
    if (max_speakers < 1) throw std::invalid_argument("powerset needs at least one speaker");
    classes_.push_back({});
    for (int s = 0; s < max_speakers; ++s) classes_.push_back({s});
    for (int s = 0; s < max_speakers; ++s) {
      for (int t = s + 1; t < max_speakers; ++t) classes_.push_back({s, t});
    }
  }

  int max_speakers() const { return speakers_; }
  int num_classes() const { return int(classes_.size()); }
  const std::vector<SpeakerSet>& classes() const { return classes_; }

  static int class_count(int max_speakers) { return 1 + max_speakers + max_speakers * (max_speakers - 1) / 2; }

  int pair_index(int s, int t) const {
    // offset of row s in the upper triangle, then column
    return 1 + speakers_ + s * (2 * speakers_ - s - 1) / 2 + (t - s - 1);
  }

  /// Class of an active set. Sets larger than two keep the two speakers with the greatest
  /// segment_totals (ties to the lower speaker index); segment_totals must then cover all S.
  int encode(const SpeakerSet& active, std::span<const double> segment_totals = {}) const {
    for (int s : active) {
      if (s < 0 || s >= speakers_) throw std::invalid_argument("speaker id out of range");
    }
    SpeakerSet set = active;
    std::sort(set.begin(), set.end());
    set.erase(std::unique(set.begin(), set.end()), set.end());
    if (set.size() > 2) {
      if (segment_totals.size() < std::size_t(speakers_)) {
        throw std::invalid_argument("segment activity totals required for more than two active speakers");
      }
      std::stable_sort(set.begin(), set.end(), [&](int a, int b) { return segment_totals[std::size_t(a)] > segment_totals[std::size_t(b)]; });
      set.resize(2);
      std::sort(set.begin(), set.end());
    }
    if (set.empty()) return 0;
    if (set.size() == 1) return 1 + set[0];
    return pair_index(set[0], set[1]);
  }

  const SpeakerSet& decode(int index) const {
    if (index < 0 || index >= num_classes()) throw std::invalid_argument("powerset class out of range");
    return classes_[std::size_t(index)];
  }

 private:
  int speakers_;
  std::vector<SpeakerSet> classes_;
};

inline PowersetSpace enumerate_classes(int max_speakers) { return PowersetSpace(max_speakers); }

/// Frame-major posterior matrix over powerset classes.
struct PowersetPosteriors {
  std::size_t frames = 0;
  int classes = 0;
  std::vector<float> values;

  float at(std::size_t t, int c) const { return values[t * std::size_t(classes) + std::size_t(c)]; }
};

/// Argmax class per frame; ties go to the lower class index.
inline std::vector<int> argmax_classes(const PowersetPosteriors& post) {
  std::vector<int> out(post.frames, 0);
  for (std::size_t t = 0; t < post.frames; ++t) {
    int best = 0;
    for (int c = 1; c < post.classes; ++c) {
      if (post.at(t, c) > post.at(t, best)) best = c;
    }
    out[t] = best;
  }
  return out;
}

/// Per-speaker binary activity [S][frames] from argmax decoding.
inline std::vector<std::vector<std::uint8_t>> decode_activity(const PowersetPosteriors& post,
                                                              const PowersetSpace& space) {
  if (post.classes != space.num_classes()) throw std::invalid_argument("posterior width does not match powerset space");
  std::vector<std::vector<std::uint8_t>> act(std::size_t(space.max_speakers()),
                                             std::vector<std::uint8_t>(post.frames, 0));
  auto cls = argmax_classes(post);
  for (std::size_t t = 0; t < post.frames; ++t) {
    for (int s : space.decode(cls[t])) act[std::size_t(s)][t] = 1;
  }
  return act;
}

inline std::string local_speaker_name(int s) { return "spk" + std::to_string(s); }

/// Argmax-decodes posteriors and merges consecutive active frames into intervals.
/// Speakers that are never active are omitted.
inline ActivityTrack posteriors_to_activity(const PowersetPosteriors& post, const PowersetSpace& space,
                                            double frame_rate) {
  auto act = decode_activity(post, space);
  std::vector<std::string> names;
  for (int s = 0; s < space.max_speakers(); ++s) names.push_back(local_speaker_name(s));
  auto track = track_from_frames(names, act, frame_rate);
  ActivityTrack pruned;
  pruned.duration = track.duration;
  for (std::size_t s = 0; s < track.size(); ++s) {
    if (track.intervals[s].empty()) continue;
    pruned.speakers.push_back(track.speakers[s]);
    pruned.intervals.push_back(track.intervals[s]);
  }
  return pruned;
}

}  // namespace spatial_diar
