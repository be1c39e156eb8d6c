#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "spatial_diar/errors.hpp"

namespace spatial_diar {

using Point3 = std::array<double, 3>;

/// Synchronized multi-channel recording. samples[c][t] holds channel c at sample t.
struct MultiChannelAudio {
  std::vector<std::vector<float>> samples;
  int sample_rate = 16000;
  std::optional<std::vector<Point3>> mic_positions;

  std::size_t channels() const { return samples.size(); }
  std::size_t length() const { return samples.empty() ? 0 : samples.front().size(); }
  double duration() const { return sample_rate > 0 ? double(length()) / sample_rate : 0.0; }

  void validate() const {
    if (sample_rate <= 0) throw std::invalid_argument("sample_rate must be positive");
    for (const auto& ch : samples) {
      if (ch.size() != length()) throw std::invalid_argument("channels differ in length");
    }
    if (mic_positions && mic_positions->size() != channels()) {
      throw std::invalid_argument("mic_positions size does not match channel count");
    }
  }

  /// Returns a copy restricted to the given channels, in the given order.
  MultiChannelAudio subset(const std::vector<int>& channel_ids) const {
    MultiChannelAudio out;
    out.sample_rate = sample_rate;
    std::vector<Point3> pos;
    for (int c : channel_ids) {
      if (c < 0 || std::size_t(c) >= channels()) throw std::invalid_argument("channel index out of range");
      out.samples.push_back(samples[c]);
      if (mic_positions) pos.push_back((*mic_positions)[c]);
    }
    if (mic_positions) out.mic_positions = std::move(pos);
    return out;
  }
};

struct Interval {
  double onset = 0.0;
  double offset = 0.0;

  double length() const { return offset - onset; }
  friend bool operator==(const Interval&, const Interval&) = default;
};

/// Per-speaker activity timeline. speakers[i] owns intervals[i], kept sorted and disjoint.
struct ActivityTrack {
  std::vector<std::string> speakers;
  std::vector<std::vector<Interval>> intervals;
  double duration = 0.0;

  std::size_t size() const { return speakers.size(); }

  int find(std::string_view name) const {
    for (std::size_t i = 0; i < speakers.size(); ++i) {
      if (speakers[i] == name) return int(i);
    }
    return -1;
  }

  int add_speaker(const std::string& name) {
    int idx = find(name);
    if (idx >= 0) return idx;
    speakers.push_back(name);
    intervals.emplace_back();
    return int(speakers.size() - 1);
  }

  /// Adds an interval and re-normalizes that speaker (sort + union of overlapping/touching pieces).
  void add(const std::string& name, double onset, double offset) {
    if (!(offset > onset)) return;
    int idx = add_speaker(name);
    intervals[idx].push_back({onset, offset});
    normalize_speaker(static_cast<std::size_t>(idx));
    duration = std::max(duration, offset);
  }

  void normalize_speaker(std::size_t idx) {
    auto& iv = intervals[idx];
    std::sort(iv.begin(), iv.end(), [](const Interval& a, const Interval& b) {
      return a.onset < b.onset || (a.onset == b.onset && a.offset < b.offset);
    });
    std::vector<Interval> merged;
    for (const auto& seg : iv) {
      if (!merged.empty() && seg.onset <= merged.back().offset) {
        merged.back().offset = std::max(merged.back().offset, seg.offset);
      } else {
        merged.push_back(seg);
      }
    }
    iv = std::move(merged);
  }

  double speech_time(std::size_t idx) const {
    double total = 0.0;
    for (const auto& seg : intervals[idx]) total += seg.length();
    return total;
  }

  bool active(std::size_t idx, double t) const {
    const auto& iv = intervals[idx];
    auto it = std::upper_bound(iv.begin(), iv.end(), t,
                               [](double v, const Interval& seg) { return v < seg.onset; });
    if (it == iv.begin()) return false;
    --it;
    return t >= it->onset && t < it->offset;
  }

  /// Binary activity of every speaker sampled at frame centers (f + 0.5) / frame_rate.
  std::vector<std::vector<std::uint8_t>> frames(double frame_rate, std::size_t num_frames) const {
    std::vector<std::vector<std::uint8_t>> out(size(), std::vector<std::uint8_t>(num_frames, 0));
    for (std::size_t s = 0; s < size(); ++s) {
      for (const auto& seg : intervals[s]) {
        // frames whose center lies in [onset, offset)
        auto first = long(std::ceil(seg.onset * frame_rate - 0.5 - 1e-9));
        auto last = long(std::ceil(seg.offset * frame_rate - 0.5 - 1e-9));
        first = std::max(first, 0L);
        last = std::min(last, long(num_frames));
        for (long f = first; f < last; ++f) out[s][std::size_t(f)] = 1;
      }
    }
    return out;
  }
};

/// Builds an ActivityTrack from per-frame binary activity (frame f spans [f, f+1) / frame_rate).
inline ActivityTrack track_from_frames(const std::vector<std::string>& names,
                                       const std::vector<std::vector<std::uint8_t>>& activity,
                                       double frame_rate, double offset_seconds = 0.0) {
  ActivityTrack track;
  std::size_t n = activity.empty() ? 0 : activity.front().size();
  track.duration = offset_seconds + double(n) / frame_rate;
  for (std::size_t s = 0; s < activity.size(); ++s) {
    const auto& a = activity[s];
    std::size_t f = 0;
    while (f < a.size()) {
      if (!a[f]) {
        ++f;
        continue;
      }
      std::size_t start = f;
      while (f < a.size() && a[f]) ++f;
      track.add(names[s], offset_seconds + double(start) / frame_rate,
                offset_seconds + double(f) / frame_rate);
    }
  }
  track.duration = offset_seconds + double(n) / frame_rate;
  return track;
}

// ---------------------------------------------------------------------------
// WAV

namespace detail {

inline std::uint32_t read_u32(const unsigned char* p) {
  return std::uint32_t(p[0]) | (std::uint32_t(p[1]) << 8) | (std::uint32_t(p[2]) << 16) |
         (std::uint32_t(p[3]) << 24);
}
inline std::uint16_t read_u16(const unsigned char* p) {
  return std::uint16_t(p[0] | (p[1] << 8));
}
inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(char((v >> (8 * i)) & 0xff));
}
inline void put_u16(std::string& out, std::uint16_t v) {
  out.push_back(char(v & 0xff));
  out.push_back(char((v >> 8) & 0xff));
}

}  // namespace detail

enum class WavEncoding { Pcm16, Float32 };

inline MultiChannelAudio decode_wav(std::string_view bytes) {
  using namespace detail;
  const auto* data = reinterpret_cast<const unsigned char*>(bytes.data());
  const std::size_t size = bytes.size();
  if (size < 12 || std::memcmp(data, "RIFF", 4) != 0 || std::memcmp(data + 8, "WAVE", 4) != 0) {
    throw FormatError("not a RIFF/WAVE file");
  }
  std::size_t pos = 12;
  bool have_fmt = false;
  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  while (pos + 8 <= size) {
    const unsigned char* chunk = data + pos;
    std::uint32_t chunk_size = read_u32(chunk + 4);
    pos += 8;
    if (std::memcmp(chunk, "fmt ", 4) == 0) {
      if (chunk_size < 16 || pos + chunk_size > size) throw FormatError("truncated fmt chunk");
      format = read_u16(data + pos);
      channels = read_u16(data + pos + 2);
      rate = read_u32(data + pos + 4);
      bits = read_u16(data + pos + 14);
      if (format == 0xFFFE) {
        if (chunk_size < 40) throw FormatError("truncated WAVE_FORMAT_EXTENSIBLE header");
        format = read_u16(data + pos + 24);
      }
      have_fmt = true;
    } else if (std::memcmp(chunk, "data", 4) == 0) {
      if (!have_fmt) throw FormatError("data chunk before fmt chunk");
      if (channels == 0) throw FormatError("zero channels");
      if (rate == 0) throw FormatError("zero sample rate");
      if (pos + chunk_size > size) throw FormatError("truncated data chunk");
      const bool pcm16 = format == 1 && bits == 16;
      const bool f32 = format == 3 && bits == 32;
      if (!pcm16 && !f32) throw FormatError("unsupported WAV encoding (need PCM16 or float32)");
      const std::size_t width = bits / 8;
      const std::size_t frame_bytes = width * channels;
      if (chunk_size % frame_bytes != 0) throw FormatError("data chunk not a whole number of frames");
      const std::size_t n = chunk_size / frame_bytes;
      MultiChannelAudio audio;
      audio.sample_rate = int(rate);
      audio.samples.assign(channels, std::vector<float>(n));
      const unsigned char* p = data + pos;
      for (std::size_t t = 0; t < n; ++t) {
        for (std::size_t c = 0; c < channels; ++c, p += width) {
          if (pcm16) {
            auto v = std::int16_t(read_u16(p));
            audio.samples[c][t] = float(v) / 32768.0f;
          } else {
            std::uint32_t u = read_u32(p);
            float v;
            std::memcpy(&v, &u, 4);
            audio.samples[c][t] = v;
          }
        }
      }
      return audio;
    }
    pos += chunk_size + (chunk_size & 1);
  }
  throw FormatError(have_fmt ? "missing data chunk" : "missing fmt chunk");
}

inline std::string encode_wav(const MultiChannelAudio& audio, WavEncoding enc = WavEncoding::Float32) {
  using namespace detail;
  audio.validate();
  if (audio.channels() == 0) throw std::invalid_argument("cannot write zero-channel audio");
  const std::uint16_t channels = std::uint16_t(audio.channels());
  const std::uint16_t bits = enc == WavEncoding::Float32 ? 32 : 16;
  const std::uint32_t data_bytes = std::uint32_t(audio.length() * channels * (bits / 8));
  std::string out;
  out.reserve(44 + data_bytes);
  out += "RIFF";
  put_u32(out, 36 + data_bytes);
  out += "WAVEfmt ";
  put_u32(out, 16);
  put_u16(out, enc == WavEncoding::Float32 ? 3 : 1);
  put_u16(out, channels);
  put_u32(out, std::uint32_t(audio.sample_rate));
  put_u32(out, std::uint32_t(audio.sample_rate) * channels * (bits / 8));
  put_u16(out, std::uint16_t(channels * (bits / 8)));
  put_u16(out, bits);
  out += "data";
  put_u32(out, data_bytes);
  for (std::size_t t = 0; t < audio.length(); ++t) {
    for (std::size_t c = 0; c < channels; ++c) {
      float v = audio.samples[c][t];
      if (enc == WavEncoding::Float32) {
        std::uint32_t u;
        std::memcpy(&u, &v, 4);
        put_u32(out, u);
      } else {
        float clipped = std::clamp(v, -1.0f, 1.0f);
        auto q = std::int16_t(std::lround(std::clamp(clipped * 32768.0f, -32768.0f, 32767.0f)));
        put_u16(out, std::uint16_t(q));
      }
    }
  }
  return out;
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

inline void write_file(const std::string& path, std::string_view bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out.write(bytes.data(), std::streamsize(bytes.size()));
  if (!out) throw std::runtime_error("write failed: " + path);
}

inline MultiChannelAudio read_wav(const std::string& path) { return decode_wav(read_file(path)); }

inline void write_wav(const std::string& path, const MultiChannelAudio& audio,
                      WavEncoding enc = WavEncoding::Float32) {
  write_file(path, encode_wav(audio, enc));
}

// ---------------------------------------------------------------------------
// RTTM

struct RttmRecording {
  std::string file_id;
  ActivityTrack track;
};

namespace detail {

inline double parse_number(const std::string& field, std::size_t line, const char* what) {
  try {
    std::size_t used = 0;
    double v = std::stod(field, &used);
    if (used != field.size() || !std::isfinite(v)) throw std::invalid_argument(field);
    return v;
  } catch (const std::exception&) {
    throw ParseError(std::string("non-numeric ") + what + " '" + field + "'", line);
  }
}

}  // namespace detail

/// Parses RTTM, grouping SPEAKER records by file id (order of first appearance).
inline std::vector<RttmRecording> parse_rttm_by_file(std::string_view text) {
  std::vector<RttmRecording> out;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::istringstream fields(line);
    std::vector<std::string> f{std::istream_iterator<std::string>(fields), {}};
    if (f.empty() || f[0][0] == '#' || f[0][0] == ';') continue;
    if (f[0] != "SPEAKER") continue;
    if (f.size() < 8) throw ParseError("SPEAKER record needs at least 8 fields", lineno);
    double onset = detail::parse_number(f[3], lineno, "onset");
    double dur = detail::parse_number(f[4], lineno, "duration");
    if (onset < 0 || dur < 0) throw ParseError("negative onset or duration", lineno);
    auto it = std::find_if(out.begin(), out.end(), [&](const RttmRecording& r) { return r.file_id == f[1]; });
    if (it == out.end()) {
      out.push_back({f[1], {}});
      it = std::prev(out.end());
    }
    it->track.add_speaker(f[7]);
    it->track.add(f[7], onset, onset + dur);
  }
  return out;
}

/// Parses all SPEAKER records of a stream into one track. duration, when given, extends the
/// track's duration beyond its last offset.
inline ActivityTrack parse_rttm(std::string_view text, std::optional<double> duration = std::nullopt) {
  ActivityTrack track;
  for (auto& rec : parse_rttm_by_file(text)) {
    for (std::size_t s = 0; s < rec.track.size(); ++s) {
      track.add_speaker(rec.track.speakers[s]);
      for (const auto& seg : rec.track.intervals[s]) track.add(rec.track.speakers[s], seg.onset, seg.offset);
    }
  }
  if (duration) track.duration = std::max(track.duration, *duration);
  return track;
}

/// Renders SPEAKER lines with millisecond resolution, grouped by speaker in track order so
/// parsing the output restores the speaker order. Onset and offset are rounded independently
/// so each endpoint errs by at most 0.5 ms.
inline std::string emit_rttm(const ActivityTrack& track, const std::string& file_id) {
  struct Row {
    long long on_ms, off_ms;
    std::size_t spk;
  };
  std::vector<Row> rows;
  for (std::size_t s = 0; s < track.size(); ++s) {
    for (const auto& seg : track.intervals[s]) {
      long long on = std::llround(seg.onset * 1000.0);
      long long off = std::llround(seg.offset * 1000.0);
      if (off > on) rows.push_back({on, off, s});
    }
  }
  auto ms = [](long long v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%lld.%03lld", v / 1000, v % 1000);
    return std::string(buf);
  };
  std::string out;
  for (const auto& r : rows) {
    out += "SPEAKER " + file_id + " 1 " + ms(r.on_ms) + " " + ms(r.off_ms - r.on_ms) + " <NA> <NA> " +
           track.speakers[r.spk] + " <NA> <NA>\n";
  }
  return out;
}

// ---------------------------------------------------------------------------
// Channel selection

/// Greedy max-min-distance subset: seed with the farthest pair, then repeatedly add the
/// microphone whose minimum distance to the chosen set is largest. Ties go to the lowest
/// index. The result is returned in ascending index order.
inline std::vector<int> select_channels(const std::vector<Point3>& mic_positions, std::size_t k) {
  const std::size_t n = mic_positions.size();
  if (k > n) throw std::invalid_argument("requested more channels than available");
  for (const auto& p : mic_positions) {
    for (double v : p) {
      if (!std::isfinite(v)) throw std::invalid_argument("non-finite microphone position");
    }
  }
  if (k == 0) return {};
  if (k == n) {
    std::vector<int> all(n);
    for (std::size_t i = 0; i < n; ++i) all[i] = int(i);
    return all;
  }
  auto dist = [&](std::size_t a, std::size_t b) {
    double s = 0;
    for (int d = 0; d < 3; ++d) s += (mic_positions[a][d] - mic_positions[b][d]) * (mic_positions[a][d] - mic_positions[b][d]);
    return std::sqrt(s);
  };
  std::vector<int> chosen;
  if (k == 1) return {0};
  double best = -1;
  int bi = 0, bj = 1;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      double d = dist(i, j);
      if (d > best) {
        best = d;
        bi = int(i);
        bj = int(j);
      }
    }
  }
  chosen = {bi, bj};
  std::vector<bool> used(n, false);
  used[bi] = used[bj] = true;
  while (chosen.size() < k) {
    double best_min = -1;
    int pick = -1;
    for (std::size_t c = 0; c < n; ++c) {
      if (used[c]) continue;
      double m = std::numeric_limits<double>::infinity();
      for (int s : chosen) m = std::min(m, dist(c, std::size_t(s)));
      if (m > best_min) {
        best_min = m;
        pick = int(c);
      }
    }
    used[pick] = true;
    chosen.push_back(pick);
  }
  std::sort(chosen.begin(), chosen.end());
  return chosen;
}

}  // namespace spatial_diar
