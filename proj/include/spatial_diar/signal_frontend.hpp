#pragma once

#include <cmath>
#include <complex>
#include <cstdint>
#include <cstring>
#include <numbers>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "spatial_diar/audio_io.hpp"
#include "spatial_diar/errors.hpp"
#include "spatial_diar/fft.hpp"

namespace spatial_diar {

/// Complex STFT of every channel: frames[c][t * bins + k].
struct SpectrogramSet {
  std::vector<std::vector<std::complex<double>>> frames;
  std::size_t num_frames = 0;
  std::size_t bins = 0;
  int frame_len = 0;
  int hop = 0;
  int sample_rate = 0;

  std::size_t channels() const { return frames.size(); }
  const std::complex<double>& at(std::size_t c, std::size_t t, std::size_t k) const {
    return frames[c][t * bins + k];
  }
  double frame_rate() const { return double(sample_rate) / hop; }
};

/// Number of analysis frames for n samples: zero when shorter than one frame, otherwise
/// ceil(n / hop) with the tail zero-padded.
inline std::size_t stft_frame_count(std::size_t n, int frame_len, int hop) {
  if (n < std::size_t(frame_len)) return 0;
  return (n + std::size_t(hop) - 1) / std::size_t(hop);
}

/// Periodic Hann window.
inline std::vector<double> hann_window(int n) {
  std::vector<double> w(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) w[std::size_t(i)] = 0.5 - 0.5 * std::cos(2 * std::numbers::pi * i / n);
  return w;
}

inline SpectrogramSet stft(const MultiChannelAudio& audio, int frame_len, int hop) {
  if (!is_power_of_two(std::size_t(frame_len))) throw std::invalid_argument("frame_len must be a power of two");
  if (hop <= 0 || hop > frame_len) throw std::invalid_argument("hop must be in (0, frame_len]");
  audio.validate();
  SpectrogramSet spec;
  spec.frame_len = frame_len;
  spec.hop = hop;
  spec.sample_rate = audio.sample_rate;
  spec.bins = std::size_t(frame_len / 2 + 1);
  spec.num_frames = stft_frame_count(audio.length(), frame_len, hop);
  const auto window = hann_window(frame_len);
  std::vector<std::complex<double>> buf(static_cast<std::size_t>(frame_len));
  for (const auto& ch : audio.samples) {
    std::vector<std::complex<double>> out(spec.num_frames * spec.bins);
    for (std::size_t t = 0; t < spec.num_frames; ++t) {
      const std::size_t start = t * std::size_t(hop);
      for (int i = 0; i < frame_len; ++i) {
        std::size_t idx = start + std::size_t(i);
        double v = idx < ch.size() ? double(ch[idx]) : 0.0;
        buf[std::size_t(i)] = {v * window[std::size_t(i)], 0.0};
      }
      fft_inplace(buf);
      for (std::size_t k = 0; k < spec.bins; ++k) out[t * spec.bins + k] = buf[k];
    }
    spec.frames.push_back(std::move(out));
  }
  return spec;
}

using MicPair = std::pair<int, int>;

inline std::vector<MicPair> nonredundant_pairs(int channels) {
  if (channels < 1) throw std::invalid_argument("channel count must be at least 1");
  std::vector<MicPair> pairs;
  for (int i = 0; i < channels; ++i) {
    for (int j = i + 1; j < channels; ++j) pairs.emplace_back(i, j);
  }
  return pairs;
}

enum class StreamKind : std::uint8_t { Magnitude, CosIpd, SinIpd };

/// Row-major time x frequency real matrix.
struct FeatureMatrix {
  std::size_t frames = 0;
  std::size_t bins = 0;
  std::vector<float> values;

  float& at(std::size_t t, std::size_t k) { return values[t * bins + k]; }
  float at(std::size_t t, std::size_t k) const { return values[t * bins + k]; }
};

/// Reference-channel magnitude plus sin/cos IPD streams for each microphone pair.
/// Layout: stream 0 is magnitude, then (cos, sin) for each pair in pair order.
struct FeatureStreams {
  std::vector<FeatureMatrix> streams;
  std::vector<StreamKind> kinds;
  std::vector<MicPair> pair_of;  ///< (-1, -1) for the magnitude stream
  double frame_rate = 0.0;

  std::size_t size() const { return streams.size(); }
  std::size_t frames() const { return streams.empty() ? 0 : streams.front().frames; }
  std::size_t bins() const { return streams.empty() ? 0 : streams.front().bins; }

  static std::string label(StreamKind kind, MicPair pair) {
    switch (kind) {
      case StreamKind::Magnitude:
        return "magnitude";
      case StreamKind::CosIpd:
        return "cos_ipd(" + std::to_string(pair.first) + "," + std::to_string(pair.second) + ")";
      case StreamKind::SinIpd:
        return "sin_ipd(" + std::to_string(pair.first) + "," + std::to_string(pair.second) + ")";
    }
    return "?";
  }
  std::string label(std::size_t stream) const { return label(kinds[stream], pair_of[stream]); }
};

inline FeatureStreams ipd_features(const SpectrogramSet& spec, const std::vector<MicPair>& pairs, int ref) {
  if (ref < 0 || std::size_t(ref) >= spec.channels()) throw std::invalid_argument("reference channel out of range");
  for (const auto& [i, j] : pairs) {
    if (i < 0 || j < 0 || std::size_t(i) >= spec.channels() || std::size_t(j) >= spec.channels() || i == j) {
      throw std::invalid_argument("invalid microphone pair");
    }
  }
  const std::size_t T = spec.num_frames, K = spec.bins;
  FeatureStreams out;
  out.frame_rate = spec.frame_rate();
  auto blank = [&] { return FeatureMatrix{T, K, std::vector<float>(T * K)}; };

  FeatureMatrix mag = blank();
  for (std::size_t n = 0; n < T * K; ++n) mag.values[n] = float(std::abs(spec.frames[std::size_t(ref)][n]));
  out.streams.push_back(std::move(mag));
  out.kinds.push_back(StreamKind::Magnitude);
  out.pair_of.emplace_back(-1, -1);

  for (const auto& pair : pairs) {
    FeatureMatrix c = blank(), s = blank();
    const auto& a = spec.frames[std::size_t(pair.first)];
    const auto& b = spec.frames[std::size_t(pair.second)];
    for (std::size_t n = 0; n < T * K; ++n) {
      // arg(0) == 0, so two silent bins give a phase difference of exactly 0
      double d = std::arg(a[n]) - std::arg(b[n]);
      c.values[n] = float(std::cos(d));
      s.values[n] = float(std::sin(d));
    }
    out.streams.push_back(std::move(c));
    out.kinds.push_back(StreamKind::CosIpd);
    out.pair_of.push_back(pair);
    out.streams.push_back(std::move(s));
    out.kinds.push_back(StreamKind::SinIpd);
    out.pair_of.push_back(pair);
  }
  return out;
}

/// Convenience: STFT plus all-pairs IPD features with channel 0 as reference.
inline FeatureStreams extract_features(const MultiChannelAudio& audio, int frame_len, int hop) {
  auto spec = stft(audio, frame_len, hop);
  return ipd_features(spec, nonredundant_pairs(int(audio.channels())), 0);
}

// ---------------------------------------------------------------------------
// Feature dump
//
//   bytes 0-3   magic "SDFT"
//   u32         version (1)
//   u32         stream count S
//   u32         frames T
//   u32         bins K
//   f64         frame rate (Hz)
//   S times:    u32 label length, label bytes (UTF-8, e.g. "cos_ipd(0,1)")
//   S*T*K f32   values, stream-major then row-major (time, frequency)
// All integers and floats little-endian.

inline std::string encode_feature_dump(const FeatureStreams& fs) {
  std::string out = "SDFT";
  detail::put_u32(out, 1);
  detail::put_u32(out, std::uint32_t(fs.size()));
  detail::put_u32(out, std::uint32_t(fs.frames()));
  detail::put_u32(out, std::uint32_t(fs.bins()));
  std::uint64_t rate_bits;
  std::memcpy(&rate_bits, &fs.frame_rate, 8);
  for (int i = 0; i < 8; ++i) out.push_back(char((rate_bits >> (8 * i)) & 0xff));
  for (std::size_t s = 0; s < fs.size(); ++s) {
    auto name = fs.label(s);
    detail::put_u32(out, std::uint32_t(name.size()));
    out += name;
  }
  for (const auto& m : fs.streams) {
    for (float v : m.values) {
      std::uint32_t u;
      std::memcpy(&u, &v, 4);
      detail::put_u32(out, u);
    }
  }
  return out;
}

inline FeatureStreams decode_feature_dump(std::string_view bytes) {
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  std::size_t pos = 0;
  auto need = [&](std::size_t n) {
    if (pos + n > bytes.size()) throw FormatError("truncated feature dump");
  };
  auto u32 = [&] {
    need(4);
    auto v = detail::read_u32(p + pos);
    pos += 4;
    return v;
  };
  need(4);
  if (std::memcmp(p, "SDFT", 4) != 0) throw FormatError("bad feature dump magic");
  pos = 4;
  if (u32() != 1) throw FormatError("unsupported feature dump version");
  const std::uint32_t S = u32(), T = u32(), K = u32();
  need(8);
  std::uint64_t rate_bits = 0;
  for (int i = 0; i < 8; ++i) rate_bits |= std::uint64_t(p[pos + std::size_t(i)]) << (8 * i);
  pos += 8;
  FeatureStreams fs;
  std::memcpy(&fs.frame_rate, &rate_bits, 8);
  for (std::uint32_t s = 0; s < S; ++s) {
    auto len = u32();
    need(len);
    std::string name(bytes.substr(pos, len));
    pos += len;
    if (name == "magnitude") {
      fs.kinds.push_back(StreamKind::Magnitude);
      fs.pair_of.emplace_back(-1, -1);
    } else {
      int i = -1, j = -1;
      bool is_cos = name.rfind("cos_ipd(", 0) == 0;
      if (!is_cos && name.rfind("sin_ipd(", 0) != 0) throw FormatError("unknown stream label " + name);
      if (std::sscanf(name.c_str() + 8, "%d,%d", &i, &j) != 2) throw FormatError("bad stream label " + name);
      fs.kinds.push_back(is_cos ? StreamKind::CosIpd : StreamKind::SinIpd);
      fs.pair_of.emplace_back(i, j);
    }
  }
  for (std::uint32_t s = 0; s < S; ++s) {
    FeatureMatrix m{T, K, std::vector<float>(std::size_t(T) * K)};
    for (auto& v : m.values) {
      auto u = u32();
      std::memcpy(&v, &u, 4);
    }
    fs.streams.push_back(std::move(m));
  }
  return fs;
}

}  // namespace spatial_diar
