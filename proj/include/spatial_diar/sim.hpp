#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <map>
#include <numbers>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "spatial_diar/audio_io.hpp"
#include "spatial_diar/config.hpp"
#include "spatial_diar/fft.hpp"

namespace spatial_diar {

inline constexpr double kSpeedOfSound = 343.0;

enum class SourceKind { ToneBank, FilteredNoise, Mixed };
enum class ArrayShape { Square, Circular, Linear, Custom };

template <>
struct EnumNames<SourceKind> {
  static constexpr std::pair<SourceKind, std::string_view> names[] = {
      {SourceKind::ToneBank, "tone_bank"},
      {SourceKind::FilteredNoise, "filtered_noise"},
      {SourceKind::Mixed, "mixed"},
  };
};

template <>
struct EnumNames<ArrayShape> {
  static constexpr std::pair<ArrayShape, std::string_view> names[] = {
      {ArrayShape::Square, "square"},
      {ArrayShape::Circular, "circular"},
      {ArrayShape::Linear, "linear"},
      {ArrayShape::Custom, "custom"},
  };
};

struct SimConfig {
  int num_speakers = 2;
  ArrayShape array = ArrayShape::Square;
  int num_mics = 4;
  double mic_spacing = 0.1;         ///< metres between adjacent microphones
  std::vector<double> mic_positions;  ///< flattened x,y,z triples for the custom array
  std::vector<double> azimuths;       ///< degrees; empty spreads speakers evenly
  double utt_min = 1.0;
  double utt_max = 3.0;
  double overlap_ratio = 0.2;  ///< overlapped time / speech time
  double triple_fraction = 0.0;  ///< 3+-speaker time / total duration
  double pause_prob = 0.2;
  SourceKind source = SourceKind::Mixed;
  double noise_db = -30.0;  ///< sensor noise power relative to the mixture, in dB
  double gain_spread_db = 6.0;  ///< per-utterance level varies uniformly over +-spread/2
  bool echo = false;
  double echo_delay = 0.03;
  double echo_gain = 0.3;
  bool spectrally_identical = false;
  double duration = 30.0;
  int sample_rate = 16000;
  int num_files = 1;
  std::uint64_t seed = 1;

  template <class B>
  void bind(B& b) {
    b("num_speakers", num_speakers);
    b("array", array);
    b("num_mics", num_mics);
    b("mic_spacing", mic_spacing);
    b("mic_positions", mic_positions);
    b("azimuths", azimuths);
    b("utt_min", utt_min);
    b("utt_max", utt_max);
    b("overlap_ratio", overlap_ratio);
    b("triple_fraction", triple_fraction);
    b("pause_prob", pause_prob);
    b("source", source);
    b("noise_db", noise_db);
    b("gain_spread_db", gain_spread_db);
    b("echo", echo);
    b("echo_delay", echo_delay);
    b("echo_gain", echo_gain);
    b("spectrally_identical", spectrally_identical);
    b("duration", duration);
    b("sample_rate", sample_rate);
    b("num_files", num_files);
    b("seed", seed);
  }

  void validate() const {
    if (num_speakers < 1) throw std::invalid_argument("sim: at least one speaker is required");
    if (!(duration > 0)) throw std::invalid_argument("sim: duration must be positive");
    if (sample_rate <= 0) throw std::invalid_argument("sim: sample rate must be positive");
    if (!(utt_min > 0) || utt_max < utt_min) throw std::invalid_argument("sim: invalid utterance length range");
    if (overlap_ratio < 0 || overlap_ratio > 1) throw std::invalid_argument("sim: overlap ratio must lie in [0, 1]");
    if (triple_fraction < 0 || (triple_fraction > 0 && num_speakers < 3)) {
      throw std::invalid_argument("sim: 3-speaker overlap needs at least three speakers");
    }
    if (!azimuths.empty() && int(azimuths.size()) != num_speakers) {
      throw std::invalid_argument("sim: one azimuth per speaker is required");
    }
    if (num_files < 1) throw std::invalid_argument("sim: num_files must be positive");
  }
};

struct SimResult {
  MultiChannelAudio audio;
  ActivityTrack track;
};

inline std::vector<Point3> mic_geometry(const SimConfig& cfg) {
  std::vector<Point3> mics;
  const double s = cfg.mic_spacing;
  const int m = cfg.num_mics;
  switch (cfg.array) {
    case ArrayShape::Square:
      if (m != 4) throw std::invalid_argument("sim: the square array has exactly four microphones");
      mics = {{-s / 2, -s / 2, 0}, {s / 2, -s / 2, 0}, {s / 2, s / 2, 0}, {-s / 2, s / 2, 0}};
      break;
    case ArrayShape::Circular: {
      if (m < 2) throw std::invalid_argument("sim: the circular array needs at least two microphones");
      const double radius = s / (2 * std::sin(std::numbers::pi / m));
      for (int i = 0; i < m; ++i) {
        const double a = 2 * std::numbers::pi * i / m;
        mics.push_back({radius * std::cos(a), radius * std::sin(a), 0});
      }
      break;
    }
    case ArrayShape::Linear:
      if (m < 1) throw std::invalid_argument("sim: the linear array needs at least one microphone");
      for (int i = 0; i < m; ++i) mics.push_back({(i - (m - 1) / 2.0) * s, 0, 0});
      break;
    case ArrayShape::Custom:
      if (cfg.mic_positions.empty() || cfg.mic_positions.size() % 3 != 0) {
        throw std::invalid_argument("sim: custom mic positions must be x,y,z triples");
      }
      for (std::size_t i = 0; i < cfg.mic_positions.size(); i += 3) {
        mics.push_back({cfg.mic_positions[i], cfg.mic_positions[i + 1], cfg.mic_positions[i + 2]});
      }
      break;
  }
  for (std::size_t i = 0; i < mics.size(); ++i) {
    for (std::size_t j = i + 1; j < mics.size(); ++j) {
      const double dx = mics[i][0] - mics[j][0], dy = mics[i][1] - mics[j][1], dz = mics[i][2] - mics[j][2];
      if (dx * dx + dy * dy + dz * dz < 1e-12) throw std::invalid_argument("sim: coincident microphone positions");
    }
  }
  return mics;
}

inline std::vector<double> speaker_azimuths(const SimConfig& cfg) {
  if (!cfg.azimuths.empty()) return cfg.azimuths;
  std::vector<double> az;
  for (int i = 0; i < cfg.num_speakers; ++i) az.push_back(30.0 + 360.0 * i / cfg.num_speakers);
  return az;
}

/// Far-field arrival time at each microphone relative to the array origin, in seconds, for
/// a plane wave from the given azimuth (degrees, in the horizontal plane).
inline std::vector<double> far_field_delays(const std::vector<Point3>& mics, double azimuth_deg) {
  const double a = azimuth_deg * std::numbers::pi / 180.0;
  const double ux = std::cos(a), uy = std::sin(a);
  std::vector<double> out;
  for (const auto& p : mics) out.push_back(-(p[0] * ux + p[1] * uy) / kSpeedOfSound);
  return out;
}

struct Utterance {
  int speaker;
  double onset;
  double length;
  double offset() const { return onset + length; }
};

namespace sim_detail {

inline std::string speaker_name(int s) { return "S" + std::to_string(s + 1); }

/// Overlapped / speech time of a set of utterances, by exact interval sweep.
inline double overlap_over_speech(const std::vector<Utterance>& utts, double duration) {
  std::vector<std::pair<double, int>> events;
  for (const auto& u : utts) {
    const double on = std::min(u.onset, duration), off = std::min(u.offset(), duration);
    if (off <= on) continue;
    events.push_back({on, 1});
    events.push_back({off, -1});
  }
  std::sort(events.begin(), events.end());
  double speech = 0, overlap = 0, prev = 0;
  int active = 0;
  for (const auto& [t, d] : events) {
    if (active >= 1) speech += t - prev;
    if (active >= 2) overlap += t - prev;
    active += d;
    prev = t;
  }
  return speech > 0 ? overlap / speech : 0.0;
}

struct Plan {
  std::vector<int> speakers;
  std::vector<double> lengths;
  std::vector<double> pauses;  ///< > 0: silence inserted before utterance k+1 instead of overlap
};

/// Lays the planned utterances on the timeline with overlap scale phi.
inline std::vector<Utterance> layout(const Plan& plan, double phi, double duration) {
  constexpr double margin = 0.05;
  std::vector<Utterance> out;
  double start = 0.0, prev_overlap = 0.0;
  for (std::size_t k = 0; k < plan.lengths.size() && start < duration; ++k) {
    out.push_back({plan.speakers[k], start, plan.lengths[k]});
    if (k + 1 == plan.lengths.size()) break;
    const double len = plan.lengths[k], next = plan.lengths[k + 1];
    double ov = 0.0;
    if (plan.pauses[k] > 0) {
      ov = -plan.pauses[k];
      prev_overlap = 0.0;
    } else {
      ov = phi * std::min(len, next);
      ov = std::min(ov, std::min(len - prev_overlap, next) - margin);
      ov = std::max(ov, 0.0);
      prev_overlap = ov;
    }
    start += len - ov;
  }
  return out;
}

/// Real FFT-domain fractional delay of a padded buffer by delay_samples (may be negative).
inline std::vector<double> delayed(const std::vector<std::complex<double>>& spectrum, double delay_samples) {
  const std::size_t n = spectrum.size();
  std::vector<std::complex<double>> buf(spectrum);
  for (std::size_t k = 0; k < n; ++k) {
    double f = k <= n / 2 ? double(k) : double(k) - double(n);
    if (k == n / 2) f = 0.0;  // keep the Nyquist bin real
    const double ph = -2.0 * std::numbers::pi * f * delay_samples / double(n);
    buf[k] *= std::complex<double>(std::cos(ph), std::sin(ph));
  }
  fft_inplace(buf, true);
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = buf[i].real() / double(n);
  return out;
}

/// Per-speaker spectral character.
struct Voice {
  double f0;
  std::vector<double> formants;
  std::vector<double> bandwidths;

  double envelope(double f) const {
    double e = 0.05;
    for (std::size_t i = 0; i < formants.size(); ++i) {
      const double z = (f - formants[i]) / bandwidths[i];
      e += std::exp(-0.5 * z * z) / double(i + 1);
    }
    return e;
  }
};

inline Voice make_voice(std::mt19937_64& rng, int sample_rate) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double scale = std::min(1.0, sample_rate / 16000.0);
  Voice v;
  v.f0 = 100 + 120 * u(rng);
  v.formants = {scale * (300 + 600 * u(rng)), scale * (900 + 1100 * u(rng)), scale * (2000 + 1500 * u(rng))};
  v.bandwidths = {scale * (120 + 120 * u(rng)), scale * (150 + 150 * u(rng)), scale * (200 + 200 * u(rng))};
  return v;
}

/// One utterance of source signal: shaped noise and/or a harmonic tone bank with a syllabic
/// amplitude envelope and short fades.
inline std::vector<double> render_source(const Voice& voice, SourceKind kind, std::size_t n, int sample_rate,
                                         std::mt19937_64& rng) {
  std::vector<double> out(n, 0.0);
  const double fs = sample_rate;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  if (kind != SourceKind::ToneBank) {
    const std::size_t m = next_power_of_two(n);
    std::normal_distribution<double> g(0.0, 1.0);
    std::vector<std::complex<double>> buf(m);
    for (std::size_t i = 0; i < n; ++i) buf[i] = g(rng);
    fft_inplace(buf);
    for (std::size_t k = 0; k < m; ++k) {
      const double f = (k <= m / 2 ? double(k) : double(m - k)) * fs / double(m);
      buf[k] *= voice.envelope(f);
    }
    fft_inplace(buf, true);
    for (std::size_t i = 0; i < n; ++i) out[i] += buf[i].real() / double(m);
  }
  if (kind != SourceKind::FilteredNoise) {
    const double vib_rate = 4 + 2 * u(rng), vib_depth = 0.03 * u(rng);
    const double start_phase = 2 * std::numbers::pi * u(rng);
    std::vector<double> phases;
    for (int h = 1; h * voice.f0 < 0.45 * fs; ++h) phases.push_back(2 * std::numbers::pi * u(rng));
    double base_phase = start_phase;
    double tone_energy = 0;
    std::vector<double> tone(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      const double t = double(i) / fs;
      const double f0 = voice.f0 * (1 + vib_depth * std::sin(2 * std::numbers::pi * vib_rate * t));
      base_phase += 2 * std::numbers::pi * f0 / fs;
      double s = 0;
      for (std::size_t h = 0; h < phases.size(); ++h) {
        const double fh = double(h + 1) * f0;
        if (fh >= 0.45 * fs) break;
        s += voice.envelope(fh) * std::sin(double(h + 1) * base_phase + phases[h]);
      }
      tone[i] = s;
      tone_energy += s * s;
    }
    double noise_energy = 0;
    for (double v : out) noise_energy += v * v;
    const double mix = (kind == SourceKind::Mixed && tone_energy > 0 && noise_energy > 0)
                           ? std::sqrt(noise_energy / tone_energy)
                           : 1.0;
    for (std::size_t i = 0; i < n; ++i) out[i] += mix * tone[i];
  }
  // normalize to unit RMS, then syllabic modulation and 10 ms raised-cosine fades
  double energy = 0;
  for (double v : out) energy += v * v;
  const double rms = std::sqrt(energy / double(std::max<std::size_t>(n, 1)));
  const double syl_rate = 3 + 2 * u(rng), syl_phase = 2 * std::numbers::pi * u(rng);
  const std::size_t fade = std::min<std::size_t>(n / 2, std::size_t(0.01 * fs));
  for (std::size_t i = 0; i < n; ++i) {
    const double t = double(i) / fs;
    double a = 0.65 + 0.35 * std::sin(2 * std::numbers::pi * syl_rate * t + syl_phase);
    if (i < fade) a *= 0.5 - 0.5 * std::cos(std::numbers::pi * double(i) / double(fade));
    if (n - 1 - i < fade) a *= 0.5 - 0.5 * std::cos(std::numbers::pi * double(n - 1 - i) / double(fade));
    out[i] = rms > 0 ? out[i] / rms * a : 0.0;
  }
  return out;
}

/// Places interjections of a third speaker inside existing two-speaker overlaps until the
/// 3+-speaker time reaches target seconds.
inline void add_triple_overlaps(std::vector<Utterance>& utts, int num_speakers, double target, double duration,
                                std::mt19937_64& rng) {
  if (target <= 0) return;
  std::vector<Utterance> base = utts;
  std::sort(base.begin(), base.end(), [](const Utterance& a, const Utterance& b) { return a.onset < b.onset; });
  struct Region {
    double on, off;
    int a, b;
  };
  std::vector<Region> regions;
  for (std::size_t k = 0; k + 1 < base.size(); ++k) {
    const double on = base[k + 1].onset, off = std::min({base[k].offset(), base[k + 1].offset(), duration});
    if (off - on > 0.2) regions.push_back({on, off, base[k].speaker, base[k + 1].speaker});
  }
  std::shuffle(regions.begin(), regions.end(), rng);
  double placed = 0;
  for (const auto& r : regions) {
    if (placed >= target - 1e-9) break;
    std::vector<int> others;
    for (int s = 0; s < num_speakers; ++s) {
      if (s != r.a && s != r.b) others.push_back(s);
    }
    if (others.empty()) break;
    const int who = others[rng() % others.size()];
    const double len = std::min(r.off - r.on - 0.1, target - placed);
    if (len <= 0.02) continue;
    const double on = r.on + 0.05;
    utts.push_back({who, on, len});
    placed += len;
  }
}

}  // namespace sim_detail

/// Generates one synthetic meeting: scheduled utterances rendered as far-field plane waves
/// at each microphone, plus sensor noise. The activity track is exact.
inline SimResult simulate(const SimConfig& cfg) {
  cfg.validate();
  using namespace sim_detail;
  const auto mics = mic_geometry(cfg);
  const auto az = speaker_azimuths(cfg);
  std::mt19937_64 plan_rng(cfg.seed * 0x9e3779b97f4a7c15ull + 1);
  std::mt19937_64 voice_rng(cfg.seed * 0x9e3779b97f4a7c15ull + 2);
  std::mt19937_64 source_rng(cfg.seed * 0x9e3779b97f4a7c15ull + 3);
  std::mt19937_64 noise_rng(cfg.seed * 0x9e3779b97f4a7c15ull + 4);
  std::uniform_real_distribution<double> u(0.0, 1.0);

  // schedule: alternate speakers, lengths uniform in [utt_min, utt_max]
  Plan plan;
  double budget = 0;
  int prev = -1;
  while (budget < 2 * cfg.duration + cfg.utt_max) {
    int s = 0;
    if (cfg.num_speakers > 1) {
      s = int(plan_rng() % std::uint64_t(cfg.num_speakers - 1));
      if (prev >= 0 && s >= prev) ++s;
      if (prev < 0) s = int(plan_rng() % std::uint64_t(cfg.num_speakers));
    }
    prev = s;
    plan.speakers.push_back(s);
    plan.lengths.push_back(cfg.utt_min + (cfg.utt_max - cfg.utt_min) * u(plan_rng));
    const bool pause = cfg.num_speakers == 1 || cfg.overlap_ratio == 0.0 || u(plan_rng) < cfg.pause_prob;
    plan.pauses.push_back(pause ? 0.1 + 0.6 * u(plan_rng) : 0.0);
    budget += plan.lengths.back();
  }
  double lo = 0.0, hi = 1.0;
  if (cfg.num_speakers > 1 && overlap_over_speech(layout(plan, hi, cfg.duration), cfg.duration) < cfg.overlap_ratio) {
    // pauses cap the reachable overlap; drop them when the target needs the room
    std::fill(plan.pauses.begin(), plan.pauses.end(), 0.0);
  }
  if (overlap_over_speech(layout(plan, hi, cfg.duration), cfg.duration) < cfg.overlap_ratio) lo = hi;
  for (int it = 0; it < 50 && lo < hi; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (overlap_over_speech(layout(plan, mid, cfg.duration), cfg.duration) < cfg.overlap_ratio) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  auto utts = layout(plan, cfg.overlap_ratio == 0.0 ? 0.0 : hi, cfg.duration);
  add_triple_overlaps(utts, cfg.num_speakers, cfg.triple_fraction * cfg.duration, cfg.duration, plan_rng);

  std::vector<Voice> voices;
  const Voice shared = make_voice(voice_rng, cfg.sample_rate);
  for (int s = 0; s < cfg.num_speakers; ++s) voices.push_back(cfg.spectrally_identical ? shared : make_voice(voice_rng, cfg.sample_rate));

  const auto fs = double(cfg.sample_rate);
  const auto total = std::size_t(std::llround(cfg.duration * fs));
  SimResult res;
  res.audio.sample_rate = cfg.sample_rate;
  res.audio.mic_positions = mics;
  res.audio.samples.assign(mics.size(), std::vector<float>(total, 0.0f));
  std::vector<std::vector<double>> mix(mics.size(), std::vector<double>(total, 0.0));
  for (int s = 0; s < cfg.num_speakers; ++s) res.track.add_speaker(speaker_name(s));
  res.track.duration = cfg.duration;

  double max_delay = 0;
  for (const auto& p : mics) max_delay = std::max(max_delay, std::sqrt(p[0] * p[0] + p[1] * p[1] + p[2] * p[2]) / kSpeedOfSound);
  const std::size_t pad = std::size_t(std::ceil(max_delay * fs)) + 16;

  for (const auto& utt : utts) {
    if (utt.onset >= cfg.duration) continue;
    const double offset = std::min(utt.offset(), cfg.duration);
    res.track.add(speaker_name(utt.speaker), utt.onset, offset);
    const auto first = std::size_t(std::llround(utt.onset * fs));
    const auto last = std::min(total, std::size_t(std::llround(offset * fs)));
    if (last <= first) continue;
    const std::size_t n = last - first;
    auto src = render_source(voices[std::size_t(utt.speaker)], cfg.source, n, cfg.sample_rate, source_rng);
    const double gain = std::pow(10.0, cfg.gain_spread_db * (u(source_rng) - 0.5) / 20.0);
    const std::size_t m = next_power_of_two(n + 2 * pad);
    std::vector<std::complex<double>> spectrum(m);
    for (std::size_t i = 0; i < n; ++i) spectrum[pad + i] = gain * src[i];
    fft_inplace(spectrum);
    const auto delays = far_field_delays(mics, az[std::size_t(utt.speaker)]);
    for (std::size_t c = 0; c < mics.size(); ++c) {
      auto y = delayed(spectrum, delays[c] * fs);
      // keep the rendered signal inside the utterance's own span so the track stays exact
      for (std::size_t i = 0; i < n; ++i) mix[c][first + i] += y[pad + i];
    }
  }
  if (cfg.echo) {
    const auto lag = std::size_t(std::llround(cfg.echo_delay * fs));
    for (auto& ch : mix) {
      for (std::size_t i = total; i-- > lag;) ch[i] += cfg.echo_gain * ch[i - lag];
    }
  }
  // sensor noise relative to the mixture power over active samples of channel 0
  double power = 0;
  std::size_t active = 0;
  for (double v : mix[0]) {
    if (v != 0.0) {
      power += v * v;
      ++active;
    }
  }
  power = active ? power / double(active) : 1.0;
  const double sigma = std::sqrt(power * std::pow(10.0, cfg.noise_db / 10.0));
  std::normal_distribution<double> g(0.0, sigma);
  for (auto& ch : mix) {
    for (auto& v : ch) v += g(noise_rng);
  }
  double peak = 0;
  for (const auto& ch : mix) {
    for (double v : ch) peak = std::max(peak, std::abs(v));
  }
  const double norm = peak > 0 ? 0.9 / peak : 1.0;
  for (std::size_t c = 0; c < mix.size(); ++c) {
    for (std::size_t i = 0; i < total; ++i) res.audio.samples[c][i] = float(mix[c][i] * norm);
  }
  return res;
}

/// Two speakers sharing one voice at distinct azimuths with heavy overlap.
inline SimResult spectrally_identical_pair(SimConfig cfg) {
  if (cfg.num_speakers != 2) throw std::invalid_argument("spectrally identical pair needs exactly two speakers");
  const auto az = speaker_azimuths(cfg);
  if (std::abs(std::remainder(az[0] - az[1], 360.0)) < 1e-9) {
    throw std::invalid_argument("spectrally identical pair needs distinct azimuths");
  }
  cfg.spectrally_identical = true;
  cfg.overlap_ratio = std::max(cfg.overlap_ratio, 0.7);
  return simulate(cfg);
}

/// Simulates file i of a corpus (seed offset by i).
inline SimResult simulate_file(SimConfig cfg, int index) {
  cfg.seed += std::uint64_t(index);
  return cfg.spectrally_identical ? spectrally_identical_pair(cfg) : simulate(cfg);
}

struct DatasetStats {
  double duration = 0;
  double speech_time = 0;   ///< time with >= 1 active speaker
  double overlap_time = 0;  ///< time with >= 2 active speakers
  std::map<int, double> time_by_count;  ///< wall-clock seconds per active-speaker count
  double triple_fraction = 0;  ///< >= 3 speakers, relative to duration
  double overlap_fraction_of_duration = 0;
  double overlap_fraction_of_speech = 0;
};

inline DatasetStats dataset_stats(const ActivityTrack& ref, double frame = 0.01) {
  DatasetStats st;
  const auto n = std::size_t(std::llround(ref.duration / frame));
  auto act = ref.frames(1.0 / frame, n);
  for (std::size_t t = 0; t < n; ++t) {
    int c = 0;
    for (const auto& a : act) c += a[t];
    st.time_by_count[c] += frame;
    if (c >= 1) st.speech_time += frame;
    if (c >= 2) st.overlap_time += frame;
    if (c >= 3) st.triple_fraction += frame;
  }
  st.duration = double(n) * frame;
  if (st.duration > 0) {
    st.triple_fraction /= st.duration;
    st.overlap_fraction_of_duration = st.overlap_time / st.duration;
  }
  st.overlap_fraction_of_speech = st.speech_time > 0 ? st.overlap_time / st.speech_time : 0.0;
  return st;
}

}  // namespace spatial_diar
