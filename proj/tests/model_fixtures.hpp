#pragma once

#include <random>
#include <string>

#include "spatial_diar/models.hpp"
#include "spatial_diar/sim.hpp"

namespace spatial_diar::testing {

inline ModelConfig toy_model_config(Conditioning cond = Conditioning::None, std::uint64_t seed = 7) {
  ModelConfig c;
  c.conditioning = cond;
  c.max_speakers = 3;
  c.enc_dim = 8;
  c.spatial_dim = 8;
  c.stub_layers = 2;
  c.spatial_layers = 1;
  c.conformer_blocks = 1;
  c.spatial_blocks = 1;
  c.heads = 2;
  c.conv_kernel = 3;
  c.ff_multiplier = 2;
  c.frame_len = 16;
  c.hop = 8;
  c.seed = seed;
  return c;
}

/// Random network input: log-magnitude-like stream 0 and unit-circle IPD pairs.
template <typename T>
ModelInput<T> random_input(std::size_t frames, std::size_t bins, std::size_t pairs, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> mag(0.0, 3.0), ang(-3.14159, 3.14159);
  ModelInput<T> in;
  nn::Matrix<T> m(frames, bins);
  for (auto& v : m.data) v = T(mag(rng));
  in.streams.push_back(m);
  for (std::size_t p = 0; p < pairs; ++p) {
    nn::Matrix<T> c(frames, bins), s(frames, bins);
    for (std::size_t i = 0; i < c.data.size(); ++i) {
      const double a = ang(rng);
      c.data[i] = T(std::cos(a));
      s.data[i] = T(std::sin(a));
    }
    in.streams.push_back(c);
    in.streams.push_back(s);
  }
  return in;
}

/// Copies every parameter of src that also exists in dst (same name and shape).
template <typename T>
std::size_t copy_shared_params(const DiarizationModel<T>& src, DiarizationModel<T>& dst) {
  std::size_t n = 0;
  for (const auto& p : src.params().all()) {
    auto* q = dst.params().find(p.name);
    if (!q || q->var.rows() != p.var.rows() || q->var.cols() != p.var.cols()) continue;
    q->var.mutable_value().data = p.var.value().data;
    ++n;
  }
  return n;
}

}  // namespace spatial_diar::testing
