#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "spatial_diar/config.hpp"
#include "spatial_diar/nn/layers.hpp"
#include "spatial_diar/powerset.hpp"
#include "spatial_diar/signal_frontend.hpp"

namespace spatial_diar {

enum class Conditioning { None, SpatialEncoder, SpatialConformer, SpatialDiarization, OracleCount };
enum class ModelKind { Eend, SpatialDiarization };
enum class SpatialInputs { All, MagnitudeOnly };

template <>
struct EnumNames<Conditioning> {
  static constexpr std::pair<Conditioning, std::string_view> names[] = {
      {Conditioning::None, "none"},
      {Conditioning::SpatialEncoder, "spatial_encoder"},
      {Conditioning::SpatialConformer, "spatial_conformer"},
      {Conditioning::SpatialDiarization, "spatial_diarization"},
      {Conditioning::OracleCount, "oracle_count"},
  };
};

template <>
struct EnumNames<ModelKind> {
  static constexpr std::pair<ModelKind, std::string_view> names[] = {
      {ModelKind::Eend, "eend"},
      {ModelKind::SpatialDiarization, "spatial_diarization"},
  };
};

template <>
struct EnumNames<SpatialInputs> {
  static constexpr std::pair<SpatialInputs, std::string_view> names[] = {
      {SpatialInputs::All, "all"},
      {SpatialInputs::MagnitudeOnly, "magnitude_only"},
  };
};

/// Number of categories in the oracle speaker-count condition (0, 1, 2+).
inline constexpr std::size_t kCountCategories = 3;

struct ModelConfig {
  ModelKind kind = ModelKind::Eend;
  Conditioning conditioning = Conditioning::None;
  SpatialInputs spatial_inputs = SpatialInputs::All;
  int max_speakers = 4;
  int enc_dim = 64;
  int spatial_dim = 32;
  int stub_layers = 4;
  int spatial_layers = 2;
  int conformer_blocks = 2;
  int spatial_blocks = 2;
  int heads = 4;
  int conv_kernel = 9;
  int ff_multiplier = 4;
  int frame_len = 512;
  int hop = 320;
  std::uint64_t seed = 7;

  template <class B>
  void bind(B& b) {
    b("kind", kind);
    b("conditioning", conditioning);
    b("spatial_inputs", spatial_inputs);
    b("max_speakers", max_speakers);
    b("enc_dim", enc_dim);
    b("spatial_dim", spatial_dim);
    b("stub_layers", stub_layers);
    b("spatial_layers", spatial_layers);
    b("conformer_blocks", conformer_blocks);
    b("spatial_blocks", spatial_blocks);
    b("heads", heads);
    b("conv_kernel", conv_kernel);
    b("ff_multiplier", ff_multiplier);
    b("frame_len", frame_len);
    b("hop", hop);
    b("seed", seed);
  }

  /// Whether the configuration carries the spatial sub-network under "aux.".
  bool has_aux() const {
    return kind == ModelKind::SpatialDiarization ||
           (conditioning != Conditioning::None && conditioning != Conditioning::OracleCount);
  }

  std::size_t bins() const { return std::size_t(frame_len / 2 + 1); }

  void validate() const {
    auto positive = [](int v, const char* what) {
      if (v <= 0) throw ConfigError(std::string("model.") + what + " must be positive");
    };
    positive(max_speakers, "max_speakers");
    positive(enc_dim, "enc_dim");
    positive(spatial_dim, "spatial_dim");
    positive(spatial_layers, "spatial_layers");
    positive(spatial_blocks, "spatial_blocks");
    positive(conformer_blocks, "conformer_blocks");
    positive(heads, "heads");
    positive(ff_multiplier, "ff_multiplier");
    positive(hop, "hop");
    if (stub_layers < 2) throw ConfigError("model.stub_layers must be at least 2");
    if (conv_kernel <= 0 || conv_kernel % 2 == 0) throw ConfigError("model.conv_kernel must be a positive odd number");
    if (enc_dim % heads != 0 || spatial_dim % heads != 0) throw ConfigError("model.heads must divide enc_dim and spatial_dim");
    if (frame_len < 2 || (frame_len & (frame_len - 1)) != 0) throw ConfigError("model.frame_len must be a power of two");
    if (hop > frame_len) throw ConfigError("model.hop must not exceed model.frame_len");
    if (kind == ModelKind::SpatialDiarization && conditioning != Conditioning::None) {
      throw ConfigError("the standalone spatial diarization model takes no conditioning");
    }
  }
};

/// Network inputs for one segment. streams[0] is log(1 + magnitude) of the reference channel;
/// the remaining streams are IPD cos/sin maps. count_condition is T x 3 one-hot (oracle mode).
template <typename T>
struct ModelInput {
  std::vector<nn::Matrix<T>> streams;
  nn::Matrix<T> count_condition;

  std::size_t frames() const { return streams.empty() ? 0 : streams.front().rows; }
};

/// Converts extracted features into network inputs for frames [first, first + count); frames
/// past the end of the recording are zero.
template <typename T>
ModelInput<T> make_model_input(const FeatureStreams& fs, std::size_t first, std::size_t count) {
  ModelInput<T> in;
  for (std::size_t s = 0; s < fs.size(); ++s) {
    const auto& src = fs.streams[s];
    nn::Matrix<T> m(count, src.bins);
    const bool magnitude = fs.kinds[s] == StreamKind::Magnitude;
    for (std::size_t t = 0; t < count && first + t < src.frames; ++t) {
      for (std::size_t k = 0; k < src.bins; ++k) {
        const double v = src.at(first + t, k);
        m(t, k) = T(magnitude ? std::log1p(v) : v);
      }
    }
    in.streams.push_back(std::move(m));
  }
  return in;
}

/// T x 3 one-hot of min(active speakers, 2) per frame.
template <typename T>
nn::Matrix<T> count_one_hot(const std::vector<int>& counts) {
  nn::Matrix<T> m(counts.size(), kCountCategories);
  for (std::size_t t = 0; t < counts.size(); ++t) {
    m(t, std::size_t(std::min(std::max(counts[t], 0), int(kCountCategories) - 1))) = T(1);
  }
  return m;
}

enum class EmbeddingKind { Encoder, Conformer };

template <typename T>
struct SpatialEmbedding {
  nn::Var<T> values;
  EmbeddingKind kind;
};

/// Reference-channel encoder: layer 0 embeds the log-magnitude frame, later layers are
/// pre-norm transformer layers. Every layer output is kept for the weighted sum.
template <typename T>
struct EncoderStub {
  nn::Linear<T> embed;
  std::vector<nn::TransformerLayer<T>> layers;

  EncoderStub(nn::ParamStore<T>& store, const std::string& name, const ModelConfig& cfg, std::size_t bins, nn::Rng& rng)
      : embed(store, name + ".embed", bins, std::size_t(cfg.enc_dim), rng) {
    const auto d = std::size_t(cfg.enc_dim);
    for (int l = 1; l < cfg.stub_layers; ++l) {
      layers.emplace_back(store, name + ".layer" + std::to_string(l), d, cfg.heads, d * std::size_t(cfg.ff_multiplier), rng);
    }
  }

  std::vector<nn::Var<T>> operator()(const nn::Matrix<T>& log_magnitude) const {
    std::vector<nn::Var<T>> out;
    out.push_back(embed(nn::Var<T>(log_magnitude)));
    auto h = nn::add_constant(out.back(), nn::sinusoidal_positions<T>(log_magnitude.rows, embed.out()));
    for (const auto& layer : layers) {
      h = layer(h);
      out.push_back(h);
    }
    return out;
  }
};

/// Shared projection of every stream, then N layers of per-stream self-attention (one
/// parameter set) followed by a TAC exchange, then the mean over streams.
template <typename T>
struct SpatialEncoder {
  nn::Linear<T> project;
  std::vector<nn::LayerNorm<T>> norms;
  std::vector<nn::SelfAttention<T>> attns;
  std::vector<nn::Tac<T>> tacs;

  SpatialEncoder(nn::ParamStore<T>& store, const std::string& name, const ModelConfig& cfg, std::size_t bins, nn::Rng& rng)
      : project(store, name + ".project", bins, std::size_t(cfg.spatial_dim), rng) {
    if (cfg.spatial_layers < 1) throw std::invalid_argument("spatial encoder needs at least one layer");
    const auto d = std::size_t(cfg.spatial_dim);
    for (int l = 0; l < cfg.spatial_layers; ++l) {
      const auto p = name + ".layer" + std::to_string(l);
      norms.emplace_back(store, p + ".attn_norm", d);
      attns.emplace_back(store, p + ".attn", d, cfg.heads, rng);
      tacs.emplace_back(store, p + ".tac", d, d * 2, rng);
    }
  }

  SpatialEmbedding<T> operator()(const std::vector<nn::Matrix<T>>& streams) const {
    if (streams.empty()) throw std::invalid_argument("spatial encoder needs at least one feature stream");
    std::vector<nn::Var<T>> h;
    h.reserve(streams.size());
    for (const auto& s : streams) h.push_back(project(nn::Var<T>(s)));
    for (std::size_t l = 0; l < attns.size(); ++l) {
      for (auto& x : h) x = nn::add(x, attns[l](norms[l](x)));
      h = tacs[l](h);
    }
    return {nn::mean_of(h), EmbeddingKind::Encoder};
  }
};

/// Projection, layer norm and a Conformer stack on top of the spatial encoder output.
template <typename T>
struct SpatialConformer {
  nn::Linear<T> project;
  nn::LayerNorm<T> norm;
  std::vector<nn::ConformerBlock<T>> blocks;

  SpatialConformer(nn::ParamStore<T>& store, const std::string& name, const ModelConfig& cfg, nn::Rng& rng)
      : project(store, name + ".project", std::size_t(cfg.spatial_dim), std::size_t(cfg.spatial_dim), rng),
        norm(store, name + ".norm", std::size_t(cfg.spatial_dim)) {
    const auto d = std::size_t(cfg.spatial_dim);
    for (int b = 0; b < cfg.spatial_blocks; ++b) {
      blocks.emplace_back(store, name + ".block" + std::to_string(b), d, cfg.heads, d * std::size_t(cfg.ff_multiplier),
                          std::size_t(cfg.conv_kernel), rng);
    }
  }

  SpatialEmbedding<T> operator()(const SpatialEmbedding<T>& in) const {
    if (in.kind != EmbeddingKind::Encoder) throw std::invalid_argument("spatial conformer expects an encoder embedding");
    auto h = norm(project(in.values));
    h = nn::add_constant(h, nn::sinusoidal_positions<T>(h.rows(), h.cols()));
    for (const auto& b : blocks) h = b(h);
    return {h, EmbeddingKind::Conformer};
  }
};

/// The spatial sub-network: encoder, optionally conformer, optionally classification head.
template <typename T>
struct SpatialNetwork {
  SpatialEncoder<T> encoder;
  std::optional<SpatialConformer<T>> conformer;
  std::optional<nn::Linear<T>> head;

  SpatialNetwork(nn::ParamStore<T>& store, const std::string& name, const ModelConfig& cfg, std::size_t bins,
                 bool with_conformer, bool with_head, nn::Rng& rng)
      : encoder(store, name + ".encoder", cfg, bins, rng) {
    if (with_conformer) conformer.emplace(store, name + ".conformer", cfg, rng);
    if (with_head) {
      head.emplace(store, name + ".head", std::size_t(cfg.spatial_dim),
                   std::size_t(PowersetSpace::class_count(cfg.max_speakers)), rng);
    }
  }

  /// Deepest embedding available (h̃ when the conformer exists).
  SpatialEmbedding<T> embed(const std::vector<nn::Matrix<T>>& streams) const {
    auto h = encoder(streams);
    return conformer ? (*conformer)(h) : h;
  }

  nn::Var<T> logits(const std::vector<nn::Matrix<T>>& streams) const {
    if (!head) throw std::logic_error("spatial network has no classification head");
    auto h = embed(streams);
    if (h.kind != EmbeddingKind::Conformer) throw std::invalid_argument("classification head expects a conformer embedding");
    return (*head)(h.values);
  }
};

/// Conditioned EEND back-end over the encoder stub.
template <typename T>
struct EendBackend {
  nn::Var<T> layer_logits;
  nn::Linear<T> project;
  nn::LayerNorm<T> norm;
  std::vector<nn::Film<T>> films;  ///< films[0] before the stack, films[b + 1] before block b
  std::vector<nn::ConformerBlock<T>> blocks;
  nn::Linear<T> head;

  EendBackend(nn::ParamStore<T>& store, const std::string& name, const ModelConfig& cfg, std::size_t cond_dim, nn::Rng& rng)
      : layer_logits(store.add(name + ".layer_logits", nn::Matrix<T>(1, std::size_t(cfg.stub_layers))).var),
        project(store, name + ".project", std::size_t(cfg.enc_dim), std::size_t(cfg.enc_dim), rng),
        norm(store, name + ".norm", std::size_t(cfg.enc_dim)),
        head(make_blocks_then_head(store, name, cfg, rng)) {
    const auto d = std::size_t(cfg.enc_dim);
    if (cond_dim > 0) {
      films.emplace_back(store, name + ".film0", cond_dim, d, rng);
      if (cfg.conditioning != Conditioning::OracleCount) {
        for (int b = 0; b < cfg.conformer_blocks; ++b) {
          films.emplace_back(store, name + ".film" + std::to_string(b + 1), cond_dim, d, rng);
        }
      }
    }
  }

  nn::Var<T> operator()(const std::vector<nn::Var<T>>& stub_layers, const nn::Var<T>* cond) const {
    auto h = norm(project(nn::weighted_layer_sum(stub_layers, layer_logits)));
    if (cond && cond->rows() != h.rows()) throw std::invalid_argument("condition is not frame-aligned with the encoder output");
    if (cond && !films.empty()) h = films[0](h, *cond);
    h = nn::add_constant(h, nn::sinusoidal_positions<T>(h.rows(), h.cols()));
    for (std::size_t b = 0; b < blocks.size(); ++b) {
      if (cond && b + 1 < films.size()) h = films[b + 1](h, *cond);
      h = blocks[b](h);
    }
    return head(h);
  }

 private:
  // Blocks are created before the head so their parameters precede it in the store.
  nn::Linear<T> make_blocks_then_head(nn::ParamStore<T>& store, const std::string& name, const ModelConfig& cfg, nn::Rng& rng) {
    const auto d = std::size_t(cfg.enc_dim);
    for (int b = 0; b < cfg.conformer_blocks; ++b) {
      blocks.emplace_back(store, name + ".block" + std::to_string(b), d, cfg.heads, d * std::size_t(cfg.ff_multiplier),
                          std::size_t(cfg.conv_kernel), rng);
    }
    return nn::Linear<T>(store, name + ".head", d, std::size_t(PowersetSpace::class_count(cfg.max_speakers)), rng);
  }
};

/// A complete diarization network: either the standalone spatial diarization model or the
/// (optionally conditioned) EEND. Parameters are named under "stub.", "eend." and "aux.".
template <typename T>
class DiarizationModel {
 public:
  DiarizationModel(const ModelConfig& cfg, std::size_t bins)
      : cfg_(cfg), space_(cfg.max_speakers), store_(std::make_unique<nn::ParamStore<T>>()) {
    cfg.validate();
    nn::Rng rng(cfg.seed);
    if (cfg.kind == ModelKind::SpatialDiarization) {
      aux_.emplace(*store_, "aux", cfg, bins, true, true, rng);
      return;
    }
    stub_.emplace(*store_, "stub", cfg, bins, rng);
    std::size_t cond_dim = 0;
    switch (cfg.conditioning) {
      case Conditioning::None: break;
      case Conditioning::OracleCount: cond_dim = kCountCategories; break;
      case Conditioning::SpatialEncoder: aux_.emplace(*store_, "aux", cfg, bins, false, false, rng); break;
      case Conditioning::SpatialConformer: aux_.emplace(*store_, "aux", cfg, bins, true, false, rng); break;
      case Conditioning::SpatialDiarization: aux_.emplace(*store_, "aux", cfg, bins, true, true, rng); break;
    }
    if (aux_) cond_dim = std::size_t(cfg.spatial_dim);
    eend_.emplace(*store_, "eend", cfg, cond_dim, rng);
  }

  const ModelConfig& config() const { return cfg_; }
  const PowersetSpace& space() const { return space_; }
  nn::ParamStore<T>& params() { return *store_; }
  const nn::ParamStore<T>& params() const { return *store_; }
  bool has_aux() const { return aux_.has_value(); }

  /// Streams seen by the spatial sub-network.
  std::vector<nn::Matrix<T>> spatial_streams(const ModelInput<T>& in) const {
    if (cfg_.spatial_inputs == SpatialInputs::MagnitudeOnly) return {in.streams.at(0)};
    return in.streams;
  }

  /// The FiLM condition for this input, or nothing for the unconditioned model.
  std::optional<nn::Var<T>> condition(const ModelInput<T>& in) const {
    if (cfg_.kind != ModelKind::Eend) return std::nullopt;
    if (cfg_.conditioning == Conditioning::OracleCount) {
      if (in.count_condition.rows != in.frames()) throw std::invalid_argument("oracle count condition has the wrong length");
      return nn::Var<T>(in.count_condition);
    }
    if (!aux_) return std::nullopt;
    return aux_->embed(spatial_streams(in)).values;
  }

  /// Frame logits (T x C). A precomputed condition (e.g. from a frozen auxiliary network)
  /// may be supplied to skip recomputation.
  nn::Var<T> logits(const ModelInput<T>& in, const nn::Matrix<T>* cached_condition = nullptr) const {
    if (in.streams.empty()) throw std::invalid_argument("model input has no feature streams");
    if (cfg_.kind == ModelKind::SpatialDiarization) return aux_->logits(spatial_streams(in));
    std::optional<nn::Var<T>> cond;
    if (cached_condition) {
      cond = nn::Var<T>(*cached_condition);
    } else {
      cond = condition(in);
    }
    return (*eend_)((*stub_)(in.streams[0]), cond ? &*cond : nullptr);
  }

  PowersetPosteriors posteriors(const ModelInput<T>& in) const {
    nn::NoGradGuard no_grad;
    auto p = nn::softmax_values(logits(in).value());
    PowersetPosteriors out;
    out.frames = p.rows;
    out.classes = int(p.cols);
    out.values.reserve(p.size());
    for (T v : p.data) out.values.push_back(float(v));
    return out;
  }

  EncoderStub<T>& stub() { return *stub_; }
  SpatialNetwork<T>& aux() { return *aux_; }
  EendBackend<T>& eend() { return *eend_; }

 private:
  ModelConfig cfg_;
  PowersetSpace space_;
  std::unique_ptr<nn::ParamStore<T>> store_;
  std::optional<EncoderStub<T>> stub_;
  std::optional<SpatialNetwork<T>> aux_;
  std::optional<EendBackend<T>> eend_;
};

}  // namespace spatial_diar
