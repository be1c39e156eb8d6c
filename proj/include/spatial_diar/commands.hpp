#pragma once

#include <algorithm>
#include <atomic>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "spatial_diar/audio_io.hpp"
#include "spatial_diar/config.hpp"
#include "spatial_diar/errors.hpp"
#include "spatial_diar/manifest.hpp"
#include "spatial_diar/models.hpp"
#include "spatial_diar/nn/checkpoint.hpp"
#include "spatial_diar/pipeline.hpp"
#include "spatial_diar/scoring.hpp"
#include "spatial_diar/sim.hpp"
#include "spatial_diar/training.hpp"

namespace spatial_diar {

namespace fs = std::filesystem;

enum class ChannelSelection { Session, Dataset };

template <>
struct EnumNames<ChannelSelection> {
  static constexpr std::pair<ChannelSelection, std::string_view> names[] = {
      {ChannelSelection::Session, "session"},
      {ChannelSelection::Dataset, "dataset"},
  };
};

struct DataConfig {
  int channels = 0;  ///< microphones used per session; 0 keeps all
  ChannelSelection selection = ChannelSelection::Session;

  template <class B>
  void bind(B& b) {
    b("channels", channels);
    b("channel_selection", selection);
  }
};

/// Every configurable section of a run.
struct RunConfig {
  SimConfig sim;
  ModelConfig model;
  TrainConfig train;
  DataConfig data;

  static RunConfig from_kv(const KeyValues& kv) {
    for (const auto& [key, value] : kv.values()) {
      const auto dot = key.find('.');
      const auto section = dot == std::string::npos ? key : key.substr(0, dot);
      if (section != "sim" && section != "model" && section != "train" && section != "data") {
        throw ConfigError("unknown config key '" + key + "'");
      }
    }
    RunConfig cfg;
    read_section(kv, "sim.", cfg.sim);
    read_section(kv, "model.", cfg.model);
    read_section(kv, "train.", cfg.train);
    read_section(kv, "data.", cfg.data);
    return cfg;
  }

  static RunConfig from_text(std::string_view text) { return from_kv(KeyValues::parse(text)); }

  static RunConfig from_file(const std::string& path) {
    std::string text;
    try {
      text = read_file(path);
    } catch (const std::exception& e) {
      throw ConfigError("cannot read config " + path + ": " + e.what());
    }
    return from_text(text);
  }

  KeyValues to_kv(bool sim_section = true, bool model_sections = true) const {
    KeyValues kv;
    if (sim_section) write_section(kv, "sim.", sim);
    if (model_sections) {
      write_section(kv, "model.", model);
      write_section(kv, "train.", train);
      write_section(kv, "data.", data);
    }
    return kv;
  }

  std::string sim_hash() const { return hex64(fnv1a64(to_kv(true, false).canonical())); }
  std::string model_hash() const { return hex64(fnv1a64(to_kv(false, true).canonical())); }
};

inline std::string show_config() { return RunConfig{}.to_kv().canonical(); }

namespace cmd_detail {

inline void ensure_readable(const std::string& path, const char* what) {
  std::error_code ec;
  if (!fs::is_regular_file(path, ec)) throw ConfigError(std::string(what) + " not found: " + path);
}

inline std::string geometry_text(const std::vector<Point3>& mics) {
  std::string out;
  char buf[96];
  for (const auto& p : mics) {
    std::snprintf(buf, sizeof buf, "%.9g %.9g %.9g\n", p[0], p[1], p[2]);
    out += buf;
  }
  return out;
}

inline std::vector<Point3> parse_geometry(const std::string& text) {
  std::vector<Point3> out;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    Point3 p{};
    if (ls >> p[0] >> p[1] >> p[2]) out.push_back(p);
  }
  return out;
}

inline std::string geometry_path(const std::string& wav) { return fs::path(wav).replace_extension(".geometry").string(); }

/// Reads a WAV plus its optional geometry sidecar.
inline MultiChannelAudio load_audio(const std::string& wav) {
  ensure_readable(wav, "audio file");
  auto audio = read_wav(wav);
  const auto geo = geometry_path(wav);
  if (fs::exists(geo)) {
    audio.mic_positions = parse_geometry(read_file(geo));
    if (audio.mic_positions->size() != audio.channels()) {
      throw FormatError("geometry sidecar does not match the channel count of " + wav);
    }
  }
  return audio;
}

/// Applies the configured channel subset. Dataset mode reuses the first session's choice.
class ChannelChooser {
 public:
  explicit ChannelChooser(DataConfig cfg) : cfg_(cfg) {}

  MultiChannelAudio apply(const MultiChannelAudio& audio) {
    if (cfg_.channels <= 0 || std::size_t(cfg_.channels) >= audio.channels()) return audio;
    if (cfg_.selection == ChannelSelection::Dataset && !fixed_.empty()) return audio.subset(fixed_);
    if (!audio.mic_positions) throw ConfigError("channel selection needs microphone positions (.geometry sidecar)");
    auto chosen = select_channels(*audio.mic_positions, std::size_t(cfg_.channels));
    if (cfg_.selection == ChannelSelection::Dataset) fixed_ = chosen;
    return audio.subset(chosen);
  }

 private:
  DataConfig cfg_;
  std::vector<int> fixed_;
};

/// Runs fn(i) for i in [0, n) on up to `jobs` threads.
inline void parallel_for(std::size_t n, int jobs, const std::function<void(std::size_t)>& fn) {
  const auto workers = std::size_t(std::max(1, std::min<int>(jobs, int(n))));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(n);
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

inline std::string sidecar_path(const std::string& ckpt) { return ckpt + ".cfg"; }

}  // namespace cmd_detail

struct SimulateOptions {
  std::string config_path;
  std::string out_dir;
  int jobs = 1;
  bool timestamp = false;
};

/// Writes <id>.wav, <id>.rttm and <id>.geometry per simulated file plus manifest.json.
inline RunManifest cmd_simulate(const SimulateOptions& opt) {
  const auto cfg = opt.config_path.empty() ? RunConfig{} : RunConfig::from_file(opt.config_path);
  try {
    cfg.sim.validate();
    mic_geometry(cfg.sim);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  fs::create_directories(opt.out_dir);
  RunManifest m;
  m.command = "simulate";
  m.config_hash = cfg.sim_hash();
  m.seed = cfg.sim.seed;
  if (!opt.config_path.empty()) m.inputs.push_back(opt.config_path);
  if (opt.timestamp) m.started_at = utc_timestamp();
  const auto n = std::size_t(cfg.sim.num_files);
  std::vector<std::vector<std::pair<std::string, std::string>>> written(n);
  cmd_detail::parallel_for(n, opt.jobs, [&](std::size_t i) {
    char id[32];
    std::snprintf(id, sizeof id, "sim_%03zu", i);
    auto res = simulate_file(cfg.sim, int(i));
    const auto base = (fs::path(opt.out_dir) / id).string();
    auto wav = encode_wav(res.audio);
    auto rttm = emit_rttm(res.track, id);
    auto geo = cmd_detail::geometry_text(*res.audio.mic_positions);
    write_file(base + ".wav", wav);
    write_file(base + ".rttm", rttm);
    write_file(base + ".geometry", geo);
    written[i] = {{base + ".wav", wav}, {base + ".rttm", rttm}, {base + ".geometry", geo}};
  });
  for (const auto& files : written) {
    for (const auto& [path, bytes] : files) m.add_output(path, bytes);
  }
  if (opt.timestamp) m.finished_at = utc_timestamp();
  write_file((fs::path(opt.out_dir) / "manifest.json").string(), m.to_json());
  return m;
}

/// Sorted WAV files of a data directory that have a matching RTTM.
inline std::vector<std::string> list_sessions(const std::string& data_dir) {
  std::error_code ec;
  if (!fs::is_directory(data_dir, ec)) throw ConfigError("data directory not found: " + data_dir);
  std::vector<std::string> out;
  for (const auto& entry : fs::directory_iterator(data_dir)) {
    if (entry.path().extension() != ".wav") continue;
    auto rttm = entry.path();
    rttm.replace_extension(".rttm");
    if (fs::exists(rttm)) out.push_back(entry.path().string());
  }
  std::sort(out.begin(), out.end());
  if (out.empty()) throw ConfigError("no WAV/RTTM pairs in " + data_dir);
  return out;
}

inline ActivityTrack load_reference(const std::string& rttm_path, double duration) {
  cmd_detail::ensure_readable(rttm_path, "reference RTTM");
  return parse_rttm(read_file(rttm_path), duration);
}

/// Loads every session of a directory as prepared recordings for the given model config.
inline std::vector<Recording> load_recordings(const std::string& data_dir, const RunConfig& cfg) {
  cmd_detail::ChannelChooser chooser(cfg.data);
  std::vector<Recording> recs;
  for (const auto& wav : list_sessions(data_dir)) {
    auto audio = chooser.apply(cmd_detail::load_audio(wav));
    auto ref = load_reference(fs::path(wav).replace_extension(".rttm").string(), audio.duration());
    recs.push_back(prepare_recording(fs::path(wav).stem().string(), audio, std::move(ref), cfg.model));
  }
  return recs;
}

struct TrainOptions {
  std::string config_path;
  std::string data_dir;
  std::string out_checkpoint;
  std::string aux_checkpoint;
  std::string init_checkpoint;
  std::string loss_log;  ///< defaults to <checkpoint>.loss.jsonl
  bool timestamp = false;
};

/// Builds the model for a training stage, loading the checkpoints that stage requires.
inline DiarizationModel<float> build_stage_model(const RunConfig& cfg, const TrainOptions& opt) {
  DiarizationModel<float> model(cfg.model, cfg.model.bins());
  switch (cfg.train.stage) {
    case Stage::Scratch: break;
    case Stage::FrozenAux:
      if (!model.has_aux()) throw ConfigError("stage frozen_aux needs a model with an auxiliary spatial network");
      if (opt.aux_checkpoint.empty()) throw ConfigError("stage frozen_aux requires --aux <pretrained spatial checkpoint>");
      cmd_detail::ensure_readable(opt.aux_checkpoint, "auxiliary checkpoint");
      nn::load_checkpoint_file(model.params(), opt.aux_checkpoint, "aux.", "aux.");
      break;
    case Stage::JointFinetune:
      if (opt.init_checkpoint.empty()) throw ConfigError("stage joint_finetune requires --init <stage-2 checkpoint>");
      cmd_detail::ensure_readable(opt.init_checkpoint, "initial checkpoint");
      nn::load_checkpoint_file(model.params(), opt.init_checkpoint);
      if (!opt.aux_checkpoint.empty()) {
        cmd_detail::ensure_readable(opt.aux_checkpoint, "auxiliary checkpoint");
        nn::load_checkpoint_file(model.params(), opt.aux_checkpoint, "aux.", "aux.");
      }
      break;
  }
  return model;
}

inline RunManifest cmd_train(const TrainOptions& opt) {
  auto cfg = RunConfig::from_file(opt.config_path);
  cfg.model.validate();
  cfg.train.validate();
  if (opt.out_checkpoint.empty()) throw ConfigError("train needs an output checkpoint path");
  RunManifest m;
  m.command = "train";
  m.config_hash = cfg.model_hash();
  m.seed = cfg.train.seed;
  m.stage = detail::enum_name(cfg.train.stage);
  m.inputs.push_back(opt.config_path);
  if (opt.timestamp) m.started_at = utc_timestamp();

  auto model = build_stage_model(cfg, opt);
  if (!opt.aux_checkpoint.empty()) m.inputs.push_back(opt.aux_checkpoint);
  if (!opt.init_checkpoint.empty()) m.inputs.push_back(opt.init_checkpoint);
  auto recs = load_recordings(opt.data_dir, cfg);
  std::vector<TrainingExample> examples;
  for (const auto& r : recs) {
    m.inputs.push_back(r.id);
    auto ex = make_training_examples(r, model.space(), cfg.train);
    examples.insert(examples.end(), ex.begin(), ex.end());
  }
  if (auto parent = fs::path(opt.out_checkpoint).parent_path(); !parent.empty()) fs::create_directories(parent);
  auto report = train(model, examples, cfg.train, [&](int step) {
    const auto path = opt.out_checkpoint + ".step" + std::to_string(step);
    nn::save_checkpoint(model.params(), path);
    m.add_output_file(path);
  });
  nn::save_checkpoint(model.params(), opt.out_checkpoint);
  const auto sidecar = cmd_detail::sidecar_path(opt.out_checkpoint);
  write_file(sidecar, cfg.to_kv(false, true).canonical());
  const auto log = opt.loss_log.empty() ? opt.out_checkpoint + ".loss.jsonl" : opt.loss_log;
  write_file(log, report.to_jsonl());
  m.add_output_file(opt.out_checkpoint);
  m.add_output_file(sidecar);
  m.add_output_file(log);
  if (opt.timestamp) m.finished_at = utc_timestamp();
  write_file(opt.out_checkpoint + ".manifest.json", m.to_json());
  return m;
}

struct InferOptions {
  std::string checkpoint;
  std::string wav;
  std::string ref_rttm;
  std::string out_rttm;
  bool ref_as_hyp = false;
  bool timestamp = false;
};

inline RunManifest cmd_infer(const InferOptions& opt) {
  if (opt.ref_rttm.empty()) throw ConfigError("infer requires --ref: stitching is oracle-based");
  if (opt.out_rttm.empty()) throw ConfigError("infer needs an output RTTM path");
  RunManifest m;
  m.command = "infer";
  if (opt.timestamp) m.started_at = utc_timestamp();
  auto audio = cmd_detail::load_audio(opt.wav);
  auto ref = load_reference(opt.ref_rttm, audio.duration());
  const auto file_id = fs::path(opt.wav).stem().string();
  m.inputs = {opt.wav, opt.ref_rttm};
  std::string rttm;
  if (opt.ref_as_hyp) {
    m.stage = "ref_as_hyp";
    rttm = emit_rttm(ref, file_id);
  } else {
    cmd_detail::ensure_readable(opt.checkpoint, "checkpoint");
    cmd_detail::ensure_readable(cmd_detail::sidecar_path(opt.checkpoint), "checkpoint config sidecar");
    const auto cfg = RunConfig::from_file(cmd_detail::sidecar_path(opt.checkpoint));
    m.config_hash = cfg.model_hash();
    m.seed = cfg.train.seed;
    m.stage = detail::enum_name(cfg.train.stage);
    m.inputs.insert(m.inputs.begin(), opt.checkpoint);
    DiarizationModel<float> model(cfg.model, cfg.model.bins());
    nn::load_checkpoint_file(model.params(), opt.checkpoint);
    cmd_detail::ChannelChooser chooser(cfg.data);
    auto rec = prepare_recording(file_id, chooser.apply(audio), ref, cfg.model);
    rttm = emit_rttm(diarize_recording(model, rec, cfg.train), file_id);
  }
  if (auto parent = fs::path(opt.out_rttm).parent_path(); !parent.empty()) fs::create_directories(parent);
  write_file(opt.out_rttm, rttm);
  m.add_output(opt.out_rttm, rttm);
  if (opt.timestamp) m.finished_at = utc_timestamp();
  write_file(opt.out_rttm + ".manifest.json", m.to_json());
  return m;
}

struct ScoreOptions {
  std::vector<std::string> refs;
  std::vector<std::string> hyps;
  std::vector<std::string> datasets;  ///< one name per ref/hyp pair; defaults to the ref file stem
  std::string csv_out;
  std::string text_out;
  int jobs = 1;
};

/// Scores every recording in paired RTTM files. Hypothesis recordings missing from a hyp
/// file score as empty.
inline std::vector<ReportRow> cmd_score(const ScoreOptions& opt) {
  if (opt.refs.empty() || opt.refs.size() != opt.hyps.size()) {
    throw ConfigError("score needs matching --ref and --hyp lists");
  }
  if (!opt.datasets.empty() && opt.datasets.size() != opt.refs.size()) {
    throw ConfigError("--dataset must be given once per --ref/--hyp pair");
  }
  std::vector<DatasetScores> datasets;
  for (std::size_t d = 0; d < opt.refs.size(); ++d) {
    cmd_detail::ensure_readable(opt.refs[d], "reference RTTM");
    cmd_detail::ensure_readable(opt.hyps[d], "hypothesis RTTM");
    auto refs = parse_rttm_by_file(read_file(opt.refs[d]));
    auto hyps = parse_rttm_by_file(read_file(opt.hyps[d]));
    std::map<std::string, ActivityTrack> hyp_by_id;
    for (auto& h : hyps) hyp_by_id[h.file_id] = std::move(h.track);
    DatasetScores ds;
    ds.name = opt.datasets.empty() ? fs::path(opt.refs[d]).stem().string() : opt.datasets[d];
    ds.files.resize(refs.size());
    cmd_detail::parallel_for(refs.size(), opt.jobs, [&](std::size_t i) {
      auto ref = refs[i].track;
      ActivityTrack hyp;
      if (auto it = hyp_by_id.find(refs[i].file_id); it != hyp_by_id.end()) hyp = it->second;
      ref.duration = std::max(ref.duration, hyp.duration);
      ds.files[i] = {refs[i].file_id, der_by_region(ref, hyp)};
    });
    datasets.push_back(std::move(ds));
  }
  auto rows = build_report(datasets);
  if (!opt.csv_out.empty()) write_file(opt.csv_out, emit_report_csv(rows));
  if (!opt.text_out.empty()) write_file(opt.text_out, emit_report_text(rows));
  return rows;
}

struct ReportOptions {
  std::vector<std::string> systems;  ///< NAME=score.csv
  std::string out;
};

/// Table-2 style comparison: one row per system, one column per dataset plus Macro.
inline std::string cmd_report(const ReportOptions& opt) {
  if (opt.systems.empty()) throw ConfigError("report needs at least one --system NAME=score.csv");
  std::vector<std::string> columns;
  std::vector<std::pair<std::string, std::map<std::string, std::string>>> table;
  for (const auto& spec : opt.systems) {
    const auto eq = spec.find('=');
    if (eq == std::string::npos) throw ConfigError("--system expects NAME=score.csv, got " + spec);
    const auto name = spec.substr(0, eq), path = spec.substr(eq + 1);
    cmd_detail::ensure_readable(path, "score CSV");
    std::istringstream in(read_file(path));
    std::string line;
    std::getline(in, line);
    std::map<std::string, std::string> cells;
    while (std::getline(in, line)) {
      std::vector<std::string> f;
      std::stringstream ls(line);
      std::string item;
      while (std::getline(ls, item, ',')) f.push_back(item);
      if (f.size() < 4) throw FormatError("malformed score CSV row in " + path);
      if (f[0].find('/') != std::string::npos) continue;  // per-file row
      DerBreakdown d;
      d.der_overall = std::stod(f[1]) / 100;
      d.der_overlap = std::stod(f[2]) / 100;
      d.der_single = std::stod(f[3]) / 100;
      cells[f[0]] = format_der(d);
      if (std::find(columns.begin(), columns.end(), f[0]) == columns.end()) columns.push_back(f[0]);
    }
    table.emplace_back(name, std::move(cells));
  }
  // Macro always last
  if (auto it = std::find(columns.begin(), columns.end(), "Macro"); it != columns.end()) {
    columns.erase(it);
    columns.push_back("Macro");
  }
  std::vector<std::size_t> width;
  std::size_t name_width = 6;
  for (const auto& [name, cells] : table) name_width = std::max(name_width, name.size());
  for (const auto& c : columns) {
    std::size_t w = c.size();
    for (const auto& [name, cells] : table) {
      if (auto it = cells.find(c); it != cells.end()) w = std::max(w, it->second.size());
    }
    width.push_back(w);
  }
  auto pad = [](const std::string& s, std::size_t w) { return s + std::string(w - s.size() + 2, ' '); };
  std::string out = pad("System", name_width);
  for (std::size_t i = 0; i < columns.size(); ++i) out += pad(columns[i], width[i]);
  while (out.back() == ' ') out.pop_back();
  out += "\n";
  for (const auto& [name, cells] : table) {
    std::string row = pad(name, name_width);
    for (std::size_t i = 0; i < columns.size(); ++i) {
      auto it = cells.find(columns[i]);
      row += pad(it == cells.end() ? "-" : it->second, width[i]);
    }
    while (!row.empty() && row.back() == ' ') row.pop_back();
    out += row + "\n";
  }
  if (!opt.out.empty()) write_file(opt.out, out);
  return out;
}

}  // namespace spatial_diar
