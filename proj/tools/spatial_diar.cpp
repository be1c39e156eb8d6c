#include <cstdlib>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "spatial_diar/commands.hpp"

namespace sd = spatial_diar;

namespace {

std::string default_data_dir() {
  const char* env = std::getenv("SPATIAL_DIAR_DATA");
  return env ? env : "";
}

int run(int argc, char** argv) {
  CLI::App app{"Spatially conditioned speaker diarization toolkit"};
  app.require_subcommand(0, 1);
  bool show_config = false;
  app.add_flag("--show-config", show_config, "Print every config key with its default and exit");

  sd::SimulateOptions sim;
  auto* simulate = app.add_subcommand("simulate", "Render synthetic multichannel meetings");
  simulate->add_option("-c,--config", sim.config_path, "Key-value config file");
  simulate->add_option("-o,--out", sim.out_dir, "Output directory")->required();
  simulate->add_option("-j,--jobs", sim.jobs, "Worker threads")->check(CLI::PositiveNumber);
  simulate->add_flag("--timestamp", sim.timestamp, "Record wall-clock times in the manifest");

  sd::TrainOptions tr;
  tr.data_dir = default_data_dir();
  auto* train = app.add_subcommand("train", "Train a model stage");
  train->add_option("-c,--config", tr.config_path, "Key-value config file")->required();
  train->add_option("-d,--data", tr.data_dir, "Directory of WAV/RTTM pairs (default: $SPATIAL_DIAR_DATA)");
  train->add_option("-o,--out", tr.out_checkpoint, "Output checkpoint")->required();
  train->add_option("--aux", tr.aux_checkpoint, "Pretrained spatial diarization checkpoint");
  train->add_option("--init", tr.init_checkpoint, "Checkpoint to resume from (joint_finetune)");
  train->add_option("--loss-log", tr.loss_log, "Loss log path (default: <out>.loss.jsonl)");
  train->add_flag("--timestamp", tr.timestamp, "Record wall-clock times in the manifest");

  sd::InferOptions inf;
  auto* infer = app.add_subcommand("infer", "Run segment inference and oracle stitching");
  infer->add_option("-m,--model", inf.checkpoint, "Trained checkpoint");
  infer->add_option("-w,--wav", inf.wav, "Input recording")->required();
  infer->add_option("-r,--ref", inf.ref_rttm, "Reference RTTM used for stitching");
  infer->add_option("-o,--out", inf.out_rttm, "Hypothesis RTTM")->required();
  infer->add_flag("--ref-as-hyp", inf.ref_as_hyp, "Debug path: emit the reference as the hypothesis");
  infer->add_flag("--timestamp", inf.timestamp, "Record wall-clock times in the manifest");

  sd::ScoreOptions sc;
  auto* score = app.add_subcommand("score", "Score hypotheses against references");
  score->add_option("-r,--ref", sc.refs, "Reference RTTM, one per dataset")->required();
  score->add_option("-y,--hyp", sc.hyps, "Hypothesis RTTM, one per dataset")->required();
  score->add_option("-n,--dataset", sc.datasets, "Dataset names (default: reference file stems)");
  score->add_option("--csv", sc.csv_out, "CSV report path");
  score->add_option("--text", sc.text_out, "Text report path");
  score->add_option("-j,--jobs", sc.jobs, "Worker threads")->check(CLI::PositiveNumber);

  sd::ReportOptions rep;
  auto* report = app.add_subcommand("report", "Compare systems from score CSVs");
  report->add_option("-s,--system", rep.systems, "NAME=score.csv")->required();
  report->add_option("-o,--out", rep.out, "Output table path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  if (show_config) {
    std::cout << sd::show_config();
    return 0;
  }
  if (*simulate) {
    auto m = sd::cmd_simulate(sim);
    std::cout << "wrote " << m.outputs.size() << " files to " << sim.out_dir << "\n";
  } else if (*train) {
    if (tr.data_dir.empty()) throw sd::ConfigError("train needs --data or SPATIAL_DIAR_DATA");
    sd::cmd_train(tr);
    std::cout << "wrote " << tr.out_checkpoint << "\n";
  } else if (*infer) {
    sd::cmd_infer(inf);
  } else if (*score) {
    auto rows = sd::cmd_score(sc);
    if (sc.text_out.empty() && sc.csv_out.empty()) std::cout << sd::emit_report_text(rows);
  } else if (*report) {
    auto table = sd::cmd_report(rep);
    if (rep.out.empty()) std::cout << table;
  } else {
    std::cout << app.help();
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const sd::NumericError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
