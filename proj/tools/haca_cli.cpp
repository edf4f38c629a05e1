// haca command-line driver. Everything goes through the shared-library C API.

#include <cstdio>
#include <cstdlib>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "haca/haca.h"

namespace {

void print_progress(const char* line, void*) { std::printf("%s\n", line); }

int finish(haca_status status) {
  if (status != HACA_OK) {
    std::fprintf(stderr, "error: %s\n", haca_last_error());
  }
  return static_cast<int>(status);
}

std::string out_root() {
  if (const char* env = std::getenv("HACA_OUT_ROOT")) return env;
  return "runs";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"synthetic video-language alignment experiments "
               "(hallucination-correction fine-tuning)"};
  app.require_subcommand(1);
  app.set_version_flag("--version", haca_version());

  std::string config_path;
  std::string out_dir;
  std::string data_dir;
  std::string objective;
  std::string checkpoint;
  std::string scores_out;
  std::vector<std::string> report_paths;
  std::vector<double> ratios;
  uint64_t seed = 0;
  double mask_ratio = 0.0;
  bool dump_text = false;

  auto* gen = app.add_subcommand("gen-data", "generate corpus, binding tests and retrieval tasks");
  gen->add_option("--config", config_path, "experiment config JSON (defaults built in)");
  auto* gen_seed = gen->add_option("--seed", seed, "override the global seed");
  gen->add_option("--out", out_dir, "output directory (default <root>/data)");

  auto* train = app.add_subcommand("train", "train one objective on generated data");
  train->add_option("--data", data_dir, "data directory from gen-data")->required();
  train->add_option("--objective", objective,
                    "pretrain | entail | haca | haca+mask | entail+mask")
      ->required();
  train->add_option("--config", config_path, "config override (defaults to the data dir copy)");
  auto* train_seed = train->add_option("--seed", seed, "override the training seed");
  auto* train_mask = train->add_option("--mask-ratio", mask_ratio, "override the mask ratio");
  train->add_option("--out", out_dir, "run directory (default <root>/train-<objective>-seed<N>)");
  train->add_flag("--dump-text", dump_text, "also write the training set in readable form");

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on the test sets");
  eval->add_option("--checkpoint", checkpoint, "checkpoint.bin path")->required();
  eval->add_option("--data", data_dir, "data directory from gen-data")->required();
  eval->add_option("--out", out_dir, "output directory (default <root>/eval)");
  eval->add_option("--scores-out", scores_out, "dump raw per-pair Yes-probabilities (JSONL)");

  auto* ablate = app.add_subcommand("ablate-mask", "mask-ratio sweep for haca+mask");
  ablate->add_option("--data", data_dir, "data directory from gen-data")->required();
  ablate->add_option("--config", config_path, "config override (defaults to the data dir copy)");
  ablate->add_option("--ratios", ratios, "mask ratios, e.g. 0.15 0.30 0.45 0.60")
      ->required()
      ->delimiter(',');
  ablate->add_option("--out", out_dir, "output directory (default <root>/ablate)");

  auto* compare = app.add_subcommand("compare", "delta table over eval reports");
  compare->add_option("reports", report_paths, "eval_report.json paths (first is the baseline)")
      ->required()
      ->expected(-2);
  compare->add_option("--out", out_dir, "output directory (default <root>/compare)");

  CLI11_PARSE(app, argc, argv);

  const char* config_arg = config_path.empty() ? nullptr : config_path.c_str();

  if (gen->parsed()) {
    if (out_dir.empty()) out_dir = out_root() + "/data";
    return finish(haca_gen_data(config_arg, out_dir.c_str(), !gen_seed->empty(), seed));
  }
  if (train->parsed()) {
    if (out_dir.empty()) {
      out_dir = out_root() + "/train-" + objective;
      if (!train_seed->empty()) out_dir += "-seed" + std::to_string(seed);
    }
    return finish(haca_train(config_arg, data_dir.c_str(), objective.c_str(), out_dir.c_str(),
                             !train_seed->empty(), seed, !train_mask->empty(), mask_ratio,
                             dump_text ? 1 : 0, print_progress, nullptr));
  }
  if (eval->parsed()) {
    if (out_dir.empty()) out_dir = out_root() + "/eval";
    return finish(haca_eval(checkpoint.c_str(), data_dir.c_str(), out_dir.c_str(),
                            scores_out.empty() ? nullptr : scores_out.c_str()));
  }
  if (ablate->parsed()) {
    if (out_dir.empty()) out_dir = out_root() + "/ablate";
    return finish(haca_ablate_mask(config_arg, data_dir.c_str(), ratios.data(), ratios.size(),
                                   out_dir.c_str(), print_progress, nullptr));
  }
  if (compare->parsed()) {
    if (out_dir.empty()) out_dir = out_root() + "/compare";
    std::vector<const char*> paths;
    paths.reserve(report_paths.size());
    for (const auto& p : report_paths) paths.push_back(p.c_str());
    return finish(haca_compare(paths.data(), paths.size(), out_dir.c_str()));
  }
  return 1;
}
