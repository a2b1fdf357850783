#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>

#include <nlohmann/json.hpp>

#include "vstain/eval.hpp"
#include "vstain/phantom.hpp"
#include "vstain/train.hpp"

namespace vstain::cli {

struct PhantomSection {
  int count = 10;
  std::array<double, 3> ratio{7, 1, 2};
  phantom::PhantomSpec base;
  int stack_depth = 16;  // slices written for volume inference
};

struct FoldSection {
  int k = 5;
  std::array<double, 3> ratio{7, 1, 2};
  std::array<int, 3> test_counts{2, 0, 1};  // Mg, Ti, PEEK pairs held out
  double val_fraction = 0.2;                // k = 1 only
};

struct InferSection {
  int tile = 256;
  int step = 64;
  int batch = 4;
  double sigma = 1.0;
  double truncate = 4.0;  // Gaussian radius in sigmas
  double voxel_size_um = 1.0;  // recorded in the exported volume
};

struct EvalSection {
  int patch = 256;
  std::string lpips_weights;  // empty or missing file: LPIPS reported unavailable
  bool frc = true;
  int frc_patch = 256;
};

struct RunConfig {
  std::uint64_t seed = 1;
  std::string manifest;    // dataset manifest read by preprocess/train/infer/eval
  std::string out = "out";
  std::string checkpoint;  // checkpoint directory for infer/eval
  std::string input;       // CT stack (directory or multi-page TIFF) for --volume
  std::string folds;       // folds.json written by train, read by eval
  int fold = 0;            // -1: every fold
  bool volume = false;
  bool invert_ct = false;
  bool resume = false;
  PhantomSection phantom;
  FoldSection split;
  train::TrainConfig train;
  InferSection infer;
  EvalSection eval;
};

nlohmann::json to_json(const RunConfig& c);
// ConfigError on unknown keys or ill-typed values; absent keys keep their
// defaults.
RunConfig from_json(const nlohmann::json& j);
RunConfig load_config(const std::filesystem::path& path);
// Fully resolved configuration written next to a command's outputs.
void write_config(const RunConfig& c, const std::filesystem::path& dir);

// Normalised CT and histology plus the intersected correspondence mask. A
// stored mask not produced by the automatic hull counts as a manual mask.
ImagePair preprocess_pair(const ImagePair& pair);

void cmd_phantom(const RunConfig& c);
void cmd_preprocess(const RunConfig& c);
void cmd_train(const RunConfig& c);
void cmd_infer(const RunConfig& c);
void cmd_eval(const RunConfig& c);

void write_fold_plan(const train::FoldPlan& plan, const std::filesystem::path& path);
train::FoldPlan read_fold_plan(const std::filesystem::path& path);

// Entry point: parses flags, runs one subcommand and maps failures to a
// single "error[<category>] <message>" line and a nonzero exit code.
int run(int argc, char** argv);

}  // namespace vstain::cli
