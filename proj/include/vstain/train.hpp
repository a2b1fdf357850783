#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "vstain/augment.hpp"
#include "vstain/dataio.hpp"
#include "vstain/losses.hpp"
#include "vstain/nets.hpp"
#include "vstain/optim.hpp"

namespace vstain::train {

enum class Variant { modified_cyclegan, standard_cyclegan, standard_cyclegan_inverted_ct, pix2pix };

Variant parse_variant(const std::string& name);
std::string to_string(Variant v);
bool is_cyclegan(Variant v);
bool inverts_ct(Variant v);

struct TrainConfig {
  Variant variant = Variant::modified_cyclegan;
  losses::LossWeights weights;
  optim::AdamConfig adam;  // constant learning rate, no schedule
  int batch_size = 4;
  int epochs = 500;
  augment::AugmentConfig augment;
  int buffer_capacity = 50;
  std::uint64_t seed = 1;
  nets::GeneratorSpec generator;
  nets::DiscriminatorSpec discriminator;
  // Fixed, unaugmented patches per validation pair used for val_px.
  int val_patches_per_pair = 4;

  // ConfigError on out-of-range values.
  void validate() const;
  // The configuration actually trained: standard variants get
  // weights.px = weights.gs = 0, pix2pix a U-Net deep enough for the patch
  // size and a conditional discriminator, cyclegan variants a ResNet.
  TrainConfig resolved() const;
};

// Pool of earlier generator outputs shown to a discriminator. Works per
// image of a batch: while filling, every fresh image is stored and
// returned; once full, with probability 1/2 a random stored image is
// returned and replaced by the fresh one, otherwise the fresh one passes.
class ImageBuffer {
 public:
  explicit ImageBuffer(int capacity);
  Tensor<float> query(const Tensor<float>& fresh, std::mt19937_64& rng);
  int size() const { return static_cast<int>(images_.size()); }
  int capacity() const { return capacity_; }

  void store(const std::string& prefix, TensorArchive& archive) const;
  void load(const std::string& prefix, const TensorArchive& archive);

 private:
  int capacity_;
  std::vector<Tensor<float>> images_;  // each [1,C,H,W]
};

struct PairRef {
  std::string id;
  Material material = Material::Mg;
};

struct Fold {
  std::vector<std::string> train_ids;
  std::vector<std::string> val_ids;
};

struct FoldPlan {
  std::vector<std::string> test_ids;
  std::vector<Fold> folds;
};

// Stratified folds over the pairs not listed in `test_ids`. For k >= 2 the
// validation sets partition the pool, with each material dealt round-robin
// over the folds after a seeded shuffle; every validation set must match
// `ratio` within one pair per material. k = 1 gives a single split whose
// validation set has round(val_fraction * pool) pairs split by `ratio`.
// PlanningError when the pool cannot honour the request.
FoldPlan make_folds(const std::vector<PairRef>& dataset, int k, const std::array<double, 3>& ratio,
                    std::uint64_t seed, const std::vector<std::string>& test_ids = {}, double val_fraction = 0.2);

// Seeded choice of `counts[m]` test pairs per material.
std::vector<std::string> choose_test_ids(const std::vector<PairRef>& dataset, const std::array<int, 3>& counts,
                                         std::uint64_t seed);

std::vector<PairRef> pair_refs(const std::vector<ImagePair>& pairs);

struct EpochRow {
  int epoch = 0;  // 1-based
  losses::LossBreakdown mean;
  double val_px = 0.0;
  double seconds = 0.0;
};

struct CheckpointRecord {
  std::string component;
  int epoch = 0;
  double value = 0.0;
  std::filesystem::path dir;
};

// Running minimum per loss component; offer() reports whether a save is due.
class CheckpointSet {
 public:
  bool offer(const std::string& component, int epoch, double value, const std::filesystem::path& dir);
  const std::map<std::string, CheckpointRecord>& records() const { return records_; }
  const CheckpointRecord* find(const std::string& component) const;

 private:
  std::map<std::string, CheckpointRecord> records_;
};

// Components tracked by the checkpoint set for a variant.
std::vector<std::string> tracked_components(Variant v);
double component_value(const losses::LossBreakdown& b, const std::string& component);

struct TrainResult {
  std::vector<EpochRow> log;
  CheckpointSet checkpoints;
  // Checkpoint used downstream: minimum validation pixelwise term, or the
  // training pixelwise term when there is no validation split.
  std::filesystem::path final_checkpoint;
};

class Trainer {
 public:
  // `out_dir` receives log.csv, checkpoints/<component>/ and state/.
  Trainer(const TrainConfig& cfg, const std::vector<ImagePair>& train_pairs, const std::vector<ImagePair>& val_pairs,
          std::filesystem::path out_dir);
  ~Trainer();
  Trainer(const Trainer&) = delete;
  Trainer& operator=(const Trainer&) = delete;

  // Trains until cfg.epochs epochs are done; returns the log and checkpoints.
  TrainResult run();
  // One epoch; writes the log row, checkpoints and the resume state.
  EpochRow run_epoch();
  // One optimisation step of every network on a batch.
  losses::LossBreakdown step(const augment::Batch& batch);
  // Validation pixelwise term under the current weights.
  double validation_px();

  int epochs_done() const { return epoch_; }
  std::int64_t steps_done() const { return global_step_; }
  const TrainConfig& config() const { return cfg_; }
  const std::vector<EpochRow>& log() const { return log_; }
  const CheckpointSet& checkpoints() const { return checkpoints_; }
  const std::filesystem::path& out_dir() const { return out_dir_; }
  nets::Generator<float>& forward_generator();
  int network_count() const;  // generators + discriminators built

  // Complete resume state: parameters, optimiser moments, buffers, counters,
  // log and checkpoint records.
  void save_state(const std::filesystem::path& dir) const;
  void load_state(const std::filesystem::path& dir);

  // Called after every step with (epoch, step within epoch, losses).
  std::function<void(int, int, const losses::LossBreakdown&)> on_step;
  // Called with the pair ids of every batch, before the step runs.
  std::function<void(const std::vector<std::string>&)> on_batch;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
  TrainConfig cfg_;
  std::filesystem::path out_dir_;
  int epoch_ = 0;
  std::int64_t global_step_ = 0;
  std::vector<EpochRow> log_;
  CheckpointSet checkpoints_;

  void write_checkpoint(const std::string& component, int epoch, double value);
  void dump_divergence(const losses::LossBreakdown& b, const std::vector<std::string>& ids) const;
  void write_log() const;
};

struct LoadedModel {
  std::unique_ptr<nets::Generator<float>> generator;
  Variant variant = Variant::modified_cyclegan;
  std::string component;
  int epoch = 0;
  int patch_size = 0;
  bool invert_ct = false;
};

// Forward generator of a checkpoint directory written by Trainer.
LoadedModel load_model(const std::filesystem::path& checkpoint_dir);

// Untrained forward generator for a configuration, seeded exactly as the
// trainer seeds it.
std::unique_ptr<nets::Generator<float>> initial_generator(const TrainConfig& cfg);

// Training with one fold: pairs are chosen by id from `dataset`.
TrainResult train_fold(const TrainConfig& cfg, const FoldPlan& plan, int fold, const std::vector<ImagePair>& dataset,
                       const std::filesystem::path& out_dir, bool resume = false);

}  // namespace vstain::train
