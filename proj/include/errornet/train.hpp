#pragma once

#include <cstdint>
#include <string>

#include "errornet/checkpoint.hpp"
#include "errornet/data.hpp"
#include "errornet/losses.hpp"
#include "errornet/network.hpp"

namespace errornet {

enum class Stage { kSeg, kVae, kErr, kJoint };

const char* stage_name(Stage s);
Stage stage_from_name(const std::string& name);

// Which map the predictor consumes during joint training: the injected
// degradation (matching the training diagram) or the raw segmentation
// (matching the inference wiring).
enum class JointInput { kInjected, kRaw };

struct TrainConfig {
  Stage stage = Stage::kSeg;
  size_t epochs = 30;
  size_t batch_size = 8;
  float lr = 1e-3f;
  uint64_t seed = 1;
  NetworkSpec spec = desk_spec();
  size_t patience = 10;
  float kl_weight = 1.0f;
  ErrTargetMode err_target_mode = ErrTargetMode::kSigned;
  bool use_vae = true;  // err stage: degrade via the VAE vs raw S
  JointInput joint_input = JointInput::kInjected;
  std::string out_dir;
  // Prerequisite checkpoints per the stage ordering: vae needs seg; err
  // needs seg+vae; joint needs all three.
  std::string seg_checkpoint;
  std::string vae_checkpoint;
  std::string err_checkpoint;
  bool resume = false;

  void validate() const;
};

struct TrainResult {
  std::string best_checkpoint;
  std::string last_checkpoint;
  double best_metric = 0.0;
  size_t epochs_completed = 0;
  uint64_t global_steps = 0;
  bool early_stopped = false;
};

// Runs one training stage on in-memory data; writes best.ckpt, last.ckpt and
// train_log.csv under config.out_dir. Fully deterministic given (config,
// data); resumable from last.ckpt with bit-identical continuation.
TrainResult train_stage(const TrainConfig& config, const DatasetSplits& data);

// Joint fine-tuning (stage kJoint); thin alias over the same engine.
TrainResult train_joint(const TrainConfig& config, const DatasetSplits& data);

// Rebuilds a network from a checkpoint (spec is read from the header).
Network load_seg_network(const std::string& ckpt_path);
Network load_vae_network(const std::string& ckpt_path);
Network load_predictor_network(const std::string& ckpt_path);

// Validation metrics (also used by evaluation tooling): mean Dice of the
// (optionally corrected) segmentation, and the mean deterministic VAE loss.
double validation_dice(Network& seg, Network* predictor,
                       const std::vector<Sample>& raw_samples);
double validation_vae_loss(Network& seg, Network& vae,
                           const std::vector<Sample>& raw_samples,
                           float kl_weight);

}  // namespace errornet
