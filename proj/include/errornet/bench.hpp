#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "errornet/metrics.hpp"
#include "errornet/network.hpp"

namespace errornet {

// Desk-scale cross-domain benchmark: synthesize the five preset domains,
// train the full pipeline (seg -> vae -> err -> joint, plus the no-VAE
// ablation) on the training domain, evaluate every variant on every domain's
// test split, and aggregate over seeds.
struct BenchConfig {
  std::string out_dir;
  uint64_t seed = 1;
  size_t num_seeds = 3;
  NetworkSpec spec = desk_spec();
  std::string train_domain = "chase-like";
  size_t n_train = 24;
  size_t n_val = 4;
  size_t n_test = 8;
  size_t batch_size = 8;
  size_t seg_epochs = 36;
  size_t vae_epochs = 30;
  size_t err_epochs = 30;
  size_t joint_epochs = 14;
  float lr = 1e-3f;
  float joint_lr = 3e-4f;
  float kl_weight = 1.0f;
  size_t patience = 1000;  // benchmark runs are fixed-length
};

struct BenchVariant {
  std::string name;  // base | errpred | vae | joint
  bool flag_err_pred = false, flag_vae = false, flag_joint = false;
  std::vector<double> mean_dice;  // per domain, averaged over seeds
  std::vector<double> mean_iou;
  double shifted_mean_dice = 0.0;  // mean over non-training domains
  double same_domain_dice = 0.0;   // training-domain cell
};

struct BenchResult {
  std::vector<std::string> domains;
  std::vector<BenchVariant> variants;
  std::vector<MetricsMatrix> per_seed;  // rows = variants
  std::vector<std::string> seed_run_dirs;
  double wall_seconds = 0.0;

  const BenchVariant& variant(const std::string& name) const;
};

BenchResult run_bench(const BenchConfig& config);

}  // namespace errornet
