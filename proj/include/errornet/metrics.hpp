#pragma once

#include <optional>
#include <string>
#include <vector>

#include "errornet/data.hpp"
#include "errornet/network.hpp"
#include "errornet/tensor.hpp"

namespace errornet {

// Overlap metrics on binary masks, restricted to the field of view. Both are
// defined as 1.0 when the two masks are empty, and satisfy D = 2J / (1 + J).
double dice(const Tensor<float>& a, const Tensor<float>& b,
            const Tensor<float>& fov);
double iou(const Tensor<float>& a, const Tensor<float>& b,
           const Tensor<float>& fov);

inline double dice_from_iou(double j) { return 2.0 * j / (1.0 + j); }

// Eval-mode forward of the base network: normalized image -> S in (0,1).
Tensor<float> segment(Network& seg_net, const Tensor<float>& image);

// Inference-time correction: E_hat = predictor(concat(image, S)),
// S* = clamp(S + E_hat, 0, 1). The error injector is bypassed.
struct Correction {
  Tensor<float> corrected;  // S*
  Tensor<float> error_map;  // E_hat in [-1, 1]
};
Correction correct(Network& predictor, const Tensor<float>& image,
                   const Tensor<float>& s);

// One evaluated pipeline: a segmentation network plus an optional error
// predictor, carrying the ablation flags shown in reports.
struct EvalModel {
  std::string label;         // row label (train domain or variant name)
  std::string train_domain;  // used for the same-domain diagonal
  Network* seg = nullptr;
  Network* predictor = nullptr;
  bool flag_err_pred = false;
  bool flag_vae = false;
  bool flag_joint = false;
};

struct EvalDataset {
  std::string label;  // test-domain column label
  const std::vector<Sample>* samples = nullptr;  // raw (unnormalized) samples
};

// Train-domain x test-domain grid of Dice/IoU values plus per-row averages.
struct MetricsMatrix {
  std::vector<std::string> row_labels;
  std::vector<std::string> col_labels;
  std::vector<std::vector<double>> dice;  // [row][col], in [0,1]
  std::vector<std::vector<double>> iou;
  std::vector<std::vector<bool>> same_domain;
  std::vector<double> row_avg_dice;
  std::vector<double> row_avg_iou;
  std::vector<bool> flag_err_pred, flag_vae, flag_joint;

  double cell_dice(const std::string& row, const std::string& col) const;
};

// Fills every (model, dataset) cell with the mean Dice/IoU over the test
// samples. With with_correction=false (or when a model has no predictor) the
// raw segmentation is scored.
MetricsMatrix evaluate_matrix(const std::vector<EvalModel>& models,
                              const std::vector<EvalDataset>& datasets,
                              bool with_correction);

// Report emitters; both render percentages with one decimal.
std::string matrix_to_csv(const MetricsMatrix& m);
std::string matrix_to_markdown(const MetricsMatrix& m);

// 4-connected foreground component count (used by the break-bridging check
// and the inference tooling).
size_t count_components(const Tensor<float>& mask);

}  // namespace errornet
