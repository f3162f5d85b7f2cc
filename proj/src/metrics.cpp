#include "errornet/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "errornet/error.hpp"

namespace errornet {

namespace {

struct OverlapCounts {
  size_t a = 0, b = 0, inter = 0, uni = 0;
};

OverlapCounts overlap(const Tensor<float>& a, const Tensor<float>& b,
                      const Tensor<float>& fov) {
  if (a.shape() != b.shape() || a.shape() != fov.shape())
    throw ShapeError("overlap metrics: shape mismatch");
  OverlapCounts c;
  const float* pa = a.data().data();
  const float* pb = b.data().data();
  const float* pf = fov.data().data();
  for (size_t i = 0; i < a.numel(); ++i) {
    if (pf[i] <= 0.5f) continue;
    const bool va = pa[i] > 0.5f;
    const bool vb = pb[i] > 0.5f;
    c.a += va;
    c.b += vb;
    c.inter += va && vb;
    c.uni += va || vb;
  }
  return c;
}

}  // namespace

double dice(const Tensor<float>& a, const Tensor<float>& b,
            const Tensor<float>& fov) {
  const OverlapCounts c = overlap(a, b, fov);
  if (c.a + c.b == 0) return 1.0;
  return 2.0 * static_cast<double>(c.inter) / static_cast<double>(c.a + c.b);
}

double iou(const Tensor<float>& a, const Tensor<float>& b,
           const Tensor<float>& fov) {
  const OverlapCounts c = overlap(a, b, fov);
  if (c.uni == 0) return 1.0;
  return static_cast<double>(c.inter) / static_cast<double>(c.uni);
}

Tensor<float> segment(Network& seg_net, const Tensor<float>& image) {
  return seg_net.forward(image, RunMode::kEval).out;
}

Correction correct(Network& predictor, const Tensor<float>& image,
                   const Tensor<float>& s) {
  if (image.shape() != s.shape())
    throw ShapeError("correct: image/segmentation shape mismatch");
  const Tensor<float> inputs[2] = {image, s};
  Tensor<float> e_hat =
      predictor.forward(std::span<const Tensor<float>>(inputs, 2),
                        RunMode::kEval)
          .out;
  Tensor<float> corrected = Tensor<float>::zeros(s.shape());
  const float* ps = s.data().data();
  const float* pe = e_hat.data().data();
  float* pc = corrected.data_mut().data();
  for (size_t i = 0; i < corrected.numel(); ++i)
    pc[i] = std::clamp(ps[i] + pe[i], 0.0f, 1.0f);
  return {corrected, e_hat};
}

double MetricsMatrix::cell_dice(const std::string& row,
                                const std::string& col) const {
  for (size_t r = 0; r < row_labels.size(); ++r)
    if (row_labels[r] == row)
      for (size_t c = 0; c < col_labels.size(); ++c)
        if (col_labels[c] == col) return dice[r][c];
  throw UsageError("metrics matrix has no cell (" + row + ", " + col + ")");
}

MetricsMatrix evaluate_matrix(const std::vector<EvalModel>& models,
                              const std::vector<EvalDataset>& datasets,
                              bool with_correction) {
  if (models.empty() || datasets.empty())
    throw ConfigError("evaluate_matrix: need at least one model and dataset");
  for (const EvalModel& m : models)
    if (m.seg == nullptr)
      throw ConfigError("evaluate_matrix: model '" + m.label +
                        "' has no segmentation checkpoint");
  for (const EvalDataset& d : datasets)
    if (d.samples == nullptr || d.samples->empty())
      throw ConfigError("evaluate_matrix: dataset '" + d.label +
                        "' has no test samples");

  MetricsMatrix out;
  for (const EvalModel& m : models) {
    out.row_labels.push_back(m.label);
    out.flag_err_pred.push_back(m.flag_err_pred);
    out.flag_vae.push_back(m.flag_vae);
    out.flag_joint.push_back(m.flag_joint);
  }
  for (const EvalDataset& d : datasets) out.col_labels.push_back(d.label);

  out.dice.assign(models.size(), std::vector<double>(datasets.size(), 0.0));
  out.iou.assign(models.size(), std::vector<double>(datasets.size(), 0.0));
  out.same_domain.assign(models.size(),
                         std::vector<bool>(datasets.size(), false));

  for (size_t r = 0; r < models.size(); ++r) {
    const EvalModel& m = models[r];
    for (size_t c = 0; c < datasets.size(); ++c) {
      const EvalDataset& ds = datasets[c];
      double dsum = 0.0, jsum = 0.0;
      for (const Sample& raw : *ds.samples) {
        Sample s = normalize_fov(raw);
        Tensor<float> img =
            reshape(s.image, {1, 1, s.image.dim(1), s.image.dim(2)});
        Tensor<float> seg_map = segment(*m.seg, img);
        Tensor<float> final_map = seg_map;
        if (with_correction && m.predictor != nullptr)
          final_map = correct(*m.predictor, img, seg_map).corrected;
        Tensor<float> pred =
            binarize(reshape(final_map, s.mask.shape()), 0.5f);
        dsum += dice(pred, s.mask, s.fov);
        jsum += iou(pred, s.mask, s.fov);
      }
      out.dice[r][c] = dsum / ds.samples->size();
      out.iou[r][c] = jsum / ds.samples->size();
      out.same_domain[r][c] = (m.train_domain == ds.label);
    }
    double da = 0.0, ja = 0.0;
    for (size_t c = 0; c < datasets.size(); ++c) {
      da += out.dice[r][c];
      ja += out.iou[r][c];
    }
    out.row_avg_dice.push_back(da / datasets.size());
    out.row_avg_iou.push_back(ja / datasets.size());
  }
  return out;
}

namespace {

std::string pct(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.1f", v * 100.0);
  return buf;
}

std::string flags_str(const MetricsMatrix& m, size_t r, const char* yes,
                      const char* no, const char* sep) {
  std::ostringstream os;
  os << (m.flag_err_pred[r] ? yes : no) << sep << (m.flag_vae[r] ? yes : no)
     << sep << (m.flag_joint[r] ? yes : no);
  return os.str();
}

}  // namespace

std::string matrix_to_csv(const MetricsMatrix& m) {
  std::ostringstream os;
  os << "metric,model,err_pred,vae,joint";
  for (const auto& c : m.col_labels) os << ',' << c;
  os << ",avg\n";
  for (const char* metric : {"dice", "iou"}) {
    const auto& grid = std::string(metric) == "dice" ? m.dice : m.iou;
    const auto& avg =
        std::string(metric) == "dice" ? m.row_avg_dice : m.row_avg_iou;
    for (size_t r = 0; r < m.row_labels.size(); ++r) {
      os << metric << ',' << m.row_labels[r] << ','
         << flags_str(m, r, "1", "0", ",");
      for (size_t c = 0; c < m.col_labels.size(); ++c)
        os << ',' << pct(grid[r][c]);
      os << ',' << pct(avg[r]) << '\n';
    }
  }
  return os.str();
}

std::string matrix_to_markdown(const MetricsMatrix& m) {
  std::ostringstream os;
  for (const char* metric : {"dice", "iou"}) {
    const bool is_dice = std::string(metric) == "dice";
    const auto& grid = is_dice ? m.dice : m.iou;
    const auto& avg = is_dice ? m.row_avg_dice : m.row_avg_iou;
    os << "### " << (is_dice ? "Dice" : "IoU") << " (%)\n\n";
    os << "| Model | Err Pred | VAE | Joint |";
    for (size_t c = 0; c < m.col_labels.size(); ++c) {
      os << ' ' << m.col_labels[c];
      // Mark same-domain columns the way the grey columns are marked.
      bool same = false;
      for (size_t r = 0; r < m.row_labels.size(); ++r)
        same = same || m.same_domain[r][c];
      os << (same ? " (same)" : "") << " |";
    }
    os << " Avg |\n";
    os << "|---|---|---|---|";
    for (size_t c = 0; c < m.col_labels.size(); ++c) os << "---|";
    os << "---|\n";
    for (size_t r = 0; r < m.row_labels.size(); ++r) {
      os << "| " << m.row_labels[r] << " | "
         << flags_str(m, r, "x", " ", " | ") << " |";
      for (size_t c = 0; c < m.col_labels.size(); ++c)
        os << ' ' << pct(grid[r][c]) << " |";
      os << ' ' << pct(avg[r]) << " |\n";
    }
    os << '\n';
  }
  return os.str();
}

size_t count_components(const Tensor<float>& mask) {
  const Shape& sh = mask.shape();
  size_t H = 0, W = 0;
  if (sh.size() == 2) {
    H = sh[0];
    W = sh[1];
  } else if (sh.size() == 3 && sh[0] == 1) {
    H = sh[1];
    W = sh[2];
  } else if (sh.size() == 4 && sh[0] == 1 && sh[1] == 1) {
    H = sh[2];
    W = sh[3];
  } else {
    throw ShapeError("count_components: expected a single-plane mask, got " +
                     shape_str(sh));
  }
  const float* m = mask.data().data();
  std::vector<uint8_t> seen(H * W, 0);
  std::vector<size_t> stack;
  size_t components = 0;
  for (size_t start = 0; start < H * W; ++start) {
    if (m[start] <= 0.5f || seen[start]) continue;
    ++components;
    stack.push_back(start);
    seen[start] = 1;
    while (!stack.empty()) {
      const size_t i = stack.back();
      stack.pop_back();
      const size_t y = i / W, x = i % W;
      const size_t nbrs[4] = {y > 0 ? i - W : i, y + 1 < H ? i + W : i,
                              x > 0 ? i - 1 : i, x + 1 < W ? i + 1 : i};
      for (size_t nb : nbrs) {
        if (nb == i || seen[nb] || m[nb] <= 0.5f) continue;
        seen[nb] = 1;
        stack.push_back(nb);
      }
    }
  }
  return components;
}

}  // namespace errornet
