#include "errornet/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "errornet/error.hpp"
#include "errornet/metrics.hpp"

namespace fs = std::filesystem;

namespace errornet {

const char* stage_name(Stage s) {
  switch (s) {
    case Stage::kSeg: return "seg";
    case Stage::kVae: return "vae";
    case Stage::kErr: return "err";
    case Stage::kJoint: return "joint";
  }
  return "?";
}

Stage stage_from_name(const std::string& name) {
  if (name == "seg") return Stage::kSeg;
  if (name == "vae") return Stage::kVae;
  if (name == "err") return Stage::kErr;
  if (name == "joint") return Stage::kJoint;
  throw ConfigError("unknown stage '" + name +
                    "' (expected seg|vae|err|joint)");
}

void TrainConfig::validate() const {
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (out_dir.empty()) throw ConfigError("training needs an output directory");
  auto need = [](const std::string& path, const char* what,
                 const char* hint) {
    if (path.empty() || !fs::exists(path))
      throw ConfigError(std::string("missing ") + what +
                        " checkpoint; run stage " + hint + " first");
  };
  switch (stage) {
    case Stage::kSeg:
      break;
    case Stage::kVae:
      need(seg_checkpoint, "segmentation", "seg");
      break;
    case Stage::kErr:
      need(seg_checkpoint, "segmentation", "seg");
      need(vae_checkpoint, "error-injection", "vae");
      break;
    case Stage::kJoint:
      need(seg_checkpoint, "segmentation", "seg");
      need(vae_checkpoint, "error-injection", "vae");
      need(err_checkpoint, "error-prediction", "err");
      break;
  }
}

namespace {

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string fmt_float(float v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.9g", static_cast<double>(v));
  return buf;
}

// Stacks per-sample [1,H,W] planes into a [N,1,H,W] batch.
Tensor<float> stack_batch(const std::vector<Sample>& samples,
                          const std::vector<size_t>& idx,
                          const Tensor<float> Sample::* plane) {
  const Shape& sh = (samples[idx[0]].*plane).shape();
  const size_t HW = sh[1] * sh[2];
  Tensor<float> out = Tensor<float>::zeros({idx.size(), 1, sh[1], sh[2]});
  float* dst = out.data_mut().data();
  for (size_t k = 0; k < idx.size(); ++k) {
    auto src = (samples[idx[k]].*plane).data();
    std::copy(src.begin(), src.end(), dst + k * HW);
  }
  return out;
}

// Stacks cached [1,1,H,W] maps into one [N,1,H,W] batch.
Tensor<float> stack_maps(const std::vector<Tensor<float>>& maps,
                         const std::vector<size_t>& idx) {
  const Shape& sh = maps[idx[0]].shape();
  const size_t HW = sh[2] * sh[3];
  Tensor<float> out = Tensor<float>::zeros({idx.size(), 1, sh[2], sh[3]});
  float* dst = out.data_mut().data();
  for (size_t k = 0; k < idx.size(); ++k) {
    auto src = maps[idx[k]].data();
    std::copy(src.begin(), src.end(), dst + k * HW);
  }
  return out;
}

Tensor<float> as_batch(const Tensor<float>& plane) {
  return reshape(plane, {1, 1, plane.dim(1), plane.dim(2)});
}

struct LogRow {
  uint64_t step = 0;
  std::string stage;
  float loss = 0.0f;
  std::string loss_seg, loss_recon, loss_kl, loss_pred;
  std::string val_metric;

  std::string render() const {
    std::ostringstream os;
    os << step << ',' << stage << ',' << fmt_float(loss) << ',' << loss_seg
       << ',' << loss_recon << ',' << loss_kl << ',' << loss_pred << ','
       << val_metric;
    return os.str();
  }
};

NetworkSpec spec_from_meta(const CheckpointMeta& meta) {
  NetworkSpec spec;
  spec.resolution = std::stoull(meta.extra.at("resolution"));
  spec.base_width = std::stoull(meta.extra.at("base_width"));
  spec.width_scale = std::stod(meta.extra.at("width_scale"));
  return spec;
}

Network load_network(NetKind kind, const std::string& ckpt_path,
                     const std::string& store_name) {
  LoadedCheckpoint ck = load_checkpoint(ckpt_path);
  const NetworkSpec spec = spec_from_meta(ck.meta);
  Rng init(0);
  Network net = kind == NetKind::kSeg   ? build_seg_unet(spec, init)
                : kind == NetKind::kVae ? build_vae(spec, init)
                                        : build_err_predictor(spec, init);
  assign_params(net.store(), ck.store(store_name));
  return net;
}

}  // namespace

Network load_seg_network(const std::string& p) {
  return load_network(NetKind::kSeg, p, "seg");
}
Network load_vae_network(const std::string& p) {
  return load_network(NetKind::kVae, p, "vae");
}
Network load_predictor_network(const std::string& p) {
  return load_network(NetKind::kErrPredictor, p, "err");
}

double validation_dice(Network& seg, Network* predictor,
                       const std::vector<Sample>& raw_samples) {
  if (raw_samples.empty())
    throw ConfigError("validation requires at least one sample");
  double acc = 0.0;
  for (const Sample& raw : raw_samples) {
    Sample s = normalize_fov(raw);
    Tensor<float> img = as_batch(s.image);
    Tensor<float> seg_map = segment(seg, img);
    Tensor<float> final_map = seg_map;
    if (predictor != nullptr)
      final_map = correct(*predictor, img, seg_map).corrected;
    Tensor<float> pred = binarize(reshape(final_map, s.mask.shape()), 0.5f);
    acc += dice(pred, s.mask, s.fov);
  }
  return acc / raw_samples.size();
}

double validation_vae_loss(Network& seg, Network& vae,
                           const std::vector<Sample>& raw_samples,
                           float kl_weight) {
  if (raw_samples.empty())
    throw ConfigError("validation requires at least one sample");
  double acc = 0.0;
  for (const Sample& raw : raw_samples) {
    Sample s = normalize_fov(raw);
    Tensor<float> img = as_batch(s.image);
    Tensor<float> seg_map = segment(seg, img).detach();
    ForwardResult fr = vae.forward(seg_map, RunMode::kEval);
    LossValue<float> lv =
        vae_loss(fr.out, seg_map, fr.mu, fr.log_var, kl_weight);
    acc += lv.value();
  }
  return acc / raw_samples.size();
}

namespace {

// Shared implementation of the four stages.
class StageRunner {
 public:
  StageRunner(const TrainConfig& cfg, const DatasetSplits& data)
      : cfg_(cfg), data_(data) {
    cfg_.validate();
    if (data_.train.empty())
      throw ConfigError("training split is empty");
    if (data_.val.empty())
      throw ConfigError("validation split is empty (model selection needs it)");

    // Normalized copies of the training samples.
    train_.reserve(data_.train.size());
    for (const Sample& s : data_.train) train_.push_back(normalize_fov(s));

    build_networks();
    load_prerequisites();
    apply_freezing();
  }

  TrainResult run() {
    fs::create_directories(cfg_.out_dir);
    const std::string last_path = (fs::path(cfg_.out_dir) / "last.ckpt").string();
    const std::string best_path = (fs::path(cfg_.out_dir) / "best.ckpt").string();
    const std::string log_path =
        (fs::path(cfg_.out_dir) / "train_log.csv").string();

    size_t start_epoch = 0;
    if (cfg_.resume && fs::exists(last_path)) {
      start_epoch = restore(last_path);
    } else {
      rng_.seed(mix_seed(cfg_.seed, 0x747261696eULL));
      std::ofstream log(log_path, std::ios::trunc);
      log << "step,stage,loss,loss_seg,loss_recon,loss_kl,loss_pred,"
             "val_metric\n";
      // The starting state is a selection candidate: the retained model can
      // never be worse than its initialization on the validation metric.
      best_metric_ = compute_val_metric();
      save(best_path);
    }

    std::ofstream log(log_path, std::ios::app);
    if (!log) throw IoError("cannot open training log: " + log_path);

    cache_frozen_maps();

    TrainResult result;
    size_t epoch = start_epoch;
    for (; epoch < cfg_.epochs; ++epoch) {
      if (patience_used_ >= cfg_.patience) {
        result.early_stopped = true;
        break;
      }
      std::vector<size_t> order(train_.size());
      for (size_t i = 0; i < order.size(); ++i) order[i] = i;
      rng_.shuffle(order);

      LogRow pending;
      bool has_pending = false;
      for (size_t b = 0; b < order.size(); b += cfg_.batch_size) {
        std::vector<size_t> idx(
            order.begin() + b,
            order.begin() + std::min(order.size(), b + cfg_.batch_size));
        LogRow row;
        try {
          row = train_step(idx);
        } catch (const NumericError& e) {
          throw NumericError(std::string(e.what()) + " (training step " +
                             std::to_string(global_step_ + 1) + ")");
        }
        ++global_step_;
        row.step = global_step_;
        row.stage = stage_name(cfg_.stage);
        if (has_pending) log << pending.render() << '\n';
        pending = row;
        has_pending = true;
      }

      const double val = compute_val_metric();
      pending.val_metric = fmt_double(val);
      log << pending.render() << '\n';
      log.flush();

      if (improves(val)) {
        best_metric_ = val;
        patience_used_ = 0;
        epochs_done_ = epoch + 1;
        save(best_path);
      } else {
        ++patience_used_;
      }
      epochs_done_ = epoch + 1;
      save(last_path);
    }

    result.best_checkpoint = best_path;
    result.last_checkpoint = last_path;
    result.best_metric = best_metric_;
    result.epochs_completed = epochs_done_;
    result.global_steps = global_step_;
    return result;
  }

 private:
  void build_networks() {
    Rng seg_init(mix_seed(cfg_.seed, 0x736567ULL));
    seg_ = build_seg_unet(cfg_.spec, seg_init);
    if (cfg_.stage != Stage::kSeg) {
      Rng vae_init(mix_seed(cfg_.seed, 0x766165ULL));
      vae_ = build_vae(cfg_.spec, vae_init);
    }
    if (cfg_.stage == Stage::kErr || cfg_.stage == Stage::kJoint) {
      Rng err_init(mix_seed(cfg_.seed, 0x657272ULL));
      err_ = build_err_predictor(cfg_.spec, err_init);
    }
  }

  void load_prerequisites() {
    if (!cfg_.seg_checkpoint.empty() && cfg_.stage != Stage::kSeg)
      assign_params(seg_.store(),
                    load_checkpoint(cfg_.seg_checkpoint).store("seg"));
    if (!cfg_.vae_checkpoint.empty() &&
        (cfg_.stage == Stage::kErr || cfg_.stage == Stage::kJoint))
      assign_params(vae_.store(),
                    load_checkpoint(cfg_.vae_checkpoint).store("vae"));
    if (!cfg_.err_checkpoint.empty() && cfg_.stage == Stage::kJoint)
      assign_params(err_.store(),
                    load_checkpoint(cfg_.err_checkpoint).store("err"));
  }

  void apply_freezing() {
    switch (cfg_.stage) {
      case Stage::kSeg:
        break;
      case Stage::kVae:
        seg_.set_frozen(true);
        break;
      case Stage::kErr:
        seg_.set_frozen(true);
        vae_.set_frozen(true);
        break;
      case Stage::kJoint:
        vae_.set_frozen(true);
        break;
    }
  }

  // Frozen upstream segmentations can be computed once per run.
  void cache_frozen_maps() {
    if (cfg_.stage == Stage::kVae || cfg_.stage == Stage::kErr) {
      s_cache_.clear();
      s_cache_.reserve(train_.size());
      for (const Sample& s : train_)
        s_cache_.push_back(segment(seg_, as_batch(s.image)).detach());
    }
  }

  bool improves(double val) const {
    return cfg_.stage == Stage::kVae ? val < best_metric_ : val > best_metric_;
  }

  double compute_val_metric() {
    if (cfg_.stage == Stage::kSeg)
      return validation_dice(seg_, nullptr, data_.val);
    if (cfg_.stage == Stage::kVae)
      return validation_vae_loss(seg_, vae_, data_.val, cfg_.kl_weight);
    return validation_dice(seg_, &err_, data_.val);
  }

  LogRow train_step(const std::vector<size_t>& idx) {
    Tensor<float> img = stack_batch(train_, idx, &Sample::image);
    Tensor<float> truth = stack_batch(train_, idx, &Sample::mask);
    Tensor<float> fov = stack_batch(train_, idx, &Sample::fov);
    LogRow row;

    Graph<float> graph;
    Graph<float>::Scope scope(graph);

    switch (cfg_.stage) {
      case Stage::kSeg: {
        Tensor<float> s = seg_.forward(img, RunMode::kTrain).out;
        LossValue<float> loss = seg_loss(s, truth, fov);
        row.loss = loss.value();
        row.loss_seg = fmt_float(loss.component("bce"));
        graph.backward(loss.scalar);
        adam_step(seg_.store(), cfg_.lr);
        break;
      }
      case Stage::kVae: {
        Tensor<float> s = stack_maps(s_cache_, idx);
        ForwardResult fr = vae_.forward(s, RunMode::kTrain, &rng_);
        LossValue<float> loss =
            vae_loss(fr.out, s, fr.mu, fr.log_var, cfg_.kl_weight);
        row.loss = loss.value();
        row.loss_recon = fmt_float(loss.component("recon"));
        row.loss_kl = fmt_float(loss.component("kl"));
        graph.backward(loss.scalar);
        adam_step(vae_.store(), cfg_.lr);
        break;
      }
      case Stage::kErr: {
        Tensor<float> s = stack_maps(s_cache_, idx);
        Tensor<float> degraded =
            cfg_.use_vae ? vae_.forward(s, RunMode::kInject, &rng_).out.detach()
                         : s;
        Tensor<float> target =
            err_target(degraded, truth, cfg_.err_target_mode);
        const Tensor<float> pred_in[2] = {img, degraded};
        Tensor<float> e_hat =
            err_.forward(std::span<const Tensor<float>>(pred_in, 2),
                         RunMode::kTrain)
                .out;
        LossValue<float> loss = err_pred_loss(e_hat, target);
        row.loss = loss.value();
        row.loss_pred = fmt_float(loss.component("pred"));
        graph.backward(loss.scalar);
        adam_step(err_.store(), cfg_.lr);
        break;
      }
      case Stage::kJoint: {
        Tensor<float> s = seg_.forward(img, RunMode::kTrain).out;
        Tensor<float> s_det = s.detach();
        Tensor<float> degraded =
            vae_.forward(s_det, RunMode::kInject, &rng_).out.detach();
        Tensor<float> target =
            err_target(degraded, truth, cfg_.err_target_mode);
        const Tensor<float> pred_in[2] = {
            img, cfg_.joint_input == JointInput::kInjected ? degraded : s};
        Tensor<float> e_hat =
            err_.forward(std::span<const Tensor<float>>(pred_in, 2),
                         RunMode::kTrain)
                .out;
        LossValue<float> l_pred = err_pred_loss(e_hat, target);
        LossValue<float> l_seg = seg_loss(s, truth, fov);
        Tensor<float> total = add(l_pred.scalar, l_seg.scalar);
        row.loss = total.item();
        row.loss_seg = fmt_float(l_seg.value());
        row.loss_pred = fmt_float(l_pred.value());
        if (!std::isfinite(static_cast<double>(row.loss)))
          throw NumericError("joint loss is non-finite");
        graph.backward(total);
        adam_step(seg_.store(), cfg_.lr);
        adam_step(err_.store(), cfg_.lr);
        break;
      }
    }
    return row;
  }

  void save(const std::string& path) {
    CheckpointMeta meta;
    meta.stage = stage_name(cfg_.stage);
    meta.global_step = global_step_;
    meta.rng_state = rng_.serialize();
    meta.extra["resolution"] = std::to_string(cfg_.spec.resolution);
    meta.extra["base_width"] = std::to_string(cfg_.spec.base_width);
    meta.extra["width_scale"] = fmt_double(cfg_.spec.width_scale);
    meta.extra["epochs_done"] = std::to_string(epochs_done_);
    meta.extra["best_metric"] = fmt_double(best_metric_);
    meta.extra["patience_used"] = std::to_string(patience_used_);
    meta.extra["seed"] = std::to_string(cfg_.seed);
    meta.extra["use_vae"] = cfg_.use_vae ? "1" : "0";
    meta.extra["err_target"] =
        cfg_.err_target_mode == ErrTargetMode::kSigned ? "signed" : "squared";
    meta.extra["joint_input"] =
        cfg_.joint_input == JointInput::kInjected ? "injected" : "raw";

    std::vector<std::pair<std::string, const ParamStore*>> stores;
    switch (cfg_.stage) {
      case Stage::kSeg:
        stores = {{"seg", &seg_.store()}};
        break;
      case Stage::kVae:
        stores = {{"vae", &vae_.store()}};
        break;
      case Stage::kErr:
        stores = {{"err", &err_.store()}};
        break;
      case Stage::kJoint:
        stores = {{"seg", &seg_.store()}, {"err", &err_.store()}};
        break;
    }
    save_checkpoint(path, meta, stores);
  }

  size_t restore(const std::string& path) {
    LoadedCheckpoint ck = load_checkpoint(path);
    if (ck.meta.stage != stage_name(cfg_.stage))
      throw ConfigError("resume checkpoint stage '" + ck.meta.stage +
                        "' does not match configured stage '" +
                        stage_name(cfg_.stage) + "'");
    switch (cfg_.stage) {
      case Stage::kSeg:
        assign_params(seg_.store(), ck.store("seg"));
        break;
      case Stage::kVae:
        assign_params(vae_.store(), ck.store("vae"));
        break;
      case Stage::kErr:
        assign_params(err_.store(), ck.store("err"));
        break;
      case Stage::kJoint:
        assign_params(seg_.store(), ck.store("seg"));
        assign_params(err_.store(), ck.store("err"));
        break;
    }
    rng_.deserialize(ck.meta.rng_state);
    global_step_ = ck.meta.global_step;
    epochs_done_ = std::stoull(ck.meta.extra.at("epochs_done"));
    best_metric_ = std::stod(ck.meta.extra.at("best_metric"));
    patience_used_ = std::stoull(ck.meta.extra.at("patience_used"));
    return epochs_done_;
  }

  TrainConfig cfg_;
  const DatasetSplits& data_;
  std::vector<Sample> train_;  // normalized
  std::vector<Tensor<float>> s_cache_;
  Network seg_, vae_, err_;
  Rng rng_;
  uint64_t global_step_ = 0;
  size_t epochs_done_ = 0;
  size_t patience_used_ = 0;
  double best_metric_ = 0.0;
};

}  // namespace

TrainResult train_stage(const TrainConfig& config, const DatasetSplits& data) {
  StageRunner runner(config, data);
  return runner.run();
}

TrainResult train_joint(const TrainConfig& config, const DatasetSplits& data) {
  if (config.stage != Stage::kJoint)
    throw ConfigError("train_joint requires stage=joint");
  return train_stage(config, data);
}

}  // namespace errornet
