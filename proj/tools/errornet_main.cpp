#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "errornet/bench.hpp"
#include "errornet/checkpoint.hpp"
#include "errornet/config.hpp"
#include "errornet/data.hpp"
#include "errornet/error.hpp"
#include "errornet/image.hpp"
#include "errornet/metrics.hpp"
#include "errornet/train.hpp"

namespace fs = std::filesystem;
using namespace errornet;

namespace {

std::string resolve_out(const std::string& flag, const char* subcommand) {
  if (!flag.empty()) return flag;
  if (const char* root = std::getenv("ERRORNET_OUT"))
    return (fs::path(root) / subcommand).string();
  throw ConfigError("no output directory: pass --out or set ERRORNET_OUT");
}

SynthDomain domain_from_flags(const std::string& preset, int vmin, int vmax,
                              double tmin, double tmax, double curvature,
                              double contrast, bool reflex, double reflex_b,
                              double noise, double blur) {
  SynthDomain d;
  if (!preset.empty()) {
    d = synth_preset(preset);
  } else {
    d.name = "custom";
  }
  if (vmin > 0) d.vessel_count_min = vmin;
  if (vmax > 0) d.vessel_count_max = vmax;
  if (tmin > 0) d.thickness_min = static_cast<float>(tmin);
  if (tmax > 0) d.thickness_max = static_cast<float>(tmax);
  if (curvature >= 0) d.curvature = static_cast<float>(curvature);
  if (contrast > 0) d.contrast = static_cast<float>(contrast);
  if (reflex) {
    d.central_reflex = true;
    if (reflex_b > 0) d.reflex_brightness = static_cast<float>(reflex_b);
  }
  if (noise >= 0) d.noise_sigma = static_cast<float>(noise);
  if (blur >= 0) d.blur_radius = static_cast<float>(blur);
  d.validate();
  return d;
}

int cmd_synth(const std::string& out_flag, const SynthDomain& domain, size_t n,
              size_t resolution, uint64_t seed) {
  const std::string out = resolve_out(out_flag, "synth");
  auto samples = synth_generate(domain, n, resolution, seed);
  materialize_dataset(samples, domain, resolution, seed, out);
  std::cout << "wrote " << samples.size() << " samples to " << out << "\n";
  return 0;
}

int cmd_synth_replay(const std::string& manifest_path,
                     const std::string& out_flag) {
  const SynthManifest m = read_manifest(manifest_path);
  return cmd_synth(out_flag, m.domain, m.n, m.resolution, m.seed);
}

int cmd_train(const RunConfig& rc) {
  TrainConfig tc;
  tc.stage = stage_from_name(rc.get("stage"));
  tc.spec.resolution = rc.get_uint("resolution");
  tc.spec.base_width = rc.get_uint("base_width");
  tc.spec.width_scale = rc.get_double("width_scale");
  tc.epochs = rc.get_uint("epochs");
  tc.batch_size = rc.get_uint("batch_size");
  tc.lr = static_cast<float>(rc.get_double("lr"));
  tc.seed = rc.get_uint("seed");
  tc.patience = rc.get_uint("patience");
  tc.kl_weight = static_cast<float>(rc.get_double("kl_weight"));
  tc.use_vae = rc.get_bool("use_vae");
  tc.resume = rc.get_bool("resume");
  const std::string et = rc.get("err_target");
  if (et == "signed")
    tc.err_target_mode = ErrTargetMode::kSigned;
  else if (et == "squared")
    tc.err_target_mode = ErrTargetMode::kSquared;
  else
    throw ConfigError("err_target must be signed|squared, got '" + et + "'");
  const std::string ji = rc.get("joint_input");
  if (ji == "injected")
    tc.joint_input = JointInput::kInjected;
  else if (ji == "raw")
    tc.joint_input = JointInput::kRaw;
  else
    throw ConfigError("joint_input must be injected|raw, got '" + ji + "'");
  tc.seg_checkpoint = rc.get("ckpt.seg");
  tc.vae_checkpoint = rc.get("ckpt.vae");
  tc.err_checkpoint = rc.get("ckpt.err");
  tc.out_dir = resolve_out(rc.get("out"), "train");

  if (rc.get("data.root").empty() || rc.get("data.domain").empty())
    throw ConfigError("training needs data.root and data.domain");
  SplitSpec split{rc.get_uint("split.train"), rc.get_uint("split.val"),
                  rc.get_uint("split.test")};
  DatasetSplits data = load_dataset(rc.get("data.root"), rc.get("data.domain"),
                                    split, tc.spec.resolution, tc.seed);

  rc.write_echo(tc.out_dir);
  TrainResult res = train_stage(tc, data);
  std::cout << "stage " << stage_name(tc.stage) << ": best validation metric "
            << res.best_metric << " after " << res.epochs_completed
            << " epochs; checkpoint " << res.best_checkpoint << "\n";
  return 0;
}

struct LoadedModelDir {
  std::string label;
  Network seg, vae;
  Network errnv, err, joint_seg, joint_err;
  bool has_errnv = false, has_err = false, has_joint = false;
};

int cmd_eval(const std::vector<std::string>& model_flags,
             const std::vector<std::string>& data_flags, size_t test_count,
             size_t resolution, uint64_t seed, bool no_correction,
             const std::string& out_flag) {
  if (model_flags.empty() || data_flags.empty())
    throw ConfigError("eval needs at least one --model and one --data");
  const std::string out = resolve_out(out_flag, "eval");

  auto split_flag = [](const std::string& s, const char* what) {
    const size_t eq = s.find('=');
    if (eq == std::string::npos)
      throw ConfigError(std::string(what) + " must be label=path, got '" + s +
                        "'");
    return std::pair<std::string, std::string>(s.substr(0, eq),
                                               s.substr(eq + 1));
  };

  // Datasets: label = domain name, path = <root>/<domain>.
  std::vector<std::pair<std::string, DatasetSplits>> datasets;
  for (const std::string& f : data_flags) {
    auto [label, path] = split_flag(f, "--data");
    const fs::path p(path);
    size_t count = test_count;
    if (count == 0) {
      size_t files = 0;
      if (fs::is_directory(p / "images"))
        for (const auto& e : fs::directory_iterator(p / "images"))
          files += e.is_regular_file();
      count = files;
    }
    SplitSpec split{0, 0, count};
    datasets.emplace_back(
        label, load_dataset(p.parent_path().string(), p.filename().string(),
                            split, resolution, seed));
  }

  // Models: label = train domain, path = a runs directory holding
  // seg/, err_novae/, err/, joint/ stage subdirectories.
  std::vector<LoadedModelDir> models;
  for (const std::string& f : model_flags) {
    auto [label, path] = split_flag(f, "--model");
    const fs::path p(path);
    const std::string seg_ck = (p / "seg" / "best.ckpt").string();
    if (!fs::exists(seg_ck))
      throw ConfigError("model '" + label + "': missing checkpoint " + seg_ck);
    LoadedModelDir m;
    m.label = label;
    m.seg = load_seg_network(seg_ck);
    const std::string errnv_ck = (p / "err_novae" / "best.ckpt").string();
    if (fs::exists(errnv_ck)) {
      m.errnv = load_predictor_network(errnv_ck);
      m.has_errnv = true;
    }
    const std::string err_ck = (p / "err" / "best.ckpt").string();
    if (fs::exists(err_ck)) {
      m.err = load_predictor_network(err_ck);
      m.has_err = true;
    }
    const std::string joint_ck = (p / "joint" / "best.ckpt").string();
    if (fs::exists(joint_ck)) {
      m.joint_seg = load_seg_network(joint_ck);
      m.joint_err = load_predictor_network(joint_ck);
      m.has_joint = true;
    }
    models.push_back(std::move(m));
  }

  std::vector<EvalModel> rows;
  for (LoadedModelDir& m : models) {
    EvalModel base{m.label + "/base", m.label, &m.seg, nullptr, false, false,
                   false};
    rows.push_back(base);
    if (m.has_errnv)
      rows.push_back({m.label + "/errpred", m.label, &m.seg, &m.errnv, true,
                      false, false});
    if (m.has_err)
      rows.push_back(
          {m.label + "/vae", m.label, &m.seg, &m.err, true, true, false});
    if (m.has_joint)
      rows.push_back({m.label + "/joint", m.label, &m.joint_seg, &m.joint_err,
                      true, true, true});
  }

  std::vector<EvalDataset> sets;
  for (auto& [label, splits] : datasets) sets.push_back({label, &splits.test});

  MetricsMatrix matrix = evaluate_matrix(rows, sets, !no_correction);
  fs::create_directories(out);
  {
    std::ofstream csv(fs::path(out) / "matrix.csv");
    csv << matrix_to_csv(matrix);
    std::ofstream md(fs::path(out) / "matrix.md");
    md << matrix_to_markdown(matrix);
  }
  std::cout << matrix_to_markdown(matrix);
  return 0;
}

// Signed error maps are rendered as round((v+1)/2 * 255).
void write_signed_map(const std::string& path,
                      const std::vector<float>& plane, size_t w, size_t h) {
  std::vector<float> enc(plane.size());
  for (size_t i = 0; i < plane.size(); ++i) enc[i] = (plane[i] + 1.0f) * 0.5f;
  write_png_gray(path, w, h, quantize_u8(enc));
  std::ofstream hdr(path + ".header.txt");
  hdr << "signed map encoding: pixel = round((value + 1) / 2 * 255); value in "
         "[-1, 1]\n";
}

int cmd_infer(const std::string& model_dir, const std::string& seg_ckpt,
              const std::string& predictor_ckpt, const std::string& input,
              const std::string& fov_path, bool do_correct,
              const std::string& out_flag) {
  const std::string out = resolve_out(out_flag, "infer");
  fs::create_directories(out);

  std::string seg_path = seg_ckpt;
  std::string pred_path = predictor_ckpt;
  if (!model_dir.empty()) {
    if (seg_path.empty()) {
      const fs::path joint = fs::path(model_dir) / "joint" / "best.ckpt";
      seg_path = fs::exists(joint)
                     ? joint.string()
                     : (fs::path(model_dir) / "seg" / "best.ckpt").string();
    }
    if (pred_path.empty()) {
      for (const char* stage : {"joint", "err", "err_novae"}) {
        const fs::path p = fs::path(model_dir) / stage / "best.ckpt";
        if (fs::exists(p)) {
          pred_path = p.string();
          break;
        }
      }
    }
  }
  if (seg_path.empty())
    throw ConfigError("infer needs --model or --seg-checkpoint");
  Network seg_net = load_seg_network(seg_path);
  Network predictor;
  bool has_predictor = false;
  if (do_correct) {
    if (pred_path.empty())
      throw ConfigError("--correct needs a predictor checkpoint");
    predictor = load_predictor_network(pred_path);
    has_predictor = true;
  }
  const size_t R = seg_net.spec().resolution;

  std::vector<std::string> files;
  if (fs::is_directory(input)) {
    for (const auto& e : fs::directory_iterator(input))
      if (e.is_regular_file()) files.push_back(e.path().string());
    std::sort(files.begin(), files.end());
  } else {
    files.push_back(input);
  }
  if (files.empty()) throw DataError("no input images under " + input);

  for (const std::string& file : files) {
    ImageU8 raw = read_image(file);
    std::vector<float> gray = to_gray_float(raw);
    std::vector<float> fov;
    if (!fov_path.empty()) {
      ImageU8 fraw = read_image(fov_path);
      fov = to_gray_float(fraw);
    } else {
      fov.assign(raw.width * raw.height, 1.0f);
      for (size_t i = 0; i < fov.size(); ++i) {
        bool dark = true;
        for (size_t c = 0; c < raw.channels; ++c)
          if (raw.pixels[i * raw.channels + c] >= 10) dark = false;
        if (dark) fov[i] = 0.0f;
      }
    }

    Sample s;
    s.id = fs::path(file).stem().string();
    s.domain = "infer";
    s.image = Tensor<float>::from(
        {1, R, R}, resize_bilinear(gray, raw.width, raw.height, R, R));
    std::vector<float> rf = resize_nearest(fov, raw.width, raw.height, R, R);
    for (float& v : rf) v = v >= 0.5f ? 1.0f : 0.0f;
    s.fov = Tensor<float>::from({1, R, R}, rf);
    s.mask = Tensor<float>::zeros({1, R, R});
    Sample norm = normalize_fov(s);

    Tensor<float> img = reshape(norm.image, {1, 1, R, R});
    Tensor<float> prob = segment(seg_net, img);

    auto to_native = [&](const Tensor<float>& t) {
      std::vector<float> v(t.data().begin(), t.data().end());
      return resize_bilinear(v, R, R, raw.width, raw.height);
    };

    const std::string stem = (fs::path(out) / s.id).string();
    std::vector<float> prob_native = to_native(prob);
    write_png_gray(stem + "_prob.png", raw.width, raw.height,
                   quantize_u8(prob_native));
    std::vector<float> mask_native = prob_native;
    for (float& v : mask_native) v = v >= 0.5f ? 1.0f : 0.0f;
    write_png_gray(stem + "_mask.png", raw.width, raw.height,
                   quantize_u8(mask_native));

    if (has_predictor) {
      Correction corr = correct(predictor, img, prob);
      std::vector<float> err_native = to_native(corr.error_map);
      write_signed_map(stem + "_err.png", err_native, raw.width, raw.height);
      std::vector<float> corr_native = to_native(corr.corrected);
      write_png_gray(stem + "_corrected_prob.png", raw.width, raw.height,
                     quantize_u8(corr_native));
      for (float& v : corr_native) v = v >= 0.5f ? 1.0f : 0.0f;
      write_png_gray(stem + "_corrected_mask.png", raw.width, raw.height,
                     quantize_u8(corr_native));
    }
    std::cout << "processed " << file << "\n";
  }
  return 0;
}

int cmd_bench(BenchConfig cfg, const std::string& out_flag) {
  cfg.out_dir = resolve_out(out_flag, "bench");
  BenchResult res = run_bench(cfg);
  const BenchVariant& base = res.variant("base");
  const BenchVariant& errpred = res.variant("errpred");
  const BenchVariant& vae = res.variant("vae");
  const BenchVariant& joint = res.variant("joint");
  auto pct = [](double v) { return v * 100.0; };
  std::cout << "bench (" << res.per_seed.size() << " seeds, train domain "
            << cfg.train_domain << ")\n";
  std::cout << "  shifted-domain mean dice: base " << pct(base.shifted_mean_dice)
            << ", errpred " << pct(errpred.shifted_mean_dice) << ", vae "
            << pct(vae.shifted_mean_dice) << ", joint "
            << pct(joint.shifted_mean_dice) << "\n";
  std::cout << "  same-domain dice: base " << pct(base.same_domain_dice)
            << ", joint " << pct(joint.same_domain_dice) << "\n";
  std::cout << "  joint - base (shifted): "
            << pct(joint.shifted_mean_dice - base.shifted_mean_dice)
            << " dice points\n";
  std::cout << "  wall time: " << res.wall_seconds << " s\n";
  std::cout << "  reports under " << cfg.out_dir << "/reports\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"errornet: segmentation error correction toolkit"};
  app.require_subcommand(1);

  // --- synth ---
  auto* synth = app.add_subcommand("synth", "generate a synthetic dataset");
  std::string sy_out, sy_preset, sy_manifest;
  size_t sy_n = 16, sy_res = 64;
  uint64_t sy_seed = 1;
  int sy_vmin = 0, sy_vmax = 0;
  double sy_tmin = 0, sy_tmax = 0, sy_curv = -1, sy_contrast = 0,
         sy_reflexb = 0, sy_noise = -1, sy_blur = -1;
  bool sy_reflex = false;
  synth->add_option("--preset", sy_preset,
                    "domain preset (chase-like, drive-like, aria-like, "
                    "stare-like, hrf-like)");
  synth->add_option("--from-manifest", sy_manifest,
                    "regenerate from a manifest.json");
  synth->add_option("-n,--count", sy_n, "number of samples");
  synth->add_option("--seed", sy_seed, "generation seed");
  synth->add_option("--res", sy_res, "resolution in pixels");
  synth->add_option("--out", sy_out, "output dataset directory");
  synth->add_option("--vessels-min", sy_vmin, "vessel count lower bound");
  synth->add_option("--vessels-max", sy_vmax, "vessel count upper bound");
  synth->add_option("--thickness-min", sy_tmin, "vessel thickness (px)");
  synth->add_option("--thickness-max", sy_tmax, "vessel thickness (px)");
  synth->add_option("--curvature", sy_curv, "centerline curvature scale");
  synth->add_option("--contrast", sy_contrast, "vessel/background gap (0,1]");
  synth->add_flag("--reflex", sy_reflex, "add a central vessel reflex");
  synth->add_option("--reflex-brightness", sy_reflexb, "reflex brightness");
  synth->add_option("--noise", sy_noise, "gaussian noise sigma");
  synth->add_option("--blur", sy_blur, "gaussian blur radius");

  // --- train ---
  auto* train = app.add_subcommand("train", "train one pipeline stage");
  std::string tr_config;
  std::vector<std::string> tr_sets;
  std::map<std::string, std::string> tr_flag_values;
  train->add_option("--config", tr_config, "key=value config file");
  train->add_option("--set", tr_sets, "override: key=value (repeatable)");
  for (const auto& def : RunConfig::registry()) {
    tr_flag_values[def.key] = {};
    train->add_option("--" + def.key, tr_flag_values[def.key], def.help);
  }

  // --- eval ---
  auto* eval = app.add_subcommand("eval", "cross-domain evaluation matrix");
  std::vector<std::string> ev_models, ev_datas;
  std::string ev_out;
  size_t ev_test = 0, ev_res = 64;
  uint64_t ev_seed = 1;
  bool ev_nocorr = false;
  eval->add_option("--model", ev_models,
                   "label=runs-dir with stage checkpoints (repeatable)");
  eval->add_option("--data", ev_datas,
                   "label=dataset-domain-dir (repeatable)");
  eval->add_option("--test-count", ev_test,
                   "test samples per dataset (0 = all files)");
  eval->add_option("--res", ev_res, "evaluation resolution");
  eval->add_option("--seed", ev_seed, "split seed");
  eval->add_flag("--no-correction", ev_nocorr, "score raw segmentations only");
  eval->add_option("--out", ev_out, "report directory");

  // --- infer ---
  auto* infer = app.add_subcommand("infer", "segment images (optionally "
                                            "with error correction)");
  std::string in_model, in_seg, in_pred, in_input, in_fov, in_out;
  bool in_correct = false;
  infer->add_option("--model", in_model, "runs directory with checkpoints");
  infer->add_option("--seg-checkpoint", in_seg, "segmentation checkpoint");
  infer->add_option("--predictor-checkpoint", in_pred,
                    "error-predictor checkpoint");
  infer->add_option("--input", in_input, "image file or directory")
      ->required();
  infer->add_option("--fov", in_fov, "field-of-view mask image");
  infer->add_flag("--correct", in_correct, "apply the predicted error map");
  infer->add_option("--out", in_out, "output directory");

  // --- bench ---
  auto* bench = app.add_subcommand(
      "bench", "desk-scale cross-domain benchmark (full pipeline)");
  BenchConfig bc;
  std::string be_out;
  bench->add_option("--out", be_out, "benchmark output directory");
  bench->add_option("--seed", bc.seed, "master seed");
  bench->add_option("--seeds", bc.num_seeds, "number of seeds to average");
  bench->add_option("--train-domain", bc.train_domain, "training preset");
  bench->add_option("--res", bc.spec.resolution, "resolution");
  bench->add_option("--base-width", bc.spec.base_width, "base channel width");
  bench->add_option("--n-train", bc.n_train, "training samples");
  bench->add_option("--n-val", bc.n_val, "validation samples");
  bench->add_option("--n-test", bc.n_test, "test samples per domain");
  bench->add_option("--seg-epochs", bc.seg_epochs, "seg stage epochs");
  bench->add_option("--vae-epochs", bc.vae_epochs, "vae stage epochs");
  bench->add_option("--err-epochs", bc.err_epochs, "err stage epochs");
  bench->add_option("--joint-epochs", bc.joint_epochs, "joint stage epochs");
  bench->add_option("--lr", bc.lr, "stage learning rate");
  bench->add_option("--joint-lr", bc.joint_lr, "joint learning rate");
  bench->add_option("--kl-weight", bc.kl_weight, "VAE KL weight");

  CLI11_PARSE(app, argc, argv);

  try {
    if (synth->parsed()) {
      if (!sy_manifest.empty()) return cmd_synth_replay(sy_manifest, sy_out);
      const SynthDomain d = domain_from_flags(
          sy_preset, sy_vmin, sy_vmax, sy_tmin, sy_tmax, sy_curv, sy_contrast,
          sy_reflex, sy_reflexb, sy_noise, sy_blur);
      return cmd_synth(sy_out, d, sy_n, sy_res, sy_seed);
    }
    if (train->parsed()) {
      RunConfig rc;
      if (!tr_config.empty()) rc.load_file(tr_config);
      for (const auto& [key, value] : tr_flag_values)
        if (!value.empty()) rc.set(key, value);
      for (const std::string& kv : tr_sets) {
        const size_t eq = kv.find('=');
        if (eq == std::string::npos)
          throw ConfigError("--set expects key=value, got '" + kv + "'");
        rc.set(kv.substr(0, eq), kv.substr(eq + 1));
      }
      return cmd_train(rc);
    }
    if (eval->parsed())
      return cmd_eval(ev_models, ev_datas, ev_test, ev_res, ev_seed, ev_nocorr,
                      ev_out);
    if (infer->parsed())
      return cmd_infer(in_model, in_seg, in_pred, in_input, in_fov, in_correct,
                       in_out);
    if (bench->parsed()) return cmd_bench(bc, be_out);
  } catch (const NumericError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return 3;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 2;
  } catch (const IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return 2;
  } catch (const FormatError& e) {
    std::cerr << "format error: " << e.what() << "\n";
    return 2;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
