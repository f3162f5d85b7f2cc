#include "errornet/bench.hpp"

#include <chrono>
#include <filesystem>
#include <fstream>

#include "errornet/data.hpp"
#include "errornet/error.hpp"
#include "errornet/train.hpp"

namespace fs = std::filesystem;

namespace errornet {

const BenchVariant& BenchResult::variant(const std::string& name) const {
  for (const BenchVariant& v : variants)
    if (v.name == name) return v;
  throw UsageError("benchmark has no variant '" + name + "'");
}

namespace {

struct VariantSpec {
  const char* name;
  bool err_pred, vae, joint;
};

constexpr VariantSpec kVariants[] = {
    {"base", false, false, false},
    {"errpred", true, false, false},
    {"vae", true, true, false},
    {"joint", true, true, true},
};

}  // namespace

BenchResult run_bench(const BenchConfig& cfg) {
  const auto t0 = std::chrono::steady_clock::now();
  if (cfg.out_dir.empty()) throw ConfigError("bench needs an output directory");
  const auto& domains = synth_preset_names();
  bool known = false;
  for (const auto& d : domains) known = known || d == cfg.train_domain;
  if (!known)
    throw ConfigError("bench train domain '" + cfg.train_domain +
                      "' is not a preset");

  BenchResult result;
  result.domains = domains;

  for (size_t si = 0; si < cfg.num_seeds; ++si) {
    const uint64_t seed = mix_seed(cfg.seed, si);
    const fs::path seed_data =
        fs::path(cfg.out_dir) / "data" / ("seed" + std::to_string(si));
    const fs::path seed_runs =
        fs::path(cfg.out_dir) / "runs" / ("seed" + std::to_string(si));
    result.seed_run_dirs.push_back(seed_runs.string());

    // Materialize the five domains through the real dataset layout, then
    // load them back so training sees exactly what the synth command emits.
    std::vector<DatasetSplits> splits(domains.size());
    DatasetSplits* train_data = nullptr;
    for (size_t di = 0; di < domains.size(); ++di) {
      const SynthDomain dom = synth_preset(domains[di]);
      const bool is_train = domains[di] == cfg.train_domain;
      const size_t n =
          is_train ? cfg.n_train + cfg.n_val + cfg.n_test : cfg.n_test;
      const uint64_t dom_seed = mix_seed(seed, 0xd0 + di);
      auto samples =
          synth_generate(dom, n, cfg.spec.resolution, dom_seed);
      const std::string dir = (seed_data / domains[di]).string();
      materialize_dataset(samples, dom, cfg.spec.resolution, dom_seed, dir);
      const SplitSpec split = is_train
                                  ? SplitSpec{cfg.n_train, cfg.n_val, cfg.n_test}
                                  : SplitSpec{0, 0, cfg.n_test};
      splits[di] = load_dataset(seed_data.string(), domains[di], split,
                                cfg.spec.resolution, seed);
      if (is_train) train_data = &splits[di];
    }

    // Stage-wise training plus the no-VAE ablation and joint fine-tuning.
    auto stage_cfg = [&](Stage stage, const std::string& dir_name) {
      TrainConfig tc;
      tc.stage = stage;
      tc.spec = cfg.spec;
      tc.batch_size = cfg.batch_size;
      tc.lr = cfg.lr;
      tc.seed = seed;
      tc.patience = cfg.patience;
      tc.kl_weight = cfg.kl_weight;
      tc.out_dir = (seed_runs / dir_name).string();
      return tc;
    };

    TrainConfig seg_cfg = stage_cfg(Stage::kSeg, "seg");
    seg_cfg.epochs = cfg.seg_epochs;
    TrainResult seg_res = train_stage(seg_cfg, *train_data);

    TrainConfig vae_cfg = stage_cfg(Stage::kVae, "vae");
    vae_cfg.epochs = cfg.vae_epochs;
    vae_cfg.seg_checkpoint = seg_res.best_checkpoint;
    TrainResult vae_res = train_stage(vae_cfg, *train_data);

    TrainConfig errnv_cfg = stage_cfg(Stage::kErr, "err_novae");
    errnv_cfg.epochs = cfg.err_epochs;
    errnv_cfg.use_vae = false;
    errnv_cfg.seg_checkpoint = seg_res.best_checkpoint;
    errnv_cfg.vae_checkpoint = vae_res.best_checkpoint;
    TrainResult errnv_res = train_stage(errnv_cfg, *train_data);

    TrainConfig err_cfg = stage_cfg(Stage::kErr, "err");
    err_cfg.epochs = cfg.err_epochs;
    err_cfg.seg_checkpoint = seg_res.best_checkpoint;
    err_cfg.vae_checkpoint = vae_res.best_checkpoint;
    TrainResult err_res = train_stage(err_cfg, *train_data);

    TrainConfig joint_cfg = stage_cfg(Stage::kJoint, "joint");
    joint_cfg.epochs = cfg.joint_epochs;
    joint_cfg.lr = cfg.joint_lr;
    joint_cfg.seg_checkpoint = seg_res.best_checkpoint;
    joint_cfg.vae_checkpoint = vae_res.best_checkpoint;
    joint_cfg.err_checkpoint = err_res.best_checkpoint;
    TrainResult joint_res = train_joint(joint_cfg, *train_data);

    // Assemble the evaluated pipelines.
    Network seg_net = load_seg_network(seg_res.best_checkpoint);
    Network errnv_net = load_predictor_network(errnv_res.best_checkpoint);
    Network err_net = load_predictor_network(err_res.best_checkpoint);
    Network joint_seg = load_seg_network(joint_res.best_checkpoint);
    Network joint_err = load_predictor_network(joint_res.best_checkpoint);

    std::vector<EvalModel> models;
    for (const VariantSpec& v : kVariants) {
      EvalModel m;
      m.label = v.name;
      m.train_domain = cfg.train_domain;
      m.flag_err_pred = v.err_pred;
      m.flag_vae = v.vae;
      m.flag_joint = v.joint;
      if (v.joint) {
        m.seg = &joint_seg;
        m.predictor = &joint_err;
      } else if (v.vae) {
        m.seg = &seg_net;
        m.predictor = &err_net;
      } else if (v.err_pred) {
        m.seg = &seg_net;
        m.predictor = &errnv_net;
      } else {
        m.seg = &seg_net;
      }
      models.push_back(m);
    }

    std::vector<EvalDataset> eval_sets;
    for (size_t di = 0; di < domains.size(); ++di)
      eval_sets.push_back({domains[di], &splits[di].test});

    MetricsMatrix matrix = evaluate_matrix(models, eval_sets, true);
    result.per_seed.push_back(matrix);

    const fs::path report_dir =
        fs::path(cfg.out_dir) / "reports" / ("seed" + std::to_string(si));
    fs::create_directories(report_dir);
    {
      std::ofstream csv(report_dir / "matrix.csv");
      csv << matrix_to_csv(matrix);
      std::ofstream md(report_dir / "matrix.md");
      md << matrix_to_markdown(matrix);
    }
  }

  // Aggregate across seeds.
  for (size_t vi = 0; vi < std::size(kVariants); ++vi) {
    BenchVariant v;
    v.name = kVariants[vi].name;
    v.flag_err_pred = kVariants[vi].err_pred;
    v.flag_vae = kVariants[vi].vae;
    v.flag_joint = kVariants[vi].joint;
    v.mean_dice.assign(domains.size(), 0.0);
    v.mean_iou.assign(domains.size(), 0.0);
    for (const MetricsMatrix& m : result.per_seed)
      for (size_t di = 0; di < domains.size(); ++di) {
        v.mean_dice[di] += m.dice[vi][di] / result.per_seed.size();
        v.mean_iou[di] += m.iou[vi][di] / result.per_seed.size();
      }
    double shifted = 0.0;
    size_t nshift = 0;
    for (size_t di = 0; di < domains.size(); ++di) {
      if (domains[di] == cfg.train_domain) {
        v.same_domain_dice = v.mean_dice[di];
      } else {
        shifted += v.mean_dice[di];
        ++nshift;
      }
    }
    v.shifted_mean_dice = shifted / nshift;
    result.variants.push_back(std::move(v));
  }

  // Aggregate report (same emitters as the per-seed matrices).
  MetricsMatrix agg;
  agg.col_labels = domains;
  for (const BenchVariant& v : result.variants) {
    agg.row_labels.push_back(v.name);
    agg.flag_err_pred.push_back(v.flag_err_pred);
    agg.flag_vae.push_back(v.flag_vae);
    agg.flag_joint.push_back(v.flag_joint);
    agg.dice.push_back(v.mean_dice);
    agg.iou.push_back(v.mean_iou);
    std::vector<bool> same;
    for (const auto& d : domains) same.push_back(d == cfg.train_domain);
    agg.same_domain.push_back(same);
    double da = 0.0, ja = 0.0;
    for (size_t di = 0; di < domains.size(); ++di) {
      da += v.mean_dice[di];
      ja += v.mean_iou[di];
    }
    agg.row_avg_dice.push_back(da / domains.size());
    agg.row_avg_iou.push_back(ja / domains.size());
  }
  const fs::path report_dir = fs::path(cfg.out_dir) / "reports";
  fs::create_directories(report_dir);
  {
    std::ofstream csv(report_dir / "summary.csv");
    csv << matrix_to_csv(agg);
    std::ofstream md(report_dir / "summary.md");
    md << matrix_to_markdown(agg);
  }

  const auto t1 = std::chrono::steady_clock::now();
  result.wall_seconds = std::chrono::duration<double>(t1 - t0).count();
  // Timing lives outside the deterministic report set.
  std::ofstream timing(fs::path(cfg.out_dir) / "bench_timing.txt");
  timing << "wall_seconds=" << result.wall_seconds << "\n";
  return result;
}

}  // namespace errornet
