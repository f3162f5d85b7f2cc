#pragma once

#include <span>
#include <string>
#include <vector>

#include "errornet/ops.hpp"
#include "errornet/param_store.hpp"
#include "errornet/rng.hpp"
#include "errornet/tensor.hpp"

namespace errornet {

// Topology knobs shared by the three networks. The canonical configuration
// is resolution 640 with base width 32; the desk-scale default is 64 / 4.
struct NetworkSpec {
  size_t resolution = 64;
  size_t base_width = 4;
  double width_scale = 1.0;

  size_t latent_dim() const {
    return (resolution / 8) * (resolution / 8);
  }

  // Channel count at a given multiple of the base width, scaled and floored
  // at one channel.
  size_t channels(double mult) const;

  // Throws ConfigError if the resolution is not divisible by 2^pools or the
  // scale is not positive.
  void validate(size_t pools) const;
};

inline NetworkSpec canonical_spec() { return {640, 32, 1.0}; }
inline NetworkSpec desk_spec() { return {64, 4, 1.0}; }

enum class NetKind { kSeg, kVae, kErrPredictor };
enum class NormKind { kNone, kInstance, kBatch };
enum class RunMode { kTrain, kEval, kInject };
enum class SampleMode { kTrain, kInject };

enum class LayerKind {
  kConvBlock,      // conv3x3 [+ norm] [+ activation]
  kMaxPool,        // 2x2 stride 2
  kUpsample,       // nearest 2x
  kConcat,         // channel concatenation of two sources
  kConvTranspose,  // 2x2 stride 2 [+ norm] [+ activation]
  kDense,          // affine on flattened input
  kSample,         // latent sampling from (mu, log sigma^2)
  kReshape,        // latent vector back to a spatial map
  kOutput,         // conv3x3 [+ activation], no norm
  kSigmoid,        // standalone sigmoid layer
};

// One row of a network plan. `srcs` are indices of producer layers; negative
// values address network inputs (-1 -> input 0, -2 -> input 1). An empty
// `srcs` means "previous layer".
struct LayerDef {
  LayerKind kind;
  std::string name;  // display name, matching the architecture tables
  std::string id;    // parameter prefix
  std::vector<int> srcs;
  size_t in_ch = 0, out_ch = 0;
  size_t in_dim = 0, out_dim = 0;
  Shape reshape_to;  // kReshape target (without batch dim)
  NormKind norm = NormKind::kNone;
  ActKind act = ActKind::kRelu;
  bool has_act = false;
};

// Shape trace entry: per-layer input/output shapes without the batch
// dimension (e.g. {C,H,W} for maps, {D} for vectors).
struct LayerTrace {
  std::string name;
  std::vector<Shape> in;
  Shape out;
};

std::vector<LayerDef> seg_layer_defs(const NetworkSpec& spec);
std::vector<LayerDef> vae_layer_defs(const NetworkSpec& spec);
std::vector<LayerDef> err_predictor_layer_defs(const NetworkSpec& spec);

// Walks a plan symbolically; no parameters are allocated.
std::vector<LayerTrace> shape_trace(const std::vector<LayerDef>& layers,
                                    NetKind kind, const NetworkSpec& spec);

// Deterministic reparameterization core: z = mu + exp(log_var / 2) * eps,
// differentiable in mu and log_var.
Tensor<float> reparameterize(const Tensor<float>& mu,
                             const Tensor<float>& log_var,
                             const Tensor<float>& eps);

// Latent sampling. Train mode draws eps ~ N(0,1) and applies the
// reparameterization; inject mode draws z = mu + eps with eps ~ N(0, 1e-4 I)
// and carries no gradient.
Tensor<float> sample_latent(const Tensor<float>& mu,
                            const Tensor<float>& log_var, SampleMode mode,
                            Rng& rng);

constexpr double kInjectStd = 0.01;  // sqrt of the 1e-4 injection variance

struct ForwardResult {
  Tensor<float> out;
  Tensor<float> mu;       // VAE only
  Tensor<float> log_var;  // VAE only
};

// A materialized network: plan + parameters + forward procedure.
class Network {
 public:
  Network() = default;
  Network(NetKind kind, NetworkSpec spec, std::vector<LayerDef> layers);

  NetKind kind() const { return kind_; }
  const NetworkSpec& spec() const { return spec_; }
  const std::vector<LayerDef>& layers() const { return layers_; }
  ParamStore& store() { return store_; }
  const ParamStore& store() const { return store_; }
  size_t num_inputs() const { return kind_ == NetKind::kErrPredictor ? 2 : 1; }

  bool frozen() const { return frozen_; }
  void set_frozen(bool f) {
    frozen_ = f;
    store_.set_all_frozen(f);
  }

  void init_params(Rng& rng);

  // Runs the plan. VAE forwards additionally report mu / log_var. Train and
  // inject modes require an rng when the plan contains a sampling layer.
  ForwardResult forward(std::span<const Tensor<float>> inputs, RunMode mode,
                        Rng* rng = nullptr);
  ForwardResult forward(const Tensor<float>& input, RunMode mode,
                        Rng* rng = nullptr) {
    return forward(std::span<const Tensor<float>>(&input, 1), mode, rng);
  }

  std::vector<LayerTrace> trace() const {
    return shape_trace(layers_, kind_, spec_);
  }

 private:
  NetKind kind_ = NetKind::kSeg;
  NetworkSpec spec_;
  std::vector<LayerDef> layers_;
  ParamStore store_;
  bool frozen_ = false;
};

Network build_seg_unet(const NetworkSpec& spec, Rng& init_rng);
Network build_vae(const NetworkSpec& spec, Rng& init_rng);
Network build_err_predictor(const NetworkSpec& spec, Rng& init_rng);

// Closed-form trainable parameter count of a plan (weights + biases + norm
// affine terms).
size_t plan_param_count(const std::vector<LayerDef>& layers);

}  // namespace errornet
