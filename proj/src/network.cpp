#include "errornet/network.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "errornet/error.hpp"

namespace errornet {

size_t NetworkSpec::channels(double mult) const {
  const double c = static_cast<double>(base_width) * mult * width_scale;
  return std::max<size_t>(1, static_cast<size_t>(std::llround(c)));
}

void NetworkSpec::validate(size_t pools) const {
  if (width_scale <= 0.0)
    throw ConfigError("network spec: width_scale must be positive");
  if (base_width == 0) throw ConfigError("network spec: base_width must be >= 1");
  const size_t div = size_t{1} << pools;
  if (resolution == 0 || resolution % div != 0)
    throw ConfigError("network spec: resolution " +
                      std::to_string(resolution) + " must be divisible by " +
                      std::to_string(div));
}

namespace {

std::string layer_id(const std::string& name) {
  std::string id;
  bool gap = false;
  for (char c : name) {
    if (std::isalnum(static_cast<unsigned char>(c))) {
      if (gap && !id.empty()) id += '_';
      id += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
      gap = false;
    } else {
      gap = true;
    }
  }
  return id;
}

LayerDef conv_block(const std::string& name, size_t in_ch, size_t out_ch,
                    NormKind norm, ActKind act) {
  LayerDef d;
  d.kind = LayerKind::kConvBlock;
  d.name = name;
  d.id = layer_id(name);
  d.in_ch = in_ch;
  d.out_ch = out_ch;
  d.norm = norm;
  d.act = act;
  d.has_act = true;
  return d;
}

LayerDef simple(LayerKind kind, const std::string& name) {
  LayerDef d;
  d.kind = kind;
  d.name = name;
  d.id = layer_id(name);
  return d;
}

LayerDef concat_of(const std::string& name, int a, int b) {
  LayerDef d = simple(LayerKind::kConcat, name);
  d.srcs = {a, b};
  return d;
}

}  // namespace

// ---------------------------------------------------------------------------
// Segmentation U-Net: 4 pools, instance norm + leaky ReLU, nearest-neighbor
// upsampling with skip concatenations, sigmoid output.
// ---------------------------------------------------------------------------
std::vector<LayerDef> seg_layer_defs(const NetworkSpec& spec) {
  spec.validate(4);
  const NormKind in = NormKind::kInstance;
  const ActKind lr = ActKind::kLeakyRelu;
  const size_t c1 = spec.channels(1), c2 = spec.channels(2),
               c3 = spec.channels(4), c4 = spec.channels(8),
               c5 = spec.channels(16);
  std::vector<LayerDef> L;
  auto idx = [&L]() { return static_cast<int>(L.size()) - 1; };

  L.push_back(conv_block("Conv layer - 1a", 1, c1, in, lr));
  L.push_back(conv_block("Conv layer - 1b", c1, c1, in, lr));
  const int conv1b = idx();
  L.push_back(simple(LayerKind::kMaxPool, "Max pool - 1"));
  L.push_back(conv_block("Conv layer - 2a", c1, c2, in, lr));
  L.push_back(conv_block("Conv layer - 2b", c2, c2, in, lr));
  const int conv2b = idx();
  L.push_back(simple(LayerKind::kMaxPool, "Max pool - 2"));
  L.push_back(conv_block("Conv layer - 3a", c2, c3, in, lr));
  L.push_back(conv_block("Conv layer - 3b", c3, c3, in, lr));
  const int conv3b = idx();
  L.push_back(simple(LayerKind::kMaxPool, "Max pool - 3"));
  L.push_back(conv_block("Conv layer - 4a", c3, c4, in, lr));
  L.push_back(conv_block("Conv layer - 4b", c4, c4, in, lr));
  const int conv4b = idx();
  L.push_back(simple(LayerKind::kMaxPool, "Max pool - 4"));
  L.push_back(conv_block("Conv layer - 5a", c4, c5, in, lr));
  L.push_back(conv_block("Conv layer - 5b", c5, c5, in, lr));

  L.push_back(simple(LayerKind::kUpsample, "Upsample - 1"));
  L.push_back(concat_of("Concat - 1", idx(), conv4b));
  L.push_back(conv_block("Conv layer - 6a", c5 + c4, c4, in, lr));
  L.push_back(conv_block("Conv layer - 6b", c4, c4, in, lr));
  L.push_back(simple(LayerKind::kUpsample, "Upsample - 2"));
  L.push_back(concat_of("Concat - 2", idx(), conv3b));
  L.push_back(conv_block("Conv layer - 7a", c4 + c3, c3, in, lr));
  L.push_back(conv_block("Conv layer - 7b", c3, c3, in, lr));
  L.push_back(simple(LayerKind::kUpsample, "Upsample - 3"));
  L.push_back(concat_of("Concat - 3", idx(), conv2b));
  L.push_back(conv_block("Conv layer - 8a", c3 + c2, c2, in, lr));
  L.push_back(conv_block("Conv layer - 8b", c2, c2, in, lr));
  L.push_back(simple(LayerKind::kUpsample, "Upsample - 4"));
  L.push_back(concat_of("Concat - 4", idx(), conv1b));
  L.push_back(conv_block("Conv layer - 9a", c2 + c1, c1, in, lr));
  L.push_back(conv_block("Conv layer - 9b", c1, c1, in, lr));

  LayerDef out = conv_block("Output layer", c1, 1, NormKind::kNone,
                            ActKind::kSigmoid);
  out.kind = LayerKind::kOutput;
  L.push_back(out);
  return L;
}

// ---------------------------------------------------------------------------
// VAE error injector: 3 pools, batch norm + ReLU, dense mu / log sigma^2
// heads over a 1-channel bottleneck map, two transpose-conv upsamplings and
// one nearest upsampling, 1-channel sigmoid output.
// ---------------------------------------------------------------------------
std::vector<LayerDef> vae_layer_defs(const NetworkSpec& spec) {
  spec.validate(3);
  const NormKind bn = NormKind::kBatch;
  const ActKind re = ActKind::kRelu;
  const size_t c1 = spec.channels(1), c2 = spec.channels(2),
               c3 = spec.channels(4), c4 = spec.channels(16);
  const size_t latent = spec.latent_dim();
  const size_t bottleneck = spec.resolution / 8;
  std::vector<LayerDef> L;
  auto idx = [&L]() { return static_cast<int>(L.size()) - 1; };

  L.push_back(conv_block("Conv layer - 1a", 1, c1, bn, re));
  L.push_back(conv_block("Conv layer - 1b", c1, c1, bn, re));
  L.push_back(simple(LayerKind::kMaxPool, "Max pool - 1"));
  L.push_back(conv_block("Conv layer - 2a", c1, c2, bn, re));
  L.push_back(conv_block("Conv layer - 2b", c2, c2, bn, re));
  L.push_back(simple(LayerKind::kMaxPool, "Max pool - 2"));
  L.push_back(conv_block("Conv layer - 3a", c2, c3, bn, re));
  L.push_back(conv_block("Conv layer - 3b", c3, c3, bn, re));
  L.push_back(simple(LayerKind::kMaxPool, "Max pool - 3"));
  L.push_back(conv_block("encoder conv - 4a", c3, c4, bn, re));
  L.push_back(conv_block("encoder conv - 4b", c4, 1, bn, re));
  const int enc_out = idx();

  LayerDef mu = simple(LayerKind::kDense, "encoder dense - mu");
  mu.srcs = {enc_out};
  mu.in_dim = bottleneck * bottleneck;
  mu.out_dim = latent;
  L.push_back(mu);
  const int mu_idx = idx();

  LayerDef sg = simple(LayerKind::kDense, "encoder dense - sigma");
  sg.srcs = {enc_out};
  sg.in_dim = bottleneck * bottleneck;
  sg.out_dim = latent;
  L.push_back(sg);
  const int sg_idx = idx();

  LayerDef sam = simple(LayerKind::kSample, "sampling - 1");
  sam.srcs = {mu_idx, sg_idx};
  L.push_back(sam);

  LayerDef rs = simple(LayerKind::kReshape, "reshape - 1");
  rs.reshape_to = {1, bottleneck, bottleneck};
  L.push_back(rs);

  LayerDef t1 = conv_block("Conv transpose - 1", 1, c2, bn, re);
  t1.kind = LayerKind::kConvTranspose;
  L.push_back(t1);
  L.push_back(conv_block("Conv layer - 5a", c2, c2, bn, re));
  L.push_back(conv_block("Conv layer - 5b", c2, c2, bn, re));

  LayerDef t2 = conv_block("Conv transpose - 2", c2, c1, bn, re);
  t2.kind = LayerKind::kConvTranspose;
  L.push_back(t2);
  L.push_back(conv_block("Conv layer - 6a", c1, c1, bn, re));
  L.push_back(conv_block("Conv layer - 6b", c1, c1, bn, re));

  L.push_back(simple(LayerKind::kUpsample, "Upsample - 3"));
  L.push_back(conv_block("Conv layer - 7a", c1, c1, bn, re));
  L.push_back(conv_block("Conv layer - 7b", c1, c1, bn, re));

  LayerDef out;
  out.kind = LayerKind::kOutput;
  out.name = "Output layer";
  out.id = layer_id(out.name);
  out.in_ch = c1;
  out.out_ch = 1;  // k = number of foreground classes
  L.push_back(out);
  L.push_back(simple(LayerKind::kSigmoid, "Sigmoid layer"));
  return L;
}

// ---------------------------------------------------------------------------
// Error predictor: shallow U-Net over concat(image, segmentation), 3 pools,
// batch norm + ReLU, tanh output in [-1, 1].
// ---------------------------------------------------------------------------
std::vector<LayerDef> err_predictor_layer_defs(const NetworkSpec& spec) {
  spec.validate(3);
  const NormKind bn = NormKind::kBatch;
  const ActKind re = ActKind::kRelu;
  const size_t c1 = spec.channels(1), c2 = spec.channels(2),
               c3 = spec.channels(4), c4 = spec.channels(8);
  std::vector<LayerDef> L;
  auto idx = [&L]() { return static_cast<int>(L.size()) - 1; };

  L.push_back(concat_of("Concat - input", -1, -2));
  L.push_back(conv_block("Conv layer - 1a", 2, c1, bn, re));
  L.push_back(conv_block("Conv layer - 1b", c1, c1, bn, re));
  const int conv1b = idx();
  L.push_back(simple(LayerKind::kMaxPool, "Max pool - 1"));
  L.push_back(conv_block("Conv layer - 2a", c1, c2, bn, re));
  L.push_back(conv_block("Conv layer - 2b", c2, c2, bn, re));
  const int conv2b = idx();
  L.push_back(simple(LayerKind::kMaxPool, "Max pool - 2"));
  L.push_back(conv_block("Conv layer - 3a", c2, c3, bn, re));
  L.push_back(conv_block("Conv layer - 3b", c3, c3, bn, re));
  const int conv3b = idx();
  L.push_back(simple(LayerKind::kMaxPool, "Max pool - 3"));
  L.push_back(conv_block("Conv layer - 4a", c3, c4, bn, re));
  L.push_back(conv_block("Conv layer - 4b", c4, c4, bn, re));

  L.push_back(simple(LayerKind::kUpsample, "Upsample - 2"));
  L.push_back(concat_of("Concat - 2", idx(), conv3b));
  L.push_back(conv_block("Conv layer - 7a", c4 + c3, c3, bn, re));
  L.push_back(conv_block("Conv layer - 7b", c3, c3, bn, re));
  L.push_back(simple(LayerKind::kUpsample, "Upsample - 3"));
  L.push_back(concat_of("Concat - 3", idx(), conv2b));
  L.push_back(conv_block("Conv layer - 8a", c3 + c2, c2, bn, re));
  L.push_back(conv_block("Conv layer - 8b", c2, c2, bn, re));
  L.push_back(simple(LayerKind::kUpsample, "Upsample - 4"));
  L.push_back(concat_of("Concat - 4", idx(), conv1b));
  L.push_back(conv_block("Conv layer - 9a", c2 + c1, c1, bn, re));
  L.push_back(conv_block("Conv layer - 9b", c1, c1, bn, re));

  LayerDef out = conv_block("Output layer", c1, 1, NormKind::kNone,
                            ActKind::kTanh);
  out.kind = LayerKind::kOutput;
  L.push_back(out);
  return L;
}

// ---------------------------------------------------------------------------
// Symbolic shape walk.
// ---------------------------------------------------------------------------
std::vector<LayerTrace> shape_trace(const std::vector<LayerDef>& layers,
                                    NetKind kind, const NetworkSpec& spec) {
  const size_t R = spec.resolution;
  std::vector<Shape> net_inputs;
  net_inputs.push_back({1, R, R});
  if (kind == NetKind::kErrPredictor) net_inputs.push_back({1, R, R});

  std::vector<Shape> outs(layers.size());
  std::vector<LayerTrace> trace;
  trace.reserve(layers.size());

  auto src_shape = [&](int s, size_t self) -> const Shape& {
    if (s < 0) {
      const size_t k = static_cast<size_t>(-s - 1);
      if (k >= net_inputs.size())
        throw UsageError("layer references missing network input");
      return net_inputs[k];
    }
    if (static_cast<size_t>(s) >= self)
      throw UsageError("layer references a later layer");
    return outs[static_cast<size_t>(s)];
  };

  for (size_t i = 0; i < layers.size(); ++i) {
    const LayerDef& d = layers[i];
    std::vector<int> srcs = d.srcs;
    if (srcs.empty()) srcs = {static_cast<int>(i) - 1};
    if (i == 0 && d.srcs.empty()) srcs = {-1};

    LayerTrace t;
    t.name = d.name;
    for (int s : srcs) t.in.push_back(src_shape(s, i));
    const Shape& in0 = t.in[0];

    switch (d.kind) {
      case LayerKind::kConvBlock:
      case LayerKind::kOutput:
        if (in0.size() != 3 || in0[0] != d.in_ch)
          throw ShapeError("layer '" + d.name + "': expected " +
                           std::to_string(d.in_ch) + " input channels, got " +
                           shape_str(in0));
        t.out = {d.out_ch, in0[1], in0[2]};
        break;
      case LayerKind::kMaxPool:
        t.out = {in0[0], in0[1] / 2, in0[2] / 2};
        break;
      case LayerKind::kUpsample:
        t.out = {in0[0], in0[1] * 2, in0[2] * 2};
        break;
      case LayerKind::kConvTranspose:
        if (in0[0] != d.in_ch)
          throw ShapeError("layer '" + d.name + "': channel mismatch");
        t.out = {d.out_ch, in0[1] * 2, in0[2] * 2};
        break;
      case LayerKind::kConcat: {
        const Shape& in1 = t.in[1];
        t.out = {in0[0] + in1[0], in0[1], in0[2]};
        break;
      }
      case LayerKind::kDense:
        t.out = {d.out_dim};
        break;
      case LayerKind::kSample:
        t.out = in0;
        break;
      case LayerKind::kReshape:
        t.out = d.reshape_to;
        break;
      case LayerKind::kSigmoid:
        t.out = in0;
        break;
    }
    outs[i] = t.out;
    trace.push_back(std::move(t));
  }
  return trace;
}

size_t plan_param_count(const std::vector<LayerDef>& layers) {
  size_t n = 0;
  for (const LayerDef& d : layers) {
    switch (d.kind) {
      case LayerKind::kConvBlock:
      case LayerKind::kOutput:
        n += d.out_ch * d.in_ch * 9 + d.out_ch;
        if (d.norm != NormKind::kNone) n += 2 * d.out_ch;
        break;
      case LayerKind::kConvTranspose:
        n += d.in_ch * d.out_ch * 4 + d.out_ch;
        if (d.norm != NormKind::kNone) n += 2 * d.out_ch;
        break;
      case LayerKind::kDense:
        n += d.in_dim * d.out_dim + d.out_dim;
        break;
      default:
        break;
    }
  }
  return n;
}

// ---------------------------------------------------------------------------
// Latent sampling.
// ---------------------------------------------------------------------------
Tensor<float> reparameterize(const Tensor<float>& mu,
                             const Tensor<float>& log_var,
                             const Tensor<float>& eps) {
  if (mu.shape() != log_var.shape() || mu.shape() != eps.shape())
    throw ShapeError("reparameterize: shape mismatch");
  return add(mu, mul(exp_elem(scale(log_var, 0.5f)), eps));
}

Tensor<float> sample_latent(const Tensor<float>& mu,
                            const Tensor<float>& log_var, SampleMode mode,
                            Rng& rng) {
  if (mu.shape() != log_var.shape())
    throw ShapeError("sample_latent: mu/log_var shape mismatch");
  if (!rng.seeded()) throw UsageError("sample_latent: rng is not seeded");
  const size_t n = mu.numel();

  if (mode == SampleMode::kTrain) {
    std::vector<float> ev(n);
    for (auto& e : ev) e = static_cast<float>(rng.normal());
    Tensor<float> eps = Tensor<float>::from(mu.shape(), std::move(ev));
    return reparameterize(mu, log_var, eps);
  }

  // Inject mode: a narrow perturbation around the posterior mean. The VAE is
  // frozen downstream, so no gradient path is needed.
  Tensor<float> z = Tensor<float>::zeros(mu.shape());
  const float* m = mu.data().data();
  float* zp = z.data_mut().data();
  for (size_t i = 0; i < n; ++i)
    zp[i] = m[i] + static_cast<float>(kInjectStd * rng.normal());
  return z;
}

// ---------------------------------------------------------------------------
// Materialization and forward execution.
// ---------------------------------------------------------------------------
Network::Network(NetKind kind, NetworkSpec spec, std::vector<LayerDef> layers)
    : kind_(kind), spec_(spec), layers_(std::move(layers)) {}

void Network::init_params(Rng& rng) {
  auto normal_tensor = [&rng](Shape shape, double stddev) {
    std::vector<float> v(shape_numel(shape));
    for (auto& x : v) x = static_cast<float>(rng.normal() * stddev);
    return Tensor<float>::from(std::move(shape), std::move(v));
  };

  for (const LayerDef& d : layers_) {
    switch (d.kind) {
      case LayerKind::kConvBlock:
      case LayerKind::kOutput: {
        const double fan_in = static_cast<double>(d.in_ch) * 9.0;
        const double stddev = d.kind == LayerKind::kOutput
                                  ? std::sqrt(1.0 / fan_in)
                                  : std::sqrt(2.0 / fan_in);
        store_.add(d.id + ".w",
                   normal_tensor({d.out_ch, d.in_ch, 3, 3}, stddev));
        store_.add(d.id + ".b", Tensor<float>::zeros({d.out_ch}));
        break;
      }
      case LayerKind::kConvTranspose: {
        const double fan_in = static_cast<double>(d.in_ch) * 4.0;
        store_.add(d.id + ".w", normal_tensor({d.in_ch, d.out_ch, 2, 2},
                                              std::sqrt(2.0 / fan_in)));
        store_.add(d.id + ".b", Tensor<float>::zeros({d.out_ch}));
        break;
      }
      case LayerKind::kDense: {
        store_.add(d.id + ".w", normal_tensor({d.in_dim, d.out_dim},
                                              std::sqrt(1.0 / d.in_dim)));
        store_.add(d.id + ".b", Tensor<float>::zeros({d.out_dim}));
        break;
      }
      default:
        break;
    }
    if ((d.kind == LayerKind::kConvBlock ||
         d.kind == LayerKind::kConvTranspose) &&
        d.norm != NormKind::kNone) {
      store_.add(d.id + ".gamma", Tensor<float>::full({d.out_ch}, 1.0f));
      store_.add(d.id + ".beta", Tensor<float>::zeros({d.out_ch}));
      if (d.norm == NormKind::kBatch) {
        store_.add(d.id + ".running_mean", Tensor<float>::zeros({d.out_ch}),
                   /*trainable=*/false);
        store_.add(d.id + ".running_var", Tensor<float>::full({d.out_ch}, 1.0f),
                   /*trainable=*/false);
      }
    }
  }
}

ForwardResult Network::forward(std::span<const Tensor<float>> inputs,
                               RunMode mode, Rng* rng) {
  if (inputs.size() != num_inputs())
    throw UsageError("network expects " + std::to_string(num_inputs()) +
                     " inputs, got " + std::to_string(inputs.size()));
  for (const auto& in : inputs) {
    detail::expect_rank(in, 4, "network forward");
    if (in.dim(2) != spec_.resolution || in.dim(3) != spec_.resolution)
      throw ShapeError("network forward: input " + shape_str(in.shape()) +
                       " does not match resolution " +
                       std::to_string(spec_.resolution));
  }
  const bool training = mode == RunMode::kTrain && !frozen_;
  const size_t batch = inputs[0].dim(0);

  std::vector<Tensor<float>> outs(layers_.size());
  ForwardResult result;

  auto src = [&](int s, size_t self) -> const Tensor<float>& {
    if (s < 0) return inputs[static_cast<size_t>(-s - 1)];
    if (static_cast<size_t>(s) >= self)
      throw UsageError("layer references a later layer");
    return outs[static_cast<size_t>(s)];
  };

  for (size_t i = 0; i < layers_.size(); ++i) {
    const LayerDef& d = layers_[i];
    std::vector<int> srcs = d.srcs;
    if (srcs.empty()) srcs = {i == 0 ? -1 : static_cast<int>(i) - 1};
    const Tensor<float>& x = src(srcs[0], i);

    switch (d.kind) {
      case LayerKind::kConvBlock:
      case LayerKind::kOutput: {
        Tensor<float> y =
            conv2d(x, store_.get(d.id + ".w"), store_.get(d.id + ".b"));
        if (d.norm != NormKind::kNone) {
          Tensor<float>* rm = nullptr;
          Tensor<float>* rv = nullptr;
          if (d.norm == NormKind::kBatch) {
            rm = &store_.get(d.id + ".running_mean");
            rv = &store_.get(d.id + ".running_var");
          }
          y = normalize(y,
                        d.norm == NormKind::kInstance ? NormMode::kInstance
                                                      : NormMode::kBatch,
                        store_.get(d.id + ".gamma"), store_.get(d.id + ".beta"),
                        rm, rv, training);
        }
        if (d.has_act) y = activation(y, d.act);
        outs[i] = std::move(y);
        break;
      }
      case LayerKind::kConvTranspose: {
        Tensor<float> y = conv_transpose2d(x, store_.get(d.id + ".w"),
                                           store_.get(d.id + ".b"));
        if (d.norm != NormKind::kNone)
          y = normalize(y, NormMode::kBatch, store_.get(d.id + ".gamma"),
                        store_.get(d.id + ".beta"),
                        &store_.get(d.id + ".running_mean"),
                        &store_.get(d.id + ".running_var"), training);
        if (d.has_act) y = activation(y, d.act);
        outs[i] = std::move(y);
        break;
      }
      case LayerKind::kMaxPool:
        outs[i] = maxpool2d(x);
        break;
      case LayerKind::kUpsample:
        outs[i] = upsample_nearest2x(x);
        break;
      case LayerKind::kConcat:
        outs[i] = concat_channels(x, src(srcs[1], i));
        break;
      case LayerKind::kDense:
        outs[i] =
            dense(x, store_.get(d.id + ".w"), store_.get(d.id + ".b"));
        break;
      case LayerKind::kSample: {
        const Tensor<float>& mu = x;
        const Tensor<float>& lv = src(srcs[1], i);
        result.mu = mu;
        result.log_var = lv;
        if (mode == RunMode::kEval) {
          outs[i] = mu;  // deterministic decode through the posterior mean
        } else {
          if (rng == nullptr)
            throw UsageError("network forward: sampling requires an rng");
          outs[i] = sample_latent(
              mu, lv,
              mode == RunMode::kTrain ? SampleMode::kTrain : SampleMode::kInject,
              *rng);
        }
        break;
      }
      case LayerKind::kReshape: {
        Shape target = {batch};
        target.insert(target.end(), d.reshape_to.begin(), d.reshape_to.end());
        outs[i] = reshape(x, std::move(target));
        break;
      }
      case LayerKind::kSigmoid:
        outs[i] = activation(x, ActKind::kSigmoid);
        break;
    }
  }
  result.out = outs.back();
  return result;
}

Network build_seg_unet(const NetworkSpec& spec, Rng& init_rng) {
  Network net(NetKind::kSeg, spec, seg_layer_defs(spec));
  net.init_params(init_rng);
  return net;
}

Network build_vae(const NetworkSpec& spec, Rng& init_rng) {
  Network net(NetKind::kVae, spec, vae_layer_defs(spec));
  net.init_params(init_rng);
  return net;
}

Network build_err_predictor(const NetworkSpec& spec, Rng& init_rng) {
  Network net(NetKind::kErrPredictor, spec, err_predictor_layer_defs(spec));
  net.init_params(init_rng);
  return net;
}

}  // namespace errornet
