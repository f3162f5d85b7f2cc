#include "errornet/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

#include <json.hpp>

#include "errornet/error.hpp"
#include "errornet/image.hpp"
#include "errornet/rng.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace errornet {

void validate_sample(const Sample& s) {
  const Shape& sh = s.image.shape();
  if (sh.size() != 3 || sh[0] != 1)
    throw DataError("sample '" + s.id + "': image must be [1,H,W], got " +
                    shape_str(sh));
  if (s.mask.shape() != sh || s.fov.shape() != sh)
    throw DataError("sample '" + s.id + "': image/mask/fov shapes differ");
  auto m = s.mask.data();
  auto f = s.fov.data();
  for (size_t i = 0; i < m.size(); ++i) {
    if (m[i] != 0.0f && m[i] != 1.0f)
      throw DataError("sample '" + s.id + "': mask is not binary");
    if (f[i] != 0.0f && f[i] != 1.0f)
      throw DataError("sample '" + s.id + "': fov is not binary");
    if (m[i] > f[i])
      throw DataError("sample '" + s.id + "': mask pixel outside fov");
  }
}

Sample normalize_fov(const Sample& s) {
  auto img = s.image.data();
  auto fov = s.fov.data();
  double sum = 0.0, sq = 0.0;
  size_t count = 0;
  for (size_t i = 0; i < img.size(); ++i) {
    if (fov[i] <= 0.5f) continue;
    sum += img[i];
    sq += static_cast<double>(img[i]) * img[i];
    ++count;
  }
  if (count == 0) throw DataError("normalize_fov: empty fov in '" + s.id + "'");
  const double mean = sum / count;
  const double var = std::max(0.0, sq / count - mean * mean);
  if (var <= 0.0)
    throw DataError("normalize_fov: zero variance inside fov in '" + s.id +
                    "'");
  const double inv = 1.0 / std::sqrt(var);
  std::vector<float> out(img.size(), 0.0f);
  for (size_t i = 0; i < img.size(); ++i)
    if (fov[i] > 0.5f)
      out[i] = static_cast<float>((img[i] - mean) * inv);
  Sample r = s;
  r.image = Tensor<float>::from(s.image.shape(), std::move(out));
  return r;
}

Tensor<float> binarize(const Tensor<float>& prob, float threshold) {
  Tensor<float> out = Tensor<float>::zeros(prob.shape());
  const float* p = prob.data().data();
  float* o = out.data_mut().data();
  for (size_t i = 0; i < out.numel(); ++i) o[i] = p[i] >= threshold ? 1.0f : 0.0f;
  return out;
}

// ---------------------------------------------------------------------------
// Directory loading.
// ---------------------------------------------------------------------------
namespace {

bool supported_image(const fs::path& p) {
  std::string e = p.extension().string();
  std::transform(e.begin(), e.end(), e.begin(), ::tolower);
  return e == ".png" || e == ".pgm" || e == ".ppm";
}

std::string find_by_stem(const fs::path& dir, const std::string& stem) {
  for (const char* ext : {".png", ".pgm", ".ppm"}) {
    fs::path p = dir / (stem + ext);
    if (fs::exists(p)) return p.string();
  }
  return {};
}

std::vector<float> derive_fov(const ImageU8& img) {
  // Near-black on every channel marks background outside the field of view.
  std::vector<float> fov(img.width * img.height, 1.0f);
  for (size_t i = 0; i < fov.size(); ++i) {
    bool dark = true;
    for (size_t c = 0; c < img.channels; ++c)
      if (img.pixels[i * img.channels + c] >= 10) dark = false;
    if (dark) fov[i] = 0.0f;
  }
  return fov;
}

std::vector<float> to_binary(std::vector<float> v) {
  for (float& x : v) x = x >= 0.5f ? 1.0f : 0.0f;
  return v;
}

}  // namespace

DatasetSplits load_dataset(const std::string& root, const std::string& domain,
                           const SplitSpec& split, size_t resolution,
                           uint64_t seed) {
  const fs::path base = fs::path(root) / domain;
  const fs::path images_dir = base / "images";
  const fs::path masks_dir = base / "masks";
  const fs::path fov_dir = base / "fov";
  if (!fs::is_directory(images_dir))
    throw DataError("no samples: missing directory " + images_dir.string());

  std::vector<std::string> stems;
  for (const auto& entry : fs::directory_iterator(images_dir))
    if (entry.is_regular_file() && supported_image(entry.path()))
      stems.push_back(entry.path().stem().string());
  std::sort(stems.begin(), stems.end());
  if (stems.empty())
    throw DataError("no samples found under " + images_dir.string());
  if (stems.size() != split.total())
    throw ConfigError("split counts (" + std::to_string(split.train) + "/" +
                      std::to_string(split.val) + "/" +
                      std::to_string(split.test) + ") sum to " +
                      std::to_string(split.total()) + " but " +
                      images_dir.string() + " holds " +
                      std::to_string(stems.size()) + " images");

  std::vector<Sample> all;
  all.reserve(stems.size());
  for (const std::string& stem : stems) {
    const std::string img_path = find_by_stem(images_dir, stem);
    const std::string mask_path = find_by_stem(masks_dir, stem);
    if (mask_path.empty())
      throw DataError("missing mask for image stem '" + stem + "' under " +
                      masks_dir.string());
    ImageU8 raw = read_image(img_path);
    std::vector<float> img = to_gray_float(raw);

    ImageU8 mraw = read_image(mask_path);
    std::vector<float> mask = to_gray_float(mraw);
    if (mraw.width != raw.width || mraw.height != raw.height)
      throw DataError("mask dimensions differ from image for stem '" + stem +
                      "'");

    std::vector<float> fov;
    size_t fw = raw.width, fh = raw.height;
    const std::string fov_path = find_by_stem(fov_dir, stem);
    if (!fov_path.empty()) {
      ImageU8 fraw = read_image(fov_path);
      fov = to_gray_float(fraw);
      fw = fraw.width;
      fh = fraw.height;
    } else {
      fov = derive_fov(raw);
    }

    Sample s;
    s.domain = domain;
    s.id = stem;
    std::vector<float> ri =
        resize_bilinear(img, raw.width, raw.height, resolution, resolution);
    std::vector<float> rm = to_binary(
        resize_nearest(mask, mraw.width, mraw.height, resolution, resolution));
    std::vector<float> rf =
        to_binary(resize_nearest(fov, fw, fh, resolution, resolution));
    for (size_t i = 0; i < rm.size(); ++i)
      if (rf[i] == 0.0f) rm[i] = 0.0f;  // mask stays inside the fov
    s.image = Tensor<float>::from({1, resolution, resolution}, std::move(ri));
    s.mask = Tensor<float>::from({1, resolution, resolution}, std::move(rm));
    s.fov = Tensor<float>::from({1, resolution, resolution}, std::move(rf));
    validate_sample(s);
    all.push_back(std::move(s));
  }

  std::vector<size_t> order(all.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(seed);
  rng.shuffle(order);

  DatasetSplits out;
  size_t k = 0;
  for (size_t i = 0; i < split.train; ++i) out.train.push_back(all[order[k++]]);
  for (size_t i = 0; i < split.val; ++i) out.val.push_back(all[order[k++]]);
  for (size_t i = 0; i < split.test; ++i) out.test.push_back(all[order[k++]]);
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic generator.
// ---------------------------------------------------------------------------
void SynthDomain::validate() const {
  if (vessel_count_min < 1 || vessel_count_max < vessel_count_min)
    throw ConfigError("synth domain '" + name + "': bad vessel count range");
  if (thickness_min < 1.0f || thickness_max < thickness_min)
    throw ConfigError("synth domain '" + name +
                      "': thickness must be >= 1 px and non-degenerate");
  if (contrast <= 0.0f || contrast > 1.0f)
    throw ConfigError("synth domain '" + name + "': contrast must be in (0,1]");
  if (curvature < 0.0f || noise_sigma < 0.0f || blur_radius < 0.0f ||
      reflex_brightness < 0.0f)
    throw ConfigError("synth domain '" + name + "': negative knob");
}

const std::vector<std::string>& synth_preset_names() {
  static const std::vector<std::string> names = {
      "chase-like", "drive-like", "aria-like", "stare-like", "hrf-like"};
  return names;
}

SynthDomain synth_preset(const std::string& name) {
  SynthDomain d;
  d.name = name;
  if (name == "chase-like") {
    // Few thick high-contrast vessels with a bright central reflex.
    d.vessel_count_min = 3;
    d.vessel_count_max = 5;
    d.thickness_min = 2.4f;
    d.thickness_max = 3.6f;
    d.curvature = 0.10f;
    d.contrast = 0.48f;
    d.central_reflex = true;
    d.reflex_brightness = 0.22f;
    d.noise_sigma = 0.025f;
    d.blur_radius = 0.6f;
  } else if (name == "drive-like") {
    d.vessel_count_min = 4;
    d.vessel_count_max = 7;
    d.thickness_min = 1.7f;
    d.thickness_max = 2.7f;
    d.curvature = 0.14f;
    d.contrast = 0.36f;
    d.noise_sigma = 0.035f;
    d.blur_radius = 0.6f;
  } else if (name == "aria-like") {
    d.vessel_count_min = 4;
    d.vessel_count_max = 7;
    d.thickness_min = 1.5f;
    d.thickness_max = 2.5f;
    d.curvature = 0.12f;
    d.contrast = 0.30f;
    d.noise_sigma = 0.045f;
    d.blur_radius = 0.8f;
  } else if (name == "stare-like") {
    d.vessel_count_min = 5;
    d.vessel_count_max = 8;
    d.thickness_min = 1.4f;
    d.thickness_max = 2.3f;
    d.curvature = 0.16f;
    d.contrast = 0.26f;
    d.noise_sigma = 0.05f;
    d.blur_radius = 0.7f;
  } else if (name == "hrf-like") {
    d.vessel_count_min = 5;
    d.vessel_count_max = 9;
    d.thickness_min = 1.2f;
    d.thickness_max = 2.0f;
    d.curvature = 0.18f;
    d.contrast = 0.22f;
    d.noise_sigma = 0.06f;
    d.blur_radius = 0.9f;
  } else {
    throw ConfigError("unknown synth preset '" + name + "'");
  }
  d.validate();
  return d;
}

namespace {

struct Scene {
  std::vector<float> sdf;     // signed distance to nearest tube surface
  std::vector<float> cdist;   // centerline distance of the nearest vessel
  std::vector<float> near_t;  // thickness of the nearest vessel
};

void stamp_point(Scene& sc, size_t R, double px, double py, double thickness) {
  const double half = thickness * 0.5;
  const int rad = static_cast<int>(std::ceil(half + 1.5));
  const int x0 = std::max(0, static_cast<int>(std::floor(px)) - rad);
  const int x1 = std::min<int>(static_cast<int>(R) - 1,
                               static_cast<int>(std::ceil(px)) + rad);
  const int y0 = std::max(0, static_cast<int>(std::floor(py)) - rad);
  const int y1 = std::min<int>(static_cast<int>(R) - 1,
                               static_cast<int>(std::ceil(py)) + rad);
  for (int y = y0; y <= y1; ++y) {
    for (int x = x0; x <= x1; ++x) {
      const double dx = x - px, dy = y - py;
      const double dist = std::sqrt(dx * dx + dy * dy);
      const float cand = static_cast<float>(dist - half);
      float& cur = sc.sdf[static_cast<size_t>(y) * R + x];
      if (cand < cur) {
        cur = cand;
        sc.cdist[static_cast<size_t>(y) * R + x] = static_cast<float>(dist);
        sc.near_t[static_cast<size_t>(y) * R + x] =
            static_cast<float>(thickness);
      }
    }
  }
}

std::vector<float> gaussian_blur(const std::vector<float>& src, size_t R,
                                 double sigma) {
  if (sigma < 0.05) return src;
  const int h = std::max(1, static_cast<int>(std::ceil(2.5 * sigma)));
  std::vector<double> w(static_cast<size_t>(h) + 1);
  for (int i = 0; i <= h; ++i) w[i] = std::exp(-0.5 * i * i / (sigma * sigma));

  std::vector<float> tmp(R * R), dst(R * R);
  for (size_t y = 0; y < R; ++y) {
    for (size_t x = 0; x < R; ++x) {
      double acc = 0.0, norm = 0.0;
      for (int i = -h; i <= h; ++i) {
        const int xx = static_cast<int>(x) + i;
        if (xx < 0 || xx >= static_cast<int>(R)) continue;
        const double wk = w[static_cast<size_t>(std::abs(i))];
        acc += wk * src[y * R + xx];
        norm += wk;
      }
      tmp[y * R + x] = static_cast<float>(acc / norm);
    }
  }
  for (size_t y = 0; y < R; ++y) {
    for (size_t x = 0; x < R; ++x) {
      double acc = 0.0, norm = 0.0;
      for (int i = -h; i <= h; ++i) {
        const int yy = static_cast<int>(y) + i;
        if (yy < 0 || yy >= static_cast<int>(R)) continue;
        const double wk = w[static_cast<size_t>(std::abs(i))];
        acc += wk * tmp[static_cast<size_t>(yy) * R + x];
        norm += wk;
      }
      dst[y * R + x] = static_cast<float>(acc / norm);
    }
  }
  return dst;
}

Sample synth_one(const SynthDomain& d, size_t R, uint64_t sample_seed,
                 std::string id) {
  Rng rng(sample_seed);
  const double cx = (R - 1) * 0.5, cy = (R - 1) * 0.5;
  const double fov_r = 0.47 * static_cast<double>(R);

  // Smooth textured background.
  std::vector<float> img(R * R);
  struct Wave {
    double amp, fx, fy, phase;
  };
  Wave waves[3];
  for (Wave& wv : waves) {
    const double ang = rng.uniform(0.0, 2.0 * M_PI);
    const double freq = rng.uniform(0.6, 2.2) / static_cast<double>(R);
    wv = {rng.uniform(0.015, 0.04), freq * std::cos(ang), freq * std::sin(ang),
          rng.uniform(0.0, 2.0 * M_PI)};
  }
  for (size_t y = 0; y < R; ++y) {
    for (size_t x = 0; x < R; ++x) {
      double v = 0.55;
      for (const Wave& wv : waves)
        v += wv.amp *
             std::cos(2.0 * M_PI * (wv.fx * x + wv.fy * y) + wv.phase);
      const double dx = x - cx, dy = y - cy;
      v -= 0.06 * (dx * dx + dy * dy) / (fov_r * fov_r);
      img[y * R + x] = static_cast<float>(v);
    }
  }

  // Curvilinear structures as random-walk centerlines with per-vessel
  // thickness, tracked through a signed distance field.
  Scene sc;
  sc.sdf.assign(R * R, std::numeric_limits<float>::max());
  sc.cdist.assign(R * R, std::numeric_limits<float>::max());
  sc.near_t.assign(R * R, 1.0f);
  const int count =
      d.vessel_count_min +
      static_cast<int>(rng.uniform_int(
          static_cast<uint64_t>(d.vessel_count_max - d.vessel_count_min + 1)));
  for (int v = 0; v < count; ++v) {
    const double thick = rng.uniform(d.thickness_min, d.thickness_max);
    const double alpha = rng.uniform(0.0, 2.0 * M_PI);
    double px = cx + 0.92 * fov_r * std::cos(alpha);
    double py = cy + 0.92 * fov_r * std::sin(alpha);
    double theta = alpha + M_PI + rng.uniform(-0.7, 0.7);
    const double step = 0.5;
    const size_t max_steps = 6 * R;
    for (size_t s = 0; s < max_steps; ++s) {
      stamp_point(sc, R, px, py, thick);
      theta += d.curvature * 0.35 * rng.normal();
      px += step * std::cos(theta);
      py += step * std::sin(theta);
      const double dx = px - cx, dy = py - cy;
      if (std::sqrt(dx * dx + dy * dy) > fov_r + thick) break;
    }
  }

  std::vector<float> mask(R * R, 0.0f);
  std::vector<float> fov(R * R, 0.0f);
  for (size_t y = 0; y < R; ++y) {
    for (size_t x = 0; x < R; ++x) {
      const size_t i = y * R + x;
      const double dx = x - cx, dy = y - cy;
      const bool inside = dx * dx + dy * dy <= fov_r * fov_r;
      fov[i] = inside ? 1.0f : 0.0f;
      const float sdf = sc.sdf[i];
      if (inside && sdf <= 0.0f) mask[i] = 1.0f;
      // Intensity: darken the tube with a half-pixel soft edge.
      double dip = 0.0;
      if (sdf < 0.5f) dip = std::min(1.0, 0.5 - static_cast<double>(sdf));
      double vpix = img[i] - d.contrast * dip;
      if (d.central_reflex && sdf < 0.25f) {
        const double sig = std::max(0.35, sc.near_t[i] / 6.0);
        const double cd = sc.cdist[i];
        vpix += d.reflex_brightness * std::exp(-0.5 * cd * cd / (sig * sig));
      }
      img[i] = static_cast<float>(vpix);
    }
  }

  // Dark border outside the field of view, as in fundus photographs.
  for (size_t i = 0; i < img.size(); ++i)
    if (fov[i] == 0.0f) img[i] = 0.015f;

  img = gaussian_blur(img, R, d.blur_radius);

  for (size_t i = 0; i < img.size(); ++i) {
    if (fov[i] > 0.0f)
      img[i] += static_cast<float>(d.noise_sigma * rng.normal());
    img[i] = std::clamp(img[i], 0.0f, 1.0f);
  }

  Sample s;
  s.domain = d.name;
  s.id = std::move(id);
  s.image = Tensor<float>::from({1, R, R}, std::move(img));
  s.mask = Tensor<float>::from({1, R, R}, std::move(mask));
  s.fov = Tensor<float>::from({1, R, R}, std::move(fov));
  return s;
}

std::string index_id(const std::string& domain, size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%04zu", i);
  return domain + "_" + buf;
}

}  // namespace

std::vector<Sample> synth_generate(const SynthDomain& domain, size_t n,
                                   size_t resolution, uint64_t seed) {
  domain.validate();
  if (resolution < 16)
    throw ConfigError("synth_generate: resolution must be >= 16");
  std::vector<Sample> out;
  out.reserve(n);
  const uint64_t base = mix_seed(seed, 0x53594e5448ULL);
  for (size_t i = 0; i < n; ++i) {
    out.push_back(synth_one(domain, resolution, mix_seed(base, i),
                            index_id(domain.name, i)));
    validate_sample(out.back());
  }
  return out;
}

// ---------------------------------------------------------------------------
// Materialization and manifests.
// ---------------------------------------------------------------------------
namespace {

json domain_to_json(const SynthDomain& d) {
  return json{{"name", d.name},
              {"vessel_count_min", d.vessel_count_min},
              {"vessel_count_max", d.vessel_count_max},
              {"thickness_min", d.thickness_min},
              {"thickness_max", d.thickness_max},
              {"curvature", d.curvature},
              {"contrast", d.contrast},
              {"central_reflex", d.central_reflex},
              {"reflex_brightness", d.reflex_brightness},
              {"noise_sigma", d.noise_sigma},
              {"blur_radius", d.blur_radius}};
}

SynthDomain domain_from_json(const json& j) {
  SynthDomain d;
  d.name = j.at("name").get<std::string>();
  d.vessel_count_min = j.at("vessel_count_min").get<int>();
  d.vessel_count_max = j.at("vessel_count_max").get<int>();
  d.thickness_min = j.at("thickness_min").get<float>();
  d.thickness_max = j.at("thickness_max").get<float>();
  d.curvature = j.at("curvature").get<float>();
  d.contrast = j.at("contrast").get<float>();
  d.central_reflex = j.at("central_reflex").get<bool>();
  d.reflex_brightness = j.at("reflex_brightness").get<float>();
  d.noise_sigma = j.at("noise_sigma").get<float>();
  d.blur_radius = j.at("blur_radius").get<float>();
  return d;
}

std::vector<uint8_t> plane_to_u8(const Tensor<float>& t) {
  std::vector<float> v(t.data().begin(), t.data().end());
  return quantize_u8(v);
}

}  // namespace

void materialize_dataset(const std::vector<Sample>& samples,
                         const SynthDomain& domain, size_t resolution,
                         uint64_t seed, const std::string& out_dir) {
  const fs::path base(out_dir);
  std::error_code ec;
  fs::create_directories(base / "images", ec);
  fs::create_directories(base / "masks", ec);
  fs::create_directories(base / "fov", ec);
  if (!fs::is_directory(base / "images"))
    throw IoError("cannot create dataset directory " + out_dir);

  json ids = json::array();
  for (const Sample& s : samples) {
    const size_t R = s.image.dim(1);
    write_png_gray((base / "images" / (s.id + ".png")).string(), R, R,
                   plane_to_u8(s.image));
    write_png_gray((base / "masks" / (s.id + ".png")).string(), R, R,
                   plane_to_u8(s.mask));
    write_png_gray((base / "fov" / (s.id + ".png")).string(), R, R,
                   plane_to_u8(s.fov));
    ids.push_back(s.id);
  }

  json manifest{{"domain", domain_to_json(domain)},
                {"n", samples.size()},
                {"resolution", resolution},
                {"seed", seed},
                {"ids", ids}};
  std::ofstream os(base / "manifest.json");
  if (!os) throw IoError("cannot write manifest under " + out_dir);
  os << manifest.dump(2) << "\n";
}

SynthManifest read_manifest(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open manifest: " + path);
  json j;
  try {
    is >> j;
  } catch (const json::exception& e) {
    throw FormatError("malformed manifest " + path + ": " + e.what());
  }
  SynthManifest m;
  m.domain = domain_from_json(j.at("domain"));
  m.n = j.at("n").get<size_t>();
  m.resolution = j.at("resolution").get<size_t>();
  m.seed = j.at("seed").get<uint64_t>();
  for (const auto& id : j.at("ids")) m.ids.push_back(id.get<std::string>());
  return m;
}

}  // namespace errornet
