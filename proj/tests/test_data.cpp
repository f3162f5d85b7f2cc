#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "errornet/data.hpp"
#include "errornet/image.hpp"
#include "errornet/rng.hpp"
#include "support/reference_ops.hpp"

namespace fs = std::filesystem;
using namespace errornet;
using namespace errornet::testref;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag) {
    path = fs::temp_directory_path() / ("errornet_test_" + tag);
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

std::vector<uint8_t> file_bytes(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  return std::vector<uint8_t>(std::istreambuf_iterator<char>(is), {});
}

double vessel_fraction(const Sample& s) {
  size_t mask = 0, fov = 0;
  for (size_t i = 0; i < s.mask.numel(); ++i) {
    mask += s.mask.data()[i] > 0.5f;
    fov += s.fov.data()[i] > 0.5f;
  }
  return static_cast<double>(mask) / static_cast<double>(fov);
}

// Mean intensity gap between vessel-core pixels and background fov pixels.
double measured_contrast(const Sample& s) {
  double vessel = 0.0, bg = 0.0;
  size_t nv = 0, nb = 0;
  for (size_t i = 0; i < s.image.numel(); ++i) {
    if (s.fov.data()[i] <= 0.5f) continue;
    if (s.mask.data()[i] > 0.5f) {
      vessel += s.image.data()[i];
      ++nv;
    } else {
      bg += s.image.data()[i];
      ++nb;
    }
  }
  return bg / nb - vessel / nv;
}

}  // namespace

TEST_CASE("synthetic generation is deterministic and non-trivial") {
  const SynthDomain d = synth_preset("chase-like");
  auto a = synth_generate(d, 3, 64, 7);
  auto b = synth_generate(d, 3, 64, 7);
  REQUIRE(a.size() == 3);
  CHECK(synth_generate(d, 0, 64, 7).empty());
  for (size_t i = 0; i < 3; ++i) {
    CHECK(max_abs_diff(a[i].image, b[i].image) == 0.0);
    CHECK(max_abs_diff(a[i].mask, b[i].mask) == 0.0);
    CHECK(max_abs_diff(a[i].fov, b[i].fov) == 0.0);
    CHECK(a[i].id == b[i].id);
  }
  auto c = synth_generate(d, 1, 64, 8);
  CHECK(max_abs_diff(a[0].image, c[0].image) > 0.0);
}

TEST_CASE("vessel-pixel fraction falls in the rehearsal band") {
  const SynthDomain d = synth_preset("drive-like");
  // Rehearsal run with one seed establishes the expected band.
  auto rehearsal = synth_generate(d, 12, 64, 1234);
  double mean = 0.0;
  for (const auto& s : rehearsal) mean += vessel_fraction(s) / rehearsal.size();
  CHECK(mean > 0.01);
  CHECK(mean < 0.45);
  // An independent seed stays within a factor-two band of the rehearsal.
  auto probe = synth_generate(d, 12, 64, 4321);
  double probe_mean = 0.0;
  for (const auto& s : probe) probe_mean += vessel_fraction(s) / probe.size();
  CHECK(probe_mean > 0.5 * mean);
  CHECK(probe_mean < 2.0 * mean);
}

TEST_CASE("samples satisfy the mask-inside-fov invariant") {
  for (const std::string& name : synth_preset_names()) {
    auto samples = synth_generate(synth_preset(name), 2, 64, 99);
    for (const auto& s : samples) CHECK_NOTHROW(validate_sample(s));
  }
}

TEST_CASE("contrast knob shifts measured image statistics by its gap") {
  SynthDomain hi = synth_preset("drive-like");
  hi.central_reflex = false;
  hi.noise_sigma = 0.0f;
  hi.blur_radius = 0.0f;
  SynthDomain lo = hi;
  hi.contrast = 0.5f;
  lo.contrast = 0.3f;
  double chi = 0.0, clo = 0.0;
  const size_t n = 8;
  for (const auto& s : synth_generate(hi, n, 64, 5)) chi += measured_contrast(s) / n;
  for (const auto& s : synth_generate(lo, n, 64, 5)) clo += measured_contrast(s) / n;
  CHECK(chi > clo);  // monotone in the knob
  CHECK(chi - clo == doctest::Approx(0.2).epsilon(0.4));
}

TEST_CASE("materialized datasets round-trip through png") {
  TempDir tmp("roundtrip");
  const SynthDomain d = synth_preset("aria-like");
  auto samples = synth_generate(d, 4, 64, 11);
  materialize_dataset(samples, d, 64, 11, (tmp.path / d.name).string());

  auto loaded = load_dataset(tmp.path.string(), d.name, {2, 1, 1}, 64, 3);
  CHECK(loaded.train.size() == 2);
  CHECK(loaded.val.size() == 1);
  CHECK(loaded.test.size() == 1);

  // Reload by id and compare: masks exact, image within the 8-bit quantum.
  std::vector<Sample> all;
  for (auto* split : {&loaded.train, &loaded.val, &loaded.test})
    for (const auto& s : *split) all.push_back(s);
  for (const Sample& orig : samples) {
    const Sample* found = nullptr;
    for (const Sample& s : all)
      if (s.id == orig.id) found = &s;
    REQUIRE(found != nullptr);
    CHECK(max_abs_diff(found->mask, orig.mask) == 0.0);
    CHECK(max_abs_diff(found->fov, orig.fov) == 0.0);
    CHECK(max_abs_diff(found->image, orig.image) <= 1.0 / 255.0 + 1e-6);
  }
}

TEST_CASE("materialization is byte-identical across reruns") {
  TempDir a("bytes_a"), b("bytes_b");
  const SynthDomain d = synth_preset("stare-like");
  auto s1 = synth_generate(d, 2, 64, 77);
  auto s2 = synth_generate(d, 2, 64, 77);
  materialize_dataset(s1, d, 64, 77, a.path.string());
  materialize_dataset(s2, d, 64, 77, b.path.string());
  for (const char* sub : {"images", "masks", "fov"}) {
    for (const auto& e : fs::directory_iterator(a.path / sub)) {
      const fs::path other = b.path / sub / e.path().filename();
      REQUIRE(fs::exists(other));
      CHECK(file_bytes(e.path()) == file_bytes(other));
    }
  }
  CHECK(file_bytes(a.path / "manifest.json") ==
        file_bytes(b.path / "manifest.json"));
}

TEST_CASE("manifest replay regenerates identical samples") {
  TempDir tmp("manifest");
  const SynthDomain d = synth_preset("hrf-like");
  auto samples = synth_generate(d, 3, 64, 13);
  materialize_dataset(samples, d, 64, 13, tmp.path.string());
  const SynthManifest m = read_manifest((tmp.path / "manifest.json").string());
  CHECK(m.n == 3);
  CHECK(m.seed == 13);
  CHECK(m.resolution == 64);
  CHECK(m.ids.size() == 3);
  auto replay = synth_generate(m.domain, m.n, m.resolution, m.seed);
  for (size_t i = 0; i < 3; ++i)
    CHECK(max_abs_diff(replay[i].image, samples[i].image) == 0.0);
}

TEST_CASE("split assignment is deterministic and exhaustive") {
  TempDir tmp("splits");
  const SynthDomain d = synth_preset("drive-like");
  auto samples = synth_generate(d, 40, 32, 21);
  materialize_dataset(samples, d, 32, 21, (tmp.path / d.name).string());

  auto a = load_dataset(tmp.path.string(), d.name, {18, 2, 20}, 32, 5);
  auto b = load_dataset(tmp.path.string(), d.name, {18, 2, 20}, 32, 5);
  CHECK(a.train.size() == 18);
  CHECK(a.val.size() == 2);
  CHECK(a.test.size() == 20);
  for (size_t i = 0; i < 18; ++i) CHECK(a.train[i].id == b.train[i].id);
  for (size_t i = 0; i < 20; ++i) CHECK(a.test[i].id == b.test[i].id);

  // Pairwise disjoint and exhaustive.
  std::set<std::string> ids;
  for (auto* split : {&a.train, &a.val, &a.test})
    for (const auto& s : *split) CHECK(ids.insert(s.id).second);
  CHECK(ids.size() == 40);

  CHECK_THROWS_AS(load_dataset(tmp.path.string(), d.name, {18, 2, 19}, 32, 5),
                  ConfigError);
}

TEST_CASE("empty directories produce typed errors") {
  TempDir tmp("empty");
  fs::create_directories(tmp.path / "nodomain" / "images");
  CHECK_THROWS_AS(load_dataset(tmp.path.string(), "missing", {1, 0, 0}, 32, 1),
                  DataError);
  CHECK_THROWS_AS(load_dataset(tmp.path.string(), "nodomain", {1, 0, 0}, 32, 1),
                  DataError);
}

TEST_CASE("fov is derived from near-black borders when absent") {
  TempDir tmp("derivefov");
  fs::create_directories(tmp.path / "d" / "images");
  fs::create_directories(tmp.path / "d" / "masks");
  // 8x8 image: left half black (background), right half bright.
  std::vector<uint8_t> img(64, 0);
  std::vector<uint8_t> mask(64, 0);
  for (size_t y = 0; y < 8; ++y)
    for (size_t x = 4; x < 8; ++x) {
      img[y * 8 + x] = 200;
      if (x == 5) mask[y * 8 + x] = 255;
    }
  write_png_gray((tmp.path / "d" / "images" / "a.png").string(), 8, 8, img);
  write_png_gray((tmp.path / "d" / "masks" / "a.png").string(), 8, 8, mask);
  auto ds = load_dataset(tmp.path.string(), "d", {1, 0, 0}, 8, 1);
  const Sample& s = ds.train[0];
  for (size_t y = 0; y < 8; ++y) {
    CHECK(s.fov.at({0, y, 0}) == 0.0f);  // black border excluded
    CHECK(s.fov.at({0, y, 6}) == 1.0f);
  }
  CHECK_NOTHROW(validate_sample(s));
}

TEST_CASE("normalize_fov standardizes inside and zeroes outside") {
  auto samples = synth_generate(synth_preset("chase-like"), 1, 64, 3);
  const Sample n = normalize_fov(samples[0]);
  double mean = 0.0, var = 0.0;
  size_t cnt = 0;
  for (size_t i = 0; i < n.image.numel(); ++i) {
    if (n.fov.data()[i] > 0.5f) {
      mean += n.image.data()[i];
      ++cnt;
    } else {
      CHECK(n.image.data()[i] == 0.0f);
    }
  }
  mean /= cnt;
  for (size_t i = 0; i < n.image.numel(); ++i)
    if (n.fov.data()[i] > 0.5f) {
      const double d = n.image.data()[i] - mean;
      var += d * d / cnt;
    }
  CHECK(std::abs(mean) < 1e-5);
  CHECK(std::sqrt(var) == doctest::Approx(1.0).epsilon(1e-3));
}

TEST_CASE("normalize_fov on an all-fov image is a plain z-score") {
  Rng rng(31);
  Sample s;
  s.id = "flat";
  s.domain = "test";
  s.image = random_tensor<float>({1, 8, 8}, rng, 0.0, 1.0);
  s.fov = Tensor<float>::full({1, 8, 8}, 1.0f);
  s.mask = Tensor<float>::zeros({1, 8, 8});
  const Sample n = normalize_fov(s);
  double mean = 0.0;
  for (float v : n.image.data()) mean += v / 64.0;
  CHECK(std::abs(mean) < 1e-6);
}

TEST_CASE("normalize_fov rejects degenerate images") {
  Sample s;
  s.id = "flat";
  s.domain = "test";
  s.image = Tensor<float>::full({1, 4, 4}, 0.5f);
  s.fov = Tensor<float>::full({1, 4, 4}, 1.0f);
  s.mask = Tensor<float>::zeros({1, 4, 4});
  CHECK_THROWS_AS(normalize_fov(s), DataError);
}

TEST_CASE("binarize uses the >= convention and is idempotent on masks") {
  auto half = Tensor<float>::full({1, 3, 3}, 0.5f);
  auto b = binarize(half);
  for (float v : b.data()) CHECK(v == 1.0f);
  Rng rng(32);
  auto g = random_binary_tensor<float>({1, 5, 5}, rng);
  CHECK(max_abs_diff(binarize(g), g) == 0.0);
  // Counts agree with a scalar-loop threshold oracle.
  auto p = random_tensor<float>({1, 6, 6}, rng, 0.0, 1.0);
  size_t expect = 0;
  for (float v : p.data()) expect += v >= 0.5f;
  auto bp = binarize(p);
  size_t got = 0;
  for (float v : bp.data()) got += v == 1.0f;
  CHECK(got == expect);
}

TEST_CASE("pnm images load through the same path") {
  TempDir tmp("pnm");
  fs::create_directories(tmp.path / "d" / "images");
  fs::create_directories(tmp.path / "d" / "masks");
  {
    std::ofstream os(tmp.path / "d" / "images" / "x.pgm", std::ios::binary);
    os << "P5\n4 4\n255\n";
    for (int i = 0; i < 16; ++i) os.put(static_cast<char>(100 + i));
  }
  {
    std::ofstream os(tmp.path / "d" / "masks" / "x.pgm", std::ios::binary);
    os << "P5\n4 4\n255\n";
    for (int i = 0; i < 16; ++i) os.put(static_cast<char>(i % 2 ? 255 : 0));
  }
  auto ds = load_dataset(tmp.path.string(), "d", {1, 0, 0}, 4, 1);
  CHECK(ds.train.size() == 1);
  CHECK(ds.train[0].image.at({0, 0, 1}) ==
        doctest::Approx(101.0 / 255.0).epsilon(1e-6));
}
