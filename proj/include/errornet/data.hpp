#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "errornet/tensor.hpp"

namespace errornet {

// One training/eval record. Planes are [1,H,W]; the image is in [0,1] before
// normalization, mask and fov are {0,1}. Invariant: mask is a subset of fov.
struct Sample {
  Tensor<float> image;
  Tensor<float> mask;
  Tensor<float> fov;
  std::string domain;
  std::string id;
};

void validate_sample(const Sample& s);

// Per-domain train/val/test counts; the sum must match the number of files.
struct SplitSpec {
  size_t train = 0;
  size_t val = 0;
  size_t test = 0;
  size_t total() const { return train + val + test; }
};

struct DatasetSplits {
  std::vector<Sample> train, val, test;
};

// Loads `<root>/<domain>/{images,masks[,fov]}/*` (PNG or PGM/PPM, paired by
// stem), converts to single channel (green channel for RGB), resizes to
// `resolution` (bilinear image / nearest mask and fov) and assigns splits by
// a seed-deterministic shuffle. A missing fov is derived by thresholding
// near-black pixels (< 10/255 on all channels).
DatasetSplits load_dataset(const std::string& root, const std::string& domain,
                           const SplitSpec& split, size_t resolution,
                           uint64_t seed);

// Z-scores the image over fov pixels only; pixels outside the fov are set to
// zero. Throws DataError when the fov has zero variance.
Sample normalize_fov(const Sample& s);

// prob >= threshold -> 1 else 0.
Tensor<float> binarize(const Tensor<float>& prob, float threshold = 0.5f);

// Knobs of one synthetic curvilinear-structure domain.
struct SynthDomain {
  std::string name = "custom";
  int vessel_count_min = 4;
  int vessel_count_max = 6;
  float thickness_min = 1.5f;  // px
  float thickness_max = 2.5f;  // px
  float curvature = 0.12f;
  float contrast = 0.35f;  // vessel-vs-background intensity gap, (0,1]
  bool central_reflex = false;
  float reflex_brightness = 0.0f;
  float noise_sigma = 0.03f;
  float blur_radius = 0.7f;

  void validate() const;
};

// The five shipped presets mirroring the cross-domain evaluation grid:
// chase-like, drive-like, aria-like, stare-like, hrf-like.
SynthDomain synth_preset(const std::string& name);
const std::vector<std::string>& synth_preset_names();

// Deterministic generation: sample i depends only on (domain, seed, i).
std::vector<Sample> synth_generate(const SynthDomain& domain, size_t n,
                                   size_t resolution, uint64_t seed);

// Writes samples to `<out_dir>/{images,masks,fov}/<id>.png` plus a
// manifest.json recording the generating parameters.
void materialize_dataset(const std::vector<Sample>& samples,
                         const SynthDomain& domain, size_t resolution,
                         uint64_t seed, const std::string& out_dir);

// Re-reads a manifest written by materialize_dataset.
struct SynthManifest {
  SynthDomain domain;
  size_t n = 0;
  size_t resolution = 0;
  uint64_t seed = 0;
  std::vector<std::string> ids;
};
SynthManifest read_manifest(const std::string& path);

}  // namespace errornet
