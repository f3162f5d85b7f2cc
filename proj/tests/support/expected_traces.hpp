#pragma once

// Frozen per-layer shape expectations for the three networks at the
// canonical configuration (640 px, base width 32, latent 6400). Shapes are
// written h/w/c to mirror the architecture tables and stored as {C,H,W};
// dense rows are flat vectors. The injector's final two rows carry the
// adopted single output channel (k = 1 foreground class).

#include <string>
#include <vector>

#include "errornet/network.hpp"

namespace errornet::testref {

struct ExpectedRow {
  std::string name;
  std::vector<Shape> in;
  Shape out;
};

inline Shape hwc(size_t h, size_t w, size_t c) { return Shape{c, h, w}; }
inline Shape flat(size_t d) { return Shape{d}; }

inline std::vector<ExpectedRow> expected_seg_rows() {
  std::vector<ExpectedRow> r;
  auto row = [&r](std::string name, Shape in, Shape out) {
    r.push_back({std::move(name), {std::move(in)}, std::move(out)});
  };
  row("Conv layer - 1a", hwc(640, 640, 1), hwc(640, 640, 32));
  row("Conv layer - 1b", hwc(640, 640, 32), hwc(640, 640, 32));
  row("Max pool - 1", hwc(640, 640, 32), hwc(320, 320, 32));
  row("Conv layer - 2a", hwc(320, 320, 32), hwc(320, 320, 64));
  row("Conv layer - 2b", hwc(320, 320, 64), hwc(320, 320, 64));
  row("Max pool - 2", hwc(320, 320, 64), hwc(160, 160, 64));
  row("Conv layer - 3a", hwc(160, 160, 64), hwc(160, 160, 128));
  row("Conv layer - 3b", hwc(160, 160, 128), hwc(160, 160, 128));
  row("Max pool - 3", hwc(160, 160, 128), hwc(80, 80, 128));
  row("Conv layer - 4a", hwc(80, 80, 128), hwc(80, 80, 256));
  row("Conv layer - 4b", hwc(80, 80, 256), hwc(80, 80, 256));
  row("Max pool - 4", hwc(80, 80, 256), hwc(40, 40, 256));
  row("Conv layer - 5a", hwc(40, 40, 256), hwc(40, 40, 512));
  row("Conv layer - 5b", hwc(40, 40, 512), hwc(40, 40, 512));
  row("Upsample - 1", hwc(40, 40, 512), hwc(80, 80, 512));
  r.push_back({"Concat - 1",
               {hwc(80, 80, 512), hwc(80, 80, 256)},
               hwc(80, 80, 768)});
  row("Conv layer - 6a", hwc(80, 80, 768), hwc(80, 80, 256));
  row("Conv layer - 6b", hwc(80, 80, 256), hwc(80, 80, 256));
  row("Upsample - 2", hwc(80, 80, 256), hwc(160, 160, 256));
  r.push_back({"Concat - 2",
               {hwc(160, 160, 256), hwc(160, 160, 128)},
               hwc(160, 160, 384)});
  row("Conv layer - 7a", hwc(160, 160, 384), hwc(160, 160, 128));
  row("Conv layer - 7b", hwc(160, 160, 128), hwc(160, 160, 128));
  row("Upsample - 3", hwc(160, 160, 128), hwc(320, 320, 128));
  r.push_back({"Concat - 3",
               {hwc(320, 320, 128), hwc(320, 320, 64)},
               hwc(320, 320, 192)});
  row("Conv layer - 8a", hwc(320, 320, 192), hwc(320, 320, 64));
  row("Conv layer - 8b", hwc(320, 320, 64), hwc(320, 320, 64));
  row("Upsample - 4", hwc(320, 320, 64), hwc(640, 640, 64));
  r.push_back({"Concat - 4",
               {hwc(640, 640, 64), hwc(640, 640, 32)},
               hwc(640, 640, 96)});
  row("Conv layer - 9a", hwc(640, 640, 96), hwc(640, 640, 32));
  row("Conv layer - 9b", hwc(640, 640, 32), hwc(640, 640, 32));
  row("Output layer", hwc(640, 640, 32), hwc(640, 640, 1));
  return r;
}

inline std::vector<ExpectedRow> expected_vae_rows() {
  std::vector<ExpectedRow> r;
  auto row = [&r](std::string name, Shape in, Shape out) {
    r.push_back({std::move(name), {std::move(in)}, std::move(out)});
  };
  row("Conv layer - 1a", hwc(640, 640, 1), hwc(640, 640, 32));
  row("Conv layer - 1b", hwc(640, 640, 32), hwc(640, 640, 32));
  row("Max pool - 1", hwc(640, 640, 32), hwc(320, 320, 32));
  row("Conv layer - 2a", hwc(320, 320, 32), hwc(320, 320, 64));
  row("Conv layer - 2b", hwc(320, 320, 64), hwc(320, 320, 64));
  row("Max pool - 2", hwc(320, 320, 64), hwc(160, 160, 64));
  row("Conv layer - 3a", hwc(160, 160, 64), hwc(160, 160, 128));
  row("Conv layer - 3b", hwc(160, 160, 128), hwc(160, 160, 128));
  row("Max pool - 3", hwc(160, 160, 128), hwc(80, 80, 128));
  row("encoder conv - 4a", hwc(80, 80, 128), hwc(80, 80, 512));
  row("encoder conv - 4b", hwc(80, 80, 512), hwc(80, 80, 1));
  row("encoder dense - mu", hwc(80, 80, 1), flat(6400));
  row("encoder dense - sigma", hwc(80, 80, 1), flat(6400));
  r.push_back({"sampling - 1", {flat(6400), flat(6400)}, flat(6400)});
  row("reshape - 1", flat(6400), hwc(80, 80, 1));
  row("Conv transpose - 1", hwc(80, 80, 1), hwc(160, 160, 64));
  row("Conv layer - 5a", hwc(160, 160, 64), hwc(160, 160, 64));
  row("Conv layer - 5b", hwc(160, 160, 64), hwc(160, 160, 64));
  row("Conv transpose - 2", hwc(160, 160, 64), hwc(320, 320, 32));
  row("Conv layer - 6a", hwc(320, 320, 32), hwc(320, 320, 32));
  row("Conv layer - 6b", hwc(320, 320, 32), hwc(320, 320, 32));
  row("Upsample - 3", hwc(320, 320, 32), hwc(640, 640, 32));
  row("Conv layer - 7a", hwc(640, 640, 32), hwc(640, 640, 32));
  row("Conv layer - 7b", hwc(640, 640, 32), hwc(640, 640, 32));
  row("Output layer", hwc(640, 640, 32), hwc(640, 640, 1));
  row("Sigmoid layer", hwc(640, 640, 1), hwc(640, 640, 1));
  return r;
}

inline std::vector<ExpectedRow> expected_err_rows() {
  std::vector<ExpectedRow> r;
  auto row = [&r](std::string name, Shape in, Shape out) {
    r.push_back({std::move(name), {std::move(in)}, std::move(out)});
  };
  r.push_back({"Concat - input",
               {hwc(640, 640, 1), hwc(640, 640, 1)},
               hwc(640, 640, 2)});
  row("Conv layer - 1a", hwc(640, 640, 2), hwc(640, 640, 32));
  row("Conv layer - 1b", hwc(640, 640, 32), hwc(640, 640, 32));
  row("Max pool - 1", hwc(640, 640, 32), hwc(320, 320, 32));
  row("Conv layer - 2a", hwc(320, 320, 32), hwc(320, 320, 64));
  row("Conv layer - 2b", hwc(320, 320, 64), hwc(320, 320, 64));
  row("Max pool - 2", hwc(320, 320, 64), hwc(160, 160, 64));
  row("Conv layer - 3a", hwc(160, 160, 64), hwc(160, 160, 128));
  row("Conv layer - 3b", hwc(160, 160, 128), hwc(160, 160, 128));
  row("Max pool - 3", hwc(160, 160, 128), hwc(80, 80, 128));
  row("Conv layer - 4a", hwc(80, 80, 128), hwc(80, 80, 256));
  row("Conv layer - 4b", hwc(80, 80, 256), hwc(80, 80, 256));
  row("Upsample - 2", hwc(80, 80, 256), hwc(160, 160, 256));
  r.push_back({"Concat - 2",
               {hwc(160, 160, 256), hwc(160, 160, 128)},
               hwc(160, 160, 384)});
  row("Conv layer - 7a", hwc(160, 160, 384), hwc(160, 160, 128));
  row("Conv layer - 7b", hwc(160, 160, 128), hwc(160, 160, 128));
  row("Upsample - 3", hwc(160, 160, 128), hwc(320, 320, 128));
  r.push_back({"Concat - 3",
               {hwc(320, 320, 128), hwc(320, 320, 64)},
               hwc(320, 320, 192)});
  row("Conv layer - 8a", hwc(320, 320, 192), hwc(320, 320, 64));
  row("Conv layer - 8b", hwc(320, 320, 64), hwc(320, 320, 64));
  row("Upsample - 4", hwc(320, 320, 64), hwc(640, 640, 64));
  r.push_back({"Concat - 4",
               {hwc(640, 640, 64), hwc(640, 640, 32)},
               hwc(640, 640, 96)});
  row("Conv layer - 9a", hwc(640, 640, 96), hwc(640, 640, 32));
  row("Conv layer - 9b", hwc(640, 640, 32), hwc(640, 640, 32));
  row("Output layer", hwc(640, 640, 32), hwc(640, 640, 1));
  return r;
}

// Empty string on success; otherwise a description of the first mismatch.
inline std::string compare_trace(const std::vector<LayerTrace>& got,
                                 const std::vector<ExpectedRow>& want) {
  auto fmt = [](const Shape& s) {
    std::string o = "{";
    for (size_t i = 0; i < s.size(); ++i)
      o += (i ? "," : "") + std::to_string(s[i]);
    return o + "}";
  };
  if (got.size() != want.size())
    return "row count " + std::to_string(got.size()) + " vs expected " +
           std::to_string(want.size());
  for (size_t i = 0; i < got.size(); ++i) {
    if (got[i].name != want[i].name)
      return "row " + std::to_string(i) + ": name '" + got[i].name +
             "' vs expected '" + want[i].name + "'";
    if (got[i].in.size() != want[i].in.size())
      return "row " + std::to_string(i) + " (" + want[i].name +
             "): input arity mismatch";
    for (size_t k = 0; k < got[i].in.size(); ++k)
      if (got[i].in[k] != want[i].in[k])
        return "row " + std::to_string(i) + " (" + want[i].name + "): input " +
               std::to_string(k) + " " + fmt(got[i].in[k]) + " vs expected " +
               fmt(want[i].in[k]);
    if (got[i].out != want[i].out)
      return "row " + std::to_string(i) + " (" + want[i].name + "): output " +
             fmt(got[i].out) + " vs expected " + fmt(want[i].out);
  }
  return {};
}

}  // namespace errornet::testref
