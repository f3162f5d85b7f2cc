#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "errornet/param_store.hpp"

namespace errornet {

// Checkpoint header. `extra` carries stage bookkeeping (epoch, best metric,
// patience, network spec) as flat key/value strings.
struct CheckpointMeta {
  std::string stage;
  uint64_t global_step = 0;
  std::string rng_state;
  std::map<std::string, std::string> extra;
};

// Binary format, little-endian, versioned; parameters are raw 32-bit floats
// so that save -> load -> save is byte-identical.
void save_checkpoint(
    const std::string& path, const CheckpointMeta& meta,
    const std::vector<std::pair<std::string, const ParamStore*>>& stores);

struct LoadedCheckpoint {
  CheckpointMeta meta;
  std::vector<std::pair<std::string, ParamStore>> stores;

  ParamStore& store(const std::string& name);
  bool has_store(const std::string& name) const;
};

// Throws FormatError naming the byte offset on truncated or corrupt files.
LoadedCheckpoint load_checkpoint(const std::string& path);

// Copies values, buffers, Adam moments and the step counter from `src` into
// `dst`, matching entries by name; shapes must agree.
void assign_params(ParamStore& dst, const ParamStore& src);

}  // namespace errornet
