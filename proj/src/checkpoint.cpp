#include "errornet/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "errornet/error.hpp"

namespace errornet {

namespace {

constexpr char kMagic[4] = {'E', 'N', 'C', 'K'};
constexpr uint32_t kVersion = 1;

class Writer {
 public:
  explicit Writer(const std::string& path) : os_(path, std::ios::binary) {
    if (!os_) throw IoError("cannot open checkpoint for writing: " + path);
  }
  void raw(const void* p, size_t n) {
    os_.write(static_cast<const char*>(p), static_cast<long>(n));
  }
  void u8(uint8_t v) { raw(&v, 1); }
  void u32(uint32_t v) { raw(&v, 4); }
  void u64(uint64_t v) { raw(&v, 8); }
  void str(const std::string& s) {
    u32(static_cast<uint32_t>(s.size()));
    raw(s.data(), s.size());
  }
  void floats(const float* p, size_t n) { raw(p, n * sizeof(float)); }
  bool ok() const { return static_cast<bool>(os_); }

 private:
  std::ofstream os_;
};

class Reader {
 public:
  explicit Reader(const std::string& path)
      : path_(path), is_(path, std::ios::binary) {
    if (!is_) throw IoError("cannot open checkpoint: " + path);
  }
  void raw(void* p, size_t n) {
    is_.read(static_cast<char*>(p), static_cast<long>(n));
    if (is_.gcount() != static_cast<long>(n))
      throw FormatError("checkpoint " + path_ + ": truncated at byte offset " +
                        std::to_string(offset_ + is_.gcount()));
    offset_ += n;
  }
  uint8_t u8() {
    uint8_t v;
    raw(&v, 1);
    return v;
  }
  uint32_t u32() {
    uint32_t v;
    raw(&v, 4);
    return v;
  }
  uint64_t u64() {
    uint64_t v;
    raw(&v, 8);
    return v;
  }
  std::string str() {
    const uint32_t n = u32();
    if (n > (1u << 28))
      throw FormatError("checkpoint " + path_ +
                        ": implausible string length at byte offset " +
                        std::to_string(offset_ - 4));
    std::string s(n, '\0');
    raw(s.data(), n);
    return s;
  }
  std::vector<float> floats(size_t n) {
    std::vector<float> v(n);
    raw(v.data(), n * sizeof(float));
    return v;
  }
  size_t offset() const { return offset_; }
  const std::string& path() const { return path_; }

 private:
  std::string path_;
  std::ifstream is_;
  size_t offset_ = 0;
};

}  // namespace

void save_checkpoint(
    const std::string& path, const CheckpointMeta& meta,
    const std::vector<std::pair<std::string, const ParamStore*>>& stores) {
  Writer w(path);
  w.raw(kMagic, 4);
  w.u32(kVersion);
  w.str(meta.stage);
  w.u64(meta.global_step);
  w.str(meta.rng_state);
  w.u32(static_cast<uint32_t>(meta.extra.size()));
  for (const auto& [k, v] : meta.extra) {
    w.str(k);
    w.str(v);
  }
  w.u32(static_cast<uint32_t>(stores.size()));
  for (const auto& [name, store] : stores) {
    w.str(name);
    w.u64(store->adam_steps());
    w.u32(static_cast<uint32_t>(store->size()));
    for (const ParamEntry& e : store->entries()) {
      w.str(e.name);
      w.u8(e.trainable ? 1 : 0);
      w.u8(e.frozen ? 1 : 0);
      const Shape& sh = e.tensor.shape();
      w.u32(static_cast<uint32_t>(sh.size()));
      for (size_t d : sh) w.u64(d);
      w.floats(e.tensor.data().data(), e.tensor.numel());
      const bool moments = !e.m.empty();
      w.u8(moments ? 1 : 0);
      if (moments) {
        w.floats(e.m.data(), e.m.size());
        w.floats(e.v.data(), e.v.size());
      }
    }
  }
  if (!w.ok()) throw IoError("failed writing checkpoint: " + path);
}

ParamStore& LoadedCheckpoint::store(const std::string& name) {
  for (auto& [n, s] : stores)
    if (n == name) return s;
  throw UsageError("checkpoint has no store named '" + name + "'");
}

bool LoadedCheckpoint::has_store(const std::string& name) const {
  for (const auto& [n, s] : stores)
    if (n == name) return true;
  return false;
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
  Reader r(path);
  char magic[4];
  r.raw(magic, 4);
  if (std::memcmp(magic, kMagic, 4) != 0)
    throw FormatError("checkpoint " + path + ": bad magic at byte offset 0");
  const uint32_t version = r.u32();
  if (version != kVersion)
    throw FormatError("checkpoint " + path + ": unsupported format version " +
                      std::to_string(version) + " at byte offset 4");

  LoadedCheckpoint out;
  out.meta.stage = r.str();
  out.meta.global_step = r.u64();
  out.meta.rng_state = r.str();
  const uint32_t nmeta = r.u32();
  for (uint32_t i = 0; i < nmeta; ++i) {
    std::string k = r.str();
    out.meta.extra[k] = r.str();
  }
  const uint32_t nstores = r.u32();
  for (uint32_t si = 0; si < nstores; ++si) {
    std::string sname = r.str();
    ParamStore store;
    store.set_adam_steps(r.u64());
    const uint32_t nentries = r.u32();
    for (uint32_t ei = 0; ei < nentries; ++ei) {
      std::string ename = r.str();
      const bool trainable = r.u8() != 0;
      const bool frozen = r.u8() != 0;
      const uint32_t ndim = r.u32();
      if (ndim > 8)
        throw FormatError("checkpoint " + path +
                          ": implausible tensor rank at byte offset " +
                          std::to_string(r.offset() - 4));
      Shape sh(ndim);
      for (uint32_t d = 0; d < ndim; ++d) sh[d] = r.u64();
      const size_t numel = shape_numel(sh);
      if (numel > (size_t{1} << 31))
        throw FormatError("checkpoint " + path +
                          ": implausible tensor size at byte offset " +
                          std::to_string(r.offset()));
      Tensor<float> t = Tensor<float>::from(sh, r.floats(numel));
      store.add(ename, std::move(t), trainable);
      ParamEntry& entry = store.entry(ename);
      entry.frozen = frozen;
      entry.tensor.set_requires_grad(trainable && !frozen);
      if (r.u8() != 0) {
        entry.m = r.floats(numel);
        entry.v = r.floats(numel);
      }
    }
    out.stores.emplace_back(std::move(sname), std::move(store));
  }
  return out;
}

void assign_params(ParamStore& dst, const ParamStore& src) {
  for (const ParamEntry& se : src.entries()) {
    if (!dst.has(se.name))
      throw UsageError("checkpoint parameter '" + se.name +
                       "' has no destination");
    ParamEntry& de = dst.entry(se.name);
    if (de.tensor.shape() != se.tensor.shape())
      throw UsageError("checkpoint parameter '" + se.name +
                       "' shape mismatch: " + shape_str(se.tensor.shape()) +
                       " vs " + shape_str(de.tensor.shape()));
    std::copy(se.tensor.data().begin(), se.tensor.data().end(),
              de.tensor.data_mut().begin());
    de.m = se.m;
    de.v = se.v;
  }
  dst.set_adam_steps(src.adam_steps());
}

}  // namespace errornet
