#include "errornet/config.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "errornet/error.hpp"

namespace errornet {

const std::vector<RunConfig::KeyDef>& RunConfig::registry() {
  static const std::vector<KeyDef> defs = {
      {"stage", "seg", "training stage: seg|vae|err|joint"},
      {"resolution", "64", "input resolution in pixels"},
      {"base_width", "4", "channels of the first block"},
      {"width_scale", "1.0", "multiplier applied to all channel counts"},
      {"epochs", "30", "training epochs"},
      {"batch_size", "8", "samples per optimizer step"},
      {"lr", "0.001", "Adam learning rate"},
      {"seed", "1", "run seed"},
      {"patience", "10", "early-stop patience in epochs"},
      {"kl_weight", "1.0", "weight of the KL term in the VAE loss"},
      {"err_target", "signed", "error target form: signed|squared"},
      {"use_vae", "1", "err stage: degrade via the VAE (1) or use raw S (0)"},
      {"joint_input", "injected",
       "predictor input during joint training: injected|raw"},
      {"data.root", "", "dataset root directory"},
      {"data.domain", "", "training domain under the dataset root"},
      {"split.train", "0", "training sample count"},
      {"split.val", "0", "validation sample count"},
      {"split.test", "0", "test sample count"},
      {"ckpt.seg", "", "segmentation checkpoint (stages vae/err/joint)"},
      {"ckpt.vae", "", "error-injection checkpoint (stages err/joint)"},
      {"ckpt.err", "", "error-prediction checkpoint (stage joint)"},
      {"out", "", "output directory"},
      {"resume", "0", "resume from last.ckpt in the output directory"},
  };
  return defs;
}

RunConfig::RunConfig() {
  for (const KeyDef& d : registry()) values_[d.key] = d.def;
}

void RunConfig::load_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config file: " + path);
  std::string line;
  size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    auto trim = [](std::string s) {
      const auto a = s.find_first_not_of(" \t\r");
      if (a == std::string::npos) return std::string();
      const auto b = s.find_last_not_of(" \t\r");
      return s.substr(a, b - a + 1);
    };
    line = trim(line);
    if (line.empty()) continue;
    const size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(path + ":" + std::to_string(lineno) +
                        ": expected key=value");
    set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
}

void RunConfig::set(const std::string& key, const std::string& value) {
  auto it = values_.find(key);
  if (it == values_.end())
    throw ConfigError("unknown configuration key '" + key + "'");
  it->second = value;
}

const std::string& RunConfig::get(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end())
    throw ConfigError("unknown configuration key '" + key + "'");
  return it->second;
}

int64_t RunConfig::get_int(const std::string& key) const {
  try {
    return std::stoll(get(key));
  } catch (const std::exception&) {
    throw ConfigError("key '" + key + "' is not an integer: " + get(key));
  }
}

uint64_t RunConfig::get_uint(const std::string& key) const {
  try {
    return std::stoull(get(key));
  } catch (const std::exception&) {
    throw ConfigError("key '" + key + "' is not an unsigned integer: " +
                      get(key));
  }
}

double RunConfig::get_double(const std::string& key) const {
  try {
    return std::stod(get(key));
  } catch (const std::exception&) {
    throw ConfigError("key '" + key + "' is not a number: " + get(key));
  }
}

bool RunConfig::get_bool(const std::string& key) const {
  const std::string& v = get(key);
  if (v == "1" || v == "true" || v == "yes") return true;
  if (v == "0" || v == "false" || v == "no") return false;
  throw ConfigError("key '" + key + "' is not a boolean: " + v);
}

std::string RunConfig::echo() const {
  std::ostringstream os;
  for (const auto& [k, v] : values_) os << k << '=' << v << '\n';
  return os.str();
}

void RunConfig::write_echo(const std::string& dir) const {
  std::filesystem::create_directories(dir);
  const std::string path =
      (std::filesystem::path(dir) / "config.effective").string();
  std::ofstream os(path);
  if (!os) throw IoError("cannot write effective config: " + path);
  os << echo();
}

}  // namespace errornet
