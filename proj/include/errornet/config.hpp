#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace errornet {

// Flat key=value run configuration. Every key in the registry has a default,
// may appear in a config file (one `key=value` per line, `#` comments), and
// can be overridden from the command line. Unknown keys are rejected; the
// effective configuration is echoed verbatim into the output directory so a
// run can be reproduced from its artifacts.
class RunConfig {
 public:
  struct KeyDef {
    std::string key;
    std::string def;
    std::string help;
  };

  RunConfig();

  static const std::vector<KeyDef>& registry();

  void load_file(const std::string& path);
  void set(const std::string& key, const std::string& value);

  const std::string& get(const std::string& key) const;
  int64_t get_int(const std::string& key) const;
  uint64_t get_uint(const std::string& key) const;
  double get_double(const std::string& key) const;
  bool get_bool(const std::string& key) const;

  // Sorted key=value dump.
  std::string echo() const;
  void write_echo(const std::string& dir) const;

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace errornet
