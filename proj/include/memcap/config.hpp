#pragma once

// Flat key = value run configuration shared by the CLI subcommands.
//
//   # comment
//   epochs = 5
//   read-sigma = 0.02      (hyphens and underscores are interchangeable)
//
// Every command has a fixed key table; unknown keys are rejected and a
// value given as a flag beats the file, which beats the default.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "memcap/error.hpp"

namespace memcap {

enum class Command { hysteresis, train, eval, selfcheck };

inline const char* to_string(Command c) {
  switch (c) {
    case Command::hysteresis: return "hysteresis";
    case Command::train: return "train";
    case Command::eval: return "eval";
    case Command::selfcheck: return "selfcheck";
  }
  return "?";
}

struct ConfigKey {
  std::string name;           // canonical, underscores
  std::string default_value;  // textual; "" means unset
  std::string help;
  bool flag = false;          // boolean switch on the command line
};

inline std::string canonical_key(std::string_view k) {
  std::string s(k);
  std::replace(s.begin(), s.end(), '-', '_');
  return s;
}

/// Key table for one command. `data_dir` supplies dataset path defaults.
inline std::vector<ConfigKey> config_keys(Command cmd, const std::string& data_dir = "data") {
  std::vector<ConfigKey> keys = {
      {"seed", "0", "master seed; all other seeds derive from it"},
      {"deterministic", "false", "write 0 for wall-clock columns so repeated runs are byte-identical", true},
      {"out", "out", "output directory"},
  };
  auto add = [&](std::initializer_list<ConfigKey> more) { keys.insert(keys.end(), more); };
  const std::string mnist = (std::filesystem::path(data_dir) / "mnist").string();
  const std::string cifar = (std::filesystem::path(data_dir) / "cifar-10-batches-bin").string();
  switch (cmd) {
    case Command::hysteresis:
      add({{"c1", "1e-9", "C1 capacitance (F)"},
           {"c2", "1e-7", "C2 capacitance (F)"},
           {"r", "10000", "resistance (ohm)"},
           {"k", "2e-4", "OTA-2 transconductance coefficient (A/V^2)"},
           {"gm1", "1e-4", "OTA-1 transconductance (S)"},
           {"v_ss", "0", "negative supply (V)"},
           {"v_th", "0.45", "threshold voltage (V)"},
           {"v_dd", "1.8", "positive supply (V)"},
           {"sign", "1", "branch of the device law, +1 or -1"},
           {"mc_floor", "", "elastance floor (1/F); default beta/100"},
           {"amplitude", "1", "drive amplitude (V)"},
           {"frequency", "1000", "drive frequency (Hz)"},
           {"periods", "3", "number of drive periods"},
           {"steps_per_period", "1000", "Euler steps per period (>= 100)"}});
      break;
    case Command::train:
      add({{"preset", "mnist", "network preset: mnist or cifar10"},
           {"epochs", "", "training epochs; default 10 for mnist, 20 for cifar10"},
           {"batch_size", "64", "minibatch size"},
           {"lr", "1e-3", "learning rate"},
           {"optimizer", "adam", "sgd or adam"},
           {"momentum", "0.9", "sgd momentum"},
           {"beta1", "0.9", "adam beta1"},
           {"beta2", "0.999", "adam beta2"},
           {"epsilon", "1e-8", "adam epsilon"},
           {"train_limit", "0", "cap on training images (0 = all)"},
           {"test_limit", "0", "cap on test images (0 = all)"},
           {"split_seed", "0", "seed of the mnist 40k/20k/10k split and cifar subsets"},
           {"program_sigma", "0", "relative programming noise std"},
           {"read_sigma", "0", "read noise std relative to full scale"},
           {"bits", "inf", "capacitance levels exponent, or inf"},
           {"stuck_fraction", "0", "probability of a stuck cell"},
           {"w_max", "1", "largest representable weight magnitude"},
           {"dense_crossbar", "false", "also run dense layers on crossbars", true},
           {"precision", "float32", "float32 or float64"},
           {"mnist_dir", mnist, "directory with the four mnist idx files"},
           {"cifar_dir", cifar, "directory with the cifar-10 binary batches"},
           {"resume", "", "checkpoint to continue from"}});
      break;
    case Command::eval:
      add({{"checkpoint", "", "checkpoint written by train (required)"},
           {"split", "test", "test, holdout (mnist only) or train"},
           {"mnist_dir", mnist, "directory with the four mnist idx files"},
           {"cifar_dir", cifar, "directory with the cifar-10 binary batches"}});
      break;
    case Command::selfcheck:
      add({{"inject_read_sigma", "0", "read noise injected into the crossbar oracle check (negative control)"}});
      break;
  }
  return keys;
}

/// Parse flat key = value text. Errors carry the line number.
inline std::map<std::string, std::string> parse_config_text(const std::string& text) {
  std::map<std::string, std::string> out;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  auto trim = [](std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return std::string{};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
  };
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
    const auto key = canonical_key(trim(line.substr(0, eq)));
    if (key.empty()) throw ConfigError("config line " + std::to_string(lineno) + ": empty key");
    if (out.count(key)) throw ConfigError("config line " + std::to_string(lineno) + ": duplicate key '" + key + "'");
    out[key] = trim(line.substr(eq + 1));
  }
  return out;
}

inline std::map<std::string, std::string> load_config_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str());
}

/// Resolved key/value settings for one command with typed accessors.
class RunConfig {
 public:
  RunConfig() = default;
  RunConfig(Command cmd, std::map<std::string, std::string> values) : cmd_(cmd), values_(std::move(values)) {}

  [[nodiscard]] Command command() const noexcept { return cmd_; }
  [[nodiscard]] const std::map<std::string, std::string>& values() const noexcept { return values_; }
  [[nodiscard]] bool has(const std::string& key) const { return !raw(key).empty(); }

  [[nodiscard]] const std::string& raw(const std::string& key) const {
    const auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError("no config key '" + key + "' for " + to_string(cmd_));
    return it->second;
  }

  [[nodiscard]] std::string str(const std::string& key) const { return raw(key); }

  [[nodiscard]] double number(const std::string& key) const {
    const auto& s = raw(key);
    if (s == "inf") return std::numeric_limits<double>::infinity();
    double v = 0.0;
    const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
    if (r.ec != std::errc{} || r.ptr != s.data() + s.size() || !std::isfinite(v))
      throw ConfigError("config key '" + key + "': '" + s + "' is not a finite number");
    return v;
  }

  [[nodiscard]] std::uint64_t count(const std::string& key) const {
    const auto& s = raw(key);
    std::uint64_t v = 0;
    const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
    if (r.ec != std::errc{} || r.ptr != s.data() + s.size())
      throw ConfigError("config key '" + key + "': '" + s + "' is not a non-negative integer");
    return v;
  }

  [[nodiscard]] bool boolean(const std::string& key) const {
    const auto& s = raw(key);
    if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
    if (s == "false" || s == "0" || s == "no" || s == "off") return false;
    throw ConfigError("config key '" + key + "': '" + s + "' is not a boolean");
  }

  void set(const std::string& key, std::string value) {
    (void)raw(key);
    values_[key] = std::move(value);
  }

  /// Canonical "key=value\n" text in key order, used for the config hash.
  [[nodiscard]] std::string canonical_text() const {
    std::string s;
    for (const auto& [k, v] : values_) s += k + "=" + v + "\n";
    return s;
  }

 private:
  Command cmd_ = Command::selfcheck;
  std::map<std::string, std::string> values_;
};

/// Merge defaults, file values and flag values (flag > file > default).
inline RunConfig resolve_config(Command cmd, const std::map<std::string, std::string>& file,
                                const std::map<std::string, std::string>& flags,
                                const std::string& data_dir = "data") {
  std::map<std::string, std::string> v;
  for (const auto& k : config_keys(cmd, data_dir)) v[k.name] = k.default_value;
  auto overlay = [&](const std::map<std::string, std::string>& src, const char* origin) {
    for (const auto& [key, value] : src) {
      const auto k = canonical_key(key);
      if (!v.count(k))
        throw ConfigError(std::string("unknown ") + origin + " key '" + key + "' for command " + to_string(cmd));
      v[k] = value;
    }
  };
  overlay(file, "config");
  overlay(flags, "flag");
  return RunConfig(cmd, std::move(v));
}

}  // namespace memcap
