#pragma once

// CSV / JSON artifacts: hysteresis traces, per-epoch training reports and
// confusion matrices. Floats are written with 17 significant digits and a
// '.' decimal point regardless of locale.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include <json.hpp>

#include "memcap/device.hpp"
#include "memcap/error.hpp"

namespace memcap {

/// 17 significant digits, enough for any double to round-trip.
inline std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::general, 17);
  return std::string(buf, r.ptr);
}

/// 64-bit FNV-1a, used for config hashes and checkpoint payload checksums.
inline std::uint64_t fnv1a(std::string_view bytes, std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  static constexpr char digits[] = "0123456789abcdef";
  for (int i = 15; i >= 0; --i) {
    buf[i] = digits[v & 0xF];
    v >>= 4;
  }
  return std::string(buf, 16);
}

inline void write_text_file(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
  if (!out) throw Error("write failed: " + path.string());
}

inline std::string hysteresis_csv(const HysteresisResult& r) {
  std::string s = "t,v,q,c_mem\n";
  for (const auto& p : r.samples) {
    s += format_double(p.t);
    s += ',';
    s += format_double(p.v);
    s += ',';
    s += format_double(p.q);
    s += ',';
    s += format_double(p.c_mem);
    s += '\n';
  }
  return s;
}

inline nlohmann::ordered_json params_json(const MemcapParams& p) {
  nlohmann::ordered_json j;
  j["c1"] = p.c1;
  j["c2"] = p.c2;
  j["r"] = p.r;
  j["k"] = p.k;
  j["gm1"] = p.gm1;
  j["v_ss"] = p.v_ss;
  j["v_th"] = p.v_th;
  j["v_dd"] = p.v_dd;
  j["sign"] = p.sign;
  j["mc_floor"] = p.resolved_floor();
  j["beta"] = p.beta();
  j["alpha"] = p.alpha();
  return j;
}

inline nlohmann::ordered_json hysteresis_sidecar(const HysteresisResult& r, const MemcapParams& p) {
  nlohmann::ordered_json j;
  j["lobe_area"] = r.lobe_area;
  j["pinch_residual"] = r.pinch_residual;
  j["clamp_events"] = r.clamp_events;
  j["params"] = params_json(p);
  return j;
}

struct ReportRow {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double train_acc = 0.0;
  double test_acc = 0.0;
  double wall_time = 0.0;  // seconds
};

/// Per-epoch training metrics plus the run summary.
struct TrainReport {
  std::vector<ReportRow> rows;
  double initial_test_acc = 0.0;  // evaluation before any training
  double final_test_acc = 0.0;
  double final_train_acc = 0.0;
  std::string confusion_path;
  std::string config_hash;

  /// Rows strictly increasing in epoch, accuracies in [0, 1].
  void validate() const {
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const auto& r = rows[i];
      if (i > 0 && r.epoch <= rows[i - 1].epoch) throw Error("report rows must increase in epoch");
      for (double a : {r.train_acc, r.test_acc})
        if (!(a >= 0.0 && a <= 1.0)) throw Error("report accuracy outside [0, 1]");
    }
  }

  /// Appends `r`; a row that would break validate() is not kept.
  void add(const ReportRow& r) {
    rows.push_back(r);
    try {
      validate();
    } catch (...) {
      rows.pop_back();
      throw;
    }
  }

  [[nodiscard]] double best_test_acc() const {
    double best = initial_test_acc;
    for (const auto& r : rows) best = std::max(best, r.test_acc);
    return best;
  }

  [[nodiscard]] double best_train_acc() const {
    double best = 0.0;
    for (const auto& r : rows) best = std::max(best, r.train_acc);
    return best;
  }

  [[nodiscard]] std::string csv() const {
    std::string s = "epoch,train_loss,train_acc,test_acc,wall_time\n";
    for (const auto& r : rows) {
      s += std::to_string(r.epoch);
      for (double v : {r.train_loss, r.train_acc, r.test_acc, r.wall_time}) {
        s += ',';
        s += format_double(v);
      }
      s += '\n';
    }
    return s;
  }

  [[nodiscard]] nlohmann::ordered_json summary() const {
    nlohmann::ordered_json j;
    j["epochs"] = rows.size();
    j["initial_test_accuracy"] = initial_test_acc;
    j["final_train_accuracy"] = final_train_acc;
    j["final_test_accuracy"] = final_test_acc;
    j["best_train_accuracy"] = best_train_acc();
    j["best_test_accuracy"] = best_test_acc();
    j["confusion_matrix"] = confusion_path;
    j["config_hash"] = config_hash;
    return j;
  }
};

/// Parse a report CSV written by TrainReport::csv (used when resuming).
inline std::vector<ReportRow> parse_report_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::getline(in, line);
  if (line != "epoch,train_loss,train_acc,test_acc,wall_time") throw DataError("report csv: bad header");
  std::vector<ReportRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    ReportRow r;
    std::istringstream ls(line);
    std::string f;
    std::vector<std::string> fields;
    while (std::getline(ls, f, ',')) fields.push_back(f);
    if (fields.size() != 5) throw DataError("report csv: expected 5 fields");
    auto num = [](const std::string& s) {
      double v = 0.0;
      const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
      if (res.ec != std::errc{}) throw DataError("report csv: bad number '" + s + "'");
      return v;
    };
    r.epoch = static_cast<std::size_t>(num(fields[0]));
    r.train_loss = num(fields[1]);
    r.train_acc = num(fields[2]);
    r.test_acc = num(fields[3]);
    r.wall_time = num(fields[4]);
    rows.push_back(r);
  }
  return rows;
}

inline std::string confusion_csv(const std::vector<std::vector<std::size_t>>& m) {
  std::string s;
  for (const auto& row : m) {
    for (std::size_t j = 0; j < row.size(); ++j) {
      if (j) s += ',';
      s += std::to_string(row[j]);
    }
    s += '\n';
  }
  return s;
}

}  // namespace memcap
