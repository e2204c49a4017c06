#pragma once

// Checkpoint file layout:
//   8 bytes   magic "MCAPCKPT"
//   4 bytes   format version, little-endian u32
//   8 bytes   header length, little-endian u64
//   header    JSON (spec, seeds, train config, counters, blob directory)
//   payload   float64 little-endian blobs in directory order
// The header records the payload size and its FNV-1a hash.

#include <bit>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "memcap/crossbar.hpp"
#include "memcap/error.hpp"
#include "memcap/network.hpp"
#include "memcap/report.hpp"
#include "memcap/training.hpp"

namespace memcap {

inline constexpr char kCheckpointMagic[8] = {'M', 'C', 'A', 'P', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

using json = nlohmann::ordered_json;

inline json to_json(const NetworkSpec& s) {
  json j;
  j["name"] = s.name;
  j["input"] = s.input;
  json layers = json::array();
  for (const auto& l : s.layers) {
    json e;
    e["kind"] = to_string(l.kind);
    if (l.kind == LayerKind::conv2d) {
      e["filters"] = l.filters;
      e["kernel_h"] = l.kernel_h;
      e["kernel_w"] = l.kernel_w;
      e["stride"] = l.stride;
    } else if (l.kind == LayerKind::dense) {
      e["units"] = l.units;
      e["crossbar_backed"] = l.crossbar_backed;
    }
    layers.push_back(e);
  }
  j["layers"] = layers;
  const auto& m = s.crossbar.mapping;
  j["crossbar"]["mapping"] = {{"c_min", m.c_min}, {"c_max", m.c_max}, {"w_max", m.w_max}};
  const auto& n = s.crossbar.nonideality;
  json ni;
  ni["program_sigma"] = n.program_sigma;
  ni["read_sigma"] = n.read_sigma;
  ni["bits"] = n.bits ? json(*n.bits) : json(nullptr);
  ni["stuck_fraction"] = n.stuck_fraction;
  ni["seed"] = n.seed;
  j["crossbar"]["nonideality"] = ni;
  return j;
}

inline NetworkSpec network_spec_from_json(const json& j) {
  NetworkSpec s;
  s.name = j.at("name").get<std::string>();
  s.input = j.at("input").get<Shape>();
  for (const auto& e : j.at("layers")) {
    LayerSpec l = LayerSpec::of(layer_kind_from_string(e.at("kind").get<std::string>()));
    if (l.kind == LayerKind::conv2d) {
      l.filters = e.at("filters").get<std::size_t>();
      l.kernel_h = e.at("kernel_h").get<std::size_t>();
      l.kernel_w = e.at("kernel_w").get<std::size_t>();
      l.stride = e.at("stride").get<std::size_t>();
    } else if (l.kind == LayerKind::dense) {
      l.units = e.at("units").get<std::size_t>();
      l.crossbar_backed = e.at("crossbar_backed").get<bool>();
    }
    s.layers.push_back(l);
  }
  const auto& m = j.at("crossbar").at("mapping");
  s.crossbar.mapping = {m.at("c_min").get<double>(), m.at("c_max").get<double>(), m.at("w_max").get<double>()};
  const auto& n = j.at("crossbar").at("nonideality");
  s.crossbar.nonideality.program_sigma = n.at("program_sigma").get<double>();
  s.crossbar.nonideality.read_sigma = n.at("read_sigma").get<double>();
  if (!n.at("bits").is_null()) s.crossbar.nonideality.bits = n.at("bits").get<int>();
  s.crossbar.nonideality.stuck_fraction = n.at("stuck_fraction").get<double>();
  s.crossbar.nonideality.seed = n.at("seed").get<std::uint64_t>();
  return s;
}

inline json to_json(const TrainConfig& c) {
  json j;
  j["epochs"] = c.epochs;
  j["batch_size"] = c.batch_size;
  j["optimizer"] = to_string(c.optimizer);
  j["learning_rate"] = c.learning_rate;
  j["momentum"] = c.momentum;
  j["beta1"] = c.beta1;
  j["beta2"] = c.beta2;
  j["epsilon"] = c.epsilon;
  j["seed"] = c.seed;
  j["deterministic"] = c.deterministic;
  return j;
}

inline TrainConfig train_config_from_json(const json& j) {
  TrainConfig c;
  c.epochs = j.at("epochs").get<std::size_t>();
  c.batch_size = j.at("batch_size").get<std::size_t>();
  c.optimizer = optimizer_from_string(j.at("optimizer").get<std::string>());
  c.learning_rate = j.at("learning_rate").get<double>();
  c.momentum = j.at("momentum").get<double>();
  c.beta1 = j.at("beta1").get<double>();
  c.beta2 = j.at("beta2").get<double>();
  c.epsilon = j.at("epsilon").get<double>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.deterministic = j.at("deterministic").get<bool>();
  return c;
}

template <typename T>
constexpr const char* precision_name() {
  return sizeof(T) == 4 ? "float32" : "float64";
}

namespace detail {

inline void put_le(std::string& out, std::uint64_t v, int bytes) {
  for (int i = 0; i < bytes; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline std::uint64_t get_le(const std::string& in, std::size_t off, int bytes) {
  std::uint64_t v = 0;
  for (int i = 0; i < bytes; ++i) v |= std::uint64_t{static_cast<unsigned char>(in[off + i])} << (8 * i);
  return v;
}

class BlobWriter {
 public:
  template <typename Range>
  void add(const std::string& name, const Range& values) {
    std::size_t n = 0;
    for (auto v : values) {
      put_le(payload_, std::bit_cast<std::uint64_t>(static_cast<double>(v)), 8);
      ++n;
    }
    dir_.push_back({{"name", name}, {"count", n}});
  }
  [[nodiscard]] const std::string& payload() const noexcept { return payload_; }
  [[nodiscard]] const json& directory() const noexcept { return dir_; }

 private:
  std::string payload_;
  json dir_ = json::array();
};

class BlobReader {
 public:
  BlobReader(const json& dir, const std::string* file, std::size_t offset) : file_(file) {
    std::size_t off = offset;
    for (const auto& e : dir) {
      const auto count = e.at("count").get<std::size_t>();
      index_.push_back({e.at("name").get<std::string>(), off, count});
      off += 8 * count;
    }
    if (off != file_->size()) throw CorruptCheckpoint("checkpoint: blob directory does not match payload size");
  }

  [[nodiscard]] std::vector<double> get(const std::string& name, std::size_t expect) const {
    for (const auto& e : index_) {
      if (e.name != name) continue;
      if (e.count != expect)
        throw CorruptCheckpoint("checkpoint: blob '" + name + "' has " + std::to_string(e.count) +
                                " values, expected " + std::to_string(expect));
      std::vector<double> out(e.count);
      for (std::size_t i = 0; i < e.count; ++i) out[i] = std::bit_cast<double>(get_le(*file_, e.offset + 8 * i, 8));
      return out;
    }
    throw CorruptCheckpoint("checkpoint: missing blob '" + name + "'");
  }

 private:
  struct Entry {
    std::string name;
    std::size_t offset;
    std::size_t count;
  };
  const std::string* file_;
  std::vector<Entry> index_;
};

inline std::string read_all(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace detail

/// Decoded header plus the raw file, so blobs can be read lazily.
struct CheckpointFile {
  json header;
  std::string bytes;
  std::size_t payload_offset = 0;
};

/// Validates magic, version, sizes and checksum.
inline CheckpointFile read_checkpoint_file(const std::filesystem::path& path) {
  CheckpointFile f;
  f.bytes = detail::read_all(path);
  const auto& b = f.bytes;
  if (b.size() < 20) throw CorruptCheckpoint("checkpoint: file truncated (" + std::to_string(b.size()) + " bytes)");
  if (b.compare(0, 8, kCheckpointMagic, 8) != 0) throw CorruptCheckpoint("checkpoint: bad magic");
  const auto version = static_cast<std::uint32_t>(detail::get_le(b, 8, 4));
  if (version != kCheckpointVersion)
    throw CheckpointVersionMismatch("checkpoint: format version " + std::to_string(version) + ", expected " +
                                    std::to_string(kCheckpointVersion));
  const auto hlen = detail::get_le(b, 12, 8);
  if (hlen > b.size() - 20) throw CorruptCheckpoint("checkpoint: file truncated inside header");
  try {
    f.header = json::parse(b.substr(20, hlen));
  } catch (const json::exception& e) {
    throw CorruptCheckpoint(std::string("checkpoint: bad header: ") + e.what());
  }
  f.payload_offset = 20 + hlen;
  const std::size_t payload = b.size() - f.payload_offset;
  try {
    if (payload != f.header.at("payload_bytes").get<std::size_t>())
      throw CorruptCheckpoint("checkpoint: payload is " + std::to_string(payload) + " bytes, header says " +
                              std::to_string(f.header.at("payload_bytes").get<std::size_t>()));
    const auto want = f.header.at("payload_fnv1a").get<std::string>();
    if (hex64(fnv1a(std::string_view(b).substr(f.payload_offset))) != want)
      throw CorruptCheckpoint("checkpoint: payload checksum mismatch");
  } catch (const json::exception& e) {
    throw CorruptCheckpoint(std::string("checkpoint: bad header: ") + e.what());
  }
  return f;
}

/// Write network, optimizer state and epoch counter. `extra` carries
/// caller data (run configuration, report rows).
template <typename T>
void save_checkpoint(const std::filesystem::path& path, Network<T>& net, Optimizer<T>& opt,
                     std::size_t epoch, const json& extra = json::object()) {
  detail::BlobWriter blobs;
  json counters = json::array();
  for (auto id : net.param_ids()) {
    const std::string key = "L" + std::to_string(id.layer) + "." + std::to_string(id.slot);
    auto& layer = net.layer(id.layer);
    if (auto* wm = layer.weight_matrix(id.slot)) {
      if (const auto* xb = wm->crossbar()) {
        blobs.add(key + ".c_plus", xb->c_plus());
        blobs.add(key + ".c_minus", xb->c_minus());
        blobs.add(key + ".target_plus", xb->target_plus());
        blobs.add(key + ".target_minus", xb->target_minus());
        std::vector<double> mask;
        for (auto c : xb->stuck_mask()) mask.push_back(static_cast<double>(static_cast<int>(c)));
        blobs.add(key + ".stuck_mask", mask);
        counters.push_back({{"param", key},
                            {"program_counter", xb->program_counter()},
                            {"read_counter", xb->read_counter()},
                            {"nonideality_seed", xb->nonideality().seed}});
      } else {
        blobs.add(key + ".values", wm->values());
      }
    } else if (auto* pv = layer.plain_param(id.slot)) {
      blobs.add(key + ".values", *pv);
    } else {
      throw CheckpointError("checkpoint: parameter " + key + " has no storage");
    }
  }
  for (std::size_t p = 0; p < opt.first_moments().size(); ++p)
    blobs.add("opt.m" + std::to_string(p), opt.first_moments()[p]);
  for (std::size_t p = 0; p < opt.second_moments().size(); ++p)
    blobs.add("opt.v" + std::to_string(p), opt.second_moments()[p]);

  json h;
  h["precision"] = precision_name<T>();
  h["network_seed"] = net.seed();
  h["spec"] = to_json(net.spec());
  h["train_config"] = to_json(opt.config());
  h["optimizer_steps"] = opt.steps();
  h["epoch"] = epoch;
  h["crossbars"] = counters;
  h["extra"] = extra;
  h["blobs"] = blobs.directory();
  h["payload_bytes"] = blobs.payload().size();
  h["payload_fnv1a"] = hex64(fnv1a(blobs.payload()));

  const std::string header = h.dump();
  std::string out(kCheckpointMagic, 8);
  detail::put_le(out, kCheckpointVersion, 4);
  detail::put_le(out, header.size(), 8);
  out += header;
  out += blobs.payload();
  // Write to a sibling temp file first so an interrupted save keeps the old one.
  auto tmp = path;
  tmp += ".tmp";
  write_text_file(tmp, out);
  std::filesystem::rename(tmp, path);
}

template <typename T>
struct LoadedCheckpoint {
  Network<T> net;
  Optimizer<T> opt;
  std::size_t epoch = 0;
  TrainConfig train;
  json extra;
};

/// Rebuild a network and optimizer from a checkpoint. Loading into a
/// different precision than was saved is allowed (values convert).
template <typename T>
LoadedCheckpoint<T> load_checkpoint(const std::filesystem::path& path) {
  const auto f = read_checkpoint_file(path);
  const auto& h = f.header;
  try {
    const auto spec = network_spec_from_json(h.at("spec"));
    const auto train = train_config_from_json(h.at("train_config"));
    Network<T> net(spec, h.at("network_seed").get<std::uint64_t>());
    detail::BlobReader blobs(h.at("blobs"), &f.bytes, f.payload_offset);

    std::size_t xb_index = 0;
    const auto& counters = h.at("crossbars");
    for (auto id : net.param_ids()) {
      const std::string key = "L" + std::to_string(id.layer) + "." + std::to_string(id.slot);
      auto& layer = net.layer(id.layer);
      const std::size_t n = net.param_size(id);
      if (auto* wm = layer.weight_matrix(id.slot)) {
        if (auto* xb = wm->crossbar()) {
          if (xb_index >= counters.size()) throw CorruptCheckpoint("checkpoint: missing crossbar counters");
          const auto& c = counters[xb_index++];
          if (c.at("param").get<std::string>() != key) throw CorruptCheckpoint("checkpoint: crossbar order mismatch");
          std::vector<CellState> mask;
          for (double m : blobs.get(key + ".stuck_mask", n)) {
            if (m != 0.0 && m != 1.0 && m != 2.0) throw CorruptCheckpoint("checkpoint: bad stuck mask value");
            mask.push_back(static_cast<CellState>(static_cast<int>(m)));
          }
          xb->restore(blobs.get(key + ".c_plus", n), blobs.get(key + ".c_minus", n),
                      blobs.get(key + ".target_plus", n), blobs.get(key + ".target_minus", n), mask,
                      c.at("program_counter").get<std::uint64_t>(), c.at("read_counter").get<std::uint64_t>());
        } else {
          wm->assign(blobs.get(key + ".values", n));
        }
      } else if (auto* pv = layer.plain_param(id.slot)) {
        const auto v = blobs.get(key + ".values", n);
        for (std::size_t i = 0; i < n; ++i) (*pv)[i] = static_cast<T>(v[i]);
      }
    }

    Optimizer<T> opt(train, net);
    opt.set_steps(h.at("optimizer_steps").get<std::uint64_t>());
    auto fill = [&](std::vector<std::vector<T>>& dst, const char* prefix) {
      for (std::size_t p = 0; p < dst.size(); ++p) {
        const auto v = blobs.get(prefix + std::to_string(p), dst[p].size());
        for (std::size_t i = 0; i < v.size(); ++i) dst[p][i] = static_cast<T>(v[i]);
      }
    };
    fill(opt.first_moments(), "opt.m");
    fill(opt.second_moments(), "opt.v");
    return {std::move(net), std::move(opt), h.at("epoch").get<std::size_t>(), train, h.at("extra")};
  } catch (const json::exception& e) {
    throw CorruptCheckpoint(std::string("checkpoint: bad header: ") + e.what());
  }
}

}  // namespace memcap
