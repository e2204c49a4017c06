#pragma once

// Command implementations behind the memcap CLI: hysteresis sweeps,
// training, evaluation and the built-in self-check.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <iomanip>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "memcap/checkpoint.hpp"
#include "memcap/config.hpp"
#include "memcap/crossbar.hpp"
#include "memcap/dataset.hpp"
#include "memcap/device.hpp"
#include "memcap/network.hpp"
#include "memcap/report.hpp"
#include "memcap/training.hpp"

namespace memcap {

// ---------------------------------------------------------------- hysteresis

inline MemcapParams device_params(const RunConfig& cfg) {
  MemcapParams p;
  p.c1 = cfg.number("c1");
  p.c2 = cfg.number("c2");
  p.r = cfg.number("r");
  p.k = cfg.number("k");
  p.gm1 = cfg.number("gm1");
  p.v_ss = cfg.number("v_ss");
  p.v_th = cfg.number("v_th");
  p.v_dd = cfg.number("v_dd");
  const double sign = cfg.number("sign");
  if (sign != 1.0 && sign != -1.0) throw InvalidParameter("sign", "must be +1 or -1");
  p.sign = static_cast<int>(sign);
  if (cfg.has("mc_floor")) p.mc_floor = cfg.number("mc_floor");
  return p;
}

inline SweepConfig sweep_config(const RunConfig& cfg) {
  SweepConfig s;
  s.amplitude = cfg.number("amplitude");
  s.frequency = cfg.number("frequency");
  s.periods = cfg.count("periods");
  s.steps_per_period = cfg.count("steps_per_period");
  return s;
}

struct HysteresisRun {
  HysteresisResult result;
  std::filesystem::path csv;
  std::filesystem::path sidecar;
};

inline HysteresisRun run_hysteresis(const RunConfig& cfg, std::ostream& log) {
  const auto params = device_params(cfg);
  params.validate();
  const auto sweep = sweep_config(cfg);
  HysteresisRun run;
  run.result = hysteresis_sweep(params, sweep);
  const std::filesystem::path out = cfg.str("out");
  run.csv = out / "hysteresis.csv";
  run.sidecar = out / "hysteresis.json";
  write_text_file(run.csv, hysteresis_csv(run.result));
  write_text_file(run.sidecar, hysteresis_sidecar(run.result, params).dump(2) + "\n");
  log << "samples " << run.result.samples.size() << "  lobe_area " << format_double(run.result.lobe_area)
      << "  pinch_residual " << format_double(run.result.pinch_residual) << "  clamp_events "
      << run.result.clamp_events << "\n"
      << "wrote " << run.csv.string() << " and " << run.sidecar.string() << "\n";
  return run;
}

// ------------------------------------------------------------------ datasets

struct DataSplits {
  LabeledDataset train;
  LabeledDataset test;
  LabeledDataset holdout;  // empty for cifar10
};

/// MNIST: official train + t10k pooled, resized to 20x20, split 40k/20k/10k.
inline DataSplits load_mnist_splits(const std::filesystem::path& dir, std::uint64_t split_seed) {
  auto pool = concat(load_mnist(dir / "train-images-idx3-ubyte", dir / "train-labels-idx1-ubyte"),
                     load_mnist(dir / "t10k-images-idx3-ubyte", dir / "t10k-labels-idx1-ubyte"));
  pool = resize_bilinear(pool, 20, 20);
  auto s = split_paper(pool, split_seed);
  return {std::move(s.train), std::move(s.test), std::move(s.holdout)};
}

/// CIFAR-10: the official 50k/10k split.
inline DataSplits load_cifar_splits(const std::filesystem::path& dir) {
  std::vector<std::filesystem::path> train_files;
  for (int i = 1; i <= 5; ++i) train_files.push_back(dir / ("data_batch_" + std::to_string(i) + ".bin"));
  const std::vector<std::filesystem::path> test_files{dir / "test_batch.bin"};
  DataSplits s;
  s.train = load_cifar10(train_files);
  s.train.meta.split = "train";
  s.test = load_cifar10(test_files);
  s.test.meta.split = "test";
  return s;
}

/// Random subset of at most `limit` samples (0 keeps everything).
inline LabeledDataset limit_dataset(const LabeledDataset& ds, std::size_t limit, std::uint64_t seed) {
  if (limit == 0 || limit >= ds.size()) return ds;
  auto idx = shuffled_indices(ds.size(), seed);
  idx.resize(limit);
  return subset(ds, idx);
}

inline DataSplits load_splits(const std::string& preset, const RunConfig& cfg, std::uint64_t split_seed,
                              std::size_t train_limit, std::size_t test_limit) {
  DataSplits s;
  if (preset == "mnist") {
    s = load_mnist_splits(cfg.str("mnist_dir"), split_seed);
  } else if (preset == "cifar10") {
    s = load_cifar_splits(cfg.str("cifar_dir"));
  } else {
    throw ConfigError("unknown preset '" + preset + "' (expected mnist or cifar10)");
  }
  // Seeded random subsets; 0 keeps the whole split.
  s.train = limit_dataset(s.train, train_limit, derive_seed(split_seed, 0x7A1));
  s.test = limit_dataset(s.test, test_limit, derive_seed(split_seed, 0x7E5));
  return s;
}

// --------------------------------------------------------------------- train

inline CrossbarConfig crossbar_config(const RunConfig& cfg, std::uint64_t seed) {
  CrossbarConfig x;
  x.mapping = WeightMapping::from_device(MemcapParams{}, cfg.number("w_max"));
  x.nonideality.program_sigma = cfg.number("program_sigma");
  x.nonideality.read_sigma = cfg.number("read_sigma");
  const double bits = cfg.number("bits");
  if (!std::isinf(bits)) {
    if (bits != std::floor(bits) || bits < 1 || bits > 48) throw InvalidParameter("bits", "must be an integer in [1, 48] or inf");
    x.nonideality.bits = static_cast<int>(bits);
  }
  x.nonideality.stuck_fraction = cfg.number("stuck_fraction");
  x.nonideality.seed = derive_seed(seed, 3);
  x.mapping.validate();
  x.nonideality.validate();
  return x;
}

inline TrainConfig train_config(const RunConfig& cfg, const std::string& preset) {
  TrainConfig t;
  t.epochs = cfg.has("epochs") ? cfg.count("epochs") : (preset == "cifar10" ? 20 : 10);
  t.batch_size = cfg.count("batch_size");
  t.optimizer = optimizer_from_string(cfg.str("optimizer"));
  t.learning_rate = cfg.number("lr");
  t.momentum = cfg.number("momentum");
  t.beta1 = cfg.number("beta1");
  t.beta2 = cfg.number("beta2");
  t.epsilon = cfg.number("epsilon");
  t.seed = derive_seed(cfg.count("seed"), 2);
  t.deterministic = cfg.boolean("deterministic");
  t.validate();
  return t;
}

/// Settings that define a training run; output location and resume path
/// are excluded so they do not change the hash or the checkpoint.
inline std::map<std::string, std::string> run_identity(const RunConfig& cfg) {
  auto v = cfg.values();
  v.erase("out");
  v.erase("resume");
  return v;
}

inline std::string config_hash(const RunConfig& cfg) {
  std::string s;
  for (const auto& [k, v] : run_identity(cfg)) s += k + "=" + v + "\n";
  return hex64(fnv1a(s));
}

struct TrainRun {
  TrainReport report;
  EvalResult final_eval;
  std::filesystem::path out;
  std::filesystem::path checkpoint;
};

namespace detail {

inline json report_rows_json(const std::vector<ReportRow>& rows) {
  json a = json::array();
  for (const auto& r : rows)
    a.push_back({{"epoch", r.epoch}, {"train_loss", r.train_loss}, {"train_acc", r.train_acc},
                 {"test_acc", r.test_acc}, {"wall_time", r.wall_time}});
  return a;
}

inline std::vector<ReportRow> report_rows_from_json(const json& a) {
  std::vector<ReportRow> rows;
  for (const auto& e : a)
    rows.push_back({e.at("epoch").get<std::size_t>(), e.at("train_loss").get<double>(),
                    e.at("train_acc").get<double>(), e.at("test_acc").get<double>(),
                    e.at("wall_time").get<double>()});
  return rows;
}

inline void write_eval_artifacts(const std::filesystem::path& out, const std::string& tag, const EvalResult& ev) {
  write_text_file(out / ("confusion_" + tag + ".csv"), confusion_csv(ev.confusion));
}

template <typename T>
TrainRun run_train_impl(const RunConfig& cfg, std::ostream& log) {
  using clock = std::chrono::steady_clock;
  const std::string preset = cfg.str("preset");
  const std::uint64_t seed = cfg.count("seed");
  const bool deterministic = cfg.boolean("deterministic");
  TrainConfig tcfg = train_config(cfg, preset);
  const auto xbar = crossbar_config(cfg, seed);
  const auto spec = NetworkSpec::preset(preset, xbar, cfg.boolean("dense_crossbar"));

  TrainRun run;
  run.out = cfg.str("out");
  run.checkpoint = run.out / "checkpoint.bin";
  run.report.config_hash = config_hash(cfg);
  run.report.confusion_path = "confusion_test.csv";

  std::optional<Network<T>> net;
  std::optional<Optimizer<T>> opt;
  std::size_t start_epoch = 0;
  json identity(run_identity(cfg));

  if (cfg.has("resume")) {
    auto ck = load_checkpoint<T>(cfg.str("resume"));
    if (ck.net.spec().name != preset)
      throw ConfigError("resume: checkpoint preset '" + ck.net.spec().name + "' differs from '" + preset + "'");
    const std::size_t epochs = tcfg.epochs;
    tcfg = ck.train;  // the optimizer continues with the settings it was built with
    tcfg.epochs = epochs;
    start_epoch = ck.epoch;
    run.report.rows = report_rows_from_json(ck.extra.at("report"));
    run.report.initial_test_acc = ck.extra.at("initial_test_acc").template get<double>();
    net.emplace(std::move(ck.net));
    opt.emplace(std::move(ck.opt));
    opt->set_epochs(epochs);
    log << "resumed from " << cfg.str("resume") << " at epoch " << start_epoch << "\n";
  }

  const auto data = load_splits(preset, cfg, cfg.count("split_seed"), cfg.count("train_limit"),
                                cfg.count("test_limit"));
  log << preset << ": " << data.train.size() << " train / " << data.test.size() << " test images, "
      << (xbar.nonideality.ideal() ? "ideal" : "non-ideal") << " crossbars, " << precision_name<T>() << "\n";

  if (!net) {
    net.emplace(spec, derive_seed(seed, 1));
    opt.emplace(tcfg, *net);
    run.report.initial_test_acc = evaluate(*net, data.test).accuracy;
    log << "epoch 0: test_acc " << std::fixed << std::setprecision(4) << run.report.initial_test_acc << "\n";
  }

  auto save = [&](std::size_t epoch) {
    json extra;
    extra["run"] = identity;
    extra["report"] = report_rows_json(run.report.rows);
    extra["initial_test_acc"] = run.report.initial_test_acc;
    save_checkpoint(run.checkpoint, *net, *opt, epoch, extra);
  };

  std::optional<EvalResult> last;
  for (std::size_t e = start_epoch; e < tcfg.epochs; ++e) {
    const auto t0 = clock::now();
    const auto m = train_epoch(*net, *opt, data.train, tcfg, e);
    last = evaluate(*net, data.test);
    const double secs = std::chrono::duration<double>(clock::now() - t0).count();
    run.report.add({m.epoch, m.train_loss, m.train_accuracy, last->accuracy, deterministic ? 0.0 : secs});
    log << std::fixed << "epoch " << m.epoch << "/" << tcfg.epochs << ": loss " << std::setprecision(4) << m.train_loss
        << "  train_acc " << m.train_accuracy << "  test_acc " << last->accuracy << "  (" << std::setprecision(1)
        << secs << " s)\n";
    save(m.epoch);
  }
  if (!last) last = evaluate(*net, data.test);
  if (start_epoch >= tcfg.epochs) save(start_epoch);

  run.final_eval = *last;
  run.report.final_test_acc = last->accuracy;
  run.report.final_train_acc = run.report.rows.empty() ? 0.0 : run.report.rows.back().train_acc;
  write_text_file(run.out / "report.csv", run.report.csv());
  write_eval_artifacts(run.out, "test", *last);
  write_text_file(run.out / "summary.json", run.report.summary().dump(2) + "\n");
  log << std::fixed << std::setprecision(4) << "final train_acc " << run.report.final_train_acc << "  test_acc "
      << run.report.final_test_acc << "\n"
      << "wrote " << (run.out / "report.csv").string() << ", summary.json, confusion_test.csv, checkpoint.bin\n";
  log.unsetf(std::ios::floatfield);
  return run;
}

}  // namespace detail

inline TrainRun run_train(const RunConfig& cfg, std::ostream& log) {
  const auto p = cfg.str("precision");
  if (p == "float32") return detail::run_train_impl<float>(cfg, log);
  if (p == "float64") return detail::run_train_impl<double>(cfg, log);
  throw ConfigError("precision must be float32 or float64, got '" + p + "'");
}

// ---------------------------------------------------------------------- eval

struct EvalRun {
  EvalResult result;
  std::string split;
  std::size_t count = 0;
};

namespace detail {

template <typename T>
EvalRun run_eval_impl(const RunConfig& cfg, std::ostream& log) {
  auto ck = load_checkpoint<T>(cfg.str("checkpoint"));
  const auto& run = ck.extra.at("run");
  const std::string preset = ck.net.spec().name;
  const std::string split = cfg.str("split");
  if (split != "test" && split != "holdout" && split != "train")
    throw ConfigError("split must be test, holdout or train, got '" + split + "'");
  if (split == "holdout" && preset != "mnist") throw ConfigError("the holdout split exists only for mnist");

  auto parse_u64 = [&](const char* key) {
    const RunConfig stored(Command::train, {{std::string(key), run.at(key).template get<std::string>()}});
    return stored.count(key);
  };
  const auto data = load_splits(preset, cfg, parse_u64("split_seed"), parse_u64("train_limit"),
                                parse_u64("test_limit"));
  const LabeledDataset& ds = split == "test" ? data.test : split == "holdout" ? data.holdout : data.train;

  EvalRun out;
  out.split = split;
  out.count = ds.size();
  out.result = evaluate(ck.net, ds);
  const std::filesystem::path dir = cfg.str("out");
  write_eval_artifacts(dir, split, out.result);
  json j;
  j["checkpoint"] = cfg.str("checkpoint");
  j["split"] = split;
  j["count"] = ds.size();
  j["accuracy"] = out.result.accuracy;
  j["loss"] = out.result.loss;
  j["confusion_matrix"] = "confusion_" + split + ".csv";
  write_text_file(dir / ("eval_" + split + ".json"), j.dump(2) + "\n");
  log << preset << " " << split << " (" << ds.size() << " images): accuracy " << format_double(out.result.accuracy)
      << "  loss " << format_double(out.result.loss) << "\n";
  return out;
}

}  // namespace detail

inline EvalRun run_eval(const RunConfig& cfg, std::ostream& log) {
  if (!cfg.has("checkpoint")) throw ConfigError("eval needs --checkpoint");
  const auto f = read_checkpoint_file(cfg.str("checkpoint"));
  const auto p = f.header.at("precision").get<std::string>();
  if (p == "float64") return detail::run_eval_impl<double>(cfg, log);
  return detail::run_eval_impl<float>(cfg, log);
}

// ----------------------------------------------------------------- selfcheck

struct CheckRow {
  std::string name;
  double value = 0.0;
  std::string comparison;  // "<", "<=", "in"
  double lo = 0.0;         // threshold, or interval lower bound for "in"
  double hi = 0.0;
  bool pass = false;
};

/// Worst normwise relative error of vmm_batch against a plain matmul over
/// `cases` random problems of size up to 64x64.
inline double crossbar_oracle_error(std::size_t cases, std::uint64_t seed, double read_sigma = 0.0) {
  CounterRng rng(derive_seed(seed, 0xC0));
  double worst = 0.0;
  const auto mapping = WeightMapping::from_device(MemcapParams{});
  for (std::size_t c = 0; c < cases; ++c) {
    const std::size_t m = 1 + rng.below(64);
    const std::size_t n = 1 + rng.below(64);
    const std::size_t b = 1 + rng.below(64);
    NonidealityConfig ni;
    ni.read_sigma = read_sigma;
    ni.seed = c;
    CrossbarArray xb(m, n, mapping, ni);
    Tensor<double> w({m, n});
    for (auto& v : w.vec()) v = 2.0 * rng.uniform() - 1.0;
    xb.program_weights(w);
    Tensor<double> x({b, m});
    for (auto& v : x.vec()) v = 2.0 * rng.uniform() - 1.0;
    const auto y = xb.vmm_batch(x);
    double err = 0.0;
    double scale = 0.0;
    for (std::size_t i = 0; i < b; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        double ref = 0.0;
        for (std::size_t k = 0; k < m; ++k) ref += x(i, k) * w(k, j);
        err = std::max(err, std::abs(y(i, j) - ref));
        scale = std::max(scale, std::abs(ref));
      }
    worst = std::max(worst, err / scale);
  }
  return worst;
}

/// err(dt) / err(dt/2) of the final sigma after one 1 kHz period, against
/// a dt/100 reference.
inline double euler_error_ratio(const MemcapParams& p = {}, std::size_t spp = 1000) {
  const double ref = hysteresis_sweep(p, 1.0, 1e3, 1, spp * 100).final_sigma;
  const double e1 = std::abs(hysteresis_sweep(p, 1.0, 1e3, 1, spp).final_sigma - ref);
  const double e2 = std::abs(hysteresis_sweep(p, 1.0, 1e3, 1, spp * 2).final_sigma - ref);
  return e1 / e2;
}

inline double network_gradient_error(const std::string& preset, std::uint64_t seed) {
  auto net = build_network<double>(NetworkSpec::preset(preset), derive_seed(seed, 0x6C));
  const auto& in = net.spec().input;
  Tensor<double> x({2, in[0], in[1], in[2]});
  CounterRng rng(derive_seed(seed, 0x6D));
  for (auto& v : x.vec()) v = rng.uniform();
  const std::vector<int> labels{3, 7};
  GradCheckOptions opt;
  opt.seed = seed;
  return gradient_check(net, x, labels, opt).max_relative_error;
}

inline std::vector<CheckRow> selfcheck(double inject_read_sigma, std::uint64_t seed) {
  std::vector<CheckRow> rows;
  auto below = [&](std::string name, double v, double thr) { rows.push_back({std::move(name), v, "<", thr, 0.0, v < thr}); };
  below("crossbar_vs_matmul", crossbar_oracle_error(100, seed, inject_read_sigma), 1e-12);
  below("gradient_check_mnist", network_gradient_error("mnist", seed), 1e-4);
  below("gradient_check_cifar10", network_gradient_error("cifar10", seed), 1e-4);
  const double ratio = euler_error_ratio();
  rows.push_back({"euler_convergence_ratio", ratio, "in", 1.7, 2.3, ratio >= 1.7 && ratio <= 2.3});
  const auto sweep = hysteresis_sweep(MemcapParams{}, SweepConfig{});
  rows.push_back({"pinch_residual", sweep.pinch_residual, "<=", 0.0, 0.0, sweep.pinch_residual <= 0.0});
  return rows;
}

inline bool run_selfcheck(const RunConfig& cfg, std::ostream& log) {
  const auto rows = selfcheck(cfg.number("inject_read_sigma"), cfg.count("seed"));
  auto g = [](double v) {
    std::ostringstream os;
    os << v;
    return os.str();
  };
  bool ok = true;
  log << std::left << std::setw(26) << "check" << std::setw(26) << "value" << std::setw(16) << "threshold"
      << "result\n";
  for (const auto& r : rows) {
    const std::string thr =
        r.comparison == "in" ? "[" + g(r.lo) + ", " + g(r.hi) + "]" : r.comparison + " " + g(r.lo);
    log << std::setw(26) << r.name << std::setw(26) << format_double(r.value) << std::setw(16) << thr
        << (r.pass ? "PASS" : "FAIL") << "\n";
    ok = ok && r.pass;
  }
  log << std::right << (ok ? "all checks passed\n" : "selfcheck FAILED\n");
  return ok;
}

}  // namespace memcap
