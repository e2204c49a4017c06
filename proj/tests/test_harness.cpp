#include <gtest/gtest.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <limits>
#include <random>
#include <sstream>

#include "memcap/checkpoint.hpp"
#include "memcap/config.hpp"
#include "memcap/report.hpp"
#include "memcap/training.hpp"

using namespace memcap;
namespace fs = std::filesystem;

namespace {

LabeledDataset synthetic(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  LabeledDataset ds;
  ds.images = Tensor<float>({n, 20, 20, 1});
  for (auto& v : ds.images.vec()) v = u(gen);
  ds.labels.resize(n);
  for (auto& y : ds.labels) y = static_cast<int>(gen() % 10);
  return ds;
}

template <typename T>
std::vector<double> params_of(Network<T>& net) {
  std::vector<double> v;
  for (auto id : net.param_ids())
    for (std::size_t i = 0; i < net.param_size(id); ++i) v.push_back(static_cast<double>(net.param_value(id, i)));
  return v;
}

fs::path scratch(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("memcap_harness_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void spit(const fs::path& p, const std::string& s) { std::ofstream(p, std::ios::binary) << s; }

CrossbarConfig noisy() {
  CrossbarConfig xc;
  xc.nonideality.program_sigma = 0.02;
  xc.nonideality.read_sigma = 0.01;
  xc.nonideality.bits = 6;
  xc.nonideality.stuck_fraction = 0.01;
  xc.nonideality.seed = 11;
  return xc;
}

}  // namespace

// ---------------------------------------------------------------- config

TEST(Config, ParsesCommentsAndHyphens) {
  const auto m = parse_config_text("# header\n  epochs = 5   # inline\n\nread-sigma=0.02\nout = runs/a\n");
  EXPECT_EQ(m.size(), 3u);
  EXPECT_EQ(m.at("epochs"), "5");
  EXPECT_EQ(m.at("read_sigma"), "0.02");
  EXPECT_EQ(m.at("out"), "runs/a");
}

TEST(Config, ParseErrorsCarryLineNumber) {
  try {
    parse_config_text("epochs = 1\n\nnonsense\n");
    FAIL() << "no throw";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos) << e.what();
  }
  EXPECT_THROW(parse_config_text("= 4\n"), ConfigError);
  EXPECT_THROW(parse_config_text("lr = 1\nlr = 2\n"), ConfigError);
  EXPECT_THROW(parse_config_text("read_sigma = 1\nread-sigma = 2\n"), ConfigError);
  EXPECT_THROW(load_config_file("/nonexistent/memcap.cfg"), ConfigError);
}

TEST(Config, EveryKeyFollowsPrecedence) {
  for (auto cmd : {Command::hysteresis, Command::train, Command::eval, Command::selfcheck}) {
    for (const auto& key : config_keys(cmd)) {
      const auto dflt = resolve_config(cmd, {}, {});
      EXPECT_EQ(dflt.raw(key.name), key.default_value) << key.name;
      const auto file = resolve_config(cmd, {{key.name, "from_file"}}, {});
      EXPECT_EQ(file.raw(key.name), "from_file") << key.name;
      const auto flag = resolve_config(cmd, {{key.name, "from_file"}}, {{key.name, "from_flag"}});
      EXPECT_EQ(flag.raw(key.name), "from_flag") << key.name;
      const auto flag_only = resolve_config(cmd, {}, {{key.name, "from_flag"}});
      EXPECT_EQ(flag_only.raw(key.name), "from_flag") << key.name;
    }
  }
}

TEST(Config, UnknownKeysRejected) {
  EXPECT_THROW(resolve_config(Command::train, {{"epoch", "3"}}, {}), ConfigError);
  EXPECT_THROW(resolve_config(Command::hysteresis, {}, {{"lr", "1"}}), ConfigError);
  EXPECT_THROW(resolve_config(Command::selfcheck, {{"c1", "1"}}, {}), ConfigError);
  EXPECT_NO_THROW(resolve_config(Command::train, {{"batch-size", "3"}}, {}));
}

TEST(Config, TypedAccessors) {
  auto cfg = resolve_config(Command::train, {}, {{"lr", "2.5e-3"}, {"epochs", "7"}, {"dense-crossbar", "yes"}});
  EXPECT_EQ(cfg.number("lr"), 2.5e-3);
  EXPECT_EQ(cfg.count("epochs"), 7u);
  EXPECT_TRUE(cfg.boolean("dense_crossbar"));
  EXPECT_TRUE(std::isinf(cfg.number("bits")));
  EXPECT_FALSE(cfg.has("resume"));
  cfg.set("lr", "abc");
  EXPECT_THROW((void)cfg.number("lr"), ConfigError);
  cfg.set("epochs", "-1");
  EXPECT_THROW((void)cfg.count("epochs"), ConfigError);
  cfg.set("epochs", "3.5");
  EXPECT_THROW((void)cfg.count("epochs"), ConfigError);
  cfg.set("deterministic", "maybe");
  EXPECT_THROW((void)cfg.boolean("deterministic"), ConfigError);
  cfg.set("lr", "nan");
  EXPECT_THROW((void)cfg.number("lr"), ConfigError);
  EXPECT_THROW(cfg.set("nope", "1"), ConfigError);
  EXPECT_THROW((void)cfg.raw("nope"), ConfigError);
}

TEST(Config, DataDirFeedsDatasetDefaults) {
  const auto cfg = resolve_config(Command::train, {}, {}, "/srv/d");
  EXPECT_EQ(cfg.str("mnist_dir"), "/srv/d/mnist");
  EXPECT_EQ(cfg.str("cifar_dir"), "/srv/d/cifar-10-batches-bin");
}

TEST(Config, CanonicalTextIsOrderIndependent) {
  const auto a = resolve_config(Command::train, {{"lr", "1"}}, {{"epochs", "2"}});
  const auto b = resolve_config(Command::train, {{"epochs", "2"}}, {{"lr", "1"}});
  EXPECT_EQ(a.canonical_text(), b.canonical_text());
  EXPECT_NE(a.canonical_text().find("lr=1\n"), std::string::npos);
}

// ---------------------------------------------------------------- report

TEST(Report, FormatDoubleRoundTrips) {
  std::mt19937_64 gen(3);
  std::uniform_real_distribution<double> u(-10.0, 10.0);
  for (int i = 0; i < 10000; ++i) {
    const double v = std::ldexp(u(gen), static_cast<int>(gen() % 200) - 100);
    EXPECT_EQ(std::stod(format_double(v)), v);
  }
  EXPECT_EQ(format_double(0.5), "0.5");
  EXPECT_EQ(format_double(0.0), "0");
  EXPECT_EQ(format_double(std::numeric_limits<double>::infinity()), "inf");
  EXPECT_EQ(format_double(std::nan("")), "nan");
}

TEST(Report, Fnv1aKnownVectors) {
  EXPECT_EQ(fnv1a(""), 0xcbf29ce484222325ULL);
  EXPECT_EQ(fnv1a("a"), 0xaf63dc4c8601ec8cULL);
  EXPECT_EQ(fnv1a("foobar"), 0x85944171f73967e8ULL);
  EXPECT_EQ(hex64(0xaf63dc4c8601ec8cULL), "af63dc4c8601ec8c");
  EXPECT_EQ(hex64(1), "0000000000000001");
}

TEST(Report, CsvRoundTrip) {
  TrainReport r;
  r.add({1, 2.302585092994046, 0.1125, 0.25, 1.5});
  r.add({2, 1.0 / 3.0, 0.75, 0.8125, 0.0});
  const std::string csv = r.csv();
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "epoch,train_loss,train_acc,test_acc,wall_time");
  const auto rows = parse_report_csv(csv);
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_EQ(rows[1].epoch, 2u);
  EXPECT_EQ(rows[1].train_loss, 1.0 / 3.0);
  EXPECT_EQ(rows[0].train_loss, 2.302585092994046);
  EXPECT_EQ(rows[0].wall_time, 1.5);
  EXPECT_THROW(parse_report_csv("a,b\n"), DataError);
  EXPECT_THROW(parse_report_csv("epoch,train_loss,train_acc,test_acc,wall_time\n1,2,3\n"), DataError);
  EXPECT_THROW(parse_report_csv("epoch,train_loss,train_acc,test_acc,wall_time\n1,x,0,0,0\n"), DataError);
}

TEST(Report, ValidationAndSummary) {
  TrainReport r;
  r.initial_test_acc = 0.1;
  r.add({1, 1.0, 0.5, 0.4, 0.0});
  EXPECT_THROW(r.add({1, 1.0, 0.5, 0.4, 0.0}), Error);
  EXPECT_EQ(r.rows.size(), 1u);
  TrainReport bad;
  EXPECT_THROW(bad.add({1, 1.0, 1.5, 0.4, 0.0}), Error);
  TrainReport worse;
  worse.initial_test_acc = 0.9;
  worse.add({1, 1.0, 0.3, 0.2, 0.0});
  EXPECT_EQ(worse.best_test_acc(), 0.9);
  const auto s = r.summary();
  EXPECT_EQ(s.at("epochs").get<std::size_t>(), 1u);
  EXPECT_EQ(s.at("best_test_accuracy").get<double>(), 0.4);
}

TEST(Report, ConfusionCsv) {
  EXPECT_EQ(confusion_csv({{1, 0}, {2, 3}}), "1,0\n2,3\n");
}

// ------------------------------------------------------------ checkpoint

TEST(Checkpoint, RoundTripRestoresEverything) {
  const auto dir = scratch("roundtrip");
  Network<double> net(NetworkSpec::mnist(noisy(), true), 21);
  TrainConfig cfg;
  cfg.batch_size = 16;
  cfg.seed = 2;
  Optimizer<double> opt(cfg, net);
  const auto ds = synthetic(48, 1);
  train_epoch(net, opt, ds, cfg, 0);
  nlohmann::json extra;
  extra["note"] = "x";
  save_checkpoint(dir / "c.bin", net, opt, 1, extra);

  auto ck = load_checkpoint<double>(dir / "c.bin");
  EXPECT_EQ(ck.epoch, 1u);
  EXPECT_EQ(ck.extra.at("note").get<std::string>(), "x");
  EXPECT_EQ(ck.train.batch_size, 16u);
  EXPECT_EQ(ck.opt.steps(), opt.steps());
  EXPECT_EQ(params_of(ck.net), params_of(net));
  EXPECT_EQ(ck.opt.first_moments(), opt.first_moments());
  EXPECT_EQ(ck.opt.second_moments(), opt.second_moments());
  EXPECT_EQ(ck.net.spec().name, "mnist");
  EXPECT_FALSE(fs::exists(dir / "c.bin.tmp"));
}

TEST(Checkpoint, ResumeIsBitIdentical) {
  const auto dir = scratch("resume");
  const auto ds = synthetic(64, 2);
  TrainConfig cfg;
  cfg.batch_size = 16;
  cfg.seed = 3;
  const auto spec = NetworkSpec::mnist(noisy(), true);

  Network<float> straight(spec, 22);
  Optimizer<float> sopt(cfg, straight);
  std::vector<EpochMetrics> ms;
  for (std::size_t e = 0; e < 3; ++e) ms.push_back(train_epoch(straight, sopt, ds, cfg, e));

  {
    Network<float> first(spec, 22);
    Optimizer<float> fopt(cfg, first);
    for (std::size_t e = 0; e < 2; ++e) train_epoch(first, fopt, ds, cfg, e);
    save_checkpoint(dir / "c.bin", first, fopt, 2);
  }
  auto ck = load_checkpoint<float>(dir / "c.bin");
  const auto m = train_epoch(ck.net, ck.opt, ds, ck.train, ck.epoch);
  EXPECT_EQ(m, ms.back());
  EXPECT_EQ(params_of(ck.net), params_of(straight));
  EXPECT_EQ(evaluate(ck.net, ds).loss, evaluate(straight, ds).loss);
}

TEST(Checkpoint, PrecisionConvertsOnLoad) {
  const auto dir = scratch("precision");
  Network<float> net(NetworkSpec::mnist(), 23);
  TrainConfig cfg;
  Optimizer<float> opt(cfg, net);
  save_checkpoint(dir / "c.bin", net, opt, 0);
  auto ck = load_checkpoint<double>(dir / "c.bin");
  const auto wide = params_of(ck.net);
  const auto narrow = params_of(net);
  ASSERT_EQ(wide.size(), narrow.size());
  for (std::size_t i = 0; i < wide.size(); ++i) EXPECT_EQ(static_cast<float>(wide[i]), static_cast<float>(narrow[i]));
}

TEST(Checkpoint, RejectsDamage) {
  const auto dir = scratch("damage");
  Network<float> net(NetworkSpec::mnist(), 24);
  TrainConfig cfg;
  Optimizer<float> opt(cfg, net);
  save_checkpoint(dir / "c.bin", net, opt, 0);
  const std::string good = slurp(dir / "c.bin");

  EXPECT_THROW(load_checkpoint<float>(dir / "missing.bin"), CheckpointError);

  spit(dir / "t.bin", good.substr(0, good.size() / 2));
  EXPECT_THROW(load_checkpoint<float>(dir / "t.bin"), CorruptCheckpoint);
  spit(dir / "t.bin", good.substr(0, 30));
  EXPECT_THROW(load_checkpoint<float>(dir / "t.bin"), CorruptCheckpoint);
  spit(dir / "t.bin", good.substr(0, 5));
  EXPECT_THROW(load_checkpoint<float>(dir / "t.bin"), CorruptCheckpoint);

  std::string flipped = good;
  flipped[flipped.size() - 3] ^= 0x10;
  spit(dir / "f.bin", flipped);
  try {
    load_checkpoint<float>(dir / "f.bin");
    FAIL() << "no throw";
  } catch (const CorruptCheckpoint& e) {
    EXPECT_NE(std::string(e.what()).find("checksum"), std::string::npos) << e.what();
  }

  std::string magic = good;
  magic[0] = 'X';
  spit(dir / "m.bin", magic);
  EXPECT_THROW(load_checkpoint<float>(dir / "m.bin"), CorruptCheckpoint);

  std::string version = good;
  version[8] = static_cast<char>(kCheckpointVersion + 1);
  spit(dir / "v.bin", version);
  EXPECT_THROW(load_checkpoint<float>(dir / "v.bin"), CheckpointVersionMismatch);

  std::string header = good;
  header[20] = '!';
  spit(dir / "h.bin", header);
  EXPECT_THROW(load_checkpoint<float>(dir / "h.bin"), CorruptCheckpoint);
}
