// memcap: device sweeps, crossbar CNN training/evaluation and self-checks.
//
//   memcap hysteresis [--frequency 2000] [--k 0] --out runs/hyst
//   memcap train --preset mnist --train-limit 10000 --epochs 5 --out runs/mnist
//   memcap eval --checkpoint runs/mnist/checkpoint.bin --split holdout
//   memcap selfcheck
//
// Exit codes: 0 ok, 1 other error, 2 config error, 3 data error,
// 4 selfcheck failure.

#include <algorithm>
#include <exception>
#include <iostream>
#include <map>
#include <string>

#include <CLI11.hpp>

#include "memcap/harness.hpp"

#ifndef MEMCAP_DEFAULT_DATA_DIR
#define MEMCAP_DEFAULT_DATA_DIR "data"
#endif

namespace {

constexpr int kExitError = 1;
constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitSelfcheck = 4;

struct Sub {
  memcap::Command cmd;
  CLI::App* app = nullptr;
  std::string config_path;
  std::map<std::string, std::string> flags;
};

void add_keys(Sub& s, const std::string& data_dir) {
  s.app->add_option("--config", s.config_path, "flat key = value config file");
  for (const auto& k : memcap::config_keys(s.cmd, data_dir)) {
    std::string flag = "--" + k.name;
    std::replace(flag.begin(), flag.end(), '_', '-');
    std::string help = k.help;
    if (!k.default_value.empty()) help += " [default: " + k.default_value + "]";
    const std::string key = k.name;
    if (k.flag) {
      s.app->add_flag_callback(flag, [&s, key] { s.flags[key] = "true"; }, help);
    } else {
      s.app->add_option_function<std::string>(
          flag, [&s, key](const std::string& v) { s.flags[key] = v; }, help);
    }
  }
}

int run(Sub& s, const std::string& data_dir) {
  const auto file = s.config_path.empty() ? std::map<std::string, std::string>{}
                                          : memcap::load_config_file(s.config_path);
  const auto cfg = memcap::resolve_config(s.cmd, file, s.flags, data_dir);
  switch (s.cmd) {
    case memcap::Command::hysteresis:
      memcap::run_hysteresis(cfg, std::cout);
      return 0;
    case memcap::Command::train:
      memcap::run_train(cfg, std::cout);
      return 0;
    case memcap::Command::eval:
      memcap::run_eval(cfg, std::cout);
      return 0;
    case memcap::Command::selfcheck:
      return memcap::run_selfcheck(cfg, std::cout) ? 0 : kExitSelfcheck;
  }
  return kExitError;
}

}  // namespace

int main(int argc, char** argv) {
  const std::string data_dir = MEMCAP_DEFAULT_DATA_DIR;
  CLI::App app{"memcapacitor crossbar CNN simulator"};
  app.require_subcommand(1);
  Sub subs[] = {{memcap::Command::hysteresis, nullptr, {}, {}},
                {memcap::Command::train, nullptr, {}, {}},
                {memcap::Command::eval, nullptr, {}, {}},
                {memcap::Command::selfcheck, nullptr, {}, {}}};
  const char* help[] = {"sinusoidal sweep of one device; writes hysteresis.csv and hysteresis.json",
                        "train a preset network; writes report.csv, summary.json, confusion_test.csv, checkpoint.bin",
                        "evaluate a checkpoint on a split; writes eval_<split>.json and confusion_<split>.csv",
                        "run the built-in oracle checks and print a pass/fail table"};
  for (std::size_t i = 0; i < std::size(subs); ++i) {
    subs[i].app = app.add_subcommand(memcap::to_string(subs[i].cmd), help[i]);
    add_keys(subs[i], data_dir);
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : kExitConfig;
  }

  try {
    for (auto& s : subs)
      if (s.app->parsed()) return run(s, data_dir);
  } catch (const memcap::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const memcap::InvalidParameter& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const memcap::DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const memcap::CheckpointError& e) {
    std::cerr << "checkpoint error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitError;
  }
  return kExitError;
}
