#include <cstdlib>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <optional>

#include "CLI11.hpp"
#include "paal/experiment.hpp"
#include "paal/tensor.hpp"

namespace fs = std::filesystem;
using namespace paal;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitIo = 3;
constexpr int kExitNumerical = 4;

// --out wins, then the config's out_dir, then $PAAL_OUT_DIR/<config name>, then ./results.
fs::path resolve_out(const std::optional<std::string>& flag, const exp::ExperimentConfig& cfg,
                     const fs::path& config_path) {
  if (flag) return *flag;
  if (cfg.out_dir) return *cfg.out_dir;
  if (const char* root = std::getenv("PAAL_OUT_DIR"); root && *root) return fs::path(root) / config_path.stem();
  return "results";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Active learning experiments on synthetic segmentation data"};
  app.require_subcommand(1);

  auto* gen = app.add_subcommand("generate", "write a synthetic dataset");
  std::size_t gen_n = 2000;
  std::uint64_t gen_seed = 7;
  std::string gen_out;
  gen->add_option("--n", gen_n, "number of samples")->capture_default_str();
  gen->add_option("--seed", gen_seed, "generator seed")->capture_default_str();
  gen->add_option("--out", gen_out, "output file")->required();

  auto* run = app.add_subcommand("run", "run every cell of an experiment config");
  std::string run_config;
  std::optional<std::string> run_out;
  std::size_t run_jobs = 1;
  std::optional<std::uint64_t> run_seed;
  run->add_option("--config", run_config, "config file")->required();
  run->add_option("--out", run_out, "results directory");
  run->add_option("--jobs", run_jobs, "cells run in parallel")->capture_default_str()->check(CLI::PositiveNumber);
  run->add_option("--seed", run_seed, "run this single seed instead of the config's list");

  auto* rep = app.add_subcommand("report", "aggregate a results directory");
  std::string rep_dir;
  rep->add_option("--out,dir", rep_dir, "results directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    if (*gen) {
      const auto s = exp::cmd_generate(gen_n, gen_seed, gen_out);
      std::cout << "wrote " << gen_out << ": n=" << s.n;
      if (s.n > 0) {
        std::cout << " occurrence";
        for (std::size_t c = 0; c < s.occurrence.size(); ++c) {
          std::cout << " c" << c + 1 << '=' << std::fixed << std::setprecision(3) << s.occurrence[c];
        }
      }
      std::cout << '\n';
    } else if (*run) {
      auto cfg = exp::load_config(run_config);
      if (run_seed) cfg.seeds = {*run_seed};
      exp::RunOptions opts;
      opts.out_dir = resolve_out(run_out, cfg, run_config);
      opts.jobs = run_jobs;
      opts.log = &std::cerr;
      const auto s = exp::cmd_run(cfg, opts);
      std::cout << opts.out_dir.string() << ": " << s.cells << " cells, " << s.computed << " computed, " << s.reused
                << " reused\n";
    } else if (*rep) {
      exp::cmd_report(rep_dir);
      std::cout << "wrote reports to " << rep_dir << '\n';
    }
  } catch (const exp::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return kExitNumerical;
  } catch (const exp::IoError& e) {
    std::cerr << "i/o error: " << e.what() << '\n';
    return kExitIo;
  } catch (const data::FormatError& e) {
    std::cerr << "i/o error: " << e.what() << '\n';
    return kExitIo;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "i/o error: " << e.what() << '\n';
    return kExitIo;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
