// saef-sim: command-line driver for the compressed-SGD simulator.

#include <algorithm>
#include <exception>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "saef/harness.hpp"

namespace fs = std::filesystem;

namespace {

struct Common {
  std::string config;
  std::string out;
  std::string seeds;
  long diag_every = -1;
};

void add_common(CLI::App* cmd, Common& c, bool config_required = true) {
  auto* opt = cmd->add_option("--config", c.config, "Experiment config file");
  if (config_required) opt->required();
  cmd->add_option("--out", c.out, "Output directory (overrides output.dir)");
  cmd->add_option("--seeds", c.seeds, "Comma-separated master seeds (overrides seeds)");
  cmd->add_option("--diag-every", c.diag_every, "Iterations between mismatch samples")
      ->check(CLI::NonNegativeNumber);
}

saef::CommandOverrides overrides(const Common& c) {
  saef::CommandOverrides o;
  if (!c.out.empty()) o.out = c.out;
  if (!c.seeds.empty()) o.seeds = saef::parse_seed_list(c.seeds);
  if (c.diag_every >= 0) o.diag_every = c.diag_every;
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Simulator for distributed SGD with compressed communication and error feedback"};
  app.require_subcommand(1);

  Common run_opts;
  auto* run = app.add_subcommand("run", "Run every configuration in a sweep and write CSV/JSON");
  add_common(run, run_opts);

  Common bound_opts;
  auto* bounds = app.add_subcommand("check-bounds", "Run and assert invariants and lemma bounds");
  add_common(bounds, bound_opts);

  std::vector<std::string> compare_inputs;
  std::string compare_out;
  auto* compare = app.add_subcommand("compare", "Compare trajectory CSVs against the first one");
  compare->add_option("runs", compare_inputs, "CSV files or run directories")->required();
  compare->add_option("--out", compare_out, "Write the comparison JSON here instead of stdout");

  saef::GenDataOptions gen;
  std::string gen_format = "csv";
  std::string gen_out;
  auto* gen_cmd = app.add_subcommand("gen-data", "Write a synthetic two-Gaussian dataset");
  gen_cmd->add_option("--n", gen.n, "Number of rows")->required();
  gen_cmd->add_option("--p,--d", gen.p, "Number of features")->required();
  gen_cmd->add_option("--seed", gen.seed, "Generator seed");
  gen_cmd->add_option("--format", gen_format, "csv or libsvm")
      ->check(CLI::IsMember({"csv", "libsvm"}));
  gen_cmd->add_option("--separation", gen.separation, "Distance scale between class means");
  gen_cmd->add_option("--condition-number", gen.condition_number, "Feature covariance condition number");
  gen_cmd->add_option("--out", gen_out, "Output file")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) return saef::command_run(run_opts.config, overrides(run_opts), std::cout);
    if (*bounds) return saef::command_check_bounds(bound_opts.config, overrides(bound_opts), std::cout);
    if (*compare) {
      std::vector<fs::path> csvs;
      for (const auto& in : compare_inputs) {
        if (fs::is_directory(in)) {
          std::vector<fs::path> found;
          for (const auto& entry : fs::directory_iterator(in))
            if (entry.path().extension() == ".csv") found.push_back(entry.path());
          std::sort(found.begin(), found.end());
          csvs.insert(csvs.end(), found.begin(), found.end());
        } else {
          csvs.emplace_back(in);
        }
      }
      const std::string report = saef::compare_json(csvs);
      if (compare_out.empty()) {
        std::cout << report;
      } else {
        saef::write_file_atomic(compare_out, report);
      }
      return 0;
    }
    if (*gen_cmd) {
      gen.format = saef::parse_dataset_format(gen_format);
      gen.out = gen_out;
      saef::command_gen_data(gen);
      return 0;
    }
  } catch (const saef::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
