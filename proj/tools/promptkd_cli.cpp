// Command-line driver for teacher training, distillation and evaluation.

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "promptkd/config.hpp"
#include "promptkd/errors.hpp"
#include "promptkd/experiment.hpp"

namespace fs = std::filesystem;
using namespace promptkd;

namespace {

struct Common {
  std::string config;
  std::vector<std::string> sets;
  std::string out;
  bool force = false;
  bool quiet = false;
};

struct Selection {
  std::string method = "all";
  std::vector<std::uint64_t> seeds;
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("--config", c.config, "key=value configuration file")->check(CLI::ExistingFile);
  app->add_option("--set", c.sets, "override one key, e.g. --set train.steps=100");
  app->add_option("--out", c.out, "run directory (overrides output.dir)");
  app->add_flag("--force", c.force, "re-run stages already recorded in the manifest");
  app->add_flag("-q,--quiet", c.quiet, "no progress output");
}

void add_selection(CLI::App* app, Selection& s) {
  app->add_option("--method", s.method, "promptkd, sft, kd, seqkd, gkd or all (run.methods)");
  app->add_option("--seed", s.seeds, "run seed(s); default: run.seeds");
}

ExperimentConfig load_config(const Common& c) {
  KeyValueConfig kv;
  if (!c.config.empty()) kv.load_file(c.config);
  for (const auto& s : c.sets) kv.set_assignment(s);
  return ExperimentConfig::from(kv);
}

Experiment open(const Common& c) {
  auto cfg = load_config(c);
  const fs::path dir = resolve_output_dir(cfg, c.out);
  Experiment ex(std::move(cfg), dir, c.force);
  if (!c.quiet) ex.log = [](std::string_view m) { std::cerr << m << '\n'; };
  return ex;
}

std::vector<Method> methods_of(const Selection& s, const Experiment& ex) {
  if (s.method == "all") return ex.config().run_methods;
  return {parse_method(s.method)};
}

std::vector<std::uint64_t> seeds_of(const Selection& s, const Experiment& ex) {
  return s.seeds.empty() ? ex.config().run_seeds : s.seeds;
}

int exit_code(const Error& e) {
  if (dynamic_cast<const ConfigError*>(&e) || dynamic_cast<const ParseError*>(&e)) return 2;
  if (dynamic_cast<const DependencyError*>(&e)) return 3;
  if (dynamic_cast<const AggregationError*>(&e)) return 4;
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Prompt-tuned knowledge distillation for small autoregressive models"};
  app.require_subcommand(1);
  app.set_version_flag("--version", PROMPTKD_VERSION);

  Common common;
  Selection sel;
  bool progress = false;
  std::vector<std::string> report_dirs;

  auto* teacher = app.add_subcommand("train-teacher", "supervised fine-tuning of the teacher");
  add_common(teacher, common);

  auto* distill = app.add_subcommand("distill", "train students (warm start runs when needed)");
  add_common(distill, common);
  add_selection(distill, sel);

  auto* eval = app.add_subcommand("eval", "ROUGE-L of the selected students on validation data");
  add_common(eval, common);
  add_selection(eval, sel);

  auto* exposure = app.add_subcommand("exposure-bias", "ExAccErr(l) for l = 1..L");
  add_common(exposure, common);
  add_selection(exposure, sel);
  exposure->add_flag("--progress", progress, "ExAccErr(L) at each training snapshot instead");

  auto* probe = app.add_subcommand("probe", "teacher-to-student KL with and without the prompt");
  add_common(probe, common);
  probe->add_option("--seed", sel.seeds, "run seed(s); default: run.seeds");

  auto* report = app.add_subcommand("report", "aggregate one or more run directories");
  report->add_option("dirs", report_dirs, "run directories")->required()->check(CLI::ExistingDirectory);
  report->add_option("--out", common.out, "report directory (default: <first dir>/report)");

  auto* all = app.add_subcommand("all", "every stage for every method and seed, then the report");
  add_common(all, common);

  auto* defaults = app.add_subcommand("defaults", "print every configuration key with its default");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*defaults) {
      for (const auto& k : config_schema()) {
        std::cout << "# " << k.doc << '\n' << k.key << " = " << k.default_value << "\n\n";
      }
      return 0;
    }
    if (*report) {
      std::vector<fs::path> dirs(report_dirs.begin(), report_dirs.end());
      const fs::path out = common.out.empty() ? dirs.front() / "report" : fs::path(common.out);
      for (const auto& p : write_report(dirs, out)) std::cout << p.string() << '\n';
      return 0;
    }
    Experiment ex = open(common);
    if (*teacher) {
      ex.train_teacher();
    } else if (*distill) {
      for (auto seed : seeds_of(sel, ex))
        for (auto m : methods_of(sel, ex)) ex.distill(m, seed);
    } else if (*eval) {
      for (auto seed : seeds_of(sel, ex))
        for (auto m : methods_of(sel, ex)) ex.evaluate(m, seed);
    } else if (*exposure) {
      for (auto seed : seeds_of(sel, ex)) {
        for (auto m : methods_of(sel, ex)) {
          if (progress) {
            ex.exposure_progress(m, seed);
          } else {
            ex.exposure_bias(m, seed);
          }
        }
      }
    } else if (*probe) {
      for (auto seed : seeds_of(sel, ex)) ex.probe(seed);
    } else if (*all) {
      ex.run_all();
    }
    std::cout << ex.dir().string() << '\n';
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_code(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
