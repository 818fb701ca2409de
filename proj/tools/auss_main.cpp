// auss: generate cohorts, run simulations, recompute and replay reports.

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>

#include "auss/csv.hpp"
#include "auss/experiment.hpp"

namespace {

using namespace auss;

Json read_json_file(const std::filesystem::path &path) {
  std::ifstream in(path);
  if (!in) {
    throw DataError("cannot open " + path.string());
  }
  try {
    return Json::parse(in);
  } catch (const Json::parse_error &e) {
    throw DataError(path.filename().string() + ": " + e.what());
  }
}

// Accepts a full experiment spec or a bare generator config.
GeneratorConfig load_generator_config(const std::filesystem::path &path) {
  const Json j = read_json_file(path);
  if (j.is_object() && (j.contains("generator") || j.contains("scheduler") ||
                        j.contains("metrics") || j.contains("policy"))) {
    return experiment_spec_from_json(j).generator;
  }
  GeneratorConfig cfg = generator_config_from_json(j);
  cfg.validate();
  return cfg;
}

std::string cell(const std::optional<double> &v) {
  return v ? csv::format_double(*v) : std::string("n/a");
}

void print_table(const MetricsReport &r) {
  std::printf("%-16s %-14s %s\n", "component", "metric", "value");
  std::printf("%-16s %-14s %s\n", "recommendation", "top1", cell(r.top1_accuracy).c_str());
  std::printf("%-16s %-14s %s\n", "prediction", "accuracy", cell(r.prediction_accuracy).c_str());
  std::printf("%-16s %-14s %s\n", "prediction", "mae", cell(r.prediction_mae).c_str());
  std::printf("%-16s %-14s %s\n", "grading", "match_rate", cell(r.grading_match_rate).c_str());
  if (r.risk) {
    std::printf("%-16s %-14s %s\n", "risk", "precision", csv::format_double(r.risk->precision).c_str());
    std::printf("%-16s %-14s %s\n", "risk", "recall", csv::format_double(r.risk->recall).c_str());
    std::printf("%-16s %-14s %s\n", "risk", "f1", csv::format_double(r.risk->f1).c_str());
  }
  for (const auto &[agent, count] : r.load.counts) {
    const auto lat = r.latency.find(agent);
    std::printf("%-16s load=%-8zu share=%-8.4f mean_ms=%.4f\n",
                std::string(to_string(agent)).c_str(), count, r.load.shares.at(agent),
                lat == r.latency.end() ? 0.0 : lat->second.mean_ms);
  }
}

int fail(const std::string &kind, const std::string &message, const std::string &stage = {}) {
  Json err = {{"error", kind}, {"message", message}};
  if (!stage.empty()) {
    err["stage"] = stage;
  }
  std::cerr << err.dump() << '\n';
  return 1;
}

} // namespace

int main(int argc, char **argv) {
  CLI::App app{"Agentic student-support simulation harness"};
  app.set_version_flag("--version", std::string(auss::version()));
  app.require_subcommand(1);

  std::string config;
  std::string out;
  std::string cohort_dir;
  std::string run_dir;
  std::string transcript;
  std::size_t runs = 1;
  std::optional<std::uint64_t> seed;

  auto *gen = app.add_subcommand("generate", "Generate a synthetic cohort");
  gen->add_option("--config", config, "Generator config or experiment spec (JSON)")->required();
  gen->add_option("--out", out, "Output cohort directory")->required();
  gen->add_option("--seed", seed, "Override the seed");

  auto *sim = app.add_subcommand("simulate", "Run the agents over an existing cohort");
  sim->add_option("--cohort", cohort_dir, "Cohort directory")->required();
  sim->add_option("--config", config, "Experiment spec (JSON)")->required();
  sim->add_option("--out", out, "Run output directory")->required();
  sim->add_option("--seed", seed, "Override the seed");

  auto *exp = app.add_subcommand("experiment", "Generate, simulate and evaluate in one go");
  exp->add_option("--config", config, "Experiment spec (JSON)")->required();
  exp->add_option("--out", out, "Run output directory")->required();
  exp->add_option("--runs", runs, "Number of seeds to sweep")->check(CLI::PositiveNumber);
  exp->add_option("--seed", seed, "Override the seed");

  auto *eval = app.add_subcommand("evaluate", "Recompute metrics for a run directory");
  eval->add_option("--run", run_dir, "Run output directory")->required();

  auto *rep = app.add_subcommand("replay", "Recompute metrics from a transcript alone");
  rep->add_option("--transcript", transcript, "transcript.jsonl")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp &e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion &e) {
    return app.exit(e);
  } catch (const CLI::ParseError &e) {
    return fail("usage", e.what());
  }

  try {
    if (*gen) {
      auto cfg = load_generator_config(config);
      if (seed) {
        cfg.seed = *seed;
      }
      const Cohort cohort = generate_cohort(cfg);
      export_cohort(cohort, out);
      std::cout << Json{{"students", cohort.students.size()},
                        {"events", cohort.events.size()},
                        {"assessments", cohort.assessments.size()},
                        {"out", out}}
                       .dump()
                << '\n';
    } else if (*sim || *exp) {
      auto spec = load_experiment_spec(config);
      if (seed) {
        spec.apply_seed(*seed);
      }
      spec.output_dir = out;
      if (*sim) {
        const Cohort cohort = import_cohort(cohort_dir);
        print_table(simulate_cohort(cohort, spec).report);
      } else if (runs > 1) {
        const auto entries = run_sweep(spec, runs);
        std::filesystem::create_directories(out);
        std::ofstream(std::filesystem::path(out) / "sweep.json") << sweep_to_json(entries).dump(2)
                                                                 << '\n';
        for (const auto &e : entries) {
          std::printf("seed %llu\n", static_cast<unsigned long long>(e.seed));
          print_table(e.report);
        }
      } else {
        print_table(run_experiment(spec).report);
      }
    } else if (*eval) {
      const std::filesystem::path dir(run_dir);
      const auto recomputed = compute_metrics(read_experiment_transcript(dir / "transcript.jsonl"));
      const auto stored = metrics_from_json(read_json_file(dir / "report.json"));
      print_table(recomputed);
      if (!same_metrics(recomputed, stored)) {
        return fail("mismatch", "recomputed metrics differ from report.json");
      }
    } else if (*rep) {
      const auto report = compute_metrics(read_experiment_transcript(transcript));
      std::cout << metrics_to_json(report, true).dump(2) << '\n';
    }
  } catch (const StageError &e) {
    return fail("stage", e.what(), e.stage());
  } catch (const IncompatibleTranscript &e) {
    return fail("incompatible", e.what());
  } catch (const InvalidArgument &e) {
    return fail("invalid_argument", e.what());
  } catch (const DataError &e) {
    return fail("data", e.what());
  } catch (const std::exception &e) {
    return fail("internal", e.what());
  }
  return 0;
}
