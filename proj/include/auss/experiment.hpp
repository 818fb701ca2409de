#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "auss/educator_agent.hpp"
#include "auss/institution_agent.hpp"
#include "auss/runtime.hpp"
#include "auss/student_agent.hpp"
#include "auss/synthetic.hpp"

namespace auss {

std::string_view version();

/// Bumped whenever the transcript record layout changes.
inline constexpr int kTranscriptFormatVersion = 1;

/// Accuracy metrics that can be switched off; latency and load are always reported.
inline constexpr std::array<std::string_view, 4> kMetricNames = {"recommendation", "prediction",
                                                                 "grading", "risk"};

struct ExperimentSpec {
  std::uint64_t seed = 42; // copied into every seeded component by apply_seed
  GeneratorConfig generator;
  SchedulerConfig scheduler;
  InterventionPolicyConfig policy;
  PredictorConfig predictor;
  RiskConfig risk;
  StudentAgentConfig student;
  EducatorAgentConfig educator;
  double train_fraction = 0.8;
  std::vector<std::string> metrics{kMetricNames.begin(), kMetricNames.end()};
  std::filesystem::path output_dir;

  void apply_seed(std::uint64_t value);
  bool wants(std::string_view metric) const;
  /// Throws InvalidArgument naming the first invalid field.
  void validate() const;
};

/// Missing sections keep defaults; unknown keys are rejected. When the
/// scheduler section sets no max_ticks, the generator horizon is used.
ExperimentSpec experiment_spec_from_json(const Json &j);
ExperimentSpec load_experiment_spec(const std::filesystem::path &path);
Json experiment_spec_to_json(const ExperimentSpec &spec);

// ---------------------------------------------------------------------------

struct RunMetadata {
  std::uint64_t seed = 0;
  std::string version;
  std::size_t n_students = 0;
  std::size_t n_ticks = 0;
  double prediction_threshold = 0.5;
  double train_mean_ability = 0.0;
  std::vector<std::string> metrics;
  std::map<std::string, double> durations_ms; // per stage; timing field

  bool operator==(const RunMetadata &) const = default;
};

struct RecommendationEval {
  StudentId student;
  std::optional<ResourceId> recommended;
  std::optional<ResourceId> truth; // most preferred unobserved resource
  bool operator==(const RecommendationEval &) const = default;
};

struct PredictionEval {
  StudentId student;
  double predicted = 0.0;
  double ability = 0.0;
  bool operator==(const PredictionEval &) const = default;
};

struct RiskEval {
  StudentId student;
  double risk_score = 0.0;
  bool flagged = false;
  bool dropped_out = false;
  bool operator==(const RiskEval &) const = default;
};

struct EvaluationRecords {
  std::vector<RecommendationEval> recommendations;
  std::vector<PredictionEval> predictions;
  std::vector<RiskEval> risk;
  std::vector<GradeResult> reference_grades;
  bool operator==(const EvaluationRecords &) const = default;
};

/// Everything needed to recompute a MetricsReport.
struct ExperimentTranscript {
  RunMetadata metadata;
  SimulationTranscript simulation;
  EvaluationRecords evaluation;
};

struct MetricsReport {
  std::optional<double> top1_accuracy;
  std::size_t top1_evaluated = 0;
  std::optional<double> prediction_accuracy;
  std::optional<double> prediction_mae;
  std::optional<double> baseline_mae;
  std::optional<double> grading_match_rate;
  std::size_t graded_items = 0;
  std::optional<PrecisionRecall> risk;
  std::map<AgentId, LatencyStats> latency; // timing field
  LoadReport load;
  std::size_t events_published = 0;
  RunMetadata metadata;
};

/// Pure function of the transcript; run_experiment and replay both use it.
MetricsReport compute_metrics(const ExperimentTranscript &transcript);

Json metrics_to_json(const MetricsReport &report, bool include_timings = true);
MetricsReport metrics_from_json(const Json &j);
/// Equality on every field except latency and stage durations.
bool same_metrics(const MetricsReport &a, const MetricsReport &b);

// ---------------------------------------------------------------------------

/// Header, simulation records, evaluation records, then a footer holding the
/// record count and an FNV-1a 64 checksum over all preceding lines.
std::vector<std::string> experiment_transcript_lines(const ExperimentTranscript &transcript);
void write_experiment_transcript(const std::filesystem::path &path,
                                 const ExperimentTranscript &transcript);

class IncompatibleTranscript : public DataError {
public:
  using DataError::DataError;
};

/// Throws DataError when empty, truncated or tampered (checksum mismatch) and
/// IncompatibleTranscript for another format version.
ExperimentTranscript parse_experiment_transcript(std::span<const std::string> lines);
ExperimentTranscript read_experiment_transcript(const std::filesystem::path &path);

std::uint64_t fnv1a64(std::string_view data, std::uint64_t seed = 0xcbf29ce484222325ULL);

// ---------------------------------------------------------------------------

/// Aborted pipeline stage; partial outputs have been removed.
class StageError : public Error {
public:
  StageError(std::string stage, const std::string &cause)
      : Error("stage '" + stage + "' failed: " + cause), stage_(std::move(stage)) {}
  const std::string &stage() const { return stage_; }

private:
  std::string stage_;
};

struct ExperimentResult {
  MetricsReport report;
  ExperimentTranscript transcript;
  std::vector<RiskAssessment> risk;
  std::vector<ClassReport> class_reports;
  QTable q_table;
  Json models;
};

/// generate -> fit -> simulate -> evaluate -> write. Outputs go to
/// spec.output_dir when it is set.
ExperimentResult run_experiment(const ExperimentSpec &spec);

/// Same pipeline on an existing cohort (needs ground truth for the fit stage).
ExperimentResult simulate_cohort(const Cohort &cohort, const ExperimentSpec &spec);

/// Writes report.json, report_deterministic.json, transcript.jsonl and the CSV
/// series into `dir` through a staging directory.
void write_run_outputs(const ExperimentResult &result, const std::filesystem::path &dir);

struct SweepEntry {
  std::uint64_t seed = 0;
  MetricsReport report;
};

/// Runs seeds seed, seed+1, ... concurrently; each run writes to
/// output_dir/seed-<n> when output_dir is set.
std::vector<SweepEntry> run_sweep(const ExperimentSpec &spec, std::size_t runs);
Json sweep_to_json(const std::vector<SweepEntry> &entries);

/// Plot-ready series as (header, rows).
struct CsvSeries {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};
CsvSeries accuracy_series(const MetricsReport &report);
CsvSeries latency_series(const MetricsReport &report);
CsvSeries load_series(const MetricsReport &report);

} // namespace auss
