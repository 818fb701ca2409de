#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "auss/domain.hpp"
#include "auss/ml.hpp"
#include "auss/runtime.hpp"

namespace auss {

inline constexpr std::size_t kInstitutionalFeatureCount = 6;

struct InstitutionalFeatures {
  StudentId student_id;
  double mean_engagement = 0.0;
  double engagement_slope = 0.0;
  double mean_score = 0.0;
  double score_slope = 0.0;
  double absence_rate = 0.0;
  double credits_attempted = 0.0;

  std::array<double, kInstitutionalFeatureCount> values() const {
    return {mean_engagement, engagement_slope, mean_score,
            score_slope,     absence_rate,     credits_attempted};
  }

  bool operator==(const InstitutionalFeatures &) const = default;
};

const std::array<std::string_view, kInstitutionalFeatureCount> &institutional_feature_names();

/// Running per-student record the aggregates are computed from.
struct StudentHistory {
  std::vector<TickValue> engagement; // login values
  std::vector<TickValue> scores;     // mean graded score per assessment tick
  std::size_t absences = 0;
  std::size_t attended = 0; // ticks with a login
  double credits_attempted = 0.0;
};

/// Means over the full history, least-squares slopes per tick (0 with fewer
/// than two points), absence rate = absences / (absences + attended).
InstitutionalFeatures features_from_history(const StudentId &student,
                                            const StudentHistory &history);

/// Histories built from events and graded assessments with tick <= `tick`.
std::vector<StudentHistory> cohort_histories(const Cohort &cohort, Tick tick);

/// One row per declared student, in cohort order.
std::vector<InstitutionalFeatures> aggregate_features(const Cohort &cohort, Tick tick);

// ---------------------------------------------------------------------------
// Risk

struct RiskConfig {
  ml::LogisticConfig logistic{0.5, 3000, 0.0, 0};
  double threshold = 0.5;
  std::size_t assess_interval = 5;
};

/// Throws DataError for fewer than 10 students or labels of a single class.
ml::LogisticModel fit_risk_model(std::span<const InstitutionalFeatures> features,
                                 std::span<const int> dropped_out, std::uint64_t seed,
                                 const ml::LogisticConfig &config = RiskConfig{}.logistic);

struct RiskAssessment {
  StudentId student_id;
  double risk_score = 0.0;
  bool flagged = false;

  bool operator==(const RiskAssessment &) const = default;
};

struct RiskResult {
  std::vector<RiskAssessment> assessments;
  /// at_risk_flag events (ids unassigned) for students not in the flag ledger yet.
  std::vector<Event> flags;
};

/// Scores every row; flagged iff score >= threshold. `already_flagged` is the
/// run's flag ledger and gains every newly flagged student.
RiskResult assess_risk(const ml::LogisticModel &model,
                       std::span<const InstitutionalFeatures> features, double threshold,
                       std::set<StudentId> &already_flagged, Tick tick = 0);
RiskResult assess_risk(const ml::LogisticModel &model,
                       std::span<const InstitutionalFeatures> features, double threshold = 0.5);

void write_risk_csv(const std::filesystem::path &path, std::span<const RiskAssessment> rows);
std::vector<RiskAssessment> read_risk_csv(const std::filesystem::path &path);

// ---------------------------------------------------------------------------
// Evaluation

struct PrecisionRecall {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::size_t true_positives = 0;
  std::size_t false_positives = 0;
  std::size_t false_negatives = 0;
  std::size_t true_negatives = 0;

  bool operator==(const PrecisionRecall &) const = default;
};

/**
 * Standard precision, recall and F1 with these conventions: no predicted and
 * no actual positives gives 1 for all three; otherwise an empty denominator
 * gives 0. Throws DataError when the student sets differ.
 */
PrecisionRecall f1_score(const std::map<StudentId, bool> &predicted,
                         const std::map<StudentId, bool> &truth);

struct LoadReport {
  std::map<AgentId, std::size_t> counts;
  std::map<AgentId, double> shares;
  std::size_t total = 0;

  bool operator==(const LoadReport &) const = default;
};

/// Share of delivered events each agent consumed over the run. Throws
/// InvalidArgument for a transcript without ticks.
LoadReport load_report(const SimulationTranscript &transcript);

// ---------------------------------------------------------------------------
// Agent

struct InstitutionPercepts {
  Tick tick = 0;
  std::vector<StudentId> active;
  std::vector<StudentId> escalations;
};

struct InstitutionDecisions {
  Tick tick = 0;
  std::vector<Event> flags;
  std::vector<StudentId> reviews;
};

/// Aggregates every student's history and raises at_risk_flag events on the
/// configured assessment ticks.
class InstitutionAgent : public PhasedAgent<InstitutionPercepts, InstitutionDecisions> {
public:
  InstitutionAgent(const Cohort &cohort, RiskConfig config,
                   std::optional<ml::LogisticModel> model = std::nullopt);

  AgentId id() const override { return AgentId::institution_agent; }
  std::set<EventKind> subscriptions() const override;
  Feedback evaluate(const TickOutcome &outcome) override;

  /// Most recent risk score, 0 before the first assessment.
  double latest_risk(const StudentId &student) const;
  const std::set<StudentId> &flagged() const { return flagged_; }

protected:
  InstitutionPercepts observe(const TickInput &input, std::span<const Event> delivered) override;
  InstitutionDecisions decide(const InstitutionPercepts &percepts,
                              const AgentMemory &memory) override;
  std::vector<ActionRecord> execute(const InstitutionDecisions &decisions,
                                    Publisher &out) override;

private:
  RiskConfig config_;
  std::optional<ml::LogisticModel> model_;
  std::unordered_map<StudentId, StudentHistory> histories_;
  std::unordered_map<StudentId, double> latest_risk_;
  std::set<StudentId> flagged_;
  std::map<EventKind, std::size_t> seen_;
  std::size_t caught_ = 0;
  std::size_t missed_ = 0;
};

} // namespace auss
