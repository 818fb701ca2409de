#pragma once

#include <cstdint>
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

// ---------------------------------------------------------------------------
// Collaborative filtering

/// Student x resource engagement scores. A cell holds the mean of the values
/// observed for that pair, or nothing.
class InteractionMatrix {
public:
  InteractionMatrix() = default;
  /// Throws InvalidArgument on duplicate row or column ids.
  InteractionMatrix(std::vector<StudentId> rows, std::vector<ResourceId> cols);

  /// Mean resource_view value per (student, resource) pair.
  static InteractionMatrix from_cohort(const Cohort &cohort);

  std::size_t row_count() const { return rows_.size(); }
  std::size_t col_count() const { return cols_.size(); }
  const std::vector<StudentId> &rows() const { return rows_; }
  const std::vector<ResourceId> &cols() const { return cols_; }

  std::optional<std::size_t> row_index(const StudentId &id) const;
  std::optional<std::size_t> col_index(const ResourceId &id) const;

  /// Replaces the cell. Throws InvalidArgument for values outside [0,1].
  void set(std::size_t row, std::size_t col, double value);
  /// Folds one more observation into the running mean of the cell.
  void observe(const StudentId &student, const ResourceId &resource, double value);

  std::optional<double> at(std::size_t row, std::size_t col) const;
  /// Row with unobserved cells as 0.
  std::vector<double> dense_row(std::size_t row) const;

private:
  std::vector<StudentId> rows_;
  std::vector<ResourceId> cols_;
  std::unordered_map<StudentId, std::size_t> row_lookup_;
  std::unordered_map<ResourceId, std::size_t> col_lookup_;
  std::vector<double> sum_;
  std::vector<std::uint32_t> count_;
};

/// dot(u,v) / (|u| |v|); 0 when either vector has zero norm.
double cosine_similarity(std::span<const double> u, std::span<const double> v);

struct ScoredResource {
  ResourceId resource_id;
  double score = 0.0;

  bool operator==(const ScoredResource &) const = default;
};

struct Recommendation {
  StudentId student_id;
  std::vector<ScoredResource> ranked; // best first
  bool from_popularity = false;

  bool operator==(const Recommendation &) const = default;
};

/// Scores equal to 12 decimal places are ranked as ties (resource id ascending),
/// so summation order cannot flip a tie.
std::int64_t ranking_key(double score);

/**
 * User-based CF. Peers are the `neighborhood` most similar rows with positive
 * cosine similarity (ties by student id). A candidate is scored by the
 * similarity-weighted mean over peers that observed it; candidates no peer
 * observed are dropped. Without positive peers the mean observed score per
 * resource over the other rows is used instead.
 */
Recommendation recommend_top_k(const InteractionMatrix &matrix, const StudentId &student,
                               std::size_t k, std::size_t neighborhood);

// ---------------------------------------------------------------------------
// Performance prediction

struct PredictorConfig {
  ml::BaggedTreesConfig trees;
  ml::LogisticConfig temporal;
  double blend_weight = 0.5; // weight on the static model
  std::size_t window_len = 10;
  double pass_threshold = 0.5;
};

struct PerformancePrediction {
  StudentId student_id;
  double predicted_score = 0.0;
  double static_score = 0.0;
  double temporal_score = 0.0;
  double blend_weight = 0.5;
};

double blend_prediction(double static_score, double temporal_score, double weight);

/// [prior_gpa, credits_attempted], missing features as 0.
std::vector<double> static_feature_vector(const StudentRecord &record);

class PerformancePredictor {
public:
  PerformancePredictor() = default;
  PerformancePredictor(ml::BaggedTrees static_model, ml::LogisticModel temporal_model,
                       double blend_weight);

  bool fitted() const { return static_model_.fitted() && temporal_model_.fitted(); }
  double blend_weight() const { return blend_weight_; }

  /// Throws Error when called before fitting.
  PerformancePrediction predict(const StudentRecord &record, const LagFeatures &lags) const;

  Json to_json() const;
  static PerformancePredictor from_json(const Json &j);

  bool operator==(const PerformancePredictor &) const = default;

private:
  ml::BaggedTrees static_model_;
  ml::LogisticModel temporal_model_;
  double blend_weight_ = 0.5;
};

PerformancePrediction predict_performance(const PerformancePredictor &predictor,
                                          const StudentRecord &record, const LagFeatures &lags);

/// Lag features at the student's last event tick (tick 0 with no events).
LagFeatures latest_lag_features(const EventIndex &index, const StudentId &student,
                                std::size_t window_len);

struct PredictorFit {
  PerformancePredictor predictor;
  StudentSplit split;
  double heldout_accuracy = 0.0;
  double heldout_mae = 0.0;
  double baseline_mae = 0.0; // predicting the train mean for everyone
};

/// Fits both sub-models on the train side of a seeded split of labeled
/// students. Labels are the ground-truth abilities. Throws DataError with
/// fewer than 10 labeled students.
PredictorFit fit_predictors(const Cohort &cohort, double train_fraction, std::uint64_t seed,
                            const PredictorConfig &config = {});

// ---------------------------------------------------------------------------
// Learning gaps

inline constexpr double kDisengagementThreshold = 0.33;
inline constexpr double kDeclineSlope = -0.01;

/**
 * Gap triggers over ticks (tick - window_len, tick]. Returns nothing until the
 * history spans window_len ticks. Mean engagement < 0.33 gives disengagement,
 * score slope < -0.01 gives performance_decline.
 */
std::vector<EventKind> detect_learning_gap(std::span<const TickValue> engagement,
                                           std::span<const TickValue> scores, Tick first_tick,
                                           Tick tick, std::size_t window_len);

/// Suppresses a repeat of the same gap kind for a student within one window.
class GapDebouncer {
public:
  explicit GapDebouncer(std::size_t window_len) : window_len_(window_len) {}

  bool allow(const StudentId &student, EventKind kind, Tick tick) const;
  void record(const StudentId &student, EventKind kind, Tick tick);

private:
  std::size_t window_len_;
  std::map<std::pair<StudentId, EventKind>, Tick> last_;
};

// ---------------------------------------------------------------------------
// Agent

struct StudentAgentConfig {
  std::size_t window_len = 10;
  std::size_t recommend_k = 3;
  std::size_t neighborhood = 20;
};

struct StudentPercepts {
  Tick tick = 0;
  std::vector<StudentId> active;
  std::vector<std::pair<StudentId, InterventionAction>> requests;
  std::size_t risk_flags = 0;
};

struct GapTrigger {
  StudentId student;
  EventKind kind = EventKind::disengagement;
  double mean_engagement = 0.0;
  double score_slope = 0.0;
  std::optional<double> predicted_score;
};

struct StudentDecisions {
  Tick tick = 0;
  std::vector<GapTrigger> gaps;
  std::vector<Recommendation> recommendations;
  std::vector<StudentId> alerts;
};

/// Tracks engagement from raw events and scores from posted grades; raises gap
/// triggers and serves recommendation requests.
class StudentAgent : public PhasedAgent<StudentPercepts, StudentDecisions> {
public:
  StudentAgent(const Cohort &cohort, StudentAgentConfig config,
               std::optional<PerformancePredictor> predictor = std::nullopt);

  AgentId id() const override { return AgentId::student_agent; }
  std::set<EventKind> subscriptions() const override;
  Feedback evaluate(const TickOutcome &outcome) override;

  const InteractionMatrix &interactions() const { return matrix_; }
  const std::set<StudentId> &flagged() const { return flagged_; }

protected:
  StudentPercepts observe(const TickInput &input, std::span<const Event> delivered) override;
  StudentDecisions decide(const StudentPercepts &percepts, const AgentMemory &memory) override;
  std::vector<ActionRecord> execute(const StudentDecisions &decisions, Publisher &out) override;

private:
  struct Track {
    Tick first_tick = 0;
    bool seen = false;
    std::vector<TickValue> engagement;
    std::vector<TickValue> scores;
  };

  StudentAgentConfig config_;
  std::optional<PerformancePredictor> predictor_;
  std::unordered_map<StudentId, StudentRecord> records_;
  std::unordered_map<StudentId, Track> tracks_;
  EventIndex index_;
  InteractionMatrix matrix_;
  GapDebouncer debouncer_;
  std::set<StudentId> flagged_;
  std::size_t gaps_total_ = 0;
  std::size_t recommendations_total_ = 0;
};

} // namespace auss
