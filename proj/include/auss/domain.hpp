#pragma once

#include <array>
#include <cstdint>
#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "auss/common.hpp"

namespace auss {

enum class EngagementKind { login, resource_view, submission, forum_post, absence };

inline constexpr std::array kEngagementKinds = {
    EngagementKind::login, EngagementKind::resource_view, EngagementKind::submission,
    EngagementKind::forum_post, EngagementKind::absence};

std::string_view to_string(EngagementKind kind);
EngagementKind parse_engagement_kind(std::string_view text);

struct NamedValue {
  std::string name;
  double value = 0.0;

  bool operator==(const NamedValue &) const = default;
};

/// Static feature names accepted by ingestion.
inline constexpr std::string_view kPriorGpa = "prior_gpa";
inline constexpr std::string_view kCreditsAttempted = "credits_attempted";

struct StudentRecord {
  StudentId student_id;
  std::string class_id;
  std::vector<NamedValue> static_features;
  Tick enrollment_tick = 0;

  /// Value of a named static feature, or nullopt when absent.
  std::optional<double> feature(std::string_view name) const;

  bool operator==(const StudentRecord &) const = default;
};

struct EngagementEvent {
  StudentId student_id;
  Tick tick = 0;
  EngagementKind kind = EngagementKind::login;
  std::optional<ResourceId> resource_id;
  double value = 0.0; // intensity in [0, 1]

  bool operator==(const EngagementEvent &) const = default;
};

struct AssessmentRecord {
  StudentId student_id;
  ItemId item_id;
  Tick tick = 0;
  std::string response;
  std::optional<double> score; // unset while ungraded

  bool operator==(const AssessmentRecord &) const = default;
};

struct LearningResource {
  ResourceId resource_id;
  std::string topic_tag;
  double difficulty = 0.0;

  bool operator==(const LearningResource &) const = default;
};

enum class AnswerKind { multiple_choice, numeric, short_text };

std::string_view to_string(AnswerKind kind);
AnswerKind parse_answer_kind(std::string_view text);

struct AnswerKey {
  ItemId item_id;
  AnswerKind kind = AnswerKind::short_text;
  std::string canonical;
  std::optional<double> tolerance; // numeric items only
  double points = 1.0;

  bool operator==(const AnswerKey &) const = default;
};

struct StudentTruth {
  StudentId student_id;
  double ability = 0.0;
  std::vector<ResourceId> preference_ranking; // most preferred first
  bool dropped_out = false;
  std::optional<Tick> dropout_tick;

  bool operator==(const StudentTruth &) const = default;
};

struct GroundTruth {
  std::vector<StudentTruth> students;

  const StudentTruth *find(const StudentId &id) const;

  bool operator==(const GroundTruth &) const = default;
};

struct Cohort {
  std::vector<StudentRecord> students;
  std::vector<EngagementEvent> events;
  std::vector<AssessmentRecord> assessments;
  std::vector<LearningResource> resources;
  std::vector<AnswerKey> answer_keys;
  std::optional<GroundTruth> ground_truth;

  bool operator==(const Cohort &) const = default;
};

struct TickValue {
  Tick tick = 0;
  double value = 0.0;

  bool operator==(const TickValue &) const = default;
};

/// Deterministic train/test partition of student ids. The train side gets
/// round(fraction * n) ids, clamped so both sides are non-empty when n >= 2.
struct StudentSplit {
  std::vector<StudentId> train;
  std::vector<StudentId> test;
};

StudentSplit split_students(std::vector<StudentId> ids, double train_fraction, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Validation

enum class Rule {
  duplicate_student_id,
  duplicate_resource_id,
  duplicate_item_id,
  non_finite_feature,
  feature_out_of_range,
  unknown_student,
  unknown_resource,
  unknown_item,
  event_value_out_of_range,
  tick_order,
  score_out_of_range,
  difficulty_out_of_range,
  tolerance_mismatch,
  non_positive_points,
  ranking_not_permutation,
};

std::string_view to_string(Rule rule);

struct Violation {
  std::string entity_id;
  Rule rule;
  std::string detail;

  bool operator==(const Violation &) const = default;
};

/// Checks every type invariant of a cohort. Violations are reported, not thrown.
std::vector<Violation> validate_cohort(const Cohort &cohort);

// ---------------------------------------------------------------------------
// Lag features

/// Per kind: (count, mean value, least-squares slope per tick).
inline constexpr std::size_t kStatsPerKind = 3;
inline constexpr std::size_t kLagFeatureCount = kEngagementKinds.size() * kStatsPerKind;
using LagFeatures = std::array<double, kLagFeatureCount>;

inline constexpr std::size_t lag_index(EngagementKind kind, std::size_t stat) {
  return static_cast<std::size_t>(kind) * kStatsPerKind + stat;
}
inline constexpr std::size_t kLagCount = 0;
inline constexpr std::size_t kLagMean = 1;
inline constexpr std::size_t kLagSlope = 2;

std::vector<std::string> lag_feature_names();

/// Per-student engagement streams, kept sorted by tick.
class EventIndex {
public:
  EventIndex() = default;
  /// Indexes all events of a cohort; every declared student gets an entry.
  explicit EventIndex(const Cohort &cohort);

  void add_student(const StudentId &id);
  /// Appends one event. Throws on unknown student or decreasing tick.
  void append(const EngagementEvent &event);

  bool contains(const StudentId &id) const { return streams_.contains(id); }

  struct Entry {
    Tick tick;
    EngagementKind kind;
    double value;
  };
  /// Throws DataError for an unknown student.
  const std::vector<Entry> &stream(const StudentId &id) const;

private:
  std::unordered_map<StudentId, std::vector<Entry>> streams_;
};

/// Lag features over ticks (tick - window_len, tick]. Empty windows give zeros.
/// Throws InvalidArgument for window_len == 0 and DataError for unknown students.
LagFeatures feature_window(const EventIndex &index, const StudentId &student, Tick tick,
                           std::size_t window_len);

} // namespace auss
