#pragma once

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
#include "auss/runtime.hpp"

namespace auss {

// ---------------------------------------------------------------------------
// Grading

struct GradeResult {
  StudentId student_id;
  ItemId item_id;
  double awarded = 0.0;
  bool matched = false;
  bool parse_failed = false; // numeric response that did not parse

  bool operator==(const GradeResult &) const = default;
};

/// Trims, lowercases ASCII and collapses runs of whitespace to one space.
std::string normalize_answer(std::string_view text);

/**
 * All-or-nothing grading. Text kinds compare normalized strings; numeric keys
 * match when |response - canonical| <= tolerance. An unparsable numeric
 * response is graded as a miss with parse_failed set.
 * Throws InvalidArgument when the item ids differ.
 */
GradeResult auto_grade(const AssessmentRecord &submission, const AnswerKey &key);

/// Fraction of (student, item) pairs whose awarded values are equal. Throws
/// InvalidArgument for empty input and DataError when the pair sets differ.
double grading_match_rate(std::span<const GradeResult> results,
                          std::span<const GradeResult> reference);

void write_answer_keys(const std::filesystem::path &path, std::span<const AnswerKey> keys);
/// Throws DataError with the offending line number on malformed rows.
std::vector<AnswerKey> read_answer_keys(const std::filesystem::path &path);

// ---------------------------------------------------------------------------
// Class reports

struct StudentActivity {
  StudentId student_id;
  std::string class_id;
  std::vector<TickValue> scores;
  std::vector<TickValue> engagement;
};

struct StudentSummary {
  StudentId student_id;
  std::optional<double> mean_score; // unset when no score falls in the window
  double engagement_mean = 0.0;
  bool at_risk = false;

  bool operator==(const StudentSummary &) const = default;
};

struct ClassReport {
  std::string class_id;
  Tick window_begin = 0;
  Tick window_end = 0; // inclusive
  std::vector<StudentSummary> students;
  double mean_score = 0.0;   // over students with a score; 0 when none
  double median_score = 0.0;
  std::size_t at_risk_count = 0;
  std::size_t scored_students = 0;

  bool operator==(const ClassReport &) const = default;
};

/// Aggregates one class over ticks [begin, end]. Throws InvalidArgument when
/// begin > end and DataError for a class id with no students.
ClassReport generate_class_report(std::span<const StudentActivity> activity,
                                  const std::string &class_id, Tick begin, Tick end,
                                  const std::set<StudentId> &at_risk);

/// Same, with scores taken from the cohort's graded assessments (mean per
/// student per tick) and engagement from logins (absences count as 0).
ClassReport generate_class_report(const Cohort &cohort, const std::string &class_id, Tick begin,
                                  Tick end, const std::set<StudentId> &at_risk);

std::vector<StudentActivity> activity_from_cohort(const Cohort &cohort);

Json report_to_json(const ClassReport &report);
ClassReport report_from_json(const Json &j);
std::string report_to_text(const ClassReport &report);

// ---------------------------------------------------------------------------
// Quiz templates

enum class TemplateOp { sum, difference, product, quotient, compare, parity };

std::string_view to_string(TemplateOp op);

struct ParameterSlot {
  std::string name;
  long lo = 0;
  long hi = 0; // inclusive
};

/**
 * `pattern` names slots as {name}. Binary ops read the first two slots;
 * parity reads the first. compare renders as a three-way choice with answers
 * a, b and c (equal).
 */
struct QuizTemplate {
  std::string template_id;
  std::string topic_tag;
  std::vector<ParameterSlot> slots;
  std::string pattern;
  TemplateOp op = TemplateOp::sum;
  double tolerance = 0.0; // numeric ops only
  double points = 1.0;
};

struct QuizItem {
  std::string question;
  AnswerKey key;
  std::vector<long> parameters; // slot order

  bool operator==(const QuizItem &) const = default;
};

/// Throws InvalidArgument for n_items == 0 or an empty or unusable slot range.
std::vector<QuizItem> generate_quiz(const QuizTemplate &quiz, std::uint64_t seed,
                                    std::size_t n_items);

const std::vector<QuizTemplate> &default_templates();

// ---------------------------------------------------------------------------
// Agent

struct EducatorAgentConfig {
  std::size_t report_interval = 10;
};

struct EducatorPercepts {
  Tick tick = 0;
  std::vector<AssessmentRecord> submissions;
  std::vector<StudentId> escalations;
  std::size_t gap_notices = 0;
};

struct PostedGrade {
  StudentId student;
  double score = 0.0; // awarded / possible for the tick
  std::size_t items = 0;
};

struct EducatorDecisions {
  Tick tick = 0;
  std::vector<GradeResult> grades;
  std::vector<PostedGrade> posted;
  std::vector<ClassReport> reports;
  std::vector<StudentId> reviews;
};

/// Grades submissions, posts per-student grades and issues periodic class reports.
class EducatorAgent : public PhasedAgent<EducatorPercepts, EducatorDecisions> {
public:
  EducatorAgent(const Cohort &cohort, EducatorAgentConfig config = {});

  AgentId id() const override { return AgentId::educator_agent; }
  std::set<EventKind> subscriptions() const override;
  Feedback evaluate(const TickOutcome &outcome) override;

  const std::vector<ClassReport> &reports() const { return reports_; }

protected:
  EducatorPercepts observe(const TickInput &input, std::span<const Event> delivered) override;
  EducatorDecisions decide(const EducatorPercepts &percepts, const AgentMemory &memory) override;
  std::vector<ActionRecord> execute(const EducatorDecisions &decisions, Publisher &out) override;

private:
  EducatorAgentConfig config_;
  std::unordered_map<ItemId, AnswerKey> keys_;
  std::vector<StudentActivity> activity_;
  std::unordered_map<StudentId, std::size_t> slot_;
  std::vector<std::string> classes_;
  std::set<StudentId> at_risk_;
  std::vector<ClassReport> reports_;
  std::size_t graded_total_ = 0;
  std::size_t parse_failures_ = 0;
  std::size_t gap_notices_ = 0;
};

} // namespace auss
