#include <doctest.h>

#include "auss/domain.hpp"
#include "auss/synthetic.hpp"

using namespace auss;

namespace {

Cohort two_students() {
  Cohort c;
  c.students = {{"s1", "c01", {{"prior_gpa", 3.0}}, 0}, {"s2", "c01", {}, 0}};
  c.resources = {{"r1", "algebra", 0.3}};
  c.events = {{"s1", 0, EngagementKind::login, std::nullopt, 0.8},
              {"s2", 0, EngagementKind::resource_view, "r1", 0.5},
              {"s1", 1, EngagementKind::login, std::nullopt, 0.6}};
  return c;
}

EventIndex index_of(const std::vector<EngagementEvent> &events) {
  EventIndex idx;
  idx.add_student("s1");
  for (const auto &e : events) {
    idx.append(e);
  }
  return idx;
}

} // namespace

TEST_CASE("well-formed cohort validates clean") { CHECK(validate_cohort(two_students()).empty()); }

TEST_CASE("event for an unknown student names it") {
  auto c = two_students();
  c.events.push_back({"s9", 2, EngagementKind::login, std::nullopt, 0.5});
  const auto v = validate_cohort(c);
  REQUIRE(v.size() == 1);
  CHECK(v[0].entity_id == "s9");
  CHECK(v[0].rule == Rule::unknown_student);
}

TEST_CASE("event value out of range is one violation") {
  auto c = two_students();
  c.events[0].value = 1.5;
  const auto v = validate_cohort(c);
  REQUIRE(v.size() == 1);
  CHECK(v[0].rule == Rule::event_value_out_of_range);
  CHECK(to_string(v[0].rule) == "event_value_out_of_range");
}

TEST_CASE("other validation rules fire") {
  auto c = two_students();
  c.students.push_back(c.students[0]);
  c.resources[0].difficulty = 2.0;
  c.answer_keys = {{"q1", AnswerKind::numeric, "3", std::nullopt, 1.0}};
  const auto v = validate_cohort(c);
  auto has = [&v](Rule r) {
    return std::any_of(v.begin(), v.end(), [r](const Violation &x) { return x.rule == r; });
  };
  CHECK(has(Rule::duplicate_student_id));
  CHECK(has(Rule::difficulty_out_of_range));
  CHECK(has(Rule::tolerance_mismatch));
}

TEST_CASE("empty window gives the zero vector") {
  const auto idx = index_of({{"s1", 0, EngagementKind::login, std::nullopt, 1.0}});
  const auto f = feature_window(idx, "s1", 20, 5);
  for (double v : f) {
    CHECK(v == 0.0);
  }
}

TEST_CASE("constant logins give count, mean and zero slope") {
  std::vector<EngagementEvent> ev;
  for (Tick t = 0; t < 5; ++t) {
    ev.push_back({"s1", t, EngagementKind::login, std::nullopt, 1.0});
  }
  const auto f = feature_window(index_of(ev), "s1", 4, 5);
  CHECK(f[lag_index(EngagementKind::login, kLagCount)] == 5.0);
  CHECK(f[lag_index(EngagementKind::login, kLagMean)] == 1.0);
  CHECK(f[lag_index(EngagementKind::login, kLagSlope)] == 0.0);
}

TEST_CASE("rising logins give slope 0.2 per tick") {
  const auto idx = index_of({{"s1", 0, EngagementKind::login, std::nullopt, 0.2},
                             {"s1", 1, EngagementKind::login, std::nullopt, 0.4},
                             {"s1", 2, EngagementKind::login, std::nullopt, 0.6}});
  const auto f = feature_window(idx, "s1", 2, 3);
  CHECK(f[lag_index(EngagementKind::login, kLagSlope)] == doctest::Approx(0.2).epsilon(1e-12));
  CHECK(f[lag_index(EngagementKind::login, kLagMean)] == doctest::Approx(0.4));
}

TEST_CASE("feature_window preconditions") {
  const auto idx = index_of({});
  CHECK_THROWS_AS(feature_window(idx, "s1", 3, 0), InvalidArgument);
  CHECK_THROWS_AS(feature_window(idx, "nobody", 3, 2), DataError);
  EventIndex i2;
  i2.add_student("s1");
  i2.append({"s1", 5, EngagementKind::login, std::nullopt, 1.0});
  CHECK_THROWS(i2.append({"s1", 4, EngagementKind::login, std::nullopt, 1.0}));
}

TEST_CASE("feature window is pure and fixed length") {
  GeneratorConfig cfg;
  cfg.n_students = 30;
  cfg.n_ticks = 15;
  const auto cohort = generate_cohort(cfg);
  const EventIndex idx(cohort);
  for (const auto &s : cohort.students) {
    const auto a = feature_window(idx, s.student_id, 10, 5);
    const auto b = feature_window(idx, s.student_id, 10, 5);
    CHECK(a == b);
    CHECK(a.size() == lag_feature_names().size());
  }
}

TEST_CASE("split_students is deterministic and disjoint") {
  std::vector<StudentId> ids;
  for (int i = 0; i < 10; ++i) {
    ids.push_back("s" + std::to_string(i));
  }
  const auto a = split_students(ids, 0.8, 11);
  const auto b = split_students(ids, 0.8, 11);
  CHECK(a.train == b.train);
  CHECK(a.test == b.test);
  CHECK(a.train.size() == 8);
  CHECK(a.test.size() == 2);
  CHECK_THROWS_AS(split_students(ids, 1.0, 1), InvalidArgument);
  CHECK(split_students({"a", "b"}, 0.01, 1).train.size() == 1);
}

TEST_CASE("enum names round trip") {
  for (auto k : kEngagementKinds) {
    CHECK(parse_engagement_kind(to_string(k)) == k);
  }
  CHECK_THROWS(parse_engagement_kind("nap"));
  CHECK(parse_answer_kind(to_string(AnswerKind::numeric)) == AnswerKind::numeric);
}
