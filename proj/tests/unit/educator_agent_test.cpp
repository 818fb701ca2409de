#include <doctest.h>

#include <filesystem>
#include <set>

#include "auss/educator_agent.hpp"
#include "auss/stats.hpp"

using namespace auss;

namespace {

AnswerKey text_key(std::string canonical) {
  return {"q1", AnswerKind::multiple_choice, std::move(canonical), std::nullopt, 2.0};
}

AssessmentRecord answer(std::string response) {
  return {"s1", "q1", 0, std::move(response), std::nullopt};
}

std::vector<GradeResult> grades(std::size_t n) {
  std::vector<GradeResult> out;
  for (std::size_t i = 0; i < n; ++i) {
    out.push_back({"s" + std::to_string(i), "q1", 1.0, true, false});
  }
  return out;
}

StudentActivity activity(std::string id, std::vector<double> scores) {
  StudentActivity a{std::move(id), "c01", {}, {}};
  Tick t = 0;
  for (double s : scores) {
    a.scores.push_back({t++, s});
  }
  return a;
}

QuizTemplate addition(long a_lo, long a_hi, long b_lo, long b_hi) {
  return {"add", "arithmetic", {{"a", a_lo, a_hi}, {"b", b_lo, b_hi}}, "{a}+{b}",
          TemplateOp::sum, 0.0, 1.0};
}

} // namespace

TEST_CASE("text grading with normalization") {
  const auto exact = auto_grade(answer("B"), text_key("B"));
  CHECK(exact.matched);
  CHECK(exact.awarded == 2.0);
  CHECK(auto_grade(answer(" b "), text_key("B")).matched);
  CHECK(!auto_grade(answer("C"), text_key("B")).matched);
  CHECK(normalize_answer("  Hello   World ") == "hello world");
}

TEST_CASE("numeric grading within tolerance") {
  const AnswerKey key{"q1", AnswerKind::numeric, "3.14", 0.01, 1.0};
  CHECK(auto_grade(answer("3.141"), key).matched);
  CHECK(!auto_grade(answer("3.2"), key).matched);
  const auto garbled = auto_grade(answer("three"), key);
  CHECK(!garbled.matched);
  CHECK(garbled.parse_failed);
  CHECK_THROWS_AS(auto_grade({"s1", "q2", 0, "1", std::nullopt}, key), InvalidArgument);
}

TEST_CASE("match rate examples") {
  const auto g = grades(10);
  CHECK(grading_match_rate(g, g) == 1.0);
  auto ref = g;
  ref[4].awarded = 0.0;
  CHECK(grading_match_rate(g, ref) == doctest::Approx(0.9).epsilon(1e-12));
  CHECK_THROWS_AS(grading_match_rate({}, {}), InvalidArgument);
  ref.pop_back();
  CHECK_THROWS_AS(grading_match_rate(g, ref), DataError);
}

TEST_CASE("class report aggregates") {
  std::vector<StudentActivity> one{activity("s1", {0.5})};
  const auto r1 = generate_class_report(one, "c01", 0, 5, {});
  CHECK(r1.mean_score == 0.5);
  CHECK(r1.median_score == 0.5);

  std::vector<StudentActivity> three{activity("s1", {0.2}), activity("s2", {0.4}),
                                     activity("s3", {0.9})};
  const auto r3 = generate_class_report(three, "c01", 0, 5, {"s3"});
  CHECK(r3.mean_score == doctest::Approx(0.5));
  CHECK(r3.median_score == doctest::Approx(0.4));
  CHECK(r3.at_risk_count == 1);
  CHECK(r3.scored_students == 3);
  CHECK(report_from_json(report_to_json(r3)) == r3);
  CHECK(report_to_text(r3).find("c01") != std::string::npos);
}

TEST_CASE("class report preconditions") {
  std::vector<StudentActivity> one{activity("s1", {0.5})};
  CHECK_THROWS_AS(generate_class_report(one, "c01", 5, 4, {}), InvalidArgument);
  CHECK_THROWS_AS(generate_class_report(one, "c99", 0, 4, {}), DataError);
}

TEST_CASE("report window excludes outside scores") {
  std::vector<StudentActivity> one{activity("s1", {0.1, 0.3, 0.9})};
  const auto r = generate_class_report(one, "c01", 1, 1, {});
  CHECK(r.mean_score == 0.3);
  const auto none = generate_class_report(one, "c01", 10, 12, {});
  CHECK(none.scored_students == 0);
  CHECK(!none.students[0].mean_score);
}

TEST_CASE("quiz generation") {
  const auto fixed = generate_quiz(addition(3, 3, 4, 4), 1, 1);
  REQUIRE(fixed.size() == 1);
  CHECK(fixed[0].question == "3+4");
  CHECK(fixed[0].key.canonical == "7");

  const auto tpl = addition(0, 99, 0, 99);
  const auto a = generate_quiz(tpl, 12, 5);
  CHECK(a == generate_quiz(tpl, 12, 5));
  CHECK(a.size() == 5);
  std::set<ItemId> ids;
  for (const auto &q : a) {
    ids.insert(q.key.item_id);
  }
  CHECK(ids.size() == 5);
}

TEST_CASE("quiz generation errors") {
  CHECK_THROWS_AS(generate_quiz(addition(0, 9, 0, 9), 1, 0), InvalidArgument);
  CHECK_THROWS_AS(generate_quiz(addition(5, 4, 0, 9), 1, 1), InvalidArgument);
  QuizTemplate div{"div", "arithmetic", {{"a", 1, 9}, {"b", -1, 1}}, "{a}/{b}",
                   TemplateOp::quotient, 0.01, 1.0};
  CHECK_THROWS_AS(generate_quiz(div, 1, 1), InvalidArgument);
}

TEST_CASE("default templates grade their own keys") {
  for (const auto &tpl : default_templates()) {
    for (const auto &item : generate_quiz(tpl, 3, 20)) {
      const auto g = auto_grade({"s1", item.key.item_id, 0, item.key.canonical, std::nullopt},
                                item.key);
      CHECK(g.matched);
    }
  }
}

TEST_CASE("answer key csv round trip") {
  const std::vector<AnswerKey> keys = {{"q1", AnswerKind::numeric, "3.14", 0.01, 1.0},
                                       {"q2", AnswerKind::multiple_choice, "B", std::nullopt, 2.0},
                                       {"q3", AnswerKind::short_text, "a, b", std::nullopt, 1.0}};
  const auto path = std::filesystem::temp_directory_path() / "auss_keys.csv";
  write_answer_keys(path, keys);
  CHECK(read_answer_keys(path) == keys);
}
