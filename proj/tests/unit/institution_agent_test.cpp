#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "auss/institution_agent.hpp"
#include "auss/random.hpp"

using namespace auss;

namespace {

InstitutionalFeatures features(const std::string &id, double engagement, double absence) {
  InstitutionalFeatures f;
  f.student_id = id;
  f.mean_engagement = engagement;
  f.absence_rate = absence;
  f.credits_attempted = 12;
  return f;
}

SimulationTranscript load_transcript(std::size_t a, std::size_t b, std::size_t c) {
  SimulationTranscript t;
  TickRecord r;
  r.phases = {{AgentId::student_agent, Phase::perceive, a, 0, 0, 0},
              {AgentId::educator_agent, Phase::perceive, b, 0, 0, 0},
              {AgentId::institution_agent, Phase::perceive, c, 0, 0, 0}};
  t.ticks.push_back(r);
  return t;
}

std::map<StudentId, bool> flags(std::initializer_list<bool> values) {
  std::map<StudentId, bool> out;
  int i = 0;
  for (bool v : values) {
    out["s" + std::to_string(i++)] = v;
  }
  return out;
}

} // namespace

TEST_CASE("features from a history") {
  StudentHistory h;
  h.scores = {{0, 0.8}, {1, 0.6}, {2, 0.4}};
  h.engagement = {{0, 0.5}, {1, 0.5}, {2, 0.5}};
  h.attended = 3;
  const auto f = features_from_history("s1", h);
  CHECK(f.absence_rate == 0.0);
  CHECK(f.score_slope == doctest::Approx(-0.2).epsilon(1e-12));
  CHECK(f.mean_score == doctest::Approx(0.6));
  CHECK(f.engagement_slope == 0.0);

  StudentHistory single;
  single.scores = {{4, 0.7}};
  single.engagement = {{4, 0.3}};
  single.absences = 1;
  single.attended = 1;
  const auto g = features_from_history("s2", single);
  CHECK(g.score_slope == 0.0);
  CHECK(g.engagement_slope == 0.0);
  CHECK(g.absence_rate == 0.5);
}

TEST_CASE("aggregate_features keeps cohort order and the tick cutoff") {
  Cohort c;
  c.students = {{"b", "c01", {{"credits_attempted", 15}}, 0}, {"a", "c01", {}, 0}};
  c.events = {{"b", 0, EngagementKind::login, std::nullopt, 0.4},
              {"a", 0, EngagementKind::absence, std::nullopt, 1.0},
              {"b", 3, EngagementKind::login, std::nullopt, 1.0}};
  const auto f = aggregate_features(c, 1);
  REQUIRE(f.size() == 2);
  CHECK(f[0].student_id == "b");
  CHECK(f[0].mean_engagement == doctest::Approx(0.4));
  CHECK(f[0].credits_attempted == 15);
  CHECK(f[1].absence_rate == 1.0);
}

TEST_CASE("risk model fits separable labels and is deterministic") {
  std::vector<InstitutionalFeatures> x;
  std::vector<int> y;
  Rng rng(8);
  for (int i = 0; i < 100; ++i) {
    const double e = rng.uniform();
    x.push_back(features("s" + std::to_string(i), e, rng.uniform()));
    y.push_back(e < 0.4 ? 1 : 0);
  }
  const auto m = fit_risk_model(x, y, 5);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    correct += (m.predict_proba(x[i].values()) >= 0.5) == (y[i] == 1);
  }
  CHECK(static_cast<double>(correct) / 100.0 >= 0.95);
  CHECK(fit_risk_model(x, y, 5) == m);

  std::vector<InstitutionalFeatures> few(x.begin(), x.begin() + 9);
  std::vector<int> few_y(y.begin(), y.begin() + 9);
  CHECK_THROWS_AS(fit_risk_model(few, few_y, 5), DataError);
  std::vector<int> ones(100, 1);
  CHECK_THROWS_AS(fit_risk_model(x, ones, 5), DataError);
  CHECK_THROWS_AS(fit_risk_model(x, few_y, 5), InvalidArgument);
}

TEST_CASE("assess_risk scores and thresholds") {
  const std::vector<InstitutionalFeatures> f = {features("s1", 0.3, 0.1)};
  const auto zero = ml::LogisticModel::from_weights(std::vector<double>(6, 0.0), 0.0);
  CHECK(assess_risk(zero, f).assessments[0].risk_score == 0.5);

  std::vector<double> w(6, 0.0);
  w[0] = std::log(9.0) / 0.3;
  const auto nine = ml::LogisticModel::from_weights(w, 0.0);
  CHECK(assess_risk(nine, f).assessments[0].risk_score == doctest::Approx(0.9).epsilon(1e-12));

  const auto low = ml::LogisticModel::from_weights(std::vector<double>(6, 0.0),
                                                   std::log(0.49 / 0.51));
  const auto r = assess_risk(low, f, 0.5);
  CHECK(r.assessments[0].risk_score == doctest::Approx(0.49));
  CHECK(!r.assessments[0].flagged);
  CHECK(r.flags.empty());
  CHECK_THROWS_AS(assess_risk(zero, f, 1.0), InvalidArgument);
}

TEST_CASE("flags are emitted once per student") {
  const std::vector<InstitutionalFeatures> f = {features("s1", 0.3, 0.1)};
  const auto high = ml::LogisticModel::from_weights(std::vector<double>(6, 0.0), 3.0);
  std::set<StudentId> ledger;
  const auto first = assess_risk(high, f, 0.5, ledger, 4);
  REQUIRE(first.flags.size() == 1);
  CHECK(first.flags[0].kind == EventKind::at_risk_flag);
  CHECK(first.flags[0].tick == 4);
  CHECK(assess_risk(high, f, 0.5, ledger, 9).flags.empty());
}

TEST_CASE("f1 examples") {
  const auto perfect = f1_score(flags({true, false, true}), flags({true, false, true}));
  CHECK(perfect.f1 == 1.0);

  std::map<StudentId, bool> pred, truth;
  for (int i = 0; i < 20; ++i) {
    const auto id = "s" + std::to_string(i);
    pred[id] = i < 10;              // 10 predicted positive
    truth[id] = i < 8 || (i >= 10 && i < 12); // 8 hits, 2 misses
  }
  const auto r = f1_score(pred, truth);
  CHECK(r.true_positives == 8);
  CHECK(r.false_positives == 2);
  CHECK(r.false_negatives == 2);
  CHECK(r.precision == 0.8);
  CHECK(r.recall == 0.8);
  CHECK(r.f1 == 0.8);

  const auto none = f1_score(flags({false, false}), flags({true, false}));
  CHECK(none.f1 == 0.0);
  CHECK(none.recall == 0.0);
  CHECK(f1_score(flags({false}), flags({false})).f1 == 1.0);
  CHECK_THROWS_AS(f1_score(flags({true}), flags({true, false})), DataError);
}

TEST_CASE("load shares") {
  const auto one = load_report(load_transcript(10, 0, 0));
  CHECK(one.shares.at(AgentId::student_agent) == 1.0);
  CHECK(one.shares.at(AgentId::educator_agent) == 0.0);

  const auto r = load_report(load_transcript(26, 26, 48));
  CHECK(r.total == 100);
  CHECK(r.shares.at(AgentId::student_agent) == doctest::Approx(0.26));
  CHECK(r.shares.at(AgentId::educator_agent) == doctest::Approx(0.26));
  CHECK(r.shares.at(AgentId::institution_agent) == doctest::Approx(0.48));
  double sum = 0.0;
  for (const auto &[a, s] : r.shares) {
    sum += s;
  }
  CHECK(std::abs(sum - 1.0) <= 1e-9);
  CHECK_THROWS_AS(load_report(SimulationTranscript{}), InvalidArgument);
}

TEST_CASE("risk csv round trip") {
  const std::vector<RiskAssessment> rows = {{"s1", 0.125, false}, {"s2", 0.9, true}};
  const auto path = std::filesystem::temp_directory_path() / "auss_risk.csv";
  write_risk_csv(path, rows);
  CHECK(read_risk_csv(path) == rows);
}
