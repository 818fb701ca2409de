// Acceptance checks. Prints one PASS/FAIL line per criterion and exits
// nonzero when any criterion fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>

#include "auss/csv.hpp"
#include "auss/experiment.hpp"
#include "oracles.hpp"

using namespace auss;

namespace {

// Tolerances and budgets.
constexpr double kQTolerance = 1e-3;
constexpr std::size_t kMaxEpisodes = 10000;
constexpr double kMdpSeconds = 5.0;
constexpr double kUpdateTolerance = 1e-12;
constexpr int kCfMatrices = 200;
constexpr double kCfSeconds = 2.0;
constexpr int kBusSequences = 1000;
constexpr int kGradingItems = 500;
constexpr double kRiskF1Floor = 0.80;
constexpr double kRiskSeconds = 30.0;
constexpr double kReferenceSeconds = 60.0;
constexpr int kLabelVectors = 1000;
constexpr double kShareTolerance = 1e-9;

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

int failures = 0;

void report(int id, const char *name, const std::function<Outcome()> &check) {
  Outcome o;
  try {
    o = check();
  } catch (const std::exception &e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  std::printf("%s %d %s: %s\n", o.pass ? "PASS" : "FAIL", id, name, o.detail.c_str());
  std::fflush(stdout);
  failures += o.pass ? 0 : 1;
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

Outcome q_learning_chain() {
  const auto mdp = oracle::chain_mdp();
  PolicyConfig cfg;
  cfg.alpha = 0.5;
  cfg.gamma = 0.9;
  cfg.epsilon = 0.5;
  cfg.rng_seed = 42;
  const std::size_t episodes = 2000;
  const auto start = Clock::now();
  const auto learned = train_on_mdp(mdp, cfg, episodes);
  const double elapsed = seconds_since(start);
  const auto q = oracle::value_iteration(mdp, cfg.gamma);
  double worst = 0.0;
  for (std::size_t s = 0; s < mdp.state_count; ++s) {
    for (std::size_t a = 0; a < mdp.action_count; ++a) {
      worst = std::max(worst, std::abs(learned.table.at(s, a) - q[s][a]));
    }
  }
  const bool same_policy = greedy_policy(learned.table) == oracle::argmax_policy(q);
  return {same_policy && worst <= kQTolerance && episodes <= kMaxEpisodes && elapsed < kMdpSeconds,
          "policy " + std::string(same_policy ? "matches" : "differs") + ", max |dQ| " +
              fmt(worst) + ", " + std::to_string(episodes) + " episodes, " + fmt(elapsed) + " s"};
}

Outcome q_update_examples() {
  const SystemState s{EngagementLevel::low, PerformanceTrend::flat, RiskTier::ok};
  const SystemState next{EngagementLevel::high, PerformanceTrend::flat, RiskTier::ok};
  const auto a = InterventionAction::send_alert;

  const QTable zero;
  const bool fixed_point = q_update(zero, {s, a, 0.0, next, false}, {}) == zero;

  QTable q2;
  q2.at(s, a) = 2.0;
  PolicyConfig overwrite;
  overwrite.alpha = 1.0;
  overwrite.gamma = 0.0;
  const double v2 = q_update(q2, {s, a, 5.0, next, false}, overwrite).at(s, a);

  QTable q3;
  q3.at(s, a) = 0.5;
  q3.at(next, InterventionAction::no_op) = 2.0;
  PolicyConfig hand;
  hand.alpha = 0.1;
  hand.gamma = 0.9;
  const double v3 = q_update(q3, {s, a, 1.0, next, false}, hand).at(s, a);

  const bool ok = fixed_point && std::abs(v2 - 5.0) <= kUpdateTolerance &&
                  std::abs(v3 - 0.73) <= kUpdateTolerance;
  return {ok, "zero fixed point " + std::string(fixed_point ? "holds" : "broken") +
                  ", overwrite " + fmt(v2) + ", hand case " + fmt(v3)};
}

Outcome cf_oracle() {
  Rng rng(2024);
  std::size_t mismatches = 0;
  const auto start = Clock::now();
  for (int trial = 0; trial < kCfMatrices; ++trial) {
    const std::size_t rows = 1 + rng.uniform_index(10), cols = 1 + rng.uniform_index(10);
    std::vector<StudentId> r;
    std::vector<ResourceId> c;
    for (std::size_t i = 0; i < rows; ++i) {
      r.push_back("s" + std::to_string(i));
    }
    for (std::size_t j = 0; j < cols; ++j) {
      c.push_back("r" + std::to_string(j));
    }
    InteractionMatrix m(r, c);
    std::vector<std::vector<std::optional<double>>> cells(rows,
                                                          std::vector<std::optional<double>>(cols));
    const double density = rng.uniform(0.1, 0.9);
    for (std::size_t i = 0; i < rows; ++i) {
      for (std::size_t j = 0; j < cols; ++j) {
        if (rng.bernoulli(density)) {
          // Coarse grid so ties are common.
          const double v = static_cast<double>(rng.uniform_int(1, 5)) / 5.0;
          m.set(i, j, v);
          cells[i][j] = v;
        }
      }
    }
    for (std::size_t self = 0; self < rows; ++self) {
      const std::size_t k = 1 + rng.uniform_index(cols), hood = 1 + rng.uniform_index(rows);
      const auto got = recommend_top_k(m, r[self], k, hood).ranked;
      const auto want = oracle::brute_force_recommend(r, c, cells, self, k, hood);
      bool same = got.size() == want.size();
      for (std::size_t i = 0; same && i < got.size(); ++i) {
        same = got[i].resource_id == want[i].id && std::abs(got[i].score - want[i].score) <= 1e-12;
      }
      mismatches += same ? 0 : 1;
    }
  }
  const double elapsed = seconds_since(start);
  return {mismatches == 0 && elapsed < kCfSeconds,
          std::to_string(kCfMatrices) + " matrices, " + std::to_string(mismatches) +
              " mismatching queries, " + fmt(elapsed) + " s"};
}

// One randomized bus session. Returns the delivery transcript and counts
// violations against a model of who should receive what.
std::string bus_session(std::uint64_t seed, std::size_t &violations) {
  Rng rng(seed);
  EventBus bus;
  const std::array<AgentId, 3> agents = {AgentId::student_agent, AgentId::educator_agent,
                                         AgentId::institution_agent};
  for (auto a : agents) {
    bus.register_subscriber(a);
  }
  std::map<AgentId, std::set<EventKind>> subs;
  std::vector<Event> pending;
  std::string transcript;
  const Tick ticks = static_cast<Tick>(2 + rng.uniform_index(8));
  for (Tick tick = 0; tick <= ticks; ++tick) {
    const auto delivery = bus.deliver_tick(tick);
    transcript += delivery_transcript(tick, delivery);
    for (auto a : agents) {
      std::vector<std::uint64_t> expected;
      for (const auto &e : pending) {
        if (subs[a].contains(e.kind)) {
          expected.push_back(e.event_id);
        }
      }
      std::vector<std::uint64_t> got;
      for (const auto &e : delivery.at(a)) {
        got.push_back(e.event_id);
      }
      violations += got == expected ? 0 : 1;
    }
    pending.clear();
    if (tick == ticks) {
      break;
    }
    const std::size_t actions = rng.uniform_index(12);
    for (std::size_t i = 0; i < actions; ++i) {
      if (rng.bernoulli(0.3)) {
        const AgentId a = agents[rng.uniform_index(agents.size())];
        std::set<EventKind> kinds;
        const std::size_t n = 1 + rng.uniform_index(3);
        for (std::size_t j = 0; j < n; ++j) {
          kinds.insert(kEventKinds[rng.uniform_index(kEventKinds.size())]);
        }
        bus.subscribe({a, kinds});
        subs[a].insert(kinds.begin(), kinds.end());
      } else {
        Event e;
        e.tick = tick;
        e.source = agents[rng.uniform_index(agents.size())];
        e.kind = kEventKinds[rng.uniform_index(kEventKinds.size())];
        e.payload["n"] = static_cast<std::int64_t>(i);
        e.event_id = bus.publish(e);
        pending.push_back(e);
      }
    }
  }
  violations += bus.pending() == 0 ? 0 : 1;
  return transcript;
}

Outcome event_bus() {
  std::size_t violations = 0;
  std::size_t replay_diffs = 0;
  for (int i = 0; i < kBusSequences; ++i) {
    std::size_t ignored = 0;
    const auto first = bus_session(static_cast<std::uint64_t>(i), violations);
    const auto second = bus_session(static_cast<std::uint64_t>(i), ignored);
    replay_diffs += first == second ? 0 : 1;
  }
  // Full simulations replayed per seed, timing fields excluded.
  for (std::uint64_t seed : {1, 2, 3}) {
    ExperimentSpec spec;
    spec.generator.n_students = 60;
    spec.generator.n_ticks = 20;
    spec.scheduler.max_ticks = 20;
    spec.apply_seed(seed);
    const auto a = to_jsonl(run_experiment(spec).transcript.simulation, false);
    const auto b = to_jsonl(run_experiment(spec).transcript.simulation, false);
    replay_diffs += a == b ? 0 : 1;
  }
  return {violations == 0 && replay_diffs == 0,
          std::to_string(kBusSequences) + " sequences, " + std::to_string(violations) +
              " delivery violations, " + std::to_string(replay_diffs) + " transcript differences"};
}

Outcome grading() {
  std::vector<GradeResult> canonical, perturbed, reference, numeric_reference;
  const auto &templates = default_templates();
  int produced = 0;
  for (std::uint64_t seed = 0; produced < kGradingItems; ++seed) {
    const auto &tpl = templates[seed % templates.size()];
    for (const auto &item : generate_quiz(tpl, seed, 10)) {
      if (produced == kGradingItems) {
        break;
      }
      ++produced;
      const auto &key = item.key;
      const StudentId student = "s" + std::to_string(produced);
      canonical.push_back(auto_grade({student, key.item_id, 0, key.canonical, std::nullopt}, key));
      reference.push_back({student, key.item_id, key.points, true, false});
      if (key.kind == AnswerKind::numeric) {
        const double off = csv::parse_double(key.canonical) + key.tolerance.value_or(0.0) + 1.0;
        perturbed.push_back(
            auto_grade({student, key.item_id, 0, csv::format_double(off), std::nullopt}, key));
        numeric_reference.push_back(reference.back());
      }
    }
  }
  const double self_rate = grading_match_rate(canonical, reference);
  const double perturbed_rate = grading_match_rate(perturbed, numeric_reference);
  return {self_rate == 1.0 && perturbed_rate == 0.0 && !perturbed.empty(),
          std::to_string(canonical.size()) + " items, canonical match rate " + fmt(self_rate) +
              ", " + std::to_string(perturbed.size()) + " perturbed numeric items match rate " +
              fmt(perturbed_rate)};
}

Outcome risk_detection(std::vector<MetricsReport> &runs) {
  ExperimentSpec spec; // default cohort: 1000 students, 50 ticks
  spec.metrics = {"risk"};
  const auto start = Clock::now();
  const auto report = run_experiment(spec).report;
  const double elapsed = seconds_since(start);
  runs.push_back(report);
  if (!report.risk) {
    return {false, "no risk metrics produced"};
  }
  return {report.risk->f1 >= kRiskF1Floor && elapsed < kRiskSeconds,
          "held-out F1 " + fmt(report.risk->f1) + " (precision " + fmt(report.risk->precision) +
              ", recall " + fmt(report.risk->recall) + "), " + fmt(elapsed) + " s"};
}

Outcome reference_determinism(std::vector<MetricsReport> &runs) {
  std::ifstream in(AUSS_BASELINE_PATH);
  if (!in) {
    return {false, std::string("baseline file missing: ") + AUSS_BASELINE_PATH};
  }
  const Json baseline = Json::parse(in);
  const auto spec = load_experiment_spec(std::filesystem::path(AUSS_BASELINE_PATH)
                                             .parent_path()
                                             .parent_path() /
                                         "configs" / "reference.json");
  const auto start = Clock::now();
  const auto report = run_experiment(spec).report;
  const double elapsed = seconds_since(start);
  runs.push_back(report);
  const Json got = metrics_to_json(report, false);
  std::string first_diff;
  if (got != baseline) {
    const auto patch = Json::diff(baseline, got);
    first_diff = patch.empty() ? "?" : patch[0].value("path", "?");
  }
  return {first_diff.empty() && elapsed < kReferenceSeconds,
          (first_diff.empty() ? std::string("report equals baseline")
                              : "first differing field " + first_diff) +
              ", " + fmt(elapsed) + " s"};
}

Outcome metric_oracles() {
  Rng rng(77);
  std::size_t mismatches = 0;
  for (int trial = 0; trial < kLabelVectors; ++trial) {
    const std::size_t n = 1 + rng.uniform_index(60);
    const double base = rng.uniform();
    std::vector<bool> p(n), t(n);
    std::map<StudentId, bool> pm, tm;
    std::vector<GradeResult> auto_grades, ref_grades;
    std::size_t equal = 0;
    for (std::size_t i = 0; i < n; ++i) {
      p[i] = rng.bernoulli(base);
      t[i] = rng.bernoulli(base);
      const auto id = "s" + std::to_string(i);
      pm[id] = p[i];
      tm[id] = t[i];
      const double x = p[i] ? 1.0 : 0.0, y = t[i] ? 1.0 : 0.0;
      auto_grades.push_back({id, "q", x, p[i], false});
      ref_grades.push_back({id, "q", y, t[i], false});
      equal += x == y;
    }
    const auto got = f1_score(pm, tm);
    const auto c = oracle::confusion(p, t);
    const auto want = oracle::prf(c);
    const bool f1_ok = got.true_positives == c.tp && got.false_positives == c.fp &&
                       got.false_negatives == c.fn && got.true_negatives == c.tn &&
                       got.precision == want.precision && got.recall == want.recall &&
                       got.f1 == want.f1;
    const bool rate_ok = grading_match_rate(auto_grades, ref_grades) ==
                         static_cast<double>(equal) / static_cast<double>(n);
    mismatches += f1_ok && rate_ok ? 0 : 1;
  }
  return {mismatches == 0,
          std::to_string(kLabelVectors) + " label vectors, " + std::to_string(mismatches) +
              " disagreements"};
}

Outcome latency_and_load(std::vector<MetricsReport> &runs) {
  for (std::uint64_t seed : {5, 6}) {
    ExperimentSpec spec;
    spec.generator.n_students = 50;
    spec.generator.n_ticks = 15;
    spec.scheduler.max_ticks = 15;
    spec.apply_seed(seed);
    runs.push_back(run_experiment(spec).report);
  }
  double worst = 0.0;
  std::size_t incomplete = 0;
  for (const auto &r : runs) {
    double sum = 0.0;
    for (const auto &[agent, share] : r.load.shares) {
      sum += share;
      incomplete += share < 0.0 ? 1 : 0;
    }
    worst = std::max(worst, std::abs(sum - 1.0));
    incomplete += r.latency.size() == 3 && r.load.shares.size() == 3 ? 0 : 1;
    for (const auto &[agent, l] : r.latency) {
      incomplete += l.samples > 0 && std::isfinite(l.mean_ms) && std::isfinite(l.p95_ms) ? 0 : 1;
    }
  }
  return {incomplete == 0 && worst <= kShareTolerance && !runs.empty(),
          std::to_string(runs.size()) + " runs, max |sum(shares) - 1| " + fmt(worst) + ", " +
              std::to_string(incomplete) + " missing or invalid entries"};
}

} // namespace

int main() {
  std::vector<MetricsReport> runs;
  report(1, "q-learning matches value iteration on the chain MDP", q_learning_chain);
  report(2, "q_update worked examples", q_update_examples);
  report(3, "collaborative filtering equals the brute-force oracle", cf_oracle);
  report(4, "event bus exactly-once, ordering and replay", event_bus);
  report(5, "grading self-consistency", grading);
  report(6, "risk detection on the default cohort", [&runs] { return risk_detection(runs); });
  report(7, "reference run equals the committed baseline",
         [&runs] { return reference_determinism(runs); });
  report(8, "f1 and match rate equal confusion-matrix recomputation", metric_oracles);
  report(9, "latency and load reported with normalized shares",
         [&runs] { return latency_and_load(runs); });
  return failures == 0 ? 0 : 1;
}
