#include <doctest.h>

#include "auss/educator_agent.hpp"
#include "auss/institution_agent.hpp"
#include "auss/runtime.hpp"
#include "auss/student_agent.hpp"
#include "auss/synthetic.hpp"

using namespace auss;

namespace {

class IdleAgent : public Agent {
public:
  explicit IdleAgent(AgentId id) : id_(id) {}
  AgentId id() const override { return id_; }
  std::set<EventKind> subscriptions() const override { return {}; }
  void perceive(const TickInput &, std::span<const Event>) override {}
  void reason(const AgentMemory &) override {}
  std::vector<ActionRecord> act(Publisher &) override { return {}; }
  Feedback evaluate(const TickOutcome &) override { return {}; }

private:
  AgentId id_;
};

// Publishes one event per tick and records the ticks of everything it sees.
class EchoAgent : public Agent {
public:
  explicit EchoAgent(AgentId id) : id_(id) {}
  AgentId id() const override { return id_; }
  std::set<EventKind> subscriptions() const override { return {EventKind::report_ready}; }
  void perceive(const TickInput &input, std::span<const Event> delivered) override {
    now_ = input.tick;
    for (const auto &e : delivered) {
      seen.emplace_back(e.tick, now_);
    }
  }
  void reason(const AgentMemory &memory) override { versions.push_back(memory.version()); }
  std::vector<ActionRecord> act(Publisher &out) override {
    out.publish(EventKind::report_ready, {{"n", std::int64_t{now_}}});
    return {{"echo", "x", "y", 1.0}};
  }
  Feedback evaluate(const TickOutcome &) override { return {1.0, {{"ticks", now_ + 1.0}}}; }

  std::vector<std::pair<Tick, Tick>> seen; // (published, consumed)
  std::vector<std::uint64_t> versions;

private:
  AgentId id_;
  Tick now_ = 0;
};

class FailingAgent : public IdleAgent {
public:
  using IdleAgent::IdleAgent;
  void reason(const AgentMemory &) override { throw std::runtime_error("boom"); }
};

Cohort small_cohort(std::size_t students = 40, std::size_t ticks = 20) {
  GeneratorConfig cfg;
  cfg.n_students = students;
  cfg.n_ticks = ticks;
  cfg.seed = 5;
  return generate_cohort(cfg);
}

SchedulerConfig ticks(Tick n) {
  SchedulerConfig c;
  c.max_ticks = n;
  return c;
}

} // namespace

TEST_CASE("zero ticks gives an empty transcript") {
  IdleAgent a(AgentId::student_agent), b(AgentId::educator_agent), c(AgentId::institution_agent);
  std::array<Agent *, 3> agents{&a, &b, &c};
  CHECK(run(Cohort{}, agents, ticks(0)).empty());
}

TEST_CASE("one idle tick records 3 agents x 4 phases and no events") {
  IdleAgent a(AgentId::student_agent), b(AgentId::educator_agent), c(AgentId::institution_agent);
  std::array<Agent *, 3> agents{&a, &b, &c};
  const auto t = run(small_cohort(), agents, ticks(1));
  REQUIRE(t.ticks.size() == 1);
  CHECK(t.ticks[0].phases.size() == 12);
  CHECK(t.ticks[0].events.empty());
}

TEST_CASE("phase order, causality and memory commits") {
  EchoAgent a(AgentId::student_agent), b(AgentId::educator_agent), c(AgentId::institution_agent);
  std::array<Agent *, 3> agents{&a, &b, &c};
  const auto t = run(small_cohort(), agents, ticks(6));
  for (const auto &tick : t.ticks) {
    REQUIRE(tick.phases.size() == 12);
    for (std::size_t i = 0; i < 12; ++i) {
      CHECK(tick.phases[i].phase == kPhases[i % 4]);
    }
    CHECK(tick.events.size() == 3);
  }
  for (const auto *agent : {&a, &b, &c}) {
    CHECK(agent->seen.size() == 15); // ticks 1..5 each see the 3 events of the previous tick
    for (const auto &[published, consumed] : agent->seen) {
      CHECK(published < consumed);
    }
    CHECK(agent->versions == std::vector<std::uint64_t>{0, 1, 2, 3, 4, 5});
  }
}

TEST_CASE("agent failures carry agent, tick and phase") {
  IdleAgent a(AgentId::student_agent), c(AgentId::institution_agent);
  FailingAgent b(AgentId::educator_agent);
  std::array<Agent *, 3> agents{&a, &b, &c};
  try {
    run(small_cohort(), agents, ticks(3));
    FAIL("expected AgentPhaseError");
  } catch (const AgentPhaseError &e) {
    CHECK(e.agent() == AgentId::educator_agent);
    CHECK(e.tick() == 0);
    CHECK(e.phase() == Phase::reason);
  }
}

TEST_CASE("missing or duplicate agents are rejected") {
  IdleAgent a(AgentId::student_agent), b(AgentId::student_agent);
  std::array<Agent *, 2> dup{&a, &b};
  CHECK_THROWS_AS(run(Cohort{}, dup, ticks(1)), InvalidArgument);
  std::array<Agent *, 1> one{&a};
  CHECK_THROWS_AS(run(Cohort{}, one, ticks(1)), InvalidArgument);
}

TEST_CASE("seeded runs produce identical transcripts") {
  const auto cohort = small_cohort(60, 30);
  auto once = [&cohort] {
    StudentAgent sa(cohort, {});
    EducatorAgent ea(cohort);
    InstitutionAgent ia(cohort, {});
    InterventionPolicyConfig pc;
    pc.policy.rng_seed = 9;
    pc.policy.epsilon = 0.3;
    QLearningDriver driver(pc, [&ia](const StudentId &s) { return ia.latest_risk(s); });
    std::array<Agent *, 3> agents{&sa, &ea, &ia};
    SchedulerConfig cfg = ticks(30);
    return to_jsonl(run(cohort, agents, cfg, &driver), false);
  };
  const auto first = once();
  CHECK(first == once());
  CHECK(first.find("\"type\":\"policy\"") != std::string::npos);
}

TEST_CASE("transcript lines parse back") {
  EchoAgent a(AgentId::student_agent), b(AgentId::educator_agent), c(AgentId::institution_agent);
  std::array<Agent *, 3> agents{&a, &b, &c};
  const auto t = run(small_cohort(), agents, ticks(4));
  for (bool timings : {true, false}) {
    const auto lines = transcript_lines(t, timings);
    const auto back = parse_transcript_lines(lines);
    CHECK(transcript_lines(back, timings) == lines);
  }
  CHECK(transcript_lines(parse_transcript_lines(transcript_lines(t, true)), true) ==
        transcript_lines(t, true));
}

TEST_CASE("latency of constant 2 ms phases") {
  SimulationTranscript t;
  for (Tick tick = 0; tick < 3; ++tick) {
    TickRecord r;
    r.tick = tick;
    for (AgentId id : {AgentId::student_agent, AgentId::educator_agent, AgentId::institution_agent}) {
      for (Phase p : kPhases) {
        r.phases.push_back({id, p, 0, 0, 0.0, 2.0});
      }
    }
    t.ticks.push_back(r);
  }
  const auto lat = measure_phase_latency(t);
  REQUIRE(lat.size() == 3);
  for (const auto &[agent, s] : lat) {
    CHECK(s.mean_ms == doctest::Approx(6.0));
    CHECK(s.samples == 3);
  }
}

TEST_CASE("single tick latency p95 equals the sample") {
  SimulationTranscript t;
  TickRecord r;
  r.phases = {{AgentId::student_agent, Phase::perceive, 0, 0, 0.0, 1.5},
              {AgentId::student_agent, Phase::reason, 0, 0, 0.0, 0.25},
              {AgentId::student_agent, Phase::act, 0, 0, 0.0, 0.25},
              {AgentId::student_agent, Phase::evaluate, 0, 0, 0.0, 9.0}};
  t.ticks.push_back(r);
  const auto s = measure_phase_latency(t).at(AgentId::student_agent);
  CHECK(s.mean_ms == 2.0);
  CHECK(s.p95_ms == 2.0);
  CHECK_THROWS_AS(measure_phase_latency(SimulationTranscript{}), InvalidArgument);
}

TEST_CASE("environment releases ticks and reports dropouts") {
  Cohort c;
  c.students = {{"a", "c01", {}, 0}, {"b", "c01", {}, 0}};
  c.events = {{"a", 0, EngagementKind::login, std::nullopt, 0.5},
              {"b", 0, EngagementKind::login, std::nullopt, 0.5},
              {"a", 1, EngagementKind::login, std::nullopt, 0.5},
              {"a", 2, EngagementKind::login, std::nullopt, 0.5}};
  GroundTruth g;
  g.students = {{"a", 0.5, {}, false, std::nullopt}, {"b", 0.5, {}, true, Tick{0}}};
  c.ground_truth = g;
  Environment env(c);
  const auto t0 = env.emit(0);
  CHECK(t0.events.size() == 2);
  CHECK(env.outcome(0).dropped_out.empty());
  env.emit(1);
  const auto out1 = env.outcome(1);
  REQUIRE(out1.dropped_out.size() == 1);
  CHECK(out1.dropped_out[0] == "b");
  CHECK(!env.active("b", 1));
  CHECK(env.active("a", 1));
  CHECK_THROWS(env.emit(1));
}

TEST_CASE("scheduler config parsing") {
  const auto c = scheduler_config_from_json_text(
      R"({"max_ticks": 12, "seed": 3, "agent_order": ["institution_agent", "student_agent", "educator_agent"], "bus_capacity": 100})");
  CHECK(c.max_ticks == 12);
  CHECK(c.rng_seed == 3);
  CHECK(c.agent_order[0] == AgentId::institution_agent);
  CHECK(c.bus_capacity == 100);
  CHECK_THROWS(scheduler_config_from_json_text(R"({"max_ticks": 1, "speed": 2})"));
  CHECK_THROWS(scheduler_config_from_json_text(
      R"({"agent_order": ["student_agent", "student_agent", "educator_agent"]})"));
  CHECK_THROWS(scheduler_config_from_json_text("{"));
}
