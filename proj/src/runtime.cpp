#include "auss/runtime.hpp"

#include <algorithm>
#include <chrono>
#include <fstream>
#include <sstream>

#include "auss/stats.hpp"

namespace auss {

std::string_view to_string(Phase phase) {
  switch (phase) {
  case Phase::perceive:
    return "perceive";
  case Phase::reason:
    return "reason";
  case Phase::act:
    return "act";
  case Phase::evaluate:
    return "evaluate";
  }
  return "?";
}

Phase parse_phase(std::string_view text) {
  for (auto p : kPhases) {
    if (to_string(p) == text) {
      return p;
    }
  }
  throw DataError("unknown phase '" + std::string(text) + "'");
}

std::optional<double> AgentMemory::get(const std::string &key) const {
  auto it = values_.find(key);
  if (it == values_.end()) {
    return std::nullopt;
  }
  return it->second;
}

double AgentMemory::get_or(const std::string &key, double fallback) const {
  return get(key).value_or(fallback);
}

void AgentMemory::commit(const std::map<std::string, double> &updates) {
  for (const auto &[k, v] : updates) {
    values_[k] = v;
  }
  ++version_;
}

// ---------------------------------------------------------------------------
// Environment

Environment::Environment(const Cohort &cohort) {
  for (const auto &s : cohort.students) {
    student_order_.push_back(s.student_id);
    observed_.add_student(s.student_id);
    std::optional<Tick> last;
    if (cohort.ground_truth) {
      if (const auto *t = cohort.ground_truth->find(s.student_id); t && t->dropped_out) {
        last = t->dropout_tick;
      }
    }
    last_active_[s.student_id] = last;
    if (last) {
      dropped_at_[*last + 1].push_back(s.student_id);
    }
  }
  for (const auto &e : cohort.events) {
    buckets_[e.tick].events.push_back(e);
  }
  for (const auto &a : cohort.assessments) {
    AssessmentRecord ungraded = a;
    ungraded.score.reset();
    buckets_[a.tick].submissions.push_back(std::move(ungraded));
  }
}

bool Environment::active(const StudentId &id, Tick tick) const {
  auto it = last_active_.find(id);
  if (it == last_active_.end()) {
    return false;
  }
  return !it->second || tick <= *it->second;
}

TickInput Environment::emit(Tick tick) {
  if (last_emitted_ && tick <= *last_emitted_) {
    throw InvalidArgument("environment ticks must increase");
  }
  last_emitted_ = tick;
  if (auto it = buckets_.find(tick); it != buckets_.end()) {
    current_ = std::move(it->second);
    buckets_.erase(it);
  } else {
    current_ = Bucket{};
  }
  for (const auto &e : current_.events) {
    observed_.append(e);
  }
  active_.clear();
  for (const auto &id : student_order_) {
    if (active(id, tick)) {
      active_.push_back(id);
    }
  }
  return TickInput{tick, current_.events, current_.submissions, active_};
}

TickOutcome Environment::outcome(Tick tick) const {
  TickOutcome out{tick, {}};
  if (auto it = dropped_at_.find(tick); it != dropped_at_.end()) {
    out.dropped_out = it->second;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Transcript serialization

namespace {

Json phase_json(Tick tick, const PhaseRecord &p, bool timings) {
  Json j;
  j["type"] = "phase";
  j["tick"] = tick;
  j["agent"] = std::string(to_string(p.agent));
  j["phase"] = std::string(to_string(p.phase));
  j["processed"] = p.events_processed;
  j["published"] = p.events_published;
  j["reward"] = p.reward;
  if (timings) {
    j["wall_ms"] = p.wall_ms;
  }
  return j;
}

Json action_json(Tick tick, const LoggedAction &a) {
  Json j;
  j["type"] = "action";
  j["tick"] = tick;
  j["agent"] = std::string(to_string(a.agent));
  j["kind"] = a.action.kind;
  j["subject"] = a.action.subject;
  j["object"] = a.action.object;
  j["value"] = a.action.value;
  return j;
}

Json policy_json(Tick tick, const PolicyTickRecord &p) {
  Json updates = Json::array();
  for (const auto &u : p.updates) {
    updates.push_back(Json::array({u.student, u.state, std::string(to_string(u.action)), u.reward,
                                   u.next_state, u.terminal}));
  }
  Json decisions = Json::array();
  for (const auto &d : p.decisions) {
    decisions.push_back(Json::array({d.student, d.state, std::string(to_string(d.action))}));
  }
  Json j;
  j["type"] = "policy";
  j["tick"] = tick;
  j["epsilon"] = p.epsilon;
  j["updates"] = std::move(updates);
  j["decisions"] = std::move(decisions);
  return j;
}

} // namespace

std::vector<std::string> transcript_lines(const SimulationTranscript &transcript,
                                          bool include_timings) {
  std::vector<std::string> lines;
  for (const auto &t : transcript.ticks) {
    for (const auto &e : t.events) {
      Json j = event_to_json(e);
      Json line;
      line["type"] = "event";
      for (auto it = j.begin(); it != j.end(); ++it) {
        line[it.key()] = it.value();
      }
      lines.push_back(line.dump());
    }
    for (const auto &p : t.phases) {
      lines.push_back(phase_json(t.tick, p, include_timings).dump());
    }
    for (const auto &a : t.actions) {
      lines.push_back(action_json(t.tick, a).dump());
    }
    if (t.policy) {
      lines.push_back(policy_json(t.tick, *t.policy).dump());
    }
  }
  return lines;
}

std::string to_jsonl(const SimulationTranscript &transcript, bool include_timings) {
  std::string out;
  for (const auto &line : transcript_lines(transcript, include_timings)) {
    out += line;
    out += '\n';
  }
  return out;
}

namespace {

TickRecord &tick_slot(SimulationTranscript &transcript, Tick tick) {
  if (transcript.ticks.empty() || transcript.ticks.back().tick != tick) {
    if (!transcript.ticks.empty() && transcript.ticks.back().tick > tick) {
      throw DataError("transcript records out of tick order");
    }
    transcript.ticks.push_back(TickRecord{tick, {}, {}, {}, std::nullopt});
  }
  return transcript.ticks.back();
}

} // namespace

bool add_transcript_record(SimulationTranscript &transcript, const Json &record) {
  const std::string type = require(record, "type").get<std::string>();
  try {
    if (type == "event") {
      Event e = event_from_json(record);
      tick_slot(transcript, e.tick).events.push_back(std::move(e));
      return true;
    }
    const Tick tick = require(record, "tick").get<Tick>();
    if (type == "phase") {
      PhaseRecord p;
      p.agent = parse_agent_id(require(record, "agent").get<std::string>());
      p.phase = parse_phase(require(record, "phase").get<std::string>());
      p.events_processed = require(record, "processed").get<std::size_t>();
      p.events_published = require(record, "published").get<std::size_t>();
      p.reward = require(record, "reward").get<double>();
      if (auto it = record.find("wall_ms"); it != record.end()) {
        p.wall_ms = it->get<double>();
      }
      tick_slot(transcript, tick).phases.push_back(p);
      return true;
    }
    if (type == "action") {
      LoggedAction a;
      a.agent = parse_agent_id(require(record, "agent").get<std::string>());
      a.action.kind = require(record, "kind").get<std::string>();
      a.action.subject = require(record, "subject").get<std::string>();
      a.action.object = require(record, "object").get<std::string>();
      a.action.value = require(record, "value").get<double>();
      tick_slot(transcript, tick).actions.push_back(std::move(a));
      return true;
    }
    if (type == "policy") {
      PolicyTickRecord p;
      p.epsilon = require(record, "epsilon").get<double>();
      for (const auto &u : require(record, "updates")) {
        p.updates.push_back(PolicyUpdate{u.at(0).get<std::string>(), u.at(1).get<std::size_t>(),
                                         parse_intervention_action(u.at(2).get<std::string>()),
                                         u.at(3).get<double>(), u.at(4).get<std::size_t>(),
                                         u.at(5).get<bool>()});
      }
      for (const auto &d : require(record, "decisions")) {
        p.decisions.push_back(PolicyDecision{d.at(0).get<std::string>(),
                                             d.at(1).get<std::size_t>(),
                                             parse_intervention_action(d.at(2).get<std::string>())});
      }
      tick_slot(transcript, tick).policy = std::move(p);
      return true;
    }
  } catch (const Json::exception &e) {
    throw DataError("malformed " + type + " record: " + e.what());
  }
  return false;
}

SimulationTranscript parse_transcript_lines(std::span<const std::string> lines) {
  SimulationTranscript transcript;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    try {
      const Json record = Json::parse(lines[i]);
      if (!add_transcript_record(transcript, record)) {
        throw DataError("unknown record type");
      }
    } catch (const Json::parse_error &e) {
      throw DataError("line " + std::to_string(i + 1) + ": " + e.what());
    } catch (const DataError &e) {
      throw DataError("line " + std::to_string(i + 1) + ": " + e.what());
    }
  }
  return transcript;
}

std::map<AgentId, LatencyStats> measure_phase_latency(const SimulationTranscript &transcript) {
  std::map<AgentId, std::vector<double>> samples;
  for (const auto &t : transcript.ticks) {
    std::map<AgentId, double> response;
    for (const auto &p : t.phases) {
      if (p.phase != Phase::evaluate) {
        response[p.agent] += p.wall_ms;
      }
    }
    for (const auto &[agent, ms] : response) {
      samples[agent].push_back(ms);
    }
  }
  if (samples.empty()) {
    throw InvalidArgument("transcript has no phase timings");
  }
  std::map<AgentId, LatencyStats> out;
  for (auto &[agent, values] : samples) {
    out[agent] = LatencyStats{stats::mean(values), stats::percentile(values, 95.0), values.size()};
  }
  return out;
}

// ---------------------------------------------------------------------------
// Scheduler

void SchedulerConfig::validate() const {
  std::set<AgentId> seen(agent_order.begin(), agent_order.end());
  if (seen.size() != 3 || seen.contains(AgentId::environment)) {
    throw InvalidArgument("agent_order must list student, educator and institution agents once");
  }
  if (bus_capacity && *bus_capacity == 0) {
    throw InvalidArgument("bus_capacity must be positive");
  }
}

SchedulerConfig scheduler_config_from_json_text(const std::string &text) {
  Json j;
  try {
    j = Json::parse(text);
  } catch (const Json::parse_error &e) {
    throw DataError(std::string("scheduler config: ") + e.what());
  }
  static const std::set<std::string> known = {"max_ticks", "seed", "agent_order", "bus_capacity"};
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!known.contains(it.key())) {
      throw DataError("scheduler config: unknown key '" + it.key() + "'");
    }
  }
  SchedulerConfig c;
  try {
    if (j.contains("max_ticks")) {
      c.max_ticks = j["max_ticks"].get<Tick>();
    }
    if (j.contains("seed")) {
      c.rng_seed = j["seed"].get<std::uint64_t>();
    }
    if (j.contains("agent_order")) {
      const auto names = j["agent_order"].get<std::vector<std::string>>();
      if (names.size() != 3) {
        throw InvalidArgument("agent_order must have three entries");
      }
      for (std::size_t i = 0; i < 3; ++i) {
        c.agent_order[i] = parse_agent_id(names[i]);
      }
    }
    if (j.contains("bus_capacity") && !j["bus_capacity"].is_null()) {
      c.bus_capacity = j["bus_capacity"].get<std::size_t>();
    }
  } catch (const Json::exception &e) {
    throw DataError(std::string("scheduler config: ") + e.what());
  }
  c.validate();
  return c;
}

SchedulerConfig load_scheduler_config(const std::filesystem::path &path) {
  std::ifstream in(path);
  if (!in) {
    throw DataError("cannot open " + path.string());
  }
  std::stringstream buf;
  buf << in.rdbuf();
  return scheduler_config_from_json_text(buf.str());
}

AgentPhaseError::AgentPhaseError(AgentId agent, Tick tick, Phase phase, const std::string &cause)
    : Error(std::string(to_string(agent)) + " failed in " + std::string(to_string(phase)) +
            " at tick " + std::to_string(tick) + ": " + cause),
      agent_(agent), tick_(tick), phase_(phase) {}

namespace {

using Clock = std::chrono::steady_clock;

double elapsed_ms(Clock::time_point since) {
  return std::chrono::duration<double, std::milli>(Clock::now() - since).count();
}

template <typename F> auto guarded(AgentId agent, Tick tick, Phase phase, F &&body) {
  try {
    return body();
  } catch (const AgentPhaseError &) {
    throw;
  } catch (const std::exception &e) {
    throw AgentPhaseError(agent, tick, phase, e.what());
  }
}

} // namespace

SimulationTranscript run(const Cohort &cohort, std::span<Agent *const> agents,
                         const SchedulerConfig &config, TickPolicy *policy) {
  config.validate();
  std::map<AgentId, Agent *> by_id;
  for (Agent *a : agents) {
    if (a == nullptr) {
      throw InvalidArgument("null agent");
    }
    if (!by_id.emplace(a->id(), a).second) {
      throw InvalidArgument("two agents share id " + std::string(to_string(a->id())));
    }
  }
  for (AgentId id : config.agent_order) {
    if (!by_id.contains(id)) {
      throw InvalidArgument("no agent registered for " + std::string(to_string(id)));
    }
  }

  EventBus bus(config.bus_capacity);
  for (AgentId id : config.agent_order) {
    bus.register_subscriber(id);
    const auto kinds = by_id[id]->subscriptions();
    if (!kinds.empty()) {
      bus.subscribe(Subscription{id, kinds});
    }
  }

  SimulationTranscript transcript;
  TickRecord *current = nullptr;
  bus.set_observer([&current](const Event &e) { current->events.push_back(e); });

  std::map<AgentId, AgentMemory> memory;
  Environment env(cohort);

  for (Tick tick = 0; tick < config.max_ticks; ++tick) {
    transcript.ticks.push_back(TickRecord{tick, {}, {}, {}, std::nullopt});
    current = &transcript.ticks.back();

    const TickInput input = env.emit(tick);
    auto delivery = bus.deliver_tick(tick);
    const TickOutcome outcome = env.outcome(tick);

    for (AgentId id : config.agent_order) {
      Agent &agent = *by_id[id];
      AgentMemory &mem = memory[id];
      const auto &delivered = delivery[id];

      auto start = Clock::now();
      guarded(id, tick, Phase::perceive, [&] {
        agent.perceive(input, delivered);
        return 0;
      });
      current->phases.push_back(
          PhaseRecord{id, Phase::perceive, delivered.size(), 0, 0.0, elapsed_ms(start)});

      start = Clock::now();
      guarded(id, tick, Phase::reason, [&] {
        agent.reason(mem);
        return 0;
      });
      current->phases.push_back(PhaseRecord{id, Phase::reason, 0, 0, 0.0, elapsed_ms(start)});

      start = Clock::now();
      Publisher out(bus, id, tick);
      auto actions = guarded(id, tick, Phase::act, [&] { return agent.act(out); });
      current->phases.push_back(
          PhaseRecord{id, Phase::act, 0, out.published(), 0.0, elapsed_ms(start)});
      for (auto &a : actions) {
        current->actions.push_back(LoggedAction{id, std::move(a)});
      }

      start = Clock::now();
      Feedback fb = guarded(id, tick, Phase::evaluate, [&] { return agent.evaluate(outcome); });
      mem.commit(fb.memory_updates);
      current->phases.push_back(
          PhaseRecord{id, Phase::evaluate, 0, 0, fb.reward, elapsed_ms(start)});
    }

    if (policy != nullptr) {
      Publisher out(bus, AgentId::environment, tick);
      current->policy = policy->step(tick, env, out);
    }
  }
  bus.set_observer(nullptr);
  return transcript;
}

// ---------------------------------------------------------------------------
// Q-learning driver

QLearningDriver::QLearningDriver(InterventionPolicyConfig config, RiskLookup risk)
    : config_(std::move(config)), risk_(std::move(risk)), rng_(config_.policy.rng_seed),
      epsilon_(config_.policy.epsilon) {
  config_.policy.validate();
  if (config_.window_len == 0) {
    throw InvalidArgument("window_len must be >= 1");
  }
}

SystemState QLearningDriver::observe(const StudentId &student, Tick tick,
                                     const Environment &env) const {
  const LagFeatures lag = feature_window(env.observed(), student, tick, config_.window_len);
  StateFeatures f;
  f.mean_engagement = lag[lag_index(EngagementKind::login, kLagMean)];
  f.performance_slope = lag[lag_index(EngagementKind::submission, kLagSlope)];
  const double risk = risk_ ? risk_(student) : 0.0;
  return discretize_state(f, risk);
}

PolicyTickRecord QLearningDriver::step(Tick tick, const Environment &env, Publisher &out) {
  PolicyTickRecord record;
  record.epsilon = epsilon_;

  for (const auto &student : env.students()) {
    auto it = pending_.find(student);
    const bool is_active = env.active(student, tick);
    std::optional<SystemState> now;
    if (is_active) {
      now = observe(student, tick, env);
    }

    if (it != pending_.end()) {
      const Pending prev = it->second;
      InterventionOutcome outcome;
      outcome.engagement_before = prev.state.engagement;
      outcome.engagement_after = now ? now->engagement : prev.state.engagement;
      outcome.dropped_out = !is_active;
      TransitionSample sample{prev.state, prev.action, compute_reward(outcome, prev.action),
                              now.value_or(prev.state), !is_active};
      table_ = q_update(std::move(table_), sample, config_.policy);
      record.updates.push_back(PolicyUpdate{student, sample.state.index(), sample.action,
                                            sample.reward, sample.next_state.index(),
                                            sample.terminal});
      pending_.erase(it);
    }

    if (now) {
      const InterventionAction a = select_action(table_, *now, epsilon_, rng_);
      record.decisions.push_back(PolicyDecision{student, now->index(), a});
      if (a != InterventionAction::no_op) {
        out.publish(EventKind::intervention_request,
                    Payload{{"student_id", student}, {"action", std::string(to_string(a))}});
      }
      pending_[student] = Pending{*now, a};
    }
  }
  epsilon_ = std::max(config_.policy.epsilon_min, epsilon_ * config_.policy.epsilon_decay);
  return record;
}

} // namespace auss
