#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "auss/domain.hpp"
#include "auss/event_bus.hpp"
#include "auss/json_io.hpp"
#include "auss/policy.hpp"
#include "auss/random.hpp"

namespace auss {

enum class Phase { perceive, reason, act, evaluate };

inline constexpr std::array kPhases = {Phase::perceive, Phase::reason, Phase::act,
                                       Phase::evaluate};

std::string_view to_string(Phase phase);
Phase parse_phase(std::string_view text);

/// Model state an agent carries between ticks. The version counts evaluate
/// commits: the scheduler commits each agent's feedback exactly once per tick.
class AgentMemory {
public:
  std::optional<double> get(const std::string &key) const;
  double get_or(const std::string &key, double fallback) const;
  std::uint64_t version() const { return version_; }
  const std::map<std::string, double> &values() const { return values_; }

  /// Applies all updates and bumps the version once.
  void commit(const std::map<std::string, double> &updates);

private:
  std::map<std::string, double> values_;
  std::uint64_t version_ = 0;
};

/// Raw data the environment releases for one tick.
struct TickInput {
  Tick tick = 0;
  std::span<const EngagementEvent> events;
  std::span<const AssessmentRecord> submissions; // score stripped (ungraded)
  std::span<const StudentId> active_students;
};

struct TickOutcome {
  Tick tick = 0;
  /// Students whose last active tick was tick - 1.
  std::span<const StudentId> dropped_out;
};

struct Feedback {
  double reward = 0.0;
  std::map<std::string, double> memory_updates;
};

/// Something an agent did this tick, recorded verbatim in the transcript.
struct ActionRecord {
  std::string kind;
  std::string subject;
  std::string object;
  double value = 0.0;

  bool operator==(const ActionRecord &) const = default;
};

/**
 * Four-phase agent contract. The scheduler calls perceive, reason, act and
 * evaluate once per tick in that order. Only act receives a Publisher, so only
 * act can emit events.
 */
class Agent {
public:
  virtual ~Agent() = default;

  virtual AgentId id() const = 0;
  virtual std::set<EventKind> subscriptions() const = 0;

  virtual void perceive(const TickInput &input, std::span<const Event> delivered) = 0;
  virtual void reason(const AgentMemory &memory) = 0;
  virtual std::vector<ActionRecord> act(Publisher &out) = 0;
  virtual Feedback evaluate(const TickOutcome &outcome) = 0;
};

/// Agent helper that threads typed percepts and decisions between phases.
template <typename Percepts, typename Decisions> class PhasedAgent : public Agent {
public:
  void perceive(const TickInput &input, std::span<const Event> delivered) final {
    percepts_ = observe(input, delivered);
  }
  void reason(const AgentMemory &memory) final { decisions_ = decide(percepts_, memory); }
  std::vector<ActionRecord> act(Publisher &out) final { return execute(decisions_, out); }

protected:
  virtual Percepts observe(const TickInput &input, std::span<const Event> delivered) = 0;
  virtual Decisions decide(const Percepts &percepts, const AgentMemory &memory) = 0;
  virtual std::vector<ActionRecord> execute(const Decisions &decisions, Publisher &out) = 0;

  const Percepts &percepts() const { return percepts_; }
  const Decisions &decisions() const { return decisions_; }

private:
  Percepts percepts_{};
  Decisions decisions_{};
};

/// Replays a cohort tick by tick and keeps the observed history.
class Environment {
public:
  explicit Environment(const Cohort &cohort);

  /// Releases tick t. Ticks must be emitted in increasing order.
  TickInput emit(Tick tick);
  TickOutcome outcome(Tick tick) const;

  bool active(const StudentId &id, Tick tick) const;
  const std::vector<StudentId> &students() const { return student_order_; }
  /// Engagement streams released so far.
  const EventIndex &observed() const { return observed_; }

private:
  struct Bucket {
    std::vector<EngagementEvent> events;
    std::vector<AssessmentRecord> submissions;
  };

  std::vector<StudentId> student_order_;
  std::unordered_map<StudentId, std::optional<Tick>> last_active_;
  std::map<Tick, Bucket> buckets_;
  Bucket current_;
  std::vector<StudentId> active_;
  std::map<Tick, std::vector<StudentId>> dropped_at_;
  EventIndex observed_;
  std::optional<Tick> last_emitted_;
};

// ---------------------------------------------------------------------------
// Transcript

struct PhaseRecord {
  AgentId agent = AgentId::student_agent;
  Phase phase = Phase::perceive;
  std::size_t events_processed = 0; // deliveries consumed (perceive only)
  std::size_t events_published = 0; // act only
  double reward = 0.0;              // evaluate only
  double wall_ms = 0.0;

  bool operator==(const PhaseRecord &) const = default;
};

struct LoggedAction {
  AgentId agent = AgentId::student_agent;
  ActionRecord action;

  bool operator==(const LoggedAction &) const = default;
};

struct PolicyDecision {
  StudentId student;
  std::size_t state = 0;
  InterventionAction action = InterventionAction::no_op;

  bool operator==(const PolicyDecision &) const = default;
};

struct PolicyUpdate {
  StudentId student;
  std::size_t state = 0;
  InterventionAction action = InterventionAction::no_op;
  double reward = 0.0;
  std::size_t next_state = 0;
  bool terminal = false;

  bool operator==(const PolicyUpdate &) const = default;
};

struct PolicyTickRecord {
  std::vector<PolicyUpdate> updates;
  std::vector<PolicyDecision> decisions;
  double epsilon = 0.0;

  bool operator==(const PolicyTickRecord &) const = default;
};

struct TickRecord {
  Tick tick = 0;
  std::vector<Event> events; // published during this tick
  std::vector<PhaseRecord> phases;
  std::vector<LoggedAction> actions;
  std::optional<PolicyTickRecord> policy;

  bool operator==(const TickRecord &) const = default;
};

struct SimulationTranscript {
  std::vector<TickRecord> ticks;

  bool empty() const { return ticks.empty(); }
};

/// One JSON line per record, grouped by tick. Timings are omitted when
/// include_timings is false, which is the form used for determinism checks.
std::vector<std::string> transcript_lines(const SimulationTranscript &transcript,
                                          bool include_timings);
std::string to_jsonl(const SimulationTranscript &transcript, bool include_timings);

/// Appends one parsed record (type event, phase, action or policy) to the
/// transcript. Returns false for record types this module does not own.
/// Records must arrive in tick order.
bool add_transcript_record(SimulationTranscript &transcript, const Json &record);

SimulationTranscript parse_transcript_lines(std::span<const std::string> lines);

struct LatencyStats {
  double mean_ms = 0.0;
  double p95_ms = 0.0;
  std::size_t samples = 0;

  bool operator==(const LatencyStats &) const = default;
};

/// Response time of an agent at a tick = perceive + reason + act wall time.
/// Throws InvalidArgument when the transcript has no phase records.
std::map<AgentId, LatencyStats> measure_phase_latency(const SimulationTranscript &transcript);

// ---------------------------------------------------------------------------
// Scheduler

struct SchedulerConfig {
  Tick max_ticks = 50;
  std::array<AgentId, 3> agent_order = {AgentId::student_agent, AgentId::educator_agent,
                                        AgentId::institution_agent};
  std::uint64_t rng_seed = 0;
  std::optional<std::size_t> bus_capacity;

  void validate() const;
};

SchedulerConfig scheduler_config_from_json_text(const std::string &text);
SchedulerConfig load_scheduler_config(const std::filesystem::path &path);

/// Runs after every agent finished its phases for a tick.
class TickPolicy {
public:
  virtual ~TickPolicy() = default;
  virtual PolicyTickRecord step(Tick tick, const Environment &env, Publisher &out) = 0;
};

class AgentPhaseError : public Error {
public:
  AgentPhaseError(AgentId agent, Tick tick, Phase phase, const std::string &cause);

  AgentId agent() const { return agent_; }
  Tick tick() const { return tick_; }
  Phase phase() const { return phase_; }

private:
  AgentId agent_;
  Tick tick_;
  Phase phase_;
};

/**
 * Tick loop: environment release, bus delivery, each agent's four phases in
 * the configured order, then the policy step. Agents are borrowed and must
 * outlive the call; exactly one agent per id in agent_order is required.
 */
SimulationTranscript run(const Cohort &cohort, std::span<Agent *const> agents,
                         const SchedulerConfig &config, TickPolicy *policy = nullptr);

// ---------------------------------------------------------------------------
// Q-learning intervention policy

struct InterventionPolicyConfig {
  PolicyConfig policy;
  std::size_t window_len = 10;
};

/**
 * Centralized intervention policy: one global Q-table, one decision per active
 * student per tick. Non-no_op actions are published as intervention_request
 * events from the environment.
 */
class QLearningDriver : public TickPolicy {
public:
  using RiskLookup = std::function<double(const StudentId &)>;

  QLearningDriver(InterventionPolicyConfig config, RiskLookup risk);

  PolicyTickRecord step(Tick tick, const Environment &env, Publisher &out) override;

  const QTable &table() const { return table_; }
  double epsilon() const { return epsilon_; }

private:
  SystemState observe(const StudentId &student, Tick tick, const Environment &env) const;

  struct Pending {
    SystemState state;
    InterventionAction action;
  };

  InterventionPolicyConfig config_;
  RiskLookup risk_;
  QTable table_;
  Rng rng_;
  double epsilon_;
  std::unordered_map<StudentId, Pending> pending_;
};

} // namespace auss
