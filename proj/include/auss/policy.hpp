#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string_view>
#include <vector>

#include "auss/common.hpp"
#include "auss/random.hpp"

namespace auss {

enum class EngagementLevel { low, medium, high };
enum class PerformanceTrend { declining, flat, improving };
enum class RiskTier { ok, warning, critical };

std::string_view to_string(EngagementLevel v);
std::string_view to_string(PerformanceTrend v);
std::string_view to_string(RiskTier v);

struct SystemState {
  EngagementLevel engagement = EngagementLevel::low;
  PerformanceTrend trend = PerformanceTrend::declining;
  RiskTier risk = RiskTier::ok;

  /// Dense index in [0, kStateCount).
  std::size_t index() const;
  static SystemState from_index(std::size_t index);

  bool operator==(const SystemState &) const = default;
};

inline constexpr std::size_t kStateCount = 27;

enum class InterventionAction {
  no_op,
  send_recommendation,
  send_alert,
  escalate_to_educator,
  escalate_to_institution,
};

inline constexpr std::size_t kActionCount = 5;
inline constexpr std::array kInterventionActions = {
    InterventionAction::no_op, InterventionAction::send_recommendation,
    InterventionAction::send_alert, InterventionAction::escalate_to_educator,
    InterventionAction::escalate_to_institution};

std::string_view to_string(InterventionAction action);
InterventionAction parse_intervention_action(std::string_view text);

/// Dense action-value table. The default shape is the 27-state x 5-action
/// intervention problem; other shapes serve generic finite MDPs.
class QTable {
public:
  QTable() : QTable(kStateCount, kActionCount) {}
  QTable(std::size_t states, std::size_t actions, double init = 0.0);

  std::size_t state_count() const { return states_; }
  std::size_t action_count() const { return actions_; }

  double at(std::size_t state, std::size_t action) const;
  double &at(std::size_t state, std::size_t action);
  double at(SystemState s, InterventionAction a) const;
  double &at(SystemState s, InterventionAction a);

  std::span<const double> row(std::size_t state) const;
  double max_value(std::size_t state) const;
  /// First maximal action in index order.
  std::size_t argmax(std::size_t state) const;

  std::span<const double> values() const { return values_; }
  bool all_finite() const;

  bool operator==(const QTable &) const = default;

private:
  std::size_t states_;
  std::size_t actions_;
  std::vector<double> values_;
};

struct PolicyConfig {
  double alpha = 0.1;         // (0, 1]
  double gamma = 0.9;         // [0, 1)
  double epsilon = 0.1;       // [0, 1]
  double epsilon_decay = 1.0; // multiplicative, per episode, in (0, 1]
  double epsilon_min = 0.0;
  std::uint64_t rng_seed = 0;

  /// Throws InvalidArgument naming the offending field.
  void validate() const;
};

struct TransitionSample {
  SystemState state;
  InterventionAction action = InterventionAction::no_op;
  double reward = 0.0;
  SystemState next_state;
  bool terminal = false; // no bootstrap from next_state
};

/// Index form used by generic MDP training.
struct IndexedTransition {
  std::size_t state = 0;
  std::size_t action = 0;
  double reward = 0.0;
  std::size_t next_state = 0;
  bool terminal = false;
};

/// Applies one temporal-difference step in place; returns the new Q(s,a).
double apply_q_update(QTable &table, const IndexedTransition &t, double alpha, double gamma);

/// Q(s,a) <- Q(s,a) + alpha [r + gamma max_a' Q(s',a') - Q(s,a)], all else unchanged.
QTable q_update(QTable table, const TransitionSample &sample, const PolicyConfig &config);

/// Epsilon-greedy over a row; one uniform draw decides exploration.
std::size_t select_action_index(const QTable &table, std::size_t state, double epsilon, Rng &rng);

InterventionAction select_action(const QTable &table, SystemState state, double epsilon, Rng &rng);
inline InterventionAction select_action(const QTable &table, SystemState state,
                                        const PolicyConfig &config, Rng &rng) {
  return select_action(table, state, config.epsilon, rng);
}

struct StateFeatures {
  double mean_engagement = 0.0;
  double performance_slope = 0.0;
};

SystemState discretize_state(const StateFeatures &features, double risk_score);

EngagementLevel engagement_level(double mean_engagement);

struct InterventionOutcome {
  EngagementLevel engagement_before = EngagementLevel::low;
  EngagementLevel engagement_after = EngagementLevel::low;
  bool dropped_out = false;
};

double compute_reward(const InterventionOutcome &outcome, InterventionAction action);

// ---------------------------------------------------------------------------
// Finite MDP training

struct MdpOutcome {
  double probability = 1.0;
  std::size_t next_state = 0;
  double reward = 0.0;
};

struct FiniteMdp {
  std::size_t state_count = 0;
  std::size_t action_count = 0;
  /// outcomes[state * action_count + action]
  std::vector<std::vector<MdpOutcome>> outcomes;
  std::vector<bool> terminal;
  /// Episodes start uniformly at one of these states.
  std::vector<std::size_t> start_states;
  std::size_t max_steps = 100;

  const std::vector<MdpOutcome> &at(std::size_t state, std::size_t action) const {
    return outcomes[state * action_count + action];
  }
};

struct TrainingResult {
  QTable table;
  std::vector<double> episode_returns; // undiscounted sum of rewards
};

/// Epsilon-greedy tabular Q-learning. Throws InvalidArgument for a malformed or
/// non-finite MDP.
TrainingResult train_on_mdp(const FiniteMdp &mdp, const PolicyConfig &config, std::size_t episodes);

std::vector<std::size_t> greedy_policy(const QTable &table);

/// CSV with columns engagement,trend,risk,action,value (27 x 5 tables only).
void export_q_table(const QTable &table, const std::filesystem::path &path);
QTable import_q_table(const std::filesystem::path &path);

} // namespace auss
