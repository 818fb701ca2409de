#include "auss/policy.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "auss/csv.hpp"

namespace auss {

std::string_view to_string(EngagementLevel v) {
  switch (v) {
  case EngagementLevel::low:
    return "low";
  case EngagementLevel::medium:
    return "medium";
  case EngagementLevel::high:
    return "high";
  }
  return "?";
}

std::string_view to_string(PerformanceTrend v) {
  switch (v) {
  case PerformanceTrend::declining:
    return "declining";
  case PerformanceTrend::flat:
    return "flat";
  case PerformanceTrend::improving:
    return "improving";
  }
  return "?";
}

std::string_view to_string(RiskTier v) {
  switch (v) {
  case RiskTier::ok:
    return "ok";
  case RiskTier::warning:
    return "warning";
  case RiskTier::critical:
    return "critical";
  }
  return "?";
}

std::string_view to_string(InterventionAction action) {
  switch (action) {
  case InterventionAction::no_op:
    return "no_op";
  case InterventionAction::send_recommendation:
    return "send_recommendation";
  case InterventionAction::send_alert:
    return "send_alert";
  case InterventionAction::escalate_to_educator:
    return "escalate_to_educator";
  case InterventionAction::escalate_to_institution:
    return "escalate_to_institution";
  }
  return "?";
}

InterventionAction parse_intervention_action(std::string_view text) {
  for (auto a : kInterventionActions) {
    if (to_string(a) == text) {
      return a;
    }
  }
  throw DataError("unknown intervention action '" + std::string(text) + "'");
}

std::size_t SystemState::index() const {
  return static_cast<std::size_t>(engagement) * 9 + static_cast<std::size_t>(trend) * 3 +
         static_cast<std::size_t>(risk);
}

SystemState SystemState::from_index(std::size_t index) {
  if (index >= kStateCount) {
    throw InvalidArgument("state index out of range");
  }
  return SystemState{static_cast<EngagementLevel>(index / 9),
                     static_cast<PerformanceTrend>((index / 3) % 3),
                     static_cast<RiskTier>(index % 3)};
}

QTable::QTable(std::size_t states, std::size_t actions, double init)
    : states_(states), actions_(actions), values_(states * actions, init) {
  if (states == 0 || actions == 0) {
    throw InvalidArgument("QTable needs at least one state and one action");
  }
}

double QTable::at(std::size_t state, std::size_t action) const {
  if (state >= states_ || action >= actions_) {
    throw InvalidArgument("QTable index out of range");
  }
  return values_[state * actions_ + action];
}

double &QTable::at(std::size_t state, std::size_t action) {
  if (state >= states_ || action >= actions_) {
    throw InvalidArgument("QTable index out of range");
  }
  return values_[state * actions_ + action];
}

double QTable::at(SystemState s, InterventionAction a) const {
  return at(s.index(), static_cast<std::size_t>(a));
}

double &QTable::at(SystemState s, InterventionAction a) {
  return at(s.index(), static_cast<std::size_t>(a));
}

std::span<const double> QTable::row(std::size_t state) const {
  if (state >= states_) {
    throw InvalidArgument("QTable state out of range");
  }
  return std::span<const double>(values_).subspan(state * actions_, actions_);
}

double QTable::max_value(std::size_t state) const {
  auto r = row(state);
  return *std::max_element(r.begin(), r.end());
}

std::size_t QTable::argmax(std::size_t state) const {
  auto r = row(state);
  // max_element returns the first of equal maxima.
  return static_cast<std::size_t>(std::max_element(r.begin(), r.end()) - r.begin());
}

bool QTable::all_finite() const {
  return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
}

void PolicyConfig::validate() const {
  if (!(alpha > 0.0 && alpha <= 1.0)) {
    throw InvalidArgument("alpha must be in (0, 1]");
  }
  if (!(gamma >= 0.0 && gamma < 1.0)) {
    throw InvalidArgument("gamma must be in [0, 1)");
  }
  if (!(epsilon >= 0.0 && epsilon <= 1.0)) {
    throw InvalidArgument("epsilon must be in [0, 1]");
  }
  if (!(epsilon_decay > 0.0 && epsilon_decay <= 1.0)) {
    throw InvalidArgument("epsilon_decay must be in (0, 1]");
  }
  if (!(epsilon_min >= 0.0 && epsilon_min <= 1.0)) {
    throw InvalidArgument("epsilon_min must be in [0, 1]");
  }
}

double apply_q_update(QTable &table, const IndexedTransition &t, double alpha, double gamma) {
  const double bootstrap = t.terminal ? 0.0 : gamma * table.max_value(t.next_state);
  double &q = table.at(t.state, t.action);
  q = q + alpha * (t.reward + bootstrap - q);
  return q;
}

QTable q_update(QTable table, const TransitionSample &sample, const PolicyConfig &config) {
  apply_q_update(table,
                 IndexedTransition{sample.state.index(), static_cast<std::size_t>(sample.action),
                                   sample.reward, sample.next_state.index(), sample.terminal},
                 config.alpha, config.gamma);
  return table;
}

std::size_t select_action_index(const QTable &table, std::size_t state, double epsilon, Rng &rng) {
  if (rng.uniform() < epsilon) {
    return rng.uniform_index(table.action_count());
  }
  return table.argmax(state);
}

InterventionAction select_action(const QTable &table, SystemState state, double epsilon, Rng &rng) {
  return static_cast<InterventionAction>(select_action_index(table, state.index(), epsilon, rng));
}

EngagementLevel engagement_level(double mean_engagement) {
  if (mean_engagement < 0.33) {
    return EngagementLevel::low;
  }
  if (mean_engagement < 0.66) {
    return EngagementLevel::medium;
  }
  return EngagementLevel::high;
}

SystemState discretize_state(const StateFeatures &features, double risk_score) {
  SystemState s;
  s.engagement = engagement_level(features.mean_engagement);
  if (std::abs(features.performance_slope) < 0.01) {
    s.trend = PerformanceTrend::flat;
  } else {
    s.trend = features.performance_slope < 0.0 ? PerformanceTrend::declining
                                               : PerformanceTrend::improving;
  }
  if (risk_score < 0.3) {
    s.risk = RiskTier::ok;
  } else if (risk_score < 0.7) {
    s.risk = RiskTier::warning;
  } else {
    s.risk = RiskTier::critical;
  }
  return s;
}

double compute_reward(const InterventionOutcome &outcome, InterventionAction action) {
  double reward = 0.0;
  if (outcome.dropped_out) {
    reward -= 1.0;
  } else if (outcome.engagement_after > outcome.engagement_before) {
    reward += 1.0;
  }
  if (action != InterventionAction::no_op) {
    reward -= 0.1;
  }
  return reward;
}

namespace {

void validate_mdp(const FiniteMdp &mdp) {
  if (mdp.state_count == 0 || mdp.action_count == 0) {
    throw InvalidArgument("MDP needs at least one state and one action");
  }
  if (mdp.outcomes.size() != mdp.state_count * mdp.action_count) {
    throw InvalidArgument("MDP outcome table has the wrong size");
  }
  if (mdp.terminal.size() != mdp.state_count) {
    throw InvalidArgument("MDP terminal mask has the wrong size");
  }
  if (mdp.start_states.empty()) {
    throw InvalidArgument("MDP needs at least one start state");
  }
  for (auto s : mdp.start_states) {
    if (s >= mdp.state_count) {
      throw InvalidArgument("MDP start state out of range");
    }
  }
  for (std::size_t i = 0; i < mdp.outcomes.size(); ++i) {
    if (mdp.terminal[i / mdp.action_count]) {
      continue;
    }
    const auto &outs = mdp.outcomes[i];
    if (outs.empty()) {
      throw InvalidArgument("MDP has a state-action pair with no outcome");
    }
    double total = 0.0;
    for (const auto &o : outs) {
      if (!std::isfinite(o.reward) || !std::isfinite(o.probability) || o.probability < 0.0) {
        throw InvalidArgument("MDP has a non-finite reward or probability");
      }
      if (o.next_state >= mdp.state_count) {
        throw InvalidArgument("MDP next state out of range");
      }
      total += o.probability;
    }
    if (std::abs(total - 1.0) > 1e-9) {
      throw InvalidArgument("MDP outcome probabilities must sum to 1");
    }
  }
}

const MdpOutcome &sample_outcome(const std::vector<MdpOutcome> &outs, Rng &rng) {
  if (outs.size() == 1) {
    return outs.front();
  }
  const double u = rng.uniform();
  double acc = 0.0;
  for (const auto &o : outs) {
    acc += o.probability;
    if (u < acc) {
      return o;
    }
  }
  return outs.back();
}

} // namespace

TrainingResult train_on_mdp(const FiniteMdp &mdp, const PolicyConfig &config,
                            std::size_t episodes) {
  config.validate();
  validate_mdp(mdp);

  TrainingResult result{QTable(mdp.state_count, mdp.action_count), {}};
  result.episode_returns.reserve(episodes);
  Rng rng(config.rng_seed);
  double epsilon = config.epsilon;

  for (std::size_t ep = 0; ep < episodes; ++ep) {
    std::size_t state = mdp.start_states[rng.uniform_index(mdp.start_states.size())];
    double total = 0.0;
    for (std::size_t step = 0; step < mdp.max_steps && !mdp.terminal[state]; ++step) {
      const std::size_t action = select_action_index(result.table, state, epsilon, rng);
      const MdpOutcome &o = sample_outcome(mdp.at(state, action), rng);
      apply_q_update(result.table,
                     IndexedTransition{state, action, o.reward, o.next_state,
                                       static_cast<bool>(mdp.terminal[o.next_state])},
                     config.alpha, config.gamma);
      total += o.reward;
      state = o.next_state;
    }
    result.episode_returns.push_back(total);
    epsilon = std::max(config.epsilon_min, epsilon * config.epsilon_decay);
  }
  return result;
}

std::vector<std::size_t> greedy_policy(const QTable &table) {
  std::vector<std::size_t> out(table.state_count());
  for (std::size_t s = 0; s < table.state_count(); ++s) {
    out[s] = table.argmax(s);
  }
  return out;
}

void export_q_table(const QTable &table, const std::filesystem::path &path) {
  if (table.state_count() != kStateCount || table.action_count() != kActionCount) {
    throw InvalidArgument("export_q_table expects the 27 x 5 intervention table");
  }
  std::vector<std::vector<std::string>> rows;
  for (std::size_t s = 0; s < kStateCount; ++s) {
    const auto state = SystemState::from_index(s);
    for (auto a : kInterventionActions) {
      rows.push_back({std::string(to_string(state.engagement)), std::string(to_string(state.trend)),
                      std::string(to_string(state.risk)), std::string(to_string(a)),
                      csv::format_double(table.at(state, a))});
    }
  }
  csv::write(path, {"engagement", "trend", "risk", "action", "value"}, rows);
}

namespace {

template <typename Enum, std::size_t N>
Enum parse_level(std::string_view text, const std::array<Enum, N> &values) {
  for (auto v : values) {
    if (to_string(v) == text) {
      return v;
    }
  }
  throw DataError("unknown state component '" + std::string(text) + "'");
}

} // namespace

QTable import_q_table(const std::filesystem::path &path) {
  const auto table = csv::read(path, {"engagement", "trend", "risk", "action", "value"});
  QTable q;
  std::vector<bool> seen(kStateCount * kActionCount, false);
  for (std::size_t i = 0; i < table.rows.size(); ++i) {
    const auto &row = table.rows[i];
    try {
      SystemState s{
          parse_level(row[0], std::array{EngagementLevel::low, EngagementLevel::medium,
                                         EngagementLevel::high}),
          parse_level(row[1], std::array{PerformanceTrend::declining, PerformanceTrend::flat,
                                         PerformanceTrend::improving}),
          parse_level(row[2], std::array{RiskTier::ok, RiskTier::warning, RiskTier::critical})};
      const auto a = parse_intervention_action(row[3]);
      const double v = csv::parse_double(row[4]);
      if (!std::isfinite(v)) {
        throw DataError("non-finite Q-value");
      }
      const std::size_t cell = s.index() * kActionCount + static_cast<std::size_t>(a);
      if (seen[cell]) {
        throw DataError("duplicate state-action row");
      }
      seen[cell] = true;
      q.at(s, a) = v;
    } catch (const DataError &e) {
      throw DataError(path.filename().string() + ":" + std::to_string(table.line_numbers[i]) +
                      ": " + e.what());
    }
  }
  if (std::find(seen.begin(), seen.end(), false) != seen.end()) {
    throw DataError(path.filename().string() + ": Q-table is missing state-action rows");
  }
  return q;
}

} // namespace auss
