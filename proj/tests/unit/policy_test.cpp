#include <doctest.h>

#include <filesystem>

#include "auss/policy.hpp"
#include "oracles.hpp"

using namespace auss;

namespace {

const SystemState kS{EngagementLevel::medium, PerformanceTrend::flat, RiskTier::warning};
const SystemState kNext{EngagementLevel::high, PerformanceTrend::improving, RiskTier::ok};

std::size_t changed_cells(const QTable &a, const QTable &b) {
  std::size_t n = 0;
  for (std::size_t i = 0; i < a.values().size(); ++i) {
    n += a.values()[i] != b.values()[i];
  }
  return n;
}

} // namespace

TEST_CASE("zero table with zero reward is a fixed point") {
  const QTable q;
  PolicyConfig cfg;
  const auto out = q_update(q, {kS, InterventionAction::send_alert, 0.0, kNext, false}, cfg);
  CHECK(out == q);
}

TEST_CASE("alpha 1 gamma 0 overwrites with the reward") {
  QTable q;
  q.at(kS, InterventionAction::send_alert) = 2.0;
  PolicyConfig cfg;
  cfg.alpha = 1.0;
  cfg.gamma = 0.0;
  const auto out = q_update(q, {kS, InterventionAction::send_alert, 5.0, kNext, false}, cfg);
  CHECK(out.at(kS, InterventionAction::send_alert) == doctest::Approx(5.0).epsilon(1e-12));
}

TEST_CASE("hand-evaluated update gives 0.73") {
  QTable q;
  q.at(kS, InterventionAction::send_alert) = 0.5;
  q.at(kNext, InterventionAction::escalate_to_educator) = 2.0;
  q.at(kNext, InterventionAction::no_op) = 1.0;
  PolicyConfig cfg;
  cfg.alpha = 0.1;
  cfg.gamma = 0.9;
  const auto out = q_update(q, {kS, InterventionAction::send_alert, 1.0, kNext, false}, cfg);
  CHECK(std::abs(out.at(kS, InterventionAction::send_alert) - 0.73) <= 1e-12);
  CHECK(changed_cells(q, out) == 1);
}

TEST_CASE("terminal samples do not bootstrap") {
  QTable q;
  q.at(kNext, InterventionAction::no_op) = 100.0;
  PolicyConfig cfg;
  cfg.alpha = 1.0;
  const auto out = q_update(q, {kS, InterventionAction::no_op, -1.0, kNext, true}, cfg);
  CHECK(out.at(kS, InterventionAction::no_op) == -1.0);
}

TEST_CASE("config validation names the field") {
  PolicyConfig cfg;
  cfg.alpha = 0.0;
  CHECK_THROWS_WITH_AS(cfg.validate(), doctest::Contains("alpha"), InvalidArgument);
  cfg = {};
  cfg.gamma = 1.0;
  CHECK_THROWS_WITH_AS(cfg.validate(), doctest::Contains("gamma"), InvalidArgument);
  cfg = {};
  cfg.epsilon = 1.5;
  CHECK_THROWS_AS(cfg.validate(), InvalidArgument);
}

TEST_CASE("greedy selection and tie-break") {
  Rng rng(1);
  QTable q;
  CHECK(select_action(q, kS, 0.0, rng) == InterventionAction::no_op);
  q.at(kS, InterventionAction::send_alert) = 0.4;
  CHECK(select_action(q, kS, 0.0, rng) == InterventionAction::send_alert);
}

TEST_CASE("fully exploring selection replays under a fixed seed") {
  QTable q;
  q.at(kS, InterventionAction::send_alert) = 10.0;
  auto draw = [&q] {
    Rng rng(2024);
    std::vector<InterventionAction> out;
    for (int i = 0; i < 50; ++i) {
      out.push_back(select_action(q, kS, 1.0, rng));
    }
    return out;
  };
  const auto a = draw();
  CHECK(a == draw());
  std::set<InterventionAction> distinct(a.begin(), a.end());
  CHECK(distinct.size() == kActionCount);
}

TEST_CASE("discretize_state thresholds") {
  CHECK(discretize_state({0.9, 0.0}, 0.1) ==
        SystemState{EngagementLevel::high, PerformanceTrend::flat, RiskTier::ok});
  CHECK(discretize_state({0.2, -0.05}, 0.8) ==
        SystemState{EngagementLevel::low, PerformanceTrend::declining, RiskTier::critical});
  CHECK(engagement_level(0.33) == EngagementLevel::medium);
  CHECK(engagement_level(0.3299999) == EngagementLevel::low);
}

TEST_CASE("state index is a bijection") {
  for (std::size_t i = 0; i < kStateCount; ++i) {
    CHECK(SystemState::from_index(i).index() == i);
  }
}

TEST_CASE("reward rule") {
  const auto low = EngagementLevel::low, med = EngagementLevel::medium;
  CHECK(compute_reward({med, med, false}, InterventionAction::no_op) == 0.0);
  CHECK(compute_reward({low, med, false}, InterventionAction::send_alert) ==
        doctest::Approx(0.9).epsilon(1e-12));
  CHECK(compute_reward({med, med, true}, InterventionAction::send_recommendation) ==
        doctest::Approx(-1.1).epsilon(1e-12));
}

TEST_CASE("single-state MDP learns the geometric series") {
  FiniteMdp mdp;
  mdp.state_count = 1;
  mdp.action_count = 2;
  mdp.outcomes = {{{1.0, 0, 1.0}}, {{1.0, 0, 0.0}}};
  mdp.terminal = {false};
  mdp.start_states = {0};
  mdp.max_steps = 200;
  PolicyConfig cfg;
  cfg.alpha = 0.2;
  cfg.gamma = 0.9;
  cfg.epsilon = 0.3;
  cfg.rng_seed = 4;
  const auto result = train_on_mdp(mdp, cfg, 200);
  CHECK(result.table.at(0, 0) == doctest::Approx(10.0).epsilon(1e-3));
  CHECK(std::abs(result.table.at(0, 1) - 9.0) < 1e-2);
  CHECK(result.episode_returns.size() == 200);
}

TEST_CASE("chain MDP matches value iteration") {
  const auto mdp = oracle::chain_mdp();
  PolicyConfig cfg;
  cfg.alpha = 0.5;
  cfg.gamma = 0.9;
  cfg.epsilon = 0.5;
  cfg.rng_seed = 11;
  const auto learned = train_on_mdp(mdp, cfg, 2000);
  const auto q = oracle::value_iteration(mdp, 0.9);
  for (std::size_t s = 0; s < 4; ++s) {
    for (std::size_t a = 0; a < 2; ++a) {
      CHECK(std::abs(learned.table.at(s, a) - q[s][a]) < 1e-3);
    }
  }
  CHECK(greedy_policy(learned.table) == oracle::argmax_policy(q));
}

TEST_CASE("zero episodes returns the initial table") {
  const auto r = train_on_mdp(oracle::chain_mdp(), {}, 0);
  CHECK(r.table == QTable(4, 2));
  CHECK(r.episode_returns.empty());
}

TEST_CASE("malformed MDPs are rejected") {
  auto mdp = oracle::chain_mdp();
  mdp.outcomes[0] = {{0.5, 1, 0.0}};
  CHECK_THROWS_AS(train_on_mdp(mdp, {}, 1), InvalidArgument);
  mdp = oracle::chain_mdp();
  mdp.outcomes[0][0].next_state = 9;
  CHECK_THROWS_AS(train_on_mdp(mdp, {}, 1), InvalidArgument);
}

TEST_CASE("q table csv round trip") {
  QTable q;
  for (std::size_t s = 0; s < kStateCount; ++s) {
    for (std::size_t a = 0; a < kActionCount; ++a) {
      q.at(s, a) = 0.1 * static_cast<double>(s) - 0.37 * static_cast<double>(a);
    }
  }
  const auto path = std::filesystem::temp_directory_path() / "auss_q_table.csv";
  export_q_table(q, path);
  CHECK(import_q_table(path) == q);
  CHECK_THROWS_AS(export_q_table(QTable(2, 2), path), InvalidArgument);
}
