#include "auss/student_agent.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "auss/stats.hpp"

namespace auss {

InteractionMatrix::InteractionMatrix(std::vector<StudentId> rows, std::vector<ResourceId> cols)
    : rows_(std::move(rows)), cols_(std::move(cols)) {
  for (std::size_t i = 0; i < rows_.size(); ++i) {
    if (!row_lookup_.emplace(rows_[i], i).second) {
      throw InvalidArgument("duplicate row id '" + rows_[i] + "'");
    }
  }
  for (std::size_t j = 0; j < cols_.size(); ++j) {
    if (!col_lookup_.emplace(cols_[j], j).second) {
      throw InvalidArgument("duplicate column id '" + cols_[j] + "'");
    }
  }
  sum_.assign(rows_.size() * cols_.size(), 0.0);
  count_.assign(rows_.size() * cols_.size(), 0);
}

InteractionMatrix InteractionMatrix::from_cohort(const Cohort &cohort) {
  std::vector<StudentId> rows;
  for (const auto &s : cohort.students) {
    rows.push_back(s.student_id);
  }
  std::vector<ResourceId> cols;
  for (const auto &r : cohort.resources) {
    cols.push_back(r.resource_id);
  }
  InteractionMatrix m(std::move(rows), std::move(cols));
  for (const auto &e : cohort.events) {
    if (e.kind == EngagementKind::resource_view && e.resource_id) {
      m.observe(e.student_id, *e.resource_id, e.value);
    }
  }
  return m;
}

std::optional<std::size_t> InteractionMatrix::row_index(const StudentId &id) const {
  auto it = row_lookup_.find(id);
  return it == row_lookup_.end() ? std::nullopt : std::optional<std::size_t>(it->second);
}

std::optional<std::size_t> InteractionMatrix::col_index(const ResourceId &id) const {
  auto it = col_lookup_.find(id);
  return it == col_lookup_.end() ? std::nullopt : std::optional<std::size_t>(it->second);
}

void InteractionMatrix::set(std::size_t row, std::size_t col, double value) {
  if (row >= rows_.size() || col >= cols_.size()) {
    throw InvalidArgument("matrix cell out of range");
  }
  if (!(value >= 0.0 && value <= 1.0)) {
    throw InvalidArgument("matrix cell must be in [0,1]");
  }
  sum_[row * cols_.size() + col] = value;
  count_[row * cols_.size() + col] = 1;
}

void InteractionMatrix::observe(const StudentId &student, const ResourceId &resource,
                                double value) {
  auto r = row_index(student);
  auto c = col_index(resource);
  if (!r || !c) {
    throw DataError("interaction for unknown student or resource");
  }
  if (!(value >= 0.0 && value <= 1.0)) {
    throw InvalidArgument("interaction value must be in [0,1]");
  }
  sum_[*r * cols_.size() + *c] += value;
  count_[*r * cols_.size() + *c] += 1;
}

std::optional<double> InteractionMatrix::at(std::size_t row, std::size_t col) const {
  const std::size_t i = row * cols_.size() + col;
  if (count_.at(i) == 0) {
    return std::nullopt;
  }
  return sum_[i] / count_[i];
}

std::vector<double> InteractionMatrix::dense_row(std::size_t row) const {
  std::vector<double> out(cols_.size(), 0.0);
  for (std::size_t c = 0; c < cols_.size(); ++c) {
    out[c] = at(row, c).value_or(0.0);
  }
  return out;
}

double cosine_similarity(std::span<const double> u, std::span<const double> v) {
  if (u.size() != v.size()) {
    throw InvalidArgument("cosine_similarity: length mismatch");
  }
  double dot = 0.0;
  double nu = 0.0;
  double nv = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    dot += u[i] * v[i];
    nu += u[i] * u[i];
    nv += v[i] * v[i];
  }
  if (nu == 0.0 || nv == 0.0) {
    return 0.0;
  }
  return std::clamp(dot / (std::sqrt(nu) * std::sqrt(nv)), -1.0, 1.0);
}

std::int64_t ranking_key(double score) { return std::llround(score * 1e12); }

Recommendation recommend_top_k(const InteractionMatrix &matrix, const StudentId &student,
                               std::size_t k, std::size_t neighborhood) {
  if (k == 0) {
    throw InvalidArgument("recommend_top_k: k must be >= 1");
  }
  if (neighborhood == 0) {
    throw InvalidArgument("recommend_top_k: neighborhood must be >= 1");
  }
  const auto self = matrix.row_index(student);
  if (!self) {
    throw InvalidArgument("recommend_top_k: unknown student '" + student + "'");
  }

  const std::vector<double> mine = matrix.dense_row(*self);
  struct Peer {
    std::size_t row;
    double sim;
  };
  std::vector<Peer> peers;
  for (std::size_t r = 0; r < matrix.row_count(); ++r) {
    if (r == *self) {
      continue;
    }
    const double sim = cosine_similarity(mine, matrix.dense_row(r));
    if (sim > 0.0) {
      peers.push_back({r, sim});
    }
  }
  std::sort(peers.begin(), peers.end(), [&matrix](const Peer &a, const Peer &b) {
    const auto ka = ranking_key(a.sim);
    const auto kb = ranking_key(b.sim);
    if (ka != kb) {
      return ka > kb;
    }
    return matrix.rows()[a.row] < matrix.rows()[b.row];
  });
  if (peers.size() > neighborhood) {
    peers.resize(neighborhood);
  }

  Recommendation rec;
  rec.student_id = student;
  rec.from_popularity = peers.empty();
  for (std::size_t c = 0; c < matrix.col_count(); ++c) {
    if (matrix.at(*self, c)) {
      continue;
    }
    double num = 0.0;
    double den = 0.0;
    if (!peers.empty()) {
      for (const auto &p : peers) {
        if (auto v = matrix.at(p.row, c)) {
          num += p.sim * *v;
          den += p.sim;
        }
      }
    } else {
      for (std::size_t r = 0; r < matrix.row_count(); ++r) {
        if (r == *self) {
          continue;
        }
        if (auto v = matrix.at(r, c)) {
          num += *v;
          den += 1.0;
        }
      }
    }
    if (den > 0.0) {
      rec.ranked.push_back({matrix.cols()[c], num / den});
    }
  }
  std::sort(rec.ranked.begin(), rec.ranked.end(),
            [](const ScoredResource &a, const ScoredResource &b) {
              const auto ka = ranking_key(a.score);
              const auto kb = ranking_key(b.score);
              if (ka != kb) {
                return ka > kb;
              }
              return a.resource_id < b.resource_id;
            });
  if (rec.ranked.size() > k) {
    rec.ranked.resize(k);
  }
  return rec;
}

// ---------------------------------------------------------------------------

double blend_prediction(double static_score, double temporal_score, double weight) {
  if (!(weight >= 0.0 && weight <= 1.0)) {
    throw InvalidArgument("blend weight must be in [0,1]");
  }
  return stats::clamp01(weight * static_score + (1.0 - weight) * temporal_score);
}

std::vector<double> static_feature_vector(const StudentRecord &record) {
  return {record.feature(kPriorGpa).value_or(0.0), record.feature(kCreditsAttempted).value_or(0.0)};
}

PerformancePredictor::PerformancePredictor(ml::BaggedTrees static_model,
                                           ml::LogisticModel temporal_model, double blend_weight)
    : static_model_(std::move(static_model)), temporal_model_(std::move(temporal_model)),
      blend_weight_(blend_weight) {
  if (!(blend_weight >= 0.0 && blend_weight <= 1.0)) {
    throw InvalidArgument("blend weight must be in [0,1]");
  }
}

PerformancePrediction PerformancePredictor::predict(const StudentRecord &record,
                                                    const LagFeatures &lags) const {
  if (!fitted()) {
    throw Error("performance predictor is not trained; call fit_predictors first");
  }
  PerformancePrediction p;
  p.student_id = record.student_id;
  p.static_score = stats::clamp01(static_model_.predict(static_feature_vector(record)));
  p.temporal_score = temporal_model_.predict_proba(lags);
  p.blend_weight = blend_weight_;
  p.predicted_score = blend_prediction(p.static_score, p.temporal_score, blend_weight_);
  return p;
}

Json PerformancePredictor::to_json() const {
  Json j;
  j["blend_weight"] = blend_weight_;
  j["static_model"] = static_model_.to_json();
  j["temporal_model"] = temporal_model_.to_json();
  return j;
}

PerformancePredictor PerformancePredictor::from_json(const Json &j) {
  const Json &w = require(j, "blend_weight");
  if (!w.is_number()) {
    throw DataError("field 'blend_weight' must be a number");
  }
  return PerformancePredictor(ml::BaggedTrees::from_json(require(j, "static_model")),
                              ml::LogisticModel::from_json(require(j, "temporal_model")),
                              w.get<double>());
}

PerformancePrediction predict_performance(const PerformancePredictor &predictor,
                                          const StudentRecord &record, const LagFeatures &lags) {
  return predictor.predict(record, lags);
}

LagFeatures latest_lag_features(const EventIndex &index, const StudentId &student,
                                std::size_t window_len) {
  const auto &stream = index.stream(student);
  const Tick last = stream.empty() ? 0 : stream.back().tick;
  return feature_window(index, student, last, window_len);
}

PredictorFit fit_predictors(const Cohort &cohort, double train_fraction, std::uint64_t seed,
                            const PredictorConfig &config) {
  if (!cohort.ground_truth) {
    throw DataError("fit_predictors: cohort has no ground-truth labels");
  }
  std::unordered_map<StudentId, const StudentRecord *> records;
  for (const auto &s : cohort.students) {
    records.emplace(s.student_id, &s);
  }
  std::unordered_map<StudentId, double> ability;
  std::vector<StudentId> labeled;
  for (const auto &t : cohort.ground_truth->students) {
    if (records.contains(t.student_id) && ability.emplace(t.student_id, t.ability).second) {
      labeled.push_back(t.student_id);
    }
  }
  if (labeled.size() < 10) {
    throw DataError("fit_predictors: need at least 10 labeled students, found " +
                    std::to_string(labeled.size()));
  }

  PredictorFit fit;
  fit.split = split_students(labeled, train_fraction, seed);
  const EventIndex index(cohort);

  ml::Matrix xs;
  ml::Matrix xt;
  std::vector<double> y;
  std::vector<int> pass;
  for (const auto &id : fit.split.train) {
    xs.push_back(static_feature_vector(*records.at(id)));
    const auto lags = latest_lag_features(index, id, config.window_len);
    xt.emplace_back(lags.begin(), lags.end());
    y.push_back(ability.at(id));
    pass.push_back(ability.at(id) >= config.pass_threshold ? 1 : 0);
  }

  ml::BaggedTreesConfig trees = config.trees;
  trees.seed = seed;
  ml::LogisticConfig temporal = config.temporal;
  temporal.seed = seed;
  ml::BaggedTrees static_model;
  static_model.fit(xs, y, trees);
  ml::LogisticModel temporal_model;
  temporal_model.fit(xt, pass, temporal);
  fit.predictor = PerformancePredictor(std::move(static_model), std::move(temporal_model),
                                       config.blend_weight);

  const double train_mean = stats::mean(y);
  std::size_t correct = 0;
  double abs_err = 0.0;
  double base_err = 0.0;
  for (const auto &id : fit.split.test) {
    const auto p = fit.predictor.predict(*records.at(id),
                                         latest_lag_features(index, id, config.window_len));
    const double truth = ability.at(id);
    correct += (p.predicted_score >= config.pass_threshold) == (truth >= config.pass_threshold);
    abs_err += std::abs(p.predicted_score - truth);
    base_err += std::abs(train_mean - truth);
  }
  const auto n_test = static_cast<double>(fit.split.test.size());
  fit.heldout_accuracy = static_cast<double>(correct) / n_test;
  fit.heldout_mae = abs_err / n_test;
  fit.baseline_mae = base_err / n_test;
  return fit;
}

// ---------------------------------------------------------------------------

std::vector<EventKind> detect_learning_gap(std::span<const TickValue> engagement,
                                           std::span<const TickValue> scores, Tick first_tick,
                                           Tick tick, std::size_t window_len) {
  if (window_len == 0) {
    throw InvalidArgument("detect_learning_gap: window_len must be >= 1");
  }
  if (tick < first_tick || static_cast<std::size_t>(tick - first_tick) + 1 < window_len) {
    return {};
  }
  const long long lo = static_cast<long long>(tick) - static_cast<long long>(window_len);
  auto in_window = [lo, tick](Tick t) { return static_cast<long long>(t) > lo && t <= tick; };

  std::vector<double> eng;
  for (const auto &p : engagement) {
    if (in_window(p.tick)) {
      eng.push_back(p.value);
    }
  }
  std::vector<double> xs;
  std::vector<double> ys;
  for (const auto &p : scores) {
    if (in_window(p.tick)) {
      xs.push_back(static_cast<double>(p.tick));
      ys.push_back(p.value);
    }
  }

  std::vector<EventKind> out;
  if (stats::mean(eng) < kDisengagementThreshold) {
    out.push_back(EventKind::disengagement);
  }
  if (stats::least_squares_slope(xs, ys) < kDeclineSlope) {
    out.push_back(EventKind::performance_decline);
  }
  return out;
}

bool GapDebouncer::allow(const StudentId &student, EventKind kind, Tick tick) const {
  auto it = last_.find({student, kind});
  return it == last_.end() ||
         static_cast<std::size_t>(tick) >= static_cast<std::size_t>(it->second) + window_len_;
}

void GapDebouncer::record(const StudentId &student, EventKind kind, Tick tick) {
  last_[{student, kind}] = tick;
}

// ---------------------------------------------------------------------------

namespace {

std::vector<StudentId> student_ids(const Cohort &cohort) {
  std::vector<StudentId> ids;
  for (const auto &s : cohort.students) {
    ids.push_back(s.student_id);
  }
  return ids;
}

std::vector<ResourceId> resource_ids(const Cohort &cohort) {
  std::vector<ResourceId> ids;
  for (const auto &r : cohort.resources) {
    ids.push_back(r.resource_id);
  }
  return ids;
}

} // namespace

StudentAgent::StudentAgent(const Cohort &cohort, StudentAgentConfig config,
                           std::optional<PerformancePredictor> predictor)
    : config_(config), predictor_(std::move(predictor)),
      matrix_(student_ids(cohort), resource_ids(cohort)), debouncer_(config.window_len) {
  if (config_.window_len == 0 || config_.recommend_k == 0 || config_.neighborhood == 0) {
    throw InvalidArgument("student agent: window, k and neighborhood must be >= 1");
  }
  for (const auto &s : cohort.students) {
    records_.emplace(s.student_id, s);
    tracks_[s.student_id].first_tick = s.enrollment_tick;
    index_.add_student(s.student_id);
  }
}

std::set<EventKind> StudentAgent::subscriptions() const {
  return {EventKind::at_risk_flag, EventKind::intervention_request, EventKind::grade_posted};
}

StudentPercepts StudentAgent::observe(const TickInput &input, std::span<const Event> delivered) {
  StudentPercepts p;
  p.tick = input.tick;
  p.active.assign(input.active_students.begin(), input.active_students.end());
  for (const auto &e : input.events) {
    index_.append(e);
    auto &track = tracks_.at(e.student_id);
    switch (e.kind) {
    case EngagementKind::login:
      track.engagement.push_back({e.tick, e.value});
      break;
    case EngagementKind::absence:
      track.engagement.push_back({e.tick, 0.0});
      break;
    case EngagementKind::resource_view:
      if (e.resource_id) {
        matrix_.observe(e.student_id, *e.resource_id, e.value);
      }
      break;
    default:
      break;
    }
  }
  for (const auto &ev : delivered) {
    const auto student = payload_string(ev.payload, "student_id");
    if (!student || !tracks_.contains(*student)) {
      continue;
    }
    switch (ev.kind) {
    case EventKind::grade_posted: {
      const auto score = payload_number(ev.payload, "score");
      const auto tick = payload_number(ev.payload, "assessment_tick");
      if (score && tick) {
        tracks_.at(*student).scores.push_back({static_cast<Tick>(*tick), *score});
      }
      break;
    }
    case EventKind::at_risk_flag:
      flagged_.insert(*student);
      ++p.risk_flags;
      break;
    case EventKind::intervention_request:
      if (auto action = payload_string(ev.payload, "action")) {
        p.requests.emplace_back(*student, parse_intervention_action(*action));
      }
      break;
    default:
      break;
    }
  }
  return p;
}

StudentDecisions StudentAgent::decide(const StudentPercepts &percepts,
                                      const AgentMemory & /*memory*/) {
  StudentDecisions d;
  d.tick = percepts.tick;
  const long long lo =
      static_cast<long long>(percepts.tick) - static_cast<long long>(config_.window_len);
  for (const auto &student : percepts.active) {
    const auto &track = tracks_.at(student);
    const auto kinds = detect_learning_gap(track.engagement, track.scores, track.first_tick,
                                           percepts.tick, config_.window_len);
    for (auto kind : kinds) {
      if (!debouncer_.allow(student, kind, percepts.tick)) {
        continue;
      }
      GapTrigger g;
      g.student = student;
      g.kind = kind;
      std::vector<double> eng;
      std::vector<double> xs;
      std::vector<double> ys;
      for (const auto &v : track.engagement) {
        if (static_cast<long long>(v.tick) > lo) {
          eng.push_back(v.value);
        }
      }
      for (const auto &v : track.scores) {
        if (static_cast<long long>(v.tick) > lo) {
          xs.push_back(static_cast<double>(v.tick));
          ys.push_back(v.value);
        }
      }
      g.mean_engagement = stats::mean(eng);
      g.score_slope = stats::least_squares_slope(xs, ys);
      if (predictor_) {
        g.predicted_score =
            predictor_
                ->predict(records_.at(student),
                          feature_window(index_, student, percepts.tick, config_.window_len))
                .predicted_score;
      }
      d.gaps.push_back(std::move(g));
    }
  }
  for (const auto &[student, action] : percepts.requests) {
    if (action == InterventionAction::send_recommendation) {
      d.recommendations.push_back(
          recommend_top_k(matrix_, student, config_.recommend_k, config_.neighborhood));
    } else if (action == InterventionAction::send_alert) {
      d.alerts.push_back(student);
    }
  }
  return d;
}

std::vector<ActionRecord> StudentAgent::execute(const StudentDecisions &decisions,
                                                Publisher &out) {
  std::vector<ActionRecord> actions;
  for (const auto &g : decisions.gaps) {
    Payload payload{{"student_id", g.student},
                    {"mean_engagement", g.mean_engagement},
                    {"score_slope", g.score_slope}};
    if (g.predicted_score) {
      payload["predicted_score"] = *g.predicted_score;
    }
    out.publish(g.kind, std::move(payload));
    debouncer_.record(g.student, g.kind, decisions.tick);
    ++gaps_total_;
  }
  for (const auto &rec : decisions.recommendations) {
    std::vector<std::string> ids;
    for (const auto &r : rec.ranked) {
      ids.push_back(r.resource_id);
    }
    const double top = rec.ranked.empty() ? 0.0 : rec.ranked.front().score;
    out.publish(EventKind::recommendation_issued,
                Payload{{"student_id", rec.student_id}, {"resource_ids", ids}, {"top_score", top}});
    actions.push_back({"recommend", rec.student_id, ids.empty() ? "" : ids.front(), top});
    ++recommendations_total_;
  }
  for (const auto &student : decisions.alerts) {
    actions.push_back({"alert", student, "", 0.0});
  }
  return actions;
}

Feedback StudentAgent::evaluate(const TickOutcome &outcome) {
  Feedback f;
  f.reward = -static_cast<double>(outcome.dropped_out.size());
  f.memory_updates = {{"gaps_total", static_cast<double>(gaps_total_)},
                      {"recommendations_total", static_cast<double>(recommendations_total_)},
                      {"flagged_students", static_cast<double>(flagged_.size())}};
  return f;
}

} // namespace auss
