#include "auss/institution_agent.hpp"

#include <algorithm>
#include <cmath>

#include "auss/csv.hpp"
#include "auss/stats.hpp"

namespace auss {

const std::array<std::string_view, kInstitutionalFeatureCount> &institutional_feature_names() {
  static const std::array<std::string_view, kInstitutionalFeatureCount> names = {
      "mean_engagement", "engagement_slope", "mean_score",
      "score_slope",     "absence_rate",     "credits_attempted"};
  return names;
}

namespace {

void series_stats(const std::vector<TickValue> &series, double &mean, double &slope) {
  std::vector<double> xs;
  std::vector<double> ys;
  xs.reserve(series.size());
  ys.reserve(series.size());
  for (const auto &p : series) {
    xs.push_back(static_cast<double>(p.tick));
    ys.push_back(p.value);
  }
  mean = stats::mean(ys);
  slope = stats::least_squares_slope(xs, ys);
}

} // namespace

InstitutionalFeatures features_from_history(const StudentId &student,
                                            const StudentHistory &history) {
  InstitutionalFeatures f;
  f.student_id = student;
  series_stats(history.engagement, f.mean_engagement, f.engagement_slope);
  series_stats(history.scores, f.mean_score, f.score_slope);
  const std::size_t observed = history.absences + history.attended;
  f.absence_rate =
      observed == 0 ? 0.0 : static_cast<double>(history.absences) / static_cast<double>(observed);
  f.credits_attempted = history.credits_attempted;
  return f;
}

std::vector<StudentHistory> cohort_histories(const Cohort &cohort, Tick tick) {
  std::vector<StudentHistory> out(cohort.students.size());
  std::unordered_map<StudentId, std::size_t> slot;
  for (std::size_t i = 0; i < cohort.students.size(); ++i) {
    slot.emplace(cohort.students[i].student_id, i);
    out[i].credits_attempted = cohort.students[i].feature(kCreditsAttempted).value_or(0.0);
  }
  for (const auto &e : cohort.events) {
    auto it = slot.find(e.student_id);
    if (it == slot.end() || e.tick > tick) {
      continue;
    }
    auto &h = out[it->second];
    if (e.kind == EngagementKind::login) {
      h.engagement.push_back({e.tick, e.value});
      ++h.attended;
    } else if (e.kind == EngagementKind::absence) {
      ++h.absences;
    }
  }
  std::map<std::pair<std::size_t, Tick>, std::pair<double, std::size_t>> acc;
  for (const auto &a : cohort.assessments) {
    auto it = slot.find(a.student_id);
    if (it == slot.end() || !a.score || a.tick > tick) {
      continue;
    }
    auto &cell = acc[{it->second, a.tick}];
    cell.first += *a.score;
    cell.second += 1;
  }
  for (const auto &[k, v] : acc) {
    out[k.first].scores.push_back({k.second, v.first / static_cast<double>(v.second)});
  }
  for (auto &h : out) {
    std::stable_sort(h.engagement.begin(), h.engagement.end(),
                     [](const TickValue &a, const TickValue &b) { return a.tick < b.tick; });
  }
  return out;
}

std::vector<InstitutionalFeatures> aggregate_features(const Cohort &cohort, Tick tick) {
  const auto histories = cohort_histories(cohort, tick);
  std::vector<InstitutionalFeatures> out;
  out.reserve(histories.size());
  for (std::size_t i = 0; i < histories.size(); ++i) {
    out.push_back(features_from_history(cohort.students[i].student_id, histories[i]));
  }
  return out;
}

// ---------------------------------------------------------------------------

ml::LogisticModel fit_risk_model(std::span<const InstitutionalFeatures> features,
                                 std::span<const int> dropped_out, std::uint64_t seed,
                                 const ml::LogisticConfig &config) {
  if (features.size() != dropped_out.size()) {
    throw InvalidArgument("fit_risk_model: features and labels differ in length");
  }
  if (features.size() < 10) {
    throw DataError("fit_risk_model: need at least 10 labeled students, found " +
                    std::to_string(features.size()));
  }
  const auto positives = std::count(dropped_out.begin(), dropped_out.end(), 1);
  if (positives == 0 || static_cast<std::size_t>(positives) == dropped_out.size()) {
    throw DataError("fit_risk_model: labels contain a single class");
  }
  ml::Matrix x;
  x.reserve(features.size());
  for (const auto &f : features) {
    const auto v = f.values();
    x.emplace_back(v.begin(), v.end());
  }
  ml::LogisticConfig c = config;
  c.seed = seed;
  ml::LogisticModel model;
  model.fit(x, dropped_out, c);
  return model;
}

RiskResult assess_risk(const ml::LogisticModel &model,
                       std::span<const InstitutionalFeatures> features, double threshold,
                       std::set<StudentId> &already_flagged, Tick tick) {
  if (!(threshold > 0.0 && threshold < 1.0)) {
    throw InvalidArgument("assess_risk: threshold must be in (0, 1)");
  }
  RiskResult out;
  for (const auto &f : features) {
    const auto v = f.values();
    RiskAssessment a;
    a.student_id = f.student_id;
    a.risk_score = model.predict_proba(v);
    a.flagged = a.risk_score >= threshold;
    if (a.flagged && already_flagged.insert(f.student_id).second) {
      Event e;
      e.tick = tick;
      e.source = AgentId::institution_agent;
      e.kind = EventKind::at_risk_flag;
      e.payload = {{"student_id", f.student_id}, {"risk_score", a.risk_score}};
      out.flags.push_back(std::move(e));
    }
    out.assessments.push_back(std::move(a));
  }
  return out;
}

RiskResult assess_risk(const ml::LogisticModel &model,
                       std::span<const InstitutionalFeatures> features, double threshold) {
  std::set<StudentId> ledger;
  return assess_risk(model, features, threshold, ledger);
}

void write_risk_csv(const std::filesystem::path &path, std::span<const RiskAssessment> rows) {
  std::vector<std::vector<std::string>> out;
  for (const auto &r : rows) {
    out.push_back({r.student_id, csv::format_double(r.risk_score), r.flagged ? "1" : "0"});
  }
  csv::write(path, {"student_id", "risk_score", "flagged"}, out);
}

std::vector<RiskAssessment> read_risk_csv(const std::filesystem::path &path) {
  const auto table = csv::read(path, {"student_id", "risk_score", "flagged"});
  std::vector<RiskAssessment> rows;
  for (std::size_t i = 0; i < table.rows.size(); ++i) {
    const auto &row = table.rows[i];
    try {
      RiskAssessment r;
      r.student_id = row[0];
      r.risk_score = csv::parse_double(row[1]);
      if (row[2] != "0" && row[2] != "1") {
        throw DataError("flagged must be 0 or 1");
      }
      r.flagged = row[2] == "1";
      rows.push_back(std::move(r));
    } catch (const DataError &e) {
      throw DataError(path.filename().string() + ":" + std::to_string(table.line_numbers[i]) +
                      ": " + e.what());
    }
  }
  return rows;
}

// ---------------------------------------------------------------------------

PrecisionRecall f1_score(const std::map<StudentId, bool> &predicted,
                         const std::map<StudentId, bool> &truth) {
  PrecisionRecall r;
  if (predicted.size() != truth.size()) {
    throw DataError("f1_score: predicted and truth cover different students");
  }
  for (const auto &[id, p] : predicted) {
    auto it = truth.find(id);
    if (it == truth.end()) {
      throw DataError("f1_score: no truth label for '" + id + "'");
    }
    const bool t = it->second;
    r.true_positives += p && t;
    r.false_positives += p && !t;
    r.false_negatives += !p && t;
    r.true_negatives += !p && !t;
  }
  const std::size_t predicted_pos = r.true_positives + r.false_positives;
  const std::size_t actual_pos = r.true_positives + r.false_negatives;
  if (predicted_pos == 0 && actual_pos == 0) {
    r.precision = r.recall = r.f1 = 1.0;
    return r;
  }
  r.precision = predicted_pos == 0 ? 0.0
                                   : static_cast<double>(r.true_positives) /
                                         static_cast<double>(predicted_pos);
  r.recall = actual_pos == 0 ? 0.0
                             : static_cast<double>(r.true_positives) /
                                   static_cast<double>(actual_pos);
  // Harmonic mean of precision and recall, written over counts.
  r.f1 = static_cast<double>(2 * r.true_positives) /
         static_cast<double>(2 * r.true_positives + r.false_positives + r.false_negatives);
  return r;
}

LoadReport load_report(const SimulationTranscript &transcript) {
  if (transcript.empty()) {
    throw InvalidArgument("load_report: empty transcript");
  }
  LoadReport r;
  for (const auto &t : transcript.ticks) {
    for (const auto &p : t.phases) {
      auto &c = r.counts[p.agent];
      if (p.phase == Phase::perceive) {
        c += p.events_processed;
        r.total += p.events_processed;
      }
    }
  }
  for (const auto &[agent, count] : r.counts) {
    r.shares[agent] =
        r.total == 0 ? 0.0 : static_cast<double>(count) / static_cast<double>(r.total);
  }
  return r;
}

// ---------------------------------------------------------------------------

InstitutionAgent::InstitutionAgent(const Cohort &cohort, RiskConfig config,
                                   std::optional<ml::LogisticModel> model)
    : config_(config), model_(std::move(model)) {
  if (config_.assess_interval == 0) {
    throw InvalidArgument("institution agent: assess_interval must be >= 1");
  }
  if (!(config_.threshold > 0.0 && config_.threshold < 1.0)) {
    throw InvalidArgument("institution agent: threshold must be in (0, 1)");
  }
  for (const auto &s : cohort.students) {
    histories_[s.student_id].credits_attempted = s.feature(kCreditsAttempted).value_or(0.0);
  }
}

std::set<EventKind> InstitutionAgent::subscriptions() const {
  std::set<EventKind> kinds(kEventKinds.begin(), kEventKinds.end());
  kinds.erase(EventKind::at_risk_flag);
  return kinds;
}

double InstitutionAgent::latest_risk(const StudentId &student) const {
  auto it = latest_risk_.find(student);
  return it == latest_risk_.end() ? 0.0 : it->second;
}

InstitutionPercepts InstitutionAgent::observe(const TickInput &input,
                                              std::span<const Event> delivered) {
  InstitutionPercepts p;
  p.tick = input.tick;
  p.active.assign(input.active_students.begin(), input.active_students.end());
  for (const auto &e : input.events) {
    auto it = histories_.find(e.student_id);
    if (it == histories_.end()) {
      continue;
    }
    if (e.kind == EngagementKind::login) {
      it->second.engagement.push_back({e.tick, e.value});
      ++it->second.attended;
    } else if (e.kind == EngagementKind::absence) {
      ++it->second.absences;
    }
  }
  for (const auto &ev : delivered) {
    ++seen_[ev.kind];
    const auto student = payload_string(ev.payload, "student_id");
    if (!student) {
      continue;
    }
    if (ev.kind == EventKind::grade_posted) {
      const auto score = payload_number(ev.payload, "score");
      const auto tick = payload_number(ev.payload, "assessment_tick");
      auto it = histories_.find(*student);
      if (score && tick && it != histories_.end()) {
        it->second.scores.push_back({static_cast<Tick>(*tick), *score});
      }
    } else if (ev.kind == EventKind::intervention_request &&
               payload_string(ev.payload, "action") ==
                   std::string(to_string(InterventionAction::escalate_to_institution))) {
      p.escalations.push_back(*student);
    }
  }
  return p;
}

InstitutionDecisions InstitutionAgent::decide(const InstitutionPercepts &percepts,
                                              const AgentMemory & /*memory*/) {
  InstitutionDecisions d;
  d.tick = percepts.tick;
  d.reviews = percepts.escalations;
  if (!model_ ||
      (static_cast<std::size_t>(percepts.tick) + 1) % config_.assess_interval != 0) {
    return d;
  }
  std::vector<InstitutionalFeatures> features;
  features.reserve(percepts.active.size());
  for (const auto &s : percepts.active) {
    features.push_back(features_from_history(s, histories_.at(s)));
  }
  auto result = assess_risk(*model_, features, config_.threshold, flagged_, percepts.tick);
  for (const auto &a : result.assessments) {
    latest_risk_[a.student_id] = a.risk_score;
  }
  d.flags = std::move(result.flags);
  return d;
}

std::vector<ActionRecord> InstitutionAgent::execute(const InstitutionDecisions &decisions,
                                                    Publisher &out) {
  std::vector<ActionRecord> actions;
  for (const auto &f : decisions.flags) {
    out.publish(f.kind, f.payload);
  }
  for (const auto &s : decisions.reviews) {
    actions.push_back({"risk_review", s, "", latest_risk(s)});
  }
  return actions;
}

Feedback InstitutionAgent::evaluate(const TickOutcome &outcome) {
  Feedback f;
  std::size_t caught = 0;
  for (const auto &s : outcome.dropped_out) {
    caught += flagged_.contains(s);
  }
  const std::size_t missed = outcome.dropped_out.size() - caught;
  caught_ += caught;
  missed_ += missed;
  f.reward = static_cast<double>(caught) - static_cast<double>(missed);
  f.memory_updates = {{"flagged", static_cast<double>(flagged_.size())},
                      {"dropouts_caught", static_cast<double>(caught_)},
                      {"dropouts_missed", static_cast<double>(missed_)}};
  for (const auto &[kind, n] : seen_) {
    f.memory_updates["seen_" + std::string(to_string(kind))] = static_cast<double>(n);
  }
  return f;
}

} // namespace auss
