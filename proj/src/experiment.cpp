#include "auss/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <future>
#include <sstream>

#include "auss/csv.hpp"
#include "auss/stats.hpp"

namespace auss {

std::string_view version() { return AUSS_VERSION; }

// ---------------------------------------------------------------------------
// Spec

void ExperimentSpec::apply_seed(std::uint64_t value) {
  seed = value;
  generator.seed = value;
  scheduler.rng_seed = value;
  policy.policy.rng_seed = value;
}

bool ExperimentSpec::wants(std::string_view metric) const {
  return std::find(metrics.begin(), metrics.end(), metric) != metrics.end();
}

void ExperimentSpec::validate() const {
  generator.validate();
  scheduler.validate();
  policy.policy.validate();
  if (policy.window_len == 0) {
    throw InvalidArgument("policy.window_len must be >= 1");
  }
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw InvalidArgument("train_fraction must be in (0, 1)");
  }
  if (!(predictor.blend_weight >= 0.0 && predictor.blend_weight <= 1.0)) {
    throw InvalidArgument("predictor.blend_weight must be in [0, 1]");
  }
  if (predictor.window_len == 0) {
    throw InvalidArgument("predictor.window_len must be >= 1");
  }
  if (!(risk.threshold > 0.0 && risk.threshold < 1.0)) {
    throw InvalidArgument("risk.threshold must be in (0, 1)");
  }
  if (risk.assess_interval == 0) {
    throw InvalidArgument("risk.assess_interval must be >= 1");
  }
  if (student.window_len == 0 || student.recommend_k == 0 || student.neighborhood == 0) {
    throw InvalidArgument("agents: gap_window, recommend_k and neighborhood must be >= 1");
  }
  if (educator.report_interval == 0) {
    throw InvalidArgument("agents.report_interval must be >= 1");
  }
  for (const auto &m : metrics) {
    if (std::find(kMetricNames.begin(), kMetricNames.end(), m) == kMetricNames.end()) {
      throw InvalidArgument("unknown metric '" + m + "'");
    }
  }
}

namespace {

void reject_unknown(const Json &j, std::initializer_list<std::string_view> known,
                    const std::string &section) {
  if (!j.is_object()) {
    throw DataError(section + " must be a JSON object");
  }
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (std::find(known.begin(), known.end(), it.key()) == known.end()) {
      throw DataError(section + ": unknown key '" + it.key() + "'");
    }
  }
}

template <typename T> void read_opt(const Json &j, const char *key, T &out) {
  if (auto it = j.find(key); it != j.end()) {
    out = it->get<T>();
  }
}

} // namespace

ExperimentSpec experiment_spec_from_json(const Json &j) {
  reject_unknown(j,
                 {"seed", "generator", "scheduler", "policy", "predictor", "risk", "agents",
                  "train_fraction", "metrics"},
                 "experiment spec");
  ExperimentSpec spec;
  try {
    if (auto it = j.find("generator"); it != j.end()) {
      spec.generator = generator_config_from_json(*it);
    }
    bool explicit_ticks = false;
    if (auto it = j.find("scheduler"); it != j.end()) {
      spec.scheduler = scheduler_config_from_json_text(it->dump());
      explicit_ticks = it->contains("max_ticks");
    }
    if (!explicit_ticks) {
      spec.scheduler.max_ticks = static_cast<Tick>(spec.generator.n_ticks);
    }
    if (auto it = j.find("policy"); it != j.end()) {
      reject_unknown(*it, {"alpha", "gamma", "epsilon", "epsilon_decay", "epsilon_min",
                           "window_len"},
                     "policy");
      auto &p = spec.policy.policy;
      read_opt(*it, "alpha", p.alpha);
      read_opt(*it, "gamma", p.gamma);
      read_opt(*it, "epsilon", p.epsilon);
      read_opt(*it, "epsilon_decay", p.epsilon_decay);
      read_opt(*it, "epsilon_min", p.epsilon_min);
      read_opt(*it, "window_len", spec.policy.window_len);
    }
    if (auto it = j.find("predictor"); it != j.end()) {
      reject_unknown(*it, {"n_trees", "max_depth", "bootstrap_fraction", "min_samples_leaf",
                           "learning_rate", "iterations", "l2", "blend_weight", "window_len",
                           "pass_threshold"},
                     "predictor");
      auto &p = spec.predictor;
      read_opt(*it, "n_trees", p.trees.n_trees);
      read_opt(*it, "max_depth", p.trees.max_depth);
      read_opt(*it, "bootstrap_fraction", p.trees.bootstrap_fraction);
      read_opt(*it, "min_samples_leaf", p.trees.min_samples_leaf);
      read_opt(*it, "learning_rate", p.temporal.learning_rate);
      read_opt(*it, "iterations", p.temporal.iterations);
      read_opt(*it, "l2", p.temporal.l2);
      read_opt(*it, "blend_weight", p.blend_weight);
      read_opt(*it, "window_len", p.window_len);
      read_opt(*it, "pass_threshold", p.pass_threshold);
    }
    if (auto it = j.find("risk"); it != j.end()) {
      reject_unknown(*it, {"threshold", "assess_interval", "learning_rate", "iterations", "l2"},
                     "risk");
      read_opt(*it, "threshold", spec.risk.threshold);
      read_opt(*it, "assess_interval", spec.risk.assess_interval);
      read_opt(*it, "learning_rate", spec.risk.logistic.learning_rate);
      read_opt(*it, "iterations", spec.risk.logistic.iterations);
      read_opt(*it, "l2", spec.risk.logistic.l2);
    }
    if (auto it = j.find("agents"); it != j.end()) {
      reject_unknown(*it, {"gap_window", "recommend_k", "neighborhood", "report_interval"},
                     "agents");
      read_opt(*it, "gap_window", spec.student.window_len);
      read_opt(*it, "recommend_k", spec.student.recommend_k);
      read_opt(*it, "neighborhood", spec.student.neighborhood);
      read_opt(*it, "report_interval", spec.educator.report_interval);
    }
    read_opt(j, "train_fraction", spec.train_fraction);
    if (auto it = j.find("metrics"); it != j.end()) {
      spec.metrics = it->get<std::vector<std::string>>();
    }
    spec.apply_seed(j.contains("seed") ? j["seed"].get<std::uint64_t>() : spec.generator.seed);
  } catch (const Json::exception &e) {
    throw DataError(std::string("experiment spec: ") + e.what());
  }
  spec.validate();
  return spec;
}

ExperimentSpec load_experiment_spec(const std::filesystem::path &path) {
  std::ifstream in(path);
  if (!in) {
    throw DataError("cannot open " + path.string());
  }
  Json j;
  try {
    j = Json::parse(in);
  } catch (const Json::parse_error &e) {
    throw DataError(path.filename().string() + ": " + e.what());
  }
  return experiment_spec_from_json(j);
}

Json experiment_spec_to_json(const ExperimentSpec &spec) {
  Json j;
  j["seed"] = spec.seed;
  j["generator"] = generator_config_to_json(spec.generator);
  Json order = Json::array();
  for (auto a : spec.scheduler.agent_order) {
    order.push_back(std::string(to_string(a)));
  }
  j["scheduler"] = {{"max_ticks", spec.scheduler.max_ticks}, {"agent_order", order}};
  if (spec.scheduler.bus_capacity) {
    j["scheduler"]["bus_capacity"] = *spec.scheduler.bus_capacity;
  }
  const auto &p = spec.policy.policy;
  j["policy"] = {{"alpha", p.alpha},
                 {"gamma", p.gamma},
                 {"epsilon", p.epsilon},
                 {"epsilon_decay", p.epsilon_decay},
                 {"epsilon_min", p.epsilon_min},
                 {"window_len", spec.policy.window_len}};
  const auto &pr = spec.predictor;
  j["predictor"] = {{"n_trees", pr.trees.n_trees},
                    {"max_depth", pr.trees.max_depth},
                    {"bootstrap_fraction", pr.trees.bootstrap_fraction},
                    {"min_samples_leaf", pr.trees.min_samples_leaf},
                    {"learning_rate", pr.temporal.learning_rate},
                    {"iterations", pr.temporal.iterations},
                    {"l2", pr.temporal.l2},
                    {"blend_weight", pr.blend_weight},
                    {"window_len", pr.window_len},
                    {"pass_threshold", pr.pass_threshold}};
  j["risk"] = {{"threshold", spec.risk.threshold},
               {"assess_interval", spec.risk.assess_interval},
               {"learning_rate", spec.risk.logistic.learning_rate},
               {"iterations", spec.risk.logistic.iterations},
               {"l2", spec.risk.logistic.l2}};
  j["agents"] = {{"gap_window", spec.student.window_len},
                 {"recommend_k", spec.student.recommend_k},
                 {"neighborhood", spec.student.neighborhood},
                 {"report_interval", spec.educator.report_interval}};
  j["train_fraction"] = spec.train_fraction;
  j["metrics"] = spec.metrics;
  return j;
}

// ---------------------------------------------------------------------------
// Metrics

MetricsReport compute_metrics(const ExperimentTranscript &transcript) {
  MetricsReport r;
  r.metadata = transcript.metadata;
  const auto &meta = transcript.metadata;
  auto wants = [&meta](std::string_view m) {
    return std::find(meta.metrics.begin(), meta.metrics.end(), m) != meta.metrics.end();
  };
  const auto &ev = transcript.evaluation;

  if (wants("recommendation")) {
    std::size_t hits = 0;
    for (const auto &rec : ev.recommendations) {
      if (!rec.truth) {
        continue;
      }
      ++r.top1_evaluated;
      hits += rec.recommended == rec.truth;
    }
    if (r.top1_evaluated > 0) {
      r.top1_accuracy = static_cast<double>(hits) / static_cast<double>(r.top1_evaluated);
    }
  }

  if (wants("prediction") && !ev.predictions.empty()) {
    std::size_t correct = 0;
    double err = 0.0;
    double base = 0.0;
    for (const auto &p : ev.predictions) {
      correct += (p.predicted >= meta.prediction_threshold) ==
                 (p.ability >= meta.prediction_threshold);
      err += std::abs(p.predicted - p.ability);
      base += std::abs(meta.train_mean_ability - p.ability);
    }
    const auto n = static_cast<double>(ev.predictions.size());
    r.prediction_accuracy = static_cast<double>(correct) / n;
    r.prediction_mae = err / n;
    r.baseline_mae = base / n;
  }

  if (wants("grading")) {
    std::vector<GradeResult> auto_grades;
    for (const auto &t : transcript.simulation.ticks) {
      for (const auto &a : t.actions) {
        if (a.agent == AgentId::educator_agent && a.action.kind == "grade") {
          auto_grades.push_back(
              {a.action.subject, a.action.object, a.action.value, a.action.value > 0.0, false});
        }
      }
    }
    if (!auto_grades.empty() || !ev.reference_grades.empty()) {
      r.grading_match_rate = grading_match_rate(auto_grades, ev.reference_grades);
      r.graded_items = auto_grades.size();
    }
  }

  if (wants("risk") && !ev.risk.empty()) {
    std::map<StudentId, bool> predicted;
    std::map<StudentId, bool> truth;
    for (const auto &x : ev.risk) {
      predicted[x.student] = x.flagged;
      truth[x.student] = x.dropped_out;
    }
    r.risk = f1_score(predicted, truth);
  }

  r.latency = measure_phase_latency(transcript.simulation);
  r.load = load_report(transcript.simulation);
  for (const auto &t : transcript.simulation.ticks) {
    r.events_published += t.events.size();
  }
  return r;
}

namespace {

Json opt_json(const std::optional<double> &v) { return v ? Json(*v) : Json(nullptr); }

std::optional<double> opt_double(const Json &j, const char *key) {
  const Json &v = require(j, key);
  if (v.is_null()) {
    return std::nullopt;
  }
  return v.get<double>();
}

} // namespace

Json metrics_to_json(const MetricsReport &r, bool include_timings) {
  Json j;
  j["recommendation"] = {{"top1_accuracy", opt_json(r.top1_accuracy)},
                         {"evaluated", r.top1_evaluated}};
  j["prediction"] = {{"accuracy", opt_json(r.prediction_accuracy)},
                     {"mae", opt_json(r.prediction_mae)},
                     {"baseline_mae", opt_json(r.baseline_mae)}};
  j["grading"] = {{"match_rate", opt_json(r.grading_match_rate)}, {"items", r.graded_items}};
  if (r.risk) {
    j["risk"] = {{"precision", r.risk->precision},
                 {"recall", r.risk->recall},
                 {"f1", r.risk->f1},
                 {"true_positives", r.risk->true_positives},
                 {"false_positives", r.risk->false_positives},
                 {"false_negatives", r.risk->false_negatives},
                 {"true_negatives", r.risk->true_negatives}};
  } else {
    j["risk"] = nullptr;
  }
  Json load = Json::object();
  for (const auto &[agent, count] : r.load.counts) {
    load[std::string(to_string(agent))] = {{"events_processed", count},
                                           {"share", r.load.shares.at(agent)}};
  }
  j["load"] = {{"total", r.load.total}, {"agents", load}};
  j["events_published"] = r.events_published;
  if (include_timings) {
    Json lat = Json::object();
    for (const auto &[agent, s] : r.latency) {
      lat[std::string(to_string(agent))] = {
          {"mean_ms", s.mean_ms}, {"p95_ms", s.p95_ms}, {"samples", s.samples}};
    }
    j["latency_ms"] = lat;
  }
  const auto &m = r.metadata;
  j["metadata"] = {{"seed", m.seed},
                   {"version", m.version},
                   {"n_students", m.n_students},
                   {"n_ticks", m.n_ticks},
                   {"prediction_threshold", m.prediction_threshold},
                   {"train_mean_ability", m.train_mean_ability},
                   {"metrics", m.metrics}};
  if (include_timings) {
    j["metadata"]["durations_ms"] = m.durations_ms;
  }
  return j;
}

MetricsReport metrics_from_json(const Json &j) {
  MetricsReport r;
  try {
    const Json &rec = require(j, "recommendation");
    r.top1_accuracy = opt_double(rec, "top1_accuracy");
    r.top1_evaluated = require(rec, "evaluated").get<std::size_t>();
    const Json &pred = require(j, "prediction");
    r.prediction_accuracy = opt_double(pred, "accuracy");
    r.prediction_mae = opt_double(pred, "mae");
    r.baseline_mae = opt_double(pred, "baseline_mae");
    const Json &grading = require(j, "grading");
    r.grading_match_rate = opt_double(grading, "match_rate");
    r.graded_items = require(grading, "items").get<std::size_t>();
    if (const Json &risk = require(j, "risk"); !risk.is_null()) {
      PrecisionRecall p;
      p.precision = require(risk, "precision").get<double>();
      p.recall = require(risk, "recall").get<double>();
      p.f1 = require(risk, "f1").get<double>();
      p.true_positives = require(risk, "true_positives").get<std::size_t>();
      p.false_positives = require(risk, "false_positives").get<std::size_t>();
      p.false_negatives = require(risk, "false_negatives").get<std::size_t>();
      p.true_negatives = require(risk, "true_negatives").get<std::size_t>();
      r.risk = p;
    }
    const Json &load = require(j, "load");
    r.load.total = require(load, "total").get<std::size_t>();
    const Json &agents = require(load, "agents");
    for (auto it = agents.begin(); it != agents.end(); ++it) {
      const AgentId a = parse_agent_id(it.key());
      r.load.counts[a] = require(*it, "events_processed").get<std::size_t>();
      r.load.shares[a] = require(*it, "share").get<double>();
    }
    r.events_published = require(j, "events_published").get<std::size_t>();
    if (auto it = j.find("latency_ms"); it != j.end()) {
      for (auto a = it->begin(); a != it->end(); ++a) {
        r.latency[parse_agent_id(a.key())] = {require(*a, "mean_ms").get<double>(),
                                              require(*a, "p95_ms").get<double>(),
                                              require(*a, "samples").get<std::size_t>()};
      }
    }
    const Json &m = require(j, "metadata");
    r.metadata.seed = require(m, "seed").get<std::uint64_t>();
    r.metadata.version = require(m, "version").get<std::string>();
    r.metadata.n_students = require(m, "n_students").get<std::size_t>();
    r.metadata.n_ticks = require(m, "n_ticks").get<std::size_t>();
    r.metadata.prediction_threshold = require(m, "prediction_threshold").get<double>();
    r.metadata.train_mean_ability = require(m, "train_mean_ability").get<double>();
    r.metadata.metrics = require(m, "metrics").get<std::vector<std::string>>();
    if (auto it = m.find("durations_ms"); it != m.end()) {
      r.metadata.durations_ms = it->get<std::map<std::string, double>>();
    }
  } catch (const Json::exception &e) {
    throw DataError(std::string("malformed metrics report: ") + e.what());
  }
  return r;
}

bool same_metrics(const MetricsReport &a, const MetricsReport &b) {
  return metrics_to_json(a, false) == metrics_to_json(b, false);
}

// ---------------------------------------------------------------------------
// Transcript file

std::uint64_t fnv1a64(std::string_view data, std::uint64_t seed) {
  std::uint64_t h = seed;
  for (unsigned char c : data) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

namespace {

constexpr std::string_view kTranscriptFormat = "auss-transcript";

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

Json header_json(const RunMetadata &m) {
  Json j;
  j["type"] = "header";
  j["format"] = kTranscriptFormat;
  j["format_version"] = kTranscriptFormatVersion;
  j["version"] = m.version;
  j["seed"] = m.seed;
  j["n_students"] = m.n_students;
  j["n_ticks"] = m.n_ticks;
  j["prediction_threshold"] = m.prediction_threshold;
  j["train_mean_ability"] = m.train_mean_ability;
  j["metrics"] = m.metrics;
  j["durations_ms"] = m.durations_ms;
  return j;
}

Json opt_string(const std::optional<std::string> &s) { return s ? Json(*s) : Json(nullptr); }

} // namespace

std::vector<std::string> experiment_transcript_lines(const ExperimentTranscript &t) {
  std::vector<std::string> lines;
  lines.push_back(header_json(t.metadata).dump());
  for (auto &l : transcript_lines(t.simulation, true)) {
    lines.push_back(std::move(l));
  }
  for (const auto &r : t.evaluation.recommendations) {
    Json j;
    j["type"] = "eval_recommendation";
    j["student_id"] = r.student;
    j["recommended"] = opt_string(r.recommended);
    j["truth"] = opt_string(r.truth);
    lines.push_back(j.dump());
  }
  for (const auto &p : t.evaluation.predictions) {
    Json j;
    j["type"] = "eval_prediction";
    j["student_id"] = p.student;
    j["predicted"] = p.predicted;
    j["ability"] = p.ability;
    lines.push_back(j.dump());
  }
  for (const auto &r : t.evaluation.risk) {
    Json j;
    j["type"] = "eval_risk";
    j["student_id"] = r.student;
    j["risk_score"] = r.risk_score;
    j["flagged"] = r.flagged;
    j["dropped_out"] = r.dropped_out;
    lines.push_back(j.dump());
  }
  for (const auto &g : t.evaluation.reference_grades) {
    Json j;
    j["type"] = "eval_reference_grade";
    j["student_id"] = g.student_id;
    j["item_id"] = g.item_id;
    j["awarded"] = g.awarded;
    lines.push_back(j.dump());
  }
  std::uint64_t h = fnv1a64("");
  for (const auto &l : lines) {
    h = fnv1a64(l, h);
    h = fnv1a64("\n", h);
  }
  Json footer;
  footer["type"] = "footer";
  footer["records"] = lines.size();
  footer["checksum"] = hex64(h);
  lines.push_back(footer.dump());
  return lines;
}

void write_experiment_transcript(const std::filesystem::path &path,
                                 const ExperimentTranscript &transcript) {
  std::ofstream out(path);
  if (!out) {
    throw Error("cannot write " + path.string());
  }
  for (const auto &l : experiment_transcript_lines(transcript)) {
    out << l << '\n';
  }
  if (!out) {
    throw Error("write failed for " + path.string());
  }
}

ExperimentTranscript parse_experiment_transcript(std::span<const std::string> all) {
  std::vector<std::string_view> lines;
  for (const auto &l : all) {
    if (!l.empty()) {
      lines.push_back(l);
    }
  }
  if (lines.empty()) {
    throw DataError("empty transcript");
  }
  auto parse_line = [](std::string_view text, std::size_t line_no) {
    try {
      return Json::parse(text);
    } catch (const Json::parse_error &) {
      throw DataError("transcript line " + std::to_string(line_no) + ": malformed JSON");
    }
  };

  const Json header = parse_line(lines.front(), 1);
  if (!header.is_object() || header.value("type", "") != "header" ||
      header.value("format", "") != kTranscriptFormat) {
    throw IncompatibleTranscript("not an experiment transcript (missing header)");
  }
  const int format_version = header.value("format_version", -1);
  if (format_version != kTranscriptFormatVersion) {
    throw IncompatibleTranscript("transcript format version " + std::to_string(format_version) +
                                 " is not supported (expected " +
                                 std::to_string(kTranscriptFormatVersion) + ")");
  }

  const Json footer = parse_line(lines.back(), lines.size());
  if (lines.size() < 2 || !footer.is_object() || footer.value("type", "") != "footer") {
    throw DataError("transcript is truncated (no footer)");
  }
  std::uint64_t h = fnv1a64("");
  for (std::size_t i = 0; i + 1 < lines.size(); ++i) {
    h = fnv1a64(lines[i], h);
    h = fnv1a64("\n", h);
  }
  if (footer.value("checksum", "") != hex64(h) ||
      footer.value("records", std::size_t{0}) != lines.size() - 1) {
    throw DataError("transcript checksum mismatch: content was modified or truncated");
  }

  ExperimentTranscript t;
  try {
    auto &m = t.metadata;
    m.version = require(header, "version").get<std::string>();
    m.seed = require(header, "seed").get<std::uint64_t>();
    m.n_students = require(header, "n_students").get<std::size_t>();
    m.n_ticks = require(header, "n_ticks").get<std::size_t>();
    m.prediction_threshold = require(header, "prediction_threshold").get<double>();
    m.train_mean_ability = require(header, "train_mean_ability").get<double>();
    m.metrics = require(header, "metrics").get<std::vector<std::string>>();
    m.durations_ms = require(header, "durations_ms").get<std::map<std::string, double>>();

    for (std::size_t i = 1; i + 1 < lines.size(); ++i) {
      const Json j = parse_line(lines[i], i + 1);
      const std::string type = require(j, "type").get<std::string>();
      auto opt_str = [&j](const char *key) -> std::optional<std::string> {
        const Json &v = require(j, key);
        return v.is_null() ? std::nullopt : std::optional<std::string>(v.get<std::string>());
      };
      if (type == "eval_recommendation") {
        t.evaluation.recommendations.push_back(
            {require(j, "student_id").get<std::string>(), opt_str("recommended"), opt_str("truth")});
      } else if (type == "eval_prediction") {
        t.evaluation.predictions.push_back({require(j, "student_id").get<std::string>(),
                                            require(j, "predicted").get<double>(),
                                            require(j, "ability").get<double>()});
      } else if (type == "eval_risk") {
        t.evaluation.risk.push_back(
            {require(j, "student_id").get<std::string>(), require(j, "risk_score").get<double>(),
             require(j, "flagged").get<bool>(), require(j, "dropped_out").get<bool>()});
      } else if (type == "eval_reference_grade") {
        const double awarded = require(j, "awarded").get<double>();
        t.evaluation.reference_grades.push_back({require(j, "student_id").get<std::string>(),
                                                 require(j, "item_id").get<std::string>(),
                                                 awarded, awarded > 0.0, false});
      } else if (!add_transcript_record(t.simulation, j)) {
        throw DataError("transcript line " + std::to_string(i + 1) + ": unknown record type '" +
                        type + "'");
      }
    }
  } catch (const Json::exception &e) {
    throw DataError(std::string("malformed transcript: ") + e.what());
  }
  return t;
}

ExperimentTranscript read_experiment_transcript(const std::filesystem::path &path) {
  std::ifstream in(path);
  if (!in) {
    throw DataError("cannot open " + path.string());
  }
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    lines.push_back(std::move(line));
  }
  return parse_experiment_transcript(lines);
}

// ---------------------------------------------------------------------------
// Pipeline

namespace {

using Clock = std::chrono::steady_clock;

template <typename F>
auto run_stage(const std::string &name, std::map<std::string, double> &durations, F &&body) {
  const auto start = Clock::now();
  try {
    if constexpr (std::is_void_v<decltype(body())>) {
      body();
      durations[name] = std::chrono::duration<double, std::milli>(Clock::now() - start).count();
    } else {
      auto out = body();
      durations[name] = std::chrono::duration<double, std::milli>(Clock::now() - start).count();
      return out;
    }
  } catch (const StageError &) {
    throw;
  } catch (const std::exception &e) {
    throw StageError(name, e.what());
  }
}

struct FittedModels {
  PredictorFit predictor;
  ml::LogisticModel risk;
  std::unordered_map<StudentId, InstitutionalFeatures> features;
  double train_mean_ability = 0.0;
  bool risk_fallback = false;
};

bool dropped_within(const StudentTruth &t, Tick horizon) {
  return t.dropped_out && t.dropout_tick && *t.dropout_tick < horizon;
}

FittedModels fit_models(const Cohort &cohort, const ExperimentSpec &spec) {
  if (!cohort.ground_truth) {
    throw DataError("cohort has no ground truth; training labels are required");
  }
  FittedModels m;
  m.predictor = fit_predictors(cohort, spec.train_fraction, spec.seed, spec.predictor);

  const Tick horizon = spec.scheduler.max_ticks;
  for (auto &f : aggregate_features(cohort, horizon - 1)) {
    m.features.emplace(f.student_id, std::move(f));
  }
  std::vector<InstitutionalFeatures> x;
  std::vector<int> y;
  std::vector<double> abilities;
  for (const auto &id : m.predictor.split.train) {
    const auto *truth = cohort.ground_truth->find(id);
    x.push_back(m.features.at(id));
    y.push_back(dropped_within(*truth, horizon) ? 1 : 0);
    abilities.push_back(truth->ability);
  }
  m.train_mean_ability = stats::mean(abilities);
  try {
    m.risk = fit_risk_model(x, y, spec.seed, spec.risk.logistic);
  } catch (const DataError &) {
    // Too few students or a single class: score everyone at the training
    // base rate instead of aborting small runs.
    const double positives = static_cast<double>(std::count(y.begin(), y.end(), 1));
    const double rate = std::clamp(positives / static_cast<double>(y.size()), 1e-3, 1.0 - 1e-3);
    m.risk = ml::LogisticModel::from_weights(
        std::vector<double>(kInstitutionalFeatureCount, 0.0), std::log(rate / (1.0 - rate)));
    m.risk_fallback = true;
  }
  return m;
}

ExperimentResult simulate_with_durations(const Cohort &cohort, const ExperimentSpec &spec,
                                         std::map<std::string, double> durations) {
  spec.validate();
  ExperimentResult result;
  auto models = run_stage("fit", durations, [&] { return fit_models(cohort, spec); });

  StudentAgent student(cohort, spec.student, models.predictor.predictor);
  EducatorAgent educator(cohort, spec.educator);
  InstitutionAgent institution(cohort, spec.risk, models.risk);
  QLearningDriver driver(spec.policy,
                         [&institution](const StudentId &s) { return institution.latest_risk(s); });
  std::array<Agent *, 3> agents = {&student, &educator, &institution};

  auto &transcript = result.transcript;
  transcript.simulation = run_stage(
      "simulate", durations, [&] { return run(cohort, agents, spec.scheduler, &driver); });

  run_stage("evaluate", durations, [&] {
    const Tick horizon = spec.scheduler.max_ticks;
    const auto &truth = *cohort.ground_truth;
    auto &ev = transcript.evaluation;
    const auto &test = models.predictor.split.test;

    if (spec.wants("recommendation")) {
      const auto &matrix = student.interactions();
      for (const auto &id : test) {
        RecommendationEval r;
        r.student = id;
        const auto row = *matrix.row_index(id);
        for (const auto &res : truth.find(id)->preference_ranking) {
          const auto col = matrix.col_index(res);
          if (col && !matrix.at(row, *col)) {
            r.truth = res;
            break;
          }
        }
        const auto rec = recommend_top_k(matrix, id, 1, spec.student.neighborhood);
        if (!rec.ranked.empty()) {
          r.recommended = rec.ranked.front().resource_id;
        }
        ev.recommendations.push_back(std::move(r));
      }
    }

    if (spec.wants("prediction")) {
      const EventIndex index(cohort);
      std::unordered_map<StudentId, const StudentRecord *> records;
      for (const auto &s : cohort.students) {
        records.emplace(s.student_id, &s);
      }
      for (const auto &id : test) {
        const auto p = models.predictor.predictor.predict(
            *records.at(id), latest_lag_features(index, id, spec.predictor.window_len));
        ev.predictions.push_back({id, p.predicted_score, truth.find(id)->ability});
      }
    }

    for (const auto &s : cohort.students) {
      const auto &f = models.features.at(s.student_id);
      const double score = models.risk.predict_proba(f.values());
      result.risk.push_back({s.student_id, score, score >= spec.risk.threshold});
    }
    if (spec.wants("risk")) {
      std::unordered_map<StudentId, std::size_t> pos;
      for (std::size_t i = 0; i < result.risk.size(); ++i) {
        pos.emplace(result.risk[i].student_id, i);
      }
      for (const auto &id : test) {
        const auto &a = result.risk[pos.at(id)];
        ev.risk.push_back({id, a.risk_score, a.flagged, dropped_within(*truth.find(id), horizon)});
      }
    }

    if (spec.wants("grading")) {
      std::unordered_map<ItemId, double> points;
      for (const auto &k : cohort.answer_keys) {
        points.emplace(k.item_id, k.points);
      }
      for (const auto &a : cohort.assessments) {
        auto it = points.find(a.item_id);
        if (a.tick >= horizon || !a.score || it == points.end()) {
          continue;
        }
        const double awarded = *a.score * it->second;
        ev.reference_grades.push_back({a.student_id, a.item_id, awarded, awarded > 0.0, false});
      }
    }

    auto &m = transcript.metadata;
    m.seed = spec.seed;
    m.version = std::string(version());
    m.n_students = cohort.students.size();
    m.n_ticks = horizon;
    m.prediction_threshold = spec.predictor.pass_threshold;
    m.train_mean_ability = models.train_mean_ability;
    m.metrics = spec.metrics;
  });

  transcript.metadata.durations_ms = durations;
  result.report = run_stage("evaluate", durations, [&] { return compute_metrics(transcript); });
  result.class_reports = educator.reports();
  result.q_table = driver.table();
  Json feature_names = Json::array();
  for (auto n : institutional_feature_names()) {
    feature_names.push_back(std::string(n));
  }
  result.models = {{"predictor", models.predictor.predictor.to_json()},
                   {"risk_model", models.risk.to_json()},
                   {"risk_model_kind", models.risk_fallback ? "base_rate" : "fitted"},
                   {"risk_features", feature_names}};
  return result;
}

} // namespace

ExperimentResult simulate_cohort(const Cohort &cohort, const ExperimentSpec &spec) {
  auto result = simulate_with_durations(cohort, spec, {});
  if (!spec.output_dir.empty()) {
    write_run_outputs(result, spec.output_dir);
  }
  return result;
}

ExperimentResult run_experiment(const ExperimentSpec &spec) {
  try {
    spec.validate();
  } catch (const std::exception &e) {
    throw StageError("validate", e.what());
  }
  std::map<std::string, double> durations;
  const Cohort cohort =
      run_stage("generate", durations, [&] { return generate_cohort(spec.generator); });
  auto result = simulate_with_durations(cohort, spec, durations);
  if (!spec.output_dir.empty()) {
    write_run_outputs(result, spec.output_dir);
  }
  return result;
}

// ---------------------------------------------------------------------------
// Outputs

CsvSeries accuracy_series(const MetricsReport &r) {
  CsvSeries s{{"component", "metric", "value"}, {}};
  auto add = [&s](const char *component, const char *metric, const std::optional<double> &v) {
    if (v) {
      s.rows.push_back({component, metric, csv::format_double(*v)});
    }
  };
  add("recommendation", "top1_accuracy", r.top1_accuracy);
  add("prediction", "accuracy", r.prediction_accuracy);
  add("grading", "match_rate", r.grading_match_rate);
  if (r.risk) {
    add("risk", "precision", r.risk->precision);
    add("risk", "recall", r.risk->recall);
    add("risk", "f1", r.risk->f1);
  }
  return s;
}

CsvSeries latency_series(const MetricsReport &r) {
  CsvSeries s{{"agent", "mean_ms", "p95_ms", "samples"}, {}};
  for (const auto &[agent, l] : r.latency) {
    s.rows.push_back({std::string(to_string(agent)), csv::format_double(l.mean_ms),
                      csv::format_double(l.p95_ms), std::to_string(l.samples)});
  }
  return s;
}

CsvSeries load_series(const MetricsReport &r) {
  CsvSeries s{{"agent", "events_processed", "share"}, {}};
  for (const auto &[agent, count] : r.load.counts) {
    s.rows.push_back({std::string(to_string(agent)), std::to_string(count),
                      csv::format_double(r.load.shares.at(agent))});
  }
  return s;
}

namespace {

void write_json(const std::filesystem::path &path, const Json &j) {
  std::ofstream out(path);
  if (!out) {
    throw Error("cannot write " + path.string());
  }
  out << j.dump(2) << '\n';
}

} // namespace

void write_run_outputs(const ExperimentResult &result, const std::filesystem::path &dir) {
  namespace fs = std::filesystem;
  const fs::path staging = dir.parent_path() / (dir.filename().string() + ".staging");
  try {
    fs::remove_all(staging);
    fs::create_directories(staging);
    write_json(staging / "report.json", metrics_to_json(result.report, true));
    write_json(staging / "report_deterministic.json", metrics_to_json(result.report, false));
    write_experiment_transcript(staging / "transcript.jsonl", result.transcript);
    for (const auto &[name, series] :
         {std::pair{"accuracy_by_component.csv", accuracy_series(result.report)},
          std::pair{"latency_by_agent.csv", latency_series(result.report)},
          std::pair{"load_by_agent.csv", load_series(result.report)}}) {
      csv::write(staging / name, series.header, series.rows);
    }
    write_risk_csv(staging / "risk.csv", result.risk);
    export_q_table(result.q_table, staging / "q_table.csv");
    Json reports = Json::array();
    for (const auto &r : result.class_reports) {
      reports.push_back(report_to_json(r));
    }
    write_json(staging / "class_reports.json", reports);
    write_json(staging / "models.json", result.models);
    if (fs::exists(dir)) {
      fs::remove_all(dir);
    }
    fs::rename(staging, dir);
  } catch (const std::exception &e) {
    std::error_code ignored;
    fs::remove_all(staging, ignored);
    throw StageError("write", e.what());
  }
}

std::vector<SweepEntry> run_sweep(const ExperimentSpec &spec, std::size_t runs) {
  if (runs == 0) {
    throw InvalidArgument("run_sweep: runs must be >= 1");
  }
  std::vector<std::future<SweepEntry>> jobs;
  for (std::size_t i = 0; i < runs; ++i) {
    ExperimentSpec s = spec;
    s.apply_seed(spec.seed + i);
    if (!spec.output_dir.empty()) {
      s.output_dir = spec.output_dir / ("seed-" + std::to_string(s.seed));
    }
    jobs.push_back(std::async(std::launch::async, [s] {
      return SweepEntry{s.seed, run_experiment(s).report};
    }));
  }
  std::vector<SweepEntry> out;
  for (auto &j : jobs) {
    out.push_back(j.get());
  }
  return out;
}

Json sweep_to_json(const std::vector<SweepEntry> &entries) {
  Json runs = Json::array();
  for (const auto &e : entries) {
    runs.push_back({{"seed", e.seed}, {"report", metrics_to_json(e.report, true)}});
  }
  return {{"runs", runs}};
}

} // namespace auss
