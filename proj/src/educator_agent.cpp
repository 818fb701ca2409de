#include "auss/educator_agent.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <sstream>

#include "auss/csv.hpp"
#include "auss/random.hpp"
#include "auss/stats.hpp"

namespace auss {

std::string normalize_answer(std::string_view text) {
  std::string out;
  bool pending_space = false;
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isspace(c)) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) {
      out += ' ';
      pending_space = false;
    }
    out += static_cast<char>(std::tolower(c));
  }
  return out;
}

GradeResult auto_grade(const AssessmentRecord &submission, const AnswerKey &key) {
  if (submission.item_id != key.item_id) {
    throw InvalidArgument("auto_grade: submission for '" + submission.item_id +
                          "' graded against key '" + key.item_id + "'");
  }
  GradeResult g;
  g.student_id = submission.student_id;
  g.item_id = submission.item_id;
  if (key.kind == AnswerKind::numeric) {
    const double canonical = csv::parse_double(normalize_answer(key.canonical));
    try {
      const double answer = csv::parse_double(normalize_answer(submission.response));
      g.matched = std::abs(answer - canonical) <= key.tolerance.value_or(0.0);
    } catch (const DataError &) {
      g.parse_failed = true;
    }
  } else {
    g.matched = normalize_answer(submission.response) == normalize_answer(key.canonical);
  }
  g.awarded = g.matched ? key.points : 0.0;
  return g;
}

double grading_match_rate(std::span<const GradeResult> results,
                          std::span<const GradeResult> reference) {
  if (results.empty() && reference.empty()) {
    throw InvalidArgument("grading_match_rate: no grades to compare");
  }
  using Key = std::pair<StudentId, ItemId>;
  std::map<Key, double> ref;
  for (const auto &g : reference) {
    if (!ref.emplace(Key{g.student_id, g.item_id}, g.awarded).second) {
      throw DataError("duplicate reference grade for " + g.student_id + "/" + g.item_id);
    }
  }
  std::set<Key> seen;
  std::vector<std::string> missing;
  std::size_t equal = 0;
  for (const auto &g : results) {
    Key k{g.student_id, g.item_id};
    if (!seen.insert(k).second) {
      throw DataError("duplicate grade for " + g.student_id + "/" + g.item_id);
    }
    auto it = ref.find(k);
    if (it == ref.end()) {
      missing.push_back(g.student_id + "/" + g.item_id + " (no reference)");
      continue;
    }
    equal += it->second == g.awarded;
  }
  for (const auto &[k, v] : ref) {
    if (!seen.contains(k)) {
      missing.push_back(k.first + "/" + k.second + " (not graded)");
    }
  }
  if (!missing.empty()) {
    std::string msg = "grading_match_rate: pair sets differ in " + std::to_string(missing.size()) +
                      " pairs:";
    for (std::size_t i = 0; i < missing.size() && i < 10; ++i) {
      msg += " " + missing[i];
    }
    throw DataError(msg);
  }
  return static_cast<double>(equal) / static_cast<double>(results.size());
}

namespace {

const std::vector<std::string> kKeyColumns = {"item_id", "kind", "canonical", "tolerance",
                                              "points"};

std::string at_line(const std::filesystem::path &path, std::size_t line) {
  return path.filename().string() + ":" + std::to_string(line) + ": ";
}

} // namespace

void write_answer_keys(const std::filesystem::path &path, std::span<const AnswerKey> keys) {
  std::vector<std::vector<std::string>> rows;
  for (const auto &k : keys) {
    rows.push_back({k.item_id, std::string(to_string(k.kind)), k.canonical,
                    k.tolerance ? csv::format_double(*k.tolerance) : "",
                    csv::format_double(k.points)});
  }
  csv::write(path, kKeyColumns, rows);
}

std::vector<AnswerKey> read_answer_keys(const std::filesystem::path &path) {
  const auto table = csv::read(path, kKeyColumns);
  std::vector<AnswerKey> keys;
  for (std::size_t i = 0; i < table.rows.size(); ++i) {
    const auto &row = table.rows[i];
    try {
      AnswerKey k;
      k.item_id = row[0];
      if (k.item_id.empty()) {
        throw DataError("empty item_id");
      }
      k.kind = parse_answer_kind(row[1]);
      k.canonical = row[2];
      if (!row[3].empty()) {
        k.tolerance = csv::parse_double(row[3]);
      }
      if ((k.kind == AnswerKind::numeric) != k.tolerance.has_value()) {
        throw DataError("tolerance must be set exactly for numeric items");
      }
      k.points = csv::parse_double(row[4]);
      if (!(k.points > 0.0)) {
        throw DataError("points must be positive");
      }
      keys.push_back(std::move(k));
    } catch (const DataError &e) {
      throw DataError(at_line(path, table.line_numbers[i]) + e.what());
    }
  }
  return keys;
}

// ---------------------------------------------------------------------------

ClassReport generate_class_report(std::span<const StudentActivity> activity,
                                  const std::string &class_id, Tick begin, Tick end,
                                  const std::set<StudentId> &at_risk) {
  if (begin > end) {
    throw InvalidArgument("generate_class_report: empty window");
  }
  ClassReport report;
  report.class_id = class_id;
  report.window_begin = begin;
  report.window_end = end;
  auto in_window = [begin, end](Tick t) { return t >= begin && t <= end; };

  std::vector<double> student_means;
  for (const auto &a : activity) {
    if (a.class_id != class_id) {
      continue;
    }
    StudentSummary s;
    s.student_id = a.student_id;
    std::vector<double> scores;
    for (const auto &p : a.scores) {
      if (in_window(p.tick)) {
        scores.push_back(p.value);
      }
    }
    std::vector<double> eng;
    for (const auto &p : a.engagement) {
      if (in_window(p.tick)) {
        eng.push_back(p.value);
      }
    }
    if (!scores.empty()) {
      s.mean_score = stats::mean(scores);
      student_means.push_back(*s.mean_score);
    }
    s.engagement_mean = stats::mean(eng);
    s.at_risk = at_risk.contains(a.student_id);
    report.at_risk_count += s.at_risk;
    report.students.push_back(std::move(s));
  }
  if (report.students.empty()) {
    throw DataError("unknown class id '" + class_id + "'");
  }
  report.scored_students = student_means.size();
  if (!student_means.empty()) {
    report.mean_score = stats::mean(student_means);
    report.median_score = stats::median(student_means);
  }
  return report;
}

std::vector<StudentActivity> activity_from_cohort(const Cohort &cohort) {
  std::vector<StudentActivity> out;
  std::unordered_map<StudentId, std::size_t> slot;
  for (const auto &s : cohort.students) {
    slot.emplace(s.student_id, out.size());
    out.push_back({s.student_id, s.class_id, {}, {}});
  }
  for (const auto &e : cohort.events) {
    auto it = slot.find(e.student_id);
    if (it == slot.end()) {
      continue;
    }
    if (e.kind == EngagementKind::login) {
      out[it->second].engagement.push_back({e.tick, e.value});
    } else if (e.kind == EngagementKind::absence) {
      out[it->second].engagement.push_back({e.tick, 0.0});
    }
  }
  // Mean graded score per student per tick.
  std::map<std::pair<std::size_t, Tick>, std::pair<double, std::size_t>> acc;
  for (const auto &a : cohort.assessments) {
    auto it = slot.find(a.student_id);
    if (it == slot.end() || !a.score) {
      continue;
    }
    auto &cell = acc[{it->second, a.tick}];
    cell.first += *a.score;
    cell.second += 1;
  }
  for (const auto &[k, v] : acc) {
    out[k.first].scores.push_back({k.second, v.first / static_cast<double>(v.second)});
  }
  return out;
}

ClassReport generate_class_report(const Cohort &cohort, const std::string &class_id, Tick begin,
                                  Tick end, const std::set<StudentId> &at_risk) {
  const auto activity = activity_from_cohort(cohort);
  return generate_class_report(activity, class_id, begin, end, at_risk);
}

Json report_to_json(const ClassReport &report) {
  Json students = Json::array();
  for (const auto &s : report.students) {
    Json j;
    j["student_id"] = s.student_id;
    j["mean_score"] = s.mean_score ? Json(*s.mean_score) : Json(nullptr);
    j["engagement_mean"] = s.engagement_mean;
    j["at_risk"] = s.at_risk;
    students.push_back(std::move(j));
  }
  Json j;
  j["class_id"] = report.class_id;
  j["window_begin"] = report.window_begin;
  j["window_end"] = report.window_end;
  j["mean_score"] = report.mean_score;
  j["median_score"] = report.median_score;
  j["at_risk_count"] = report.at_risk_count;
  j["scored_students"] = report.scored_students;
  j["students"] = std::move(students);
  return j;
}

ClassReport report_from_json(const Json &j) {
  try {
    ClassReport r;
    r.class_id = require(j, "class_id").get<std::string>();
    r.window_begin = require(j, "window_begin").get<Tick>();
    r.window_end = require(j, "window_end").get<Tick>();
    r.mean_score = require(j, "mean_score").get<double>();
    r.median_score = require(j, "median_score").get<double>();
    r.at_risk_count = require(j, "at_risk_count").get<std::size_t>();
    r.scored_students = require(j, "scored_students").get<std::size_t>();
    for (const auto &s : require(j, "students")) {
      StudentSummary row;
      row.student_id = require(s, "student_id").get<std::string>();
      if (const Json &m = require(s, "mean_score"); !m.is_null()) {
        row.mean_score = m.get<double>();
      }
      row.engagement_mean = require(s, "engagement_mean").get<double>();
      row.at_risk = require(s, "at_risk").get<bool>();
      r.students.push_back(std::move(row));
    }
    return r;
  } catch (const Json::exception &e) {
    throw DataError(std::string("malformed class report: ") + e.what());
  }
}

std::string report_to_text(const ClassReport &report) {
  std::ostringstream out;
  out << "class " << report.class_id << ", ticks " << report.window_begin << ".."
      << report.window_end << '\n';
  out << "  mean score   " << csv::format_double(report.mean_score) << '\n';
  out << "  median score " << csv::format_double(report.median_score) << '\n';
  out << "  scored       " << report.scored_students << " of " << report.students.size() << '\n';
  out << "  at risk      " << report.at_risk_count << '\n';
  for (const auto &s : report.students) {
    out << "  " << s.student_id << "  score "
        << (s.mean_score ? csv::format_double(*s.mean_score) : std::string("-")) << "  engagement "
        << csv::format_double(s.engagement_mean) << (s.at_risk ? "  AT RISK" : "") << '\n';
  }
  return out.str();
}

// ---------------------------------------------------------------------------

std::string_view to_string(TemplateOp op) {
  switch (op) {
  case TemplateOp::sum:
    return "sum";
  case TemplateOp::difference:
    return "difference";
  case TemplateOp::product:
    return "product";
  case TemplateOp::quotient:
    return "quotient";
  case TemplateOp::compare:
    return "compare";
  case TemplateOp::parity:
    return "parity";
  }
  return "?";
}

namespace {

std::string render(const std::string &pattern, const std::vector<ParameterSlot> &slots,
                   const std::vector<long> &values) {
  std::string out = pattern;
  for (std::size_t i = 0; i < slots.size(); ++i) {
    const std::string token = "{" + slots[i].name + "}";
    const std::string value = std::to_string(values[i]);
    for (auto pos = out.find(token); pos != std::string::npos;
         pos = out.find(token, pos + value.size())) {
      out.replace(pos, token.size(), value);
    }
  }
  return out;
}

std::string numeric_text(double v) { return csv::format_double(v); }

} // namespace

std::vector<QuizItem> generate_quiz(const QuizTemplate &quiz, std::uint64_t seed,
                                    std::size_t n_items) {
  if (n_items == 0) {
    throw InvalidArgument("generate_quiz: n_items must be >= 1");
  }
  const std::size_t needed = quiz.op == TemplateOp::parity ? 1 : 2;
  if (quiz.slots.size() < needed) {
    throw InvalidArgument("template '" + quiz.template_id + "' needs " + std::to_string(needed) +
                          " parameter slots");
  }
  for (const auto &s : quiz.slots) {
    if (s.lo > s.hi) {
      throw InvalidArgument("template '" + quiz.template_id + "' slot '" + s.name +
                            "' has an empty range");
    }
  }
  if (quiz.op == TemplateOp::quotient && quiz.slots[1].lo <= 0 && quiz.slots[1].hi >= 0) {
    throw InvalidArgument("template '" + quiz.template_id + "' divisor range contains 0");
  }
  if (!(quiz.points > 0.0) || !(quiz.tolerance >= 0.0)) {
    throw InvalidArgument("template '" + quiz.template_id + "' needs points > 0, tolerance >= 0");
  }

  Rng rng(seed);
  std::vector<QuizItem> items;
  for (std::size_t i = 0; i < n_items; ++i) {
    QuizItem item;
    for (const auto &s : quiz.slots) {
      item.parameters.push_back(static_cast<long>(rng.uniform_int(s.lo, s.hi)));
    }
    const long a = item.parameters[0];
    const long b = needed > 1 ? item.parameters[1] : 0;
    item.question = render(quiz.pattern, quiz.slots, item.parameters);
    item.key.item_id = quiz.template_id + "-" + std::to_string(i + 1);
    item.key.points = quiz.points;
    switch (quiz.op) {
    case TemplateOp::sum:
      item.key.kind = AnswerKind::numeric;
      item.key.canonical = std::to_string(a + b);
      break;
    case TemplateOp::difference:
      item.key.kind = AnswerKind::numeric;
      item.key.canonical = std::to_string(a - b);
      break;
    case TemplateOp::product:
      item.key.kind = AnswerKind::numeric;
      item.key.canonical = std::to_string(a * b);
      break;
    case TemplateOp::quotient:
      item.key.kind = AnswerKind::numeric;
      item.key.canonical = numeric_text(std::round(100.0 * static_cast<double>(a) /
                                                   static_cast<double>(b)) /
                                        100.0);
      break;
    case TemplateOp::compare:
      item.key.kind = AnswerKind::multiple_choice;
      item.key.canonical = a > b ? "A" : (b > a ? "B" : "C");
      break;
    case TemplateOp::parity:
      item.key.kind = AnswerKind::short_text;
      item.key.canonical = a % 2 == 0 ? "even" : "odd";
      break;
    }
    if (item.key.kind == AnswerKind::numeric) {
      item.key.tolerance = quiz.tolerance;
    }
    items.push_back(std::move(item));
  }
  return items;
}

const std::vector<QuizTemplate> &default_templates() {
  static const std::vector<QuizTemplate> templates = {
      {"add", "arithmetic", {{"a", 1, 50}, {"b", 1, 50}}, "What is {a} + {b}?", TemplateOp::sum,
       0.0, 1.0},
      {"sub", "arithmetic", {{"a", 1, 50}, {"b", 1, 50}}, "What is {a} - {b}?",
       TemplateOp::difference, 0.0, 1.0},
      {"mul", "arithmetic", {{"a", 2, 12}, {"b", 2, 12}}, "What is {a} x {b}?",
       TemplateOp::product, 0.0, 1.0},
      {"div", "fractions", {{"a", 1, 100}, {"b", 2, 9}}, "What is {a} / {b}, to two decimals?",
       TemplateOp::quotient, 0.01, 1.0},
      {"cmp", "number-sense", {{"a", 1, 20}, {"b", 1, 20}},
       "Which is larger? A) {a}  B) {b}  C) they are equal", TemplateOp::compare, 0.0, 1.0},
      {"par", "number-sense", {{"a", 1, 99}}, "Is {a} even or odd?", TemplateOp::parity, 0.0,
       1.0},
  };
  return templates;
}

// ---------------------------------------------------------------------------

EducatorAgent::EducatorAgent(const Cohort &cohort, EducatorAgentConfig config) : config_(config) {
  if (config_.report_interval == 0) {
    throw InvalidArgument("educator agent: report_interval must be >= 1");
  }
  for (const auto &k : cohort.answer_keys) {
    keys_.emplace(k.item_id, k);
  }
  std::set<std::string> classes;
  for (const auto &s : cohort.students) {
    slot_.emplace(s.student_id, activity_.size());
    activity_.push_back({s.student_id, s.class_id, {}, {}});
    classes.insert(s.class_id);
  }
  classes_.assign(classes.begin(), classes.end());
}

std::set<EventKind> EducatorAgent::subscriptions() const {
  return {EventKind::disengagement, EventKind::performance_decline, EventKind::at_risk_flag,
          EventKind::intervention_request};
}

EducatorPercepts EducatorAgent::observe(const TickInput &input, std::span<const Event> delivered) {
  EducatorPercepts p;
  p.tick = input.tick;
  p.submissions.assign(input.submissions.begin(), input.submissions.end());
  for (const auto &e : input.events) {
    auto it = slot_.find(e.student_id);
    if (it == slot_.end()) {
      continue;
    }
    if (e.kind == EngagementKind::login) {
      activity_[it->second].engagement.push_back({e.tick, e.value});
    } else if (e.kind == EngagementKind::absence) {
      activity_[it->second].engagement.push_back({e.tick, 0.0});
    }
  }
  for (const auto &ev : delivered) {
    const auto student = payload_string(ev.payload, "student_id");
    if (!student) {
      continue;
    }
    switch (ev.kind) {
    case EventKind::at_risk_flag:
      at_risk_.insert(*student);
      break;
    case EventKind::disengagement:
    case EventKind::performance_decline:
      ++p.gap_notices;
      break;
    case EventKind::intervention_request:
      if (payload_string(ev.payload, "action") ==
          std::string(to_string(InterventionAction::escalate_to_educator))) {
        p.escalations.push_back(*student);
      }
      break;
    default:
      break;
    }
  }
  return p;
}

EducatorDecisions EducatorAgent::decide(const EducatorPercepts &percepts,
                                        const AgentMemory & /*memory*/) {
  EducatorDecisions d;
  d.tick = percepts.tick;
  std::map<StudentId, std::pair<double, double>> totals; // awarded, possible
  std::map<StudentId, std::size_t> counts;
  for (const auto &sub : percepts.submissions) {
    auto key = keys_.find(sub.item_id);
    if (key == keys_.end()) {
      continue;
    }
    d.grades.push_back(auto_grade(sub, key->second));
    auto &t = totals[sub.student_id];
    t.first += d.grades.back().awarded;
    t.second += key->second.points;
    ++counts[sub.student_id];
  }
  for (const auto &[student, t] : totals) {
    d.posted.push_back({student, t.first / t.second, counts[student]});
    if (auto it = slot_.find(student); it != slot_.end()) {
      activity_[it->second].scores.push_back({percepts.tick, t.first / t.second});
    }
  }
  if ((static_cast<std::size_t>(percepts.tick) + 1) % config_.report_interval == 0) {
    const std::size_t span = config_.report_interval - 1;
    const Tick begin = percepts.tick >= span ? static_cast<Tick>(percepts.tick - span) : 0;
    for (const auto &c : classes_) {
      d.reports.push_back(generate_class_report(activity_, c, begin, percepts.tick, at_risk_));
    }
  }
  d.reviews = percepts.escalations;
  gap_notices_ += percepts.gap_notices;
  return d;
}

std::vector<ActionRecord> EducatorAgent::execute(const EducatorDecisions &decisions,
                                                 Publisher &out) {
  std::vector<ActionRecord> actions;
  for (const auto &g : decisions.grades) {
    actions.push_back({"grade", g.student_id, g.item_id, g.awarded});
    parse_failures_ += g.parse_failed;
  }
  graded_total_ += decisions.grades.size();
  for (const auto &p : decisions.posted) {
    out.publish(EventKind::grade_posted,
                Payload{{"student_id", p.student},
                        {"score", p.score},
                        {"items", static_cast<std::int64_t>(p.items)},
                        {"assessment_tick", static_cast<std::int64_t>(decisions.tick)}});
  }
  for (const auto &r : decisions.reports) {
    out.publish(EventKind::report_ready,
                Payload{{"class_id", r.class_id},
                        {"mean_score", r.mean_score},
                        {"median_score", r.median_score},
                        {"at_risk_count", static_cast<std::int64_t>(r.at_risk_count)},
                        {"window_begin", static_cast<std::int64_t>(r.window_begin)},
                        {"window_end", static_cast<std::int64_t>(r.window_end)}});
    reports_.push_back(r);
  }
  for (const auto &s : decisions.reviews) {
    actions.push_back({"review", s, "", 0.0});
  }
  return actions;
}

Feedback EducatorAgent::evaluate(const TickOutcome &outcome) {
  Feedback f;
  std::size_t missed = 0;
  for (const auto &s : outcome.dropped_out) {
    missed += !at_risk_.contains(s);
  }
  f.reward = -static_cast<double>(missed);
  f.memory_updates = {{"items_graded", static_cast<double>(graded_total_)},
                      {"parse_failures", static_cast<double>(parse_failures_)},
                      {"reports_issued", static_cast<double>(reports_.size())},
                      {"gap_notices", static_cast<double>(gap_notices_)}};
  return f;
}

} // namespace auss
