#include "auss/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include "auss/csv.hpp"
#include "auss/educator_agent.hpp"
#include "auss/random.hpp"
#include "auss/stats.hpp"

namespace auss {

void GeneratorConfig::validate() const {
  auto fail = [](const std::string &field, const std::string &rule) {
    throw InvalidArgument("generator config: " + field + " " + rule);
  };
  if (n_students < 1) fail("n_students", "must be >= 1");
  if (n_resources < 1) fail("n_resources", "must be >= 1");
  if (n_ticks < 1) fail("n_ticks", "must be >= 1");
  if (!(ability_alpha > 0.0)) fail("ability_alpha", "must be > 0");
  if (!(ability_beta > 0.0)) fail("ability_beta", "must be > 0");
  if (!(persistence >= 0.0 && persistence < 1.0)) fail("persistence", "must be in [0,1)");
  if (!(noise >= 0.0) || !std::isfinite(noise)) fail("noise", "must be finite and >= 0");
  for (double w : hazard_weights) {
    if (!std::isfinite(w)) fail("hazard_weights", "must be finite");
  }
  if (!std::isfinite(hazard_intercept)) fail("hazard_intercept", "must be finite");
  if (hazard_interval < 1) fail("hazard_interval", "must be >= 1");
  if (!(absence_scale >= 0.0 && absence_scale <= 1.0)) fail("absence_scale", "must be in [0,1]");
  if (!(forum_rate >= 0.0 && forum_rate <= 1.0)) fail("forum_rate", "must be in [0,1]");
  if (!(preference_temperature > 0.0)) fail("preference_temperature", "must be > 0");
  if (assessment_interval < 1) fail("assessment_interval", "must be >= 1");
  if (items_per_assessment < 1) fail("items_per_assessment", "must be >= 1");
  if (!(format_noise_rate >= 0.0 && format_noise_rate <= 1.0))
    fail("format_noise_rate", "must be in [0,1]");
  if (n_classes < 1) fail("n_classes", "must be >= 1");
}

Json generator_config_to_json(const GeneratorConfig &c) {
  Json j;
  j["n_students"] = c.n_students;
  j["n_resources"] = c.n_resources;
  j["n_ticks"] = c.n_ticks;
  j["seed"] = c.seed;
  j["ability_alpha"] = c.ability_alpha;
  j["ability_beta"] = c.ability_beta;
  j["persistence"] = c.persistence;
  j["noise"] = c.noise;
  j["hazard_weights"] = c.hazard_weights;
  j["hazard_intercept"] = c.hazard_intercept;
  j["hazard_interval"] = c.hazard_interval;
  j["absence_scale"] = c.absence_scale;
  j["forum_rate"] = c.forum_rate;
  j["preference_temperature"] = c.preference_temperature;
  j["assessment_interval"] = c.assessment_interval;
  j["items_per_assessment"] = c.items_per_assessment;
  j["format_noise_rate"] = c.format_noise_rate;
  j["n_classes"] = c.n_classes;
  return j;
}

GeneratorConfig generator_config_from_json(const Json &j) {
  if (!j.is_object()) {
    throw DataError("generator config must be a JSON object");
  }
  GeneratorConfig c;
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string &k = it.key();
    const Json &v = it.value();
    try {
      if (k == "n_students") c.n_students = v.get<std::size_t>();
      else if (k == "n_resources") c.n_resources = v.get<std::size_t>();
      else if (k == "n_ticks") c.n_ticks = v.get<std::size_t>();
      else if (k == "seed") c.seed = v.get<std::uint64_t>();
      else if (k == "ability_alpha") c.ability_alpha = v.get<double>();
      else if (k == "ability_beta") c.ability_beta = v.get<double>();
      else if (k == "persistence") c.persistence = v.get<double>();
      else if (k == "noise") c.noise = v.get<double>();
      else if (k == "hazard_weights") {
        const auto w = v.get<std::vector<double>>();
        if (w.size() != kInstitutionalFeatureCount) {
          throw DataError("hazard_weights needs " + std::to_string(kInstitutionalFeatureCount) +
                          " values");
        }
        std::copy(w.begin(), w.end(), c.hazard_weights.begin());
      } else if (k == "hazard_intercept") c.hazard_intercept = v.get<double>();
      else if (k == "hazard_interval") c.hazard_interval = v.get<std::size_t>();
      else if (k == "absence_scale") c.absence_scale = v.get<double>();
      else if (k == "forum_rate") c.forum_rate = v.get<double>();
      else if (k == "preference_temperature") c.preference_temperature = v.get<double>();
      else if (k == "assessment_interval") c.assessment_interval = v.get<std::size_t>();
      else if (k == "items_per_assessment") c.items_per_assessment = v.get<std::size_t>();
      else if (k == "format_noise_rate") c.format_noise_rate = v.get<double>();
      else if (k == "n_classes") c.n_classes = v.get<std::size_t>();
      else throw DataError("unknown generator config key '" + k + "'");
    } catch (const Json::exception &) {
      throw DataError("generator config key '" + k + "' has the wrong type");
    }
  }
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------

namespace {

std::string padded(const std::string &prefix, std::size_t value, std::size_t count) {
  const std::size_t width = std::max<std::size_t>(2, std::to_string(count).size());
  std::string digits = std::to_string(value);
  return prefix + std::string(width > digits.size() ? width - digits.size() : 0, '0') + digits;
}

const std::array<std::string, 4> kTopics = {"algebra", "geometry", "statistics", "programming"};

struct Assessment {
  Tick tick;
  std::vector<QuizItem> items;
};

std::string numeric_response(double value) {
  double ip = 0.0;
  if (std::modf(value, &ip) == 0.0 && std::abs(value) < 1e15) {
    return std::to_string(static_cast<long long>(value));
  }
  return csv::format_double(value);
}

/// Response text for one item. Correct answers vary in harmless formatting,
/// except that with probability noise_rate they are written in a form the
/// auto-grader does not accept.
std::string make_response(const AnswerKey &key, bool correct, double noise_rate, Rng &rng) {
  const bool garbled = correct && rng.bernoulli(noise_rate);
  const std::size_t style = rng.uniform_index(3);
  switch (key.kind) {
  case AnswerKind::numeric: {
    const double canonical = csv::parse_double(key.canonical);
    if (!correct) {
      const auto delta = static_cast<double>(rng.uniform_int(1, 5));
      return numeric_response(rng.bernoulli(0.5) ? canonical + delta : canonical - delta);
    }
    if (garbled) {
      return style == 0 ? "= " + key.canonical : key.canonical + " units";
    }
    if (style == 1) {
      return " " + key.canonical + " ";
    }
    if (style == 2) {
      return key.canonical.find('.') == std::string::npos ? key.canonical + ".0"
                                                          : key.canonical + "0";
    }
    return key.canonical;
  }
  case AnswerKind::multiple_choice: {
    if (!correct) {
      static const std::array<std::string, 3> letters = {"A", "B", "C"};
      std::vector<std::string> others;
      for (const auto &l : letters) {
        if (l != key.canonical) {
          others.push_back(l);
        }
      }
      return others[rng.uniform_index(others.size())];
    }
    if (garbled) {
      return "(" + key.canonical + ")";
    }
    if (style == 1) {
      return normalize_answer(key.canonical);
    }
    return style == 2 ? key.canonical + " " : key.canonical;
  }
  case AnswerKind::short_text: {
    if (!correct) {
      return key.canonical == "even" ? "odd" : "even";
    }
    if (garbled) {
      return "it is " + key.canonical;
    }
    if (style == 1) {
      std::string up = key.canonical;
      up[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(up[0])));
      return up;
    }
    return style == 2 ? "  " + key.canonical : key.canonical;
  }
  }
  return key.canonical;
}

} // namespace

Cohort generate_cohort(const GeneratorConfig &config) {
  config.validate();
  Rng master(config.seed);
  Cohort cohort;

  for (std::size_t r = 0; r < config.n_resources; ++r) {
    cohort.resources.push_back({padded("r", r + 1, config.n_resources),
                                kTopics[r % kTopics.size()], master.uniform()});
  }

  std::vector<Assessment> assessments;
  const auto &templates = default_templates();
  for (std::size_t t = 0; t < config.n_ticks; ++t) {
    if ((t + 1) % config.assessment_interval != 0) {
      continue;
    }
    const auto &tpl = templates[assessments.size() % templates.size()];
    Assessment a{static_cast<Tick>(t),
                 generate_quiz(tpl, master.fork_seed(), config.items_per_assessment)};
    for (auto &item : a.items) {
      item.key.item_id = "t" + std::to_string(t) + "-" + item.key.item_id;
      cohort.answer_keys.push_back(item.key);
    }
    assessments.push_back(std::move(a));
  }

  GroundTruth truth;
  std::vector<std::pair<std::size_t, EngagementEvent>> events; // (student index, event)
  for (std::size_t i = 0; i < config.n_students; ++i) {
    Rng rng(master.fork_seed());
    StudentRecord record;
    record.student_id = padded("s", i + 1, config.n_students);
    record.class_id = padded("c", i % config.n_classes + 1, config.n_classes);
    const double ability = rng.beta(config.ability_alpha, config.ability_beta);
    const double gpa = 4.0 * stats::clamp01(ability + rng.normal(0.0, 0.15));
    const auto credits = static_cast<double>(rng.uniform_int(9, 18));
    record.static_features = {{std::string(kPriorGpa), gpa},
                              {std::string(kCreditsAttempted), credits}};

    StudentTruth st;
    st.student_id = record.student_id;
    st.ability = ability;
    std::vector<std::size_t> order(config.n_resources);
    for (std::size_t r = 0; r < order.size(); ++r) {
      order[r] = r;
    }
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      const double da = std::abs(cohort.resources[a].difficulty - ability);
      const double db = std::abs(cohort.resources[b].difficulty - ability);
      if (da != db) {
        return da < db;
      }
      return cohort.resources[a].resource_id < cohort.resources[b].resource_id;
    });
    for (auto r : order) {
      st.preference_ranking.push_back(cohort.resources[r].resource_id);
    }

    std::vector<double> choice_weights;
    double weight_sum = 0.0;
    for (const auto &res : cohort.resources) {
      choice_weights.push_back(
          std::exp(-std::abs(res.difficulty - ability) / config.preference_temperature));
      weight_sum += choice_weights.back();
    }

    StudentHistory history;
    history.credits_attempted = credits;
    double engagement = ability;
    std::size_t next_assessment = 0;
    auto emit = [&](Tick t, EngagementKind kind, std::optional<ResourceId> res, double value) {
      events.emplace_back(i, EngagementEvent{record.student_id, t, kind, std::move(res), value});
    };

    for (std::size_t t = 0; t < config.n_ticks; ++t) {
      const auto tick = static_cast<Tick>(t);
      engagement = stats::clamp01(config.persistence * engagement +
                                  (1.0 - config.persistence) * ability +
                                  config.noise * rng.normal());
      const bool absent = rng.bernoulli((1.0 - engagement) * config.absence_scale);
      if (absent) {
        emit(tick, EngagementKind::absence, std::nullopt, 1.0);
        ++history.absences;
      } else {
        emit(tick, EngagementKind::login, std::nullopt, engagement);
        history.engagement.push_back({tick, engagement});
        ++history.attended;
        if (rng.bernoulli(engagement)) {
          double u = rng.uniform() * weight_sum;
          std::size_t pick = 0;
          while (pick + 1 < choice_weights.size() && u >= choice_weights[pick]) {
            u -= choice_weights[pick];
            ++pick;
          }
          const auto &res = cohort.resources[pick];
          const double value = stats::clamp01(1.0 - std::abs(res.difficulty - ability) +
                                              config.noise * rng.normal());
          emit(tick, EngagementKind::resource_view, res.resource_id, value);
        }
        if (rng.bernoulli(config.forum_rate * engagement)) {
          emit(tick, EngagementKind::forum_post, std::nullopt, engagement);
        }
      }

      if (next_assessment < assessments.size() && assessments[next_assessment].tick == tick) {
        const auto &a = assessments[next_assessment++];
        if (!absent) {
          double correct_total = 0.0;
          for (const auto &item : a.items) {
            const double p = stats::clamp01(ability + config.noise * rng.normal());
            const bool correct = rng.bernoulli(p);
            cohort.assessments.push_back(
                {record.student_id, item.key.item_id, tick,
                 make_response(item.key, correct, config.format_noise_rate, rng),
                 correct ? 1.0 : 0.0});
            correct_total += correct ? 1.0 : 0.0;
          }
          const double fraction = correct_total / static_cast<double>(a.items.size());
          emit(tick, EngagementKind::submission, std::nullopt, fraction);
          history.scores.push_back({tick, fraction});
        }
      }

      if ((t + 1) % config.hazard_interval == 0) {
        const auto f = features_from_history(record.student_id, history).values();
        double z = config.hazard_intercept;
        for (std::size_t k = 0; k < f.size(); ++k) {
          z += config.hazard_weights[k] * f[k];
        }
        if (rng.bernoulli(stats::logistic(z))) {
          st.dropped_out = true;
          st.dropout_tick = tick;
          break;
        }
      }
    }
    cohort.students.push_back(std::move(record));
    truth.students.push_back(std::move(st));
  }

  std::stable_sort(events.begin(), events.end(), [](const auto &a, const auto &b) {
    return a.second.tick < b.second.tick;
  });
  cohort.events.reserve(events.size());
  for (auto &e : events) {
    cohort.events.push_back(std::move(e.second));
  }
  std::stable_sort(cohort.assessments.begin(), cohort.assessments.end(),
                   [](const AssessmentRecord &a, const AssessmentRecord &b) {
                     return a.tick < b.tick;
                   });
  cohort.ground_truth = std::move(truth);
  return cohort;
}

// ---------------------------------------------------------------------------

namespace {

const std::vector<std::string> kStudentColumns = {"student_id", "class_id", "enrollment_tick"};
const std::vector<std::string> kStudentFeatures = {std::string(kPriorGpa),
                                                   std::string(kCreditsAttempted)};
const std::vector<std::string> kAssessmentColumns = {"student_id", "item_id", "tick", "response",
                                                     "score"};
const std::vector<std::string> kResourceColumns = {"resource_id", "topic_tag", "difficulty"};

std::string where(const std::filesystem::path &path, std::size_t line) {
  return path.filename().string() + ":" + std::to_string(line) + ": ";
}

Tick parse_tick(const std::string &text) {
  const double v = csv::parse_double(text);
  if (!(v >= 0.0) || v != std::floor(v) || v > 4294967295.0) {
    throw DataError("tick must be a non-negative integer, found '" + text + "'");
  }
  return static_cast<Tick>(v);
}

void require_file(const std::filesystem::path &path) {
  if (!std::filesystem::is_regular_file(path)) {
    throw DataError("missing required file " + path.string());
  }
}

} // namespace

void export_cohort(const Cohort &cohort, const std::filesystem::path &dir) {
  std::filesystem::create_directories(dir);

  std::vector<std::string> feature_cols;
  for (const auto &name : kStudentFeatures) {
    for (const auto &s : cohort.students) {
      if (s.feature(name)) {
        feature_cols.push_back(name);
        break;
      }
    }
  }
  std::vector<std::vector<std::string>> rows;
  for (const auto &s : cohort.students) {
    for (const auto &f : s.static_features) {
      if (std::find(kStudentFeatures.begin(), kStudentFeatures.end(), f.name) ==
          kStudentFeatures.end()) {
        throw InvalidArgument("export_cohort: unsupported static feature '" + f.name + "'");
      }
    }
    std::vector<std::string> row = {s.student_id, s.class_id, std::to_string(s.enrollment_tick)};
    for (const auto &name : feature_cols) {
      const auto v = s.feature(name);
      row.push_back(v ? csv::format_double(*v) : "");
    }
    rows.push_back(std::move(row));
  }
  auto header = kStudentColumns;
  header.insert(header.end(), feature_cols.begin(), feature_cols.end());
  csv::write(dir / "students.csv", header, rows);

  {
    std::ofstream out(dir / "events.jsonl");
    if (!out) {
      throw Error("cannot write " + (dir / "events.jsonl").string());
    }
    for (const auto &e : cohort.events) {
      out << engagement_event_to_json(e).dump() << '\n';
    }
  }

  rows.clear();
  for (const auto &a : cohort.assessments) {
    rows.push_back({a.student_id, a.item_id, std::to_string(a.tick), a.response,
                    a.score ? csv::format_double(*a.score) : ""});
  }
  csv::write(dir / "assessments.csv", kAssessmentColumns, rows);

  rows.clear();
  for (const auto &r : cohort.resources) {
    rows.push_back({r.resource_id, r.topic_tag, csv::format_double(r.difficulty)});
  }
  csv::write(dir / "resources.csv", kResourceColumns, rows);

  write_answer_keys(dir / "answer_keys.csv", cohort.answer_keys);

  if (cohort.ground_truth) {
    std::ofstream out(dir / "ground_truth.json");
    out << ground_truth_to_json(*cohort.ground_truth).dump(1) << '\n';
  }
}

Cohort import_cohort(const std::filesystem::path &dir) {
  for (const char *name : {"students.csv", "events.jsonl", "assessments.csv", "resources.csv"}) {
    require_file(dir / name);
  }
  Cohort cohort;

  {
    const auto path = dir / "students.csv";
    const auto table = csv::read_flexible(path, kStudentColumns, kStudentFeatures);
    for (std::size_t i = 0; i < table.rows.size(); ++i) {
      const auto &row = table.rows[i];
      try {
        StudentRecord s;
        s.student_id = row[0];
        if (s.student_id.empty()) {
          throw DataError("empty student_id");
        }
        s.class_id = row[1];
        s.enrollment_tick = parse_tick(row[2]);
        for (std::size_t c = kStudentColumns.size(); c < row.size(); ++c) {
          if (!row[c].empty()) {
            s.static_features.push_back({table.header[c], csv::parse_double(row[c])});
          }
        }
        cohort.students.push_back(std::move(s));
      } catch (const DataError &e) {
        throw DataError(where(path, table.line_numbers[i]) + e.what());
      }
    }
  }

  {
    const auto path = dir / "events.jsonl";
    std::ifstream in(path);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (line.empty()) {
        continue;
      }
      try {
        Json j;
        try {
          j = Json::parse(line);
        } catch (const Json::parse_error &) {
          throw DataError("malformed JSON");
        }
        if (!j.is_object()) {
          throw DataError("expected a JSON object");
        }
        cohort.events.push_back(engagement_event_from_json(j));
      } catch (const DataError &e) {
        throw DataError(where(path, line_no) + e.what());
      }
    }
  }

  {
    const auto path = dir / "assessments.csv";
    const auto table = csv::read(path, kAssessmentColumns);
    for (std::size_t i = 0; i < table.rows.size(); ++i) {
      const auto &row = table.rows[i];
      try {
        AssessmentRecord a;
        a.student_id = row[0];
        a.item_id = row[1];
        a.tick = parse_tick(row[2]);
        a.response = row[3];
        if (!row[4].empty()) {
          a.score = csv::parse_double(row[4]);
        }
        cohort.assessments.push_back(std::move(a));
      } catch (const DataError &e) {
        throw DataError(where(path, table.line_numbers[i]) + e.what());
      }
    }
  }

  {
    const auto path = dir / "resources.csv";
    const auto table = csv::read(path, kResourceColumns);
    for (std::size_t i = 0; i < table.rows.size(); ++i) {
      const auto &row = table.rows[i];
      try {
        cohort.resources.push_back({row[0], row[1], csv::parse_double(row[2])});
      } catch (const DataError &e) {
        throw DataError(where(path, table.line_numbers[i]) + e.what());
      }
    }
  }

  if (std::filesystem::exists(dir / "answer_keys.csv")) {
    cohort.answer_keys = read_answer_keys(dir / "answer_keys.csv");
  }

  if (const auto path = dir / "ground_truth.json"; std::filesystem::exists(path)) {
    std::ifstream in(path);
    Json j;
    try {
      j = Json::parse(in);
    } catch (const Json::parse_error &e) {
      throw DataError("ground_truth.json: malformed JSON: " + std::string(e.what()));
    }
    try {
      cohort.ground_truth = ground_truth_from_json(j);
    } catch (const DataError &e) {
      throw DataError("ground_truth.json: " + std::string(e.what()));
    }
  }

  const auto violations = validate_cohort(cohort);
  if (!violations.empty()) {
    const auto &v = violations.front();
    throw DataError("cohort in " + dir.string() + " violates " + std::string(to_string(v.rule)) +
                    " for '" + v.entity_id + "': " + v.detail + " (" +
                    std::to_string(violations.size()) + " violations)");
  }
  return cohort;
}

} // namespace auss
