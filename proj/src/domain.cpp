#include "auss/domain.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <unordered_set>

#include "auss/random.hpp"
#include "auss/stats.hpp"

namespace auss {

std::string_view to_string(EngagementKind kind) {
  switch (kind) {
  case EngagementKind::login:
    return "login";
  case EngagementKind::resource_view:
    return "resource_view";
  case EngagementKind::submission:
    return "submission";
  case EngagementKind::forum_post:
    return "forum_post";
  case EngagementKind::absence:
    return "absence";
  }
  return "?";
}

EngagementKind parse_engagement_kind(std::string_view text) {
  for (auto kind : kEngagementKinds) {
    if (to_string(kind) == text) {
      return kind;
    }
  }
  throw DataError("unknown engagement kind '" + std::string(text) + "'");
}

std::string_view to_string(AnswerKind kind) {
  switch (kind) {
  case AnswerKind::multiple_choice:
    return "multiple_choice";
  case AnswerKind::numeric:
    return "numeric";
  case AnswerKind::short_text:
    return "short_text";
  }
  return "?";
}

AnswerKind parse_answer_kind(std::string_view text) {
  for (auto kind : {AnswerKind::multiple_choice, AnswerKind::numeric, AnswerKind::short_text}) {
    if (to_string(kind) == text) {
      return kind;
    }
  }
  throw DataError("unknown answer kind '" + std::string(text) + "'");
}

std::optional<double> StudentRecord::feature(std::string_view name) const {
  for (const auto &f : static_features) {
    if (f.name == name) {
      return f.value;
    }
  }
  return std::nullopt;
}

const StudentTruth *GroundTruth::find(const StudentId &id) const {
  for (const auto &s : students) {
    if (s.student_id == id) {
      return &s;
    }
  }
  return nullptr;
}

StudentSplit split_students(std::vector<StudentId> ids, double train_fraction, std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw InvalidArgument("train fraction must be in (0, 1)");
  }
  Rng rng(seed);
  rng.shuffle(ids);
  const std::size_t n = ids.size();
  auto n_train = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(n)));
  if (n >= 2) {
    n_train = std::clamp<std::size_t>(n_train, 1, n - 1);
  }
  StudentSplit split;
  split.train.assign(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(std::min(n_train, n)));
  split.test.assign(ids.begin() + static_cast<std::ptrdiff_t>(std::min(n_train, n)), ids.end());
  return split;
}

std::string_view to_string(Rule rule) {
  switch (rule) {
  case Rule::duplicate_student_id:
    return "duplicate_student_id";
  case Rule::duplicate_resource_id:
    return "duplicate_resource_id";
  case Rule::duplicate_item_id:
    return "duplicate_item_id";
  case Rule::non_finite_feature:
    return "non_finite_feature";
  case Rule::feature_out_of_range:
    return "feature_out_of_range";
  case Rule::unknown_student:
    return "unknown_student";
  case Rule::unknown_resource:
    return "unknown_resource";
  case Rule::unknown_item:
    return "unknown_item";
  case Rule::event_value_out_of_range:
    return "event_value_out_of_range";
  case Rule::tick_order:
    return "tick_order";
  case Rule::score_out_of_range:
    return "score_out_of_range";
  case Rule::difficulty_out_of_range:
    return "difficulty_out_of_range";
  case Rule::tolerance_mismatch:
    return "tolerance_mismatch";
  case Rule::non_positive_points:
    return "non_positive_points";
  case Rule::ranking_not_permutation:
    return "ranking_not_permutation";
  }
  return "?";
}

namespace {

bool in_unit_interval(double v) { return std::isfinite(v) && v >= 0.0 && v <= 1.0; }

} // namespace

std::vector<Violation> validate_cohort(const Cohort &cohort) {
  std::vector<Violation> out;
  auto report = [&out](const std::string &id, Rule rule, std::string detail) {
    out.push_back(Violation{id, rule, std::move(detail)});
  };

  std::unordered_set<StudentId> students;
  for (const auto &s : cohort.students) {
    if (!students.insert(s.student_id).second) {
      report(s.student_id, Rule::duplicate_student_id, "student declared twice");
    }
    for (const auto &f : s.static_features) {
      if (!std::isfinite(f.value)) {
        report(s.student_id, Rule::non_finite_feature, f.name);
      } else if (f.name == kPriorGpa && (f.value < 0.0 || f.value > 4.0)) {
        report(s.student_id, Rule::feature_out_of_range, f.name + " outside [0,4]");
      } else if (f.name == kCreditsAttempted && f.value < 0.0) {
        report(s.student_id, Rule::feature_out_of_range, f.name + " negative");
      }
    }
  }

  std::unordered_set<ResourceId> resources;
  for (const auto &r : cohort.resources) {
    if (!resources.insert(r.resource_id).second) {
      report(r.resource_id, Rule::duplicate_resource_id, "resource declared twice");
    }
    if (!in_unit_interval(r.difficulty)) {
      report(r.resource_id, Rule::difficulty_out_of_range, "difficulty outside [0,1]");
    }
  }

  std::unordered_map<StudentId, Tick> last_tick;
  for (const auto &e : cohort.events) {
    if (!students.contains(e.student_id)) {
      report(e.student_id, Rule::unknown_student, "event references undeclared student");
      continue;
    }
    if (e.resource_id && !resources.contains(*e.resource_id)) {
      report(*e.resource_id, Rule::unknown_resource, "event references undeclared resource");
    }
    if (!in_unit_interval(e.value)) {
      report(e.student_id, Rule::event_value_out_of_range,
             std::string(to_string(e.kind)) + " value outside [0,1]");
    }
    auto [it, fresh] = last_tick.try_emplace(e.student_id, e.tick);
    if (!fresh) {
      if (e.tick < it->second) {
        report(e.student_id, Rule::tick_order, "event tick decreases");
      }
      it->second = std::max(it->second, e.tick);
    }
  }

  std::unordered_set<ItemId> items;
  for (const auto &k : cohort.answer_keys) {
    if (!items.insert(k.item_id).second) {
      report(k.item_id, Rule::duplicate_item_id, "answer key declared twice");
    }
    const bool numeric = k.kind == AnswerKind::numeric;
    if (numeric != k.tolerance.has_value() || (k.tolerance && !(*k.tolerance >= 0.0))) {
      report(k.item_id, Rule::tolerance_mismatch, "tolerance present iff numeric, non-negative");
    }
    if (!(k.points > 0.0)) {
      report(k.item_id, Rule::non_positive_points, "points must be positive");
    }
  }

  for (const auto &a : cohort.assessments) {
    if (!students.contains(a.student_id)) {
      report(a.student_id, Rule::unknown_student, "assessment references undeclared student");
    }
    if (!cohort.answer_keys.empty() && !items.contains(a.item_id)) {
      report(a.item_id, Rule::unknown_item, "assessment references undeclared item");
    }
    if (a.score && !in_unit_interval(*a.score)) {
      report(a.student_id, Rule::score_out_of_range, "score outside [0,1]");
    }
  }

  if (cohort.ground_truth) {
    std::set<ResourceId> all(resources.begin(), resources.end());
    for (const auto &t : cohort.ground_truth->students) {
      if (!students.contains(t.student_id)) {
        report(t.student_id, Rule::unknown_student, "ground truth references undeclared student");
      }
      std::set<ResourceId> ranked(t.preference_ranking.begin(), t.preference_ranking.end());
      if (ranked != all || ranked.size() != t.preference_ranking.size()) {
        report(t.student_id, Rule::ranking_not_permutation,
               "preference ranking is not a permutation of resources");
      }
    }
  }
  return out;
}

std::vector<std::string> lag_feature_names() {
  std::vector<std::string> names;
  names.reserve(kLagFeatureCount);
  for (auto kind : kEngagementKinds) {
    const std::string k(to_string(kind));
    names.push_back(k + "_count");
    names.push_back(k + "_mean");
    names.push_back(k + "_slope");
  }
  return names;
}

EventIndex::EventIndex(const Cohort &cohort) {
  for (const auto &s : cohort.students) {
    add_student(s.student_id);
  }
  for (const auto &e : cohort.events) {
    append(e);
  }
}

void EventIndex::add_student(const StudentId &id) { streams_.try_emplace(id); }

void EventIndex::append(const EngagementEvent &event) {
  auto it = streams_.find(event.student_id);
  if (it == streams_.end()) {
    throw DataError("event for unknown student '" + event.student_id + "'");
  }
  if (!it->second.empty() && it->second.back().tick > event.tick) {
    throw DataError("events for student '" + event.student_id + "' go back in time");
  }
  it->second.push_back(Entry{event.tick, event.kind, event.value});
}

const std::vector<EventIndex::Entry> &EventIndex::stream(const StudentId &id) const {
  auto it = streams_.find(id);
  if (it == streams_.end()) {
    throw DataError("unknown student '" + id + "'");
  }
  return it->second;
}

LagFeatures feature_window(const EventIndex &index, const StudentId &student, Tick tick,
                           std::size_t window_len) {
  if (window_len == 0) {
    throw InvalidArgument("feature_window: window_len must be >= 1");
  }
  const auto &stream = index.stream(student);
  // Window is (tick - window_len, tick]; widen to signed to avoid underflow.
  const long long lo = static_cast<long long>(tick) - static_cast<long long>(window_len);

  std::array<std::vector<double>, kEngagementKinds.size()> xs;
  std::array<std::vector<double>, kEngagementKinds.size()> ys;
  auto first = std::lower_bound(stream.begin(), stream.end(), lo + 1,
                                [](const EventIndex::Entry &e, long long t) {
                                  return static_cast<long long>(e.tick) < t;
                                });
  for (auto it = first; it != stream.end() && it->tick <= tick; ++it) {
    const auto k = static_cast<std::size_t>(it->kind);
    xs[k].push_back(static_cast<double>(it->tick));
    ys[k].push_back(it->value);
  }

  LagFeatures out{};
  for (auto kind : kEngagementKinds) {
    const auto k = static_cast<std::size_t>(kind);
    out[lag_index(kind, kLagCount)] = static_cast<double>(ys[k].size());
    out[lag_index(kind, kLagMean)] = stats::mean(ys[k]);
    out[lag_index(kind, kLagSlope)] = stats::least_squares_slope(xs[k], ys[k]);
  }
  return out;
}

} // namespace auss
