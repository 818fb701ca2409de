#include "auss/json_io.hpp"

#include <set>

namespace auss {

const Json &require(const Json &j, std::string_view key) {
  if (!j.is_object()) {
    throw DataError("expected a JSON object");
  }
  auto it = j.find(std::string(key));
  if (it == j.end()) {
    throw DataError("missing field '" + std::string(key) + "'");
  }
  return *it;
}

namespace {

template <typename T> T get_as(const Json &j, std::string_view key) {
  const Json &v = require(j, key);
  try {
    return v.get<T>();
  } catch (const Json::exception &) {
    throw DataError("field '" + std::string(key) + "' has the wrong type");
  }
}

} // namespace

Json payload_to_json(const Payload &payload) {
  Json j = Json::object();
  for (const auto &[key, value] : payload) {
    std::visit([&j, &key](const auto &v) { j[key] = v; }, value);
  }
  return j;
}

Payload payload_from_json(const Json &j) {
  if (!j.is_object()) {
    throw DataError("payload must be an object");
  }
  Payload out;
  for (auto it = j.begin(); it != j.end(); ++it) {
    const Json &v = it.value();
    if (v.is_number_integer()) {
      out[it.key()] = v.get<std::int64_t>();
    } else if (v.is_number_float()) {
      out[it.key()] = v.get<double>();
    } else if (v.is_string()) {
      out[it.key()] = v.get<std::string>();
    } else if (v.is_array()) {
      std::vector<std::string> ids;
      for (const auto &e : v) {
        if (!e.is_string()) {
          throw DataError("payload list '" + it.key() + "' must hold strings");
        }
        ids.push_back(e.get<std::string>());
      }
      out[it.key()] = std::move(ids);
    } else {
      throw DataError("unsupported payload value for '" + it.key() + "'");
    }
  }
  return out;
}

Json event_to_json(const Event &event) {
  Json j;
  j["event_id"] = event.event_id;
  j["tick"] = event.tick;
  j["source_agent"] = std::string(to_string(event.source));
  j["kind"] = std::string(to_string(event.kind));
  j["payload"] = payload_to_json(event.payload);
  return j;
}

Event event_from_json(const Json &j) {
  Event e;
  e.event_id = get_as<std::uint64_t>(j, "event_id");
  e.tick = get_as<Tick>(j, "tick");
  e.source = parse_agent_id(get_as<std::string>(j, "source_agent"));
  e.kind = parse_event_kind(get_as<std::string>(j, "kind"));
  e.payload = payload_from_json(require(j, "payload"));
  return e;
}

Json engagement_event_to_json(const EngagementEvent &event) {
  Json j;
  j["student_id"] = event.student_id;
  j["tick"] = event.tick;
  j["kind"] = std::string(to_string(event.kind));
  if (event.resource_id) {
    j["resource_id"] = *event.resource_id;
  } else {
    j["resource_id"] = nullptr;
  }
  j["value"] = event.value;
  return j;
}

EngagementEvent engagement_event_from_json(const Json &j) {
  static const std::set<std::string> known = {"student_id", "tick", "kind", "resource_id",
                                              "value"};
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!known.contains(it.key())) {
      throw DataError("unknown field '" + it.key() + "'");
    }
  }
  EngagementEvent e;
  e.student_id = get_as<std::string>(j, "student_id");
  e.tick = get_as<Tick>(j, "tick");
  e.kind = parse_engagement_kind(get_as<std::string>(j, "kind"));
  if (auto it = j.find("resource_id"); it != j.end() && !it->is_null()) {
    if (!it->is_string()) {
      throw DataError("field 'resource_id' has the wrong type");
    }
    e.resource_id = it->get<std::string>();
  }
  e.value = get_as<double>(j, "value");
  return e;
}

Json ground_truth_to_json(const GroundTruth &truth) {
  Json students = Json::array();
  for (const auto &s : truth.students) {
    Json j;
    j["student_id"] = s.student_id;
    j["ability"] = s.ability;
    j["preference_ranking"] = s.preference_ranking;
    j["dropped_out"] = s.dropped_out;
    if (s.dropout_tick) {
      j["dropout_tick"] = *s.dropout_tick;
    } else {
      j["dropout_tick"] = nullptr;
    }
    students.push_back(std::move(j));
  }
  Json out;
  out["students"] = std::move(students);
  return out;
}

GroundTruth ground_truth_from_json(const Json &j) {
  GroundTruth truth;
  const Json &students = require(j, "students");
  if (!students.is_array()) {
    throw DataError("field 'students' must be an array");
  }
  for (const auto &s : students) {
    StudentTruth t;
    t.student_id = get_as<std::string>(s, "student_id");
    t.ability = get_as<double>(s, "ability");
    t.preference_ranking = get_as<std::vector<std::string>>(s, "preference_ranking");
    t.dropped_out = get_as<bool>(s, "dropped_out");
    if (const Json &d = require(s, "dropout_tick"); !d.is_null()) {
      t.dropout_tick = get_as<Tick>(s, "dropout_tick");
    }
    truth.students.push_back(std::move(t));
  }
  return truth;
}

} // namespace auss
