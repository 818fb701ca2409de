#include "auss/event_bus.hpp"

#include <algorithm>
#include <sstream>

#include "auss/json_io.hpp"

namespace auss {

std::optional<std::string> payload_string(const Payload &payload, const std::string &key) {
  auto it = payload.find(key);
  if (it == payload.end()) {
    return std::nullopt;
  }
  if (const auto *s = std::get_if<std::string>(&it->second)) {
    return *s;
  }
  return std::nullopt;
}

std::optional<double> payload_number(const Payload &payload, const std::string &key) {
  auto it = payload.find(key);
  if (it == payload.end()) {
    return std::nullopt;
  }
  if (const auto *d = std::get_if<double>(&it->second)) {
    return *d;
  }
  if (const auto *i = std::get_if<std::int64_t>(&it->second)) {
    return static_cast<double>(*i);
  }
  return std::nullopt;
}

std::string_view to_string(AgentId id) {
  switch (id) {
  case AgentId::student_agent:
    return "student_agent";
  case AgentId::educator_agent:
    return "educator_agent";
  case AgentId::institution_agent:
    return "institution_agent";
  case AgentId::environment:
    return "environment";
  }
  return "?";
}

AgentId parse_agent_id(std::string_view text) {
  for (auto id : kAgentIds) {
    if (to_string(id) == text) {
      return id;
    }
  }
  throw DataError("unknown agent '" + std::string(text) + "'");
}

std::string_view to_string(EventKind kind) {
  switch (kind) {
  case EventKind::performance_decline:
    return "performance_decline";
  case EventKind::disengagement:
    return "disengagement";
  case EventKind::at_risk_flag:
    return "at_risk_flag";
  case EventKind::recommendation_issued:
    return "recommendation_issued";
  case EventKind::grade_posted:
    return "grade_posted";
  case EventKind::report_ready:
    return "report_ready";
  case EventKind::intervention_request:
    return "intervention_request";
  }
  return "?";
}

EventKind parse_event_kind(std::string_view text) {
  for (auto kind : kEventKinds) {
    if (to_string(kind) == text) {
      return kind;
    }
  }
  throw DataError("unknown event kind '" + std::string(text) + "'");
}

EventBus::EventBus(std::optional<std::size_t> capacity) : capacity_(capacity) {}

void EventBus::register_subscriber(AgentId id) {
  std::lock_guard lock(mutex_);
  subscriptions_.try_emplace(id);
}

bool EventBus::is_registered(AgentId id) const {
  std::lock_guard lock(mutex_);
  return subscriptions_.contains(id);
}

void EventBus::subscribe(const Subscription &subscription) {
  std::lock_guard lock(mutex_);
  auto it = subscriptions_.find(subscription.subscriber);
  if (it == subscriptions_.end()) {
    throw RegistrationError("subscriber '" + std::string(to_string(subscription.subscriber)) +
                            "' is not registered");
  }
  if (subscription.kinds.empty()) {
    throw RegistrationError("subscription must name at least one event kind");
  }
  it->second.insert(subscription.kinds.begin(), subscription.kinds.end());
}

std::uint64_t EventBus::publish(Event event) {
  std::lock_guard lock(mutex_);
  if (capacity_ && queue_.size() >= *capacity_) {
    throw BackPressureError("event bus at capacity (" + std::to_string(*capacity_) + ")");
  }
  event.event_id = next_id_++;
  if (sink_ != nullptr) {
    *sink_ << to_json_line(event) << '\n';
  }
  if (observer_) {
    observer_(event);
  }
  queue_.push_back(std::move(event));
  return queue_.back().event_id;
}

EventBus::Delivery EventBus::deliver_tick(Tick tick) {
  std::lock_guard lock(mutex_);
  if (last_delivered_ && tick <= *last_delivered_) {
    throw DeliveryOrderError("deliver_tick(" + std::to_string(tick) +
                             ") after tick " + std::to_string(*last_delivered_));
  }
  last_delivered_ = tick;

  Delivery out;
  for (const auto &[id, kinds] : subscriptions_) {
    out[id];
  }
  // Queue is in publication order; stable_partition keeps later-tick events in order.
  auto split = std::stable_partition(queue_.begin(), queue_.end(),
                                     [tick](const Event &e) { return e.tick < tick; });
  for (auto it = queue_.begin(); it != split; ++it) {
    for (const auto &[id, kinds] : subscriptions_) {
      if (kinds.contains(it->kind)) {
        out[id].push_back(*it);
      }
    }
  }
  queue_.erase(queue_.begin(), split);
  return out;
}

std::size_t EventBus::pending() const {
  std::lock_guard lock(mutex_);
  return queue_.size();
}

std::uint64_t EventBus::last_event_id() const {
  std::lock_guard lock(mutex_);
  return next_id_ - 1;
}

void EventBus::set_sink(std::ostream *sink) {
  std::lock_guard lock(mutex_);
  sink_ = sink;
}

void EventBus::set_observer(std::function<void(const Event &)> observer) {
  std::lock_guard lock(mutex_);
  observer_ = std::move(observer);
}

std::uint64_t Publisher::publish(EventKind kind, Payload payload) {
  Event e;
  e.tick = tick_;
  e.source = source_;
  e.kind = kind;
  e.payload = std::move(payload);
  const auto id = bus_.publish(std::move(e));
  ++published_;
  return id;
}

std::string to_json_line(const Event &event) { return event_to_json(event).dump(); }

Event parse_event_line(std::string_view line) {
  Json j;
  try {
    j = Json::parse(line);
  } catch (const Json::parse_error &e) {
    throw DataError(std::string("malformed event line: ") + e.what());
  }
  return event_from_json(j);
}

std::string delivery_transcript(Tick tick, const EventBus::Delivery &delivery) {
  std::ostringstream out;
  for (const auto &[subscriber, events] : delivery) {
    for (const auto &e : events) {
      Json line;
      line["tick"] = tick;
      line["subscriber"] = std::string(to_string(subscriber));
      line["event"] = event_to_json(e);
      out << line.dump() << '\n';
    }
  }
  return out.str();
}

} // namespace auss
