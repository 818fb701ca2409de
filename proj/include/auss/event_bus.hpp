#pragma once

#include <array>
#include <functional>
#include <cstdint>
#include <map>
#include <mutex>
#include <optional>
#include <ostream>
#include <set>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "auss/common.hpp"

namespace auss {

enum class AgentId { student_agent, educator_agent, institution_agent, environment };

inline constexpr std::array kAgentIds = {AgentId::student_agent, AgentId::educator_agent,
                                         AgentId::institution_agent, AgentId::environment};

std::string_view to_string(AgentId id);
AgentId parse_agent_id(std::string_view text);

enum class EventKind {
  performance_decline,
  disengagement,
  at_risk_flag,
  recommendation_issued,
  grade_posted,
  report_ready,
  intervention_request,
};

inline constexpr std::array kEventKinds = {
    EventKind::performance_decline, EventKind::disengagement,        EventKind::at_risk_flag,
    EventKind::recommendation_issued, EventKind::grade_posted,       EventKind::report_ready,
    EventKind::intervention_request};

std::string_view to_string(EventKind kind);
EventKind parse_event_kind(std::string_view text);

using PayloadValue = std::variant<double, std::int64_t, std::string, std::vector<std::string>>;
using Payload = std::map<std::string, PayloadValue>;

/// Typed lookups; nullopt when the key is missing or holds another type.
std::optional<std::string> payload_string(const Payload &payload, const std::string &key);
/// Accepts both double and integer values.
std::optional<double> payload_number(const Payload &payload, const std::string &key);

struct Event {
  std::uint64_t event_id = 0; // assigned by the bus
  Tick tick = 0;
  AgentId source = AgentId::environment;
  EventKind kind = EventKind::grade_posted;
  Payload payload;

  bool operator==(const Event &) const = default;
};

struct Subscription {
  AgentId subscriber;
  std::set<EventKind> kinds;
};

class BackPressureError : public Error {
public:
  using Error::Error;
};

class RegistrationError : public Error {
public:
  using Error::Error;
};

/// Raised when deliver_tick is called out of order; indicates a scheduler bug.
class DeliveryOrderError : public Error {
public:
  using Error::Error;
};

/**
 * In-process, tick-synchronous event bus.
 *
 * publish() may be called from any thread; the assigned sequence number is the
 * serialization point. deliver_tick(t) hands every queued event published at a
 * tick earlier than t to each subscriber of its kind, in publication order, and
 * drops it from the queue. Events published during tick t therefore reach
 * subscribers at tick t + 1.
 */
class EventBus {
public:
  using Delivery = std::map<AgentId, std::vector<Event>>;

  explicit EventBus(std::optional<std::size_t> capacity = std::nullopt);

  void register_subscriber(AgentId id);
  bool is_registered(AgentId id) const;

  /// Adds kinds to the subscriber's set. Idempotent. Throws RegistrationError
  /// for unregistered subscribers or an empty kind set.
  void subscribe(const Subscription &subscription);

  /// Queues the event and returns its id (previous max + 1). Throws
  /// BackPressureError when the configured capacity is already reached.
  std::uint64_t publish(Event event);

  /// Every registered subscriber gets an entry, possibly empty.
  Delivery deliver_tick(Tick tick);

  std::size_t pending() const;
  std::uint64_t last_event_id() const;

  /// Mirrors each published event as one JSON line. Pass nullptr to detach.
  void set_sink(std::ostream *sink);

  /// Called under the bus lock for every published event, after id assignment.
  void set_observer(std::function<void(const Event &)> observer);

private:
  mutable std::mutex mutex_;
  std::optional<std::size_t> capacity_;
  std::uint64_t next_id_ = 1;
  std::vector<Event> queue_;
  std::map<AgentId, std::set<EventKind>> subscriptions_;
  std::optional<Tick> last_delivered_;
  std::ostream *sink_ = nullptr;
  std::function<void(const Event &)> observer_;
};

/// Publishing handle bound to one agent and tick.
class Publisher {
public:
  Publisher(EventBus &bus, AgentId source, Tick tick) : bus_(bus), source_(source), tick_(tick) {}

  std::uint64_t publish(EventKind kind, Payload payload = {});
  std::size_t published() const { return published_; }

private:
  EventBus &bus_;
  AgentId source_;
  Tick tick_;
  std::size_t published_ = 0;
};

std::string to_json_line(const Event &event);
Event parse_event_line(std::string_view line);

/// One line per (subscriber, event) in delivery order; used for replay diffs.
std::string delivery_transcript(Tick tick, const EventBus::Delivery &delivery);

} // namespace auss
