#include <doctest.h>

#include <sstream>
#include <thread>

#include "auss/event_bus.hpp"
#include "auss/json_io.hpp"

using namespace auss;

namespace {

Event make(EventKind kind, Tick tick, std::string student = "s1") {
  Event e;
  e.tick = tick;
  e.kind = kind;
  e.source = AgentId::student_agent;
  e.payload["student_id"] = std::move(student);
  return e;
}

void two_subscribers(EventBus &bus, EventKind kind) {
  bus.register_subscriber(AgentId::educator_agent);
  bus.register_subscriber(AgentId::institution_agent);
  bus.subscribe({AgentId::educator_agent, {kind}});
  bus.subscribe({AgentId::institution_agent, {kind}});
}

} // namespace

TEST_CASE("ids start at 1 and increase") {
  EventBus bus;
  CHECK(bus.publish(make(EventKind::grade_posted, 0)) == 1);
  CHECK(bus.publish(make(EventKind::grade_posted, 0)) == 2);
  CHECK(bus.last_event_id() == 2);
}

TEST_CASE("capacity gives back-pressure") {
  EventBus bus(1);
  bus.publish(make(EventKind::grade_posted, 0));
  CHECK_THROWS_AS(bus.publish(make(EventKind::grade_posted, 0)), BackPressureError);
  bus.deliver_tick(1);
  CHECK_NOTHROW(bus.publish(make(EventKind::grade_posted, 1)));
}

TEST_CASE("nothing published gives empty lists for every subscriber") {
  EventBus bus;
  two_subscribers(bus, EventKind::disengagement);
  const auto d = bus.deliver_tick(1);
  REQUIRE(d.size() == 2);
  for (const auto &[agent, events] : d) {
    CHECK(events.empty());
  }
}

TEST_CASE("fan-out delivers once to each subscriber") {
  EventBus bus;
  two_subscribers(bus, EventKind::disengagement);
  bus.publish(make(EventKind::disengagement, 0));
  const auto d = bus.deliver_tick(1);
  CHECK(d.at(AgentId::educator_agent).size() == 1);
  CHECK(d.at(AgentId::institution_agent).size() == 1);
  CHECK(bus.deliver_tick(2).at(AgentId::educator_agent).empty());
}

TEST_CASE("publication order is preserved") {
  EventBus bus;
  two_subscribers(bus, EventKind::disengagement);
  const auto a = bus.publish(make(EventKind::disengagement, 0, "a"));
  const auto b = bus.publish(make(EventKind::disengagement, 0, "b"));
  for (const auto &[agent, events] : bus.deliver_tick(1)) {
    REQUIRE(events.size() == 2);
    CHECK(events[0].event_id == a);
    CHECK(events[1].event_id == b);
  }
}

TEST_CASE("subscription filtering and idempotence") {
  EventBus bus;
  bus.register_subscriber(AgentId::educator_agent);
  bus.subscribe({AgentId::educator_agent, {EventKind::grade_posted}});
  bus.subscribe({AgentId::educator_agent, {EventKind::grade_posted}});
  bus.publish(make(EventKind::grade_posted, 0));
  bus.publish(make(EventKind::report_ready, 0));
  const auto d = bus.deliver_tick(1);
  REQUIRE(d.at(AgentId::educator_agent).size() == 1);
  CHECK(d.at(AgentId::educator_agent)[0].kind == EventKind::grade_posted);
}

TEST_CASE("same-tick events wait for the next tick") {
  EventBus bus;
  two_subscribers(bus, EventKind::grade_posted);
  bus.publish(make(EventKind::grade_posted, 3));
  CHECK(bus.deliver_tick(3).at(AgentId::educator_agent).empty());
  CHECK(bus.deliver_tick(4).at(AgentId::educator_agent).size() == 1);
}

TEST_CASE("registration and ordering errors") {
  EventBus bus;
  CHECK_THROWS_AS(bus.subscribe({AgentId::educator_agent, {EventKind::grade_posted}}),
                  RegistrationError);
  bus.register_subscriber(AgentId::educator_agent);
  CHECK_THROWS_AS(bus.subscribe({AgentId::educator_agent, {}}), RegistrationError);
  bus.deliver_tick(5);
  CHECK_THROWS_AS(bus.deliver_tick(5), DeliveryOrderError);
  CHECK_THROWS_AS(bus.deliver_tick(4), DeliveryOrderError);
}

TEST_CASE("concurrent publishers get unique ids") {
  EventBus bus;
  two_subscribers(bus, EventKind::grade_posted);
  std::vector<std::thread> workers;
  for (int w = 0; w < 4; ++w) {
    workers.emplace_back([&bus] {
      for (int i = 0; i < 250; ++i) {
        bus.publish(make(EventKind::grade_posted, 0));
      }
    });
  }
  for (auto &t : workers) {
    t.join();
  }
  const auto d = bus.deliver_tick(1);
  const auto &got = d.at(AgentId::educator_agent);
  REQUIRE(got.size() == 1000);
  for (std::size_t i = 0; i < got.size(); ++i) {
    CHECK(got[i].event_id == i + 1);
  }
}

TEST_CASE("event json line round trip") {
  Event e = make(EventKind::recommendation_issued, 7);
  e.event_id = 12;
  e.payload["top_score"] = 0.75;
  e.payload["count"] = std::int64_t{3};
  e.payload["resource_ids"] = std::vector<std::string>{"r1", "r2"};
  CHECK(parse_event_line(to_json_line(e)) == e);
  CHECK(event_from_json(event_to_json(e)) == e);
  CHECK_THROWS(parse_event_line("{\"tick\":"));
}

TEST_CASE("sink mirrors published events") {
  std::ostringstream out;
  EventBus bus;
  bus.set_sink(&out);
  bus.publish(make(EventKind::grade_posted, 0));
  CHECK(out.str().find("grade_posted") != std::string::npos);
}

TEST_CASE("payload accessors") {
  Payload p{{"s", std::string("x")}, {"n", std::int64_t{4}}, {"d", 0.5}};
  CHECK(payload_string(p, "s") == "x");
  CHECK(!payload_string(p, "n"));
  CHECK(payload_number(p, "n") == 4.0);
  CHECK(payload_number(p, "d") == 0.5);
  CHECK(!payload_number(p, "missing"));
}
