#pragma once

// nlohmann/json conversions for types that cross file boundaries.

#include "json.hpp"

#include "auss/domain.hpp"
#include "auss/event_bus.hpp"

namespace auss {

using Json = nlohmann::ordered_json;

Json payload_to_json(const Payload &payload);
Payload payload_from_json(const Json &j);

Json event_to_json(const Event &event);
Event event_from_json(const Json &j);

Json engagement_event_to_json(const EngagementEvent &event);
EngagementEvent engagement_event_from_json(const Json &j);

Json ground_truth_to_json(const GroundTruth &truth);
GroundTruth ground_truth_from_json(const Json &j);

/// Throws DataError naming the key when it is missing or of the wrong type.
const Json &require(const Json &j, std::string_view key);

} // namespace auss
