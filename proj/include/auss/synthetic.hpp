#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>

#include "auss/domain.hpp"
#include "auss/institution_agent.hpp"
#include "auss/json_io.hpp"

namespace auss {

/**
 * Generative model, per student:
 *   ability ~ Beta(alpha, beta)
 *   e_t = persistence * e_{t-1} + (1 - persistence) * ability + noise * N(0,1), clipped, e_{-1} = ability
 *   absent with probability (1 - e_t) * absence_scale, else a login carrying e_t
 *   assessments every assessment_interval ticks; each item correct with
 *   probability clip(ability + noise * N(0,1))
 *   dropout checked every hazard_interval ticks with probability
 *   logistic(hazard_weights . features + hazard_intercept) over the
 *   institutional feature vector of the history so far
 */
struct GeneratorConfig {
  std::size_t n_students = 1000;
  std::size_t n_resources = 20;
  std::size_t n_ticks = 50;
  std::uint64_t seed = 42;

  double ability_alpha = 2.0;
  double ability_beta = 2.0;
  double persistence = 0.6;
  double noise = 0.1;

  /// Order matches InstitutionalFeatures::values().
  std::array<double, kInstitutionalFeatureCount> hazard_weights = {-24.0, 0.0, -8.0,
                                                                   0.0,   6.0, 0.0};
  double hazard_intercept = 7.0;
  std::size_t hazard_interval = 5;

  double absence_scale = 0.5;
  double forum_rate = 0.3;
  double preference_temperature = 0.15; // softmax temperature for resource choice
  std::size_t assessment_interval = 5;
  std::size_t items_per_assessment = 4;
  double format_noise_rate = 0.05; // correct answers written in an unrecognized form
  std::size_t n_classes = 10;

  /// Throws InvalidArgument naming the offending field.
  void validate() const;
};

Json generator_config_to_json(const GeneratorConfig &config);
/// Missing keys keep their defaults; unknown keys are rejected.
GeneratorConfig generator_config_from_json(const Json &j);

/// Deterministic in config.seed. The returned cohort carries its ground truth.
Cohort generate_cohort(const GeneratorConfig &config);

/**
 * Directory layout: students.csv, events.jsonl, assessments.csv,
 * resources.csv, answer_keys.csv and, when the cohort has one,
 * ground_truth.json.
 */
void export_cohort(const Cohort &cohort, const std::filesystem::path &dir);

/// Throws DataError with file and line for malformed input, and when the
/// imported cohort violates a validation rule.
Cohort import_cohort(const std::filesystem::path &dir);

} // namespace auss
