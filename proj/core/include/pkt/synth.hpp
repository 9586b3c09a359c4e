// SPDX-License-Identifier: Apache-2.0
//
// Seeded student simulator. Each student practises a sequence of skills;
// a response is correct with probability
//   mastery * (1 - slip) + (1 - mastery) * guess
// and mastery of the practised skill rises by a fixed increment afterwards.
#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "pkt/dataio.hpp"

namespace pkt {

struct SynthConfig {
  std::size_t num_students = 100;
  std::size_t num_skills = 10;
  double mean_length = 30.0;
  /// Lengths are uniform integers in [mean - spread, mean + spread], at least 3.
  double length_spread = 10.0;
  /// Per-skill initial mastery; drawn uniformly from [0.2, 0.6] when empty.
  std::vector<double> initial_mastery;
  double mastery_increment = 0.05;
  double slip = 0.1;
  double guess = 0.2;
  /// Per-student mastery offset, uniform in [-ability_spread, ability_spread].
  double ability_spread = 0.5;
  /// Probability that the next interaction practises the same skill again.
  double skill_repeat = 0.5;
  /// When set, initial mastery is shifted so that
  /// count(majority_class) / count(other class) matches this ratio.
  std::optional<double> target_ratio;
  int majority_class = 1;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Throws DataError when target_ratio cannot be reached with the given slip
/// and guess probabilities.
std::vector<RawRecord> generate_dataset(const SynthConfig& config);

}  // namespace pkt

namespace pkt {

/// JSON object with any subset of the SynthConfig field names; missing fields
/// keep their defaults.
SynthConfig synth_config_from_json(std::string_view text);
std::string synth_config_to_json(const SynthConfig& config);

}  // namespace pkt
