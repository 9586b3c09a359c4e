// SPDX-License-Identifier: Apache-2.0
#include "pkt/synth.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include "pkt/error.hpp"

namespace pkt {

namespace {

bool is_probability(double p) { return p >= 0.0 && p <= 1.0; }

// Random draws shared by every candidate mastery shift, so the number of
// correct responses is monotone in the shift.
struct Draws {
  std::vector<double> base;                     // per skill
  std::vector<double> offset;                   // per student
  std::vector<std::vector<std::size_t>> skills;  // per student
  std::vector<std::vector<double>> uniforms;    // per student
};

Draws draw(const SynthConfig& c) {
  std::mt19937_64 rng(c.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  Draws d;
  d.base = c.initial_mastery;
  if (d.base.empty()) {
    for (std::size_t k = 0; k < c.num_skills; ++k) d.base.push_back(0.2 + 0.4 * unit(rng));
  }
  const auto lo = static_cast<long long>(std::llround(c.mean_length - c.length_spread));
  const auto hi = static_cast<long long>(std::llround(c.mean_length + c.length_spread));
  std::uniform_int_distribution<long long> length(std::max(3LL, lo), std::max(3LL, hi));
  std::uniform_int_distribution<std::size_t> any_skill(0, c.num_skills - 1);
  for (std::size_t s = 0; s < c.num_students; ++s) {
    d.offset.push_back(c.ability_spread * (2.0 * unit(rng) - 1.0));
    const auto n = static_cast<std::size_t>(length(rng));
    std::vector<std::size_t> seq;
    std::vector<double> us;
    for (std::size_t t = 0; t < n; ++t) {
      if (t == 0 || unit(rng) >= c.skill_repeat) {
        seq.push_back(any_skill(rng));
      } else {
        seq.push_back(seq.back());
      }
      us.push_back(unit(rng));
    }
    d.skills.push_back(std::move(seq));
    d.uniforms.push_back(std::move(us));
  }
  return d;
}

std::vector<std::vector<int>> simulate(const SynthConfig& c, const Draws& d, double shift) {
  std::vector<std::vector<int>> out;
  out.reserve(d.skills.size());
  std::vector<double> mastery(c.num_skills);
  for (std::size_t s = 0; s < d.skills.size(); ++s) {
    for (std::size_t k = 0; k < c.num_skills; ++k) {
      mastery[k] = std::clamp(d.base[k] + d.offset[s] + shift, 0.0, 1.0);
    }
    std::vector<int> responses;
    for (std::size_t t = 0; t < d.skills[s].size(); ++t) {
      const std::size_t k = d.skills[s][t];
      const double p = mastery[k] * (1.0 - c.slip) + (1.0 - mastery[k]) * c.guess;
      responses.push_back(d.uniforms[s][t] < p ? 1 : 0);
      mastery[k] = std::min(1.0, mastery[k] + c.mastery_increment);
    }
    out.push_back(std::move(responses));
  }
  return out;
}

double fraction_correct(const std::vector<std::vector<int>>& responses) {
  double correct = 0.0;
  double total = 0.0;
  for (const auto& r : responses) {
    for (int a : r) correct += a;
    total += static_cast<double>(r.size());
  }
  return correct / total;
}

}  // namespace

void SynthConfig::validate() const {
  if (num_students == 0) throw DataError("SynthConfig: num_students must be positive");
  if (num_skills == 0) throw DataError("SynthConfig: num_skills must be positive");
  if (!(mean_length >= 1.0) || !(length_spread >= 0.0)) {
    throw DataError("SynthConfig: invalid sequence length moments");
  }
  if (!initial_mastery.empty() && initial_mastery.size() != num_skills) {
    throw DataError("SynthConfig: initial_mastery needs one value per skill");
  }
  for (double m : initial_mastery) {
    if (!is_probability(m)) throw DataError("SynthConfig: initial mastery must lie in [0, 1]");
  }
  if (!is_probability(slip) || !is_probability(guess) || !is_probability(skill_repeat) ||
      !is_probability(mastery_increment)) {
    throw DataError("SynthConfig: slip, guess, skill_repeat and mastery_increment must lie in [0, 1]");
  }
  if (!(ability_spread >= 0.0)) throw DataError("SynthConfig: ability_spread must be >= 0");
  if (target_ratio && !(*target_ratio >= 1.0)) {
    throw DataError("SynthConfig: target_ratio must be >= 1");
  }
  if (majority_class != 0 && majority_class != 1) {
    throw DataError("SynthConfig: majority_class must be 0 or 1");
  }
}

std::vector<RawRecord> generate_dataset(const SynthConfig& config) {
  config.validate();
  const Draws d = draw(config);

  double shift = 0.0;
  if (config.target_ratio) {
    const double r = *config.target_ratio;
    const double target = config.majority_class == 1 ? r / (1.0 + r) : 1.0 / (1.0 + r);
    // Shifts of +-2 drive every mastery to 1 or 0.
    double lo = -2.0;
    double hi = 2.0;
    const double f_lo = fraction_correct(simulate(config, d, lo));
    const double f_hi = fraction_correct(simulate(config, d, hi));
    if (target < f_lo || target > f_hi) {
      std::ostringstream msg;
      msg << "synth: target ratio " << r << " is unreachable; the fraction of correct responses "
          << "can only range over [" << f_lo << ", " << f_hi << "] with slip " << config.slip
          << " and guess " << config.guess;
      throw DataError(msg.str());
    }
    for (int it = 0; it < 80; ++it) {
      const double mid = 0.5 * (lo + hi);
      if (fraction_correct(simulate(config, d, mid)) < target) {
        lo = mid;
      } else {
        hi = mid;
      }
    }
    const double e_lo = std::abs(fraction_correct(simulate(config, d, lo)) - target);
    const double e_hi = std::abs(fraction_correct(simulate(config, d, hi)) - target);
    shift = e_lo < e_hi ? lo : hi;
  }

  const auto responses = simulate(config, d, shift);
  std::vector<RawRecord> records;
  std::int64_t clock = 0;
  for (std::size_t s = 0; s < d.skills.size(); ++s) {
    for (std::size_t t = 0; t < d.skills[s].size(); ++t) {
      RawRecord r;
      r.user_id = "u" + std::to_string(s);
      r.question_id = "q" + std::to_string(d.skills[s][t]);
      r.skill_ids = {static_cast<std::int64_t>(d.skills[s][t])};
      r.response = responses[s][t];
      r.timestamp = ++clock;
      records.push_back(std::move(r));
    }
  }
  return records;
}

}  // namespace pkt
