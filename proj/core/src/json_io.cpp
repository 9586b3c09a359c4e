// SPDX-License-Identifier: Apache-2.0
#include "json_io.hpp"

#include "pkt/error.hpp"

namespace pkt {
namespace detail {

json to_json(const PKTConfig& c) {
  return json{{"num_skills", c.num_skills},
              {"hidden", c.hidden},
              {"num_capsules", c.num_capsules},
              {"maxlen", c.maxlen},
              {"seed", c.seed},
              {"include_next_skill", c.include_next_skill},
              {"causal_student_mean", c.causal_student_mean}};
}

PKTConfig model_config_from_json(const json& j, const PKTConfig& defaults) {
  PKTConfig c = defaults;
  read_opt(j, "num_skills", c.num_skills);
  read_opt(j, "hidden", c.hidden);
  read_opt(j, "num_capsules", c.num_capsules);
  read_opt(j, "maxlen", c.maxlen);
  read_opt(j, "seed", c.seed);
  read_opt(j, "include_next_skill", c.include_next_skill);
  read_opt(j, "causal_student_mean", c.causal_student_mean);
  return c;
}

json to_json(const LossConfig& c) {
  return json{{"lambda_rr", c.lambda_rr},   {"lambda_ci", c.lambda_ci},
              {"alpha_ci", c.alpha_ci},     {"gamma", c.gamma},
              {"minority_class", c.minority_class}, {"clamp_eps", c.clamp_eps}};
}

LossConfig loss_config_from_json(const json& j, const LossConfig& defaults) {
  LossConfig c = defaults;
  read_opt(j, "lambda_rr", c.lambda_rr);
  read_opt(j, "lambda_ci", c.lambda_ci);
  read_opt(j, "alpha_ci", c.alpha_ci);
  read_opt(j, "gamma", c.gamma);
  read_opt(j, "minority_class", c.minority_class);
  read_opt(j, "clamp_eps", c.clamp_eps);
  return c;
}

json to_json(const AdamConfig& c) {
  return json{{"learning_rate", c.learning_rate},
              {"beta1", c.beta1},
              {"beta2", c.beta2},
              {"epsilon", c.epsilon}};
}

AdamConfig adam_config_from_json(const json& j, const AdamConfig& defaults) {
  AdamConfig c = defaults;
  read_opt(j, "learning_rate", c.learning_rate);
  read_opt(j, "beta1", c.beta1);
  read_opt(j, "beta2", c.beta2);
  read_opt(j, "epsilon", c.epsilon);
  return c;
}

json to_json(const MetricsReport& r) {
  json j{{"auc", r.auc},
         {"acc", r.acc},
         {"aucprc", r.aucprc},
         {"n_predictions", r.n_predictions},
         {"n_positive", r.n_positive},
         {"threshold", r.threshold}};
  j["fold_id"] = r.fold_id ? json(*r.fold_id) : json(nullptr);
  return j;
}

json to_json(const SynthConfig& c) {
  json j{{"num_students", c.num_students},
         {"num_skills", c.num_skills},
         {"mean_length", c.mean_length},
         {"length_spread", c.length_spread},
         {"initial_mastery", c.initial_mastery},
         {"mastery_increment", c.mastery_increment},
         {"slip", c.slip},
         {"guess", c.guess},
         {"ability_spread", c.ability_spread},
         {"skill_repeat", c.skill_repeat},
         {"majority_class", c.majority_class},
         {"seed", c.seed}};
  j["target_ratio"] = c.target_ratio ? json(*c.target_ratio) : json(nullptr);
  return j;
}

SynthConfig synth_config_from_json(const json& j) {
  SynthConfig c;
  read_opt(j, "num_students", c.num_students);
  read_opt(j, "num_skills", c.num_skills);
  read_opt(j, "mean_length", c.mean_length);
  read_opt(j, "length_spread", c.length_spread);
  read_opt(j, "initial_mastery", c.initial_mastery);
  read_opt(j, "mastery_increment", c.mastery_increment);
  read_opt(j, "slip", c.slip);
  read_opt(j, "guess", c.guess);
  read_opt(j, "ability_spread", c.ability_spread);
  read_opt(j, "skill_repeat", c.skill_repeat);
  read_opt(j, "majority_class", c.majority_class);
  read_opt(j, "seed", c.seed);
  if (auto it = j.find("target_ratio"); it != j.end() && !it->is_null()) {
    c.target_ratio = it->get<double>();
  }
  return c;
}

}  // namespace detail

SynthConfig synth_config_from_json(std::string_view text) {
  try {
    return detail::synth_config_from_json(nlohmann::json::parse(text));
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("synth config: ") + e.what());
  }
}

std::string synth_config_to_json(const SynthConfig& config) {
  return detail::to_json(config).dump(2);
}

}  // namespace pkt
