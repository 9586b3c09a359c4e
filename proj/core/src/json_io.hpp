// SPDX-License-Identifier: Apache-2.0
// JSON mapping of configuration and report types. Internal to pkt_core.
#pragma once

#include "json.hpp"
#include "pkt/adam.hpp"
#include "pkt/loss.hpp"
#include "pkt/metrics.hpp"
#include "pkt/model.hpp"
#include "pkt/synth.hpp"

namespace pkt::detail {

using nlohmann::json;

json to_json(const PKTConfig& c);
PKTConfig model_config_from_json(const json& j, const PKTConfig& defaults = {});

json to_json(const LossConfig& c);
LossConfig loss_config_from_json(const json& j, const LossConfig& defaults = {});

json to_json(const AdamConfig& c);
AdamConfig adam_config_from_json(const json& j, const AdamConfig& defaults = {});

json to_json(const MetricsReport& r);

json to_json(const SynthConfig& c);
SynthConfig synth_config_from_json(const json& j);

// Assigns j[key] to out when present.
template <typename T>
void read_opt(const json& j, const char* key, T& out) {
  if (auto it = j.find(key); it != j.end() && !it->is_null()) out = it->get<T>();
}

}  // namespace pkt::detail
