// SPDX-License-Identifier: Apache-2.0
#include "pkt/model.hpp"

#include <array>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include "json_io.hpp"
#include "pkt/error.hpp"

namespace pkt {

void PKTConfig::validate() const {
  if (num_skills < 1) throw Error("PKTConfig: num_skills must be at least 1");
  if (hidden < 1) throw Error("PKTConfig: hidden size must be at least 1");
  if (num_capsules < 2) throw Error("PKTConfig: at least 2 capsule blocks are required");
  if (maxlen < 3) throw Error("PKTConfig: maxlen must be at least 3");
}

PKTParams PKTParams::initialize(const PKTConfig& config) {
  config.validate();
  const std::size_t d = config.hidden;
  const std::size_t E = config.num_skills;
  const double bound = 1.0 / std::sqrt(static_cast<double>(d));
  std::mt19937_64 rng(config.seed);
  std::uniform_real_distribution<double> uniform(-bound, bound);
  auto random_tensor = [&](Shape shape) {
    Tensor t(std::move(shape));
    for (double& v : t.data()) v = uniform(rng);
    return t;
  };

  PKTParams p;
  p.embedding = random_tensor({2 * E + 1, d});
  p.gru.w_z = random_tensor({d, 2 * d});
  p.gru.b_z = Tensor({d});
  p.gru.w_r = random_tensor({d, 2 * d});
  p.gru.b_r = Tensor({d});
  p.gru.w_h = random_tensor({d, 2 * d});
  p.gru.b_h = Tensor({d});
  const std::size_t head_in = config.include_next_skill ? 2 * d : d;
  for (std::size_t j = 0; j < config.num_capsules; ++j) {
    CapsuleWeights c;
    c.w_a = random_tensor({d, 1});
    c.w_p = random_tensor({1, head_in});
    c.b_p = Tensor({1});
    p.capsules.push_back(std::move(c));
  }
  if (config.include_next_skill) p.next_skill_embedding = random_tensor({E + 1, d});
  return p;
}

std::vector<std::pair<std::string, const Tensor*>> PKTParams::named() const {
  std::vector<std::pair<std::string, const Tensor*>> out = {
      {"embedding", &embedding}, {"gru.w_z", &gru.w_z}, {"gru.b_z", &gru.b_z},
      {"gru.w_r", &gru.w_r},     {"gru.b_r", &gru.b_r}, {"gru.w_h", &gru.w_h},
      {"gru.b_h", &gru.b_h},
  };
  for (std::size_t j = 0; j < capsules.size(); ++j) {
    const std::string prefix = "capsule." + std::to_string(j) + ".";
    out.emplace_back(prefix + "w_a", &capsules[j].w_a);
    out.emplace_back(prefix + "w_p", &capsules[j].w_p);
    out.emplace_back(prefix + "b_p", &capsules[j].b_p);
  }
  if (next_skill_embedding.size() > 0) {
    out.emplace_back("next_skill_embedding", &next_skill_embedding);
  }
  return out;
}

std::vector<std::pair<std::string, Tensor*>> PKTParams::named() {
  std::vector<std::pair<std::string, Tensor*>> out;
  for (auto& [name, t] : std::as_const(*this).named()) {
    out.emplace_back(name, const_cast<Tensor*>(t));
  }
  return out;
}

std::size_t PKTParams::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : named()) n += t->size();
  return n;
}

std::size_t expected_parameter_count(const PKTConfig& c) {
  const std::size_t d = c.hidden;
  const std::size_t E = c.num_skills;
  std::size_t n = (2 * E + 1) * d + 3 * (2 * d * d + d) + c.num_capsules * (d + d + 1);
  if (c.include_next_skill) n += c.num_capsules * d + (E + 1) * d;
  return n;
}

// ---------------------------------------------------------------------------

BoundParams bind(Tape& tape, const PKTParams& params) {
  BoundParams b;
  for (const auto& [name, t] : params.named()) b.leaves.push_back(tape.leaf(*t));
  std::size_t i = 0;
  b.embedding = b.leaves[i++];
  b.gru.w_z_t = tape.transpose(b.leaves[i++]);
  b.gru.b_z = b.leaves[i++];
  b.gru.w_r_t = tape.transpose(b.leaves[i++]);
  b.gru.b_r = b.leaves[i++];
  b.gru.w_h_t = tape.transpose(b.leaves[i++]);
  b.gru.b_h = b.leaves[i++];
  for (std::size_t j = 0; j < params.capsules.size(); ++j) {
    CapsuleVars c;
    c.w_a = b.leaves[i++];
    c.w_p_t = tape.transpose(b.leaves[i++]);
    c.b_p = b.leaves[i++];
    b.capsules.push_back(c);
  }
  if (i < b.leaves.size()) b.next_skill_embedding = b.leaves[i++];
  return b;
}

Var gru_step(Tape& tape, const GruVars& gru, Var h_prev, Var e) {
  const Shape in_shape = tape.value(h_prev).shape();
  if (in_shape != tape.value(e).shape() || in_shape.empty() || in_shape.size() > 2) {
    throw ShapeError("gru_step: hidden state " + to_string(in_shape) + " and input " +
                     to_string(tape.value(e).shape()) + " must both be [d] or [B, d]");
  }
  const bool vector_input = in_shape.size() == 1;
  if (vector_input) {
    h_prev = tape.reshape(h_prev, {1, in_shape[0]});
    e = tape.reshape(e, {1, in_shape[0]});
  }
  const Var x = tape.concat(h_prev, e);
  const Var z = tape.sigmoid(tape.add(tape.matmul(x, gru.w_z_t), gru.b_z));
  const Var r = tape.sigmoid(tape.add(tape.matmul(x, gru.w_r_t), gru.b_r));
  const Var xr = tape.concat(tape.mul(r, h_prev), e);
  const Var candidate = tape.tanh(tape.add(tape.matmul(xr, gru.w_h_t), gru.b_h));
  const Var keep = tape.add_scalar(tape.negate(z), 1.0);
  Var h = tape.add(tape.mul(keep, h_prev), tape.mul(z, candidate));
  if (vector_input) h = tape.reshape(h, in_shape);
  return h;
}

CapsuleAttention capsule_attention(Tape& tape, Var hidden, Var w_a, const Tensor& mask) {
  const Shape& hs = tape.value(hidden).shape();
  if (hs.size() != 3) throw ShapeError("capsule_attention: hidden must be [B, T, d]");
  const std::size_t B = hs[0];
  const std::size_t T = hs[1];
  if (mask.shape() != Shape{B, T, T}) {
    throw ShapeError("capsule_attention: mask " + to_string(mask.shape()) +
                     " does not match hidden " + to_string(hs));
  }
  const Var scores = tape.reshape(tape.matmul(hidden, w_a), {B, 1, T});
  const Var logits = tape.expand(scores, 1, T);
  const Var alpha = tape.softmax_masked(logits, mask);
  return {alpha, tape.matmul(alpha, hidden)};
}

StepReadout readout(Tape& tape, std::span<const CapsuleVars> capsules,
                    std::span<const Var> capsule_reprs, Var student, Var head_extra) {
  if (capsules.size() != capsule_reprs.size() || capsules.empty()) {
    throw ShapeError("readout: capsule weights and representations differ in count");
  }
  const Shape& us = tape.value(student).shape();
  const std::size_t B = us[0];
  const std::size_t T = us[1];
  const std::size_t d = us[2];

  StepReadout out;
  std::vector<Var> recon;
  for (std::size_t j = 0; j < capsules.size(); ++j) {
    const Var head_in = head_extra.valid() ? tape.concat(capsule_reprs[j], head_extra)
                                           : capsule_reprs[j];
    const Var logit = tape.add(tape.matmul(head_in, capsules[j].w_p_t), capsules[j].b_p);
    const Var pj = tape.sigmoid(logit);  // [B, T, 1]
    out.block_probs.push_back(tape.reshape(pj, {B, T}));
    recon.push_back(tape.mul(tape.expand(pj, 2, d), capsule_reprs[j]));
  }
  out.prediction = tape.reduce(tape.stack(out.block_probs, 0), ReduceOp::mean, 0);
  out.reconstruction = tape.reduce(tape.stack(recon, 0), ReduceOp::max, 0);
  const Var inner = tape.reduce(tape.mul(student, out.reconstruction), ReduceOp::sum, 2);
  out.similarity = tape.sigmoid(inner);
  return out;
}

// ---------------------------------------------------------------------------

EncodedBatch encode_batch(std::span<const InteractionSequence> sequences,
                          std::span<const std::size_t> rows, std::size_t num_skills) {
  if (rows.empty()) throw DataError("encode_batch: empty batch");
  EncodedBatch b;
  b.batch = rows.size();
  b.steps = sequences[rows[0]].length();
  const std::size_t T = b.steps;
  b.codes.resize(b.batch * T);
  b.next_skill.assign(b.batch * T, num_skills);
  b.valid = Tensor({b.batch, T});
  b.responses = Tensor({b.batch, T});
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const InteractionSequence& s = sequences[rows[r]];
    if (s.length() != T) {
      throw DataError("encode_batch: user " + s.user_id + " has length " +
                      std::to_string(s.length()) + ", expected " + std::to_string(T));
    }
    const auto codes = encode_sequence(s, num_skills);
    std::copy(codes.begin(), codes.end(), b.codes.begin() + static_cast<std::ptrdiff_t>(r * T));
    b.lengths.push_back(s.valid_length());
    for (std::size_t t = 0; t < T; ++t) {
      if (!s.mask[t]) continue;
      b.valid[r * T + t] = 1.0;
      b.responses[r * T + t] = s.responses[t];
      if (t + 1 < T && s.mask[t + 1]) b.next_skill[r * T + t] = static_cast<std::size_t>(s.skills[t + 1]);
    }
  }
  return b;
}

EncodedBatch encode_batch(std::span<const InteractionSequence> sequences, std::size_t num_skills) {
  std::vector<std::size_t> rows(sequences.size());
  for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = i;
  return encode_batch(sequences, rows, num_skills);
}

BatchForward forward_batch(Tape& tape, const BoundParams& params, const EncodedBatch& batch,
                           const PKTConfig& config) {
  const std::size_t B = batch.batch;
  const std::size_t T = batch.steps;
  const std::size_t d = config.hidden;
  if (T != config.maxlen) {
    throw DataError("forward_batch: batch length " + std::to_string(T) +
                    " does not match configured maxlen " + std::to_string(config.maxlen));
  }

  std::vector<Var> states;
  states.reserve(T);
  Var h = tape.constant(Tensor({B, d}));
  std::vector<std::size_t> step_codes(B);
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t b = 0; b < B; ++b) step_codes[b] = batch.codes[b * T + t];
    const Var e = tape.gather_rows(params.embedding, step_codes);
    h = gru_step(tape, params.gru, h, e);
    states.push_back(h);
  }

  BatchForward out;
  out.hidden = tape.stack(states, 1);

  // attention[b, t, i] = 1 when i <= t and position i is valid.
  Tensor attend({B, T, T});
  Tensor averaging({B, T, T});
  for (std::size_t b = 0; b < B; ++b) {
    const std::size_t L = batch.lengths[b];
    for (std::size_t t = 0; t < T; ++t) {
      for (std::size_t i = 0; i <= t; ++i) {
        if (batch.valid[b * T + i] != 0.0) attend[(b * T + t) * T + i] = 1.0;
      }
      if (config.causal_student_mean) {
        for (std::size_t i = 0; i <= t; ++i) {
          averaging[(b * T + t) * T + i] = 1.0 / static_cast<double>(t + 1);
        }
      } else {
        for (std::size_t i = 0; i < L; ++i) {
          averaging[(b * T + t) * T + i] = 1.0 / static_cast<double>(L);
        }
      }
    }
  }
  out.student = tape.matmul(tape.constant(std::move(averaging)), out.hidden);

  for (const CapsuleVars& c : params.capsules) {
    const CapsuleAttention att = capsule_attention(tape, out.hidden, c.w_a, attend);
    out.alpha.push_back(att.alpha);
    out.capsule.push_back(att.capsule);
  }

  Var extra;
  if (config.include_next_skill) {
    extra = tape.reshape(tape.gather_rows(params.next_skill_embedding, batch.next_skill), {B, T, d});
  }
  StepReadout ro = readout(tape, params.capsules, out.capsule, out.student, extra);
  out.block_probs = std::move(ro.block_probs);
  out.prediction = ro.prediction;
  out.reconstruction = ro.reconstruction;
  out.similarity = ro.similarity;
  return out;
}

ForwardTrace forward_sequence(const InteractionSequence& seq, const PKTParams& params,
                              const PKTConfig& config) {
  config.validate();
  const std::size_t L = seq.valid_length();
  if (L < 2) {
    throw DataError("forward_sequence: user " + seq.user_id + " has " + std::to_string(L) +
                    " valid steps; at least 2 are needed");
  }
  Tape tape(false);
  const BoundParams bound = bind(tape, params);
  const std::array<InteractionSequence, 1> one{seq};
  const EncodedBatch batch = encode_batch(one, config.num_skills);
  const BatchForward fw = forward_batch(tape, bound, batch, config);

  const std::size_t T = batch.steps;
  const std::size_t d = config.hidden;
  const std::size_t nc = params.capsules.size();
  auto rows = [&](Var v, std::size_t width) {
    const auto src = tape.value(v).data();
    return Tensor({L, width}, std::vector<double>(src.begin(), src.begin() + static_cast<std::ptrdiff_t>(L * width)));
  };
  auto steps = [&](Var v) {
    const auto src = tape.value(v).data();
    return Tensor::vector(std::vector<double>(src.begin(), src.begin() + static_cast<std::ptrdiff_t>(L)));
  };

  ForwardTrace tr;
  tr.hidden = rows(fw.hidden, d);
  tr.student = rows(fw.student, d);
  tr.reconstruction = rows(fw.reconstruction, d);
  tr.prediction = steps(fw.prediction);
  tr.similarity = steps(fw.similarity);
  tr.capsule = Tensor({nc, L, d});
  tr.attention = Tensor({nc, L, L});
  tr.block_probs = Tensor({nc, L});
  for (std::size_t j = 0; j < nc; ++j) {
    const auto cap = tape.value(fw.capsule[j]).data();
    const auto alpha = tape.value(fw.alpha[j]).data();
    const auto pj = tape.value(fw.block_probs[j]).data();
    for (std::size_t t = 0; t < L; ++t) {
      for (std::size_t k = 0; k < d; ++k) tr.capsule[(j * L + t) * d + k] = cap[t * d + k];
      for (std::size_t i = 0; i < L; ++i) tr.attention[(j * L + t) * L + i] = alpha[t * T + i];
      tr.block_probs[j * L + t] = pj[t];
    }
  }
  return tr;
}

// ---------------------------------------------------------------------------

std::string checkpoint_to_string(const PKTParams& params, const PKTConfig& config) {
  nlohmann::json tensors = nlohmann::json::array();
  for (const auto& [name, t] : params.named()) {
    tensors.push_back({{"name", name}, {"shape", t->shape()}, {"data", t->values()}});
  }
  const nlohmann::json doc{{"format", "pkt-checkpoint"},
                           {"version", 1},
                           {"config", detail::to_json(config)},
                           {"tensors", std::move(tensors)}};
  return doc.dump();
}

std::pair<PKTParams, PKTConfig> checkpoint_from_string(std::string_view text) {
  try {
    const auto doc = nlohmann::json::parse(text);
    if (doc.at("format") != "pkt-checkpoint") throw DataError("not a pkt checkpoint");
    PKTConfig config = detail::model_config_from_json(doc.at("config"));
    PKTParams params = PKTParams::initialize(config);
    const auto& tensors = doc.at("tensors");
    auto named = params.named();
    if (tensors.size() != named.size()) {
      throw DataError("checkpoint has " + std::to_string(tensors.size()) + " tensors, expected " +
                      std::to_string(named.size()));
    }
    for (std::size_t i = 0; i < named.size(); ++i) {
      const auto& jt = tensors[i];
      if (jt.at("name").get<std::string>() != named[i].first) {
        throw DataError("checkpoint tensor " + std::to_string(i) + " is '" +
                        jt.at("name").get<std::string>() + "', expected '" + named[i].first + "'");
      }
      Tensor t(jt.at("shape").get<Shape>(), jt.at("data").get<std::vector<double>>());
      if (t.shape() != named[i].second->shape()) {
        throw DataError("checkpoint tensor '" + named[i].first + "' has shape " +
                        to_string(t.shape()) + ", expected " +
                        to_string(named[i].second->shape()));
      }
      *named[i].second = std::move(t);
    }
    return {std::move(params), config};
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("checkpoint: ") + e.what());
  }
}

void save_checkpoint(const std::filesystem::path& path, const PKTParams& params,
                     const PKTConfig& config) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << checkpoint_to_string(params, config) << '\n';
}

std::pair<PKTParams, PKTConfig> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open checkpoint " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return checkpoint_from_string(buf.str());
}

}  // namespace pkt
