// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <filesystem>

#include "doctest.h"
#include "model_check.hpp"
#include "pkt/error.hpp"
#include "pkt/loss.hpp"
#include "pkt/model.hpp"
#include "testing.hpp"

using namespace pkt;
using pkt::testing::Gen;

namespace {

PKTConfig small_config(std::size_t E = 5, std::size_t d = 4, std::size_t nc = 3, std::size_t T = 8,
                       std::uint64_t seed = 1) {
  PKTConfig c;
  c.num_skills = E;
  c.hidden = d;
  c.num_capsules = nc;
  c.maxlen = T;
  c.seed = seed;
  return c;
}

GruVars bind_gru(Tape& tape, const GruWeights& w) {
  return {tape.constant(tape.value(tape.transpose(tape.constant(w.w_z)))), tape.constant(w.b_z),
          tape.constant(tape.value(tape.transpose(tape.constant(w.w_r)))), tape.constant(w.b_r),
          tape.constant(tape.value(tape.transpose(tape.constant(w.w_h)))), tape.constant(w.b_h)};
}

GruWeights zero_gru(std::size_t d) {
  return {Tensor({d, 2 * d}), Tensor({d}), Tensor({d, 2 * d}), Tensor({d}), Tensor({d, 2 * d}), Tensor({d})};
}

}  // namespace

TEST_CASE("config validation") {
  CHECK_NOTHROW(small_config().validate());
  auto c = small_config();
  c.num_capsules = 1;
  CHECK_THROWS_AS(c.validate(), Error);
  c = small_config();
  c.maxlen = 2;
  CHECK_THROWS_AS(c.validate(), Error);
  c = small_config();
  c.num_skills = 0;
  CHECK_THROWS_AS(c.validate(), Error);
  c = small_config();
  c.hidden = 0;
  CHECK_THROWS_AS(c.validate(), Error);
}

TEST_CASE("parameter count") {
  for (std::size_t E : {1u, 5u, 123u}) {
    for (std::size_t d : {1u, 4u, 16u}) {
      for (std::size_t nc : {2u, 4u, 7u}) {
        const auto c = small_config(E, d, nc);
        const auto p = PKTParams::initialize(c);
        CHECK(p.parameter_count() == (2 * E + 1) * d + 3 * (2 * d * d + d) + nc * (d + d + 1));
        CHECK(expected_parameter_count(c) == p.parameter_count());
        std::size_t enumerated = 0;
        for (const auto& [name, t] : p.named()) enumerated += t->size();
        CHECK(enumerated == p.parameter_count());
      }
    }
  }
  auto c = small_config();
  c.include_next_skill = true;
  CHECK(PKTParams::initialize(c).parameter_count() == expected_parameter_count(c));
}

TEST_CASE("initialization is seeded and bounded") {
  const auto c = small_config(5, 16, 4);
  const auto a = PKTParams::initialize(c);
  const auto b = PKTParams::initialize(c);
  CHECK(a.embedding == b.embedding);
  const double bound = 1.0 / std::sqrt(16.0);
  for (const auto& [name, t] : a.named()) {
    for (double v : t->data()) CHECK(std::abs(v) <= bound);
  }
  for (double v : a.gru.b_z.data()) CHECK(v == 0.0);
  auto c2 = c;
  c2.seed = 2;
  CHECK_FALSE(PKTParams::initialize(c2).embedding == a.embedding);
}

TEST_CASE("gru step with zero weights") {
  const std::size_t d = 3;
  Tape tape(false);
  const GruVars gru = bind_gru(tape, zero_gru(d));
  const Var e = tape.constant(Tensor::vector({0.3, -0.2, 0.9}));
  CHECK(tape.value(gru_step(tape, gru, tape.constant(Tensor(Shape{d})), e)).values() ==
        std::vector<double>{0, 0, 0});
  const Var h = gru_step(tape, gru, tape.constant(Tensor::vector({0.4, -0.8, 0.2})), e);
  CHECK(tape.value(h).values() == std::vector<double>{0.2, -0.4, 0.1});
}

TEST_CASE("gru step matches the scalar-loop oracle") {
  Gen g(99);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t d = 1 + g.index(6);
    GruWeights w{g.tensor({d, 2 * d}), g.tensor({d}), g.tensor({d, 2 * d}), g.tensor({d}),
                 g.tensor({d, 2 * d}), g.tensor({d})};
    const Tensor h = g.tensor({d});
    const Tensor e = g.tensor({d});
    Tape tape(false);
    const Tensor& got = tape.value(gru_step(tape, bind_gru(tape, w), tape.constant(h), tape.constant(e)));
    const auto want = pkt::testing::scalar_gru(w, h.values(), e.values());
    for (std::size_t i = 0; i < d; ++i) CHECK(std::abs(got[i] - want[i]) <= 1e-12);
  }
}

TEST_CASE("capsule attention") {
  Gen g(4);
  const std::size_t T = 4, d = 3;
  Tensor mask(Shape{1, T, T});
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t i = 0; i <= t; ++i) mask.at({0, t, i}) = 1.0;
  }
  SUBCASE("first step attends only to itself") {
    Tape tape(false);
    const Tensor H = g.tensor({1, T, d});
    const auto att = capsule_attention(tape, tape.constant(H), tape.constant(g.tensor({d, 1})), mask);
    const Tensor& a = tape.value(att.alpha);
    CHECK(a.at({0, 0, 0}) == 1.0);
    for (std::size_t i = 1; i < T; ++i) CHECK(a.at({0, 0, i}) == 0.0);
    for (std::size_t k = 0; k < d; ++k) CHECK(tape.value(att.capsule).at({0, 0, k}) == H.at({0, 0, k}));
  }
  SUBCASE("zero attention vector gives the prefix mean") {
    Tape tape(false);
    const Tensor H = g.tensor({1, T, d});
    const auto att = capsule_attention(tape, tape.constant(H), tape.constant(Tensor({d, 1})), mask);
    for (std::size_t t = 0; t < T; ++t) {
      for (std::size_t k = 0; k < d; ++k) {
        double mean = 0.0;
        for (std::size_t i = 0; i <= t; ++i) mean += H.at({0, i, k});
        mean /= static_cast<double>(t + 1);
        CHECK(tape.value(att.capsule).at({0, t, k}) == doctest::Approx(mean).epsilon(1e-14));
      }
    }
  }
  SUBCASE("identical hidden states pass through") {
    Tape tape(false);
    Tensor H(Shape{1, T, d});
    for (std::size_t t = 0; t < T; ++t) {
      H.at({0, t, 0}) = 0.25;
      H.at({0, t, 1}) = -0.5;
      H.at({0, t, 2}) = 0.125;
    }
    const auto att = capsule_attention(tape, tape.constant(H), tape.constant(g.tensor({d, 1}, -3, 3)), mask);
    for (std::size_t t = 0; t < T; ++t) {
      for (std::size_t k = 0; k < d; ++k) {
        CHECK(tape.value(att.capsule).at({0, t, k}) == doctest::Approx(H.at({0, 0, k})).epsilon(1e-14));
      }
    }
  }
}

TEST_CASE("readout") {
  auto logit = [](double p) { return std::log(p / (1.0 - p)); };
  SUBCASE("prediction is the mean of block probabilities") {
    Tape tape(false);
    std::vector<CapsuleVars> caps{{Var{}, tape.constant(Tensor({1, 1})), tape.constant(Tensor::vector({logit(0.2)}))},
                                  {Var{}, tape.constant(Tensor({1, 1})), tape.constant(Tensor::vector({logit(0.8)}))}};
    const Var u = tape.constant(Tensor({1, 1, 1}, 0.3));
    const std::vector<Var> reprs{u, u};
    const auto out = readout(tape, caps, reprs, u);
    CHECK(tape.value(out.prediction)[0] == doctest::Approx(0.5).epsilon(1e-15));
  }
  SUBCASE("equal blocks reconstruct q times u, orthogonal student gives 0.5") {
    Tape tape(false);
    const double q = 0.7;
    std::vector<CapsuleVars> caps;
    for (int j = 0; j < 3; ++j) {
      caps.push_back({Var{}, tape.constant(Tensor({2, 1})), tape.constant(Tensor::vector({logit(q)}))});
    }
    const Var u = tape.constant(Tensor({1, 1, 2}, std::vector<double>{0.0, 0.6}));
    const std::vector<Var> reprs{u, u, u};
    const Var student = tape.constant(Tensor({1, 1, 2}, std::vector<double>{0.9, 0.0}));
    const auto out = readout(tape, caps, reprs, student);
    const Tensor& r = tape.value(out.reconstruction);
    CHECK(r[0] == 0.0);
    CHECK(r[1] == doctest::Approx(q * 0.6).epsilon(1e-14));
    CHECK(tape.value(out.similarity)[0] == 0.5);
  }
}

TEST_CASE("forward trace invariants over random inputs") {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    Gen g(seed);
    const auto c = small_config(2 + g.index(6), 1 + g.index(6), 2 + g.index(3), 3 + g.index(8), seed);
    PKTParams p = PKTParams::initialize(c);
    // Larger weights than the default initialization stress the bounds.
    for (auto& [name, t] : p.named()) {
      for (double& v : t->data()) v *= 1.0 + 3.0 * g.uniform();
    }
    const auto seq = pkt::testing::random_sequence(g, c.maxlen, 2 + g.index(c.maxlen - 1), c.num_skills);
    const ForwardTrace tr = forward_sequence(seq, p, c);
    const std::size_t L = seq.valid_length();
    CHECK(tr.prediction.size() == L);
    for (double v : tr.hidden.data()) CHECK(std::abs(v) < 1.0);
    for (std::size_t t = 0; t < L; ++t) {
      CHECK(tr.prediction[t] > 0.0);
      CHECK(tr.prediction[t] < 1.0);
      CHECK(tr.similarity[t] > 0.0);
      CHECK(tr.similarity[t] < 1.0);
      for (std::size_t j = 0; j < c.num_capsules; ++j) {
        double s = 0.0;
        for (std::size_t i = 0; i < L; ++i) {
          const double a = tr.attention[(j * L + t) * L + i];
          CHECK(a >= 0.0);
          if (i > t) CHECK(a == 0.0);
          s += a;
        }
        CHECK(std::abs(s - 1.0) <= 1e-12);
      }
    }
    // Student representation is the prefix mean of hidden states.
    const std::size_t d = c.hidden;
    for (std::size_t t = 0; t < L; ++t) {
      for (std::size_t k = 0; k < d; ++k) {
        double mean = 0.0;
        for (std::size_t i = 0; i <= t; ++i) mean += tr.hidden[i * d + k];
        CHECK(tr.student[t * d + k] == doctest::Approx(mean / static_cast<double>(t + 1)).epsilon(1e-12));
      }
    }
  }
}

TEST_CASE("hidden state stays bounded on long sequences") {
  Gen g(5);
  auto c = small_config(3, 4, 2, 200, 8);
  PKTParams p = PKTParams::initialize(c);
  for (auto& [name, t] : p.named()) {
    for (double& v : t->data()) v *= 20.0;
  }
  const auto seq = pkt::testing::random_sequence(g, 200, 200, 3);
  const auto tr = forward_sequence(seq, p, c);
  for (double v : tr.hidden.data()) {
    CHECK(std::isfinite(v));
    CHECK(std::abs(v) <= 1.0);
  }
}

TEST_CASE("causality under mutation of later interactions") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Gen g(seed + 500);
    const auto c = small_config(4, 5, 3, 10, seed);
    const auto p = PKTParams::initialize(c);
    const auto base = pkt::testing::random_sequence(g, 10, 10, 4);
    const std::size_t t = g.index(9);
    auto mutated = base;
    for (std::size_t i = t + 1; i < 10; ++i) {
      mutated.skills[i] = static_cast<int>(g.index(4));
      mutated.responses[i] = g.bit();
      if (g.bit(0.2)) {
        for (std::size_t j = i; j < 10; ++j) {
          mutated.skills[j] = kPadValue;
          mutated.responses[j] = kPadValue;
          mutated.mask[j] = 0;
        }
        break;
      }
    }
    const std::vector<InteractionSequence> seqs{base, mutated};
    Tape tape(false);
    const auto fw = forward_batch(tape, bind(tape, p), encode_batch(seqs, 4), c);
    const Tensor& pred = tape.value(fw.prediction);
    const Tensor& sim = tape.value(fw.similarity);
    for (std::size_t s = 0; s <= t; ++s) {
      CHECK(pred[s] == pred[10 + s]);
      CHECK(sim[s] == sim[10 + s]);
    }
  }
}

TEST_CASE("order matters") {
  Gen g(8);
  const auto c = small_config(4, 5, 3, 6, 3);
  const auto p = PKTParams::initialize(c);
  auto seq = pkt::testing::random_sequence(g, 6, 6, 4);
  seq.skills = {0, 1, 2, 3, 0, 1};
  seq.responses = {1, 0, 1, 1, 0, 1};
  auto swapped = seq;
  std::swap(swapped.skills[1], swapped.skills[2]);
  std::swap(swapped.responses[1], swapped.responses[2]);
  const auto a = forward_sequence(seq, p, c);
  const auto b = forward_sequence(swapped, p, c);
  CHECK_FALSE(a.prediction == b.prediction);
}

TEST_CASE("padding does not change valid-step outputs") {
  Gen g(12);
  const auto c8 = small_config(4, 5, 3, 8, 2);
  auto c12 = c8;
  c12.maxlen = 12;
  const auto p = PKTParams::initialize(c8);
  const auto s8 = pkt::testing::random_sequence(g, 8, 5, 4);
  auto s12 = s8;
  for (int i = 0; i < 4; ++i) {
    s12.skills.push_back(kPadValue);
    s12.responses.push_back(kPadValue);
    s12.mask.push_back(0);
  }
  const auto a = forward_sequence(s8, p, c8);
  const auto b = forward_sequence(s12, p, c12);
  CHECK(a.prediction == b.prediction);
  CHECK(a.similarity == b.similarity);
  CHECK(a.attention == b.attention);
}

TEST_CASE("forward_sequence errors") {
  Gen g(1);
  const auto c = small_config();
  const auto p = PKTParams::initialize(c);
  CHECK_THROWS_AS(forward_sequence(pkt::testing::random_sequence(g, 8, 1, 5), p, c), DataError);
  CHECK_THROWS_AS(forward_sequence(pkt::testing::random_sequence(g, 7, 4, 5), p, c), Error);
}

TEST_CASE("objective gradients match finite differences") {
  Gen g(31);
  for (bool next_skill : {false, true}) {
    auto c = small_config(3, 3, 2, 4, 17);
    c.include_next_skill = next_skill;
    const auto p = PKTParams::initialize(c);
    auto seqs = pkt::testing::random_sequences(g, 2, 4, 3);
    LossConfig loss;
    loss.lambda_rr = 0.7;
    loss.lambda_ci = 0.4;
    loss.alpha_ci = 1.6;
    const auto report = pkt::testing::objective_grad_check(p, c, encode_batch(seqs, 3), loss);
    for (const auto& [name, r] : report) {
      INFO(name << " violation " << r.max_violation << " max abs diff " << r.max_abs_diff);
      CHECK(r.max_violation <= 1.0);
    }
  }
}

TEST_CASE("padded tail receives no gradient") {
  Gen g(2);
  const auto c = small_config(3, 4, 2, 8, 4);
  const auto p = PKTParams::initialize(c);
  std::vector<InteractionSequence> seqs{pkt::testing::random_sequence(g, 8, 4, 3)};
  seqs[0].responses[0] = 1;
  seqs[0].responses[1] = 0;
  Tape tape;
  const auto bound = bind(tape, p);
  const auto batch = encode_batch(seqs, 3);
  const auto fw = forward_batch(tape, bound, batch, c);
  const auto obj = pkt_objective(tape, fw, batch, LossConfig{});
  tape.backward(obj.total);
  const Tensor& ge = tape.grad(bound.embedding);
  const std::size_t pad = padding_code(3);
  for (std::size_t k = 0; k < c.hidden; ++k) CHECK(ge[pad * c.hidden + k] == 0.0);
}

TEST_CASE("checkpoint round trip is bit exact") {
  auto c = small_config(6, 5, 3, 9, 1234);
  c.include_next_skill = true;
  PKTParams p = PKTParams::initialize(c);
  p.embedding[3] = 1.0 / 3.0;
  p.gru.b_h[0] = -2.5e-300;
  const auto [q, c2] = checkpoint_from_string(checkpoint_to_string(p, c));
  CHECK(c2 == c);
  const auto np = p.named();
  const auto nq = q.named();
  REQUIRE(np.size() == nq.size());
  for (std::size_t i = 0; i < np.size(); ++i) {
    CHECK(np[i].first == nq[i].first);
    CHECK(*np[i].second == *nq[i].second);
  }
  const auto path = std::filesystem::temp_directory_path() / "pkt_ckpt_test.json";
  save_checkpoint(path, p, c);
  CHECK(load_checkpoint(path).first.embedding == p.embedding);
  std::filesystem::remove(path);
  CHECK_THROWS_AS(load_checkpoint(path), Error);
  CHECK_THROWS_AS(checkpoint_from_string("{\"format\":\"other\"}"), Error);
}
