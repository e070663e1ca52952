#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "support/fixtures.hpp"

using namespace soc2seq;
using namespace soc2seq::testing;

namespace {

std::vector<ConversationPair> pairs_for(std::uint64_t seed, Eigen::Index vocab, std::size_t n) {
  Rng rng(seed);
  return random_pairs(rng, vocab, n);
}

void expect_all_pass(const std::vector<GradSample>& samples, double tol = 1e-4) {
  std::set<std::string> tensors;
  for (const auto& s : samples) {
    tensors.insert(s.tensor);
    EXPECT_LE(s.rel_error, tol) << s.tensor << "[" << s.index << "] analytic " << s.analytic << " numeric "
                                << s.numeric;
  }
  EXPECT_GT(tensors.size(), 10u);
}

}  // namespace

TEST(GradientCheck, SingleLayerNoPersona) {
  auto c = tiny_config(12);
  c.layers = 1;
  c.hidden = 8;
  const auto pairs = pairs_for(1, 12, 2);
  const auto m = tiny_model(c, pairs, 3);
  expect_all_pass(gradient_check(m, pairs, 6, 11));
}

TEST(GradientCheck, LocationPersonaBothSides) {
  const auto c = tiny_config(10, PersonaMode::encoder_and_decoder, PersonaKind::location);
  const auto pairs = pairs_for(2, 10, 3);
  const auto m = tiny_model(c, pairs, 4);
  const auto samples = gradient_check(m, pairs, 5, 12);
  expect_all_pass(samples);
  std::set<std::string> names;
  for (const auto& s : samples) names.insert(s.tensor);
  EXPECT_TRUE(names.count("persona.location.county"));
  EXPECT_TRUE(names.count("encoder.0.persona"));
  EXPECT_TRUE(names.count("decoder.0.persona"));
}

TEST(GradientCheck, UserPersonaDecoderOnly) {
  const auto c = tiny_config(9, PersonaMode::decoder_only, PersonaKind::user);
  const auto pairs = pairs_for(3, 9, 3);
  const auto m = tiny_model(c, pairs, 5);
  expect_all_pass(gradient_check(m, pairs, 5, 13));
}

TEST(GradientCheck, WithoutAttention) {
  auto c = tiny_config(8, PersonaMode::decoder_only);
  c.attention = false;
  const auto pairs = pairs_for(4, 8, 2);
  const auto m = tiny_model(c, pairs, 6);
  auto samples = gradient_check(m, pairs, 5, 14);
  for (const auto& s : samples) EXPECT_LE(s.rel_error, 1e-4) << s.tensor;
}

TEST(GradientCheck, WithDropoutMasksHeldFixed) {
  auto c = tiny_config(10, PersonaMode::decoder_only);
  c.dropout = 0.25;
  const auto pairs = pairs_for(5, 10, 2);
  const auto m = tiny_model(c, pairs, 7);
  expect_all_pass(gradient_check(m, pairs, 4, 15, true));
}

TEST(Gradients, LocationModelHasNoUserTableGradient) {
  const auto c = tiny_config(10, PersonaMode::decoder_only, PersonaKind::location);
  const auto pairs = pairs_for(6, 10, 2);
  const auto m = tiny_model(c, pairs, 8);
  const auto g = gradients(m, pairs);
  EXPECT_EQ(g.grad.user.like.vectors().size(), 0);
  // Encoder persona block does not exist in decoder-only mode.
  EXPECT_EQ(g.grad.encoder[0].persona.size(), 0);
  EXPECT_GT(g.grad.location.county.vectors().cwiseAbs().maxCoeff(), 0.0);
}

TEST(Gradients, UnusedTableRowsGetZeroGradient) {
  const auto c = tiny_config(10, PersonaMode::decoder_only, PersonaKind::location);
  auto pairs = pairs_for(7, 10, 3);
  const auto m = tiny_model(c, pairs, 9);
  const std::vector<ConversationPair> one{pairs[0]};
  const auto g = gradients(m, one);
  const auto used = *m.params.location.county.find(pairs[0].meta.location.county);
  for (std::size_t r = 0; r < m.params.location.county.size(); ++r) {
    const double mag = g.grad.location.county.vectors().col(static_cast<Eigen::Index>(r)).cwiseAbs().sum();
    if (r == used) {
      EXPECT_GT(mag, 0.0);
    } else {
      EXPECT_EQ(mag, 0.0);
    }
  }
}

TEST(Gradients, DuplicatedPairEqualsSinglePair) {
  const auto c = tiny_config(10);
  const auto pairs = pairs_for(8, 10, 1);
  const auto m = tiny_model(c, pairs, 10);
  const auto g1 = gradients(m, pairs);
  const std::vector<ConversationPair> twice{pairs[0], pairs[0]};
  const auto g2 = gradients(m, twice);
  EXPECT_NEAR(g1.loss, g2.loss, 1e-15);
  std::vector<double> a, b;
  g1.grad.for_each([&](const std::string&, const auto& t) { a.insert(a.end(), t.data(), t.data() + t.size()); });
  g2.grad.for_each([&](const std::string&, const auto& t) { b.insert(b.end(), t.data(), t.data() + t.size()); });
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-14 * (1 + std::abs(a[i])));
}

TEST(Gradients, EmptyBatchIsConfigError) {
  const auto c = tiny_config(10);
  const auto m = tiny_model(c, {}, 1);
  EXPECT_THROW(gradients(m, std::vector<ConversationPair>{}), ConfigError);
}

TEST(SequenceNll, UniformModelGivesLogVocab) {
  auto c = tiny_config(100);
  auto m = tiny_model(c, {}, 2);
  m.params.output_weight.setZero();
  m.params.output_bias.setZero();
  const auto pairs = pairs_for(9, 100, 4);
  for (const auto& p : pairs) EXPECT_NEAR(sequence_nll(m, p), std::log(100.0), 1e-12);
}

TEST(SequenceNll, PerfectModelGivesZero) {
  auto c = tiny_config(10);
  auto m = tiny_model(c, {}, 3);
  m.params.output_weight.setZero();
  m.params.output_bias.setZero();
  m.params.output_bias(kEos) = 1000.0;
  ConversationPair p{{5, 6, kEos}, {kEos}, {}};
  EXPECT_EQ(sequence_nll(m, p), 0.0);
}

TEST(SequenceNll, HandSetHalfAndQuarter) {
  // p(word 4) = 1/2, p(EOS) = 1/4, the other 6 ids share the last quarter.
  auto c = tiny_config(10);
  auto m = tiny_model(c, {}, 4);
  m.params.output_weight.setZero();
  for (Eigen::Index v = 0; v < 10; ++v) m.params.output_bias(v) = std::log(0.25 / 8.0);
  m.params.output_bias(4) = std::log(0.5);
  m.params.output_bias(kEos) = std::log(0.25);
  ConversationPair p{{5, 6, kEos}, {4, kEos}, {}};
  EXPECT_NEAR(sequence_nll(m, p), (std::log(2.0) + std::log(4.0)) / 2.0, 1e-14);
}

TEST(SequenceNll, DeterministicWithoutDropout) {
  auto c = tiny_config(10, PersonaMode::encoder_and_decoder);
  c.dropout = 0.25;
  const auto pairs = pairs_for(10, 10, 2);
  const auto m = tiny_model(c, pairs, 5);
  EXPECT_EQ(sequence_nll(m, pairs[0]), sequence_nll(m, pairs[0]));
  Rng r1(1), r2(2);
  const auto ctx = m.persona_for(pairs[0].meta);
  EXPECT_NE(sequence_nll(m, pairs[0], ctx, true, &r1), sequence_nll(m, pairs[0], ctx, true, &r2));
}

TEST(SequenceNll, RejectsBadTokensAndEmptySequences) {
  const auto c = tiny_config(10);
  const auto m = tiny_model(c, {}, 6);
  EXPECT_THROW(sequence_nll(m, ConversationPair{{5, 99, kEos}, {4, kEos}, {}}), InputError);
  EXPECT_THROW(sequence_nll(m, ConversationPair{{5, kEos}, {-1, kEos}, {}}), InputError);
  EXPECT_THROW(sequence_nll(m, ConversationPair{{}, {4, kEos}, {}}), InputError);
  EXPECT_THROW(sequence_nll(m, ConversationPair{{5, kEos}, {}, {}}), InputError);
}

TEST(Encode, OneStatePerPosition) {
  const auto c = tiny_config(10);
  const auto m = tiny_model(c, {}, 7);
  const std::vector<TokenId> one{kEos};
  EXPECT_EQ(encode(m, one).states.cols(), 1);
  const std::vector<TokenId> four{4, 5, 6, kEos};
  EXPECT_EQ(encode(m, four).states.cols(), 4);
}

TEST(Encode, ZeroParametersGiveZeroStates) {
  const auto c = tiny_config(10);
  auto m = tiny_model(c, {}, 8);
  m.params.for_each([](const std::string&, auto& t) { t.setZero(); });
  const std::vector<TokenId> s{4, 4, 4, kEos};
  const auto enc = encode(m, s);
  EXPECT_TRUE(enc.states.allFinite());
  EXPECT_EQ(enc.states.cwiseAbs().maxCoeff(), 0.0);
}

TEST(Encode, DecoderOnlyPersonaLeavesEncoderUntouched) {
  const auto base = tiny_config(10);
  const auto pairs = pairs_for(11, 10, 2);
  auto with = tiny_model(tiny_config(10, PersonaMode::decoder_only), pairs, 9);
  auto without = with;
  without.config = base;
  const auto a = encode(with, pairs[0].post);
  const auto b = encode(without, pairs[0].post);
  EXPECT_TRUE(a.states == b.states);
}

TEST(DecodeStep, DistributionIsNormalizedAndPositive) {
  const auto c = tiny_config(10, PersonaMode::encoder_and_decoder);
  const auto pairs = pairs_for(12, 10, 3);
  const auto m = tiny_model(c, pairs, 10);
  for (const auto& p : pairs) {
    const auto ctx = m.persona_for(p.meta);
    const auto enc = encode(m, p.post, &ctx.encoder);
    auto state = initial_decoder_state(enc);
    TokenId prev = kBos;
    for (const auto w : p.reply) {
      const auto r = decode_step(m, state, prev, &ctx.decoder, enc);
      EXPECT_NEAR(r.distribution.sum(), 1.0, 1e-12);
      EXPECT_GT(r.distribution.minCoeff(), 0.0);
      state = r.state;
      prev = w;
    }
  }
}

TEST(DecodeStep, AttentionWeightsNormalized) {
  const auto c = tiny_config(10);
  const auto pairs = pairs_for(13, 10, 1);
  const auto m = tiny_model(c, pairs, 11);
  const auto enc = encode(m, pairs[0].post);
  detail::AttentionStep a;
  detail::attend(m.params, enc, enc.final.h.back(), a);
  EXPECT_NEAR(a.weights.sum(), 1.0, 1e-12);
  EXPECT_GE(a.weights.minCoeff(), 0.0);
}

TEST(DecodeStep, SingleSourceStateIsTheContext) {
  const auto c = tiny_config(10);
  const auto m = tiny_model(c, {}, 12);
  const std::vector<TokenId> s{kEos};
  const auto enc = encode(m, s);
  const auto r = decode_step(m, initial_decoder_state(enc), kBos, nullptr, enc);
  EXPECT_TRUE(r.state.context == enc.states.col(0));
}

TEST(DecodeStep, ZeroPersonaMatchesNoPersona) {
  const auto pairs = pairs_for(14, 10, 2);
  auto with = tiny_model(tiny_config(10, PersonaMode::decoder_only), pairs, 13);
  auto without = with;
  without.config = tiny_config(10);
  without.params.decoder[0].persona.resize(4 * with.config.hidden, 0);
  for (const auto& p : pairs) {
    const VectorXd zero = VectorXd::Zero(with.config.persona_dim);
    const auto ea = encode(with, p.post);
    const auto eb = encode(without, p.post);
    auto sa = initial_decoder_state(ea), sb = initial_decoder_state(eb);
    TokenId prev = kBos;
    for (const auto w : p.reply) {
      const auto ra = decode_step(with, sa, prev, &zero, ea);
      const auto rb = decode_step(without, sb, prev, nullptr, eb);
      EXPECT_TRUE(ra.log_probs == rb.log_probs);
      sa = ra.state;
      sb = rb.state;
      prev = w;
    }
  }
}

TEST(DecodeStep, ZeroedPersonaWeightsMatchNoPersona) {
  const auto pairs = pairs_for(15, 10, 2);
  auto with = tiny_model(tiny_config(10, PersonaMode::decoder_only), pairs, 14);
  with.params.decoder[0].persona.setZero();
  auto without = with;
  without.config = tiny_config(10);
  for (const auto& p : pairs) {
    ConversationPair q = p;
    EXPECT_EQ(sequence_nll(with, q), sequence_nll(without, q, PersonaContext{}));
  }
}

TEST(DecodeStep, MissingPersonaIsInputError) {
  const auto pairs = pairs_for(16, 10, 1);
  const auto m = tiny_model(tiny_config(10, PersonaMode::decoder_only), pairs, 15);
  const auto enc = encode(m, pairs[0].post);
  EXPECT_THROW(decode_step(m, initial_decoder_state(enc), kBos, nullptr, enc), InputError);
  EXPECT_THROW(encode(tiny_model(tiny_config(10, PersonaMode::encoder_and_decoder), pairs, 1), pairs[0].post),
               InputError);
}

TEST(DecodeStep, NonFiniteActivationsReportLayerAndGate) {
  const auto pairs = pairs_for(17, 10, 1);
  auto m = tiny_model(tiny_config(10), pairs, 16);
  m.params.encoder[1].bias(0) = std::numeric_limits<double>::quiet_NaN();
  try {
    encode(m, pairs[0].post);
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("encoder layer 1"), std::string::npos) << msg;
    EXPECT_NE(msg.find("input"), std::string::npos) << msg;
  }
}

TEST(InitParams, UniformInRangeAndSeparateStacks) {
  auto c = tiny_config(10, PersonaMode::decoder_only);
  const auto m = tiny_model(c, pairs_for(18, 10, 2), 17);
  m.params.for_each([&](const std::string& name, const auto& t) {
    if (t.size() == 0) return;
    EXPECT_LE(t.cwiseAbs().maxCoeff(), c.init_scale) << name;
  });
  EXPECT_FALSE(m.params.encoder[0].recurrent == m.params.decoder[0].recurrent);
  EXPECT_FALSE(m.params.source_embedding == m.params.target_embedding);
}
