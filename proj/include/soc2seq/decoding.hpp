#pragma once

#include <algorithm>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "soc2seq/corpus.hpp"
#include "soc2seq/error.hpp"
#include "soc2seq/model.hpp"
#include "soc2seq/util.hpp"

namespace soc2seq {

// Reference decoding uses beam 200 and length 20; desk default beam is 8.
struct BeamConfig {
  std::size_t beam = 8;
  std::size_t max_len = 20;
  std::size_t n_best = 1;
  bool length_normalize = false;

  void validate() const {
    if (beam < 1) throw ConfigError("beam size must be >= 1");
    if (max_len < 1) throw ConfigError("max_len must be >= 1");
    if (n_best < 1) throw ConfigError("n_best must be >= 1");
  }
};

struct Hypothesis {
  std::vector<TokenId> tokens;  // ends with EOS when finished
  double log_prob = 0.0;
  double score = 0.0;           // log_prob, or log_prob / length when normalized
  bool finished = false;
};

struct BeamResult {
  std::vector<Hypothesis> hypotheses;  // best first
  bool truncated = false;              // no hypothesis reached EOS within max_len
};

namespace detail {

struct Live {
  std::vector<TokenId> tokens;
  double log_prob = 0.0;
  StepState state;
};

// Higher score first; equal scores fall back to token order so the result
// does not depend on container internals.
inline bool better(double sa, const std::vector<TokenId>& ta, double sb, const std::vector<TokenId>& tb) {
  if (sa != sb) return sa > sb;
  return ta < tb;
}

// Indices of the k largest entries, larger first, lower id on ties.
inline std::vector<Eigen::Index> top_k(const VectorXd& v, std::size_t k) {
  std::vector<Eigen::Index> idx(static_cast<std::size_t>(v.size()));
  std::iota(idx.begin(), idx.end(), Eigen::Index{0});
  k = std::min(k, idx.size());
  auto cmp = [&](Eigen::Index a, Eigen::Index b) { return v(a) != v(b) ? v(a) > v(b) : a < b; };
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(), cmp);
  idx.resize(k);
  return idx;
}

}  // namespace detail

// Each live hypothesis proposes its top-B continuations; those ending in EOS
// move to the finished pool and the best B of the rest stay alive. Stops at
// max_len or when nothing is alive.
inline BeamResult beam_search(const Model& model, std::span<const TokenId> source, const PersonaContext& persona,
                              const BeamConfig& cfg) {
  cfg.validate();
  const VectorXd* enc_persona = persona.encoder.size() > 0 ? &persona.encoder : nullptr;
  const VectorXd* dec_persona = persona.decoder.size() > 0 ? &persona.decoder : nullptr;
  const EncoderOutput enc = encode(model, source, enc_persona);
  auto score_of = [&](double lp, std::size_t len) {
    return cfg.length_normalize ? lp / static_cast<double>(len) : lp;
  };

  std::vector<detail::Live> live(1);
  live[0].state = initial_decoder_state(enc);
  std::vector<Hypothesis> finished;

  struct Candidate {
    std::size_t parent;
    TokenId word;
    double log_prob;
    std::vector<TokenId> tokens;
  };

  for (std::size_t step = 0; step < cfg.max_len && !live.empty(); ++step) {
    std::vector<Candidate> open;
    std::vector<StepState> next_states(live.size());
    for (std::size_t h = 0; h < live.size(); ++h) {
      const TokenId prev = live[h].tokens.empty() ? kBos : live[h].tokens.back();
      auto r = decode_step(model, live[h].state, prev, dec_persona, enc);
      next_states[h] = std::move(r.state);
      for (const auto w : detail::top_k(r.log_probs, cfg.beam)) {
        Candidate c{h, static_cast<TokenId>(w), live[h].log_prob + r.log_probs(w), live[h].tokens};
        c.tokens.push_back(c.word);
        if (c.word == kEos) {
          finished.push_back({std::move(c.tokens), c.log_prob, score_of(c.log_prob, step + 1), true});
        } else {
          open.push_back(std::move(c));
        }
      }
    }
    auto keep = std::min(open.size(), cfg.beam);
    std::partial_sort(open.begin(), open.begin() + static_cast<std::ptrdiff_t>(keep), open.end(),
                      [](const Candidate& a, const Candidate& b) {
                        return detail::better(a.log_prob, a.tokens, b.log_prob, b.tokens);
                      });
    std::vector<detail::Live> next;
    for (std::size_t k = 0; k < keep; ++k) {
      next.push_back({std::move(open[k].tokens), open[k].log_prob, next_states[open[k].parent]});
    }
    live = std::move(next);
  }

  BeamResult result;
  if (finished.empty()) {
    result.truncated = true;
    for (auto& l : live) {
      const auto len = l.tokens.size();
      finished.push_back({std::move(l.tokens), l.log_prob, score_of(l.log_prob, len), false});
    }
  }
  std::sort(finished.begin(), finished.end(), [](const Hypothesis& a, const Hypothesis& b) {
    return detail::better(a.score, a.tokens, b.score, b.tokens);
  });
  if (finished.size() > cfg.n_best) finished.resize(cfg.n_best);
  result.hypotheses = std::move(finished);
  return result;
}

inline BeamResult beam_search(const Model& model, const ConversationPair& pair, const BeamConfig& cfg) {
  return beam_search(model, pair.post, model.persona_for(pair.meta), cfg);
}

// Log-probability the model assigns to `reply` (EOS included if present).
inline double sequence_log_prob(const Model& model, std::span<const TokenId> source, const PersonaContext& persona,
                                std::span<const TokenId> reply) {
  const VectorXd* enc_persona = persona.encoder.size() > 0 ? &persona.encoder : nullptr;
  const VectorXd* dec_persona = persona.decoder.size() > 0 ? &persona.decoder : nullptr;
  const EncoderOutput enc = encode(model, source, enc_persona);
  StepState state = initial_decoder_state(enc);
  TokenId prev = kBos;
  double lp = 0.0;
  for (const auto w : reply) {
    auto r = decode_step(model, state, prev, dec_persona, enc);
    detail::check_token(model.config, w);
    lp += r.log_probs(w);
    state = std::move(r.state);
    prev = w;
  }
  return lp;
}

// Reply tokens without the terminating EOS.
inline std::vector<TokenId> strip_eos(std::vector<TokenId> tokens) {
  if (!tokens.empty() && tokens.back() == kEos) tokens.pop_back();
  return tokens;
}

// One JSON object per input pair: post text, persona metadata, and the
// n-best replies with their scores.
inline nlohmann::ordered_json decode_record(const Model& model, const Vocabulary& vocab, const ConversationPair& pair,
                                           const BeamConfig& cfg) {
  const auto r = beam_search(model, pair, cfg);
  nlohmann::ordered_json j;
  j["post"] = join(vocab.decode(pair.post), " ");
  j["meta"] = meta_to_json(pair.meta);
  j["truncated"] = r.truncated;
  j["replies"] = nlohmann::ordered_json::array();
  for (const auto& h : r.hypotheses) {
    j["replies"].push_back({{"text", join(vocab.decode(h.tokens), " ")}, {"log_prob", h.log_prob}, {"score", h.score}});
  }
  return j;
}

}  // namespace soc2seq
