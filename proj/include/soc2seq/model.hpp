#pragma once

#include <cmath>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "soc2seq/corpus.hpp"
#include "soc2seq/error.hpp"
#include "soc2seq/model_config.hpp"
#include "soc2seq/persona.hpp"
#include "soc2seq/util.hpp"

namespace soc2seq {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// Gate rows are stacked [input; forget; output; candidate], each `hidden` tall.
struct LstmLayerParams {
  MatrixXd recurrent;  // 4H x H
  MatrixXd input;      // 4H x in
  MatrixXd persona;    // 4H x P on the persona-fed first layer, else 4H x 0
  VectorXd bias;       // 4H
};

// Encoder and decoder never share weights.
struct ModelParams {
  MatrixXd source_embedding;  // word_dim x vocab
  MatrixXd target_embedding;  // word_dim x vocab
  std::vector<LstmLayerParams> encoder;
  std::vector<LstmLayerParams> decoder;
  MatrixXd attention_query;  // H x H
  MatrixXd attention_key;    // H x H
  VectorXd attention_score;  // H
  MatrixXd output_weight;    // vocab x (H or 2H)
  VectorXd output_bias;      // vocab
  LocationEmbeddingTables location;
  UserEmbeddingTables user;

  // Visits every tensor in a fixed order with a stable name. Works on const
  // and non-const params; F receives (const std::string&, Matrix-or-Vector&).
  template <typename Self, typename F>
  static void visit(Self& p, F&& f) {
    f(std::string("source_embedding"), p.source_embedding);
    f(std::string("target_embedding"), p.target_embedding);
    auto layers = [&](auto& stack, const std::string& prefix) {
      for (std::size_t l = 0; l < stack.size(); ++l) {
        const auto base = prefix + "." + std::to_string(l) + ".";
        f(base + "recurrent", stack[l].recurrent);
        f(base + "input", stack[l].input);
        f(base + "persona", stack[l].persona);
        f(base + "bias", stack[l].bias);
      }
    };
    layers(p.encoder, "encoder");
    layers(p.decoder, "decoder");
    f(std::string("attention.query"), p.attention_query);
    f(std::string("attention.key"), p.attention_key);
    f(std::string("attention.score"), p.attention_score);
    f(std::string("output.weight"), p.output_weight);
    f(std::string("output.bias"), p.output_bias);
    f(std::string("persona.location.county"), p.location.county.vectors());
    f(std::string("persona.location.city"), p.location.city.vectors());
    f(std::string("persona.location.country"), p.location.country.vectors());
    f(std::string("persona.user.comment"), p.user.comment.vectors());
    f(std::string("persona.user.like"), p.user.like.vectors());
  }

  template <typename F>
  void for_each(F&& f) { visit(*this, std::forward<F>(f)); }
  template <typename F>
  void for_each(F&& f) const { visit(*this, std::forward<F>(f)); }

  // Same shapes and table keys, all values zero.
  ModelParams zeros_like() const {
    ModelParams z = *this;
    z.for_each([](const std::string&, auto& t) { t.setZero(); });
    return z;
  }

  std::size_t num_scalars() const {
    std::size_t n = 0;
    for_each([&](const std::string&, const auto& t) { n += static_cast<std::size_t>(t.size()); });
    return n;
  }
};

inline bool is_user_table(const std::string& tensor_name) {
  return tensor_name.rfind("persona.user.", 0) == 0;
}

// Identifies a persona-table column: which level/table and which row.
struct TableRow {
  enum class Table { county, city, country, comment, like } table;
  std::size_t row = 0;
};

// Persona inputs for one pair: the concatenated vectors and the table rows
// they came from (for gradient routing). Empty vectors mean "no persona".
struct PersonaContext {
  VectorXd encoder;
  VectorXd decoder;
  std::vector<TableRow> encoder_rows;
  std::vector<TableRow> decoder_rows;
};

struct Model {
  ModelConfig config;
  ModelParams params;
  std::string vocab_hash;
  // "none", "joint" (learned with the conversation model) or
  // "socialgraph:<id>" (pretrained node embeddings).
  std::string user_provenance = "none";
  bool user_tables_trainable = true;
  bool social_tuned = false;

  const EmbeddingTable& table(TableRow::Table t) const {
    switch (t) {
      case TableRow::Table::county: return params.location.county;
      case TableRow::Table::city: return params.location.city;
      case TableRow::Table::country: return params.location.country;
      case TableRow::Table::comment: return params.user.comment;
      case TableRow::Table::like: return params.user.like;
    }
    throw std::logic_error("bad table");
  }

  std::vector<TableRow> location_rows(const LocationKey& key) const {
    using T = TableRow::Table;
    return {{T::county, row_or_unknown(params.location.county, key.county)},
            {T::city, row_or_unknown(params.location.city, key.city)},
            {T::country, row_or_unknown(params.location.country, key.country)}};
  }

  std::vector<TableRow> user_rows(const std::string& user) const {
    using T = TableRow::Table;
    return {{T::comment, row_or_unknown(params.user.comment, user)},
            {T::like, row_or_unknown(params.user.like, user)}};
  }

  VectorXd gather(const std::vector<TableRow>& rows) const {
    Eigen::Index n = 0;
    for (const auto& r : rows) n += table(r.table).dim();
    VectorXd v(n);
    Eigen::Index off = 0;
    for (const auto& r : rows) {
      const auto& t = table(r.table);
      v.segment(off, t.dim()) = t.vectors().col(static_cast<Eigen::Index>(r.row));
      off += t.dim();
    }
    return v;
  }

  // Persona inputs implied by a pair's metadata under this model's config.
  PersonaContext persona_for(const PairMeta& meta) const {
    PersonaContext ctx;
    if (!config.uses_persona()) return ctx;
    if (config.persona_kind == PersonaKind::location) {
      ctx.decoder_rows = location_rows(meta.location);
      if (config.encoder_persona_input()) ctx.encoder_rows = ctx.decoder_rows;
    } else {
      ctx.decoder_rows = user_rows(meta.replier_user);
      if (config.encoder_persona_input()) {
        ctx.encoder_rows = user_rows(config.encoder_persona == EncoderPersona::author ? meta.author_user
                                                                                      : meta.replier_user);
      }
    }
    ctx.decoder = gather(ctx.decoder_rows);
    if (!ctx.encoder_rows.empty()) ctx.encoder = gather(ctx.encoder_rows);
    return ctx;
  }
};

inline Eigen::Index decoder_input_persona_dim(const ModelConfig& c) {
  return c.uses_persona() ? c.persona_dim : 0;
}

// Network weights drawn from U[-init_scale, init_scale]. Persona tables are
// attached separately (see training.hpp).
inline ModelParams init_params(const ModelConfig& c, Rng& rng) {
  c.validate();
  const auto H = c.hidden;
  ModelParams p;
  auto fill = [&](auto& m, Eigen::Index rows, Eigen::Index cols) {
    m.resize(rows, cols);
    init_uniform(m, rng, c.init_scale);
  };
  auto vec = [&](VectorXd& v, Eigen::Index n) {
    v.resize(n);
    init_uniform(v, rng, c.init_scale);
  };
  fill(p.source_embedding, c.word_dim, c.vocab_size);
  fill(p.target_embedding, c.word_dim, c.vocab_size);
  auto stack = [&](std::vector<LstmLayerParams>& layers, Eigen::Index persona_in) {
    layers.resize(static_cast<std::size_t>(c.layers));
    for (Eigen::Index l = 0; l < c.layers; ++l) {
      auto& L = layers[static_cast<std::size_t>(l)];
      fill(L.recurrent, 4 * H, H);
      fill(L.input, 4 * H, l == 0 ? c.word_dim : H);
      fill(L.persona, 4 * H, l == 0 ? persona_in : 0);
      vec(L.bias, 4 * H);
    }
  };
  stack(p.encoder, c.encoder_persona_input() ? c.persona_dim : 0);
  stack(p.decoder, decoder_input_persona_dim(c));
  if (c.attention) {
    fill(p.attention_query, H, H);
    fill(p.attention_key, H, H);
    vec(p.attention_score, H);
  } else {
    p.attention_query.resize(0, 0);
    p.attention_key.resize(0, 0);
    p.attention_score.resize(0);
  }
  fill(p.output_weight, c.vocab_size, c.attention ? 2 * H : H);
  vec(p.output_bias, c.vocab_size);
  return p;
}

// Recurrent state after a decoder step.
struct StepState {
  std::vector<VectorXd> h;
  std::vector<VectorXd> m;
  VectorXd context;  // attention context used for the last prediction
};

struct EncoderOutput {
  MatrixXd states;  // H x T, top-layer hidden state per source position
  MatrixXd keys;    // attention_key * states
  StepState final;  // per-layer state after the last source token
};

namespace detail {

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

struct LstmStep {
  VectorXd x;       // input as seen by the gate weights (after dropout)
  VectorXd mask;    // dropout mask on x; empty when inactive
  VectorXd h_prev, m_prev;
  VectorXd i, f, o, g;
  VectorXd m, tanh_m, h;
};

inline VectorXd dropout_mask(Eigen::Index n, double rate, Rng& rng) {
  VectorXd mask(n);
  const double keep = 1.0 - rate;
  for (Eigen::Index k = 0; k < n; ++k) mask(k) = uniform01(rng) < keep ? 1.0 / keep : 0.0;
  return mask;
}

[[noreturn]] inline void non_finite(const char* side, std::size_t layer, std::size_t t, const LstmStep& s) {
  std::string which;
  const std::pair<const char*, const VectorXd*> parts[] = {
      {"input", &s.i}, {"forget", &s.f}, {"output", &s.o}, {"candidate", &s.g}, {"memory", &s.m}, {"hidden", &s.h}};
  for (const auto& [name, v] : parts) {
    if (!v->allFinite()) which += (which.empty() ? "" : ",") + std::string(name);
  }
  throw NumericError(std::string(side) + " layer " + std::to_string(layer) + " step " + std::to_string(t) +
                     ": non-finite " + which);
}

// m_t = f*m_{t-1} + i*c_t ; h_t = o*tanh(m_t). The persona block is a separate
// product so a zero persona (or zero persona weights) leaves the word path
// bit-identical.
inline void lstm_forward(const LstmLayerParams& L, const VectorXd* persona, const VectorXd& h_prev,
                         const VectorXd& m_prev, LstmStep& s) {
  const auto H = h_prev.size();
  VectorXd a = L.bias;
  a.noalias() += L.input * s.x;
  if (persona && L.persona.cols() > 0) a.noalias() += L.persona * *persona;
  a.noalias() += L.recurrent * h_prev;
  s.h_prev = h_prev;
  s.m_prev = m_prev;
  s.i = a.segment(0, H).unaryExpr(&sigmoid);
  s.f = a.segment(H, H).unaryExpr(&sigmoid);
  s.o = a.segment(2 * H, H).unaryExpr(&sigmoid);
  s.g = a.segment(3 * H, H).array().tanh();
  s.m = s.f.cwiseProduct(m_prev) + s.i.cwiseProduct(s.g);
  s.tanh_m = s.m.array().tanh();
  s.h = s.o.cwiseProduct(s.tanh_m);
}

struct AttentionStep {
  VectorXd query;  // attention_query * h
  MatrixXd hidden; // tanh(query + keys), H x T
  VectorXd weights;
  VectorXd context;
};

inline void softmax_inplace(VectorXd& v) {
  const double mx = v.maxCoeff();
  v = (v.array() - mx).exp();
  v /= v.sum();
}

// Additive scoring: e_j = score . tanh(Wq h + keys_j).
inline void attend(const ModelParams& p, const EncoderOutput& enc, const VectorXd& h, AttentionStep& a) {
  a.query.noalias() = p.attention_query * h;
  a.hidden = (enc.keys.colwise() + a.query).array().tanh();
  a.weights.noalias() = a.hidden.transpose() * p.attention_score;
  softmax_inplace(a.weights);
  a.context.noalias() = enc.states * a.weights;
}

inline VectorXd log_softmax(const VectorXd& logits) {
  const double mx = logits.maxCoeff();
  const double lse = mx + std::log((logits.array() - mx).exp().sum());
  return logits.array() - lse;
}

// Everything the backward pass needs from one decoder step.
struct DecoderStepCache {
  std::vector<LstmStep> layers;
  AttentionStep attention;
  VectorXd features;  // [h_top; context] after dropout
  VectorXd feature_mask;
  VectorXd log_probs;
};

struct SequenceCache {
  std::vector<std::vector<LstmStep>> encoder;  // [t][layer]
  std::vector<DecoderStepCache> decoder;       // [t]
  EncoderOutput enc;
};

inline void check_token(const ModelConfig& c, TokenId id) {
  if (id < 0 || id >= c.vocab_size) {
    throw InputError("token id " + std::to_string(id) + " outside vocabulary of size " +
                     std::to_string(c.vocab_size));
  }
}

// Runs the stacked LSTM for one position. `word` is the embedding column.
inline void stack_step(const ModelConfig& c, const std::vector<LstmLayerParams>& layers, const VectorXd& word,
                       const VectorXd* persona, const StepState& prev, bool dropout, Rng* rng,
                       std::vector<LstmStep>& out, const char* side, std::size_t t) {
  out.resize(layers.size());
  for (std::size_t l = 0; l < layers.size(); ++l) {
    auto& s = out[l];
    const VectorXd& raw = l == 0 ? word : out[l - 1].h;
    if (dropout && c.dropout > 0.0) {
      s.mask = dropout_mask(raw.size(), c.dropout, *rng);
      s.x = raw.cwiseProduct(s.mask);
    } else {
      s.mask.resize(0);
      s.x = raw;
    }
    lstm_forward(layers[l], l == 0 ? persona : nullptr, prev.h[l], prev.m[l], s);
    if (!s.h.allFinite() || !s.m.allFinite()) non_finite(side, l, t, s);
  }
}

inline StepState zero_state(const ModelConfig& c) {
  StepState s;
  s.h.assign(static_cast<std::size_t>(c.layers), VectorXd::Zero(c.hidden));
  s.m.assign(static_cast<std::size_t>(c.layers), VectorXd::Zero(c.hidden));
  return s;
}

inline StepState state_of(const std::vector<LstmStep>& layers) {
  StepState s;
  for (const auto& l : layers) {
    s.h.push_back(l.h);
    s.m.push_back(l.m);
  }
  return s;
}

inline void encode_into(const Model& model, std::span<const TokenId> source, const VectorXd* persona,
                        bool dropout, Rng* rng, SequenceCache& cache) {
  const auto& c = model.config;
  const auto& p = model.params;
  if (source.empty()) throw InputError("source sequence is empty");
  if (c.encoder_persona_input() && (!persona || persona->size() != c.persona_dim)) {
    throw InputError("encoder persona of dimension " + std::to_string(c.persona_dim) + " required");
  }
  const VectorXd* enc_persona = c.encoder_persona_input() ? persona : nullptr;
  cache.encoder.resize(source.size());
  cache.enc.states.resize(c.hidden, static_cast<Eigen::Index>(source.size()));
  StepState state = zero_state(c);
  for (std::size_t t = 0; t < source.size(); ++t) {
    check_token(c, source[t]);
    const VectorXd word = p.source_embedding.col(source[t]);
    stack_step(c, p.encoder, word, enc_persona, state, dropout, rng, cache.encoder[t], "encoder", t);
    state = state_of(cache.encoder[t]);
    cache.enc.states.col(static_cast<Eigen::Index>(t)) = state.h.back();
  }
  cache.enc.final = std::move(state);
  if (c.attention) cache.enc.keys.noalias() = p.attention_key * cache.enc.states;
}

// One decoder position: stack, attention, output distribution (as logs).
inline StepState decoder_forward(const Model& model, const StepState& prev, TokenId prev_word,
                                 const VectorXd* persona, const EncoderOutput& enc, bool dropout, Rng* rng,
                                 DecoderStepCache& s, std::size_t t) {
  const auto& c = model.config;
  const auto& p = model.params;
  check_token(c, prev_word);
  if (c.uses_persona() && (!persona || persona->size() != c.persona_dim)) {
    throw InputError("decoder persona of dimension " + std::to_string(c.persona_dim) + " required");
  }
  const VectorXd word = p.target_embedding.col(prev_word);
  stack_step(c, p.decoder, word, c.uses_persona() ? persona : nullptr, prev, dropout, rng, s.layers, "decoder", t);
  StepState next = state_of(s.layers);
  const VectorXd& top = next.h.back();
  VectorXd raw;
  if (c.attention) {
    attend(p, enc, top, s.attention);
    raw.resize(2 * c.hidden);
    raw << top, s.attention.context;
    next.context = s.attention.context;
  } else {
    raw = top;
  }
  if (dropout && c.dropout > 0.0) {
    if (!rng) throw std::logic_error("dropout needs a generator");
    s.feature_mask = dropout_mask(raw.size(), c.dropout, *rng);
    s.features = raw.cwiseProduct(s.feature_mask);
  } else {
    s.feature_mask.resize(0);
    s.features = std::move(raw);
  }
  VectorXd logits = p.output_bias;
  logits.noalias() += p.output_weight * s.features;
  s.log_probs = log_softmax(logits);
  if (!s.log_probs.allFinite()) throw NumericError("decoder step " + std::to_string(t) + ": non-finite output");
  return next;
}

}  // namespace detail

// Encoder pass (dropout off). `persona` is required iff the config feeds the
// encoder a persona.
inline EncoderOutput encode(const Model& model, std::span<const TokenId> source,
                            const VectorXd* persona = nullptr) {
  detail::SequenceCache cache;
  detail::encode_into(model, source, persona, false, nullptr, cache);
  return std::move(cache.enc);
}

// The decoder starts from the encoder's final per-layer state.
inline StepState initial_decoder_state(const EncoderOutput& enc) { return enc.final; }

struct DecodeStepResult {
  StepState state;
  VectorXd log_probs;
  VectorXd distribution;
};

inline DecodeStepResult decode_step(const Model& model, const StepState& prev, TokenId prev_word,
                                    const VectorXd* persona, const EncoderOutput& enc,
                                    bool dropout_active = false, Rng* rng = nullptr) {
  if (dropout_active && !rng) throw ConfigError("dropout requires an rng");
  detail::DecoderStepCache s;
  DecodeStepResult r;
  r.state = detail::decoder_forward(model, prev, prev_word, persona, enc, dropout_active, rng, s, 0);
  r.log_probs = std::move(s.log_probs);
  r.distribution = r.log_probs.array().exp();
  return r;
}

namespace detail {

inline void table_grad_add(ModelParams& g, const TableRow& r, const VectorXd& d) {
  auto col = static_cast<Eigen::Index>(r.row);
  switch (r.table) {
    case TableRow::Table::county: g.location.county.vectors().col(col) += d; break;
    case TableRow::Table::city: g.location.city.vectors().col(col) += d; break;
    case TableRow::Table::country: g.location.country.vectors().col(col) += d; break;
    case TableRow::Table::comment: g.user.comment.vectors().col(col) += d; break;
    case TableRow::Table::like: g.user.like.vectors().col(col) += d; break;
  }
}

inline void scatter_persona(const Model& model, ModelParams& g, const std::vector<TableRow>& rows,
                            const VectorXd& d) {
  Eigen::Index off = 0;
  for (const auto& r : rows) {
    const auto n = model.table(r.table).dim();
    table_grad_add(g, r, d.segment(off, n));
    off += n;
  }
}

// Backpropagates one layer of one stack through time. dh_ext[t] is the
// gradient reaching h_t from outside the recurrence; dh/dm carry in the
// gradient on the final state and leave holding the gradient on the initial
// state. Returns gradients with respect to the layer's pre-dropout input.
inline std::vector<VectorXd> lstm_backward(const LstmLayerParams& L, LstmLayerParams& G,
                                           const std::vector<const LstmStep*>& steps,
                                           const std::vector<VectorXd>& dh_ext, VectorXd& dh, VectorXd& dm,
                                           VectorXd* dpersona_sum, const std::vector<const VectorXd*>& personas) {
  const auto H = dh.size();
  std::vector<VectorXd> dx(steps.size());
  VectorXd da(4 * H);
  for (std::size_t k = steps.size(); k-- > 0;) {
    const LstmStep& s = *steps[k];
    const VectorXd dht = dh + dh_ext[k];
    const VectorXd dmt = dm + dht.cwiseProduct(s.o).cwiseProduct((1.0 - s.tanh_m.array().square()).matrix());
    da.segment(0, H) = dmt.cwiseProduct(s.g).cwiseProduct(s.i.cwiseProduct((1.0 - s.i.array()).matrix()));
    da.segment(H, H) = dmt.cwiseProduct(s.m_prev).cwiseProduct(s.f.cwiseProduct((1.0 - s.f.array()).matrix()));
    da.segment(2 * H, H) = dht.cwiseProduct(s.tanh_m).cwiseProduct(s.o.cwiseProduct((1.0 - s.o.array()).matrix()));
    da.segment(3 * H, H) = dmt.cwiseProduct(s.i).cwiseProduct((1.0 - s.g.array().square()).matrix());
    G.recurrent.noalias() += da * s.h_prev.transpose();
    G.input.noalias() += da * s.x.transpose();
    G.bias += da;
    if (L.persona.cols() > 0 && personas[k]) {
      G.persona.noalias() += da * personas[k]->transpose();
      if (dpersona_sum) dpersona_sum[k].noalias() += L.persona.transpose() * da;
    }
    dx[k].noalias() = L.input.transpose() * da;
    if (s.mask.size() > 0) dx[k] = dx[k].cwiseProduct(s.mask);
    dh.noalias() = L.recurrent.transpose() * da;
    dm = dmt.cwiseProduct(s.f);
  }
  return dx;
}

// Teacher-forced forward (and optional backward, accumulating scale * dLoss
// into `grad`). Loss is the mean NLL over reply tokens.
inline double forward_backward(const Model& model, const ConversationPair& pair, const PersonaContext& persona,
                               bool dropout, Rng* rng, ModelParams* grad, double scale) {
  const auto& c = model.config;
  const auto& p = model.params;
  if (pair.reply.empty()) throw InputError("reply sequence is empty");
  if (dropout && c.dropout > 0.0 && !rng) throw ConfigError("dropout requires an rng");
  const VectorXd* enc_persona = persona.encoder.size() > 0 ? &persona.encoder : nullptr;
  const VectorXd* dec_persona = persona.decoder.size() > 0 ? &persona.decoder : nullptr;

  SequenceCache cache;
  encode_into(model, pair.post, enc_persona, dropout, rng, cache);
  const std::size_t T = pair.reply.size();
  cache.decoder.resize(T);
  StepState state = initial_decoder_state(cache.enc);
  double nll = 0.0;
  for (std::size_t t = 0; t < T; ++t) {
    const TokenId prev = t == 0 ? kBos : pair.reply[t - 1];
    check_token(c, pair.reply[t]);
    state = decoder_forward(model, state, prev, dec_persona, cache.enc, dropout, rng, cache.decoder[t], t);
    nll -= cache.decoder[t].log_probs(pair.reply[t]);
  }
  const double loss = nll / static_cast<double>(T);
  if (!std::isfinite(loss)) throw NumericError("non-finite sequence loss");
  if (!grad) return loss;

  // ---- backward -----------------------------------------------------------
  const auto H = c.hidden;
  const auto L = static_cast<std::size_t>(c.layers);
  const double w = scale / static_cast<double>(T);
  const auto S = cache.enc.states.cols();
  MatrixXd d_states = MatrixXd::Zero(H, S);
  MatrixXd d_keys = MatrixXd::Zero(H, S);

  // dh_ext per decoder layer; only the top layer gets an external gradient
  // from the output side, lower ones get it from the layer above.
  std::vector<VectorXd> dh_top(T);
  for (std::size_t t = 0; t < T; ++t) {
    auto& s = cache.decoder[t];
    VectorXd dlogits = s.log_probs.array().exp();
    dlogits(pair.reply[t]) -= 1.0;
    dlogits *= w;
    grad->output_weight.noalias() += dlogits * s.features.transpose();
    grad->output_bias += dlogits;
    VectorXd dfeat = p.output_weight.transpose() * dlogits;
    if (s.feature_mask.size() > 0) dfeat = dfeat.cwiseProduct(s.feature_mask);
    dh_top[t] = dfeat.head(H);
    if (c.attention) {
      const auto& a = s.attention;
      const VectorXd dctx = dfeat.tail(H);
      d_states.noalias() += dctx * a.weights.transpose();
      const VectorXd dw = cache.enc.states.transpose() * dctx;
      const VectorXd de = a.weights.cwiseProduct((dw.array() - a.weights.dot(dw)).matrix());
      grad->attention_score.noalias() += a.hidden * de;
      // d pre-activation of the tanh, one column per source position
      MatrixXd dpre = (1.0 - a.hidden.array().square()).matrix();
      dpre.array().colwise() *= p.attention_score.array();
      dpre.array().rowwise() *= de.transpose().array();
      d_keys += dpre;
      const VectorXd dquery = dpre.rowwise().sum();
      grad->attention_query.noalias() += dquery * s.layers.back().h.transpose();
      dh_top[t].noalias() += p.attention_query.transpose() * dquery;
    }
  }

  std::vector<VectorXd> d_enc_final_h(L), d_enc_final_m(L);
  std::vector<VectorXd> dpersona_dec(T, VectorXd::Zero(dec_persona ? dec_persona->size() : 0));
  std::vector<VectorXd> dh_ext = std::move(dh_top);
  for (std::size_t l = L; l-- > 0;) {
    std::vector<const LstmStep*> steps(T);
    std::vector<const VectorXd*> personas(T, l == 0 ? dec_persona : nullptr);
    for (std::size_t t = 0; t < T; ++t) steps[t] = &cache.decoder[t].layers[l];
    VectorXd dh = VectorXd::Zero(H), dm = VectorXd::Zero(H);
    auto dx = lstm_backward(p.decoder[l], grad->decoder[l], steps, dh_ext, dh, dm,
                            l == 0 && dec_persona ? dpersona_dec.data() : nullptr, personas);
    d_enc_final_h[l] = std::move(dh);
    d_enc_final_m[l] = std::move(dm);
    if (l == 0) {
      for (std::size_t t = 0; t < T; ++t) {
        const TokenId prev = t == 0 ? kBos : pair.reply[t - 1];
        grad->target_embedding.col(prev) += dx[t];
      }
    } else {
      dh_ext = std::move(dx);
    }
  }
  if (dec_persona) {
    VectorXd total = VectorXd::Zero(dec_persona->size());
    for (const auto& d : dpersona_dec) total += d;
    scatter_persona(model, *grad, persona.decoder_rows, total);
  }

  if (c.attention) {
    grad->attention_key.noalias() += d_keys * cache.enc.states.transpose();
    d_states.noalias() += p.attention_key.transpose() * d_keys;
  }
  const std::size_t Ts = pair.post.size();
  std::vector<VectorXd> dpersona_enc(Ts, VectorXd::Zero(enc_persona ? enc_persona->size() : 0));
  dh_ext.assign(Ts, VectorXd());
  for (std::size_t t = 0; t < Ts; ++t) dh_ext[t] = d_states.col(static_cast<Eigen::Index>(t));
  for (std::size_t l = L; l-- > 0;) {
    std::vector<const LstmStep*> steps(Ts);
    std::vector<const VectorXd*> personas(Ts, l == 0 ? enc_persona : nullptr);
    for (std::size_t t = 0; t < Ts; ++t) steps[t] = &cache.encoder[t][l];
    VectorXd dh = d_enc_final_h[l], dm = d_enc_final_m[l];
    auto dx = lstm_backward(p.encoder[l], grad->encoder[l], steps, dh_ext, dh, dm,
                            l == 0 && enc_persona ? dpersona_enc.data() : nullptr, personas);
    if (l == 0) {
      for (std::size_t t = 0; t < Ts; ++t) grad->source_embedding.col(pair.post[t]) += dx[t];
    } else {
      dh_ext = std::move(dx);
    }
  }
  if (enc_persona) {
    VectorXd total = VectorXd::Zero(enc_persona->size());
    for (const auto& d : dpersona_enc) total += d;
    scatter_persona(model, *grad, persona.encoder_rows, total);
  }
  return loss;
}

}  // namespace detail

// Mean negative log-likelihood per reply token under teacher forcing.
inline double sequence_nll(const Model& model, const ConversationPair& pair, const PersonaContext& persona,
                           bool dropout_active = false, Rng* rng = nullptr) {
  return detail::forward_backward(model, pair, persona, dropout_active, rng, nullptr, 0.0);
}

inline double sequence_nll(const Model& model, const ConversationPair& pair) {
  return sequence_nll(model, pair, model.persona_for(pair.meta));
}

struct GradientResult {
  ModelParams grad;
  double loss = 0.0;  // mean over pairs of per-pair mean NLL
};

// Exact gradient of the batch loss (mean over pairs of sequence_nll).
// Personas default to those implied by each pair's metadata.
inline GradientResult gradients(const Model& model, std::span<const ConversationPair> batch,
                                std::span<const PersonaContext> personas, Rng* rng, bool dropout_active) {
  if (batch.empty()) throw ConfigError("gradient batch is empty");
  if (!personas.empty() && personas.size() != batch.size()) throw ConfigError("one persona per pair required");
  GradientResult r{model.params.zeros_like(), 0.0};
  const double scale = 1.0 / static_cast<double>(batch.size());
  for (std::size_t k = 0; k < batch.size(); ++k) {
    const PersonaContext ctx = personas.empty() ? model.persona_for(batch[k].meta) : personas[k];
    r.loss += scale * detail::forward_backward(model, batch[k], ctx, dropout_active, rng, &r.grad, scale);
  }
  bool finite = true;
  r.grad.for_each([&](const std::string&, const auto& t) { finite = finite && t.allFinite(); });
  if (!finite) throw NumericError("non-finite gradient");
  return r;
}

inline GradientResult gradients(const Model& model, std::span<const ConversationPair> batch) {
  return gradients(model, batch, {}, nullptr, false);
}

}  // namespace soc2seq
