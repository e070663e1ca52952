#pragma once

#include <chrono>
#include <cmath>
#include <filesystem>
#include <limits>
#include <numeric>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "soc2seq/checkpoint.hpp"
#include "soc2seq/corpus.hpp"
#include "soc2seq/error.hpp"
#include "soc2seq/model.hpp"
#include "soc2seq/persona.hpp"
#include "soc2seq/util.hpp"

namespace soc2seq {

enum class SocialMode { none, frozen_pretrained, fine_tuned };

inline const char* to_string(SocialMode m) {
  switch (m) {
    case SocialMode::none: return "none";
    case SocialMode::frozen_pretrained: return "frozen_pretrained";
    case SocialMode::fine_tuned: return "fine_tuned";
  }
  return "?";
}

inline SocialMode parse_social_mode(std::string_view s) {
  if (s == "none") return SocialMode::none;
  if (s == "frozen_pretrained" || s == "frozen") return SocialMode::frozen_pretrained;
  if (s == "fine_tuned" || s == "tuned") return SocialMode::fine_tuned;
  throw ConfigError("unknown social mode '" + std::string(s) + "'");
}

// Reference recipe: batch 128, lr 1.0 with decay, global-norm clipping at 5,
// 20 epochs. Defaults below are desk scale except the optimizer constants.
struct TrainConfig {
  std::size_t batch_size = 16;
  double learning_rate = 1.0;
  double decay_factor = 0.5;           // multiplied in once per epoch after decay_start_epoch
  std::size_t decay_start_epoch = 8;
  double clip_threshold = 5.0;
  std::size_t epochs = 20;
  std::uint64_t seed = 1;
  SocialMode social_mode = SocialMode::none;
  std::size_t patience = 0;            // 0 disables early stopping
  bool dropout_active = true;
  std::string checkpoint_dir;          // empty: no per-epoch checkpoints

  void validate() const {
    if (batch_size < 1) throw ConfigError("train config: batch_size must be >= 1");
    if (!(learning_rate >= 0.0)) throw ConfigError("train config: learning_rate must be >= 0");
    if (!(decay_factor > 0.0 && decay_factor <= 1.0)) throw ConfigError("train config: decay_factor must be in (0,1]");
    if (!(clip_threshold > 0.0)) throw ConfigError("train config: clip_threshold must be > 0");
  }

  // Rate used during 1-based `epoch`.
  double rate_for_epoch(std::size_t epoch) const {
    const auto decays = epoch > decay_start_epoch ? epoch - decay_start_epoch : 0;
    return learning_rate * std::pow(decay_factor, static_cast<double>(decays));
  }
};

struct EpochStats {
  std::size_t epoch = 0;
  double learning_rate = 0.0;
  double train_loss = 0.0;
  std::optional<double> validation_loss;
  std::optional<double> validation_perplexity;
};

struct TrainReport {
  std::vector<EpochStats> epochs;
  double wall_clock_seconds = 0.0;
  std::string checkpoint;  // file name of the final checkpoint, if saved
};

struct TrainResult {
  Model model;
  TrainReport report;
};

// Pretrained social tables for user personas; `id` is recorded as provenance.
struct SocialTables {
  EmbeddingTable comment;
  EmbeddingTable like;
  std::string id = "socialgraph";
};

// --- model construction -------------------------------------------------------

inline std::vector<std::string> users_of(const std::vector<ConversationPair>& pairs) {
  std::vector<std::string> users;
  std::set<std::string> seen;
  for (const auto& p : pairs) {
    for (const auto* u : {&p.meta.replier_user, &p.meta.author_user}) {
      if (!u->empty() && seen.insert(*u).second) users.push_back(*u);
    }
  }
  return users;
}

// Fresh model: network weights plus the persona tables its config needs.
// Location rows and jointly learned user rows cover the training pairs;
// pretrained social tables are copied in with mean-filled gaps.
inline Model make_model(const ModelConfig& config, const std::string& vocab_hash,
                        const std::vector<ConversationPair>& train_pairs, const std::optional<SocialTables>& social,
                        std::uint64_t seed) {
  config.validate();
  Rng rng(derive_seed(seed, 0x1417u));
  Model m;
  m.config = config;
  m.vocab_hash = vocab_hash;
  m.params = init_params(config, rng);
  if (!config.uses_persona()) return m;
  if (config.persona_kind == PersonaKind::location) {
    std::vector<LocationKey> keys;
    for (const auto& p : train_pairs) keys.push_back(p.meta.location);
    m.params.location = make_location_tables(keys, config.location_dims, rng, config.init_scale);
  } else if (social) {
    if (social->comment.dim() != config.comment_dim || social->like.dim() != config.like_dim()) {
      throw ConfigError("social table dims (" + std::to_string(social->comment.dim()) + "+" +
                        std::to_string(social->like.dim()) + ") do not match model persona dims (" +
                        std::to_string(config.comment_dim) + "+" + std::to_string(config.like_dim()) + ")");
    }
    m.params.user = make_user_tables_from_social(social->comment, social->like, users_of(train_pairs));
    m.user_provenance = "socialgraph:" + social->id;
  } else {
    m.params.user = make_user_tables_random(users_of(train_pairs), config.comment_dim, config.like_dim(), rng,
                                            config.init_scale);
    m.user_provenance = "joint";
  }
  return m;
}

// --- optimizer -------------------------------------------------------------

inline bool tensor_trainable(const Model& m, const std::string& name) {
  return !is_user_table(name) || m.user_tables_trainable;
}

// Global L2 norm over trainable tensors.
inline double gradient_norm(const Model& m, const ModelParams& grad) {
  double sq = 0.0;
  grad.for_each([&](const std::string& name, const auto& t) {
    if (tensor_trainable(m, name)) sq += t.squaredNorm();
  });
  return std::sqrt(sq);
}

inline double clip_scale(double norm, double threshold) { return norm > threshold ? threshold / norm : 1.0; }

// params -= lr * clip(grad); returns the clip scale that was applied.
inline double sgd_step(Model& m, const ModelParams& grad, double lr, double clip_threshold) {
  const double scale = clip_scale(gradient_norm(m, grad), clip_threshold);
  const double step = lr * scale;
  if (step == 0.0) return scale;
  std::vector<std::pair<std::string, const void*>> grads;
  grad.for_each([&](const std::string& name, const auto& t) { grads.emplace_back(name, &t); });
  std::size_t k = 0;
  m.params.for_each([&](const std::string& name, auto& t) {
    using T = std::decay_t<decltype(t)>;
    const auto& g = *static_cast<const T*>(grads[k++].second);
    if (tensor_trainable(m, name)) t.noalias() -= step * g;
  });
  return scale;
}

// --- evaluation helpers shared with evaluation.hpp ---------------------------

// Corpus-level mean NLL per reply token (dropout off).
inline double corpus_token_nll(const Model& m, const std::vector<ConversationPair>& pairs) {
  if (pairs.empty()) throw ConfigError("cannot score an empty split");
  double total = 0.0;
  double tokens = 0.0;
  for (const auto& p : pairs) {
    const auto n = static_cast<double>(p.reply.size());
    total += sequence_nll(m, p) * n;
    tokens += n;
  }
  return total / tokens;
}

// --- training loop ----------------------------------------------------------

namespace detail {

inline void run_epochs(Model& model, const TrainConfig& cfg, const DatasetSplit& data, TrainReport& report,
                       std::size_t first_epoch) {
  const auto start = std::chrono::steady_clock::now();
  if (!cfg.checkpoint_dir.empty()) std::filesystem::create_directories(cfg.checkpoint_dir);
  double best_val = std::numeric_limits<double>::infinity();
  std::size_t since_best = 0;
  std::vector<std::size_t> order(data.train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (std::size_t e = first_epoch; e < first_epoch + cfg.epochs; ++e) {
    EpochStats stats;
    stats.epoch = e;
    stats.learning_rate = cfg.rate_for_epoch(e);
    Rng rng(derive_seed(cfg.seed, 0xe90cu, e));
    shuffle(order, rng);
    double loss_sum = 0.0;
    for (std::size_t b = 0; b < order.size(); b += cfg.batch_size) {
      std::vector<ConversationPair> batch;
      for (std::size_t k = b; k < std::min(order.size(), b + cfg.batch_size); ++k) batch.push_back(data.train[order[k]]);
      GradientResult g;
      try {
        g = gradients(model, batch, {}, &rng, cfg.dropout_active);
      } catch (const NumericError& err) {
        throw NumericError("training diverged at epoch " + std::to_string(e) + ", batch " +
                           std::to_string(b / cfg.batch_size) + ": " + err.what());
      }
      if (!std::isfinite(g.loss)) {
        throw NumericError("training diverged at epoch " + std::to_string(e) + ": non-finite loss");
      }
      loss_sum += g.loss * static_cast<double>(batch.size());
      sgd_step(model, g.grad, stats.learning_rate, cfg.clip_threshold);
    }
    stats.train_loss = loss_sum / static_cast<double>(order.size());
    if (!data.validation.empty()) {
      stats.validation_loss = corpus_token_nll(model, data.validation);
      stats.validation_perplexity = std::exp(*stats.validation_loss);
      if (!std::isfinite(*stats.validation_loss)) throw NumericError("non-finite validation loss");
    }
    report.epochs.push_back(stats);
    if (!cfg.checkpoint_dir.empty()) {
      report.checkpoint = "epoch-" + std::to_string(e) + ".ckpt";
      save_checkpoint(model, (std::filesystem::path(cfg.checkpoint_dir) / report.checkpoint).string());
    }
    if (cfg.patience > 0 && stats.validation_loss) {
      if (*stats.validation_loss < best_val) {
        best_val = *stats.validation_loss;
        since_best = 0;
      } else if (++since_best >= cfg.patience) {
        break;
      }
    }
  }
  report.wall_clock_seconds +=
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

}  // namespace detail

// Continues training an existing model. social_mode decides whether user
// rows move: frozen_pretrained pins them, the other modes train them.
inline TrainResult train(Model model, const TrainConfig& cfg, const DatasetSplit& data) {
  cfg.validate();
  if (data.train.empty()) throw ConfigError("training split is empty");
  if (cfg.social_mode != SocialMode::none && model.config.persona_kind != PersonaKind::user) {
    throw ConfigError("social_mode " + std::string(to_string(cfg.social_mode)) + " needs persona_kind = user");
  }
  if (cfg.social_mode != SocialMode::none && model.user_provenance.rfind("socialgraph", 0) != 0) {
    throw ConfigError("social_mode " + std::string(to_string(cfg.social_mode)) +
                      " needs user tables pretrained from the social graph");
  }
  model.user_tables_trainable = cfg.social_mode != SocialMode::frozen_pretrained;
  if (cfg.social_mode == SocialMode::fine_tuned && cfg.epochs > 0) model.social_tuned = true;
  TrainResult r{std::move(model), {}};
  detail::run_epochs(r.model, cfg, data, r.report, 1);
  return r;
}

inline TrainResult train(const ModelConfig& mc, const TrainConfig& cfg, const DatasetSplit& data,
                         const std::string& vocab_hash, const std::optional<SocialTables>& social = std::nullopt) {
  if (mc.persona_kind == PersonaKind::user && mc.uses_persona() && !social && cfg.social_mode != SocialMode::none) {
    throw ConfigError("social_mode " + std::string(to_string(cfg.social_mode)) + " needs social embeddings");
  }
  return train(make_model(mc, vocab_hash, data.train, social, cfg.seed), cfg, data);
}

// Second phase of the social model: the node2vec-pretrained user rows are
// released and fine-tuned by the conversation loss.
inline TrainResult fine_tune_social(Model model, TrainConfig cfg, const DatasetSplit& data) {
  if (model.config.persona_kind != PersonaKind::user || !model.config.uses_persona()) {
    throw ConfigError("fine-tuning needs a user-persona checkpoint");
  }
  if (model.user_provenance.rfind("socialgraph", 0) != 0) {
    throw ConfigError("fine-tuning needs user tables pretrained from the social graph (provenance: " +
                      model.user_provenance + ")");
  }
  cfg.social_mode = SocialMode::fine_tuned;
  return train(std::move(model), cfg, data);
}

// --- report files ---------------------------------------------------------

inline nlohmann::ordered_json to_json(const TrainReport& r) {
  nlohmann::ordered_json j;
  auto opt = [](const std::optional<double>& v) { return v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json(); };
  j["epochs"] = nlohmann::ordered_json::array();
  for (const auto& e : r.epochs) {
    j["epochs"].push_back({{"epoch", e.epoch},
                           {"learning_rate", e.learning_rate},
                           {"train_loss", e.train_loss},
                           {"validation_loss", opt(e.validation_loss)},
                           {"validation_perplexity", opt(e.validation_perplexity)}});
  }
  j["checkpoint"] = r.checkpoint;
  return j;
}

// Wall-clock time is written separately (timing.json) so the report itself
// is reproducible byte for byte.
inline void write_train_report(const TrainReport& r, const std::string& dir) {
  std::filesystem::create_directories(dir);
  const auto base = std::filesystem::path(dir);
  {
    auto out = open_output((base / "report.json").string());
    out << to_json(r).dump(2) << '\n';
  }
  {
    auto out = open_output((base / "epochs.csv").string());
    out << "epoch,learning_rate,train_loss,validation_loss,validation_perplexity\n";
    auto opt = [](const std::optional<double>& v) { return v ? format_double(*v) : std::string(); };
    for (const auto& e : r.epochs) {
      out << e.epoch << ',' << format_double(e.learning_rate) << ',' << format_double(e.train_loss) << ','
          << opt(e.validation_loss) << ',' << opt(e.validation_perplexity) << '\n';
    }
  }
  {
    auto out = open_output((base / "timing.json").string());
    out << nlohmann::ordered_json{{"wall_clock_seconds", r.wall_clock_seconds}}.dump(2) << '\n';
  }
}

}  // namespace soc2seq
