#pragma once

// Shared builders for the unit tests and the acceptance runner.

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include <unistd.h>

#include "soc2seq/soc2seq.hpp"

namespace soc2seq::testing {

// Scratch directory removed on destruction.
class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("soc2seq-test-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  std::string file(const std::string& name) const { return (path_ / name).string(); }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

inline void write_text(const std::string& path, const std::string& text) {
  auto out = open_output(path);
  out << text;
}

inline ModelConfig tiny_config(Eigen::Index vocab, PersonaMode mode = PersonaMode::none,
                               PersonaKind kind = PersonaKind::location) {
  ModelConfig c;
  c.layers = 2;
  c.hidden = 5;
  c.word_dim = 4;
  c.vocab_size = vocab;
  c.dropout = 0.0;
  c.persona_mode = mode;
  c.persona_kind = kind;
  c.attention = true;
  c.location_dims = {2, 2, 1};
  c.persona_dim = 5;
  c.comment_dim = 3;
  return c;
}

// Random EOS-terminated sequence over the non-reserved ids.
inline std::vector<TokenId> random_sequence(Rng& rng, Eigen::Index vocab, std::size_t len) {
  std::vector<TokenId> s;
  for (std::size_t i = 0; i < len; ++i) {
    s.push_back(static_cast<TokenId>(kNumReserved + uniform_index(rng, static_cast<std::size_t>(vocab - kNumReserved))));
  }
  s.push_back(kEos);
  return s;
}

inline std::vector<ConversationPair> random_pairs(Rng& rng, Eigen::Index vocab, std::size_t n) {
  static const char* counties[] = {"queens", "kings", "bronx"};
  static const char* users[] = {"ann", "bob", "cyd", "dee"};
  std::vector<ConversationPair> out;
  for (std::size_t i = 0; i < n; ++i) {
    ConversationPair p;
    p.post = random_sequence(rng, vocab, 2 + uniform_index(rng, 3));
    p.reply = random_sequence(rng, vocab, 1 + uniform_index(rng, 3));
    p.meta.location = {counties[i % 3], i % 2 ? "nyc" : "albany", "us"};
    p.meta.author_user = users[(i + 1) % 4];
    p.meta.replier_user = users[i % 4];
    out.push_back(std::move(p));
  }
  return out;
}

inline Model tiny_model(const ModelConfig& c, const std::vector<ConversationPair>& pairs, std::uint64_t seed,
                        const std::optional<SocialTables>& social = std::nullopt) {
  return make_model(c, "test-vocab", pairs, social, seed);
}

// Two disjoint complete digraphs "a0".."a{n-1}" and "b0".."b{n-1}".
inline std::vector<InteractionEvent> two_clique_events(std::size_t n, const std::string& signal = "comment") {
  std::vector<InteractionEvent> events;
  for (const char* side : {"a", "b"}) {
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        if (i != j) events.push_back({side + std::to_string(i), side + std::to_string(j), signal, 1});
      }
    }
  }
  return events;
}

struct CliqueCosines {
  double intra = 0.0;
  double inter = 0.0;
};

inline CliqueCosines clique_cosines(const EmbeddingTable& t) {
  CliqueCosines c;
  double ni = 0, nx = 0;
  for (std::size_t i = 0; i < t.size(); ++i) {
    for (std::size_t j = i + 1; j < t.size(); ++j) {
      const double cs = cosine(t.vectors().col(static_cast<Eigen::Index>(i)), t.vectors().col(static_cast<Eigen::Index>(j)));
      if (t.keys()[i][0] == t.keys()[j][0]) {
        c.intra += cs;
        ni += 1;
      } else {
        c.inter += cs;
        nx += 1;
      }
    }
  }
  c.intra /= ni;
  c.inter /= nx;
  return c;
}

struct GradSample {
  std::string tensor;
  Eigen::Index index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_error = 0.0;
};

// |a - n| / max(|a|, |n|, floor); two exact zeros count as agreement.
inline double grad_rel_error(double a, double n, double floor = 1e-7) {
  const double diff = std::abs(a - n);
  if (diff == 0.0) return 0.0;
  return diff / std::max({std::abs(a), std::abs(n), floor});
}

inline double batch_loss(const Model& m, const std::vector<ConversationPair>& batch, std::uint64_t dropout_seed,
                         bool dropout) {
  Rng rng(dropout_seed);
  return gradients(m, batch, {}, &rng, dropout).loss;
}

// Central differences on `per_tensor` entries of every non-empty tensor.
// Entries are drawn at random but always include the largest-gradient entry
// so that each tensor is exercised where it actually matters.
inline std::vector<GradSample> gradient_check(Model model, const std::vector<ConversationPair>& batch,
                                              std::size_t per_tensor, std::uint64_t seed, bool dropout = false,
                                              double h = 1e-4) {
  const std::uint64_t dropout_seed = derive_seed(seed, 0xd0u);
  Rng grad_rng(dropout_seed);
  const auto g = gradients(model, batch, {}, &grad_rng, dropout).grad;
  std::vector<std::pair<std::string, const void*>> grads;
  g.for_each([&](const std::string& name, const auto& t) { grads.emplace_back(name, &t); });
  Rng pick(derive_seed(seed, 0x91cu));
  std::vector<GradSample> out;
  std::size_t k = 0;
  std::vector<std::pair<std::string, std::vector<Eigen::Index>>> plan;
  model.params.for_each([&](const std::string& name, auto& t) {
    using T = std::decay_t<decltype(t)>;
    const auto& gt = *static_cast<const T*>(grads[k++].second);
    if (t.size() == 0) return;
    std::vector<Eigen::Index> idx;
    Eigen::Index best = 0;
    gt.reshaped().cwiseAbs().maxCoeff(&best);
    idx.push_back(best);
    while (idx.size() < per_tensor) idx.push_back(static_cast<Eigen::Index>(uniform_index(pick, static_cast<std::size_t>(t.size()))));
    plan.emplace_back(name, std::move(idx));
  });
  k = 0;
  std::size_t p = 0;
  model.params.for_each([&](const std::string& name, auto& t) {
    using T = std::decay_t<decltype(t)>;
    const auto& gt = *static_cast<const T*>(grads[k++].second);
    if (t.size() == 0) return;
    for (const auto i : plan[p].second) {
      double* x = t.data() + i;
      const double saved = *x;
      *x = saved + h;
      const double up = batch_loss(model, batch, dropout_seed, dropout);
      *x = saved - h;
      const double down = batch_loss(model, batch, dropout_seed, dropout);
      *x = saved;
      GradSample s{name, i, gt.data()[i], (up - down) / (2.0 * h), 0.0};
      s.rel_error = grad_rel_error(s.analytic, s.numeric);
      out.push_back(s);
    }
    ++p;
  });
  return out;
}

// Synthetic raw pairs -> vocabulary + encoded split, the same path ingest takes.
struct Prepared {
  Vocabulary vocab;
  DatasetSplit data;
};

inline Prepared prepare(const std::vector<RawPair>& raw, const std::array<double, 3>& ratios, std::uint64_t seed,
                        std::size_t max_vocab = 1000) {
  const auto kept = filter_pairs(raw, {});
  Prepared p{build_vocab(kept, max_vocab), {}};
  p.data = split_dataset(encode_pairs(kept, p.vocab), ratios, seed);
  return p;
}

// All parameter scalars whose tensor name satisfies `keep`, in visit order.
template <typename Pred>
std::vector<double> flatten(const ModelParams& params, Pred keep) {
  std::vector<double> out;
  params.for_each([&](const std::string& name, const auto& t) {
    if (keep(name)) out.insert(out.end(), t.data(), t.data() + t.size());
  });
  return out;
}

inline std::vector<double> flatten(const ModelParams& params) {
  return flatten(params, [](const std::string&) { return true; });
}

// Output layer zeroed: every step predicts the uniform distribution.
inline Model bias_only_model(Eigen::Index vocab, std::uint64_t seed) {
  auto m = tiny_model(tiny_config(vocab), {}, seed);
  m.params.output_weight.setZero();
  m.params.output_bias.setZero();
  return m;
}

// Random untrained model over a small vocabulary plus one of its pairs.
struct Instance {
  Model model;
  ConversationPair pair;
};

inline Instance random_instance(std::uint64_t seed, Eigen::Index vocab = 6, double init_scale = 1.0,
                                PersonaMode mode = PersonaMode::none) {
  Rng rng(seed);
  auto pairs = random_pairs(rng, vocab, 3);
  auto c = tiny_config(vocab, mode);
  c.init_scale = init_scale;
  return {tiny_model(c, pairs, seed), pairs[0]};
}

// Brute force over every EOS-terminated sequence of length <= max_len.
inline std::pair<std::vector<TokenId>, double> exhaustive_best(const Model& m, const ConversationPair& pair,
                                                               std::size_t max_len) {
  const auto persona = m.persona_for(pair.meta);
  const auto V = static_cast<TokenId>(m.config.vocab_size);
  std::vector<TokenId> best;
  double best_lp = -std::numeric_limits<double>::infinity();
  std::vector<TokenId> prefix;
  std::function<void()> visit = [&]() {
    auto seq = prefix;
    seq.push_back(kEos);
    const double lp = sequence_log_prob(m, pair.post, persona, seq);
    if (lp > best_lp || (lp == best_lp && seq < best)) {
      best_lp = lp;
      best = seq;
    }
    if (prefix.size() + 1 >= max_len) return;
    for (TokenId w = 0; w < V; ++w) {
      if (w == kEos) continue;
      prefix.push_back(w);
      visit();
      prefix.pop_back();
    }
  };
  visit();
  return {best, best_lp};
}

}  // namespace soc2seq::testing
