#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "soc2seq/embedding_table.hpp"
#include "soc2seq/error.hpp"
#include "soc2seq/util.hpp"

namespace soc2seq {

enum class Signal { profile_view, chat_request, comment, like, view };

inline constexpr Signal kAllSignals[] = {Signal::profile_view, Signal::chat_request,
                                         Signal::comment, Signal::like, Signal::view};

inline const char* to_string(Signal s) {
  switch (s) {
    case Signal::profile_view: return "profile_view";
    case Signal::chat_request: return "chat_request";
    case Signal::comment: return "comment";
    case Signal::like: return "like";
    case Signal::view: return "view";
  }
  return "?";
}

inline Signal parse_signal(std::string_view name) {
  for (Signal s : kAllSignals) {
    if (name == to_string(s)) return s;
  }
  throw ConfigError("unknown signal '" + std::string(name) + "'");
}

// Profile views and chat requests only record whether an interaction happened.
constexpr bool is_binary(Signal s) noexcept {
  return s == Signal::profile_view || s == Signal::chat_request;
}

// View is a weak signal; it is down-weighted when graphs are combined.
constexpr double default_multiplier(Signal s) noexcept { return s == Signal::view ? 0.1 : 1.0; }

struct InteractionEvent {
  std::string actor;
  std::string target;
  std::string signal;
  long long count = 1;
};

struct Edge {
  std::size_t target = 0;
  double weight = 0.0;

  friend bool operator==(const Edge&, const Edge&) = default;
};

// Directed weighted graph. Nodes are sorted by id; each adjacency list is
// sorted by target index.
class InteractionGraph {
 public:
  InteractionGraph() = default;

  // `signal` is empty for combined graphs.
  static InteractionGraph from_edges(
      const std::vector<std::tuple<std::string, std::string, double>>& edges,
      std::optional<Signal> signal = std::nullopt) {
    std::set<std::string> names;
    for (const auto& [u, v, w] : edges) {
      if (u == v) continue;
      names.insert(u);
      names.insert(v);
    }
    InteractionGraph g;
    g.signal_ = signal;
    g.nodes_.assign(names.begin(), names.end());
    for (std::size_t i = 0; i < g.nodes_.size(); ++i) g.index_.emplace(g.nodes_[i], i);
    std::vector<std::map<std::size_t, double>> acc(g.nodes_.size());
    for (const auto& [u, v, w] : edges) {
      if (u == v) continue;
      if (!(w > 0.0) || !std::isfinite(w)) throw InputError("edge weight must be positive: " + u + "->" + v);
      acc[g.index_.at(u)][g.index_.at(v)] += w;
    }
    g.out_.resize(g.nodes_.size());
    for (std::size_t i = 0; i < acc.size(); ++i) {
      for (const auto& [t, w] : acc[i]) g.out_[i].push_back({t, w});
    }
    return g;
  }

  std::optional<Signal> signal() const noexcept { return signal_; }
  std::size_t num_nodes() const noexcept { return nodes_.size(); }
  std::size_t num_edges() const noexcept {
    std::size_t n = 0;
    for (const auto& a : out_) n += a.size();
    return n;
  }
  bool empty() const noexcept { return num_edges() == 0; }
  const std::vector<std::string>& nodes() const noexcept { return nodes_; }
  const std::string& node(std::size_t i) const { return nodes_.at(i); }
  std::optional<std::size_t> find(const std::string& id) const {
    auto it = index_.find(id);
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }
  const std::vector<Edge>& out_edges(std::size_t i) const { return out_.at(i); }

  std::optional<double> weight(std::size_t u, std::size_t v) const {
    const auto& adj = out_[u];
    auto it = std::lower_bound(adj.begin(), adj.end(), v,
                               [](const Edge& e, std::size_t t) { return e.target < t; });
    if (it == adj.end() || it->target != v) return std::nullopt;
    return it->weight;
  }
  bool has_edge(std::size_t u, std::size_t v) const { return weight(u, v).has_value(); }

  std::vector<std::tuple<std::string, std::string, double>> edge_list() const {
    std::vector<std::tuple<std::string, std::string, double>> out;
    for (std::size_t u = 0; u < out_.size(); ++u) {
      for (const auto& e : out_[u]) out.emplace_back(nodes_[u], nodes_[e.target], e.weight);
    }
    return out;
  }

  // "actor<TAB>target<TAB>weight" per line.
  void save(const std::string& path) const {
    auto out = open_output(path);
    for (const auto& [u, v, w] : edge_list()) out << u << '\t' << v << '\t' << format_double(w) << '\n';
    if (!out) throw IoError("write failed: " + path);
  }

  static InteractionGraph load(const std::string& path, std::optional<Signal> signal = std::nullopt) {
    std::vector<std::tuple<std::string, std::string, double>> edges;
    std::size_t lineno = 0;
    for (const auto& line : read_lines(path)) {
      ++lineno;
      if (trim(line).empty()) continue;
      const auto parts = split_ws(line);
      if (parts.size() != 3) throw InputError(path + ":" + std::to_string(lineno) + ": expected 3 fields");
      edges.emplace_back(parts[0], parts[1], parse_double(parts[2]));
    }
    return from_edges(edges, signal);
  }

 private:
  std::optional<Signal> signal_;
  std::vector<std::string> nodes_;
  std::unordered_map<std::string, std::size_t> index_;
  std::vector<std::vector<Edge>> out_;
};

// Weighted signals accumulate counts; binary signals collapse to weight 1.
// Self-events are dropped. Every event's signal must be a known name.
inline InteractionGraph build_interaction_graph(const std::vector<InteractionEvent>& events,
                                                Signal signal) {
  std::map<std::pair<std::string, std::string>, double> weights;
  for (const auto& e : events) {
    const Signal s = parse_signal(e.signal);
    if (s != signal || e.actor == e.target) continue;
    if (e.count < 1) throw InputError("event count must be >= 1: " + e.actor + "->" + e.target);
    auto& w = weights[{e.actor, e.target}];
    w = is_binary(signal) ? 1.0 : w + static_cast<double>(e.count);
  }
  std::vector<std::tuple<std::string, std::string, double>> edges;
  for (const auto& [k, w] : weights) edges.emplace_back(k.first, k.second, w);
  return InteractionGraph::from_edges(edges, signal);
}

// Linear combination of edge weights across graphs; a graph without a signal
// tag uses multiplier 1.
inline InteractionGraph combine_graphs(const std::vector<InteractionGraph>& graphs,
                                       const std::map<Signal, double>& multipliers = {}) {
  std::vector<std::tuple<std::string, std::string, double>> edges;
  for (const auto& g : graphs) {
    double m = 1.0;
    if (g.signal()) {
      auto it = multipliers.find(*g.signal());
      m = it != multipliers.end() ? it->second : default_multiplier(*g.signal());
    }
    if (m < 0.0) throw ConfigError("graph multipliers must be non-negative");
    if (m == 0.0) continue;
    for (auto [u, v, w] : g.edge_list()) edges.emplace_back(u, v, w * m);
  }
  return InteractionGraph::from_edges(edges);
}

inline std::vector<InteractionEvent> read_events(const std::string& path) {
  std::vector<InteractionEvent> out;
  std::size_t lineno = 0;
  for (const auto& line : read_lines(path)) {
    ++lineno;
    if (trim(line).empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      out.push_back({j.at("actor").get<std::string>(), j.at("target").get<std::string>(),
                     j.at("signal").get<std::string>(),
                     j.contains("count") ? j.at("count").get<long long>() : 1LL});
    } catch (const nlohmann::json::exception& e) {
      throw InputError(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

inline void write_events(const std::string& path, const std::vector<InteractionEvent>& events) {
  auto out = open_output(path);
  for (const auto& e : events) {
    nlohmann::ordered_json j;
    j["actor"] = e.actor;
    j["target"] = e.target;
    j["signal"] = e.signal;
    j["count"] = e.count;
    out << j.dump() << '\n';
  }
  if (!out) throw IoError("write failed: " + path);
}

// --- biased random walks ----------------------------------------------------

struct WalkConfig {
  double p = 1.0;  // return parameter
  double q = 1.0;  // in-out parameter
  std::size_t walk_length = 40;
  std::size_t walks_per_node = 10;
  std::uint64_t seed = 1;

  void validate() const {
    if (!(p > 0.0) || !(q > 0.0)) throw ConfigError("walk p and q must be positive");
    if (walk_length < 2) throw ConfigError("walk_length must be >= 2");
  }
};

using Walk = std::vector<std::size_t>;  // node indices into InteractionGraph::nodes()

// Unnormalized second-order weights for stepping from `current` given the
// previous node (none on the first step). Indexed like out_edges(current).
inline std::vector<double> transition_weights(const InteractionGraph& g, std::optional<std::size_t> previous,
                                              std::size_t current, double p, double q) {
  const auto& adj = g.out_edges(current);
  std::vector<double> w(adj.size());
  for (std::size_t i = 0; i < adj.size(); ++i) {
    double bias = 1.0;
    if (previous) {
      const std::size_t x = adj[i].target;
      if (x == *previous) {
        bias = 1.0 / p;
      } else if (!g.has_edge(*previous, x)) {
        bias = 1.0 / q;
      }
    }
    w[i] = adj[i].weight * bias;
  }
  return w;
}

inline std::size_t sample_index(const std::vector<double>& weights, Rng& rng) {
  double total = 0.0;
  for (double w : weights) total += w;
  double u = uniform01(rng) * total;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    u -= weights[i];
    if (u < 0.0) return i;
  }
  return weights.size() - 1;
}

// One walk from `start`, truncated early only at a sink.
inline Walk biased_walk(const InteractionGraph& g, std::size_t start, const WalkConfig& cfg, Rng& rng) {
  Walk walk{start};
  walk.reserve(cfg.walk_length);
  while (walk.size() < cfg.walk_length) {
    const std::size_t cur = walk.back();
    const auto& adj = g.out_edges(cur);
    if (adj.empty()) break;
    std::optional<std::size_t> prev;
    if (walk.size() >= 2) prev = walk[walk.size() - 2];
    walk.push_back(adj[sample_index(transition_weights(g, prev, cur, cfg.p, cfg.q), rng)].target);
  }
  return walk;
}

// walks_per_node rounds; each round starts one walk at every node with
// out-degree >= 1. Walk (round r, node v) is seeded from (seed, v, r), so the
// result does not depend on evaluation order.
inline std::vector<Walk> node2vec_walks(const InteractionGraph& g, const WalkConfig& cfg) {
  cfg.validate();
  if (g.empty()) throw EmptyGraphError("cannot walk an empty graph");
  std::vector<Walk> walks;
  for (std::size_t r = 0; r < cfg.walks_per_node; ++r) {
    for (std::size_t v = 0; v < g.num_nodes(); ++v) {
      if (g.out_edges(v).empty()) continue;
      Rng rng(derive_seed(cfg.seed, v, r));
      walks.push_back(biased_walk(g, v, cfg, rng));
    }
  }
  return walks;
}

// --- skip-gram with negative sampling -------------------------------------

struct SkipGramConfig {
  Eigen::Index dim = 64;
  std::size_t window = 5;
  std::size_t negatives = 5;
  std::size_t epochs = 5;
  double learning_rate = 0.025;
  std::uint64_t seed = 1;

  void validate() const {
    if (dim < 2) throw ConfigError("skip-gram dim must be >= 2");
    if (window < 1) throw ConfigError("skip-gram window must be >= 1");
    if (negatives < 1) throw ConfigError("skip-gram negatives must be >= 1");
    if (!(learning_rate >= 0.0)) throw ConfigError("skip-gram learning_rate must be >= 0");
  }
};

inline double sigmoid(double x) noexcept { return 1.0 / (1.0 + std::exp(-x)); }
inline double log_sigmoid(double x) noexcept {
  return x >= 0 ? -std::log1p(std::exp(-x)) : x - std::log1p(std::exp(x));
}

// Sampled objective for one (center, context, negatives) sample:
//   log s(u.c) + sum_k log s(-u.n_k)
inline double skipgram_objective(const Eigen::VectorXd& center, const Eigen::VectorXd& context,
                                 const std::vector<Eigen::VectorXd>& negatives) {
  double j = log_sigmoid(center.dot(context));
  for (const auto& n : negatives) j += log_sigmoid(-center.dot(n));
  return j;
}

struct SkipGramGradient {
  Eigen::VectorXd center;
  Eigen::VectorXd context;
  std::vector<Eigen::VectorXd> negatives;
};

inline SkipGramGradient skipgram_gradient(const Eigen::VectorXd& center, const Eigen::VectorXd& context,
                                          const std::vector<Eigen::VectorXd>& negatives) {
  SkipGramGradient g;
  const double gc = 1.0 - sigmoid(center.dot(context));
  g.center = gc * context;
  g.context = gc * center;
  for (const auto& n : negatives) {
    const double gn = -sigmoid(center.dot(n));
    g.center += gn * n;
    g.negatives.push_back(gn * center);
  }
  return g;
}

// Stateful trainer: separate input (published) and output tables over
// compact node rows. Rows follow first appearance in sorted node order.
class SkipGramTrainer {
 public:
  SkipGramTrainer(const std::vector<Walk>& walks, std::size_t num_nodes, const SkipGramConfig& cfg)
      : cfg_(cfg), walks_(walks), rng_(derive_seed(cfg.seed, 0x5c1fu)) {
    cfg_.validate();
    if (walks_.empty()) throw ConfigError("skip-gram needs at least one walk");
    counts_.assign(num_nodes, 0);
    for (const auto& w : walks_) {
      for (auto v : w) {
        if (v >= num_nodes) throw InputError("walk node index out of range");
        ++counts_[v];
      }
    }
    row_of_.assign(num_nodes, kAbsent);
    for (std::size_t v = 0; v < num_nodes; ++v) {
      if (counts_[v] > 0) {
        row_of_[v] = node_of_row_.size();
        node_of_row_.push_back(v);
      }
    }
    const auto rows = static_cast<Eigen::Index>(node_of_row_.size());
    input_.resize(cfg_.dim, rows);
    const double r = 0.5 / static_cast<double>(cfg_.dim);
    for (Eigen::Index c = 0; c < rows; ++c) {
      for (Eigen::Index d = 0; d < cfg_.dim; ++d) input_(d, c) = uniform(rng_, -r, r);
    }
    output_ = Eigen::MatrixXd::Zero(cfg_.dim, rows);
    double acc = 0.0;
    for (auto v : node_of_row_) {
      acc += std::pow(static_cast<double>(counts_[v]), 0.75);
      noise_cdf_.push_back(acc);
    }
    for (const auto& w : walks_) total_tokens_ += w.size();
  }

  static constexpr std::size_t kAbsent = static_cast<std::size_t>(-1);

  std::size_t row(std::size_t node) const { return row_of_.at(node); }
  const std::vector<std::size_t>& nodes_by_row() const noexcept { return node_of_row_; }
  const Eigen::MatrixXd& input() const noexcept { return input_; }
  const Eigen::MatrixXd& output() const noexcept { return output_; }

  std::size_t sample_negative() {
    const double u = uniform01(rng_) * noise_cdf_.back();
    auto it = std::upper_bound(noise_cdf_.begin(), noise_cdf_.end(), u);
    return static_cast<std::size_t>(std::min<std::ptrdiff_t>(it - noise_cdf_.begin(),
                                                             static_cast<std::ptrdiff_t>(noise_cdf_.size()) - 1));
  }

  // One ascent step on (center, context) rows with freshly sampled negatives;
  // negatives equal to the context are skipped. Returns the sampled objective
  // before the update.
  double step(std::size_t center_row, std::size_t context_row, double lr) {
    std::vector<std::size_t> negs;
    for (std::size_t k = 0; k < cfg_.negatives; ++k) {
      const auto n = sample_negative();
      if (n != context_row) negs.push_back(n);
    }
    const auto ci = static_cast<Eigen::Index>(center_row);
    Eigen::VectorXd u = input_.col(ci);
    Eigen::VectorXd c = output_.col(static_cast<Eigen::Index>(context_row));
    std::vector<Eigen::VectorXd> nv;
    for (auto n : negs) nv.push_back(output_.col(static_cast<Eigen::Index>(n)));
    const double objective = skipgram_objective(u, c, nv);
    const auto g = skipgram_gradient(u, c, nv);
    output_.col(static_cast<Eigen::Index>(context_row)) += lr * g.context;
    for (std::size_t k = 0; k < negs.size(); ++k) {
      output_.col(static_cast<Eigen::Index>(negs[k])) += lr * g.negatives[k];
    }
    input_.col(ci) += lr * g.center;
    return objective;
  }

  // Full training: epochs over every walk window, linearly decaying rate.
  void run() {
    const double total = static_cast<double>(cfg_.epochs * total_tokens_);
    double seen = 0.0;
    for (std::size_t e = 0; e < cfg_.epochs; ++e) {
      for (const auto& w : walks_) {
        for (std::size_t i = 0; i < w.size(); ++i) {
          const double lr = cfg_.learning_rate * std::max(1e-4, 1.0 - seen / total);
          seen += 1.0;
          const std::size_t lo = i >= cfg_.window ? i - cfg_.window : 0;
          const std::size_t hi = std::min(w.size() - 1, i + cfg_.window);
          for (std::size_t j = lo; j <= hi; ++j) {
            if (j == i) continue;
            step(row_of_[w[i]], row_of_[w[j]], lr);
          }
        }
      }
      if (!input_.allFinite() || !output_.allFinite()) throw NumericError("skip-gram diverged");
    }
  }

  EmbeddingTable table(const std::vector<std::string>& node_names) const {
    EmbeddingTable t(cfg_.dim);
    for (std::size_t r = 0; r < node_of_row_.size(); ++r) {
      t.add(node_names.at(node_of_row_[r]), input_.col(static_cast<Eigen::Index>(r)));
    }
    return t;
  }

 private:
  SkipGramConfig cfg_;
  const std::vector<Walk>& walks_;
  Rng rng_;
  std::vector<std::size_t> counts_;
  std::vector<std::size_t> row_of_;
  std::vector<std::size_t> node_of_row_;
  std::vector<double> noise_cdf_;
  std::size_t total_tokens_ = 0;
  Eigen::MatrixXd input_;
  Eigen::MatrixXd output_;
};

// Nodes absent from every walk are absent from the returned table.
inline EmbeddingTable train_skipgram(const std::vector<Walk>& walks,
                                     const std::vector<std::string>& node_names,
                                     const SkipGramConfig& cfg) {
  SkipGramTrainer trainer(walks, node_names.size(), cfg);
  trainer.run();
  return trainer.table(node_names);
}

inline EmbeddingTable embed_graph(const InteractionGraph& g, const WalkConfig& walk_cfg,
                                  const SkipGramConfig& sg_cfg) {
  return train_skipgram(node2vec_walks(g, walk_cfg), g.nodes(), sg_cfg);
}

// --- link prediction ---------------------------------------------------------

// Area under the ROC curve via the rank-sum statistic; ties count one half.
inline double roc_auc(const std::vector<double>& positive, const std::vector<double>& negative) {
  if (positive.empty() || negative.empty()) throw ConfigError("AUC needs positive and negative scores");
  std::vector<std::pair<double, int>> all;
  for (double s : positive) all.emplace_back(s, 1);
  for (double s : negative) all.emplace_back(s, 0);
  std::sort(all.begin(), all.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  double rank_sum = 0.0;
  for (std::size_t i = 0; i < all.size();) {
    std::size_t j = i;
    while (j < all.size() && all[j].first == all[i].first) ++j;
    const double avg_rank = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k) {
      if (all[k].second) rank_sum += avg_rank;
    }
    i = j;
  }
  const double np = static_cast<double>(positive.size());
  const double nn = static_cast<double>(negative.size());
  return (rank_sum - np * (np + 1.0) / 2.0) / (np * nn);
}

using NodePair = std::pair<std::string, std::string>;

struct LinkPredictionSplit {
  InteractionGraph residual;        // graph without the held-out edges
  std::vector<NodePair> held_out;   // removed edges
  std::vector<NodePair> non_edges;  // same count, absent from the full graph
};

inline constexpr std::size_t kMinLinkPredictionEdges = 20;

inline LinkPredictionSplit split_edges(const InteractionGraph& g, double held_out_fraction,
                                       std::uint64_t seed) {
  const std::size_t m = g.num_edges();
  if (m < kMinLinkPredictionEdges) {
    throw ConfigError("link prediction needs >= 20 edges, graph has " + std::to_string(m));
  }
  if (!(held_out_fraction > 0.0 && held_out_fraction < 1.0)) {
    throw ConfigError("held_out_fraction must be in (0,1)");
  }
  auto edges = g.edge_list();
  Rng rng(derive_seed(seed, 0x11cbu));
  shuffle(edges, rng);
  const auto k = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::llround(held_out_fraction * static_cast<double>(m))));
  LinkPredictionSplit s;
  std::vector<std::tuple<std::string, std::string, double>> kept;
  for (std::size_t i = 0; i < edges.size(); ++i) {
    if (i < k) {
      s.held_out.emplace_back(std::get<0>(edges[i]), std::get<1>(edges[i]));
    } else {
      kept.push_back(edges[i]);
    }
  }
  s.residual = InteractionGraph::from_edges(kept, g.signal());
  const std::size_t n = g.num_nodes();
  if (n * (n - 1) < m + k) throw ConfigError("graph too dense to sample non-edges");
  std::set<std::pair<std::size_t, std::size_t>> chosen;
  while (s.non_edges.size() < k) {
    const auto u = uniform_index(rng, n);
    const auto v = uniform_index(rng, n);
    if (u == v || g.has_edge(u, v) || !chosen.emplace(u, v).second) continue;
    s.non_edges.emplace_back(g.node(u), g.node(v));
  }
  return s;
}

using PairScorer = std::function<double(const std::string&, const std::string&)>;

inline double link_prediction_auc(const LinkPredictionSplit& split, const PairScorer& score) {
  std::vector<double> pos;
  std::vector<double> neg;
  for (const auto& [u, v] : split.held_out) pos.push_back(score(u, v));
  for (const auto& [u, v] : split.non_edges) neg.push_back(score(u, v));
  return roc_auc(pos, neg);
}

// Dot product of published vectors; 0 when either node has no vector.
inline PairScorer dot_scorer(const EmbeddingTable& table) {
  return [&table](const std::string& u, const std::string& v) {
    auto a = table.find(u);
    auto b = table.find(v);
    if (!a || !b) return 0.0;
    return table.vectors().col(static_cast<Eigen::Index>(*a)).dot(
        table.vectors().col(static_cast<Eigen::Index>(*b)));
  };
}

inline double link_prediction_eval(const InteractionGraph& g, const EmbeddingTable& table,
                                   double held_out_fraction, std::uint64_t seed) {
  return link_prediction_auc(split_edges(g, held_out_fraction, seed), dot_scorer(table));
}

// Held-out protocol: embed the residual graph only, then score the removed
// edges against sampled non-edges.
inline double link_prediction_heldout(const InteractionGraph& g, const WalkConfig& walk_cfg,
                                      const SkipGramConfig& sg_cfg, double held_out_fraction,
                                      std::uint64_t seed) {
  const auto split = split_edges(g, held_out_fraction, seed);
  const auto table = embed_graph(split.residual, walk_cfg, sg_cfg);
  return link_prediction_auc(split, dot_scorer(table));
}

inline double cosine(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  const double na = a.norm();
  const double nb = b.norm();
  if (na == 0.0 || nb == 0.0) return 0.0;
  return a.dot(b) / (na * nb);
}

}  // namespace soc2seq
