#pragma once

#include <cmath>
#include <cstdio>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "soc2seq/checkpoint.hpp"
#include "soc2seq/corpus.hpp"
#include "soc2seq/decoding.hpp"
#include "soc2seq/error.hpp"
#include "soc2seq/model.hpp"
#include "soc2seq/training.hpp"

namespace soc2seq {

struct Prf {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

inline Prf make_prf(double overlap, double candidate_total, double reference_total) {
  Prf s;
  s.precision = candidate_total > 0 ? overlap / candidate_total : 0.0;
  s.recall = reference_total > 0 ? overlap / reference_total : 0.0;
  const double d = s.precision + s.recall;
  s.f1 = d > 0 ? 2.0 * s.precision * s.recall / d : 0.0;
  return s;
}

// Clipped n-gram overlap.
template <typename T>
Prf rouge_n(const std::vector<T>& candidate, const std::vector<T>& reference, std::size_t n) {
  if (n < 1) throw ConfigError("rouge_n needs n >= 1");
  auto grams = [n](const std::vector<T>& s) {
    std::map<std::vector<T>, std::size_t> counts;
    for (std::size_t i = 0; i + n <= s.size(); ++i) ++counts[std::vector<T>(s.begin() + i, s.begin() + i + n)];
    return counts;
  };
  const auto c = grams(candidate);
  const auto r = grams(reference);
  std::size_t overlap = 0;
  for (const auto& [g, k] : c) {
    if (auto it = r.find(g); it != r.end()) overlap += std::min(k, it->second);
  }
  const auto total = [n](const std::vector<T>& s) { return s.size() >= n ? static_cast<double>(s.size() - n + 1) : 0.0; };
  return make_prf(static_cast<double>(overlap), total(candidate), total(reference));
}

template <typename T>
std::size_t lcs_length(const std::vector<T>& a, const std::vector<T>& b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

template <typename T>
Prf rouge_l(const std::vector<T>& candidate, const std::vector<T>& reference) {
  return make_prf(static_cast<double>(lcs_length(candidate, reference)), static_cast<double>(candidate.size()),
                  static_cast<double>(reference.size()));
}

// exp of the corpus-level mean per-token NLL (teacher forcing, no dropout).
inline double perplexity(const Model& model, const std::vector<ConversationPair>& pairs) {
  return std::exp(corpus_token_nll(model, pairs));
}

struct EvalReport {
  std::string label;
  double perplexity = 0.0;
  Prf rouge1, rouge2, rougeL;
  std::size_t pairs = 0;
  std::size_t references = 0;  // distinct (post, persona) groups scored
};

struct EvalModel {
  const Model* model = nullptr;
  std::string label;  // empty: derived from the model's variant
};

namespace detail {

struct RefGroup {
  const ConversationPair* first = nullptr;
  std::vector<std::vector<TokenId>> references;
};

// Pairs with the same post and persona metadata are one multi-reference item.
inline std::vector<RefGroup> group_references(const std::vector<ConversationPair>& pairs) {
  std::vector<RefGroup> groups;
  std::map<std::pair<std::vector<TokenId>, std::string>, std::size_t> index;
  for (const auto& p : pairs) {
    const auto key = std::make_pair(p.post, meta_to_json(p.meta).dump());
    auto [it, fresh] = index.emplace(key, groups.size());
    if (fresh) groups.push_back({&p, {}});
    groups[it->second].references.push_back(strip_eos(p.reply));
  }
  return groups;
}

template <typename F>
Prf best_reference(const std::vector<TokenId>& candidate, const std::vector<std::vector<TokenId>>& refs, F&& score) {
  Prf best;
  bool any = false;
  for (const auto& r : refs) {
    const Prf s = score(candidate, r);
    if (!any || s.f1 > best.f1) best = s;
    any = true;
  }
  return best;
}

}  // namespace detail

inline EvalReport evaluate_model(const Model& model, const std::string& label, const std::vector<ConversationPair>& test,
                                 const BeamConfig& beam) {
  if (test.empty()) throw ConfigError("evaluation split is empty");
  EvalReport r;
  r.label = label.empty() ? variant_label(model) : label;
  r.perplexity = perplexity(model, test);
  r.pairs = test.size();
  BeamConfig top1 = beam;
  top1.n_best = 1;
  const auto groups = detail::group_references(test);
  r.references = groups.size();
  Prf s1, s2, sl;
  auto add = [](Prf& acc, const Prf& v) {
    acc.precision += v.precision;
    acc.recall += v.recall;
    acc.f1 += v.f1;
  };
  for (const auto& g : groups) {
    const auto out = beam_search(model, *g.first, top1);
    const auto cand = strip_eos(out.hypotheses.front().tokens);
    add(s1, detail::best_reference(cand, g.references, [](const auto& c, const auto& ref) { return rouge_n(c, ref, 1); }));
    add(s2, detail::best_reference(cand, g.references, [](const auto& c, const auto& ref) { return rouge_n(c, ref, 2); }));
    add(sl, detail::best_reference(cand, g.references, [](const auto& c, const auto& ref) { return rouge_l(c, ref); }));
  }
  const double n = static_cast<double>(groups.size());
  for (auto* acc : {&s1, &s2, &sl}) {
    acc->precision /= n;
    acc->recall /= n;
    acc->f1 /= n;
  }
  r.rouge1 = s1;
  r.rouge2 = s2;
  r.rougeL = sl;
  return r;
}

inline std::vector<EvalReport> evaluate(const std::vector<EvalModel>& models, const std::vector<ConversationPair>& test,
                                        const BeamConfig& beam) {
  if (models.empty()) throw ConfigError("evaluate needs at least one model");
  std::vector<EvalReport> out;
  for (const auto& m : models) {
    if (!m.model) throw ConfigError("null model in evaluation list");
    out.push_back(evaluate_model(*m.model, m.label, test, beam));
  }
  return out;
}

inline nlohmann::ordered_json to_json(const Prf& s) {
  return {{"precision", s.precision}, {"recall", s.recall}, {"f1", s.f1}};
}

inline nlohmann::ordered_json to_json(const std::vector<EvalReport>& reports) {
  auto rows = nlohmann::ordered_json::array();
  for (const auto& r : reports) {
    rows.push_back({{"model", r.label},
                    {"perplexity", r.perplexity},
                    {"rouge1", to_json(r.rouge1)},
                    {"rouge2", to_json(r.rouge2)},
                    {"rougeL", to_json(r.rougeL)},
                    {"pairs", r.pairs},
                    {"references", r.references}});
  }
  return rows;
}

// Perplexity and ROUGE F1 (as percentages) per model.
inline std::string format_table(const std::vector<EvalReport>& reports) {
  std::size_t width = 5;
  for (const auto& r : reports) width = std::max(width, r.label.size());
  auto pad = [](std::string s, std::size_t w) {
    s.resize(std::max(s.size(), w), ' ');
    return s;
  };
  std::string out = pad("Model", width) + "  Perplexity  ROUGE-1  ROUGE-2  ROUGE-L\n";
  char buf[96];
  for (const auto& r : reports) {
    std::snprintf(buf, sizeof buf, "  %10.2f  %7.2f  %7.2f  %7.2f\n", r.perplexity, 100.0 * r.rouge1.f1,
                  100.0 * r.rouge2.f1, 100.0 * r.rougeL.f1);
    out += pad(r.label, width) + buf;
  }
  return out;
}

}  // namespace soc2seq
