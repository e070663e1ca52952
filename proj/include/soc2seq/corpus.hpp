#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <set>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "soc2seq/error.hpp"
#include "soc2seq/util.hpp"

namespace soc2seq {

using TokenId = std::int32_t;

inline constexpr TokenId kPad = 0;
inline constexpr TokenId kUnk = 1;
inline constexpr TokenId kBos = 2;
inline constexpr TokenId kEos = 3;
inline constexpr TokenId kNumReserved = 4;
inline constexpr std::size_t kMinPostTokens = 5;
inline constexpr std::size_t kReferenceVocabSize = 100000;

// Lowercases ASCII letters, splits on whitespace and emits every ASCII
// punctuation character as its own token. Bytes >= 0x80 pass through so UTF-8
// sequences stay intact.
inline std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> tokens;
  std::string current;
  auto flush = [&] {
    if (!current.empty()) tokens.push_back(std::move(current));
    current.clear();
  };
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (c < 0x80 && std::isspace(c)) {
      flush();
    } else if (c < 0x80 && std::ispunct(c)) {
      flush();
      tokens.emplace_back(1, static_cast<char>(c));
    } else if (c < 0x80) {
      current.push_back(static_cast<char>(std::tolower(c)));
    } else {
      current.push_back(ch);
    }
  }
  flush();
  return tokens;
}

class Vocabulary {
 public:
  static constexpr std::array<const char*, kNumReserved> kReservedWords = {
      "<pad>", "<unk>", "<s>", "</s>"};

  Vocabulary() : Vocabulary(kReferenceVocabSize) {}

  explicit Vocabulary(std::size_t max_size) : max_size_(max_size) {
    if (max_size < static_cast<std::size_t>(kNumReserved)) {
      throw ConfigError("vocabulary max_size must be >= 4");
    }
    for (const char* w : kReservedWords) words_.emplace_back(w);
  }

  // Appends a non-reserved word; returns its id. Existing words keep their id.
  TokenId add(const std::string& word) {
    if (auto it = index_.find(word); it != index_.end()) return it->second;
    if (is_reserved_word(word)) throw InputError("reserved word cannot be added: " + word);
    if (words_.size() >= max_size_) throw ConfigError("vocabulary is full");
    const auto id = static_cast<TokenId>(words_.size());
    words_.push_back(word);
    index_.emplace(word, id);
    return id;
  }

  TokenId id_of(const std::string& word) const {
    for (TokenId i = 0; i < kNumReserved; ++i) {
      if (word == kReservedWords[static_cast<std::size_t>(i)]) return i;
    }
    auto it = index_.find(word);
    return it == index_.end() ? kUnk : it->second;
  }

  const std::string& word_of(TokenId id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= words_.size()) {
      throw InputError("token id out of range: " + std::to_string(id));
    }
    return words_[static_cast<std::size_t>(id)];
  }

  std::size_t size() const noexcept { return words_.size(); }
  std::size_t max_size() const noexcept { return max_size_; }
  const std::vector<std::string>& words() const noexcept { return words_; }

  std::vector<TokenId> encode(const std::vector<std::string>& tokens) const {
    std::vector<TokenId> ids;
    ids.reserve(tokens.size() + 1);
    for (const auto& t : tokens) ids.push_back(id_of(t));
    return ids;
  }

  // Drops the trailing EOS and anything after it; reserved ids are skipped.
  std::vector<std::string> decode(const std::vector<TokenId>& ids) const {
    std::vector<std::string> out;
    for (TokenId id : ids) {
      if (id == kEos) break;
      if (id < kNumReserved && id != kUnk) continue;
      out.push_back(word_of(id));
    }
    return out;
  }

  // Stable content hash over the ordered word list; stored in checkpoints.
  std::string hash() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& w : words_) {
      h = fnv1a(w, h);
      h = fnv1a("\n", h);
    }
    return hex64(h);
  }

  // One non-reserved word per line; line k (0-based) has id k + 4.
  void save(const std::string& path) const {
    auto out = open_output(path);
    for (std::size_t i = kNumReserved; i < words_.size(); ++i) out << words_[i] << '\n';
    if (!out) throw IoError("write failed: " + path);
  }

  static Vocabulary load(const std::string& path, std::size_t max_size = kReferenceVocabSize) {
    const auto lines = read_lines(path);
    Vocabulary v(std::max(max_size, lines.size() + kNumReserved));
    for (const auto& line : lines) {
      if (line.empty()) throw InputError("empty line in vocabulary file " + path);
      if (v.index_.count(line)) throw InputError("duplicate word in vocabulary file: " + line);
      v.add(line);
    }
    return v;
  }

 private:
  static bool is_reserved_word(const std::string& w) {
    return std::find(kReservedWords.begin(), kReservedWords.end(), w) != kReservedWords.end();
  }

  std::size_t max_size_;
  std::vector<std::string> words_;
  std::unordered_map<std::string, TokenId> index_;
};

// Location identifiers at three granularities. Empty string means unknown.
struct LocationKey {
  std::string county;
  std::string city;
  std::string country;

  friend bool operator==(const LocationKey&, const LocationKey&) = default;
  friend auto operator<=>(const LocationKey&, const LocationKey&) = default;
};

struct PairMeta {
  LocationKey location;
  std::string author_user;
  std::string replier_user;

  friend bool operator==(const PairMeta&, const PairMeta&) = default;
};

struct RawPair {
  std::string post;
  std::string reply;
  PairMeta meta;
};

struct TokenizedPair {
  std::vector<std::string> post;
  std::vector<std::string> reply;
  PairMeta meta;

  friend bool operator==(const TokenizedPair&, const TokenizedPair&) = default;
};

struct ConversationPair {
  std::vector<TokenId> post;   // EOS-terminated
  std::vector<TokenId> reply;  // EOS-terminated
  PairMeta meta;

  friend bool operator==(const ConversationPair&, const ConversationPair&) = default;
};

struct FilterStats {
  std::size_t total = 0;
  std::size_t dropped_short = 0;
  std::size_t dropped_stoplist = 0;
  std::size_t retained = 0;
};

using Stoplist = std::unordered_set<std::string>;

inline Stoplist load_stoplist(const std::string& path) {
  Stoplist s;
  for (const auto& line : read_lines(path)) {
    auto t = trim(line);
    if (!t.empty()) s.emplace(t);
  }
  return s;
}

inline bool passes_filters(const std::vector<std::string>& post, const Stoplist& stoplist) {
  if (post.size() < kMinPostTokens) return false;
  return std::none_of(post.begin(), post.end(),
                      [&](const std::string& t) { return stoplist.count(t) > 0; });
}

// Tokenizes and applies the length / stoplist predicates to the post side.
inline std::vector<TokenizedPair> filter_pairs(const std::vector<RawPair>& raw,
                                               const Stoplist& stoplist,
                                               FilterStats* stats = nullptr) {
  FilterStats local;
  std::vector<TokenizedPair> kept;
  for (const auto& r : raw) {
    ++local.total;
    auto post = tokenize(r.post);
    if (post.size() < kMinPostTokens) {
      ++local.dropped_short;
      continue;
    }
    if (!passes_filters(post, stoplist)) {
      ++local.dropped_stoplist;
      continue;
    }
    kept.push_back({std::move(post), tokenize(r.reply), r.meta});
  }
  local.retained = kept.size();
  if (stats) *stats = local;
  return kept;
}

inline ConversationPair encode_pair(const TokenizedPair& p, const Vocabulary& vocab) {
  ConversationPair c{vocab.encode(p.post), vocab.encode(p.reply), p.meta};
  c.post.push_back(kEos);
  c.reply.push_back(kEos);
  return c;
}

inline std::vector<ConversationPair> encode_pairs(const std::vector<TokenizedPair>& pairs,
                                                  const Vocabulary& vocab) {
  std::vector<ConversationPair> out;
  out.reserve(pairs.size());
  for (const auto& p : pairs) out.push_back(encode_pair(p, vocab));
  return out;
}

inline std::vector<ConversationPair> preprocess_pairs(const std::vector<RawPair>& raw,
                                                      const Stoplist& stoplist,
                                                      const Vocabulary& vocab,
                                                      FilterStats* stats = nullptr) {
  return encode_pairs(filter_pairs(raw, stoplist, stats), vocab);
}

// Keeps the max_size - 4 most frequent words (post and reply sides), ties
// broken lexicographically.
inline Vocabulary build_vocab(const std::vector<TokenizedPair>& pairs, std::size_t max_size) {
  std::map<std::string, std::size_t> counts;
  for (const auto& p : pairs) {
    for (const auto& t : p.post) ++counts[t];
    for (const auto& t : p.reply) ++counts[t];
  }
  std::vector<std::pair<std::string, std::size_t>> ranked(counts.begin(), counts.end());
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  Vocabulary vocab(max_size);
  const std::size_t room = max_size - kNumReserved;
  for (std::size_t i = 0; i < ranked.size() && i < room; ++i) vocab.add(ranked[i].first);
  return vocab;
}

template <typename T>
struct Split {
  std::vector<T> train;
  std::vector<T> validation;
  std::vector<T> test;
  std::uint64_t split_seed = 0;
};

using DatasetSplit = Split<ConversationPair>;

inline std::array<std::size_t, 3> split_sizes(std::size_t n, const std::array<double, 3>& ratios) {
  for (double r : ratios) {
    if (!(r > 0.0)) throw ConfigError("split ratios must be positive");
  }
  if (std::abs(ratios[0] + ratios[1] + ratios[2] - 1.0) > 1e-9) {
    throw ConfigError("split ratios must sum to 1");
  }
  const auto nd = static_cast<double>(n);
  const auto train = static_cast<std::size_t>(std::llround(nd * ratios[0]));
  const auto val = std::min(n - train, static_cast<std::size_t>(std::llround(nd * ratios[1])));
  return {train, val, n - train - val};
}

template <typename T>
Split<T> split_dataset(const std::vector<T>& pairs, const std::array<double, 3>& ratios,
                       std::uint64_t seed) {
  const auto sizes = split_sizes(pairs.size(), ratios);
  std::vector<std::size_t> order(pairs.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(derive_seed(seed, 0x5911u));
  shuffle(order, rng);
  Split<T> s;
  s.split_seed = seed;
  for (std::size_t i = 0; i < order.size(); ++i) {
    auto& dst = i < sizes[0] ? s.train : (i < sizes[0] + sizes[1] ? s.validation : s.test);
    dst.push_back(pairs[order[i]]);
  }
  return s;
}

// --- JSON-lines pairs files ------------------------------------------------

inline nlohmann::ordered_json meta_to_json(const PairMeta& m) {
  nlohmann::ordered_json j;
  j["county"] = m.location.county;
  j["city"] = m.location.city;
  j["country"] = m.location.country;
  j["author_user"] = m.author_user;
  j["replier_user"] = m.replier_user;
  return j;
}

inline PairMeta meta_from_json(const nlohmann::json& j) {
  auto str = [&](const char* k) { return j.contains(k) ? j.at(k).get<std::string>() : std::string{}; };
  return {{str("county"), str("city"), str("country")}, str("author_user"), str("replier_user")};
}

inline std::vector<RawPair> read_raw_pairs(const std::string& path) {
  std::vector<RawPair> out;
  std::size_t lineno = 0;
  for (const auto& line : read_lines(path)) {
    ++lineno;
    if (trim(line).empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      out.push_back({j.at("post").get<std::string>(), j.at("reply").get<std::string>(),
                     meta_from_json(j)});
    } catch (const nlohmann::json::exception& e) {
      throw InputError(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

inline std::string raw_pair_json(const RawPair& p) {
  nlohmann::ordered_json j;
  j["post"] = p.post;
  j["reply"] = p.reply;
  const auto meta = meta_to_json(p.meta);
  for (const auto& [k, v] : meta.items()) j[k] = v;
  return j.dump();
}

inline void write_raw_pairs(const std::string& path, const std::vector<RawPair>& pairs) {
  auto out = open_output(path);
  for (const auto& p : pairs) out << raw_pair_json(p) << '\n';
  if (!out) throw IoError("write failed: " + path);
}

// Tokenized pairs share the raw schema with space-joined token text; the
// tokenizer is idempotent on that text so reading back is lossless.
inline void write_tokenized_pairs(const std::string& path, const std::vector<TokenizedPair>& pairs) {
  auto out = open_output(path);
  for (const auto& p : pairs) {
    out << raw_pair_json({join(p.post, " "), join(p.reply, " "), p.meta}) << '\n';
  }
  if (!out) throw IoError("write failed: " + path);
}

inline std::vector<TokenizedPair> read_tokenized_pairs(const std::string& path) {
  std::vector<TokenizedPair> out;
  for (auto& r : read_raw_pairs(path)) out.push_back({tokenize(r.post), tokenize(r.reply), r.meta});
  return out;
}

}  // namespace soc2seq
