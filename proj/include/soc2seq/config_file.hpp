#pragma once

#include <array>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "soc2seq/corpus.hpp"
#include "soc2seq/decoding.hpp"
#include "soc2seq/error.hpp"
#include "soc2seq/model_config.hpp"
#include "soc2seq/socialgraph.hpp"
#include "soc2seq/training.hpp"
#include "soc2seq/util.hpp"

namespace soc2seq {

// Everything a pipeline command can be configured with besides file paths.
struct PipelineConfig {
  std::uint64_t seed = 1;
  std::size_t max_vocab = 10000;
  std::array<double, 3> split{0.8, 0.1, 0.1};
  ModelConfig model;
  TrainConfig train;
  BeamConfig beam;
  WalkConfig walk;
  SkipGramConfig skipgram;
  std::vector<Signal> signals{Signal::comment, Signal::like};

  // Pushes the top-level seed into every stochastic component.
  void propagate_seed() {
    train.seed = seed;
    walk.seed = seed;
    skipgram.seed = seed;
  }
};

namespace detail {

inline bool parse_bool(const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError("expected true/false, got '" + v + "'");
}

inline std::size_t parse_count(const std::string& v) {
  const auto n = parse_int(v);
  if (n < 0) throw ConfigError("expected a non-negative integer, got '" + v + "'");
  return static_cast<std::size_t>(n);
}

inline std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= v.size()) {
    const auto comma = v.find(',', start);
    const auto end = comma == std::string::npos ? v.size() : comma;
    out.emplace_back(trim(std::string_view(v).substr(start, end - start)));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return out;
}

using Setter = std::function<void(PipelineConfig&, const std::string&)>;

inline const std::map<std::string, Setter>& config_setters() {
  static const std::map<std::string, Setter> table = [] {
    std::map<std::string, Setter> t;
    auto idx = [](const std::string& v) { return static_cast<Eigen::Index>(parse_count(v)); };
    t["seed"] = [](PipelineConfig& c, const std::string& v) { c.seed = parse_count(v); };
    t["corpus.max_vocab"] = [](PipelineConfig& c, const std::string& v) { c.max_vocab = parse_count(v); };
    t["corpus.split"] = [](PipelineConfig& c, const std::string& v) {
      const auto parts = split_list(v);
      if (parts.size() != 3) throw ConfigError("expected three ratios train,valid,test");
      for (std::size_t i = 0; i < 3; ++i) c.split[i] = parse_double(parts[i]);
    };
    t["model.layers"] = [idx](PipelineConfig& c, const std::string& v) { c.model.layers = idx(v); };
    t["model.hidden"] = [idx](PipelineConfig& c, const std::string& v) { c.model.hidden = idx(v); };
    t["model.word_dim"] = [idx](PipelineConfig& c, const std::string& v) { c.model.word_dim = idx(v); };
    t["model.persona_dim"] = [idx](PipelineConfig& c, const std::string& v) { c.model.persona_dim = idx(v); };
    t["model.dropout"] = [](PipelineConfig& c, const std::string& v) { c.model.dropout = parse_double(v); };
    t["model.persona_mode"] = [](PipelineConfig& c, const std::string& v) { c.model.persona_mode = parse_persona_mode(v); };
    t["model.persona_kind"] = [](PipelineConfig& c, const std::string& v) { c.model.persona_kind = parse_persona_kind(v); };
    t["model.encoder_persona"] = [](PipelineConfig& c, const std::string& v) {
      c.model.encoder_persona = parse_encoder_persona(v);
    };
    t["model.attention"] = [](PipelineConfig& c, const std::string& v) { c.model.attention = parse_bool(v); };
    t["model.location_dims"] = [idx](PipelineConfig& c, const std::string& v) {
      const auto parts = split_list(v);
      if (parts.size() != 3) throw ConfigError("expected county,city,country dims");
      c.model.location_dims = {idx(parts[0]), idx(parts[1]), idx(parts[2])};
    };
    t["model.comment_dim"] = [idx](PipelineConfig& c, const std::string& v) { c.model.comment_dim = idx(v); };
    t["model.init_scale"] = [](PipelineConfig& c, const std::string& v) { c.model.init_scale = parse_double(v); };
    t["train.batch_size"] = [](PipelineConfig& c, const std::string& v) { c.train.batch_size = parse_count(v); };
    t["train.learning_rate"] = [](PipelineConfig& c, const std::string& v) { c.train.learning_rate = parse_double(v); };
    t["train.decay_factor"] = [](PipelineConfig& c, const std::string& v) { c.train.decay_factor = parse_double(v); };
    t["train.decay_start_epoch"] = [](PipelineConfig& c, const std::string& v) {
      c.train.decay_start_epoch = parse_count(v);
    };
    t["train.clip_threshold"] = [](PipelineConfig& c, const std::string& v) { c.train.clip_threshold = parse_double(v); };
    t["train.epochs"] = [](PipelineConfig& c, const std::string& v) { c.train.epochs = parse_count(v); };
    t["train.patience"] = [](PipelineConfig& c, const std::string& v) { c.train.patience = parse_count(v); };
    t["train.dropout_active"] = [](PipelineConfig& c, const std::string& v) { c.train.dropout_active = parse_bool(v); };
    t["train.social_mode"] = [](PipelineConfig& c, const std::string& v) { c.train.social_mode = parse_social_mode(v); };
    t["beam.size"] = [](PipelineConfig& c, const std::string& v) { c.beam.beam = parse_count(v); };
    t["beam.max_len"] = [](PipelineConfig& c, const std::string& v) { c.beam.max_len = parse_count(v); };
    t["beam.n_best"] = [](PipelineConfig& c, const std::string& v) { c.beam.n_best = parse_count(v); };
    t["beam.length_normalize"] = [](PipelineConfig& c, const std::string& v) { c.beam.length_normalize = parse_bool(v); };
    t["walk.p"] = [](PipelineConfig& c, const std::string& v) { c.walk.p = parse_double(v); };
    t["walk.q"] = [](PipelineConfig& c, const std::string& v) { c.walk.q = parse_double(v); };
    t["walk.length"] = [](PipelineConfig& c, const std::string& v) { c.walk.walk_length = parse_count(v); };
    t["walk.per_node"] = [](PipelineConfig& c, const std::string& v) { c.walk.walks_per_node = parse_count(v); };
    t["skipgram.dim"] = [idx](PipelineConfig& c, const std::string& v) { c.skipgram.dim = idx(v); };
    t["skipgram.window"] = [](PipelineConfig& c, const std::string& v) { c.skipgram.window = parse_count(v); };
    t["skipgram.negatives"] = [](PipelineConfig& c, const std::string& v) { c.skipgram.negatives = parse_count(v); };
    t["skipgram.epochs"] = [](PipelineConfig& c, const std::string& v) { c.skipgram.epochs = parse_count(v); };
    t["skipgram.learning_rate"] = [](PipelineConfig& c, const std::string& v) {
      c.skipgram.learning_rate = parse_double(v);
    };
    t["graph.signals"] = [](PipelineConfig& c, const std::string& v) {
      c.signals.clear();
      for (const auto& s : split_list(v)) c.signals.push_back(parse_signal(s));
    };
    return t;
  }();
  return table;
}

}  // namespace detail

inline std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  for (const auto& [k, _] : detail::config_setters()) keys.push_back(k);
  return keys;
}

// Sets one dotted key; errors name the key.
inline void apply_setting(PipelineConfig& c, const std::string& key, const std::string& value) {
  const auto& setters = detail::config_setters();
  auto it = setters.find(key);
  if (it == setters.end()) throw ConfigError("unknown config key '" + key + "'");
  try {
    it->second(c, value);
  } catch (const std::exception& e) {
    throw ConfigError("config key '" + key + "': " + e.what());
  }
}

// "key=value" as given on the command line.
inline void apply_override(PipelineConfig& c, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw ConfigError("override must look like key=value: '" + assignment + "'");
  apply_setting(c, std::string(trim(std::string_view(assignment).substr(0, eq))),
                std::string(trim(std::string_view(assignment).substr(eq + 1))));
}

// INI-style text: "[section]" headers prefix the keys that follow; '#'
// starts a comment; values may be double-quoted.
inline std::vector<std::pair<std::string, std::string>> parse_config_text(const std::string& text,
                                                                          const std::string& origin = "<config>") {
  std::vector<std::pair<std::string, std::string>> out;
  std::string section;
  std::size_t lineno = 0;
  std::size_t start = 0;
  while (start <= text.size()) {
    auto end = text.find('\n', start);
    if (end == std::string::npos) end = text.size();
    std::string line = text.substr(start, end - start);
    start = end + 1;
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    const auto t = std::string(trim(line));
    if (t.empty()) {
      if (end == text.size()) break;
      continue;
    }
    const auto where = origin + ":" + std::to_string(lineno);
    if (t.front() == '[') {
      if (t.back() != ']') throw ConfigError(where + ": malformed section header");
      section = std::string(trim(std::string_view(t).substr(1, t.size() - 2)));
    } else {
      const auto eq = t.find('=');
      if (eq == std::string::npos) throw ConfigError(where + ": expected key = value");
      auto key = std::string(trim(std::string_view(t).substr(0, eq)));
      auto value = std::string(trim(std::string_view(t).substr(eq + 1)));
      if (value.size() >= 2 && value.front() == '"' && value.back() == '"') value = value.substr(1, value.size() - 2);
      if (key.empty()) throw ConfigError(where + ": empty key");
      out.emplace_back(section.empty() ? key : section + "." + key, value);
    }
    if (end == text.size()) break;
  }
  return out;
}

inline PipelineConfig load_config(const std::string& path, const std::vector<std::string>& overrides = {}) {
  PipelineConfig c;
  if (!path.empty()) {
    for (const auto& [k, v] : parse_config_text(read_file(path), path)) apply_setting(c, k, v);
  }
  for (const auto& o : overrides) apply_override(c, o);
  return c;
}

}  // namespace soc2seq
