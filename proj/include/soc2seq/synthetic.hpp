#pragma once

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "soc2seq/corpus.hpp"
#include "soc2seq/error.hpp"
#include "soc2seq/socialgraph.hpp"
#include "soc2seq/util.hpp"

namespace soc2seq {

// Synthetic persona-marked corpora. Every reply is drawn from the reply
// distribution of a known persona; the persona's home location and its users
// are recorded on the pair so both location- and user-conditioned models can
// recover the signal.

struct WeightedPhrase {
  std::string phrase;
  double weight = 1.0;
};

struct PersonaProfile {
  std::string name;
  std::size_t location = 0;  // index into SyntheticSpec::locations
  std::size_t users = 1;     // users "<name>_u<i>" share this persona
  std::vector<std::vector<WeightedPhrase>> replies;  // one distribution per prompt
};

struct SyntheticSpec {
  std::vector<std::string> prompts;
  std::vector<LocationKey> locations;
  std::vector<PersonaProfile> personas;
  std::size_t pairs = 100;
  std::size_t authors = 10;
  double min_total_variation = 0.0;
};

struct SyntheticLabel {
  std::size_t persona = 0;
  std::size_t location = 0;
  std::size_t prompt = 0;
  std::size_t phrase = 0;
};

struct SyntheticCorpus {
  std::vector<RawPair> pairs;
  std::vector<SyntheticLabel> labels;
};

inline std::string persona_user(const PersonaProfile& p, std::size_t i) {
  return p.name + "_u" + std::to_string(i);
}

inline std::map<std::string, double> normalized(const std::vector<WeightedPhrase>& dist) {
  double total = 0.0;
  for (const auto& w : dist) total += w.weight;
  std::map<std::string, double> out;
  for (const auto& w : dist) out[w.phrase] += w.weight / total;
  return out;
}

inline double total_variation(const std::vector<WeightedPhrase>& a,
                              const std::vector<WeightedPhrase>& b) {
  auto pa = normalized(a);
  auto pb = normalized(b);
  double tv = 0.0;
  for (const auto& [k, v] : pa) tv += std::abs(v - (pb.count(k) ? pb[k] : 0.0));
  for (const auto& [k, v] : pb) {
    if (!pa.count(k)) tv += v;
  }
  return 0.5 * tv;
}

// Mean over prompts of the total-variation distance between two personas.
inline double persona_distance(const PersonaProfile& a, const PersonaProfile& b) {
  double sum = 0.0;
  for (std::size_t j = 0; j < a.replies.size(); ++j) sum += total_variation(a.replies[j], b.replies[j]);
  return a.replies.empty() ? 0.0 : sum / static_cast<double>(a.replies.size());
}

inline void validate(const SyntheticSpec& spec) {
  if (spec.personas.empty()) throw ConfigError("synthetic spec needs at least one persona");
  if (spec.prompts.empty()) throw ConfigError("synthetic spec needs at least one prompt");
  if (spec.locations.empty()) throw ConfigError("synthetic spec needs at least one location");
  if (spec.authors == 0) throw ConfigError("synthetic spec needs at least one author");
  for (const auto& p : spec.personas) {
    if (p.users == 0) throw ConfigError("persona " + p.name + " has no users");
    if (p.location >= spec.locations.size()) throw ConfigError("persona " + p.name + ": bad location");
    if (p.replies.size() != spec.prompts.size()) {
      throw ConfigError("persona " + p.name + ": one reply distribution per prompt required");
    }
    for (const auto& dist : p.replies) {
      if (dist.empty()) throw ConfigError("persona " + p.name + ": empty reply distribution");
      for (const auto& w : dist) {
        if (!(w.weight > 0.0)) throw ConfigError("persona " + p.name + ": weights must be positive");
      }
    }
  }
  for (std::size_t a = 0; a < spec.personas.size(); ++a) {
    for (std::size_t b = a + 1; b < spec.personas.size(); ++b) {
      const double d = persona_distance(spec.personas[a], spec.personas[b]);
      if (d < spec.min_total_variation) {
        throw ConfigError("personas " + spec.personas[a].name + " and " + spec.personas[b].name +
                          " differ by TV " + format_double(d) + " < floor " +
                          format_double(spec.min_total_variation));
      }
    }
  }
}

// Inverse CDF at u in [0, 1).
inline std::size_t pick_weighted(const std::vector<WeightedPhrase>& dist, double u01) {
  double total = 0.0;
  for (const auto& w : dist) total += w.weight;
  double u = u01 * total;
  for (std::size_t i = 0; i < dist.size(); ++i) {
    u -= dist[i].weight;
    if (u < 0.0) return i;
  }
  return dist.size() - 1;
}

// Personas are assigned round-robin; prompt, replier and author are sampled.
// Phrases come from a randomly offset golden-ratio sequence per
// (persona, prompt) cell, so each cell's empirical mixture tracks its weights
// to within O(log n / n) instead of the O(1/sqrt n) of independent draws.
inline SyntheticCorpus generate_synthetic_corpus(const SyntheticSpec& spec, std::uint64_t seed) {
  validate(spec);
  Rng rng(derive_seed(seed, 0x5e17u));
  constexpr double kGolden = 0.6180339887498949;
  std::map<std::pair<std::size_t, std::size_t>, std::pair<double, std::size_t>> cells;
  SyntheticCorpus corpus;
  corpus.pairs.reserve(spec.pairs);
  corpus.labels.reserve(spec.pairs);
  for (std::size_t i = 0; i < spec.pairs; ++i) {
    SyntheticLabel label;
    label.persona = i % spec.personas.size();
    const auto& persona = spec.personas[label.persona];
    label.location = persona.location;
    label.prompt = uniform_index(rng, spec.prompts.size());
    const auto user = uniform_index(rng, persona.users);
    const auto author = uniform_index(rng, spec.authors);
    auto [it, fresh] = cells.try_emplace({label.persona, label.prompt}, 0.0, 0);
    if (fresh) it->second.first = uniform01(rng);
    const double u = it->second.first + kGolden * static_cast<double>(it->second.second++);
    label.phrase = pick_weighted(persona.replies[label.prompt], u - std::floor(u));
    RawPair pair;
    pair.post = spec.prompts[label.prompt];
    pair.reply = persona.replies[label.prompt][label.phrase].phrase;
    pair.meta.location = spec.locations[label.location];
    pair.meta.author_user = "author_" + std::to_string(author);
    pair.meta.replier_user = persona_user(persona, user);
    corpus.pairs.push_back(std::move(pair));
    corpus.labels.push_back(label);
  }
  return corpus;
}

struct SocialEventConfig {
  std::size_t events_per_user = 20;
  double intra_persona_probability = 0.9;
};

// Users mostly interact with users of their own persona, so graph
// embeddings recover persona clusters.
inline std::vector<InteractionEvent> generate_social_events(const SyntheticSpec& spec,
                                                            const SocialEventConfig& cfg,
                                                            std::uint64_t seed) {
  validate(spec);
  static constexpr const char* kSignals[] = {"comment", "like", "comment", "like",
                                             "view", "profile_view", "chat_request"};
  Rng rng(derive_seed(seed, 0xe7e7u));
  std::vector<InteractionEvent> events;
  const std::size_t k = spec.personas.size();
  for (std::size_t p = 0; p < k; ++p) {
    const auto& persona = spec.personas[p];
    for (std::size_t u = 0; u < persona.users; ++u) {
      for (std::size_t e = 0; e < cfg.events_per_user; ++e) {
        std::size_t q = p;
        if (k > 1 && uniform01(rng) >= cfg.intra_persona_probability) {
          q = (p + 1 + uniform_index(rng, k - 1)) % k;
        }
        const auto& other = spec.personas[q];
        const auto v = uniform_index(rng, other.users);
        if (q == p && v == u) continue;
        const char* signal = kSignals[uniform_index(rng, std::size(kSignals))];
        events.push_back({persona_user(persona, u), persona_user(other, v), signal,
                          static_cast<long long>(1 + uniform_index(rng, 3))});
      }
    }
  }
  return events;
}

struct PersonaSpecOptions {
  std::size_t personas = 4;
  std::size_t prompts = 4;
  std::size_t users_per_persona = 5;
  std::size_t pairs = 200;
  std::size_t authors = 10;
  // Probability mass on the persona's own phrase; the rest is spread over the
  // other personas' phrases for the same prompt. 1.0 is fully deterministic.
  double own_phrase_mass = 1.0;
};

// A ready-made spec where persona k answers prompt j with its own phrase.
inline SyntheticSpec make_persona_spec(const PersonaSpecOptions& o) {
  static constexpr const char* kPromptWords[] = {"what", "movie", "should", "we", "watch",
                                                 "tonight", "where", "is", "the", "best",
                                                 "food", "around", "here", "any", "plans",
                                                 "for", "weekend", "who", "likes", "music"};
  static constexpr const char* kReplyWords[] = {"netflix", "pizza", "tacos", "daredevil",
                                                "thrones", "jazz", "rock", "hiking",
                                                "library", "gym", "sushi", "beach",
                                                "coffee", "party", "sleep", "soccer"};
  SyntheticSpec spec;
  spec.pairs = o.pairs;
  spec.authors = o.authors;
  for (std::size_t j = 0; j < o.prompts; ++j) {
    std::string p = "prompt" + std::to_string(j);
    for (std::size_t w = 0; w < 5; ++w) {
      p += " ";
      p += kPromptWords[(j * 3 + w) % std::size(kPromptWords)];
    }
    spec.prompts.push_back(p + " ?");
  }
  auto phrase = [&](std::size_t k, std::size_t j) {
    return std::string(kReplyWords[(k * 3 + j) % std::size(kReplyWords)]) + " " +
           kReplyWords[(k * 5 + j * 7 + 1) % std::size(kReplyWords)] + " p" + std::to_string(k) +
           " !";
  };
  for (std::size_t k = 0; k < o.personas; ++k) {
    spec.locations.push_back({"county" + std::to_string(k), "city" + std::to_string(k / 2),
                              "country" + std::to_string(k / 4)});
    PersonaProfile persona;
    persona.name = "persona" + std::to_string(k);
    persona.location = k;
    persona.users = o.users_per_persona;
    for (std::size_t j = 0; j < o.prompts; ++j) {
      std::vector<WeightedPhrase> dist{{phrase(k, j), o.own_phrase_mass}};
      if (o.own_phrase_mass < 1.0 && o.personas > 1) {
        const double rest = (1.0 - o.own_phrase_mass) / static_cast<double>(o.personas - 1);
        for (std::size_t m = 0; m < o.personas; ++m) {
          if (m != k) dist.push_back({phrase(m, j), rest});
        }
      }
      persona.replies.push_back(std::move(dist));
    }
    spec.personas.push_back(std::move(persona));
  }
  return spec;
}

}  // namespace soc2seq
