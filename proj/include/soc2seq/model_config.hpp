#pragma once

#include <string>

#include <Eigen/Dense>
#include <json.hpp>

#include "soc2seq/error.hpp"
#include "soc2seq/persona.hpp"

namespace soc2seq {

enum class PersonaMode { none, decoder_only, encoder_and_decoder };

inline const char* to_string(PersonaMode m) {
  switch (m) {
    case PersonaMode::none: return "none";
    case PersonaMode::decoder_only: return "decoder_only";
    case PersonaMode::encoder_and_decoder: return "encoder_and_decoder";
  }
  return "?";
}

inline PersonaMode parse_persona_mode(std::string_view s) {
  if (s == "none") return PersonaMode::none;
  if (s == "decoder_only" || s == "decoder") return PersonaMode::decoder_only;
  if (s == "encoder_and_decoder" || s == "encoder_decoder") return PersonaMode::encoder_and_decoder;
  throw ConfigError("unknown persona mode '" + std::string(s) + "'");
}

// Whose user persona feeds the encoder in encoder_and_decoder mode. The
// decoder always uses the replier.
enum class EncoderPersona { author, replier };

inline const char* to_string(EncoderPersona e) { return e == EncoderPersona::author ? "author" : "replier"; }

inline EncoderPersona parse_encoder_persona(std::string_view s) {
  if (s == "author") return EncoderPersona::author;
  if (s == "replier") return EncoderPersona::replier;
  throw ConfigError("unknown encoder persona source '" + std::string(s) + "'");
}

// Reference-scale values (4 layers x 1000 cells, 300-d persona, dropout
// 0.25) remain reachable through the config file; defaults are desk scale.
struct ModelConfig {
  Eigen::Index layers = 2;
  Eigen::Index hidden = 64;
  Eigen::Index word_dim = 32;
  Eigen::Index persona_dim = 300;
  Eigen::Index vocab_size = 0;
  double dropout = 0.25;
  PersonaMode persona_mode = PersonaMode::none;
  PersonaKind persona_kind = PersonaKind::location;
  EncoderPersona encoder_persona = EncoderPersona::author;
  bool attention = true;
  LocationDims location_dims{100, 100, 100};
  Eigen::Index comment_dim = 150;  // user persona = [comment, like]
  double init_scale = 0.1;

  bool uses_persona() const noexcept { return persona_mode != PersonaMode::none; }
  bool encoder_persona_input() const noexcept { return persona_mode == PersonaMode::encoder_and_decoder; }
  Eigen::Index like_dim() const noexcept { return persona_dim - comment_dim; }

  void validate() const {
    auto need = [](bool ok, const std::string& what) {
      if (!ok) throw ConfigError("model config: " + what);
    };
    need(layers >= 1, "layers must be >= 1");
    need(hidden >= 1, "hidden must be >= 1");
    need(word_dim >= 1, "word_dim must be >= 1");
    need(persona_dim >= 1, "persona_dim must be >= 1");
    need(vocab_size > kNumReserved, "vocab_size must exceed the 4 reserved ids");
    need(dropout >= 0.0 && dropout < 1.0, "dropout must be in [0,1)");
    need(init_scale >= 0.0, "init_scale must be >= 0");
    if (persona_kind == PersonaKind::location) {
      need(location_dims.county >= 1 && location_dims.city >= 1 && location_dims.country >= 1,
           "location level dims must be >= 1");
      need(location_dims.total() == persona_dim,
           "location_dims must sum to persona_dim (" + std::to_string(persona_dim) + ")");
    } else {
      need(comment_dim >= 1 && like_dim() >= 1, "comment_dim must be in [1, persona_dim)");
    }
  }
};

inline nlohmann::ordered_json to_json(const ModelConfig& c) {
  nlohmann::ordered_json j;
  j["layers"] = c.layers;
  j["hidden"] = c.hidden;
  j["word_dim"] = c.word_dim;
  j["persona_dim"] = c.persona_dim;
  j["vocab_size"] = c.vocab_size;
  j["dropout"] = c.dropout;
  j["persona_mode"] = to_string(c.persona_mode);
  j["persona_kind"] = to_string(c.persona_kind);
  j["encoder_persona"] = to_string(c.encoder_persona);
  j["attention"] = c.attention;
  j["location_dims"] = {c.location_dims.county, c.location_dims.city, c.location_dims.country};
  j["comment_dim"] = c.comment_dim;
  j["init_scale"] = c.init_scale;
  return j;
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.layers = j.at("layers").get<Eigen::Index>();
  c.hidden = j.at("hidden").get<Eigen::Index>();
  c.word_dim = j.at("word_dim").get<Eigen::Index>();
  c.persona_dim = j.at("persona_dim").get<Eigen::Index>();
  c.vocab_size = j.at("vocab_size").get<Eigen::Index>();
  c.dropout = j.at("dropout").get<double>();
  c.persona_mode = parse_persona_mode(j.at("persona_mode").get<std::string>());
  c.persona_kind = parse_persona_kind(j.at("persona_kind").get<std::string>());
  c.encoder_persona = parse_encoder_persona(j.at("encoder_persona").get<std::string>());
  c.attention = j.at("attention").get<bool>();
  const auto& d = j.at("location_dims");
  c.location_dims = {d.at(0).get<Eigen::Index>(), d.at(1).get<Eigen::Index>(), d.at(2).get<Eigen::Index>()};
  c.comment_dim = j.at("comment_dim").get<Eigen::Index>();
  c.init_scale = j.at("init_scale").get<double>();
  return c;
}

}  // namespace soc2seq
