#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <string>
#include <vector>

#include <json.hpp>

#include "soc2seq/error.hpp"
#include "soc2seq/model.hpp"
#include "soc2seq/util.hpp"

namespace soc2seq {

// Checkpoint container:
//   "SOC2SEQ-CKPT\n"
//   uint64 little-endian header length
//   header: compact JSON (format version, model config, vocab hash,
//           persona provenance, table keys, tensor names and shapes)
//   tensor data: float64 little-endian, column-major, in header order
inline constexpr std::string_view kCheckpointMagic = "SOC2SEQ-CKPT\n";
inline constexpr int kCheckpointVersion = 1;

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace detail {

inline void write_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline std::uint64_t read_u64(const std::string& in, std::size_t pos) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
  return v;
}

inline nlohmann::ordered_json table_keys(const EmbeddingTable& t) {
  return nlohmann::ordered_json{{"level", t.level()}, {"dim", t.dim()}, {"keys", t.keys()}};
}

inline EmbeddingTable table_from_keys(const nlohmann::json& j) {
  EmbeddingTable t(j.at("dim").get<Eigen::Index>(), j.at("level").get<std::string>());
  const VectorXd zero = VectorXd::Zero(t.dim());
  for (const auto& k : j.at("keys")) t.add(k.get<std::string>(), zero);
  return t;
}

}  // namespace detail

inline std::string serialize_checkpoint(const Model& model) {
  nlohmann::ordered_json header;
  header["format_version"] = kCheckpointVersion;
  header["config"] = to_json(model.config);
  header["vocab_hash"] = model.vocab_hash;
  header["provenance"] = {{"location", model.params.location.county.empty() ? "none" : "joint"},
                          {"user", model.user_provenance}};
  header["user_tables_trainable"] = model.user_tables_trainable;
  header["social_tuned"] = model.social_tuned;
  header["tables"] = {{"county", detail::table_keys(model.params.location.county)},
                      {"city", detail::table_keys(model.params.location.city)},
                      {"country", detail::table_keys(model.params.location.country)},
                      {"comment", detail::table_keys(model.params.user.comment)},
                      {"like", detail::table_keys(model.params.user.like)}};
  nlohmann::ordered_json tensors = nlohmann::ordered_json::array();
  model.params.for_each([&](const std::string& name, const auto& t) {
    tensors.push_back({{"name", name}, {"rows", t.rows()}, {"cols", t.cols()}});
  });
  header["tensors"] = tensors;
  const std::string h = header.dump();
  std::string out(kCheckpointMagic);
  detail::write_u64(out, h.size());
  out += h;
  model.params.for_each([&](const std::string&, const auto& t) {
    const auto bytes = static_cast<std::size_t>(t.size()) * sizeof(double);
    const auto pos = out.size();
    out.resize(pos + bytes);
    if (bytes) std::memcpy(out.data() + pos, t.data(), bytes);
  });
  return out;
}

namespace detail {

inline Model deserialize_checkpoint_unchecked(const std::string& bytes) {
  if (bytes.size() < kCheckpointMagic.size() + 8 || bytes.compare(0, kCheckpointMagic.size(), kCheckpointMagic) != 0) {
    throw InputError("not a checkpoint file");
  }
  const std::size_t hlen = detail::read_u64(bytes, kCheckpointMagic.size());
  std::size_t pos = kCheckpointMagic.size() + 8;
  if (pos + hlen > bytes.size()) throw InputError("truncated checkpoint header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.substr(pos, hlen));
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("bad checkpoint header: ") + e.what());
  }
  pos += hlen;
  if (header.at("format_version").get<int>() != kCheckpointVersion) {
    throw InputError("unsupported checkpoint version " + header.at("format_version").dump());
  }
  Model m;
  m.config = model_config_from_json(header.at("config"));
  m.vocab_hash = header.at("vocab_hash").get<std::string>();
  m.user_provenance = header.at("provenance").at("user").get<std::string>();
  m.user_tables_trainable = header.at("user_tables_trainable").get<bool>();
  m.social_tuned = header.at("social_tuned").get<bool>();
  const auto& tables = header.at("tables");
  m.params.location = {detail::table_from_keys(tables.at("county")), detail::table_from_keys(tables.at("city")),
                       detail::table_from_keys(tables.at("country"))};
  m.params.user = {detail::table_from_keys(tables.at("comment")), detail::table_from_keys(tables.at("like"))};
  const auto L = static_cast<std::size_t>(m.config.layers);
  m.params.encoder.resize(L);
  m.params.decoder.resize(L);
  const auto& specs = header.at("tensors");
  std::size_t k = 0;
  m.params.for_each([&](const std::string& name, auto& t) {
    if (k >= specs.size()) throw InputError("checkpoint is missing tensor " + name);
    const auto& s = specs[k++];
    if (s.at("name").get<std::string>() != name) {
      throw InputError("checkpoint tensor order mismatch at " + name);
    }
    const auto rows = s.at("rows").get<Eigen::Index>();
    const auto cols = s.at("cols").get<Eigen::Index>();
    if constexpr (std::decay_t<decltype(t)>::ColsAtCompileTime == 1) {
      if (cols != 1) throw InputError("tensor " + name + " must be a vector");
      t.resize(rows);
    } else {
      t.resize(rows, cols);
    }
    const auto n = static_cast<std::size_t>(rows * cols) * sizeof(double);
    if (pos + n > bytes.size()) throw InputError("truncated checkpoint data at " + name);
    if (n) std::memcpy(t.data(), bytes.data() + pos, n);
    pos += n;
  });
  if (k != specs.size() || pos != bytes.size()) throw InputError("checkpoint has trailing data");
  m.config.validate();
  return m;
}

}  // namespace detail

inline Model deserialize_checkpoint(const std::string& bytes) {
  try {
    return detail::deserialize_checkpoint_unchecked(bytes);
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("bad checkpoint header: ") + e.what());
  } catch (const ConfigError& e) {
    throw InputError(std::string("bad checkpoint config: ") + e.what());
  }
}

inline void save_checkpoint(const Model& model, const std::string& path) {
  auto out = open_output(path);
  const auto bytes = serialize_checkpoint(model);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed: " + path);
}

inline Model load_checkpoint(const std::string& path) { return deserialize_checkpoint(read_file(path)); }

// Row label matching the comparison tables (perplexity / ROUGE reports).
inline std::string variant_label(const Model& m) {
  const auto& c = m.config;
  if (!c.uses_persona()) return c.attention ? "LSTM (attention)" : "LSTM (standard)";
  const bool both = c.persona_mode == PersonaMode::encoder_and_decoder;
  if (c.persona_kind == PersonaKind::location) {
    return both ? "Location-based model (decoder and encoder)" : "Location-based model (decoder)";
  }
  if (m.user_provenance.rfind("socialgraph", 0) == 0) {
    return m.social_tuned ? "Social user model (tuned)" : "Social user model (standard)";
  }
  return both ? "User-based model (decoder and encoder)" : "User-based model (decoder)";
}

}  // namespace soc2seq
