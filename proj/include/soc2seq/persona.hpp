#pragma once

#include <set>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "soc2seq/corpus.hpp"
#include "soc2seq/embedding_table.hpp"
#include "soc2seq/error.hpp"
#include "soc2seq/util.hpp"

namespace soc2seq {

enum class PersonaKind { location, user };

inline const char* to_string(PersonaKind k) { return k == PersonaKind::location ? "location" : "user"; }

inline PersonaKind parse_persona_kind(std::string_view s) {
  if (s == "location") return PersonaKind::location;
  if (s == "user") return PersonaKind::user;
  throw ConfigError("unknown persona kind '" + std::string(s) + "'");
}

struct PersonaVector {
  Eigen::VectorXd values;
  PersonaKind kind = PersonaKind::location;
  std::vector<std::string> sources;
};

// Reserved row present in every level/user table the model owns.
inline const std::string kUnknownKey = "<unk>";

struct LocationDims {
  Eigen::Index county = 100;
  Eigen::Index city = 100;
  Eigen::Index country = 100;

  Eigen::Index total() const noexcept { return county + city + country; }
};

// One table per level; row 0 of each is the level's UNKNOWN entry.
struct LocationEmbeddingTables {
  EmbeddingTable county;
  EmbeddingTable city;
  EmbeddingTable country;

  Eigen::Index dim() const noexcept { return county.dim() + city.dim() + country.dim(); }

  friend bool operator==(const LocationEmbeddingTables&, const LocationEmbeddingTables&) = default;
};

inline void init_uniform(Eigen::Ref<Eigen::MatrixXd> m, Rng& rng, double scale) {
  for (Eigen::Index c = 0; c < m.cols(); ++c) {
    for (Eigen::Index r = 0; r < m.rows(); ++r) m(r, c) = uniform(rng, -scale, scale);
  }
}

// Tables over every identifier seen in `keys`, rows drawn from
// U[-scale, scale]. Pass scale 0 for all-zero tables.
inline LocationEmbeddingTables make_location_tables(const std::vector<LocationKey>& keys,
                                                    const LocationDims& dims, Rng& rng,
                                                    double scale = 0.1) {
  LocationEmbeddingTables t{EmbeddingTable(dims.county, "county"), EmbeddingTable(dims.city, "city"),
                            EmbeddingTable(dims.country, "country")};
  for (auto* table : {&t.county, &t.city, &t.country}) {
    table->add(kUnknownKey, Eigen::VectorXd::Zero(table->dim()));
  }
  auto add = [](EmbeddingTable& table, const std::string& id) {
    if (!id.empty() && !table.contains(id)) table.add(id, Eigen::VectorXd::Zero(table.dim()));
  };
  for (const auto& k : keys) {
    add(t.county, k.county);
    add(t.city, k.city);
    add(t.country, k.country);
  }
  for (auto* table : {&t.county, &t.city, &t.country}) init_uniform(table->vectors(), rng, scale);
  return t;
}

// Row index of `id` in a model-owned table, falling back to the UNKNOWN row.
inline std::size_t row_or_unknown(const EmbeddingTable& table, const std::string& id) {
  if (auto r = table.find(id)) return *r;
  if (auto r = table.find(kUnknownKey)) return *r;
  throw InputError("table '" + table.level() + "' has no entry for '" + id + "' and no unknown row");
}

// [county, city, country] in that fixed order.
inline PersonaVector location_embedding(const LocationKey& key, const LocationEmbeddingTables& tables) {
  PersonaVector p;
  p.kind = PersonaKind::location;
  p.values.resize(tables.dim());
  Eigen::Index offset = 0;
  const std::pair<const EmbeddingTable*, const std::string*> levels[] = {
      {&tables.county, &key.county}, {&tables.city, &key.city}, {&tables.country, &key.country}};
  for (const auto& [table, id] : levels) {
    const auto row = row_or_unknown(*table, *id);
    p.values.segment(offset, table->dim()) = table->vectors().col(static_cast<Eigen::Index>(row));
    offset += table->dim();
    p.sources.push_back(table->keys()[row]);
  }
  return p;
}

// [comment, like]. A user missing from one table gets that table's mean
// vector; missing from both is a cold start and needs `allow_cold_start`.
inline PersonaVector user_embedding(const std::string& user, const EmbeddingTable& comment,
                                    const EmbeddingTable& like, bool allow_cold_start = false) {
  const bool in_comment = comment.contains(user);
  const bool in_like = like.contains(user);
  if (!in_comment && !in_like && !allow_cold_start) {
    throw ColdStartError("user '" + user + "' has no social embedding");
  }
  PersonaVector p;
  p.kind = PersonaKind::user;
  p.sources = {user};
  p.values.resize(comment.dim() + like.dim());
  p.values.head(comment.dim()) = in_comment ? comment.at(user) : comment.mean();
  p.values.tail(like.dim()) = in_like ? like.at(user) : like.mean();
  return p;
}

// Model-owned user tables: both tables cover the same key set (the union of
// the social tables plus `extra_users`), missing entries filled with the
// table mean, plus an UNKNOWN row equal to the mean.
struct UserEmbeddingTables {
  EmbeddingTable comment;
  EmbeddingTable like;

  Eigen::Index dim() const noexcept { return comment.dim() + like.dim(); }

  friend bool operator==(const UserEmbeddingTables&, const UserEmbeddingTables&) = default;
};

inline UserEmbeddingTables make_user_tables_from_social(const EmbeddingTable& comment,
                                                        const EmbeddingTable& like,
                                                        const std::vector<std::string>& extra_users = {}) {
  std::vector<std::string> keys{kUnknownKey};
  std::set<std::string> seen{kUnknownKey};
  auto take = [&](const std::string& k) {
    if (seen.insert(k).second) keys.push_back(k);
  };
  for (const auto& k : comment.keys()) take(k);
  for (const auto& k : like.keys()) take(k);
  for (const auto& k : extra_users) take(k);
  UserEmbeddingTables t{EmbeddingTable(comment.dim(), "comment"), EmbeddingTable(like.dim(), "like")};
  const Eigen::VectorXd cm = comment.mean();
  const Eigen::VectorXd lm = like.mean();
  for (const auto& k : keys) {
    t.comment.add(k, comment.contains(k) ? comment.at(k) : cm);
    t.like.add(k, like.contains(k) ? like.at(k) : lm);
  }
  return t;
}

// Randomly initialized user tables for jointly learned user personas.
inline UserEmbeddingTables make_user_tables_random(const std::vector<std::string>& users,
                                                   Eigen::Index comment_dim, Eigen::Index like_dim,
                                                   Rng& rng, double scale = 0.1) {
  UserEmbeddingTables t{EmbeddingTable(comment_dim, "comment"), EmbeddingTable(like_dim, "like")};
  std::set<std::string> seen{kUnknownKey};
  t.comment.add(kUnknownKey, Eigen::VectorXd::Zero(comment_dim));
  t.like.add(kUnknownKey, Eigen::VectorXd::Zero(like_dim));
  for (const auto& u : users) {
    if (u.empty() || !seen.insert(u).second) continue;
    t.comment.add(u, Eigen::VectorXd::Zero(comment_dim));
    t.like.add(u, Eigen::VectorXd::Zero(like_dim));
  }
  init_uniform(t.comment.vectors(), rng, scale);
  init_uniform(t.like.vectors(), rng, scale);
  return t;
}

inline void save_location_tables(const LocationEmbeddingTables& t, const std::string& prefix) {
  t.county.save(prefix + ".county.emb");
  t.city.save(prefix + ".city.emb");
  t.country.save(prefix + ".country.emb");
}

inline LocationEmbeddingTables load_location_tables(const std::string& prefix) {
  LocationEmbeddingTables t{EmbeddingTable::load(prefix + ".county.emb"),
                            EmbeddingTable::load(prefix + ".city.emb"),
                            EmbeddingTable::load(prefix + ".country.emb")};
  if (t.county.level() != "county" || t.city.level() != "city" || t.country.level() != "country") {
    throw InputError("location table level tags do not match file names: " + prefix);
  }
  return t;
}

}  // namespace soc2seq
