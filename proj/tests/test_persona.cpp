#include <gtest/gtest.h>

#include "support/fixtures.hpp"

using namespace soc2seq;
using namespace soc2seq::testing;

namespace {

LocationEmbeddingTables block_tables(Eigen::Index d) {
  LocationEmbeddingTables t{EmbeddingTable(d, "county"), EmbeddingTable(d, "city"), EmbeddingTable(d, "country")};
  for (auto* table : {&t.county, &t.city, &t.country}) table->add(kUnknownKey, Eigen::VectorXd::Zero(d));
  t.county.add("queens", Eigen::VectorXd::Constant(d, 1.0));
  t.county.add("kings", Eigen::VectorXd::Constant(d, 4.0));
  t.city.add("nyc", Eigen::VectorXd::Constant(d, 2.0));
  t.country.add("us", Eigen::VectorXd::Constant(d, 3.0));
  return t;
}

}  // namespace

TEST(LocationEmbedding, ZeroTablesGiveZeroVectorOfSummedDims) {
  Rng rng(1);
  const auto t = make_location_tables({{"queens", "nyc", "us"}}, LocationDims{100, 100, 100}, rng, 0.0);
  const auto p = location_embedding({"queens", "nyc", "us"}, t);
  EXPECT_EQ(p.values.size(), 300);
  EXPECT_TRUE(p.values.isZero(0.0));
  EXPECT_EQ(p.kind, PersonaKind::location);
}

TEST(LocationEmbedding, BlocksAppearInCountyCityCountryOrder) {
  const auto t = block_tables(3);
  const auto p = location_embedding({"queens", "nyc", "us"}, t);
  ASSERT_EQ(p.values.size(), 9);
  EXPECT_TRUE(p.values.segment(0, 3).isConstant(1.0));
  EXPECT_TRUE(p.values.segment(3, 3).isConstant(2.0));
  EXPECT_TRUE(p.values.segment(6, 3).isConstant(3.0));
  EXPECT_EQ(p.sources, (std::vector<std::string>{"queens", "nyc", "us"}));
}

TEST(LocationEmbedding, SharedCityAndCountryAgreeOnTail) {
  Rng rng(3);
  const auto t = make_location_tables({{"queens", "nyc", "us"}, {"kings", "nyc", "us"}}, LocationDims{100, 100, 100}, rng);
  const auto a = location_embedding({"queens", "nyc", "us"}, t);
  const auto b = location_embedding({"kings", "nyc", "us"}, t);
  EXPECT_EQ(a.values.tail(200), b.values.tail(200));
  EXPECT_NE(a.values.head(100), b.values.head(100));
}

TEST(LocationEmbedding, UnknownLevelUsesThatLevelsUnknownRow) {
  auto t = block_tables(2);
  t.city.vectors().col(0).setConstant(-7.0);
  const auto p = location_embedding({"queens", "springfield", "us"}, t);
  EXPECT_TRUE(p.values.segment(0, 2).isConstant(1.0));
  EXPECT_TRUE(p.values.segment(2, 2).isConstant(-7.0));
  EXPECT_TRUE(p.values.segment(4, 2).isConstant(3.0));
  EXPECT_EQ(p.sources[1], kUnknownKey);
}

TEST(LocationEmbedding, ChangingOneRowChangesOnlyItsBlock) {
  Rng rng(5);
  const auto t = make_location_tables({{"queens", "nyc", "us"}}, LocationDims{2, 3, 4}, rng);
  const LocationKey key{"queens", "nyc", "us"};
  const auto before = location_embedding(key, t);
  const std::pair<EmbeddingTable LocationEmbeddingTables::*, Eigen::Index> levels[] = {
      {&LocationEmbeddingTables::county, 0}, {&LocationEmbeddingTables::city, 2}, {&LocationEmbeddingTables::country, 5}};
  for (const auto& [member, offset] : levels) {
    auto changed = t;
    auto& table = changed.*member;
    table.vectors().col(1).array() += 1.0;  // row 0 is UNKNOWN, row 1 the key's level id
    const auto after = location_embedding(key, changed);
    for (Eigen::Index i = 0; i < before.values.size(); ++i) {
      const bool inside = i >= offset && i < offset + table.dim();
      if (inside) {
        EXPECT_NE(after.values[i], before.values[i]) << i;
      } else {
        EXPECT_EQ(after.values[i], before.values[i]) << i;
      }
    }
  }
}

TEST(LocationEmbedding, InitDrawsFromUniformRange) {
  Rng rng(9);
  const auto t = make_location_tables({{"a", "b", "c"}, {"d", "e", "f"}}, LocationDims{10, 10, 10}, rng, 0.1);
  for (const auto* table : {&t.county, &t.city, &t.country}) {
    EXPECT_EQ(table->size(), 3u);
    EXPECT_LE(table->vectors().cwiseAbs().maxCoeff(), 0.1);
    EXPECT_GT(table->vectors().cwiseAbs().maxCoeff(), 0.0);
  }
}

TEST(LocationEmbedding, TablesRoundTripWithLevelTags) {
  TempDir dir;
  Rng rng(2);
  const auto t = make_location_tables({{"queens", "nyc", "us"}}, LocationDims{2, 2, 1}, rng);
  save_location_tables(t, dir.file("loc"));
  EXPECT_EQ(load_location_tables(dir.file("loc")), t);
  std::filesystem::copy_file(dir.file("loc.city.emb"), dir.file("loc.county.emb"),
                             std::filesystem::copy_options::overwrite_existing);
  EXPECT_THROW(load_location_tables(dir.file("loc")), InputError);
}

TEST(UserEmbedding, ConcatenatesCommentThenLike) {
  EmbeddingTable comment(150), like(150);
  comment.add("alice", Eigen::VectorXd::Constant(150, 1.0));
  like.add("alice", Eigen::VectorXd::Constant(150, 2.0));
  const auto p = user_embedding("alice", comment, like);
  ASSERT_EQ(p.values.size(), 300);
  EXPECT_TRUE(p.values.head(150).isConstant(1.0));
  EXPECT_TRUE(p.values.tail(150).isConstant(2.0));
  EXPECT_EQ(p.kind, PersonaKind::user);
}

TEST(UserEmbedding, MissingFromLikeUsesColumnMean) {
  EmbeddingTable comment(2), like(3);
  comment.add("alice", Eigen::Vector2d(1, 2));
  like.add("bob", Eigen::Vector3d(1, 0, -3));
  like.add("cyd", Eigen::Vector3d(2, 4, 6));
  like.add("dee", Eigen::Vector3d(3, 2, 0));
  const auto p = user_embedding("alice", comment, like);
  // per-coordinate mean computed by hand
  EXPECT_DOUBLE_EQ(p.values[2], 2.0);
  EXPECT_DOUBLE_EQ(p.values[3], 2.0);
  EXPECT_DOUBLE_EQ(p.values[4], 1.0);
  EXPECT_EQ(p.values.head(2), Eigen::Vector2d(1, 2));
}

TEST(UserEmbedding, PureAcrossCalls) {
  EmbeddingTable comment(4), like(4);
  for (const char* u : {"a", "b"}) {
    comment.add(u, Eigen::VectorXd::Random(4));
    like.add(u, Eigen::VectorXd::Random(4));
  }
  EXPECT_EQ(user_embedding("a", comment, like).values, user_embedding("a", comment, like).values);
}

TEST(UserEmbedding, ColdStartNeedsFallback) {
  EmbeddingTable comment(2), like(2);
  comment.add("a", Eigen::Vector2d(1, 3));
  like.add("a", Eigen::Vector2d(5, 7));
  comment.add("b", Eigen::Vector2d(3, 5));
  EXPECT_THROW(user_embedding("zed", comment, like), ColdStartError);
  const auto p = user_embedding("zed", comment, like, true);
  EXPECT_EQ(p.values, Eigen::Vector4d(2, 4, 5, 7));
}

TEST(UserTables, SocialTablesCoverUnionPlusUnknown) {
  EmbeddingTable comment(2, "comment"), like(1, "like");
  comment.add("a", Eigen::Vector2d(1, 1));
  comment.add("b", Eigen::Vector2d(3, 3));
  like.add("b", Eigen::VectorXd::Constant(1, 4.0));
  like.add("c", Eigen::VectorXd::Constant(1, 6.0));
  const auto t = make_user_tables_from_social(comment, like, {"d", "a"});
  EXPECT_EQ(t.comment.keys(), (std::vector<std::string>{kUnknownKey, "a", "b", "c", "d"}));
  EXPECT_EQ(t.like.keys(), t.comment.keys());
  EXPECT_EQ(t.comment.at("c"), Eigen::Vector2d(2, 2));
  EXPECT_EQ(t.like.at("a")[0], 5.0);
  EXPECT_EQ(t.like.at(kUnknownKey)[0], 5.0);
  EXPECT_EQ(t.dim(), 3);
}

TEST(UserTables, RandomTablesSkipDuplicatesAndEmpty) {
  Rng rng(6);
  const auto t = make_user_tables_random({"a", "", "b", "a"}, 2, 3, rng);
  EXPECT_EQ(t.comment.keys(), (std::vector<std::string>{kUnknownKey, "a", "b"}));
  EXPECT_EQ(t.like.dim(), 3);
  EXPECT_LE(t.comment.vectors().cwiseAbs().maxCoeff(), 0.1);
}

TEST(PersonaContext, ModelGathersRowsFromMetadata) {
  Rng rng(8);
  const auto pairs = random_pairs(rng, 9, 6);
  const auto m = tiny_model(tiny_config(9, PersonaMode::encoder_and_decoder, PersonaKind::location), pairs, 3);
  const auto ctx = m.persona_for(pairs[0].meta);
  EXPECT_EQ(ctx.decoder, location_embedding(pairs[0].meta.location, m.params.location).values);
  EXPECT_EQ(ctx.encoder, ctx.decoder);
  const auto u = tiny_model(tiny_config(9, PersonaMode::encoder_and_decoder, PersonaKind::user), pairs, 3);
  const auto uc = u.persona_for(pairs[0].meta);
  EXPECT_EQ(uc.decoder, user_embedding(pairs[0].meta.replier_user, u.params.user.comment, u.params.user.like).values);
  EXPECT_EQ(uc.encoder, user_embedding(pairs[0].meta.author_user, u.params.user.comment, u.params.user.like).values);
  EXPECT_EQ(tiny_model(tiny_config(9), pairs, 3).persona_for(pairs[0].meta).decoder.size(), 0);
}
