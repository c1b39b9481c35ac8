#include <gtest/gtest.h>

#include "support/fixtures.hpp"

using namespace pws;
using pws::testing::TempDir;

namespace {

std::vector<int> labels_with_counts(std::size_t a, std::size_t b, std::size_t c) {
  std::vector<int> y;
  y.insert(y.end(), a, 0);
  y.insert(y.end(), b, 1);
  y.insert(y.end(), c, 2);
  return y;
}

std::array<std::size_t, 3> val_counts(const DatasetManifest& m, const SplitAssignment& s) {
  std::array<std::size_t, 3> n{};
  const std::set<std::string> val(s.val_ids.begin(), s.val_ids.end());
  for (const auto& r : m.records) {
    if (val.count(r.meme_id)) ++n[static_cast<int>(*r.gold_label)];
  }
  return n;
}

}  // namespace

TEST(Labels, ParseTolerantSpellings) {
  EXPECT_EQ(parse_label("Homophobic"), Label::Homophobic);
  EXPECT_EQ(parse_label("transphobic"), Label::Transphobic);
  EXPECT_EQ(parse_label("Non-Anti-LGBT"), Label::NonAntiLGBT);
  EXPECT_EQ(parse_label("non_anti_lgbt"), Label::NonAntiLGBT);
  EXPECT_FALSE(parse_label("hateful").has_value());
  EXPECT_EQ(label_name(kNoLabel), "Unparseable");
}

TEST(Manifest, LoadsFiltersAndResolvesImages) {
  TempDir dir;
  pws::testing::write_corpus(dir.path(), 6, "en", "en.jsonl");
  pws::testing::write_corpus(dir.path(), 4, "hi", "hi.jsonl", true, "h");
  write_file(dir / "mixed.jsonl", read_file(dir / "en.jsonl") + read_file(dir / "hi.jsonl"));
  const auto all = load_manifest(dir / "mixed.jsonl", SplitKind::Train, LanguageScope::All);
  const auto hi = load_manifest(dir / "mixed.jsonl", SplitKind::Train, LanguageScope::Hi);
  EXPECT_EQ(all.size(), 10u);
  EXPECT_EQ(hi.size(), 4u);
  EXPECT_EQ(hi.records[0].meme_id, "h000");
  EXPECT_TRUE(std::filesystem::exists(hi.records[0].image_ref));
  EXPECT_EQ(all.counts().per_label[0], 4u);
}

TEST(Manifest, ErrorsAreTyped) {
  TempDir dir;
  pws::testing::write_corpus(dir.path(), 3, "en", "unlabeled.jsonl", false);
  EXPECT_NO_THROW(load_manifest(dir / "unlabeled.jsonl", SplitKind::Test, LanguageScope::All));
  try {
    load_manifest(dir / "unlabeled.jsonl", SplitKind::Train, LanguageScope::All);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::MissingLabel);
  }
  write_file(dir / "lang.jsonl", R"({"meme_id":"x","image_path":"x.png","language":"fr","label":"Homophobic"})"
                                 "\n");
  try {
    load_manifest(dir / "lang.jsonl", SplitKind::Train, LanguageScope::All);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::UnknownLanguage);
  }
}

TEST(StratifiedSplit, FiftyThirtyTwentyGivesTenSixFour) {
  const auto m = pws::testing::labeled_manifest(labels_with_counts(50, 30, 20));
  const auto s = stratified_split(m, 0.2, 42);
  EXPECT_EQ(val_counts(m, s), (std::array<std::size_t, 3>{10, 6, 4}));
  EXPECT_EQ(s.val_ids.size(), 20u);
  EXPECT_EQ(s.train_ids.size(), 80u);
}

TEST(StratifiedSplit, DeterministicPerSeedAndDisjoint) {
  const auto m = pws::testing::labeled_manifest(labels_with_counts(40, 25, 17));
  EXPECT_EQ(stratified_split(m, 0.2, 42), stratified_split(m, 0.2, 42));
  EXPECT_NE(stratified_split(m, 0.2, 42).val_ids, stratified_split(m, 0.2, 7).val_ids);
  const auto s = stratified_split(m, 0.2, 42);
  std::set<std::string> seen(s.train_ids.begin(), s.train_ids.end());
  for (const auto& id : s.val_ids) EXPECT_TRUE(seen.insert(id).second);
  EXPECT_EQ(seen.size(), m.size());
}

TEST(StratifiedSplit, ProportionsWithinOnePerClass) {
  Rng rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t a = 2 + rng.below(60), b = 2 + rng.below(60), c = 2 + rng.below(60);
    const double f = 0.05 + 0.5 * rng.uniform();
    const auto m = pws::testing::labeled_manifest(labels_with_counts(a, b, c));
    const auto n = val_counts(m, stratified_split(m, f, trial));
    const std::size_t sizes[] = {a, b, c};
    for (int k = 0; k < 3; ++k) {
      EXPECT_LE(std::abs(static_cast<double>(n[k]) - f * static_cast<double>(sizes[k])), 1.0 + 1e-9);
      EXPECT_LT(n[k], sizes[k]);
    }
  }
}

TEST(StratifiedSplit, SingletonClassIsTooSmall) {
  const auto m = pws::testing::labeled_manifest(labels_with_counts(10, 1, 10));
  try {
    stratified_split(m, 0.2, 42);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::ClassTooSmall);
  }
  EXPECT_NO_THROW(stratified_split(m, 0.0, 42));
}

TEST(StratifiedSplit, CsvListsRoles) {
  const auto m = pws::testing::labeled_manifest(labels_with_counts(5, 5, 5));
  const auto s = stratified_split(m, 0.2, 42);
  const auto csv = s.to_csv(m);
  EXPECT_EQ(csv.rfind("meme_id,role\n", 0), 0u);
  std::size_t vals = 0;
  for (std::size_t p = csv.find(",val"); p != std::string::npos; p = csv.find(",val", p + 1)) ++vals;
  EXPECT_EQ(vals, 3u);
}
