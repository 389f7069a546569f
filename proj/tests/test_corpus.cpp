#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>

#include "kdnas/corpus.hpp"

namespace kdnas {
namespace {

BatchStream paper_like() { return load_corpus(SyntheticSpec{}, 512, 32, 7); }

std::set<Sequence> as_set(const BatchStream& s) { return {s.sequences().begin(), s.sequences().end()}; }

TEST(LoadCorpus, SyntheticIsDeterministicAndInVocabulary) {
  const auto a = paper_like(), b = paper_like();
  ASSERT_EQ(a.size(), 2000u);
  EXPECT_EQ(a.sequences(), b.sequences());
  for (const auto& s : a.sequences()) {
    ASSERT_EQ(s.size(), 32u);
    for (int id : s) {
      EXPECT_GE(id, 0);
      EXPECT_LT(id, 512);
    }
  }
  EXPECT_NE(load_corpus(SyntheticSpec{}, 512, 32, 8).sequences(), a.sequences());
}

TEST(LoadCorpus, TextFileIsByteTokenizedAndPadded) {
  const auto path = std::filesystem::temp_directory_path() / "kdnas_corpus.txt";
  {
    std::ofstream os(path);
    os << "abcdef\n\nxy\r\n";
  }
  const auto s = load_corpus(TextSource{path}, 64, 4, 0);
  ASSERT_EQ(s.size(), 3u);
  auto tok = [](char c) { return 1 + static_cast<unsigned char>(c) % 63; };
  EXPECT_EQ(s[0], (Sequence{tok('a'), tok('b'), tok('c'), tok('d')}));
  EXPECT_EQ(s[1], (Sequence{tok('e'), tok('f'), kPadId, kPadId}));
  EXPECT_EQ(s[2], (Sequence{tok('x'), tok('y'), kPadId, kPadId}));
  std::filesystem::remove(path);
}

TEST(LoadCorpus, EmptyOrMissingFileIsIoError) {
  const auto path = std::filesystem::temp_directory_path() / "kdnas_empty.txt";
  { std::ofstream os(path); }
  EXPECT_THROW(load_corpus(TextSource{path}, 64, 4, 0), IoError);
  std::filesystem::remove(path);
  EXPECT_THROW(load_corpus(TextSource{path}, 64, 4, 0), IoError);
}

TEST(BatchStream, RejectsOutOfVocabularyIds) {
  EXPECT_THROW(BatchStream({{1, 70}}, 64, 2, 1, 0), InputError);
  EXPECT_THROW(BatchStream({{1}}, 64, 2, 1, 0), InputError);
}

TEST(BatchStream, EpochCoversEverySequenceOnceAndIsDeterministic) {
  const auto s = paper_like();
  for (std::size_t epoch = 0; epoch < 3; ++epoch) {
    const auto batches = s.epoch_batches(epoch);
    EXPECT_EQ(batches, s.epoch_batches(epoch));
    EXPECT_EQ(batches.size(), s.batches_per_epoch());
    std::vector<std::size_t> seen;
    for (const auto& b : batches) {
      EXPECT_LE(b.size(), s.batch_size());
      seen.insert(seen.end(), b.begin(), b.end());
    }
    std::sort(seen.begin(), seen.end());
    for (std::size_t i = 0; i < seen.size(); ++i) ASSERT_EQ(seen[i], i);
  }
  EXPECT_NE(s.epoch_batches(0), s.epoch_batches(1));
}

TEST(ProxySubset, ThirtyPercentOfTwoThousandIsSixHundred) {
  EXPECT_EQ(proxy_subset(paper_like(), 0.3, 1).size(), 600u);
  EXPECT_EQ(proxy_subset(paper_like(), 0.0001, 1).size(), 1u);
}

TEST(ProxySubset, FullFractionIsWholeStream) {
  const auto s = paper_like();
  const auto all = proxy_subset(s, 1.0, 3);
  EXPECT_EQ(all.size(), s.size());
  EXPECT_EQ(as_set(all), as_set(s));
}

TEST(ProxySubset, DeterministicAndNestedAcrossFractions) {
  const auto s = paper_like();
  EXPECT_EQ(proxy_subset(s, 0.3, 9).sequences(), proxy_subset(s, 0.3, 9).sequences());
  const auto small = as_set(proxy_subset(s, 0.3, 9)), large = as_set(proxy_subset(s, 0.5, 9));
  EXPECT_TRUE(std::includes(large.begin(), large.end(), small.begin(), small.end()));
}

TEST(ProxySubset, FractionOutOfRangeIsInputError) {
  const auto s = paper_like();
  EXPECT_THROW(proxy_subset(s, 0.0, 1), InputError);
  EXPECT_THROW(proxy_subset(s, 1.2, 1), InputError);
}

TEST(HeldOut, FivePercentDisjointFromPool) {
  const auto s = paper_like();
  const auto split = split_held_out(s, kHeldOutFraction, 7);
  EXPECT_EQ(split.held_out.size(), 100u);
  EXPECT_EQ(split.pool.size(), 1900u);
  // Compare by index: equal sequences may legitimately repeat in a corpus.
  std::multiset<Sequence> all(s.sequences().begin(), s.sequences().end());
  for (const auto& seq : split.pool.sequences()) all.erase(all.find(seq));
  for (const auto& seq : split.held_out.sequences()) all.erase(all.find(seq));
  EXPECT_TRUE(all.empty());
}

TEST(MaskTokens, MasksAboutFifteenPercentAndAtLeastOne) {
  Rng rng(1);
  std::size_t masked = 0, total = 0;
  for (int i = 0; i < 200; ++i) {
    Sequence s(32, 5);
    auto [out, pos] = mask_tokens(s, kPadId, rng);
    EXPECT_FALSE(pos.empty());
    for (auto p : pos) EXPECT_EQ(out[p], kPadId);
    masked += pos.size();
    total += s.size();
  }
  EXPECT_NEAR(static_cast<double>(masked) / static_cast<double>(total), kMaskProbability, 0.02);
}

}  // namespace
}  // namespace kdnas
