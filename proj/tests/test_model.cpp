#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <random>

#include "kdnas/checkpoint.hpp"
#include "kdnas/model.hpp"
#include "kdnas/space.hpp"

namespace kdnas {
namespace {

std::vector<int> tokens(std::size_t n, std::size_t vocab, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> id(0, static_cast<int>(vocab) - 1);
  std::vector<int> out(n);
  for (auto& t : out) t = id(rng);
  return out;
}

TEST(BuildModel, SameSeedIsBitIdentical) {
  const ArchState arch{2, 2, 16, 32, Activation::relu};
  auto a = build_model(arch, 64, 8, 42);
  auto b = build_model(arch, 64, 8, 42);
  ASSERT_EQ(a.named_parameters().size(), b.named_parameters().size());
  for (std::size_t i = 0; i < a.named_parameters().size(); ++i) {
    EXPECT_EQ(a.named_parameters()[i].first, b.named_parameters()[i].first);
    EXPECT_TRUE(bit_equal(a.named_parameters()[i].second, b.named_parameters()[i].second));
  }
  auto c = build_model(arch, 64, 8, 43);
  EXPECT_FALSE(bit_equal(a.embedding(0), c.embedding(0)));
}

TEST(BuildModel, SecondReportedArchitectureAtDeskVocab) {
  auto m = build_model(parse_state("4,4,288,768,gelu"), 512, 32, 0);
  EXPECT_EQ(m.arch().layers, 4u);
  EXPECT_EQ(m.arch().head_dim(), 72u);
}

TEST(BuildModel, IndivisibleHeadsRejected) {
  EXPECT_THROW(build_model(ArchState{2, 3, 10, 16, Activation::gelu}, 64, 8, 0), ConfigError);
  EXPECT_THROW(build_model(ArchState{2, 2, 16, 16, Activation::gelu}, 1, 8, 0), ConfigError);
}

TEST(Forward, TeacherShapedModelReturnsTwelveHiddenStates) {
  auto m = build_model(desk_teacher(), 512, 32, 1);
  auto out = forward(m, tokens(32, 512, 2));
  ASSERT_EQ(out.hidden_states.size(), 12u);
  for (const auto& h : out.hidden_states) EXPECT_EQ(h.shape(), (Shape{32, 64}));
  EXPECT_TRUE(out.qkv.empty());
}

TEST(Forward, CapturesRequestedQkvOnly) {
  auto m = build_model(ArchState{3, 2, 16, 32, Activation::silu}, 64, 8, 1);
  auto out = forward(m, tokens(8, 64, 3), {2});
  ASSERT_EQ(out.qkv.size(), 1u);
  EXPECT_EQ(out.relations_source(2).k.shape(), (Shape{8, 16}));
  EXPECT_THROW(out.relations_source(1), ContractViolation);
}

TEST(Forward, Deterministic) {
  auto m = build_model(ArchState{2, 4, 16, 32, Activation::gelu}, 64, 8, 5);
  const auto t = tokens(8, 64, 6);
  auto a = forward(m, t), b = forward(m, t);
  for (std::size_t l = 0; l < 2; ++l) EXPECT_TRUE(bit_equal(a.hidden_states[l], b.hidden_states[l]));
}

TEST(Forward, BatchRowsMatchSingleSequenceRuns) {
  auto m = build_model(ArchState{2, 2, 16, 32, Activation::gelu}, 64, 8, 5);
  std::vector<std::vector<int>> batch{tokens(6, 64, 1), tokens(6, 64, 2)};
  auto both = forward(m, batch);
  auto second = forward(m, batch[1]);
  for (std::size_t i = 0; i < 6 * 16; ++i) EXPECT_DOUBLE_EQ(both.hidden(2)[6 * 16 + i], second.hidden(2)[i]);
}

TEST(Forward, OutOfRangeTokenIsInputError) {
  auto m = build_model(ArchState{1, 2, 8, 8, Activation::gelu}, 16, 8, 0);
  EXPECT_THROW(forward(m, std::vector<int>{1, 16}), InputError);
  EXPECT_THROW(forward(m, std::vector<int>(9, 1)), InputError);
}

TEST(Forward, DifferentiableEndToEnd) {
  auto m = build_model(ArchState{2, 2, 8, 16, Activation::gelu}, 16, 4, 0);
  auto out = forward(m, std::vector<int>{1, 2, 3, 4});
  sum(hadamard(out.hidden(2), out.hidden(2))).backward();
  for (const auto& [name, p] : m.named_parameters()) {
    if (name == "embeddings.position") continue;
    EXPECT_TRUE(p.has_grad()) << name;
  }
}

TEST(ParamCount, MatchesInstantiatedModelsForRandomStates) {
  std::mt19937_64 rng(11);
  const SearchSpace small{{1, 2, 3}, {1, 2, 4}, {8, 16}, {8, 24}, {Activation::gelu}};
  const auto desk = small.enumerate();
  for (int i = 0; i < 20; ++i) {
    const auto& s = desk[rng() % desk.size()];
    EXPECT_EQ(param_count(s, 97, 13), build_model(s, 97, 13, 0).parameter_count()) << format_state(s);
  }
}

TEST(ParamCount, ReportedArchitecturesWithinTwoPercent) {
  const std::pair<const char*, double> rows[] = {
      {"3,12,384,1024,gelu", 100e6}, {"4,4,288,768,gelu", 76e6}, {"4,12,576,768,gelu", 153e6}, {"12,12,768,3072,gelu", 277e6}};
  for (const auto& [arch, reported] : rows) {
    const double n = static_cast<double>(param_count(parse_state(arch), 250002, 512));
    EXPECT_LT(std::abs(n - reported) / reported, 0.02) << arch << " -> " << n;
  }
}

TEST(HiddenShapes, FollowArchitectureAcrossSampledSpacePoints) {
  for (const auto& s : sample_random(paper_space(), 50, 3)) {
    auto m = build_model(s, 512, 32, 1);
    auto out = forward(m, tokens(2, 512, 9));
    ASSERT_EQ(out.hidden_states.size(), s.layers) << format_state(s);
    for (const auto& h : out.hidden_states) EXPECT_EQ(h.shape(), (Shape{2, s.hidden})) << format_state(s);
  }
}

TEST(Checkpoint, RoundTripIsBitIdentical) {
  auto m = build_model(ArchState{2, 2, 8, 16, Activation::silu}, 32, 8, 99);
  const auto path = std::filesystem::temp_directory_path() / "kdnas_model_roundtrip.ckpt";
  save_model(path, m);
  auto back = load_model(path);
  EXPECT_EQ(back.arch(), m.arch());
  for (std::size_t i = 0; i < m.named_parameters().size(); ++i)
    EXPECT_TRUE(bit_equal(m.named_parameters()[i].second, back.named_parameters()[i].second));
  std::filesystem::remove(path);
}

TEST(Checkpoint, HeaderIsLittleEndianJson) {
  auto m = build_model(ArchState{1, 1, 2, 2, Activation::gelu}, 2, 1, 0);
  const auto path = std::filesystem::temp_directory_path() / "kdnas_model_header.ckpt";
  save_model(path, m);
  std::ifstream is(path, std::ios::binary);
  std::string blob((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  ASSERT_EQ(blob.substr(0, 8), "KDNASTF1");
  std::uint64_t len = 0;
  for (int i = 0; i < 8; ++i) len |= static_cast<std::uint64_t>(static_cast<unsigned char>(blob[8 + i])) << (8 * i);
  auto header = nlohmann::json::parse(blob.substr(16, len));
  EXPECT_EQ(header["byte_order"], "little");
  EXPECT_EQ(header["meta"]["arch"], "1,1,2,2,gelu");
  EXPECT_EQ(blob.size(), 16 + len + 8 * m.parameter_count());
  std::filesystem::remove(path);
}

}  // namespace
}  // namespace kdnas
