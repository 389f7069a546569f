#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <set>

#include "kdnas/controller.hpp"
#include "kdnas/grad_check.hpp"

namespace kdnas {
namespace {

std::vector<ControllerSample> samples_from(const SearchSpace& space, const std::vector<ArchState>& states,
                                           const std::function<double(const ArchState&)>& reward) {
  std::vector<ControllerSample> out;
  for (const auto& s : states) out.push_back({make_controller_input(space, s, std::nullopt, std::nullopt), reward(s)});
  return out;
}

std::vector<double> values_of(const Tensor& t) { return {t.values().begin(), t.values().end()}; }

double hidden_ratio(const ArchState& s) { return static_cast<double>(s.hidden) / 768.0; }

TEST(ControllerInput, MissingMemoryIsZero) {
  const auto space = paper_space();
  const auto s = parse_state("4,4,288,768,gelu");
  const auto in = make_controller_input(space, s, std::nullopt, std::nullopt);
  EXPECT_EQ(in.global_best, std::vector<double>(kEncodingDim, 0.0));
  EXPECT_EQ(in.previous_best, std::vector<double>(kEncodingDim, 0.0));
  EXPECT_EQ(in.candidate, encode_state(s, space));
  const auto with = make_controller_input(space, s, s, s);
  EXPECT_EQ(with.global_best, encode_state(s, space));
}

TEST(Controller, ShapesAndDeterministicInit) {
  Controller a(kEncodingDim, kControllerCells, 9), b(kEncodingDim, kControllerCells, 9), c(kEncodingDim, kControllerCells, 10);
  EXPECT_EQ(a.parameter_count(), (7 + 32) * 128 + 128 + 32 + 1u);
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_EQ(values_of(a.parameters()[i]), values_of(b.parameters()[i]));
    EXPECT_NE(values_of(a.parameters()[i]), values_of(c.parameters()[i]));
  }
  EXPECT_THROW(Controller(0, 32, 0), ConfigError);
}

TEST(Controller, FinitePredictionsOverPaperSpace) {
  const auto space = paper_space();
  const Controller net = Controller(kEncodingDim, kControllerCells, 1).frozen();
  const auto gb = parse_state("12,12,768,3072,gelu");
  for (const auto& s : space.enumerate()) {
    ASSERT_TRUE(std::isfinite(net.predict(make_controller_input(space, s, gb, std::nullopt)))) << format_state(s);
  }
}

TEST(Controller, WrongInputWidthIsAContractViolation) {
  const Controller net;
  ControllerInput in{std::vector<double>(3), std::vector<double>(7), std::vector<double>(7)};
  EXPECT_THROW(net.predict(in), ContractViolation);
}

TEST(Controller, LossMatchesHalfSumOfSquares) {
  const auto space = paper_space();
  const Controller net(kEncodingDim, kControllerCells, 4);
  const auto samples = samples_from(space, sample_random(space, 12, 2), hidden_ratio);
  double oracle = 0.0;
  for (const auto& s : samples) oracle += 0.5 * std::pow(s.reward - predict_reward(net, s.input), 2);
  EXPECT_NEAR(controller_loss(net, samples), oracle, 1e-12);
  EXPECT_NEAR(controller_loss_tensor(net, samples).item(), oracle, 1e-12);
}

TEST(Controller, GradientMatchesFiniteDifferences) {
  const auto space = paper_space();
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Controller net(kEncodingDim, 6, seed);
    const auto states = sample_random(space, 4, seed + 100);
    std::vector<ControllerSample> samples{
        {make_controller_input(space, states[0], states[1], states[2]), 0.4},
        {make_controller_input(space, states[3], std::nullopt, states[1]), 0.9}};
    const auto report = grad_check([&] { return controller_loss_tensor(net, samples); }, net.parameters());
    EXPECT_TRUE(report.passed) << "seed " << seed << " max rel " << report.max_rel_error;
  }
}

TEST(TrainController, EmptySamplesRejected) {
  Controller net;
  EXPECT_THROW(train_controller(net, {}), InputError);
}

TEST(TrainController, NonFiniteRewardDiverges) {
  const auto space = paper_space();
  Controller net;
  auto samples = samples_from(space, sample_random(space, 3, 1), hidden_ratio);
  samples[1].reward = std::nan("");
  EXPECT_THROW(train_controller(net, samples), TrainingDiverged);
}

TEST(TrainController, Deterministic) {
  const auto space = paper_space();
  const auto samples = samples_from(space, sample_random(space, 30, 5), hidden_ratio);
  Controller a(kEncodingDim, kControllerCells, 3), b(kEncodingDim, kControllerCells, 3);
  const auto ra = train_controller(a, samples, ControllerConfig{.seed = 8});
  const auto rb = train_controller(b, samples, ControllerConfig{.seed = 8});
  EXPECT_EQ(ra.epoch_losses, rb.epoch_losses);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(values_of(a.parameters()[i]), values_of(b.parameters()[i]));
  EXPECT_EQ(ra.epoch_losses.size(), kControllerEpochs);
}

TEST(TrainController, DefaultSettingsReduceLoss) {
  const auto space = paper_space();
  int improved = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto samples = samples_from(space, sample_random(space, 60, seed + 40),
                                      [](const ArchState& s) { return 0.2 + 0.5 * hidden_ratio(s); });
    Controller net(kEncodingDim, kControllerCells, seed);
    const auto r = train_controller(net, samples, ControllerConfig{.seed = seed});
    if (r.epoch_losses.back() < r.initial_loss) ++improved;
  }
  EXPECT_GE(improved, 9);
}

TEST(TrainController, FitsAConstant) {
  const auto space = paper_space();
  const auto samples = samples_from(space, sample_random(space, 40, 6), [](const ArchState&) { return 0.7; });
  Controller net(kEncodingDim, kControllerCells, 2);
  ControllerConfig cfg;
  cfg.lr = 3e-3;
  cfg.lr_decay = 0.97;
  cfg.epochs = 40;
  train_controller(net, samples, cfg);
  for (const auto& s : samples) EXPECT_NEAR(net.predict(s.input), 0.7, 0.035);
}

TEST(TrainController, ParametersPersistAcrossCalls) {
  const auto space = paper_space();
  const auto samples = samples_from(space, sample_random(space, 20, 6), hidden_ratio);
  Controller net(kEncodingDim, kControllerCells, 2);
  const auto first = train_controller(net, samples, ControllerConfig{.seed = 1});
  const auto second = train_controller(net, samples, ControllerConfig{.seed = 1});
  EXPECT_DOUBLE_EQ(second.initial_loss, first.epoch_losses.back());
}

TEST(RankStates, TopKSortedDistinctAndOrderInvariant) {
  const auto space = paper_space();
  const Controller net(kEncodingDim, kControllerCells, 12);
  auto pool = sample_random(space, 300, 3);
  const auto top = rank_states(net, space, pool, std::nullopt, std::nullopt, 20);
  ASSERT_EQ(top.size(), 20u);
  std::set<ArchState> seen;
  for (std::size_t i = 0; i < top.size(); ++i) {
    EXPECT_TRUE(seen.insert(top[i].state).second);
    if (i) {
      EXPECT_GE(top[i - 1].predicted, top[i].predicted);
    }
  }
  double worst_kept = top.back().predicted;
  const Controller f = net.frozen();
  for (const auto& s : pool)
    if (!seen.contains(s)) EXPECT_LE(f.predict(make_controller_input(space, s, std::nullopt, std::nullopt)), worst_kept);
  std::reverse(pool.begin(), pool.end());
  const auto again = rank_states(net, space, pool, std::nullopt, std::nullopt, 20);
  for (std::size_t i = 0; i < top.size(); ++i) EXPECT_EQ(again[i].state, top[i].state);
}

TEST(RankStates, TiesGoToLexicographicallySmallerStates) {
  const auto space = paper_space();
  Controller net(kEncodingDim, kControllerCells, 1);
  std::map<std::string, std::vector<double>> zero;
  for (const auto& [name, t] : net.named_parameters()) zero[name] = std::vector<double>(t.size(), 0.0);
  net.load_values(zero);
  auto pool = sample_random(space, 50, 4);
  const auto top = rank_states(net, space, pool, std::nullopt, std::nullopt, 5);
  std::sort(pool.begin(), pool.end());
  for (std::size_t i = 0; i < 5; ++i) EXPECT_EQ(top[i].state, pool[i]);
}

TEST(RankStates, TooManyRequestedThrows) {
  const auto space = paper_space();
  const Controller net;
  EXPECT_THROW(rank_states(net, space, sample_random(space, 3, 1), std::nullopt, std::nullopt, 4), InputError);
}

TEST(RankStates, LearnsMonotoneOracle) {
  const auto space = paper_space();
  const auto samples = samples_from(space, sample_random(space, 150, 11), hidden_ratio);
  Controller net(kEncodingDim, kControllerCells, 5);
  ControllerConfig cfg;
  cfg.lr = 3e-3;
  cfg.lr_decay = 0.97;
  cfg.epochs = 40;
  train_controller(net, samples, cfg);
  const auto top = rank_states(net, space, space.enumerate(), std::nullopt, std::nullopt, 50);
  for (const auto& r : top) EXPECT_EQ(r.state.hidden, 768u) << format_state(r.state);
}

TEST(ControllerCheckpoint, RoundTripIsBitIdentical) {
  const auto space = paper_space();
  Controller net(kEncodingDim, kControllerCells, 21);
  train_controller(net, samples_from(space, sample_random(space, 10, 1), hidden_ratio));
  const auto path = std::filesystem::temp_directory_path() / ("kdnas_ctrl_" + std::to_string(::getpid()) + ".ckpt");
  save_controller(path, net, {{"episode", 3}});
  const auto back = load_controller(path);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(values_of(back.parameters()[i]), values_of(net.parameters()[i]));
  for (const auto& s : sample_random(space, 20, 2)) {
    const auto in = make_controller_input(space, s, std::nullopt, s);
    EXPECT_EQ(back.predict(in), net.predict(in));
  }
  std::filesystem::remove(path);
}

TEST(ControllerCheckpoint, RejectsModelCheckpoint) {
  const auto path = std::filesystem::temp_directory_path() / ("kdnas_notctrl_" + std::to_string(::getpid()) + ".ckpt");
  save_tensors(path, {{"kind", "model"}}, {});
  EXPECT_THROW(load_controller(path), IoError);
  std::filesystem::remove(path);
}

}  // namespace
}  // namespace kdnas
