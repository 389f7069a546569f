#pragma once

// LSTM reward predictor. Input is a 3-step sequence of encoded states,
// [global_best, previous_best, candidate]; the final hidden state feeds a
// linear head that outputs one scalar.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <filesystem>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "kdnas/arch.hpp"
#include "kdnas/checkpoint.hpp"
#include "kdnas/errors.hpp"
#include "kdnas/optim.hpp"
#include "kdnas/rng.hpp"
#include "kdnas/space.hpp"
#include "kdnas/tensor.hpp"

namespace kdnas {

inline constexpr std::size_t kControllerCells = 32;
inline constexpr std::size_t kControllerEpochs = 10;

struct ControllerInput {
  std::vector<double> global_best;
  std::vector<double> previous_best;
  std::vector<double> candidate;
};

// Missing memory states become zero vectors.
inline ControllerInput make_controller_input(const SearchSpace& space, const ArchState& candidate,
                                             const std::optional<ArchState>& global_best,
                                             const std::optional<ArchState>& previous_best) {
  auto enc = [&](const std::optional<ArchState>& s) {
    return s ? encode_state(*s, space) : std::vector<double>(kEncodingDim, 0.0);
  };
  return {enc(global_best), enc(previous_best), encode_state(candidate, space)};
}

struct ControllerSample {
  ControllerInput input;
  double reward = 0.0;
};

struct ControllerConfig {
  double lr = 1e-4;
  double rho = 0.95;
  double lr_decay = 0.9;  // exponential schedule, applied per epoch
  std::size_t epochs = kControllerEpochs;
  std::uint64_t seed = 0;
};

class Controller {
 public:
  Controller(std::size_t input_dim = kEncodingDim, std::size_t cells = kControllerCells, std::uint64_t seed = 0)
      : input_dim_(input_dim), cells_(cells) {
    if (input_dim_ == 0 || cells_ == 0) throw ConfigError("controller needs positive input and cell counts");
    Rng rng(mix_seed(seed, "controller"));
    const double a = 1.0 / std::sqrt(static_cast<double>(cells_));
    std::uniform_real_distribution<double> u(-a, a);
    auto fill = [&](std::size_t r, std::size_t c) {
      std::vector<double> v(r * c);
      for (auto& x : v) x = u(rng);
      return Tensor::matrix(r, c, std::move(v), true);
    };
    weights_ = fill(input_dim_ + cells_, 4 * cells_);
    bias_ = fill(1, 4 * cells_);
    head_w_ = fill(cells_, 1);
    head_b_ = fill(1, 1);
  }

  Controller(const Controller& o) : input_dim_(o.input_dim_), cells_(o.cells_) {
    weights_ = o.weights_.clone();
    bias_ = o.bias_.clone();
    head_w_ = o.head_w_.clone();
    head_b_ = o.head_b_.clone();
  }
  Controller& operator=(const Controller& o) {
    if (this != &o) *this = Controller(o);
    return *this;
  }
  Controller(Controller&&) noexcept = default;
  Controller& operator=(Controller&&) noexcept = default;

  std::size_t input_dim() const { return input_dim_; }
  std::size_t cells() const { return cells_; }

  std::vector<NamedTensor> named_parameters() const {
    return {{"lstm.weight", weights_}, {"lstm.bias", bias_}, {"head.weight", head_w_}, {"head.bias", head_b_}};
  }
  std::vector<Tensor> parameters() const { return {weights_, bias_, head_w_, head_b_}; }
  std::size_t parameter_count() const {
    return weights_.size() + bias_.size() + head_w_.size() + head_b_.size();
  }

  // Detached copy for bulk prediction: no graph is recorded.
  Controller frozen() const {
    Controller c(*this);
    for (auto* t : {&c.weights_, &c.bias_, &c.head_w_, &c.head_b_}) t->set_requires_grad(false);
    return c;
  }

  Tensor predict_tensor(const ControllerInput& in) const {
    const std::vector<double>* steps[] = {&in.global_best, &in.previous_best, &in.candidate};
    for (const auto* s : steps) {
      if (s->size() != input_dim_) {
        throw ContractViolation("controller input of width " + std::to_string(s->size()) + ", expected " +
                                std::to_string(input_dim_));
      }
    }
    Tensor h = Tensor::zeros({1, cells_});
    Tensor c = Tensor::zeros({1, cells_});
    const std::size_t n = cells_;
    for (const auto* s : steps) {
      Tensor x = Tensor::matrix(1, input_dim_, *s);
      Tensor z = add_row(matmul(hcat({x, h}), weights_), bias_);
      Tensor i = sigmoid(slice_cols(z, 0, n));
      Tensor f = sigmoid(slice_cols(z, n, n));
      Tensor g = tanh(slice_cols(z, 2 * n, n));
      Tensor o = sigmoid(slice_cols(z, 3 * n, n));
      c = add(hadamard(f, c), hadamard(i, g));
      h = hadamard(o, tanh(c));
    }
    return add_row(matmul(h, head_w_), head_b_);
  }

  double predict(const ControllerInput& in) const { return predict_tensor(in).item(); }

  void load_values(const std::map<std::string, std::vector<double>>& values) {
    for (auto& [name, t] : named_parameters()) {
      auto it = values.find(name);
      if (it == values.end()) throw InputError("controller checkpoint lacks '" + name + "'");
      if (it->second.size() != t.size()) throw DimensionError("controller parameter '" + name + "' has the wrong size");
      Tensor target = t;
      std::copy(it->second.begin(), it->second.end(), target.mutable_values().begin());
    }
  }

 private:
  std::size_t input_dim_;
  std::size_t cells_;
  Tensor weights_, bias_, head_w_, head_b_;
};

inline double predict_reward(const Controller& net, const ControllerInput& in) { return net.predict(in); }

// L_C = 1/2 * sum over samples of (reward - prediction)^2.
inline double controller_loss(const Controller& net, const std::vector<ControllerSample>& samples) {
  const Controller f = net.frozen();
  double total = 0.0;
  for (const auto& s : samples) {
    const double d = s.reward - f.predict(s.input);
    total += 0.5 * d * d;
  }
  return total;
}

inline Tensor controller_loss_tensor(const Controller& net, const std::vector<ControllerSample>& samples) {
  std::vector<Tensor> terms;
  for (const auto& s : samples) {
    Tensor d = sub(net.predict_tensor(s.input), Tensor::matrix(1, 1, {s.reward}));
    terms.push_back(scale(sum(hadamard(d, d)), 0.5));
  }
  return add_scalars(terms);
}

struct ControllerTrainReport {
  double initial_loss = 0.0;
  std::vector<double> epoch_losses;  // L_C over all samples after each epoch
};

// Per-sample RMSProp updates in a seeded order. The optimizer state starts
// fresh on every call; parameters persist across calls.
inline ControllerTrainReport train_controller(Controller& net, const std::vector<ControllerSample>& samples,
                                              const ControllerConfig& cfg = {}) {
  if (samples.empty()) throw InputError("controller training needs at least one sample");
  if (!(cfg.lr > 0.0)) throw ConfigError("controller learning rate must be positive");
  ControllerTrainReport report;
  report.initial_loss = controller_loss(net, samples);
  RmsProp opt(net.parameters(), RmsProp::Options{cfg.rho, 1e-8});
  const LrSchedule schedule{ScheduleKind::exponential, cfg.lr, 0, cfg.epochs, cfg.lr_decay};
  std::vector<std::size_t> order(samples.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng rng(mix_seed(cfg.seed, epoch));
    std::shuffle(order.begin(), order.end(), rng);
    for (auto k : order) {
      Tensor d = sub(net.predict_tensor(samples[k].input), Tensor::matrix(1, 1, {samples[k].reward}));
      Tensor loss = scale(sum(hadamard(d, d)), 0.5);
      if (!std::isfinite(loss.item())) throw TrainingDiverged("controller loss is not finite", epoch + 1);
      opt.zero_grad();
      loss.backward();
      opt.step(schedule.at(epoch));
    }
    const double l = controller_loss(net, samples);
    if (!std::isfinite(l)) throw TrainingDiverged("controller loss is not finite", epoch + 1);
    report.epoch_losses.push_back(l);
  }
  return report;
}

struct RankedState {
  ArchState state;
  double predicted = 0.0;
};

// Top-k by predicted reward; ties go to the lexicographically smaller state.
inline std::vector<RankedState> rank_states(const Controller& net, const SearchSpace& space,
                                            const std::vector<ArchState>& unexplored,
                                            const std::optional<ArchState>& global_best,
                                            const std::optional<ArchState>& previous_best, std::size_t k) {
  if (k > unexplored.size()) {
    throw InputError("cannot rank " + std::to_string(k) + " of " + std::to_string(unexplored.size()) + " states");
  }
  const Controller f = net.frozen();
  std::vector<RankedState> all;
  all.reserve(unexplored.size());
  for (const auto& s : unexplored) all.push_back({s, f.predict(make_controller_input(space, s, global_best, previous_best))});
  auto better = [](const RankedState& a, const RankedState& b) {
    if (a.predicted != b.predicted) return a.predicted > b.predicted;
    return a.state < b.state;
  };
  std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(k), all.end(), better);
  all.resize(k);
  return all;
}

inline void save_controller(const std::filesystem::path& path, const Controller& net, nlohmann::json meta = {}) {
  if (meta.is_null()) meta = nlohmann::json::object();
  meta["kind"] = "controller";
  meta["input_dim"] = net.input_dim();
  meta["cells"] = net.cells();
  save_tensors(path, meta, net.named_parameters());
}

inline Controller load_controller(const std::filesystem::path& path) {
  const auto file = load_tensors(path);
  if (file.meta.value("kind", "") != "controller") throw IoError(path.string() + " does not hold a controller");
  Controller net(file.meta.at("input_dim").get<std::size_t>(), file.meta.at("cells").get<std::size_t>(), 0);
  net.load_values(file.by_name());
  return net;
}

}  // namespace kdnas
