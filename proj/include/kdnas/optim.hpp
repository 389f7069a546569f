#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "kdnas/errors.hpp"
#include "kdnas/tensor.hpp"

namespace kdnas {

// Adam with decoupled weight decay.
class AdamW {
 public:
  struct Options {
    double beta1 = 0.9;
    double beta2 = 0.98;
    double eps = 1e-6;
    double weight_decay = 0.01;
  };

  AdamW(std::vector<Tensor> params, Options opts) : params_(std::move(params)), opts_(opts) {
    for (const auto& p : params_) {
      m_.emplace_back(p.size(), 0.0);
      v_.emplace_back(p.size(), 0.0);
    }
  }

  void step(double lr) {
    ++t_;
    const double bc1 = 1.0 - std::pow(opts_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(opts_.beta2, static_cast<double>(t_));
    for (std::size_t k = 0; k < params_.size(); ++k) {
      auto w = params_[k].mutable_values();
      auto g = params_[k].mutable_grad();
      auto& m = m_[k];
      auto& v = v_[k];
      for (std::size_t i = 0; i < w.size(); ++i) {
        m[i] = opts_.beta1 * m[i] + (1.0 - opts_.beta1) * g[i];
        v[i] = opts_.beta2 * v[i] + (1.0 - opts_.beta2) * g[i] * g[i];
        const double update = (m[i] / bc1) / (std::sqrt(v[i] / bc2) + opts_.eps);
        w[i] -= lr * (update + opts_.weight_decay * w[i]);
      }
    }
  }

  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }

 private:
  std::vector<Tensor> params_;
  Options opts_;
  std::vector<std::vector<double>> m_, v_;
  std::size_t t_ = 0;
};

// RMSProp: v <- rho v + (1 - rho) g^2; w <- w - lr g / (sqrt(v) + eps).
class RmsProp {
 public:
  struct Options {
    double rho = 0.95;
    double eps = 1e-8;
  };

  RmsProp(std::vector<Tensor> params, Options opts) : params_(std::move(params)), opts_(opts) {
    for (const auto& p : params_) v_.emplace_back(p.size(), 0.0);
  }

  void step(double lr) {
    for (std::size_t k = 0; k < params_.size(); ++k) {
      auto w = params_[k].mutable_values();
      auto g = params_[k].mutable_grad();
      auto& v = v_[k];
      for (std::size_t i = 0; i < w.size(); ++i) {
        v[i] = opts_.rho * v[i] + (1.0 - opts_.rho) * g[i] * g[i];
        w[i] -= lr * g[i] / (std::sqrt(v[i]) + opts_.eps);
      }
    }
  }

  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }

 private:
  std::vector<Tensor> params_;
  Options opts_;
  std::vector<std::vector<double>> v_;
};

enum class ScheduleKind { constant, linear, exponential };

inline std::string_view schedule_name(ScheduleKind k) {
  switch (k) {
    case ScheduleKind::constant: return "constant";
    case ScheduleKind::linear: return "linear";
    case ScheduleKind::exponential: return "exponential";
  }
  return "?";
}

inline ScheduleKind schedule_from_name(std::string_view s) {
  for (auto k : {ScheduleKind::constant, ScheduleKind::linear, ScheduleKind::exponential})
    if (schedule_name(k) == s) return k;
  throw ConfigError("unknown learning-rate schedule '" + std::string(s) + "'");
}

// Learning rate for 0-based `step` out of `total`.
// linear: ramps to `peak` over `warmup` steps, then decays linearly, reaching
// peak/(total - warmup) on the last step. exponential: peak * decay^step.
struct LrSchedule {
  ScheduleKind kind = ScheduleKind::linear;
  double peak = 8e-4;
  std::size_t warmup = 0;
  std::size_t total = 1;
  double decay = 0.9;

  double at(std::size_t step) const {
    switch (kind) {
      case ScheduleKind::constant:
        return peak;
      case ScheduleKind::exponential:
        return peak * std::pow(decay, static_cast<double>(step));
      case ScheduleKind::linear:
        if (step < warmup) return peak * static_cast<double>(step + 1) / static_cast<double>(warmup);
        if (total <= warmup) return peak;
        return peak * std::max(0.0, static_cast<double>(total - step) / static_cast<double>(total - warmup));
    }
    return peak;
  }
};

}  // namespace kdnas
