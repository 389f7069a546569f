#pragma once

// Choosing the cheapest proxy (data fraction, epochs) whose loss ranking over a
// set of probe architectures agrees with a larger reference run.

#include <cstddef>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "kdnas/arch.hpp"
#include "kdnas/distill.hpp"
#include "kdnas/errors.hpp"
#include "kdnas/stats.hpp"

namespace kdnas {

struct ProxySetting {
  double fraction = 0.3;
  std::size_t epochs = 4;

  double cost() const { return fraction * static_cast<double>(epochs); }
  friend bool operator==(const ProxySetting&, const ProxySetting&) = default;
};

struct CalibrationRow {
  ProxySetting proxy;
  std::vector<double> losses;  // one per probe state
  double correlation = 0.0;
  bool accepted = false;
};

struct CalibrationReport {
  std::vector<ArchState> probes;
  ProxySetting reference;
  std::vector<double> reference_losses;
  std::vector<CalibrationRow> rows;
  double threshold = 0.0;
  std::optional<ProxySetting> chosen;
};

class CalibrationFailed : public Error {
 public:
  CalibrationFailed(const std::string& what, CalibrationReport report) : Error(what), report_(std::move(report)) {}
  const CalibrationReport& report() const { return report_; }

 private:
  CalibrationReport report_;
};

using ProxyEvaluator = std::function<double(const ArchState&, const ProxySetting&)>;

inline constexpr std::size_t kMinProbeStates = 4;

// A candidate may equal the reference but never exceed it in fraction or epochs.
inline CalibrationReport calibrate_proxy(const std::vector<ArchState>& probes, const std::vector<ProxySetting>& candidates,
                                         const ProxySetting& reference, double min_rank_correlation,
                                         const ProxyEvaluator& evaluate) {
  if (probes.size() < kMinProbeStates) {
    throw InputError("calibration needs at least " + std::to_string(kMinProbeStates) + " probe states, got " +
                     std::to_string(probes.size()));
  }
  if (candidates.empty()) throw InputError("no candidate proxies to calibrate");
  for (const auto& c : candidates) {
    if (c.fraction > reference.fraction || c.epochs > reference.epochs) {
      throw ConfigError("candidate proxy (" + std::to_string(c.fraction) + ", " + std::to_string(c.epochs) +
                        ") exceeds the reference");
    }
  }
  CalibrationReport report;
  report.probes = probes;
  report.reference = reference;
  report.threshold = min_rank_correlation;
  for (const auto& s : probes) report.reference_losses.push_back(evaluate(s, reference));

  const CalibrationRow* best = nullptr;
  report.rows.reserve(candidates.size());
  for (const auto& c : candidates) {
    CalibrationRow row{c, {}, 0.0, false};
    if (c == reference) {
      row.losses = report.reference_losses;
    } else {
      for (const auto& s : probes) row.losses.push_back(evaluate(s, c));
    }
    row.correlation = spearman(row.losses, report.reference_losses);
    row.accepted = row.correlation >= min_rank_correlation;
    report.rows.push_back(std::move(row));
  }
  for (const auto& row : report.rows) {
    if (row.accepted && (!best || row.proxy.cost() < best->proxy.cost() ||
                         (row.proxy.cost() == best->proxy.cost() && row.proxy.fraction < best->proxy.fraction))) {
      best = &row;
    }
  }
  if (!best) {
    throw CalibrationFailed("no candidate proxy reaches rank correlation " + std::to_string(min_rank_correlation), report);
  }
  report.chosen = best->proxy;
  return report;
}

// Evaluator running mini-KD against a fixed teacher and corpus.
inline ProxyEvaluator mini_kd_evaluator(const Model& teacher, const BatchStream& corpus, std::uint64_t seed,
                                        KDRunConfig base = {}) {
  auto activations = std::make_shared<TeacherActivations>(teacher);
  return [activations, &corpus, seed, base](const ArchState& s, const ProxySetting& p) {
    return mini_kd(*activations, s, corpus, p.fraction, p.epochs, seed, base);
  };
}

}  // namespace kdnas
