#pragma once

#include <algorithm>
#include <cstddef>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "kdnas/errors.hpp"

namespace kdnas {

enum class MappingStrategy { last1, last, uniform, uniform_last };

inline constexpr MappingStrategy kAllMappingStrategies[] = {MappingStrategy::last1, MappingStrategy::last,
                                                            MappingStrategy::uniform, MappingStrategy::uniform_last};

inline std::string_view mapping_name(MappingStrategy s) {
  switch (s) {
    case MappingStrategy::last1: return "last1";
    case MappingStrategy::last: return "last";
    case MappingStrategy::uniform: return "uniform";
    case MappingStrategy::uniform_last: return "uniform_last";
  }
  return "?";
}

inline MappingStrategy mapping_from_name(std::string_view name) {
  for (auto s : kAllMappingStrategies)
    if (mapping_name(s) == name) return s;
  throw ConfigError("unknown layer mapping strategy '" + std::string(name) + "'");
}

// Student layer i (1-based) -> teacher layers g(i) (1-based, ascending, unique).
struct LayerMapping {
  MappingStrategy strategy = MappingStrategy::uniform_last;
  std::size_t teacher_layers = 0;
  std::size_t student_layers = 0;
  std::vector<std::pair<std::size_t, std::vector<std::size_t>>> pairs;

  // Flattened (student, teacher) pairs, in order.
  std::vector<std::pair<std::size_t, std::size_t>> edges() const {
    std::vector<std::pair<std::size_t, std::size_t>> out;
    for (const auto& [i, g] : pairs)
      for (auto j : g) out.emplace_back(i, j);
    return out;
  }

  friend bool operator==(const LayerMapping&, const LayerMapping&) = default;
};

inline std::size_t ceil_div(std::size_t a, std::size_t b) { return (a + b - 1) / b; }

// uniform picks every ceil(L_T/L_S)-th teacher layer starting at 1; last maps
// student layer i to teacher layer L_T - L_S + i; uniform_last takes both.
// Uniform indices past L_T (when L_S does not divide L_T) are clamped to L_T,
// and coinciding teacher layers collapse into one pair.
inline LayerMapping build_mapping(MappingStrategy strategy, std::size_t teacher_layers, std::size_t student_layers) {
  if (teacher_layers == 0 || student_layers == 0) throw ConfigError("layer counts must be positive");
  if (student_layers > teacher_layers) {
    throw ConfigError("student depth " + std::to_string(student_layers) + " exceeds teacher depth " +
                      std::to_string(teacher_layers) + "; no mapping strategy supports this");
  }
  LayerMapping m{strategy, teacher_layers, student_layers, {}};
  const std::size_t stride = ceil_div(teacher_layers, student_layers);
  auto uniform = [&](std::size_t i) { return std::min((i - 1) * stride + 1, teacher_layers); };
  auto last = [&](std::size_t i) { return teacher_layers - student_layers + i; };
  if (strategy == MappingStrategy::last1) {
    m.pairs.push_back({student_layers, {teacher_layers}});
    return m;
  }
  for (std::size_t i = 1; i <= student_layers; ++i) {
    std::vector<std::size_t> g;
    switch (strategy) {
      case MappingStrategy::last: g = {last(i)}; break;
      case MappingStrategy::uniform: g = {uniform(i)}; break;
      default: {
        g = {uniform(i), last(i)};
        std::sort(g.begin(), g.end());
        g.erase(std::unique(g.begin(), g.end()), g.end());
      }
    }
    m.pairs.emplace_back(i, std::move(g));
  }
  return m;
}

}  // namespace kdnas
