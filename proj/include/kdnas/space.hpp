#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <set>
#include <string>
#include <unordered_set>
#include <vector>

#include "kdnas/arch.hpp"
#include "kdnas/errors.hpp"
#include "kdnas/rng.hpp"

namespace kdnas {

struct SearchSpace {
  std::vector<std::size_t> layers;
  std::vector<std::size_t> heads;
  std::vector<std::size_t> hidden;
  std::vector<std::size_t> intermediate;
  std::vector<Activation> activations;

  std::size_t size() const {
    return layers.size() * heads.size() * hidden.size() * intermediate.size() * activations.size();
  }

  bool contains(const ArchState& s) const {
    auto in = [](const auto& v, const auto& x) { return std::find(v.begin(), v.end(), x) != v.end(); };
    return in(layers, s.layers) && in(heads, s.heads) && in(hidden, s.hidden) && in(intermediate, s.intermediate) &&
           in(activations, s.activation);
  }

  // Cartesian product in lexicographic order of the candidate lists.
  std::vector<ArchState> enumerate() const {
    std::vector<ArchState> out;
    out.reserve(size());
    for (auto l : layers)
      for (auto h : heads)
        for (auto d : hidden)
          for (auto f : intermediate)
            for (auto a : activations) out.push_back(ArchState{l, h, d, f, a});
    return out;
  }

  // Every candidate list non-empty and positive; every combination divisible.
  void validate() const {
    if (size() == 0) throw ConfigError("search space has an empty dimension");
    for (const auto* dim : {&layers, &heads, &hidden, &intermediate})
      for (auto v : *dim)
        if (v == 0) throw ConfigError("search space candidates must be positive");
    for (auto d : hidden)
      for (auto h : heads)
        if (d % h != 0) {
          throw ConfigError("hidden size " + std::to_string(d) + " not divisible by head count " + std::to_string(h));
        }
  }
};

// Five-dimensional space of 2400 students. The hidden-size list is inferred: the
// printed table omits that row, and {288, 384, 576, 768} is the 4-element set that
// yields 2400 states and covers every width of the reported architectures.
inline SearchSpace paper_space() {
  return SearchSpace{{3, 4, 6, 10, 12},
                     {2, 3, 4, 6, 12},
                     {288, 384, 576, 768},
                     {384, 512, 576, 768, 1024, 1536, 2048, 3072},
                     {Activation::gelu, Activation::relu, Activation::silu}};
}

// 24-state space sized for end-to-end mini-KD on a laptop.
inline SearchSpace desk_space() {
  return SearchSpace{{2, 4}, {2, 4}, {16, 32}, {64}, {Activation::gelu, Activation::relu, Activation::silu}};
}

// Desk-scale teacher: 12 layers, 4 heads, width 64, FFN 128, gelu.
inline ArchState desk_teacher() { return ArchState{12, 4, 64, 128, Activation::gelu}; }

// Full-size teacher (XLM-R base shape).
inline ArchState paper_teacher() { return ArchState{12, 12, 768, 3072, Activation::gelu}; }

inline constexpr std::size_t kEncodingDim = 7;

// Four ordinals scaled by the largest candidate of their dimension, then a
// one-hot over (gelu, relu, silu).
inline std::vector<double> encode_state(const ArchState& s, const SearchSpace& space) {
  if (!space.contains(s)) throw InputError("state " + format_state(s) + " is not in the search space");
  auto ratio = [](std::size_t v, const std::vector<std::size_t>& c) {
    return static_cast<double>(v) / static_cast<double>(*std::max_element(c.begin(), c.end()));
  };
  std::vector<double> e{ratio(s.layers, space.layers), ratio(s.heads, space.heads), ratio(s.hidden, space.hidden),
                        ratio(s.intermediate, space.intermediate), 0.0, 0.0, 0.0};
  e[4 + static_cast<std::size_t>(s.activation)] = 1.0;
  return e;
}

// Uniform sample of n distinct states from space minus exclude.
inline std::vector<ArchState> sample_random(const SearchSpace& space, std::size_t n, std::uint64_t seed,
                                            const std::set<ArchState>& exclude = {}) {
  std::vector<ArchState> pool;
  for (const auto& s : space.enumerate())
    if (!exclude.contains(s)) pool.push_back(s);
  if (n > pool.size()) {
    throw InputError("cannot sample " + std::to_string(n) + " states from " + std::to_string(pool.size()) + " available");
  }
  Rng rng(seed);
  for (std::size_t i = 0; i < n; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, pool.size() - 1);
    std::swap(pool[i], pool[pick(rng)]);
  }
  pool.resize(n);
  return pool;
}

}  // namespace kdnas
