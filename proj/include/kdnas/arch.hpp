#pragma once

#include <charconv>
#include <compare>
#include <cstddef>
#include <functional>
#include <string>
#include <string_view>
#include <tuple>

#include "kdnas/errors.hpp"
#include "kdnas/rng.hpp"
#include "kdnas/tensor.hpp"

namespace kdnas {

// One transformer encoder configuration: [layers, heads, hidden, intermediate, activation].
struct ArchState {
  std::size_t layers = 0;
  std::size_t heads = 0;
  std::size_t hidden = 0;
  std::size_t intermediate = 0;
  Activation activation = Activation::gelu;

  std::size_t head_dim() const { return hidden / heads; }

  auto tuple() const { return std::tuple(layers, heads, hidden, intermediate, static_cast<int>(activation)); }

  friend bool operator==(const ArchState& a, const ArchState& b) { return a.tuple() == b.tuple(); }
  friend auto operator<=>(const ArchState& a, const ArchState& b) { return a.tuple() <=> b.tuple(); }
};

inline void validate(const ArchState& s) {
  if (s.layers == 0 || s.heads == 0 || s.hidden == 0 || s.intermediate == 0) {
    throw ConfigError("architecture fields must be strictly positive");
  }
  if (s.hidden % s.heads != 0) {
    throw ConfigError("hidden size " + std::to_string(s.hidden) + " is not divisible by " + std::to_string(s.heads) +
                      " attention heads");
  }
}

inline std::string format_state(const ArchState& s) {
  return std::to_string(s.layers) + "," + std::to_string(s.heads) + "," + std::to_string(s.hidden) + "," +
         std::to_string(s.intermediate) + "," + std::string(activation_name(s.activation));
}

// Parses "L,A,H,F,act". Field syntax only; use validate() for divisibility.
inline ArchState parse_state(std::string_view text) {
  std::size_t fields[4] = {};
  std::size_t pos = 0;
  for (int f = 0; f < 4; ++f) {
    const std::size_t comma = text.find(',', pos);
    if (comma == std::string_view::npos) {
      throw ParseError("expected 5 comma-separated fields in '" + std::string(text) + "'", text.size());
    }
    const auto field = text.substr(pos, comma - pos);
    std::size_t value = 0;
    const auto [end, ec] = std::from_chars(field.data(), field.data() + field.size(), value);
    if (field.empty() || ec != std::errc{} || end != field.data() + field.size()) {
      throw ParseError("expected a non-negative integer, got '" + std::string(field) + "'", pos);
    }
    if (value == 0) throw ParseError("architecture fields must be positive", pos);
    fields[f] = value;
    pos = comma + 1;
  }
  const auto act = text.substr(pos);
  Activation a{};
  try {
    a = activation_from_name(act);
  } catch (const ConfigError&) {
    throw ParseError("unknown activation '" + std::string(act) + "' (expected gelu, relu or silu)", pos);
  }
  const ArchState state{fields[0], fields[1], fields[2], fields[3], a};
  validate(state);
  return state;
}

struct ArchStateHash {
  std::size_t operator()(const ArchState& s) const noexcept {
    std::uint64_t h = mix_seed(s.layers);
    h = mix_seed(h, s.heads);
    h = mix_seed(h, s.hidden);
    h = mix_seed(h, s.intermediate);
    h = mix_seed(h, static_cast<std::uint64_t>(s.activation));
    return static_cast<std::size_t>(h);
  }
};

}  // namespace kdnas
