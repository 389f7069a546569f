#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <string>
#include <variant>
#include <vector>

#include "kdnas/errors.hpp"
#include "kdnas/rng.hpp"

namespace kdnas {

inline constexpr int kPadId = 0;
inline constexpr double kHeldOutFraction = 0.05;
inline constexpr double kMaskProbability = 0.15;

using Sequence = std::vector<int>;

// Fixed-length token sequences plus a batch size and an ordering seed.
class BatchStream {
 public:
  BatchStream() = default;
  BatchStream(std::vector<Sequence> sequences, std::size_t vocab_size, std::size_t seq_len, std::size_t batch_size,
              std::uint64_t seed)
      : sequences_(std::move(sequences)), vocab_size_(vocab_size), seq_len_(seq_len), batch_size_(batch_size), seed_(seed) {
    if (batch_size_ == 0) throw ConfigError("batch size must be positive");
    for (const auto& s : sequences_) {
      if (s.size() != seq_len_) throw InputError("sequence of length " + std::to_string(s.size()) + " in a stream of length " + std::to_string(seq_len_));
      for (int id : s)
        if (id < 0 || static_cast<std::size_t>(id) >= vocab_size_) throw InputError("token id " + std::to_string(id) + " outside vocabulary");
    }
  }

  std::size_t size() const { return sequences_.size(); }
  bool empty() const { return sequences_.empty(); }
  std::size_t vocab_size() const { return vocab_size_; }
  std::size_t seq_len() const { return seq_len_; }
  std::size_t batch_size() const { return batch_size_; }
  std::uint64_t seed() const { return seed_; }
  const std::vector<Sequence>& sequences() const { return sequences_; }
  const Sequence& operator[](std::size_t i) const { return sequences_[i]; }

  std::size_t batches_per_epoch() const { return (size() + batch_size_ - 1) / batch_size_; }

  // Index batches for one epoch: a seeded shuffle cut into batch_size chunks
  // (the last may be short). Every sequence appears exactly once.
  std::vector<std::vector<std::size_t>> epoch_batches(std::size_t epoch, std::uint64_t extra_seed = 0) const {
    std::vector<std::size_t> order(size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(mix_seed(mix_seed(seed_, extra_seed), epoch));
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<std::vector<std::size_t>> out;
    for (std::size_t i = 0; i < order.size(); i += batch_size_) {
      out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i),
                       order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), i + batch_size_)));
    }
    return out;
  }

  std::vector<Sequence> gather(const std::vector<std::size_t>& idx) const {
    std::vector<Sequence> out;
    out.reserve(idx.size());
    for (auto i : idx) out.push_back(sequences_.at(i));
    return out;
  }

  // Same settings, sequences restricted to idx (kept in the given order).
  BatchStream subset(const std::vector<std::size_t>& idx) const {
    BatchStream s = *this;
    s.sequences_ = gather(idx);
    return s;
  }

  BatchStream with_batch_size(std::size_t b) const {
    BatchStream s = *this;
    if (b == 0) throw ConfigError("batch size must be positive");
    s.batch_size_ = b;
    return s;
  }

 private:
  std::vector<Sequence> sequences_;
  std::size_t vocab_size_ = 0;
  std::size_t seq_len_ = 0;
  std::size_t batch_size_ = 1;
  std::uint64_t seed_ = 0;
};

// Synthetic text: a sparse first-order Markov chain whose successor weights
// follow a Zipf law, so the stream has learnable local structure.
struct SyntheticSpec {
  std::size_t vocab_size = 512;
  std::size_t n_sequences = 2000;
  std::size_t seq_len = 32;
  std::uint64_t seed = 7;
  std::size_t successors = 8;
};

struct TextSource {
  std::filesystem::path path;
};

using CorpusSource = std::variant<SyntheticSpec, TextSource>;

inline std::vector<Sequence> generate_synthetic(const SyntheticSpec& spec) {
  if (spec.vocab_size < 2 || spec.seq_len == 0 || spec.n_sequences == 0 || spec.successors == 0) {
    throw ConfigError("synthetic corpus needs vocab >= 2 and positive length, count and fan-out");
  }
  Rng rng(mix_seed(spec.seed, "synthetic-corpus"));
  const int lo = 1, hi = static_cast<int>(spec.vocab_size) - 1;
  std::uniform_int_distribution<int> token(lo, hi);
  std::vector<std::vector<int>> next(spec.vocab_size);
  for (std::size_t t = 1; t < spec.vocab_size; ++t)
    for (std::size_t k = 0; k < spec.successors; ++k) next[t].push_back(token(rng));
  std::vector<double> zipf(spec.successors);
  for (std::size_t k = 0; k < spec.successors; ++k) zipf[k] = 1.0 / static_cast<double>(k + 1);
  std::discrete_distribution<std::size_t> rank(zipf.begin(), zipf.end());

  std::vector<Sequence> out(spec.n_sequences, Sequence(spec.seq_len));
  for (auto& s : out) {
    int cur = token(rng);
    for (std::size_t p = 0; p < spec.seq_len; ++p) {
      s[p] = cur;
      cur = next[static_cast<std::size_t>(cur)][rank(rng)];
    }
  }
  return out;
}

// Byte-level tokenization, one document per line: byte b becomes 1 + b mod
// (vocab - 1) so that id 0 stays reserved for padding. Each document is cut into
// seq_len chunks and the final chunk is padded.
inline std::vector<Sequence> tokenize_text_file(const std::filesystem::path& path, std::size_t vocab_size,
                                                std::size_t seq_len) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot read corpus file " + path.string());
  std::vector<Sequence> out;
  std::string line;
  while (std::getline(is, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    Sequence cur;
    for (unsigned char c : line) {
      cur.push_back(1 + static_cast<int>(c % (vocab_size - 1)));
      if (cur.size() == seq_len) {
        out.push_back(std::move(cur));
        cur.clear();
      }
    }
    if (!cur.empty()) {
      cur.resize(seq_len, kPadId);
      out.push_back(std::move(cur));
    }
  }
  if (out.empty()) throw IoError("corpus file " + path.string() + " is empty");
  return out;
}

inline BatchStream load_corpus(const CorpusSource& source, std::size_t vocab_size, std::size_t seq_len,
                               std::uint64_t seed, std::size_t batch_size = 32) {
  if (vocab_size < 2 || seq_len == 0) throw ConfigError("corpus needs vocab >= 2 and positive sequence length");
  std::vector<Sequence> seqs;
  if (const auto* spec = std::get_if<SyntheticSpec>(&source)) {
    SyntheticSpec s = *spec;
    s.vocab_size = vocab_size;
    s.seq_len = seq_len;
    s.seed = seed;
    seqs = generate_synthetic(s);
  } else {
    seqs = tokenize_text_file(std::get<TextSource>(source).path, vocab_size, seq_len);
  }
  return BatchStream(std::move(seqs), vocab_size, seq_len, batch_size, seed);
}

namespace detail {

inline std::vector<std::size_t> seeded_permutation(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

inline void require_fraction(double f) {
  if (!(f > 0.0 && f <= 1.0)) throw InputError("fraction must lie in (0, 1], got " + std::to_string(f));
}

}  // namespace detail

struct HeldOutSplit {
  BatchStream pool;      // everything available for training
  BatchStream held_out;  // never trained on
};

// Reserves ceil(fraction * n) sequences as the evaluation slice.
inline HeldOutSplit split_held_out(const BatchStream& stream, double fraction = kHeldOutFraction,
                                   std::uint64_t seed = 0) {
  detail::require_fraction(fraction);
  if (stream.size() < 2) throw InputError("need at least 2 sequences to reserve a held-out slice");
  const auto order = detail::seeded_permutation(stream.size(), mix_seed(seed, "held-out"));
  const auto n_held = std::min(stream.size() - 1, static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(stream.size()) - 1e-9)));
  std::vector<std::size_t> held(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_held));
  std::vector<std::size_t> pool(order.begin() + static_cast<std::ptrdiff_t>(n_held), order.end());
  std::sort(held.begin(), held.end());
  std::sort(pool.begin(), pool.end());
  return {stream.subset(pool), stream.subset(held)};
}

// ceil(fraction * n) sequences without replacement. Subsets for one seed are
// prefixes of a single permutation, so smaller fractions nest inside larger
// ones; selected sequences keep their original relative order.
inline BatchStream proxy_subset(const BatchStream& stream, double fraction, std::uint64_t seed) {
  detail::require_fraction(fraction);
  const auto order = detail::seeded_permutation(stream.size(), mix_seed(seed, "proxy"));
  const auto n = std::min(stream.size(), static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(stream.size()) - 1e-9)));
  std::vector<std::size_t> pick(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n));
  std::sort(pick.begin(), pick.end());
  return stream.subset(pick);
}

// Masked-token corruption for teacher warmup. Returns the corrupted sequence and
// the positions that were masked (always at least one).
inline std::pair<Sequence, std::vector<std::size_t>> mask_tokens(const Sequence& s, int mask_id, Rng& rng,
                                                                 double probability = kMaskProbability) {
  std::bernoulli_distribution coin(probability);
  Sequence out = s;
  std::vector<std::size_t> masked;
  for (std::size_t i = 0; i < s.size(); ++i)
    if (coin(rng)) {
      out[i] = mask_id;
      masked.push_back(i);
    }
  if (masked.empty() && !s.empty()) {
    std::uniform_int_distribution<std::size_t> pos(0, s.size() - 1);
    const auto i = pos(rng);
    out[i] = mask_id;
    masked.push_back(i);
  }
  return {std::move(out), std::move(masked)};
}

}  // namespace kdnas
