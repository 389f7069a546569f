#pragma once

// Post-layer-norm transformer encoder with learned absolute position embeddings.
// Serves as both teacher and student: forward() exposes every layer output and,
// on request, the concatenated Q/K/V projections of selected layers.

#include <cmath>
#include <cstddef>
#include <map>
#include <random>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "kdnas/arch.hpp"
#include "kdnas/errors.hpp"
#include "kdnas/rng.hpp"
#include "kdnas/tensor.hpp"

namespace kdnas {

inline constexpr double kInitStd = 0.02;

using NamedTensor = std::pair<std::string, Tensor>;

struct Qkv {
  Tensor q, k, v;
};

struct ModelOutputs {
  // hidden_states[i - 1] is the output of transformer layer i, shape (batch*seq) x hidden.
  std::vector<Tensor> hidden_states;
  // Keyed by 1-based layer index; each tensor is (batch*seq) x hidden.
  std::map<std::size_t, Qkv> qkv;
  std::size_t batch = 0;
  std::size_t seq_len = 0;

  const Tensor& hidden(std::size_t layer) const {
    if (layer == 0 || layer > hidden_states.size()) {
      throw ContractViolation("layer " + std::to_string(layer) + " outside [1, " + std::to_string(hidden_states.size()) + "]");
    }
    if (!hidden_states[layer - 1]) throw ContractViolation("hidden state of layer " + std::to_string(layer) + " was not kept");
    return hidden_states[layer - 1];
  }

  const Qkv& relations_source(std::size_t layer) const {
    auto it = qkv.find(layer);
    if (it == qkv.end()) throw ContractViolation("Q/K/V of layer " + std::to_string(layer) + " were not captured");
    return it->second;
  }
};

class Model {
 public:
  // Per-layer parameter slots, in storage order.
  enum Slot : std::size_t {
    kQw, kQb, kKw, kKb, kVw, kVb, kOw, kOb, kAttnLnG, kAttnLnB, kFf1w, kFf1b, kFf2w, kFf2b, kFfLnG, kFfLnB, kSlots
  };
  static constexpr std::size_t kEmbeddingParams = 4;

  Model(const ArchState& arch, std::size_t vocab_size, std::size_t max_seq, std::uint64_t seed)
      : arch_(arch), vocab_size_(vocab_size), max_seq_(max_seq), seed_(seed) {
    validate(arch_);
    if (vocab_size_ < 2) throw ConfigError("vocabulary must hold at least 2 tokens");
    if (max_seq_ == 0) throw ConfigError("max_seq must be positive");
    Rng rng(seed);
    std::normal_distribution<double> normal(0.0, kInitStd);
    auto random = [&](std::string name, std::size_t r, std::size_t c) {
      std::vector<double> v(r * c);
      for (auto& x : v) x = normal(rng);
      params_.emplace_back(std::move(name), Tensor::matrix(r, c, std::move(v), true));
    };
    auto constant = [&](std::string name, std::size_t n, double value) {
      params_.emplace_back(std::move(name), Tensor({1, n}, std::vector<double>(n, value), true));
    };
    const std::size_t d = arch_.hidden, f = arch_.intermediate;
    random("embeddings.word", vocab_size_, d);
    random("embeddings.position", max_seq_, d);
    constant("embeddings.norm.gain", d, 1.0);
    constant("embeddings.norm.bias", d, 0.0);
    for (std::size_t l = 0; l < arch_.layers; ++l) {
      const std::string p = "layer." + std::to_string(l + 1) + ".";
      for (const char* proj : {"query", "key", "value", "output"}) {
        random(p + "attention." + proj + ".weight", d, d);
        constant(p + "attention." + proj + ".bias", d, 0.0);
      }
      constant(p + "attention.norm.gain", d, 1.0);
      constant(p + "attention.norm.bias", d, 0.0);
      random(p + "ffn.in.weight", d, f);
      constant(p + "ffn.in.bias", f, 0.0);
      random(p + "ffn.out.weight", f, d);
      constant(p + "ffn.out.bias", d, 0.0);
      constant(p + "ffn.norm.gain", d, 1.0);
      constant(p + "ffn.norm.bias", d, 0.0);
    }
  }

  Model(const Model& other)
      : arch_(other.arch_), vocab_size_(other.vocab_size_), max_seq_(other.max_seq_), seed_(other.seed_) {
    params_.reserve(other.params_.size());
    for (const auto& [name, t] : other.params_) params_.emplace_back(name, t.clone());
  }
  Model& operator=(const Model& other) {
    if (this != &other) *this = Model(other);
    return *this;
  }
  Model(Model&&) noexcept = default;
  Model& operator=(Model&&) noexcept = default;

  const ArchState& arch() const { return arch_; }
  std::size_t vocab_size() const { return vocab_size_; }
  std::size_t max_seq() const { return max_seq_; }
  std::uint64_t seed() const { return seed_; }

  const std::vector<NamedTensor>& named_parameters() const { return params_; }

  std::vector<Tensor> parameters() const {
    std::vector<Tensor> out;
    out.reserve(params_.size());
    for (const auto& [_, t] : params_) out.push_back(t);
    return out;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& [_, t] : params_) n += t.size();
    return n;
  }

  void set_trainable(bool on) {
    for (auto& [_, t] : params_) t.set_requires_grad(on);
  }

  const Tensor& embedding(std::size_t i) const { return params_[i].second; }
  const Tensor& layer_param(std::size_t layer0, Slot s) const {
    return params_[kEmbeddingParams + layer0 * kSlots + s].second;
  }

  // Replaces parameter values by name; shapes must match exactly.
  void load_values(const std::map<std::string, std::vector<double>>& values) {
    for (auto& [name, t] : params_) {
      auto it = values.find(name);
      if (it == values.end()) throw InputError("checkpoint lacks parameter '" + name + "'");
      if (it->second.size() != t.size()) throw DimensionError("parameter '" + name + "' has the wrong size in checkpoint");
      std::copy(it->second.begin(), it->second.end(), t.mutable_values().begin());
    }
  }

 private:
  ArchState arch_;
  std::size_t vocab_size_;
  std::size_t max_seq_;
  std::uint64_t seed_;
  std::vector<NamedTensor> params_;
};

inline Model build_model(const ArchState& arch, std::size_t vocab_size, std::size_t max_seq, std::uint64_t seed) {
  return Model(arch, vocab_size, max_seq, seed);
}

// Embeddings (word + position + norm), per layer 4 projections with biases, two
// norms and the two feed-forward projections with biases.
inline std::size_t param_count(const ArchState& arch, std::size_t vocab_size, std::size_t max_seq) {
  validate(arch);
  const std::size_t d = arch.hidden, f = arch.intermediate;
  const std::size_t embeddings = vocab_size * d + max_seq * d + 2 * d;
  const std::size_t attention = 4 * (d * d + d) + 2 * d;
  const std::size_t ffn = d * f + f + f * d + d + 2 * d;
  return embeddings + arch.layers * (attention + ffn);
}

// Runs a batch of equal-length sequences. Hidden states are stacked row-wise:
// rows [b*seq, (b+1)*seq) belong to sequence b.
inline ModelOutputs forward(const Model& model, std::span<const std::vector<int>> batch,
                            const std::set<std::size_t>& capture_qkv_layers = {}) {
  if (batch.empty()) throw InputError("forward on an empty batch");
  const std::size_t seq = batch.front().size();
  if (seq == 0) throw InputError("forward on an empty sequence");
  if (seq > model.max_seq()) {
    throw InputError("sequence length " + std::to_string(seq) + " exceeds max_seq " + std::to_string(model.max_seq()));
  }
  const auto& arch = model.arch();
  for (std::size_t layer : capture_qkv_layers) {
    if (layer == 0 || layer > arch.layers) throw ContractViolation("cannot capture Q/K/V of layer " + std::to_string(layer));
  }
  std::vector<int> ids, positions;
  ids.reserve(batch.size() * seq);
  for (const auto& s : batch) {
    if (s.size() != seq) throw InputError("sequences in a batch must share one length");
    for (int id : s) {
      if (id < 0 || static_cast<std::size_t>(id) >= model.vocab_size()) {
        throw InputError("token id " + std::to_string(id) + " outside vocabulary of " + std::to_string(model.vocab_size()));
      }
      ids.push_back(id);
    }
    for (std::size_t p = 0; p < seq; ++p) positions.push_back(static_cast<int>(p));
  }

  ModelOutputs out;
  out.batch = batch.size();
  out.seq_len = seq;
  Tensor x = layer_norm(add(gather_rows(model.embedding(0), ids), gather_rows(model.embedding(1), positions)),
                        model.embedding(2), model.embedding(3));

  const std::size_t heads = arch.heads, hd = arch.head_dim();
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(hd));
  using S = Model::Slot;
  for (std::size_t l = 0; l < arch.layers; ++l) {
    auto p = [&](S s) -> const Tensor& { return model.layer_param(l, s); };
    Tensor q = add_row(matmul(x, p(S::kQw)), p(S::kQb));
    Tensor k = add_row(matmul(x, p(S::kKw)), p(S::kKb));
    Tensor v = add_row(matmul(x, p(S::kVw)), p(S::kVb));
    if (capture_qkv_layers.contains(l + 1)) out.qkv[l + 1] = Qkv{q, k, v};

    std::vector<Tensor> per_sequence;
    per_sequence.reserve(batch.size());
    for (std::size_t b = 0; b < batch.size(); ++b) {
      std::vector<Tensor> per_head;
      per_head.reserve(heads);
      for (std::size_t h = 0; h < heads; ++h) {
        Tensor qh = slice(q, b * seq, seq, h * hd, hd);
        Tensor kh = slice(k, b * seq, seq, h * hd, hd);
        Tensor vh = slice(v, b * seq, seq, h * hd, hd);
        Tensor probs = softmax_rows(scale(matmul(qh, transpose(kh)), inv_sqrt));
        per_head.push_back(matmul(probs, vh));
      }
      per_sequence.push_back(heads == 1 ? per_head.front() : hcat(per_head));
    }
    Tensor context = batch.size() == 1 ? per_sequence.front() : vcat(per_sequence);
    Tensor attn = add_row(matmul(context, p(S::kOw)), p(S::kOb));
    x = layer_norm(add(x, attn), p(S::kAttnLnG), p(S::kAttnLnB));

    Tensor ff = activation(arch.activation, add_row(matmul(x, p(S::kFf1w)), p(S::kFf1b)));
    ff = add_row(matmul(ff, p(S::kFf2w)), p(S::kFf2b));
    x = layer_norm(add(x, ff), p(S::kFfLnG), p(S::kFfLnB));
    out.hidden_states.push_back(x);
  }
  return out;
}

inline ModelOutputs forward(const Model& model, const std::vector<int>& tokens,
                            const std::set<std::size_t>& capture_qkv_layers = {}) {
  return forward(model, std::span<const std::vector<int>>(&tokens, 1), capture_qkv_layers);
}

}  // namespace kdnas
