#pragma once

// Knowledge-distillation objectives and training loops.
//
// Hidden-state transfer: every mapped pair (student layer i, teacher layer j)
// owns a trainable projection W_i^j of shape d_s x d_t, and the loss is
//     sum_i sum_{j in g(i)} MSE(H^S_i W_i^j, H^T_j),
// with each MSE averaged over batch x sequence x teacher width.
//
// Relation transfer: Q, K and V of one teacher layer and one student layer are
// cut into A_r relation heads; each head yields a |x| x |x| relation matrix
// softmax(A A^T / sqrt(d_r)) and the loss is the mean cross entropy between
// teacher and student relations over {Q, K, V} x heads x rows x batch.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <array>
#include <map>
#include <mutex>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "kdnas/corpus.hpp"
#include "kdnas/errors.hpp"
#include "kdnas/mapping.hpp"
#include "kdnas/model.hpp"
#include "kdnas/optim.hpp"
#include "kdnas/rng.hpp"
#include "kdnas/tensor.hpp"

namespace kdnas {

using ProjectionKey = std::pair<std::size_t, std::size_t>;  // (student layer, teacher layer)

struct ProjectionSet {
  std::map<ProjectionKey, Tensor> weights;

  std::vector<Tensor> parameters() const {
    std::vector<Tensor> out;
    for (const auto& [_, w] : weights) out.push_back(w);
    return out;
  }
};

// Uniform(-a, a) with a = sqrt(6 / (d_s + d_t)) for every edge of the mapping.
inline ProjectionSet make_projections(const LayerMapping& mapping, std::size_t student_width, std::size_t teacher_width,
                                      std::uint64_t seed) {
  ProjectionSet set;
  Rng rng(seed);
  const double a = std::sqrt(6.0 / static_cast<double>(student_width + teacher_width));
  std::uniform_real_distribution<double> u(-a, a);
  for (const auto& edge : mapping.edges()) {
    std::vector<double> v(student_width * teacher_width);
    for (auto& x : v) x = u(rng);
    set.weights.emplace(edge, Tensor::matrix(student_width, teacher_width, std::move(v), true));
  }
  return set;
}

inline Tensor hs_loss(const ModelOutputs& student, const ModelOutputs& teacher, const LayerMapping& mapping,
                      const ProjectionSet& projections) {
  const auto edges = mapping.edges();
  if (edges.size() != projections.weights.size()) {
    throw ContractViolation("projection set holds " + std::to_string(projections.weights.size()) +
                            " matrices but the mapping has " + std::to_string(edges.size()) + " pairs");
  }
  std::vector<Tensor> terms;
  terms.reserve(edges.size());
  for (const auto& [i, j] : edges) {
    auto it = projections.weights.find({i, j});
    if (it == projections.weights.end()) {
      throw ContractViolation("no projection for student layer " + std::to_string(i) + " -> teacher layer " + std::to_string(j));
    }
    terms.push_back(mse(matmul(student.hidden(i), it->second), teacher.hidden(j)));
  }
  return add_scalars(terms);
}

inline Tensor minilm_loss(const ModelOutputs& student, const ModelOutputs& teacher, std::size_t teacher_layer,
                          std::size_t student_layer, std::size_t relation_heads) {
  const Qkv& t = teacher.relations_source(teacher_layer);
  const Qkv& s = student.relations_source(student_layer);
  const std::size_t dt = t.q.cols(), ds = s.q.cols();
  if (relation_heads == 0 || dt % relation_heads != 0 || ds % relation_heads != 0) {
    throw ConfigError(std::to_string(relation_heads) + " relation heads do not divide widths " + std::to_string(ds) +
                      " (student) and " + std::to_string(dt) + " (teacher)");
  }
  if (student.batch != teacher.batch || student.seq_len != teacher.seq_len) {
    throw DimensionError("student and teacher outputs cover different batches");
  }
  const std::size_t seq = student.seq_len;
  const std::size_t drt = dt / relation_heads, drs = ds / relation_heads;
  auto relation = [seq](const Tensor& m, std::size_t b, std::size_t r, std::size_t dr) {
    Tensor a = slice(m, b * seq, seq, r * dr, dr);
    return softmax_rows(scale(matmul(a, transpose(a)), 1.0 / std::sqrt(static_cast<double>(dr))));
  };
  std::vector<Tensor> terms;
  terms.reserve(3 * relation_heads * student.batch);
  const std::pair<const Tensor*, const Tensor*> sources[] = {{&t.q, &s.q}, {&t.k, &s.k}, {&t.v, &s.v}};
  for (const auto& [tm, sm] : sources)
    for (std::size_t b = 0; b < student.batch; ++b)
      for (std::size_t r = 0; r < relation_heads; ++r)
        terms.push_back(row_cross_entropy(relation(*tm, b, r, drt), relation(*sm, b, r, drs)));
  return scale(add_scalars(terms), 1.0 / static_cast<double>(terms.size()));
}

enum class Objective { hs, minilm };

inline std::string_view objective_name(Objective o) { return o == Objective::hs ? "hs" : "minilm"; }

inline Objective objective_from_name(std::string_view s) {
  if (s == "hs") return Objective::hs;
  if (s == "minilm") return Objective::minilm;
  throw ConfigError("unknown distillation objective '" + std::string(s) + "'");
}

struct KDRunConfig {
  double peak_lr = 8e-4;
  AdamW::Options adam{};  // beta1 0.9, beta2 0.98
  ScheduleKind schedule = ScheduleKind::linear;
  // Absolute warmup length; when zero, warmup_fraction of the total step count.
  std::size_t warmup_steps = 0;
  double warmup_fraction = 0.05;
  std::size_t batch_size = 32;
  std::size_t epochs = 1;
  std::optional<std::size_t> steps;  // overrides epochs when set
  std::uint64_t seed = 0;
  Objective objective = Objective::hs;
  MappingStrategy mapping = MappingStrategy::uniform_last;
  std::size_t relation_heads = 4;
  // 0 selects the second-to-last teacher layer.
  std::size_t teacher_relation_layer = 0;

  void validate() const {
    if (!(peak_lr > 0.0)) throw ConfigError("learning rate must be positive");
    if (batch_size == 0) throw ConfigError("batch size must be positive");
    if (warmup_fraction < 0.0 || warmup_fraction > 1.0) throw ConfigError("warmup fraction must lie in [0, 1]");
  }
};

using LossHistory = std::vector<double>;

inline void write_loss_csv(const std::filesystem::path& path, const LossHistory& history) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path);
  if (!os) throw IoError("cannot write " + path.string());
  os << "step,loss\n";
  char buf[64];
  for (std::size_t i = 0; i < history.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%.17g", history[i]);
    os << (i + 1) << ',' << buf << '\n';
  }
}

// Frozen teacher plus memoized activations, keyed by sequence content so the
// same store serves every candidate, subset and held-out slice of a corpus.
// Only the layers some objective asked for are kept. Safe to share between
// threads.
class TeacherActivations {
 public:
  explicit TeacherActivations(const Model& teacher) : teacher_(teacher) { teacher_.set_trainable(false); }
  TeacherActivations(const TeacherActivations&) = delete;
  TeacherActivations& operator=(const TeacherActivations&) = delete;

  const Model& teacher() const { return teacher_; }

  ModelOutputs outputs(const std::vector<Sequence>& batch, const std::set<std::size_t>& layers,
                       std::optional<std::size_t> qkv_layer) {
    ensure(batch, layers, qkv_layer);
    const std::size_t seq = batch.empty() ? 0 : batch.front().size();
    const std::size_t width = teacher_.arch().hidden;
    ModelOutputs out;
    out.batch = batch.size();
    out.seq_len = seq;
    out.hidden_states.resize(teacher_.arch().layers);
    std::lock_guard lock(mutex_);
    auto stack = [&](auto pick) {
      std::vector<double> v;
      v.reserve(batch.size() * seq * width);
      for (const auto& s : batch) {
        const auto& src = pick(entries_.at(s));
        v.insert(v.end(), src.begin(), src.end());
      }
      return Tensor::matrix(batch.size() * seq, width, std::move(v));
    };
    for (auto l : layers) out.hidden_states[l - 1] = stack([l](const Entry& e) -> const std::vector<double>& { return e.hidden.at(l); });
    if (qkv_layer) {
      const auto l = *qkv_layer;
      out.qkv[l] = Qkv{stack([l](const Entry& e) -> const std::vector<double>& { return e.qkv.at(l)[0]; }),
                       stack([l](const Entry& e) -> const std::vector<double>& { return e.qkv.at(l)[1]; }),
                       stack([l](const Entry& e) -> const std::vector<double>& { return e.qkv.at(l)[2]; })};
    }
    return out;
  }

  std::size_t cached_sequences() const {
    std::lock_guard lock(mutex_);
    return entries_.size();
  }

 private:
  struct Entry {
    std::map<std::size_t, std::vector<double>> hidden;
    std::map<std::size_t, std::array<std::vector<double>, 3>> qkv;
  };
  struct SequenceHash {
    std::size_t operator()(const Sequence& s) const noexcept {
      std::uint64_t h = 0xcbf29ce484222325ULL;
      for (int t : s) h = mix_seed(h ^ static_cast<std::uint64_t>(t));
      return static_cast<std::size_t>(h);
    }
  };

  bool complete(const Sequence& s, const std::set<std::size_t>& layers, std::optional<std::size_t> qkv_layer) const {
    auto it = entries_.find(s);
    if (it == entries_.end()) return false;
    for (auto l : layers)
      if (!it->second.hidden.contains(l)) return false;
    return !qkv_layer || it->second.qkv.contains(*qkv_layer);
  }

  void ensure(const std::vector<Sequence>& batch, const std::set<std::size_t>& layers, std::optional<std::size_t> qkv_layer) {
    std::vector<Sequence> missing;
    {
      std::lock_guard lock(mutex_);
      std::set<Sequence> seen;
      for (const auto& s : batch)
        if (!complete(s, layers, qkv_layer) && seen.insert(s).second) missing.push_back(s);
    }
    if (missing.empty()) return;
    std::set<std::size_t> capture;
    if (qkv_layer) capture.insert(*qkv_layer);
    const std::size_t rows = missing.front().size() * teacher_.arch().hidden;
    auto rows_of = [&](const Tensor& t, std::size_t b) {
      return std::vector<double>(t.values().begin() + static_cast<std::ptrdiff_t>(b * rows),
                                 t.values().begin() + static_cast<std::ptrdiff_t>((b + 1) * rows));
    };
    constexpr std::size_t kChunk = 32;
    for (std::size_t start = 0; start < missing.size(); start += kChunk) {
      const std::vector<Sequence> chunk(missing.begin() + static_cast<std::ptrdiff_t>(start),
                                        missing.begin() + static_cast<std::ptrdiff_t>(std::min(missing.size(), start + kChunk)));
      const auto out = forward(teacher_, chunk, capture);
      std::lock_guard lock(mutex_);
      for (std::size_t b = 0; b < chunk.size(); ++b) {
        auto& e = entries_[chunk[b]];
        for (auto l : layers) e.hidden.try_emplace(l, rows_of(out.hidden(l), b));
        if (qkv_layer) {
          const auto& q = out.relations_source(*qkv_layer);
          e.qkv.try_emplace(*qkv_layer, std::array<std::vector<double>, 3>{rows_of(q.q, b), rows_of(q.k, b), rows_of(q.v, b)});
        }
      }
    }
  }

  Model teacher_;
  mutable std::mutex mutex_;
  std::unordered_map<Sequence, Entry, SequenceHash> entries_;
};

namespace detail {

inline std::size_t relation_teacher_layer(const KDRunConfig& cfg, std::size_t teacher_layers) {
  if (cfg.teacher_relation_layer != 0) return cfg.teacher_relation_layer;
  return teacher_layers > 1 ? teacher_layers - 1 : teacher_layers;
}

}  // namespace detail

// Objective-specific state shared by training and evaluation.
struct DistillObjective {
  Objective objective = Objective::hs;
  LayerMapping mapping;
  std::size_t teacher_relation_layer = 0;
  std::size_t student_relation_layer = 0;
  std::size_t relation_heads = 4;

  static DistillObjective make(const KDRunConfig& cfg, const ArchState& teacher, const ArchState& student) {
    DistillObjective o;
    o.objective = cfg.objective;
    o.relation_heads = cfg.relation_heads;
    if (cfg.objective == Objective::hs) {
      o.mapping = build_mapping(cfg.mapping, teacher.layers, student.layers);
    } else {
      o.teacher_relation_layer = detail::relation_teacher_layer(cfg, teacher.layers);
      o.student_relation_layer = student.layers;
      if (o.teacher_relation_layer > teacher.layers) throw ConfigError("relation layer beyond teacher depth");
      if (teacher.hidden % cfg.relation_heads != 0 || student.hidden % cfg.relation_heads != 0) {
        throw ConfigError(std::to_string(cfg.relation_heads) + " relation heads do not divide the model widths");
      }
    }
    return o;
  }

  std::set<std::size_t> teacher_layers() const {
    std::set<std::size_t> out;
    for (const auto& [_, j] : mapping.edges()) out.insert(j);
    return out;
  }

  std::optional<std::size_t> teacher_qkv() const {
    if (objective == Objective::minilm) return teacher_relation_layer;
    return std::nullopt;
  }

  std::set<std::size_t> student_capture() const {
    if (objective == Objective::minilm) return {student_relation_layer};
    return {};
  }

  Tensor loss(const ModelOutputs& s, const ModelOutputs& t, const ProjectionSet& p) const {
    if (objective == Objective::hs) return hs_loss(s, t, mapping, p);
    return minilm_loss(s, t, teacher_relation_layer, student_relation_layer, relation_heads);
  }
};

struct Distilled {
  Model student;
  ProjectionSet projections;
  DistillObjective objective;
  LossHistory history;
};

// Full training loop. The teacher is copied and frozen; the caller's instance is
// never touched.
inline Distilled distill(TeacherActivations& activations, const ArchState& student_arch, const BatchStream& corpus,
                         const KDRunConfig& cfg) {
  const Model& teacher = activations.teacher();
  cfg.validate();
  if (corpus.empty()) throw InputError("distillation corpus is empty");
  const auto objective = DistillObjective::make(cfg, teacher.arch(), student_arch);
  Distilled out{Model(student_arch, teacher.vocab_size(), teacher.max_seq(), mix_seed(cfg.seed, "student")),
                ProjectionSet{}, objective, {}};
  if (objective.objective == Objective::hs) {
    out.projections = make_projections(objective.mapping, student_arch.hidden, teacher.arch().hidden,
                                       mix_seed(cfg.seed, "projections"));
  }
  const BatchStream stream = corpus.with_batch_size(cfg.batch_size);
  const std::size_t total = cfg.steps ? *cfg.steps : cfg.epochs * stream.batches_per_epoch();
  if (total == 0) return out;

  auto params = out.student.parameters();
  for (const auto& p : out.projections.parameters()) params.push_back(p);
  AdamW opt(params, cfg.adam);
  const std::size_t warmup =
      cfg.warmup_steps ? cfg.warmup_steps : static_cast<std::size_t>(cfg.warmup_fraction * static_cast<double>(total));
  const LrSchedule schedule{cfg.schedule, cfg.peak_lr, warmup, total, 0.9};

  out.history.reserve(total);
  for (std::size_t epoch = 0, step = 0; step < total; ++epoch) {
    for (const auto& idx : stream.epoch_batches(epoch, cfg.seed)) {
      if (step == total) break;
      const auto batch = stream.gather(idx);
      const auto t_out = activations.outputs(batch, objective.teacher_layers(), objective.teacher_qkv());
      Tensor loss;
      try {
        loss = objective.loss(forward(out.student, batch, objective.student_capture()), t_out, out.projections);
      } catch (const NumericError& e) {
        throw TrainingDiverged(std::string("distillation diverged: ") + e.what(), step + 1);
      }
      const double value = loss.item();
      if (!std::isfinite(value)) throw TrainingDiverged("distillation loss is not finite", step + 1);
      out.history.push_back(value);
      opt.zero_grad();
      loss.backward();
      opt.step(schedule.at(step));
      ++step;
    }
  }
  return out;
}

inline Distilled distill(const Model& teacher, const ArchState& student_arch, const BatchStream& corpus,
                         const KDRunConfig& cfg) {
  TeacherActivations activations(teacher);
  return distill(activations, student_arch, corpus, cfg);
}

// Trained student plus per-step losses; projections are dropped.
inline std::pair<Model, LossHistory> run_kd(const Model& teacher, const ArchState& student_arch,
                                            const BatchStream& corpus, const KDRunConfig& cfg) {
  auto d = distill(teacher, student_arch, corpus, cfg);
  return {std::move(d.student), std::move(d.history)};
}

// Mean objective over a stream (weighted by batch size, so it equals the
// per-element mean over the whole stream for the hidden-state objective).
inline double evaluate_loss(TeacherActivations& activations, const Distilled& d, const BatchStream& stream,
                            std::size_t batch_size = 32) {
  if (stream.empty()) throw InputError("evaluation stream is empty");
  if (batch_size == 0) throw ConfigError("batch size must be positive");
  const BatchStream& s = stream;
  Model student = d.student;
  student.set_trainable(false);
  ProjectionSet frozen;
  for (const auto& [k, w] : d.projections.weights) frozen.weights.emplace(k, w.detach());
  double total = 0.0;
  for (std::size_t i = 0; i < s.size(); i += batch_size) {
    std::vector<std::size_t> idx;
    for (std::size_t j = i; j < std::min(s.size(), i + batch_size); ++j) idx.push_back(j);
    const auto batch = s.gather(idx);
    const auto loss = d.objective.loss(forward(student, batch, d.objective.student_capture()),
                                       activations.outputs(batch, d.objective.teacher_layers(), d.objective.teacher_qkv()), frozen);
    total += loss.item() * static_cast<double>(idx.size());
  }
  return total / static_cast<double>(s.size());
}

inline double evaluate_loss(const Model& teacher, const Distilled& d, const BatchStream& stream,
                            std::size_t batch_size = 32) {
  TeacherActivations activations(teacher);
  return evaluate_loss(activations, d, stream, batch_size);
}

struct MiniKdResult {
  double final_loss = 0.0;
  LossHistory history;
  std::size_t train_sequences = 0;
  std::size_t held_out_sequences = 0;
};

inline constexpr double kDefaultProxyFraction = 0.3;
inline constexpr std::size_t kDefaultProxyEpochs = 4;

// Reduced distillation: train on a proxy fraction of the non-held-out pool for
// `epochs`, report the objective on the held-out slice. The held-out slice and
// the proxy subset depend only on the corpus seed, so every candidate sees the
// same data; `seed` drives initialization and batch order.
inline MiniKdResult mini_kd_report(TeacherActivations& teacher, const ArchState& state, const BatchStream& corpus,
                                   double proxy_fraction, std::size_t epochs, std::uint64_t seed,
                                   KDRunConfig base = {}) {
  if (!(proxy_fraction > 0.0 && proxy_fraction <= 1.0)) throw InputError("proxy fraction must lie in (0, 1]");
  const auto split = split_held_out(corpus, kHeldOutFraction, corpus.seed());
  const auto proxy = proxy_subset(split.pool, proxy_fraction, corpus.seed());
  if (proxy.empty()) throw InputError("proxy subset is empty");
  base.epochs = epochs;
  base.steps.reset();
  base.seed = seed;
  auto d = distill(teacher, state, proxy, base);
  MiniKdResult r;
  r.final_loss = evaluate_loss(teacher, d, split.held_out, base.batch_size);
  r.history = std::move(d.history);
  r.train_sequences = proxy.size();
  r.held_out_sequences = split.held_out.size();
  return r;
}

inline MiniKdResult mini_kd_report(const Model& teacher, const ArchState& state, const BatchStream& corpus,
                                   double proxy_fraction, std::size_t epochs, std::uint64_t seed,
                                   const KDRunConfig& base = {}) {
  TeacherActivations activations(teacher);
  return mini_kd_report(activations, state, corpus, proxy_fraction, epochs, seed, base);
}

inline double mini_kd(TeacherActivations& teacher, const ArchState& state, const BatchStream& corpus,
                      double proxy_fraction = kDefaultProxyFraction, std::size_t epochs = kDefaultProxyEpochs,
                      std::uint64_t seed = 0, const KDRunConfig& base = {}) {
  return mini_kd_report(teacher, state, corpus, proxy_fraction, epochs, seed, base).final_loss;
}

inline double mini_kd(const Model& teacher, const ArchState& state, const BatchStream& corpus,
                      double proxy_fraction = kDefaultProxyFraction, std::size_t epochs = kDefaultProxyEpochs,
                      std::uint64_t seed = 0, const KDRunConfig& base = {}) {
  return mini_kd_report(teacher, state, corpus, proxy_fraction, epochs, seed, base).final_loss;
}

// Short masked-token warmup for a randomly initialized teacher. The output layer
// is tied to the word embeddings; masked positions take the padding id.
inline LossHistory warmup_teacher(Model& teacher, const BatchStream& corpus, std::size_t steps, double lr,
                                  std::uint64_t seed) {
  LossHistory history;
  if (steps == 0) return history;
  if (corpus.empty()) throw InputError("warmup corpus is empty");
  teacher.set_trainable(true);
  AdamW opt(teacher.parameters(), AdamW::Options{});
  Rng rng(mix_seed(seed, "mlm"));
  const auto& word = teacher.embedding(0);
  const std::size_t vocab = teacher.vocab_size();
  for (std::size_t epoch = 0, step = 0; step < steps; ++epoch) {
    for (const auto& idx : corpus.epoch_batches(epoch, seed)) {
      if (step == steps) break;
      std::vector<Sequence> inputs;
      std::vector<int> rows;
      std::vector<double> target;
      const std::size_t seq = corpus.seq_len();
      for (std::size_t b = 0; b < idx.size(); ++b) {
        auto [masked, positions] = mask_tokens(corpus[idx[b]], kPadId, rng);
        for (auto p : positions) {
          rows.push_back(static_cast<int>(b * seq + p));
          std::vector<double> onehot(vocab, 0.0);
          onehot[static_cast<std::size_t>(corpus[idx[b]][p])] = 1.0;
          target.insert(target.end(), onehot.begin(), onehot.end());
        }
        inputs.push_back(std::move(masked));
      }
      const auto out = forward(teacher, inputs);
      Tensor logits = matmul(gather_rows(out.hidden_states.back(), rows), transpose(word));
      Tensor loss = row_cross_entropy(Tensor::matrix(rows.size(), vocab, std::move(target)), softmax_rows(logits));
      if (!std::isfinite(loss.item())) throw TrainingDiverged("teacher warmup loss is not finite", step + 1);
      history.push_back(loss.item());
      opt.zero_grad();
      loss.backward();
      opt.step(lr);
      ++step;
    }
  }
  teacher.set_trainable(false);
  return history;
}

}  // namespace kdnas
