#pragma once

// Minibatch SGD with reduce-on-plateau and early stopping, evaluation, and
// checkpoint persistence.

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <ostream>
#include <string>
#include <type_traits>
#include <vector>

#include <nlohmann/json.hpp>

#include "fer/ensemble.hpp"
#include "fer/error.hpp"
#include "fer/fer_data.hpp"
#include "fer/layers.hpp"
#include "fer/metrics.hpp"
#include "fer/model.hpp"
#include "fer/random.hpp"
#include "fer/tensor_file.hpp"

namespace fer {

struct TrainingConfig {
  double initial_lr = 0.01;
  double momentum = 0.9;
  std::size_t batch_size = 64;
  std::size_t max_epochs = 100;
  double plateau_factor = 0.9;
  std::size_t plateau_patience = 3;
  std::size_t early_stop_patience = 8;
  double min_improvement = 1e-4;
  std::uint64_t seed = 0;
  bool augment_flip = false;

  void validate() const {
    if (!(initial_lr > 0.0)) throw ConfigError("initial_lr must be positive");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must lie in [0, 1)");
    if (batch_size == 0) throw ConfigError("batch_size must be positive");
    if (!(plateau_factor > 0.0 && plateau_factor < 1.0)) {
      throw ConfigError("plateau_factor must lie in (0, 1)");
    }
    if (plateau_patience < 1 || early_stop_patience < 1) throw ConfigError("patiences must be >= 1");
    if (!(min_improvement >= 0.0)) throw ConfigError("min_improvement must be non-negative");
  }

  friend bool operator==(const TrainingConfig&, const TrainingConfig&) = default;
};

inline void to_json(nlohmann::json& j, const TrainingConfig& c) {
  j = {{"initial_lr", c.initial_lr},
       {"momentum", c.momentum},
       {"batch_size", c.batch_size},
       {"max_epochs", c.max_epochs},
       {"plateau_factor", c.plateau_factor},
       {"plateau_patience", c.plateau_patience},
       {"early_stop_patience", c.early_stop_patience},
       {"min_improvement", c.min_improvement},
       {"seed", c.seed},
       {"augment_flip", c.augment_flip}};
}

/// Missing keys keep their defaults; unknown keys and wrong types are errors.
inline void from_json(const nlohmann::json& j, TrainingConfig& c) {
  if (!j.is_object()) throw ConfigError("training config must be a JSON object");
  const nlohmann::json known = c;
  for (const auto& [key, value] : j.items()) {
    if (!known.contains(key)) throw ConfigError("unknown config key '" + key + "'");
  }
  auto get = [&](const char* key, auto& field) {
    if (!j.contains(key)) return;
    try {
      j.at(key).get_to(field);
    } catch (const nlohmann::json::exception&) {
      throw ConfigError(std::string("config key '") + key + "' has the wrong type");
    }
  };
  auto get_count = [&](const char* key, auto& field) {
    if (!j.contains(key)) return;
    const auto& v = j.at(key);
    if (!v.is_number_integer() || (!v.is_number_unsigned() && v.get<std::int64_t>() < 0)) {
      throw ConfigError(std::string("config key '") + key + "' must be a non-negative integer");
    }
    field = v.get<std::remove_reference_t<decltype(field)>>();
  };
  get("initial_lr", c.initial_lr);
  get("momentum", c.momentum);
  get_count("batch_size", c.batch_size);
  get_count("max_epochs", c.max_epochs);
  get("plateau_factor", c.plateau_factor);
  get_count("plateau_patience", c.plateau_patience);
  get_count("early_stop_patience", c.early_stop_patience);
  get("min_improvement", c.min_improvement);
  get_count("seed", c.seed);
  get("augment_flip", c.augment_flip);
}

inline TrainingConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("'" + path.string() + "': " + e.what());
  }
  TrainingConfig c = j.get<TrainingConfig>();
  c.validate();
  return c;
}

struct HistoryRow {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double train_acc = 0.0;
  double val_loss = 0.0;
  double val_acc = 0.0;
  double lr = 0.0;

  friend bool operator==(const HistoryRow&, const HistoryRow&) = default;
};

/// Mutable loop state. Everything needed to resume bit-exactly lives here or
/// in the model/optimizer tensors.
struct TrainState {
  std::size_t epoch = 0;  // completed epochs
  double current_lr = 0.0;
  double best_val_loss = std::numeric_limits<double>::infinity();
  std::size_t epochs_since_loss_improved = 0;
  double best_val_acc = -std::numeric_limits<double>::infinity();
  std::size_t epochs_since_acc_improved = 0;
  std::size_t best_epoch = 0;
  bool stopped_early = false;
  std::string rng_state;
  std::vector<HistoryRow> history;

  static TrainState initial(const TrainingConfig& cfg) {
    TrainState s;
    s.current_lr = cfg.initial_lr;
    s.rng_state = fer::rng_state(Rng(cfg.seed));
    return s;
  }

  friend bool operator==(const TrainState&, const TrainState&) = default;
};

namespace detail {

// JSON has no infinities; encode them as strings.
inline nlohmann::json real_json(double v) {
  if (std::isfinite(v)) return v;
  if (std::isnan(v)) return "nan";
  return v > 0 ? "inf" : "-inf";
}

inline double real_from(const nlohmann::json& j) {
  if (j.is_number()) return j.get<double>();
  const std::string s = j.get<std::string>();
  if (s == "inf") return std::numeric_limits<double>::infinity();
  if (s == "-inf") return -std::numeric_limits<double>::infinity();
  if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
  throw ParseError("bad real '" + s + "'");
}

}  // namespace detail

inline void to_json(nlohmann::json& j, const TrainState& s) {
  nlohmann::json hist = nlohmann::json::array();
  for (const auto& r : s.history) {
    hist.push_back({r.epoch, detail::real_json(r.train_loss), detail::real_json(r.train_acc),
                    detail::real_json(r.val_loss), detail::real_json(r.val_acc),
                    detail::real_json(r.lr)});
  }
  j = {{"epoch", s.epoch},
       {"current_lr", detail::real_json(s.current_lr)},
       {"best_val_loss", detail::real_json(s.best_val_loss)},
       {"epochs_since_loss_improved", s.epochs_since_loss_improved},
       {"best_val_acc", detail::real_json(s.best_val_acc)},
       {"epochs_since_acc_improved", s.epochs_since_acc_improved},
       {"best_epoch", s.best_epoch},
       {"stopped_early", s.stopped_early},
       {"rng_state", s.rng_state},
       {"history", hist}};
}

inline void from_json(const nlohmann::json& j, TrainState& s) {
  s.epoch = j.at("epoch");
  s.current_lr = detail::real_from(j.at("current_lr"));
  s.best_val_loss = detail::real_from(j.at("best_val_loss"));
  s.epochs_since_loss_improved = j.at("epochs_since_loss_improved");
  s.best_val_acc = detail::real_from(j.at("best_val_acc"));
  s.epochs_since_acc_improved = j.at("epochs_since_acc_improved");
  s.best_epoch = j.at("best_epoch");
  s.stopped_early = j.at("stopped_early");
  s.rng_state = j.at("rng_state");
  s.history.clear();
  for (const auto& r : j.at("history")) {
    s.history.push_back({r.at(0).get<std::size_t>(), detail::real_from(r.at(1)),
                         detail::real_from(r.at(2)), detail::real_from(r.at(3)),
                         detail::real_from(r.at(4)), detail::real_from(r.at(5))});
  }
}

/// Reduce-on-plateau on validation loss: an epoch improves when the loss drops
/// below best - min_improvement; after `plateau_patience` consecutive
/// non-improving epochs the rate is multiplied by `plateau_factor` and the
/// counter restarts.
inline void lr_on_plateau_step(TrainState& s, double val_loss, const TrainingConfig& cfg) {
  if (val_loss < s.best_val_loss - cfg.min_improvement) {
    s.best_val_loss = val_loss;
    s.epochs_since_loss_improved = 0;
    return;
  }
  if (++s.epochs_since_loss_improved >= cfg.plateau_patience) {
    s.current_lr *= cfg.plateau_factor;
    s.epochs_since_loss_improved = 0;
  }
}

/// True once validation accuracy has failed to exceed best + min_improvement
/// for `early_stop_patience` consecutive epochs.
inline bool early_stop_check(TrainState& s, double val_acc, const TrainingConfig& cfg) {
  if (val_acc > s.best_val_acc + cfg.min_improvement) {
    s.best_val_acc = val_acc;
    s.epochs_since_acc_improved = 0;
    return false;
  }
  return ++s.epochs_since_acc_improved >= cfg.early_stop_patience;
}

/// SGD with classical momentum: v <- mu v + g, w <- w - lr v.
template <typename T>
class SgdMomentum {
 public:
  void step(const std::vector<ParamRef<T>>& params, double lr, double momentum) {
    if (velocity_.empty()) {
      for (const auto& p : params) velocity_.emplace_back(p.value->shape());
    }
    if (velocity_.size() != params.size()) throw Error("optimizer bound to a different model");
    const T mu = static_cast<T>(momentum), rate = static_cast<T>(lr);
    for (std::size_t k = 0; k < params.size(); ++k) {
      Tensor<T>& v = velocity_[k];
      Tensor<T>& w = *params[k].value;
      const Tensor<T>& g = *params[k].grad;
      for (std::size_t i = 0; i < w.size(); ++i) {
        v[i] = mu * v[i] + g[i];
        w[i] -= rate * v[i];
      }
    }
  }

  std::vector<Tensor<T>>& velocity() { return velocity_; }
  const std::vector<Tensor<T>>& velocity() const { return velocity_; }

 private:
  std::vector<Tensor<T>> velocity_;
};

struct EvalResult {
  Metrics metrics;
  double loss = 0.0;  // mean cross-entropy, no regularization
};

/// Infer-mode pass over a split in file order.
template <typename T>
EvalResult evaluate_with_loss(Model<T>& model, const Dataset& split, std::size_t batch_size) {
  if (split.empty()) throw ConfigError("cannot evaluate an empty split");
  Rng unused(0);
  std::vector<std::size_t> predicted;
  std::vector<int> labels;
  double loss_sum = 0.0;
  for (std::size_t start = 0; start < split.size(); start += batch_size) {
    const std::size_t n = std::min(batch_size, split.size() - start);
    std::vector<std::size_t> idx(n);
    std::vector<int> y(n);
    for (std::size_t i = 0; i < n; ++i) {
      idx[i] = start + i;
      y[i] = split.examples[start + i].label;
    }
    const auto ce = softmax_cross_entropy(model.forward(make_batch<T>(split, idx), Mode::infer, unused), y);
    loss_sum += ce.loss * static_cast<double>(n);
    for (std::size_t p : argmax(ce.probs, 1)) predicted.push_back(p);
    labels.insert(labels.end(), y.begin(), y.end());
  }
  return {compute_metrics(predicted, labels), loss_sum / static_cast<double>(split.size())};
}

template <typename T>
Metrics evaluate(Model<T>& model, const Dataset& split, std::size_t batch_size) {
  return evaluate_with_loss(model, split, batch_size).metrics;
}

/// Infer-mode class probabilities keyed by example id.
template <typename T>
ProbMatrix predict_probs(Model<T>& model, const Dataset& split, std::size_t batch_size) {
  if (split.empty()) throw ConfigError("cannot predict on an empty split");
  Rng unused(0);
  ProbMatrix out;
  for (std::size_t start = 0; start < split.size(); start += batch_size) {
    const std::size_t n = std::min(batch_size, split.size() - start);
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = start + i;
    const auto probs = model_forward(model, make_batch<T>(split, idx), Mode::infer, unused);
    for (std::size_t i = 0; i < n; ++i) out.ids.push_back(example_id(split.examples[start + i]));
    for (T p : probs.data()) out.probs.push_back(static_cast<double>(p));
  }
  return out;
}

/// Called after every epoch with the updated state and whether validation
/// accuracy reached a new best in that epoch.
using EpochCallback = std::function<void(const TrainState&, bool val_acc_improved)>;

/// Runs epochs until max_epochs or early stop, starting from `state` (fresh or
/// resumed). Returns the final state; its history gains one row per epoch.
template <typename T>
TrainState train(Model<T>& model, SgdMomentum<T>& optimizer, const Dataset& train_set,
                 const Dataset& val_set, const TrainingConfig& cfg, TrainState state,
                 const EpochCallback& on_epoch_end = {}) {
  cfg.validate();
  if (train_set.empty() || val_set.empty()) throw ConfigError("train and val splits must be non-empty");
  Rng rng = rng_from_state(state.rng_state);
  auto params = model.params();

  while (state.epoch < cfg.max_epochs && !state.stopped_early) {
    const std::size_t epoch = state.epoch + 1;
    std::vector<std::size_t> order(train_set.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    shuffle(order, rng);

    // Chunk into batches; a trailing batch of one joins its predecessor
    // because train-mode batchnorm needs at least two examples.
    std::vector<std::pair<std::size_t, std::size_t>> batches;
    for (std::size_t s = 0; s < order.size(); s += cfg.batch_size) {
      batches.emplace_back(s, std::min(order.size(), s + cfg.batch_size));
    }
    if (batches.size() > 1 && batches.back().second - batches.back().first == 1) {
      batches[batches.size() - 2].second = batches.back().second;
      batches.pop_back();
    }

    double loss_sum = 0.0;
    std::size_t correct = 0;
    for (std::size_t b = 0; b < batches.size(); ++b) {
      const auto [lo, hi] = batches[b];
      std::span<const std::size_t> idx(order.data() + lo, hi - lo);
      std::vector<int> labels(idx.size());
      for (std::size_t i = 0; i < idx.size(); ++i) labels[i] = train_set.examples[idx[i]].label;
      std::vector<std::uint8_t> flip;
      if (cfg.augment_flip) {
        flip.resize(idx.size());
        for (auto& f : flip) f = uniform01(rng) < 0.5;
      }

      const auto logits = model.forward(make_batch<T>(train_set, idx, flip), Mode::train, rng);
      const auto ce = softmax_cross_entropy(logits, labels);
      model.backward(ce.grad_logits);
      const double loss = ce.loss + l2_penalty(params, true);
      if (!std::isfinite(loss)) {
        throw TrainingError("non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                            std::to_string(b + 1));
      }
      optimizer.step(params, state.current_lr, cfg.momentum);

      loss_sum += loss * static_cast<double>(idx.size());
      const auto pred = argmax(ce.probs, 1);
      for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == static_cast<std::size_t>(labels[i]);
    }

    const EvalResult val = evaluate_with_loss(model, val_set, cfg.batch_size);
    const double n = static_cast<double>(train_set.size());
    state.history.push_back(
        {epoch, loss_sum / n, static_cast<double>(correct) / n, val.loss, val.metrics.accuracy,
         state.current_lr});
    lr_on_plateau_step(state, val.loss, cfg);
    state.stopped_early = early_stop_check(state, val.metrics.accuracy, cfg);
    const bool improved = state.epochs_since_acc_improved == 0;
    if (improved) state.best_epoch = epoch;
    state.epoch = epoch;
    state.rng_state = rng_state(rng);
    if (on_epoch_end) on_epoch_end(state, improved);
  }
  return state;
}

/// `epoch,train_loss,train_acc,val_loss,val_acc,lr`, 9 significant digits.
inline void write_history_csv(const std::vector<HistoryRow>& history, std::ostream& out) {
  out << "epoch,train_loss,train_acc,val_loss,val_acc,lr\n";
  char buf[256];
  for (const auto& r : history) {
    std::snprintf(buf, sizeof buf, "%zu,%.9g,%.9g,%.9g,%.9g,%.9g\n", r.epoch, r.train_loss,
                  r.train_acc, r.val_loss, r.val_acc, r.lr);
    out << buf;
  }
}

inline void write_history_csv(const std::vector<HistoryRow>& history,
                              const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  write_history_csv(history, out);
}

// ---------------------------------------------------------------------------
// Checkpoints

template <typename T>
void save_checkpoint(const std::filesystem::path& path, Model<T>& model,
                     const SgdMomentum<T>& optimizer, const TrainState& state,
                     const TrainingConfig& cfg) {
  const auto tensors = model.state_tensors();
  const auto params = model.params();
  std::vector<TensorEntry> entries;
  for (const auto& t : tensors) entries.push_back({t.name, t.value->shape(), dtype_name<T>()});
  const auto& vel = optimizer.velocity();
  if (!vel.empty() && vel.size() != params.size()) throw Error("optimizer bound to a different model");
  for (std::size_t k = 0; k < vel.size(); ++k) {
    entries.push_back({"optimizer." + params[k].name + ".velocity", vel[k].shape(), dtype_name<T>()});
  }
  nlohmann::json manifest = {{"kind", "fer-checkpoint"},
                             {"spec", model.spec()},
                             {"config", cfg},
                             {"state", state}};
  TensorFileWriter w(path, std::move(manifest), std::move(entries));
  for (const auto& t : tensors) w.write_next<T>(t.value->data());
  for (const auto& v : vel) w.write_next<T>(v.data());
  w.close();
}

template <typename T>
struct LoadedCheckpoint {
  Model<T> model;
  SgdMomentum<T> optimizer;
  TrainState state;
  TrainingConfig config;
};

template <typename T>
LoadedCheckpoint<T> load_checkpoint(const std::filesystem::path& path) {
  using Code = CheckpointError::Code;
  TensorFileReader r(path);
  const auto& m = r.manifest();
  if (m.value("kind", "") != "fer-checkpoint") {
    throw CheckpointError(Code::malformed, "'" + path.string() + "' is not a model checkpoint");
  }
  ModelSpec spec;
  TrainingConfig cfg;
  TrainState state;
  try {
    spec = m.at("spec").get<ModelSpec>();
    cfg = m.at("config").get<TrainingConfig>();
    state = m.at("state").get<TrainState>();
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(Code::malformed, "'" + path.string() + "': " + e.what());
  }
  LoadedCheckpoint<T> out{Model<T>(spec, 0), {}, std::move(state), cfg};
  for (auto& t : out.model.state_tensors()) {
    Tensor<T> loaded = r.read<T>(t.name);
    if (loaded.shape() != t.value->shape()) {
      throw CheckpointError(Code::length_mismatch, "'" + path.string() + "': tensor '" + t.name +
                                                       "' has shape " + shape_string(loaded.shape()));
    }
    *t.value = std::move(loaded);
  }
  const auto params = out.model.params();
  const bool has_velocity =
      !params.empty() && std::any_of(r.entries().begin(), r.entries().end(), [&](const TensorEntry& e) {
        return e.name == "optimizer." + params.front().name + ".velocity";
      });
  if (has_velocity) {
    for (const auto& p : params) out.optimizer.velocity().push_back(r.read<T>("optimizer." + p.name + ".velocity"));
  }
  return out;
}

}  // namespace fer
