#pragma once

#include <array>
#include <cstddef>
#include <ostream>
#include <span>
#include <string>

#include <nlohmann/json.hpp>

#include "fer/error.hpp"
#include "fer/model.hpp"

namespace fer {

/// Accuracy, confusion (rows = true class, cols = predicted) and per-class
/// recall. Recall of a class with no examples is reported as 0.
struct Metrics {
  double accuracy = 0.0;
  std::array<std::array<std::size_t, kNumClasses>, kNumClasses> confusion{};
  std::array<double, kNumClasses> per_class_recall{};

  std::size_t total() const {
    std::size_t t = 0;
    for (const auto& row : confusion) {
      for (std::size_t v : row) t += v;
    }
    return t;
  }
  std::size_t correct() const {
    std::size_t t = 0;
    for (std::size_t c = 0; c < kNumClasses; ++c) t += confusion[c][c];
    return t;
  }

  friend bool operator==(const Metrics&, const Metrics&) = default;
};

inline Metrics compute_metrics(std::span<const std::size_t> predicted, std::span<const int> labels) {
  if (predicted.size() != labels.size()) {
    throw ShapeError("metrics: " + std::to_string(predicted.size()) + " predictions for " +
                     std::to_string(labels.size()) + " labels");
  }
  Metrics m;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= static_cast<int>(kNumClasses) || predicted[i] >= kNumClasses) {
      throw ShapeError("metrics: class index out of range at row " + std::to_string(i));
    }
    ++m.confusion[static_cast<std::size_t>(labels[i])][predicted[i]];
  }
  const std::size_t total = m.total();
  m.accuracy = total ? static_cast<double>(m.correct()) / static_cast<double>(total) : 0.0;
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    std::size_t row = 0;
    for (std::size_t v : m.confusion[c]) row += v;
    m.per_class_recall[c] = row ? static_cast<double>(m.confusion[c][c]) / static_cast<double>(row) : 0.0;
  }
  return m;
}

/// {accuracy, confusion (row-major 49 ints), per_class_recall}
inline nlohmann::json metrics_json(const Metrics& m) {
  nlohmann::json confusion = nlohmann::json::array();
  for (const auto& row : m.confusion) {
    for (std::size_t v : row) confusion.push_back(v);
  }
  return {{"accuracy", m.accuracy},
          {"confusion", confusion},
          {"per_class_recall", m.per_class_recall}};
}

inline void print_metrics(std::ostream& os, const Metrics& m) {
  static constexpr const char* names[] = {"angry", "disgust", "fear", "happy",
                                          "sad",   "surprise", "neutral"};
  char buf[160];
  std::snprintf(buf, sizeof buf, "accuracy  %.4f  (%zu / %zu)\n\n", m.accuracy, m.correct(), m.total());
  os << buf;
  os << "true\\pred ";
  for (const char* n : names) {
    std::snprintf(buf, sizeof buf, "%9.8s", n);
    os << buf;
  }
  os << "    recall\n";
  for (std::size_t r = 0; r < kNumClasses; ++r) {
    std::snprintf(buf, sizeof buf, "%-10s", names[r]);
    os << buf;
    for (std::size_t c = 0; c < kNumClasses; ++c) {
      std::snprintf(buf, sizeof buf, "%9zu", m.confusion[r][c]);
      os << buf;
    }
    std::snprintf(buf, sizeof buf, "%10.4f\n", m.per_class_recall[r]);
    os << buf;
  }
}

}  // namespace fer
