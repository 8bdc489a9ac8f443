#pragma once

// Per-example class probabilities, their CSV interchange format, and
// soft-voting ensembles over them.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>
#include <unordered_map>
#include <vector>

#include "fer/error.hpp"
#include "fer/fer_data.hpp"
#include "fer/metrics.hpp"
#include "fer/model.hpp"

namespace fer {

/// n rows of 7 class probabilities keyed by example id.
struct ProbMatrix {
  std::vector<std::string> ids;
  std::vector<double> probs;  // row-major [n, 7]

  std::size_t rows() const { return ids.size(); }
  const double* row(std::size_t i) const { return probs.data() + i * kNumClasses; }

  /// Each row non-negative and summing to 1 within `tol`.
  void validate(double tol = 1e-5) const {
    if (probs.size() != ids.size() * kNumClasses) {
      throw ShapeError("probability matrix holds " + std::to_string(probs.size()) +
                       " values for " + std::to_string(ids.size()) + " rows");
    }
    for (std::size_t i = 0; i < rows(); ++i) {
      double sum = 0.0;
      for (std::size_t c = 0; c < kNumClasses; ++c) {
        if (!(row(i)[c] >= 0.0)) throw ParseError("negative probability in row '" + ids[i] + "'");
        sum += row(i)[c];
      }
      if (std::abs(sum - 1.0) > tol) {
        throw ParseError("row '" + ids[i] + "' sums to " + std::to_string(sum));
      }
    }
  }

  /// Argmax per row, ties to the lowest class index.
  std::vector<std::size_t> predictions() const {
    std::vector<std::size_t> out(rows());
    for (std::size_t i = 0; i < rows(); ++i) {
      std::size_t best = 0;
      for (std::size_t c = 1; c < kNumClasses; ++c) {
        if (row(i)[c] > row(i)[best]) best = c;
      }
      out[i] = best;
    }
    return out;
  }

  friend bool operator==(const ProbMatrix&, const ProbMatrix&) = default;
};

/// Header `id,p0,...,p6`; probabilities printed with 9 significant digits.
inline void write_prob_csv(const ProbMatrix& m, std::ostream& out) {
  out << "id,p0,p1,p2,p3,p4,p5,p6\n";
  char buf[32];
  for (std::size_t i = 0; i < m.rows(); ++i) {
    out << m.ids[i];
    for (std::size_t c = 0; c < kNumClasses; ++c) {
      std::snprintf(buf, sizeof buf, ",%.9g", m.row(i)[c]);
      out << buf;
    }
    out << '\n';
  }
}

inline void write_prob_csv(const ProbMatrix& m, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  write_prob_csv(m, out);
  if (!out) throw IoError("write failed on '" + path.string() + "'");
}

inline ProbMatrix read_prob_csv(std::istream& in, const std::string& source = "<stream>") {
  std::string line;
  if (!std::getline(in, line)) throw ParseError(source + ": missing header");
  if (detail::trim(line) != "id,p0,p1,p2,p3,p4,p5,p6") {
    throw ParseError(source + ": expected header 'id,p0,p1,p2,p3,p4,p5,p6'");
  }
  ProbMatrix m;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    const std::string_view text = detail::trim(line);
    if (text.empty()) continue;
    ++row;
    std::vector<std::string_view> fields;
    std::size_t start = 0;
    for (;;) {
      const auto comma = text.find(',', start);
      fields.push_back(text.substr(start, comma - start));
      if (comma == std::string_view::npos) break;
      start = comma + 1;
    }
    if (fields.size() != 1 + kNumClasses) {
      throw ParseError(source + ": row " + std::to_string(row) + ": expected 8 fields, got " +
                       std::to_string(fields.size()));
    }
    m.ids.emplace_back(fields[0]);
    for (std::size_t c = 1; c <= kNumClasses; ++c) {
      const std::string f(fields[c]);
      std::size_t used = 0;
      double v = 0.0;
      try {
        v = std::stod(f, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used != f.size() || f.empty()) {
        throw ParseError(source + ": row " + std::to_string(row) + ": bad probability '" + f + "'");
      }
      m.probs.push_back(v);
    }
  }
  m.validate();
  return m;
}

inline ProbMatrix read_prob_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  return read_prob_csv(in, path.string());
}

/// Weighted row mean sum(w_i * row_i) / sum(w_i). All inputs must list the
/// same ids in the same order.
inline ProbMatrix soft_vote(const std::vector<ProbMatrix>& inputs, const std::vector<double>& weights) {
  if (inputs.empty()) throw ConfigError("soft vote needs at least one member");
  if (weights.size() != inputs.size()) {
    throw ConfigError("soft vote got " + std::to_string(weights.size()) + " weights for " +
                      std::to_string(inputs.size()) + " members");
  }
  for (double w : weights) {
    if (!(w > 0.0)) throw ConfigError("ensemble weights must be positive");
  }
  const ProbMatrix& ref = inputs.front();
  for (std::size_t m = 1; m < inputs.size(); ++m) {
    const ProbMatrix& other = inputs[m];
    const std::size_t common = std::min(ref.rows(), other.rows());
    for (std::size_t i = 0; i < common; ++i) {
      if (other.ids[i] != ref.ids[i]) {
        throw AlignmentError("member " + std::to_string(m) + " diverges at row " +
                             std::to_string(i) + ": id '" + other.ids[i] + "' vs '" + ref.ids[i] +
                             "'");
      }
    }
    if (other.rows() != ref.rows()) {
      const std::string first = other.rows() > ref.rows() ? other.ids[common] : ref.ids[common];
      throw AlignmentError("member " + std::to_string(m) + " has " + std::to_string(other.rows()) +
                           " rows, member 0 has " + std::to_string(ref.rows()) +
                           "; first unmatched id '" + first + "'");
    }
  }
  // Running weighted mean: exact when every member agrees on an entry.
  ProbMatrix out{ref.ids, ref.probs};
  double seen = weights.front();
  for (std::size_t m = 1; m < inputs.size(); ++m) {
    seen += weights[m];
    const double share = weights[m] / seen;
    for (std::size_t k = 0; k < out.probs.size(); ++k) out.probs[k] += share * (inputs[m].probs[k] - out.probs[k]);
  }
  return out;
}

/// Labels aligned to the matrix's ids; throws naming the first id absent
/// from the split.
inline std::vector<int> labels_for(const ProbMatrix& m, const Dataset& split) {
  std::unordered_map<std::string, int> by_id;
  for (const auto& e : split.examples) by_id.emplace(example_id(e), e.label);
  std::vector<int> labels;
  labels.reserve(m.rows());
  for (const auto& id : m.ids) {
    const auto it = by_id.find(id);
    if (it == by_id.end()) throw AlignmentError("id '" + id + "' not present in the label split");
    labels.push_back(it->second);
  }
  return labels;
}

struct EnsembleMember {
  ProbMatrix probs;
  double weight = 1.0;
};

/// Soft vote, argmax, then metrics against the split's labels.
inline Metrics ensemble_evaluate(const std::vector<EnsembleMember>& members, const Dataset& split) {
  std::vector<ProbMatrix> inputs;
  std::vector<double> weights;
  for (const auto& m : members) {
    inputs.push_back(m.probs);
    weights.push_back(m.weight);
  }
  const ProbMatrix voted = soft_vote(inputs, weights);
  const auto labels = labels_for(voted, split);
  return compute_metrics(voted.predictions(), labels);
}

}  // namespace fer
