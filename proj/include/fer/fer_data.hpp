#pragma once

// FER-2013 ingestion, split handling and image preprocessing.

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <istream>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "fer/error.hpp"
#include "fer/model.hpp"
#include "fer/random.hpp"
#include "fer/tensor.hpp"
#include "fer/tensor_file.hpp"

namespace fer {

inline constexpr std::size_t kPixels = kImageSide * kImageSide;  // 2304

/// Class index convention of the dataset file itself.
inline constexpr std::array<std::string_view, kNumClasses> kClassNames = {
    "angry", "disgust", "fear", "happy", "sad", "surprise", "neutral"};

/// Published per-class totals of the canonical 35,887-image release.
inline constexpr std::array<std::size_t, kNumClasses> kCanonicalClassCounts = {
    4953, 547, 5121, 8989, 6077, 4002, 6198};
inline constexpr std::size_t kCanonicalTotal = 35887;
inline constexpr std::array<std::size_t, 3> kCanonicalSplitSizes = {28709, 3589, 3589};

enum class Usage { training, public_test, private_test };

inline std::string_view to_string(Usage u) {
  switch (u) {
    case Usage::training: return "Training";
    case Usage::public_test: return "PublicTest";
    case Usage::private_test: return "PrivateTest";
  }
  return "?";
}

inline Usage usage_from(std::string_view s) {
  if (s == "Training") return Usage::training;
  if (s == "PublicTest") return Usage::public_test;
  if (s == "PrivateTest") return Usage::private_test;
  throw ParseError("unknown usage '" + std::string(s) + "'");
}

/// Split name as used on the command line: train | val | test.
inline Usage usage_from_split(std::string_view s) {
  if (s == "train") return Usage::training;
  if (s == "val") return Usage::public_test;
  if (s == "test") return Usage::private_test;
  throw ConfigError("unknown split '" + std::string(s) + "' (expected train, val or test)");
}

struct Example {
  int label = 0;
  std::array<std::uint8_t, kPixels> pixels{};
  Usage usage = Usage::training;
  std::size_t row = 0;  // 0-based data row in the source file

  friend bool operator==(const Example&, const Example&) = default;
};

/// Stable identifier `<usage>:<file-row-index>`.
inline std::string example_id(const Example& e) {
  return std::string(to_string(e.usage)) + ":" + std::to_string(e.row);
}

struct Dataset {
  std::vector<Example> examples;
  std::uint64_t digest = 0;  // FNV-1a 64 of the source bytes

  std::size_t size() const { return examples.size(); }
  bool empty() const { return examples.empty(); }

  std::array<std::size_t, kNumClasses> class_counts() const {
    std::array<std::size_t, kNumClasses> counts{};
    for (const auto& e : examples) ++counts[static_cast<std::size_t>(e.label)];
    return counts;
  }
};

namespace detail {

inline std::uint64_t fnv1a(std::string_view bytes, std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.back() == '\r' || s.back() == ' ')) s.remove_suffix(1);
  while (!s.empty() && s.front() == ' ') s.remove_prefix(1);
  return s;
}

}  // namespace detail

/// Parses `emotion,pixels,Usage` CSV. Errors name the 1-based data row.
inline Dataset parse_fer_csv(std::istream& in, std::string_view source = "<stream>") {
  Dataset d;
  std::uint64_t h = 0xcbf29ce484222325ULL;
  std::string line;
  if (!std::getline(in, line)) throw ParseError(std::string(source) + ": missing header");
  h = detail::fnv1a(line, h);
  h = detail::fnv1a("\n", h);
  if (std::string_view hdr = detail::trim(line); hdr != "emotion,pixels,Usage") {
    throw ParseError(std::string(source) + ": expected header 'emotion,pixels,Usage', got '" +
                     std::string(hdr) + "'");
  }
  std::size_t row = 0;
  while (std::getline(in, line)) {
    h = detail::fnv1a(line, h);
    h = detail::fnv1a("\n", h);
    const std::string_view text = detail::trim(line);
    if (text.empty()) continue;
    ++row;
    auto fail = [&](const std::string& why) {
      throw ParseError(std::string(source) + ": row " + std::to_string(row) + ": " + why);
    };
    const auto c1 = text.find(',');
    const auto c2 = text.rfind(',');
    if (c1 == std::string_view::npos || c2 == c1) fail("expected 3 comma-separated fields");

    Example e;
    e.row = row - 1;
    const std::string_view label = detail::trim(text.substr(0, c1));
    auto [lp, lec] = std::from_chars(label.data(), label.data() + label.size(), e.label);
    if (lec != std::errc{} || lp != label.data() + label.size()) {
      fail("non-integer label '" + std::string(label) + "'");
    }
    if (e.label < 0 || e.label >= static_cast<int>(kNumClasses)) {
      fail("label " + std::to_string(e.label) + " outside 0..6");
    }

    std::string_view px = detail::trim(text.substr(c1 + 1, c2 - c1 - 1));
    if (px.size() >= 2 && px.front() == '"' && px.back() == '"') px = px.substr(1, px.size() - 2);
    std::size_t count = 0;
    const char* p = px.data();
    const char* end = px.data() + px.size();
    while (p < end) {
      while (p < end && *p == ' ') ++p;
      if (p == end) break;
      int v = 0;
      auto [next, ec] = std::from_chars(p, end, v);
      if (ec != std::errc{} || (next < end && *next != ' ')) {
        const char* tok_end = std::find(p, end, ' ');
        fail("non-integer pixel '" + std::string(p, tok_end) + "'");
      }
      if (v < 0 || v > 255) fail("pixel value " + std::to_string(v) + " outside 0..255");
      if (count < kPixels) e.pixels[count] = static_cast<std::uint8_t>(v);
      ++count;
      p = next;
    }
    if (count != kPixels) {
      fail("expected " + std::to_string(kPixels) + " pixels, got " + std::to_string(count));
    }
    try {
      e.usage = usage_from(detail::trim(text.substr(c2 + 1)));
    } catch (const ParseError& err) {
      fail(err.what());
    }
    d.examples.push_back(e);
  }
  d.digest = h;
  return d;
}

inline Dataset parse_fer_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  return parse_fer_csv(in, path.string());
}

/// Renders a dataset back to the CSV layout parse_fer_csv reads.
inline void write_fer_csv(const Dataset& d, std::ostream& out) {
  out << "emotion,pixels,Usage\n";
  std::string buf;
  for (const auto& e : d.examples) {
    buf.clear();
    buf += std::to_string(e.label);
    buf += ',';
    for (std::size_t i = 0; i < kPixels; ++i) {
      if (i) buf += ' ';
      buf += std::to_string(e.pixels[i]);
    }
    buf += ',';
    buf += to_string(e.usage);
    buf += '\n';
    out << buf;
  }
}

struct Splits {
  Dataset train, val, test;
};

/// Training -> train, PublicTest -> val, PrivateTest -> test.
inline Splits split_by_usage(const Dataset& d) {
  Splits s;
  for (const auto& e : d.examples) {
    switch (e.usage) {
      case Usage::training: s.train.examples.push_back(e); break;
      case Usage::public_test: s.val.examples.push_back(e); break;
      case Usage::private_test: s.test.examples.push_back(e); break;
    }
  }
  s.train.digest = s.val.digest = s.test.digest = d.digest;
  return s;
}

inline Dataset select_split(const Dataset& d, Usage u) {
  Dataset out;
  out.digest = d.digest;
  for (const auto& e : d.examples) {
    if (e.usage == u) out.examples.push_back(e);
  }
  return out;
}

/// Deviations from the canonical FER-2013 totals, one message each. Subsets
/// are legal inputs, so callers treat these as warnings.
inline std::vector<std::string> canonical_count_warnings(const Dataset& d) {
  std::vector<std::string> out;
  if (d.size() != kCanonicalTotal) {
    out.push_back("total " + std::to_string(d.size()) + " != canonical " +
                  std::to_string(kCanonicalTotal));
  }
  const auto counts = d.class_counts();
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    if (counts[c] != kCanonicalClassCounts[c]) {
      out.push_back(std::string(kClassNames[c]) + " count " + std::to_string(counts[c]) +
                    " != canonical " + std::to_string(kCanonicalClassCounts[c]));
    }
  }
  const Splits s = split_by_usage(d);
  const std::array<std::size_t, 3> sizes = {s.train.size(), s.val.size(), s.test.size()};
  constexpr std::array<std::string_view, 3> names = {"train", "val", "test"};
  for (std::size_t i = 0; i < 3; ++i) {
    if (sizes[i] != kCanonicalSplitSizes[i]) {
      out.push_back(std::string(names[i]) + " split " + std::to_string(sizes[i]) +
                    " != canonical " + std::to_string(kCanonicalSplitSizes[i]));
    }
  }
  return out;
}

/// Uniform random subset of `n` examples (or all if fewer), in original order.
inline Dataset sample_subset(const Dataset& d, std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> idx(d.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  Rng rng(seed);
  shuffle(idx, rng);
  idx.resize(std::min(n, idx.size()));
  std::sort(idx.begin(), idx.end());
  Dataset out;
  out.digest = d.digest;
  for (std::size_t i : idx) out.examples.push_back(d.examples[i]);
  return out;
}

/// Up to `per_class` random examples of every class, in original order.
inline Dataset balanced_subset(const Dataset& d, std::size_t per_class, std::uint64_t seed) {
  std::vector<std::size_t> idx(d.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  Rng rng(seed);
  shuffle(idx, rng);
  std::array<std::size_t, kNumClasses> taken{};
  std::vector<std::size_t> keep;
  for (std::size_t i : idx) {
    auto& t = taken[static_cast<std::size_t>(d.examples[i].label)];
    if (t < per_class) {
      ++t;
      keep.push_back(i);
    }
  }
  std::sort(keep.begin(), keep.end());
  Dataset out;
  out.digest = d.digest;
  for (std::size_t i : keep) out.examples.push_back(d.examples[i]);
  return out;
}

// ---------------------------------------------------------------------------
// Preprocessing

/// Pixels scaled to [0, 1] as a 1x48x48 tensor.
template <typename T>
Tensor<T> normalize(const Example& e) {
  Tensor<T> t({1, kImageSide, kImageSide});
  for (std::size_t i = 0; i < kPixels; ++i) t[i] = static_cast<T>(e.pixels[i] / 255.0);
  return t;
}

/// Inverse of normalize, rounding to the nearest intensity.
template <typename T>
std::array<std::uint8_t, kPixels> denormalize(const Tensor<T>& t) {
  if (t.size() != kPixels) throw ShapeError("denormalize expects 2304 values");
  std::array<std::uint8_t, kPixels> px{};
  for (std::size_t i = 0; i < kPixels; ++i) {
    const double v = std::clamp(std::round(static_cast<double>(t[i]) * 255.0), 0.0, 255.0);
    px[i] = static_cast<std::uint8_t>(v);
  }
  return px;
}

/// Normalized NCHW batch of the examples at `indices`; `flip` (if non-empty)
/// mirrors the matching images horizontally.
template <typename T>
Tensor<T> make_batch(const Dataset& d, std::span<const std::size_t> indices,
                     std::span<const std::uint8_t> flip = {}) {
  Tensor<T> batch({indices.size(), 1, kImageSide, kImageSide});
  for (std::size_t b = 0; b < indices.size(); ++b) {
    const auto& px = d.examples[indices[b]].pixels;
    T* dst = batch.raw() + b * kPixels;
    const bool mirror = !flip.empty() && flip[b];
    for (std::size_t y = 0; y < kImageSide; ++y) {
      for (std::size_t x = 0; x < kImageSide; ++x) {
        const std::size_t sx = mirror ? kImageSide - 1 - x : x;
        dst[y * kImageSide + x] = static_cast<T>(px[y * kImageSide + sx] / 255.0);
      }
    }
  }
  return batch;
}

/// Bilinear resize of a [C, H, W] image with corner-aligned sampling: output
/// pixel i maps to source coordinate i * (H - 1) / (out_h - 1).
template <typename T>
Tensor<T> resize_bilinear(const Tensor<T>& img, std::size_t out_h, std::size_t out_w) {
  if (img.rank() != 3) throw ShapeError("resize expects [c,h,w], got " + shape_string(img.shape()));
  const std::size_t C = img.dim(0), H = img.dim(1), W = img.dim(2);
  Tensor<T> out({C, out_h, out_w});
  auto coord = [](std::size_t i, std::size_t out_n, std::size_t in_n) {
    if (out_n == 1 || in_n == 1) return 0.0;
    return static_cast<double>(i) * static_cast<double>(in_n - 1) / static_cast<double>(out_n - 1);
  };
  for (std::size_t c = 0; c < C; ++c) {
    const T* src = img.raw() + c * H * W;
    T* dst = out.raw() + c * out_h * out_w;
    for (std::size_t y = 0; y < out_h; ++y) {
      const double sy = coord(y, out_h, H);
      const std::size_t y0 = std::min(static_cast<std::size_t>(sy), H - 1);
      const std::size_t y1 = std::min(y0 + 1, H - 1);
      const double fy = sy - static_cast<double>(y0);
      for (std::size_t x = 0; x < out_w; ++x) {
        const double sx = coord(x, out_w, W);
        const std::size_t x0 = std::min(static_cast<std::size_t>(sx), W - 1);
        const std::size_t x1 = std::min(x0 + 1, W - 1);
        const double fx = sx - static_cast<double>(x0);
        const double top = (1 - fx) * src[y0 * W + x0] + fx * src[y0 * W + x1];
        const double bot = (1 - fx) * src[y1 * W + x0] + fx * src[y1 * W + x1];
        dst[y * out_w + x] = static_cast<T>((1 - fy) * top + fy * bot);
      }
    }
  }
  return out;
}

/// Grayscale [1, H, W] to three identical channels.
template <typename T>
Tensor<T> replicate_channels(const Tensor<T>& img) {
  if (img.rank() != 3 || img.dim(0) != 1) {
    throw ShapeError("replicate_channels expects a single-channel [1,h,w] image, got " +
                     shape_string(img.shape()));
  }
  const std::size_t plane = img.dim(1) * img.dim(2);
  Tensor<T> out({3, img.dim(1), img.dim(2)});
  for (std::size_t c = 0; c < 3; ++c) std::copy_n(img.raw(), plane, out.raw() + c * plane);
  return out;
}

inline constexpr std::size_t kTransferSide = 197;

/// Writes every example as a normalized, resized, RGB-replicated f32 tensor
/// `example/<i>` of shape [3, side, side]. Labels, usages and ids go in the
/// manifest. Output is a pure function of the dataset.
inline void export_preprocessed(const Dataset& d, const std::filesystem::path& path,
                                std::size_t side = kTransferSide) {
  std::vector<TensorEntry> entries;
  nlohmann::json labels = nlohmann::json::array(), usages = nlohmann::json::array(),
                 ids = nlohmann::json::array();
  for (std::size_t i = 0; i < d.size(); ++i) {
    entries.push_back({"example/" + std::to_string(i), {3, side, side}, "f32"});
    labels.push_back(d.examples[i].label);
    usages.push_back(to_string(d.examples[i].usage));
    ids.push_back(example_id(d.examples[i]));
  }
  nlohmann::json manifest = {{"kind", "fer-preprocessed"},
                             {"count", d.size()},
                             {"side", side},
                             {"labels", labels},
                             {"usage", usages},
                             {"ids", ids}};
  TensorFileWriter w(path, std::move(manifest), std::move(entries));
  for (const auto& e : d.examples) {
    const auto rgb = replicate_channels(resize_bilinear(normalize<float>(e), side, side));
    w.write_next<float>(rgb.data());
  }
  w.close();
}

struct PreprocessedRecord {
  std::string id;
  int label = 0;
  Usage usage = Usage::training;
  Tensor<float> image;
};

/// Reads back a file written by export_preprocessed.
inline std::vector<PreprocessedRecord> read_preprocessed(const std::filesystem::path& path) {
  TensorFileReader r(path);
  const auto& m = r.manifest();
  if (m.value("kind", "") != "fer-preprocessed") {
    throw CheckpointError(CheckpointError::Code::malformed,
                          "'" + path.string() + "' is not a preprocessed export");
  }
  std::vector<PreprocessedRecord> out;
  for (std::size_t i = 0; i < r.entries().size(); ++i) {
    out.push_back({m.at("ids")[i].get<std::string>(), m.at("labels")[i].get<int>(),
                   usage_from(m.at("usage")[i].get<std::string>()), r.read<float>(i)});
  }
  return out;
}

}  // namespace fer
