#pragma once

// Binary tensor container shared by checkpoints and preprocessed exports.
//
//   bytes 0..7   magic "FERCKPT1"
//   bytes 8..15  manifest length L, unsigned 64-bit little-endian
//   next L       UTF-8 JSON manifest; its "tensors" array lists
//                {name, shape, dtype, byte_offset, byte_length}
//   remainder    raw little-endian IEEE-754 payloads, concatenated in table
//                order; byte_offset is relative to the payload start

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

#include <nlohmann/json.hpp>

#include "fer/error.hpp"
#include "fer/tensor.hpp"

namespace fer {

static_assert(std::endian::native == std::endian::little,
              "tensor files store raw little-endian payloads");

inline constexpr std::string_view kTensorFileMagic = "FERCKPT1";
inline constexpr int kTensorFileVersion = 1;

template <typename T>
constexpr const char* dtype_name() {
  if constexpr (std::is_same_v<T, float>) {
    return "f32";
  } else {
    static_assert(std::is_same_v<T, double>, "tensor files hold f32 or f64");
    return "f64";
  }
}

inline std::size_t dtype_size(const std::string& dtype) {
  if (dtype == "f32") return 4;
  if (dtype == "f64") return 8;
  throw CheckpointError(CheckpointError::Code::malformed, "unknown dtype '" + dtype + "'");
}

struct TensorEntry {
  std::string name;
  Extents shape;
  std::string dtype;
  std::uint64_t byte_offset = 0;
  std::uint64_t byte_length = 0;
};

/// Streams a tensor file whose table is known up front. Payloads must be
/// written in table order with exactly the declared sizes.
class TensorFileWriter {
 public:
  TensorFileWriter(const std::filesystem::path& path, nlohmann::json manifest,
                   std::vector<TensorEntry> entries)
      : path_(path), entries_(std::move(entries)) {
    std::uint64_t offset = 0;
    nlohmann::json table = nlohmann::json::array();
    for (auto& e : entries_) {
      e.byte_offset = offset;
      e.byte_length = extent_product(e.shape) * dtype_size(e.dtype);
      offset += e.byte_length;
      table.push_back({{"name", e.name},
                       {"shape", e.shape},
                       {"dtype", e.dtype},
                       {"byte_offset", e.byte_offset},
                       {"byte_length", e.byte_length}});
    }
    manifest["format_version"] = kTensorFileVersion;
    manifest["tensors"] = std::move(table);
    const std::string text = manifest.dump();

    out_.open(path, std::ios::binary | std::ios::trunc);
    if (!out_) throw IoError("cannot open '" + path.string() + "' for writing");
    out_.write(kTensorFileMagic.data(), static_cast<std::streamsize>(kTensorFileMagic.size()));
    const std::uint64_t len = text.size();
    out_.write(reinterpret_cast<const char*>(&len), sizeof len);
    out_.write(text.data(), static_cast<std::streamsize>(text.size()));
    check_stream();
  }

  template <typename T>
  void write_next(std::span<const T> values) {
    if (next_ >= entries_.size()) throw Error("tensor file: more payloads than table entries");
    const TensorEntry& e = entries_[next_];
    if (e.dtype != dtype_name<T>() || values.size() != extent_product(e.shape)) {
      throw ShapeError("tensor file: payload for '" + e.name + "' does not match its table entry");
    }
    out_.write(reinterpret_cast<const char*>(values.data()),
               static_cast<std::streamsize>(values.size_bytes()));
    check_stream();
    ++next_;
  }

  void close() {
    if (next_ != entries_.size()) {
      throw Error("tensor file: wrote " + std::to_string(next_) + " of " +
                  std::to_string(entries_.size()) + " payloads");
    }
    out_.close();
    check_stream();
  }

 private:
  void check_stream() {
    if (!out_) throw IoError("write failed on '" + path_.string() + "'");
  }

  std::filesystem::path path_;
  std::vector<TensorEntry> entries_;
  std::ofstream out_;
  std::size_t next_ = 0;
};

/// Validating reader. Opening checks magic, version, the table's internal
/// consistency, and that the file holds exactly the declared payload bytes.
class TensorFileReader {
 public:
  explicit TensorFileReader(const std::filesystem::path& path) : path_(path) {
    using Code = CheckpointError::Code;
    in_.open(path, std::ios::binary);
    if (!in_) throw IoError("cannot open '" + path.string() + "' for reading");
    const std::uint64_t file_size = std::filesystem::file_size(path);

    char magic[8] = {};
    in_.read(magic, sizeof magic);
    if (!in_ || std::string_view(magic, 8) != kTensorFileMagic) {
      throw CheckpointError(Code::bad_magic, "'" + path.string() + "' is not a FERCKPT1 file");
    }
    std::uint64_t len = 0;
    in_.read(reinterpret_cast<char*>(&len), sizeof len);
    if (!in_ || 16 + len > file_size) {
      throw CheckpointError(Code::truncated, "'" + path.string() + "': manifest truncated");
    }
    std::string text(len, '\0');
    in_.read(text.data(), static_cast<std::streamsize>(len));
    try {
      manifest_ = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
      throw CheckpointError(Code::malformed, "'" + path.string() + "': bad manifest: " + e.what());
    }
    const int version = manifest_.value("format_version", -1);
    if (version != kTensorFileVersion) {
      throw CheckpointError(Code::version_mismatch,
                            "'" + path.string() + "': format version " + std::to_string(version) +
                                ", expected " + std::to_string(kTensorFileVersion));
    }
    payload_start_ = 16 + len;

    std::uint64_t expected = 0;
    try {
      for (const auto& t : manifest_.at("tensors")) {
        TensorEntry e{t.at("name"), t.at("shape").get<Extents>(), t.at("dtype"),
                      t.at("byte_offset"), t.at("byte_length")};
        if (e.byte_offset != expected ||
            e.byte_length != extent_product(e.shape) * dtype_size(e.dtype)) {
          throw CheckpointError(Code::length_mismatch,
                                "'" + path.string() + "': table entry '" + e.name +
                                    "' disagrees with its shape/offset");
        }
        expected += e.byte_length;
        entries_.push_back(std::move(e));
      }
    } catch (const nlohmann::json::exception& e) {
      throw CheckpointError(Code::malformed, "'" + path.string() + "': bad tensor table: " + e.what());
    }
    const std::uint64_t actual = file_size - payload_start_;
    if (actual < expected) {
      throw CheckpointError(Code::truncated, "'" + path.string() + "': payload truncated, expected " +
                                                 std::to_string(expected) + " bytes, found " +
                                                 std::to_string(actual));
    }
    if (actual > expected) {
      throw CheckpointError(Code::length_mismatch,
                            "'" + path.string() + "': payload has " + std::to_string(actual) +
                                " bytes but the manifest declares " + std::to_string(expected));
    }
  }

  const nlohmann::json& manifest() const { return manifest_; }
  const std::vector<TensorEntry>& entries() const { return entries_; }

  std::size_t index_of(const std::string& name) const {
    for (std::size_t i = 0; i < entries_.size(); ++i) {
      if (entries_[i].name == name) return i;
    }
    throw CheckpointError(CheckpointError::Code::malformed,
                          "'" + path_.string() + "' has no tensor named '" + name + "'");
  }

  /// Reads entry `i`, converting between f32/f64 if needed.
  template <typename T>
  Tensor<T> read(std::size_t i) {
    const TensorEntry& e = entries_.at(i);
    in_.seekg(static_cast<std::streamoff>(payload_start_ + e.byte_offset));
    const std::size_t count = extent_product(e.shape);
    if (e.dtype == dtype_name<T>()) {
      std::vector<T> values(count);
      in_.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(e.byte_length));
      check_read(e);
      return Tensor<T>(e.shape, std::move(values));
    }
    if (e.dtype == "f32") return read_as<float, T>(e, count);
    return read_as<double, T>(e, count);
  }

  template <typename T>
  Tensor<T> read(const std::string& name) {
    return read<T>(index_of(name));
  }

 private:
  template <typename Stored, typename T>
  Tensor<T> read_as(const TensorEntry& e, std::size_t count) {
    std::vector<Stored> raw(count);
    in_.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(e.byte_length));
    check_read(e);
    return Tensor<T>(e.shape, std::vector<T>(raw.begin(), raw.end()));
  }

  void check_read(const TensorEntry& e) {
    if (!in_) {
      throw CheckpointError(CheckpointError::Code::truncated,
                            "'" + path_.string() + "': short read on '" + e.name + "'");
    }
  }

  std::filesystem::path path_;
  std::ifstream in_;
  nlohmann::json manifest_;
  std::vector<TensorEntry> entries_;
  std::uint64_t payload_start_ = 0;
};

}  // namespace fer
