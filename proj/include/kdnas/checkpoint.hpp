#pragma once

// Flat tensor checkpoints.
//
// Layout (all integers and floats little-endian regardless of host):
//   bytes 0..7    magic "KDNASTF1"
//   bytes 8..15   u64 length N of the JSON header
//   next N bytes  UTF-8 JSON: {"format": "kdnas-tensors", "version": 1,
//                 "byte_order": "little", "dtype": "f64", "meta": {...},
//                 "tensors": [{"name", "shape", "offset", "count"}...]}
//   remainder     IEEE-754 binary64 values; tensor k occupies [offset, offset+count)
//                 in units of 8-byte values, in row-major order.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "kdnas/errors.hpp"
#include "kdnas/io.hpp"
#include "kdnas/model.hpp"
#include "kdnas/tensor.hpp"

namespace kdnas {

inline constexpr char kCheckpointMagic[8] = {'K', 'D', 'N', 'A', 'S', 'T', 'F', '1'};

struct StoredTensor {
  std::string name;
  Shape shape;
  std::vector<double> values;
};

struct TensorFile {
  nlohmann::json meta;
  std::vector<StoredTensor> tensors;

  std::map<std::string, std::vector<double>> by_name() const {
    std::map<std::string, std::vector<double>> out;
    for (const auto& t : tensors) out[t.name] = t.values;
    return out;
  }
};

namespace detail {

inline void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline std::uint64_t get_u64(const unsigned char* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return v;
}

}  // namespace detail

inline void save_tensors(const std::filesystem::path& path, const nlohmann::json& meta,
                         const std::vector<NamedTensor>& tensors) {
  nlohmann::json header{{"format", "kdnas-tensors"}, {"version", 1}, {"byte_order", "little"}, {"dtype", "f64"},
                        {"meta", meta}};
  header["tensors"] = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& [name, t] : tensors) {
    header["tensors"].push_back({{"name", name}, {"shape", t.shape()}, {"offset", offset}, {"count", t.size()}});
    offset += t.size();
  }
  const std::string text = header.dump();
  std::string blob(kCheckpointMagic, sizeof kCheckpointMagic);
  detail::put_u64(blob, text.size());
  blob += text;
  blob.reserve(blob.size() + offset * 8);
  for (const auto& [_, t] : tensors)
    for (double v : t.values()) detail::put_u64(blob, std::bit_cast<std::uint64_t>(v));

  write_file_atomic(path, blob);
}

inline TensorFile load_tensors(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  std::vector<unsigned char> blob((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  if (blob.size() < 16 || std::memcmp(blob.data(), kCheckpointMagic, 8) != 0) {
    throw IoError(path.string() + " is not a kdnas tensor file");
  }
  const std::uint64_t header_len = detail::get_u64(blob.data() + 8);
  if (16 + header_len > blob.size()) throw IoError(path.string() + ": truncated header");
  const auto header =
      nlohmann::json::parse(std::string(reinterpret_cast<const char*>(blob.data() + 16), header_len), nullptr, false);
  if (header.is_discarded() || header.value("format", "") != "kdnas-tensors") {
    throw IoError(path.string() + ": malformed header");
  }
  const unsigned char* data = blob.data() + 16 + header_len;
  const std::size_t available = (blob.size() - 16 - header_len) / 8;

  TensorFile file;
  file.meta = header.value("meta", nlohmann::json::object());
  for (const auto& entry : header.at("tensors")) {
    StoredTensor t;
    t.name = entry.at("name").get<std::string>();
    t.shape = entry.at("shape").get<Shape>();
    const auto offset = entry.at("offset").get<std::size_t>();
    const auto count = entry.at("count").get<std::size_t>();
    if (count != numel(t.shape) || offset + count > available) throw IoError(path.string() + ": tensor '" + t.name + "' out of bounds");
    t.values.resize(count);
    for (std::size_t i = 0; i < count; ++i) t.values[i] = std::bit_cast<double>(detail::get_u64(data + 8 * (offset + i)));
    file.tensors.push_back(std::move(t));
  }
  return file;
}

inline void save_model(const std::filesystem::path& path, const Model& model) {
  const nlohmann::json meta{{"kind", "encoder"},
                            {"arch", format_state(model.arch())},
                            {"vocab_size", model.vocab_size()},
                            {"max_seq", model.max_seq()},
                            {"seed", model.seed()}};
  save_tensors(path, meta, model.named_parameters());
}

inline Model load_model(const std::filesystem::path& path) {
  const auto file = load_tensors(path);
  if (file.meta.value("kind", "") != "encoder") throw IoError(path.string() + " does not hold an encoder");
  Model model(parse_state(file.meta.at("arch").get<std::string>()), file.meta.at("vocab_size").get<std::size_t>(),
              file.meta.at("max_seq").get<std::size_t>(), file.meta.at("seed").get<std::uint64_t>());
  model.load_values(file.by_name());
  return model;
}

}  // namespace kdnas
