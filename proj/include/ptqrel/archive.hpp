#pragma once

// Binary archive for models and labeled datasets. Byte layout (all integers
// little-endian), documented in docs/archive_format.md:
//
//   [0, 8)        magic "PTQRARC1"
//   [8, 16)       u64 header length H
//   [16, 16 + H)  UTF-8 JSON header, compact, keys sorted
//   zero padding up to the next multiple of 64 -> payload start P
//   [P, P + S)    tensor payloads, f32 little-endian, each at a 64-byte
//                 aligned offset relative to P; S is a multiple of 64

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "ptqrel/error.hpp"
#include "ptqrel/hash.hpp"
#include "ptqrel/model.hpp"
#include "ptqrel/tensor.hpp"

namespace ptqrel {

inline constexpr std::array<char, 8> kArchiveMagic{'P', 'T', 'Q', 'R', 'A', 'R', 'C', '1'};
inline constexpr std::size_t kArchiveAlignment = 64;
inline constexpr int kArchiveVersion = 1;

using Archive = std::variant<ModelGraph, LabeledDataset>;

namespace detail {

inline std::size_t align_up(std::size_t n) noexcept {
  return (n + kArchiveAlignment - 1) / kArchiveAlignment * kArchiveAlignment;
}

inline void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

inline std::uint64_t get_u64(const std::uint8_t* p) noexcept {
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
  return v;
}

inline void put_f32(std::uint8_t* dst, float f) noexcept {
  const auto bits = std::bit_cast<std::uint32_t>(f);
  for (int i = 0; i < 4; ++i) dst[i] = static_cast<std::uint8_t>(bits >> (8 * i));
}

inline float get_f32(const std::uint8_t* p) noexcept {
  std::uint32_t bits = 0;
  for (int i = 3; i >= 0; --i) bits = (bits << 8) | p[i];
  return std::bit_cast<float>(bits);
}

// Collects tensors in insertion order and assigns aligned payload offsets.
class PayloadWriter {
 public:
  nlohmann::json add(const std::string& name, const Tensor& t) {
    const std::size_t offset = size_;
    const std::size_t length = t.size() * sizeof(float);
    tensors_.push_back(&t);
    offsets_.push_back(offset);
    size_ = align_up(offset + length);
    return {{"name", name}, {"dtype", "f32"}, {"shape", t.shape()},
            {"offset", offset}, {"length", length}};
  }

  std::size_t size() const noexcept { return size_; }

  void write(std::uint8_t* payload) const noexcept {
    for (std::size_t k = 0; k < tensors_.size(); ++k) {
      std::uint8_t* dst = payload + offsets_[k];
      for (float f : tensors_[k]->data()) {
        put_f32(dst, f);
        dst += sizeof(float);
      }
    }
  }

 private:
  std::vector<const Tensor*> tensors_;
  std::vector<std::size_t> offsets_;
  std::size_t size_ = 0;
};

inline std::vector<std::uint8_t> assemble(const nlohmann::json& header, const PayloadWriter& payload) {
  const std::string text = header.dump();
  std::vector<std::uint8_t> out(kArchiveMagic.begin(), kArchiveMagic.end());
  put_u64(out, text.size());
  out.insert(out.end(), text.begin(), text.end());
  out.resize(align_up(out.size()), 0);
  const std::size_t start = out.size();
  out.resize(start + payload.size(), 0);
  payload.write(out.data() + start);
  return out;
}

class PayloadReader {
 public:
  PayloadReader(const std::uint8_t* base, std::size_t size, const nlohmann::json& entries)
      : base_(base), size_(size) {
    for (const auto& e : entries) by_name_[e.at("name").get<std::string>()] = &e;
  }

  Tensor read(const std::string& name) const {
    auto it = by_name_.find(name);
    if (it == by_name_.end()) {
      throw Error(ErrorKind::ShapeContractViolation, "archive lacks tensor '" + name + "'");
    }
    const nlohmann::json& e = *it->second;
    if (e.at("dtype").get<std::string>() != "f32") {
      throw Error(ErrorKind::ShapeContractViolation, "tensor '" + name + "' is not f32");
    }
    Shape shape = e.at("shape").get<Shape>();
    const auto offset = e.at("offset").get<std::uint64_t>();
    const auto length = e.at("length").get<std::uint64_t>();
    if (length != shape_numel(shape) * sizeof(float)) {
      throw Error(ErrorKind::ShapeContractViolation,
                  "tensor '" + name + "' length disagrees with its shape");
    }
    if (offset % kArchiveAlignment != 0) {
      throw Error(ErrorKind::ShapeContractViolation, "tensor '" + name + "' is misaligned");
    }
    if (offset > size_ || length > size_ - offset) {
      throw Error(ErrorKind::TruncatedPayload, "tensor '" + name + "' extends past end of file");
    }
    std::vector<float> values(length / sizeof(float));
    const std::uint8_t* src = base_ + offset;
    for (float& v : values) {
      v = get_f32(src);
      src += sizeof(float);
    }
    return Tensor(std::move(shape), std::move(values));
  }

 private:
  const std::uint8_t* base_;
  std::size_t size_;
  std::map<std::string, const nlohmann::json*> by_name_;
};

inline nlohmann::json base_header(const char* kind, std::size_t class_count) {
  return {{"format", "ptqrel-archive"}, {"version", kArchiveVersion}, {"kind", kind},
          {"class_count", class_count}};
}

}  // namespace detail

inline std::vector<std::uint8_t> encode_archive(const ModelGraph& model) {
  validate(model);
  detail::PayloadWriter payload;
  nlohmann::json header = detail::base_header("model", model.class_count);
  header["input_shape"] = model.input_shape;
  header["metadata"] = model.metadata;
  auto& layers = header["layers"] = nlohmann::json::array();
  auto& tensors = header["tensors"] = nlohmann::json::array();
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    const LayerSpec& l = model.layers[i];
    nlohmann::json entry{{"kind", to_string(l.kind)}, {"attrs", l.attrs},
                         {"params", nlohmann::json::object()}};
    if (l.kind == LayerKind::BatchNorm) entry["epsilon"] = l.epsilon;
    for (const auto& [pname, t] : l.params) {
      const std::string tname = "layers." + std::to_string(i) + "." + pname;
      entry["params"][pname] = tname;
      tensors.push_back(payload.add(tname, t));
    }
    layers.push_back(std::move(entry));
  }
  return detail::assemble(header, payload);
}

inline std::vector<std::uint8_t> encode_archive(const LabeledDataset& ds) {
  validate(ds);
  detail::PayloadWriter payload;
  nlohmann::json header = detail::base_header("dataset", ds.class_count);
  header["split"] = to_string(ds.split);
  header["count"] = ds.size();
  header["image_shape"] = ds.image_shape();
  header["labels"] = ds.labels;
  header["tensors"] = nlohmann::json::array({payload.add("images", ds.images)});
  return detail::assemble(header, payload);
}

inline Archive decode_archive(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 16 || !std::equal(kArchiveMagic.begin(), kArchiveMagic.end(), bytes.begin())) {
    throw Error(ErrorKind::BadMagic, "not a ptqrel archive");
  }
  const std::uint64_t header_len = detail::get_u64(bytes.data() + 8);
  if (header_len > bytes.size() - 16) {
    throw Error(ErrorKind::TruncatedPayload, "header extends past end of file");
  }
  const std::size_t payload_start = detail::align_up(16 + header_len);
  if (payload_start > bytes.size()) throw Error(ErrorKind::TruncatedPayload, "missing payload");

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.begin() + 16,
                                   bytes.begin() + static_cast<std::ptrdiff_t>(16 + header_len));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::ShapeContractViolation, std::string("malformed header: ") + e.what());
  }

  try {
    if (header.value("version", 0) != kArchiveVersion) {
      throw Error(ErrorKind::ShapeContractViolation, "unsupported archive version");
    }
    detail::PayloadReader reader(bytes.data() + payload_start, bytes.size() - payload_start,
                                 header.at("tensors"));
    const auto kind = header.at("kind").get<std::string>();
    const auto class_count = header.at("class_count").get<std::size_t>();
    if (kind == "model") {
      ModelGraph model;
      model.class_count = class_count;
      model.input_shape = header.at("input_shape").get<Shape>();
      model.metadata = header.at("metadata").get<std::map<std::string, std::string>>();
      for (const auto& entry : header.at("layers")) {
        LayerSpec l;
        l.kind = layer_kind_from_string(entry.at("kind").get<std::string>());
        l.attrs = entry.at("attrs").get<std::map<std::string, std::int64_t>>();
        if (entry.contains("epsilon")) l.epsilon = entry.at("epsilon").get<double>();
        for (const auto& [pname, tname] : entry.at("params").items()) {
          l.params.emplace(pname, reader.read(tname.get<std::string>()));
        }
        model.layers.push_back(std::move(l));
      }
      validate(model);
      return model;
    }
    if (kind == "dataset") {
      LabeledDataset ds;
      ds.class_count = class_count;
      ds.split = split_from_string(header.at("split").get<std::string>());
      ds.labels = header.at("labels").get<std::vector<int>>();
      Shape shape{header.at("count").get<std::size_t>()};
      for (auto d : header.at("image_shape").get<Shape>()) shape.push_back(d);
      ds.images = reader.read("images");
      if (ds.images.shape() != shape) {
        throw Error(ErrorKind::ShapeContractViolation, "images tensor shape " +
                                                           shape_to_string(ds.images.shape()) +
                                                           " disagrees with header");
      }
      validate(ds);
      return ds;
    }
    throw Error(ErrorKind::ShapeContractViolation, "unknown archive kind '" + kind + "'");
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::ShapeContractViolation, std::string("malformed header: ") + e.what());
  }
}

template <typename T>
  requires std::same_as<T, ModelGraph> || std::same_as<T, LabeledDataset>
void save_archive(const T& object, const std::string& path) {
  const auto bytes = encode_archive(object);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorKind::IoFailure, "cannot write " + path);
}

inline std::vector<std::uint8_t> read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::IoFailure, "cannot open " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline Archive load_archive(const std::string& path) { return decode_archive(read_file_bytes(path)); }

inline ModelGraph load_model(const std::string& path) {
  auto archive = load_archive(path);
  if (auto* m = std::get_if<ModelGraph>(&archive)) return std::move(*m);
  throw Error(ErrorKind::ShapeContractViolation, path + " holds a dataset, not a model");
}

inline LabeledDataset load_dataset(const std::string& path) {
  auto archive = load_archive(path);
  if (auto* d = std::get_if<LabeledDataset>(&archive)) return std::move(*d);
  throw Error(ErrorKind::ShapeContractViolation, path + " holds a model, not a dataset");
}

}  // namespace ptqrel
