/*
 * Copyright 2026 The ExciteFuzz Authors.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "exfuzz/error.hpp"
#include "exfuzz/io.hpp"
#include "exfuzz/network.hpp"

namespace exfuzz {

// Model file: a JSON manifest plus a sibling binary blob of little-endian
// float32 parameters in layer order.
inline constexpr int kModelFormatVersion = 1;

namespace detail {

inline void AppendLe32(std::string& out, float v) {
  std::uint32_t bits = 0;
  std::memcpy(&bits, &v, sizeof bits);
  for (int s = 0; s < 32; s += 8) out.push_back(static_cast<char>((bits >> s) & 0xFFU));
}

inline float ReadLe32(const char* p) {
  std::uint32_t bits = 0;
  for (int k = 0; k < 4; ++k) {
    bits |= std::uint32_t{static_cast<unsigned char>(p[k])} << (8 * k);
  }
  float v = 0.0f;
  std::memcpy(&v, &bits, sizeof v);
  return v;
}

inline std::string HexDigest(std::uint64_t h) {
  char buf[20];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

inline nlohmann::json LayerToJson(const LayerSpec& l) {
  nlohmann::json j;
  j["kind"] = std::string(KindName(l.kind));
  switch (l.kind) {
    case LayerKind::kDense:
      j["in_dim"] = l.in_dim;
      j["out_dim"] = l.out_dim;
      break;
    case LayerKind::kConv2d:
      j["in_channels"] = l.in_channels;
      j["out_channels"] = l.out_channels;
      j["kernel_h"] = l.kernel_h;
      j["kernel_w"] = l.kernel_w;
      j["stride"] = l.stride;
      j["padding"] = l.padding;
      break;
    case LayerKind::kMaxPool2d:
      j["window"] = l.window;
      j["stride"] = l.stride;
      break;
    default:
      break;
  }
  return j;
}

inline int IntField(const nlohmann::json& j, const char* key, std::size_t layer) {
  if (!j.contains(key) || !j[key].is_number_integer()) {
    throw DataError("manifest layer " + std::to_string(layer) + ": missing integer '" +
                    key + "'");
  }
  return j[key].get<int>();
}

inline LayerSpec LayerFromJson(const nlohmann::json& j, std::size_t i) {
  if (!j.is_object() || !j.contains("kind") || !j["kind"].is_string()) {
    throw DataError("manifest layer " + std::to_string(i) + ": missing kind");
  }
  const LayerKind kind = ParseKind(j["kind"].get<std::string>());
  switch (kind) {
    case LayerKind::kDense:
      return LayerSpec::Dense(IntField(j, "in_dim", i), IntField(j, "out_dim", i));
    case LayerKind::kConv2d:
      return LayerSpec::Conv2d(IntField(j, "in_channels", i), IntField(j, "out_channels", i),
                               IntField(j, "kernel_h", i), IntField(j, "kernel_w", i),
                               IntField(j, "stride", i), IntField(j, "padding", i));
    case LayerKind::kMaxPool2d:
      return LayerSpec::MaxPool2d(IntField(j, "window", i), IntField(j, "stride", i));
    case LayerKind::kRelu:
      return LayerSpec::Relu();
    case LayerKind::kFlatten:
      return LayerSpec::Flatten();
    case LayerKind::kSoftmax:
      return LayerSpec::Softmax();
  }
  throw DataError("manifest layer " + std::to_string(i) + ": unknown kind");
}

inline std::string WeightsPathFor(const std::string& manifest_path) {
  std::filesystem::path p(manifest_path);
  p.replace_extension(".bin");
  return p.string();
}

}  // namespace detail

// Manifest and blob as they would be written; exposed for tests.
struct ModelFile {
  nlohmann::json manifest;
  std::string weights;
};

inline ModelFile EncodeModel(const Network& model, const std::string& weights_name) {
  ModelFile f;
  nlohmann::json layers = nlohmann::json::array();
  std::size_t offset = 0;
  for (std::size_t i = 0; i < model.layers().size(); ++i) {
    const LayerSpec& l = model.layers()[i];
    nlohmann::json j = detail::LayerToJson(l);
    const std::size_t count = l.ParamCount();
    std::string chunk;
    if (count > 0) {
      for (float v : model.params()[i].values()) detail::AppendLe32(chunk, v);
    }
    j["offset"] = offset;
    j["count"] = count;
    j["fnv1a64"] = detail::HexDigest(Fnv1a(chunk));
    f.weights += chunk;
    offset += count;
    layers.push_back(std::move(j));
  }
  f.manifest["format"] = "exfuzz-model";
  f.manifest["version"] = kModelFormatVersion;
  f.manifest["input_shape"] = model.input_shape();
  f.manifest["class_count"] = model.class_count();
  f.manifest["layers"] = std::move(layers);
  f.manifest["weights_file"] = weights_name;
  f.manifest["weights_bytes"] = f.weights.size();
  f.manifest["metadata"] = model.metadata();
  return f;
}

inline Network DecodeModel(const nlohmann::json& m, std::string_view weights) {
  if (!m.is_object() || m.value("format", "") != "exfuzz-model") {
    throw DataError("not an exfuzz model manifest");
  }
  if (m.value("version", 0) != kModelFormatVersion) {
    throw DataError("unsupported model manifest version " +
                    m.value("version", nlohmann::json(0)).dump());
  }
  if (!m.contains("layers") || !m["layers"].is_array()) {
    throw DataError("manifest has no layer list");
  }
  std::vector<LayerSpec> specs;
  for (std::size_t i = 0; i < m["layers"].size(); ++i) {
    specs.push_back(detail::LayerFromJson(m["layers"][i], i));
  }
  Network model(m.at("input_shape").get<Shape>(), specs, m.at("class_count").get<int>());
  const std::size_t total_values = weights.size() / 4;
  for (std::size_t i = 0; i < specs.size(); ++i) {
    const nlohmann::json& j = m["layers"][i];
    const std::string name =
        "layer " + std::to_string(i) + " (" + std::string(KindName(specs[i].kind)) + ")";
    const std::size_t want = specs[i].ParamCount();
    const auto count = j.value("count", std::size_t{0});
    const auto offset = j.value("offset", std::size_t{0});
    if (count != want) {
      throw DataError(name + ": manifest stores " + std::to_string(count) +
                      " parameters, layout requires " + std::to_string(want));
    }
    if (count == 0) continue;
    if (offset + count > total_values) {
      const std::size_t have = offset >= total_values ? 0 : total_values - offset;
      throw DataError(name + ": weight blob underfilled, expected " + std::to_string(count) +
                      " values, found " + std::to_string(have));
    }
    const std::string_view chunk = weights.substr(offset * 4, count * 4);
    if (j.contains("fnv1a64") && j["fnv1a64"] != detail::HexDigest(Fnv1a(chunk))) {
      throw DataError(name + ": checksum mismatch");
    }
    auto dst = model.params()[i].values();
    for (std::size_t k = 0; k < count; ++k) dst[k] = detail::ReadLe32(chunk.data() + 4 * k);
    if (!model.params()[i].AllFinite()) throw DataError(name + ": non-finite weights");
  }
  if (m.contains("metadata")) model.metadata() = m["metadata"];
  return model;
}

// Writes `<stem>.json`-style manifest at `path` and the blob next to it
// with a .bin extension.
inline void SaveModel(const Network& model, const std::string& path) {
  const std::string weights_path = detail::WeightsPathFor(path);
  ModelFile f =
      EncodeModel(model, std::filesystem::path(weights_path).filename().string());
  AtomicWriteFile(weights_path, f.weights);
  AtomicWriteFile(path, f.manifest.dump(2) + "\n");
}

inline Network LoadModel(const std::string& path) {
  nlohmann::json m;
  try {
    m = nlohmann::json::parse(ReadFile(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw DataError(path + ": " + e.what());
  }
  const std::string name = m.value("weights_file", "");
  if (name.empty()) throw DataError(path + ": manifest names no weights file");
  const std::filesystem::path wp = std::filesystem::path(path).parent_path() / name;
  return DecodeModel(m, ReadFile(wp.string()));
}

}  // namespace exfuzz
