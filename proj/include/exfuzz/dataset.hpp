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

#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "exfuzz/error.hpp"
#include "exfuzz/rng.hpp"
#include "exfuzz/tensor.hpp"

namespace exfuzz {

enum class Split : std::uint8_t { kTrain, kTest };

// Labelled examples with values in [0, 1] and a train/test tag per example.
struct Dataset {
  std::string name;
  Shape shape;
  int class_count = 0;
  std::vector<Tensor> inputs;
  std::vector<int> labels;
  std::vector<Split> splits;
  std::vector<char> polluted;  // set for examples stamped by PolluteDataset

  std::size_t size() const { return inputs.size(); }

  std::vector<std::size_t> Indices(Split split) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < splits.size(); ++i) {
      if (splits[i] == split) out.push_back(i);
    }
    return out;
  }

  // Inputs and labels of one split, in dataset order.
  std::pair<std::vector<Tensor>, std::vector<int>> Part(Split split) const {
    std::pair<std::vector<Tensor>, std::vector<int>> out;
    for (std::size_t i : Indices(split)) {
      out.first.push_back(inputs[i]);
      out.second.push_back(labels[i]);
    }
    return out;
  }

  void Validate() const {
    if (labels.size() != inputs.size() || splits.size() != inputs.size() ||
        polluted.size() != inputs.size()) {
      throw DataError("dataset '" + name + "': column lengths differ");
    }
    for (std::size_t i = 0; i < inputs.size(); ++i) {
      if (inputs[i].shape() != shape) {
        throw DataError("dataset '" + name + "': example " + std::to_string(i) +
                        " has shape " + ShapeString(inputs[i].shape()));
      }
      if (labels[i] < 0 || labels[i] >= class_count) {
        throw DataError("dataset '" + name + "': example " + std::to_string(i) +
                        " has label " + std::to_string(labels[i]) +
                        " outside [0, " + std::to_string(class_count) + ")");
      }
      for (float v : inputs[i].values()) {
        if (!(v >= 0.0f && v <= 1.0f)) {
          throw DataError("dataset '" + name + "': example " + std::to_string(i) +
                          " has a value outside [0, 1]");
        }
      }
    }
  }

  // Same examples reshaped (e.g. 64 -> 1x8x8).
  Dataset Reshaped(const Shape& s) const {
    Dataset d = *this;
    d.shape = s;
    for (Tensor& t : d.inputs) t = t.Reshaped(s);
    return d;
  }
};

// Deterministic 80/20 split: every fifth example goes to the test split.
inline std::vector<Split> DefaultSplit(std::size_t n) {
  std::vector<Split> s(n, Split::kTrain);
  for (std::size_t i = 4; i < n; i += 5) s[i] = Split::kTest;
  return s;
}

namespace detail {

inline Shape ImageShapeFor(std::size_t pixels) {
  const auto side = static_cast<std::size_t>(std::lround(std::sqrt(static_cast<double>(pixels))));
  if (side * side == pixels) return Shape{1, static_cast<int>(side), static_cast<int>(side)};
  return Shape{static_cast<int>(pixels)};
}

}  // namespace detail

// CSV with one example per row: label first, then integer pixels 0..255.
inline Dataset ParseCsvDigits(std::istream& in, const std::string& name) {
  Dataset d;
  d.name = name;
  std::string line;
  std::size_t line_no = 0;
  std::size_t width = 0;
  int max_label = -1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<long> fields;
    std::size_t pos = 0;
    while (pos <= line.size()) {
      const std::size_t comma = std::min(line.find(',', pos), line.size());
      const std::string cell = line.substr(pos, comma - pos);
      std::size_t used = 0;
      long v = 0;
      try {
        v = std::stol(cell, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (cell.empty() || used != cell.size()) {
        throw DataError(name + ":" + std::to_string(line_no) + ": field " +
                        std::to_string(fields.size() + 1) + " is not an integer");
      }
      fields.push_back(v);
      pos = comma + 1;
    }
    if (fields.size() < 2) {
      throw DataError(name + ":" + std::to_string(line_no) + ": expected a label and pixels");
    }
    if (width == 0) width = fields.size() - 1;
    if (fields.size() - 1 != width) {
      throw DataError(name + ":" + std::to_string(line_no) + ": expected " +
                      std::to_string(width) + " pixels, got " +
                      std::to_string(fields.size() - 1));
    }
    if (fields[0] < 0) {
      throw DataError(name + ":" + std::to_string(line_no) + ": negative label");
    }
    std::vector<float> pixels(width);
    for (std::size_t i = 0; i < width; ++i) {
      const long v = fields[i + 1];
      if (v < 0 || v > 255) {
        throw DataError(name + ":" + std::to_string(line_no) + ": pixel " +
                        std::to_string(i) + " = " + std::to_string(v) +
                        " is outside 0..255");
      }
      pixels[i] = static_cast<float>(v) / 255.0f;
    }
    max_label = std::max(max_label, static_cast<int>(fields[0]));
    d.labels.push_back(static_cast<int>(fields[0]));
    d.inputs.emplace_back(Shape{static_cast<int>(width)}, std::move(pixels));
  }
  if (d.inputs.empty()) throw DataError(name + ": no examples");
  d.shape = detail::ImageShapeFor(width);
  for (Tensor& t : d.inputs) t = t.Reshaped(d.shape);
  d.class_count = max_label + 1;
  d.splits = DefaultSplit(d.size());
  d.polluted.assign(d.size(), 0);
  d.Validate();
  return d;
}

inline Dataset LoadCsvDigits(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open dataset " + path);
  return ParseCsvDigits(in, path);
}

// Writes the CSV format back (values are rounded to 0..255).
inline void WriteCsvRow(std::ostream& out, int label, std::span<const float> pixels) {
  out << label;
  for (float v : pixels) out << ',' << std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f);
  out << '\n';
}

inline constexpr std::uint32_t kIdxImageMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelMagic = 0x00000801;

namespace detail {

inline std::uint32_t ReadBigEndian32(std::istream& in, const std::string& what) {
  std::array<unsigned char, 4> b{};
  if (!in.read(reinterpret_cast<char*>(b.data()), 4)) {
    throw DataError(what + ": truncated header");
  }
  return (std::uint32_t{b[0]} << 24) | (std::uint32_t{b[1]} << 16) |
         (std::uint32_t{b[2]} << 8) | std::uint32_t{b[3]};
}

inline std::string Hex32(std::uint32_t v) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "0x%08X", v);
  return buf;
}

inline void WriteBigEndian32(std::ostream& out, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v >> 24),
                              static_cast<unsigned char>(v >> 16),
                              static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

}  // namespace detail

// Classic IDX pair: ubyte images (magic 0x00000803) and labels (0x00000801).
inline Dataset ParseIdx(std::istream& images, std::istream& labels,
                        const std::string& name) {
  const std::uint32_t magic = detail::ReadBigEndian32(images, name);
  if (magic != kIdxImageMagic) {
    throw DataError(name + ": image file magic " + detail::Hex32(magic) +
                    ", expected " + detail::Hex32(kIdxImageMagic));
  }
  const std::uint32_t n = detail::ReadBigEndian32(images, name);
  const std::uint32_t rows = detail::ReadBigEndian32(images, name);
  const std::uint32_t cols = detail::ReadBigEndian32(images, name);
  const std::uint32_t lmagic = detail::ReadBigEndian32(labels, name);
  if (lmagic != kIdxLabelMagic) {
    throw DataError(name + ": label file magic " + detail::Hex32(lmagic) +
                    ", expected " + detail::Hex32(kIdxLabelMagic));
  }
  const std::uint32_t ln = detail::ReadBigEndian32(labels, name);
  if (ln != n) {
    throw DataError(name + ": " + std::to_string(n) + " images but " +
                    std::to_string(ln) + " labels");
  }
  if (rows == 0 || cols == 0) throw DataError(name + ": empty image dimensions");
  Dataset d;
  d.name = name;
  d.shape = Shape{1, static_cast<int>(rows), static_cast<int>(cols)};
  const std::size_t px = static_cast<std::size_t>(rows) * cols;
  std::vector<unsigned char> buf(px);
  int max_label = -1;
  for (std::uint32_t i = 0; i < n; ++i) {
    if (!images.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(px))) {
      throw DataError(name + ": image record " + std::to_string(i) +
                      " truncated at byte offset " + std::to_string(16 + i * px));
    }
    char lab = 0;
    if (!labels.get(lab)) {
      throw DataError(name + ": label record " + std::to_string(i) +
                      " truncated at byte offset " + std::to_string(8 + i));
    }
    std::vector<float> v(px);
    for (std::size_t k = 0; k < px; ++k) v[k] = static_cast<float>(buf[k]) / 255.0f;
    d.inputs.emplace_back(d.shape, std::move(v));
    const int label = static_cast<unsigned char>(lab);
    max_label = std::max(max_label, label);
    d.labels.push_back(label);
  }
  d.class_count = max_label + 1;
  d.splits = DefaultSplit(d.size());
  d.polluted.assign(d.size(), 0);
  d.Validate();
  return d;
}

inline Dataset LoadIdx(const std::string& images_path, const std::string& labels_path) {
  std::ifstream images(images_path, std::ios::binary);
  if (!images) throw DataError("cannot open " + images_path);
  std::ifstream labels(labels_path, std::ios::binary);
  if (!labels) throw DataError("cannot open " + labels_path);
  return ParseIdx(images, labels, images_path);
}

inline void WriteIdx(std::ostream& images, std::ostream& labels, const Dataset& d) {
  if (d.shape.size() != 3 || d.shape[0] != 1) {
    throw UsageError("IDX export needs 1xHxW examples");
  }
  detail::WriteBigEndian32(images, kIdxImageMagic);
  detail::WriteBigEndian32(images, static_cast<std::uint32_t>(d.size()));
  detail::WriteBigEndian32(images, static_cast<std::uint32_t>(d.shape[1]));
  detail::WriteBigEndian32(images, static_cast<std::uint32_t>(d.shape[2]));
  detail::WriteBigEndian32(labels, kIdxLabelMagic);
  detail::WriteBigEndian32(labels, static_cast<std::uint32_t>(d.size()));
  for (std::size_t i = 0; i < d.size(); ++i) {
    for (float v : d.inputs[i].values()) {
      images.put(static_cast<char>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f)));
    }
    labels.put(static_cast<char>(d.labels[i]));
  }
}

// Isotropic Gaussian blobs, one per class, clamped to [0, 1]. Labels cycle
// through the classes so counts are balanced.
inline Dataset SyntheticBlobs(int n, int classes, std::uint64_t seed, int dim = 2,
                              double spread = 0.08) {
  if (n <= 0 || classes <= 0 || dim <= 0) {
    throw UsageError("synthetic blobs need positive n, classes and dim");
  }
  Rng rng(seed);
  std::vector<std::vector<double>> centers(static_cast<std::size_t>(classes));
  for (auto& c : centers) {
    for (int k = 0; k < dim; ++k) c.push_back(rng.Uniform(0.2, 0.8));
  }
  Dataset d;
  d.name = "synthetic_blobs";
  d.shape = Shape{dim};
  d.class_count = classes;
  for (int i = 0; i < n; ++i) {
    const int label = i % classes;
    std::vector<float> v(static_cast<std::size_t>(dim));
    for (int k = 0; k < dim; ++k) {
      // Box-Muller.
      const double u1 = 1.0 - rng.Uniform();
      const double u2 = rng.Uniform();
      const double z = std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
      v[static_cast<std::size_t>(k)] = static_cast<float>(
          std::clamp(centers[static_cast<std::size_t>(label)][static_cast<std::size_t>(k)] + spread * z, 0.0, 1.0));
    }
    d.inputs.emplace_back(d.shape, std::move(v));
    d.labels.push_back(label);
  }
  d.splits = DefaultSplit(d.size());
  d.polluted.assign(d.size(), 0);
  d.Validate();
  return d;
}

enum class DatasetFormat { kCsvDigits, kIdxImages, kSyntheticBlobs };

// `path` per format: csv_digits -> the CSV file; idx_images -> the image
// file, labels read from `labels_path`; synthetic_blobs -> ignored, the
// generator is parameterised by n/classes/seed.
struct DatasetSource {
  DatasetFormat format = DatasetFormat::kCsvDigits;
  std::string path;
  std::string labels_path;
  int blobs_n = 200;
  int blobs_classes = 2;
  std::uint64_t blobs_seed = 7;
};

inline Dataset LoadDataset(const DatasetSource& src) {
  switch (src.format) {
    case DatasetFormat::kCsvDigits:
      return LoadCsvDigits(src.path);
    case DatasetFormat::kIdxImages:
      return LoadIdx(src.path, src.labels_path);
    case DatasetFormat::kSyntheticBlobs:
      return SyntheticBlobs(src.blobs_n, src.blobs_classes, src.blobs_seed);
  }
  throw UsageError("unknown dataset format");
}

}  // namespace exfuzz
