#pragma once

// Labelled tabular data, its CSV form, and the canonical byte encoding that
// is encrypted for sale.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace shapmkt {

struct Dataset {
  std::size_t cols = 0;
  std::vector<double> x;    // row-major, rows() * cols
  std::vector<int> y;       // empty when unlabelled
  int classes = 0;

  std::size_t rows() const { return cols == 0 ? 0 : x.size() / cols; }
  bool labelled() const { return !y.empty(); }
  std::span<const double> row(std::size_t i) const { return {x.data() + i * cols, cols}; }

  void Append(std::span<const double> features, int label);
  Dataset Subset(std::span<const std::size_t> idx) const;
  void Validate() const;
  bool operator==(const Dataset&) const = default;
};

Dataset Concat(std::span<const Dataset> parts);

// Header row; feature columns then an optional integer "label" column.
Dataset ReadCsv(const std::string& path);
void WriteCsv(const Dataset& d, const std::string& path);

// "SMDS" | u64 payload length | payload | CRC32 of the payload (little endian).
// Payload: u32 rows, u32 cols, u8 labelled, u32 classes, f64 features, i32 labels.
std::vector<std::uint8_t> EncodeCanonical(const Dataset& d);
// Throws a format error on a bad magic, length or checksum.
Dataset DecodeCanonical(std::span<const std::uint8_t> bytes);

}  // namespace shapmkt
