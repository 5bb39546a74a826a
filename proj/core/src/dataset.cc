#include "shapmkt/dataset.h"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "shapmkt/crypto.h"
#include "shapmkt/error.h"

namespace shapmkt {

void Dataset::Append(std::span<const double> features, int label) {
  if (cols == 0 && x.empty()) cols = features.size();
  if (features.size() != cols) throw Error(ErrorCode::kShape, "row width differs from dataset width");
  x.insert(x.end(), features.begin(), features.end());
  y.push_back(label);
  classes = std::max(classes, label + 1);
}

Dataset Dataset::Subset(std::span<const std::size_t> idx) const {
  Dataset d;
  d.cols = cols;
  d.classes = classes;
  d.x.reserve(idx.size() * cols);
  for (std::size_t i : idx) {
    if (i >= rows()) throw Error(ErrorCode::kShape, "subset index out of range");
    auto r = row(i);
    d.x.insert(d.x.end(), r.begin(), r.end());
    if (labelled()) d.y.push_back(y[i]);
  }
  return d;
}

void Dataset::Validate() const {
  if (cols == 0 && !x.empty()) throw Error(ErrorCode::kShape, "features without a width");
  if (cols != 0 && x.size() % cols != 0) throw Error(ErrorCode::kShape, "ragged feature matrix");
  if (labelled() && y.size() != rows()) throw Error(ErrorCode::kShape, "label count differs from rows");
  for (int v : y) {
    if (v < 0 || v >= classes) throw Error(ErrorCode::kShape, "label out of range");
  }
}

Dataset Concat(std::span<const Dataset> parts) {
  Dataset d;
  for (const Dataset& p : parts) {
    if (p.rows() == 0) continue;
    if (d.cols == 0) d.cols = p.cols;
    if (p.cols != d.cols) throw Error(ErrorCode::kShape, "concatenating datasets of different widths");
    d.x.insert(d.x.end(), p.x.begin(), p.x.end());
    d.y.insert(d.y.end(), p.y.begin(), p.y.end());
    d.classes = std::max(d.classes, p.classes);
  }
  return d;
}

namespace {

std::vector<std::string> SplitCsv(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream ss(line);
  while (std::getline(ss, cur, ',')) {
    cur.erase(0, cur.find_first_not_of(" \t\r"));
    cur.erase(cur.find_last_not_of(" \t\r") + 1);
    out.push_back(cur);
  }
  return out;
}

}  // namespace

Dataset ReadCsv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIo, "cannot open '" + path + "'");
  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorCode::kFormat, path + ": missing header row");
  const auto header = SplitCsv(line);
  const bool labelled = !header.empty() && header.back() == "label";
  const std::size_t cols = header.size() - (labelled ? 1 : 0);
  Dataset d;
  d.cols = cols;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto cells = SplitCsv(line);
    if (cells.size() != header.size()) {
      throw Error(ErrorCode::kFormat, path + ":" + std::to_string(line_no) + ": expected " +
                                          std::to_string(header.size()) + " cells");
    }
    for (std::size_t j = 0; j < cols; ++j) {
      double v = 0;
      auto [p, ec] = std::from_chars(cells[j].data(), cells[j].data() + cells[j].size(), v);
      if (ec != std::errc() || p != cells[j].data() + cells[j].size()) {
        throw Error(ErrorCode::kFormat, path + ":" + std::to_string(line_no) + ": bad number '" + cells[j] + "'");
      }
      d.x.push_back(v);
    }
    if (labelled) {
      int v = 0;
      const std::string& c = cells.back();
      auto [p, ec] = std::from_chars(c.data(), c.data() + c.size(), v);
      if (ec != std::errc() || p != c.data() + c.size() || v < 0) {
        throw Error(ErrorCode::kFormat, path + ":" + std::to_string(line_no) + ": bad label '" + c + "'");
      }
      d.y.push_back(v);
      d.classes = std::max(d.classes, v + 1);
    }
  }
  return d;
}

void WriteCsv(const Dataset& d, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::kIo, "cannot write '" + path + "'");
  for (std::size_t j = 0; j < d.cols; ++j) out << (j ? "," : "") << 'x' << j;
  if (d.labelled()) out << (d.cols ? "," : "") << "label";
  out << '\n' << std::setprecision(17);
  for (std::size_t i = 0; i < d.rows(); ++i) {
    auto r = d.row(i);
    for (std::size_t j = 0; j < d.cols; ++j) out << (j ? "," : "") << r[j];
    if (d.labelled()) out << ',' << d.y[i];
    out << '\n';
  }
}

namespace {

template <typename T>
void PutLe(std::vector<std::uint8_t>& out, T v) {
  using U = std::make_unsigned_t<T>;
  U u;
  std::memcpy(&u, &v, sizeof(T));
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<std::uint8_t>(u >> (8 * i)));
}

template <typename T>
T GetLe(std::span<const std::uint8_t> in, std::size_t& off) {
  if (off + sizeof(T) > in.size()) throw Error(ErrorCode::kFormat, "canonical encoding truncated");
  using U = std::make_unsigned_t<T>;
  U u = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) u |= static_cast<U>(static_cast<U>(in[off + i]) << (8 * i));
  off += sizeof(T);
  T v;
  std::memcpy(&v, &u, sizeof(T));
  return v;
}

constexpr char kMagic[4] = {'S', 'M', 'D', 'S'};

}  // namespace

std::vector<std::uint8_t> EncodeCanonical(const Dataset& d) {
  d.Validate();
  std::vector<std::uint8_t> payload;
  PutLe<std::uint32_t>(payload, static_cast<std::uint32_t>(d.rows()));
  PutLe<std::uint32_t>(payload, static_cast<std::uint32_t>(d.cols));
  payload.push_back(d.labelled() ? 1 : 0);
  PutLe<std::uint32_t>(payload, static_cast<std::uint32_t>(d.classes));
  for (double v : d.x) PutLe<std::uint64_t>(payload, std::bit_cast<std::uint64_t>(v));
  for (int v : d.y) PutLe<std::int32_t>(payload, v);
  std::vector<std::uint8_t> out(kMagic, kMagic + 4);
  PutLe<std::uint64_t>(out, payload.size());
  out.insert(out.end(), payload.begin(), payload.end());
  PutLe<std::uint32_t>(out, Crc32(payload));
  return out;
}

Dataset DecodeCanonical(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 16 || !std::equal(kMagic, kMagic + 4, bytes.begin())) {
    throw Error(ErrorCode::kFormat, "not a canonical dataset encoding (bad magic)");
  }
  std::size_t off = 4;
  const std::uint64_t len = GetLe<std::uint64_t>(bytes, off);
  if (len != bytes.size() - 16) throw Error(ErrorCode::kFormat, "canonical encoding length mismatch");
  const auto payload = bytes.subspan(12, len);
  std::size_t crc_off = 12 + len;
  if (GetLe<std::uint32_t>(bytes, crc_off) != Crc32(payload)) {
    throw Error(ErrorCode::kFormat, "canonical encoding checksum mismatch");
  }
  std::size_t p = 0;
  const std::uint32_t rows = GetLe<std::uint32_t>(payload, p);
  const std::uint32_t cols = GetLe<std::uint32_t>(payload, p);
  if (p >= payload.size()) throw Error(ErrorCode::kFormat, "canonical encoding truncated");
  const bool labelled = payload[p++] != 0;
  Dataset d;
  d.classes = static_cast<int>(GetLe<std::uint32_t>(payload, p));
  d.cols = cols;
  d.x.resize(static_cast<std::size_t>(rows) * cols);
  for (auto& v : d.x) v = std::bit_cast<double>(GetLe<std::uint64_t>(payload, p));
  if (labelled) {
    d.y.resize(rows);
    for (auto& v : d.y) {
      v = GetLe<std::int32_t>(payload, p);
      if (v < 0 || v >= d.classes) throw Error(ErrorCode::kFormat, "label out of range in canonical encoding");
    }
  }
  if (p != payload.size()) throw Error(ErrorCode::kFormat, "trailing bytes in canonical encoding");
  return d;
}

}  // namespace shapmkt
