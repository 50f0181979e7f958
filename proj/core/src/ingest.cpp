#include "hge/ingest.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iterator>
#include <sstream>

#include "hge/errors.hpp"

namespace hge {

namespace {

class IdxReader {
 public:
  explicit IdxReader(const std::string& bytes) : bytes_(bytes) {}

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v = (v << 8) | static_cast<unsigned char>(bytes_[pos_++]);
    return v;
  }

  unsigned char u8() {
    need(1);
    return static_cast<unsigned char>(bytes_[pos_++]);
  }

  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) throw IngestionError("idx: truncated file", pos_);
  }

  std::size_t pos() const { return pos_; }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  const std::string& bytes_;
  std::size_t pos_ = 0;
};

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IngestionError("cannot open " + path.string(), 0);
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

}  // namespace

nn::Matrix parse_idx_images(const std::string& bytes) {
  IdxReader r(bytes);
  const std::uint32_t magic = r.u32();
  if (magic != 0x00000803) throw IngestionError("idx: expected image magic 0x00000803", 0);
  const std::uint32_t count = r.u32();
  const std::uint32_t rows = r.u32();
  const std::uint32_t cols = r.u32();
  const std::uint64_t dim = static_cast<std::uint64_t>(rows) * cols;
  if (dim == 0) throw IngestionError("idx: zero image dimensions", 8);
  if (r.remaining() != static_cast<std::uint64_t>(count) * dim) {
    if (r.remaining() < static_cast<std::uint64_t>(count) * dim)
      throw IngestionError("idx: truncated file", bytes.size());
    throw IngestionError("idx: trailing bytes after declared images", r.pos() + count * dim);
  }
  nn::Matrix out(count, static_cast<Eigen::Index>(dim));
  for (std::uint32_t i = 0; i < count; ++i)
    for (std::uint64_t j = 0; j < dim; ++j) out(i, static_cast<Eigen::Index>(j)) = r.u8() / 255.0;
  return out;
}

std::vector<int> parse_idx_labels(const std::string& bytes) {
  IdxReader r(bytes);
  const std::uint32_t magic = r.u32();
  if (magic != 0x00000801) throw IngestionError("idx: expected label magic 0x00000801", 0);
  const std::uint32_t count = r.u32();
  if (r.remaining() != count) {
    if (r.remaining() < count) throw IngestionError("idx: truncated file", bytes.size());
    throw IngestionError("idx: trailing bytes after declared labels", r.pos() + count);
  }
  std::vector<int> out(count);
  for (auto& l : out) l = r.u8();
  return out;
}

Dataset parse_csv(const std::string& text) {
  std::vector<std::vector<double>> rows;
  std::vector<int> labels;
  std::size_t pos = 0;
  int width = -1;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string::npos) end = text.size();
    std::string_view line(text.data() + pos, end - pos);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (!line.empty()) {
      std::vector<double> fields;
      std::size_t start = 0;
      while (true) {
        const std::size_t comma = line.find(',', start);
        const std::string_view cell = line.substr(start, comma == std::string_view::npos ? line.npos : comma - start);
        double v = 0.0;
        const char* first = cell.data();
        const char* last = cell.data() + cell.size();
        while (first < last && *first == ' ') ++first;
        while (last > first && last[-1] == ' ') --last;
        auto [ptr, ec] = std::from_chars(first, last, v);
        if (ec != std::errc() || ptr != last || first == last || !std::isfinite(v))
          throw IngestionError("csv: malformed number", pos + start);
        fields.push_back(v);
        if (comma == std::string_view::npos) break;
        start = comma + 1;
      }
      if (fields.size() < 2) throw IngestionError("csv: need a label and at least one feature", pos);
      if (width < 0) width = static_cast<int>(fields.size());
      if (static_cast<int>(fields.size()) != width) throw IngestionError("csv: inconsistent column count", pos);
      const double label = fields.front();
      if (label < 0 || label != std::floor(label)) throw IngestionError("csv: label must be a non-negative integer", pos);
      labels.push_back(static_cast<int>(label));
      rows.emplace_back(fields.begin() + 1, fields.end());
    }
    pos = end + 1;
  }
  if (rows.empty()) throw IngestionError("csv: no rows", 0);

  Dataset d;
  d.labels = std::move(labels);
  d.inputs.resize(static_cast<Eigen::Index>(rows.size()), width - 1);
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (int j = 0; j < width - 1; ++j) d.inputs(static_cast<Eigen::Index>(i), j) = rows[i][static_cast<std::size_t>(j)];
  const double lo = d.inputs.minCoeff();
  const double hi = d.inputs.maxCoeff();
  if (hi > lo)
    d.inputs = (d.inputs.array() - lo) / (hi - lo);
  else
    d.inputs.setZero();
  return d;
}

Dataset load_external(const std::filesystem::path& path, DataFormat format, const std::filesystem::path& labels_path) {
  if (format == DataFormat::Csv) return parse_csv(read_file(path));

  std::filesystem::path lp = labels_path;
  if (lp.empty()) {
    std::string name = path.filename().string();
    const auto at = name.find("images");
    if (at == std::string::npos) throw IngestionError("idx: cannot infer label file for " + path.string(), 0);
    name.replace(at, 6, "labels");
    lp = path.parent_path() / name;
  }
  Dataset d;
  d.inputs = parse_idx_images(read_file(path));
  d.labels = parse_idx_labels(read_file(lp));
  if (d.labels.size() != static_cast<std::size_t>(d.inputs.rows()))
    throw IngestionError("idx: image and label counts differ", 4);
  return d;
}

DataFormat parse_format(const std::string& name) {
  if (name == "idx") return DataFormat::Idx;
  if (name == "csv") return DataFormat::Csv;
  throw ConfigError("unknown dataset format '" + name + "' (expected idx or csv)");
}

}  // namespace hge
