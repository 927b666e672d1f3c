#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <nlohmann/json.hpp>
#include <sstream>
#include <string>
#include <vector>

#include "rsat/decoding.hpp"
#include "rsat/errors.hpp"
#include "rsat/geometry.hpp"
#include "rsat/rdm.hpp"
#include "rsat/rfmap.hpp"
#include "rsat/stats.hpp"

namespace rsat {

inline constexpr const char* kEngineVersion = "0.1.0";

using json = nlohmann::json;

// ---------------------------------------------------------------------------
// Tensor file format: 6-byte magic "RSAT1\n", 8-byte little-endian unsigned
// header length, UTF-8 JSON header, raw little-endian row-major payload.
// Header: {dtype: "f32"|"f64", shape, dim_names, coords, labels, metadata}.
// ---------------------------------------------------------------------------

inline constexpr char kTensorMagic[6] = {'R', 'S', 'A', 'T', '1', '\n'};
inline constexpr std::size_t kMagicSize = 6;
inline constexpr std::size_t kHeaderLenOffset = 6;
inline constexpr std::size_t kHeaderOffset = 14;

/// In-memory tensor: payload always widened to f64; dtype records on-disk
/// storage.
struct TensorData {
  std::vector<std::size_t> shape;
  std::vector<std::string> dim_names;
  std::map<std::string, std::vector<double>> coords;
  std::map<std::string, std::vector<std::string>> labels;
  json metadata = json::object();
  std::vector<double> data;
  std::string dtype = "f64";

  std::size_t element_count() const {
    std::size_t n = 1;
    for (std::size_t s : shape) n *= s;
    return n;
  }
};

inline void write_tensor(const std::filesystem::path& path, const TensorData& t) {
  if (t.dim_names.size() != t.shape.size())
    throw ShapeMismatch("write_tensor: dim_names length differs from shape length");
  if (t.data.size() != t.element_count())
    throw ShapeMismatch("write_tensor: payload size does not match shape");
  if (t.dtype != "f32" && t.dtype != "f64")
    throw ConfigInvalid("write_tensor: dtype must be f32 or f64");

  json header;
  header["dtype"] = t.dtype;
  header["shape"] = t.shape;
  header["dim_names"] = t.dim_names;
  header["coords"] = t.coords;
  header["labels"] = t.labels;
  header["metadata"] = t.metadata;
  const std::string header_text = header.dump();

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw InputMissing("write_tensor: cannot open '" + path.string() + "'");
  out.write(kTensorMagic, kMagicSize);
  const auto header_len = static_cast<std::uint64_t>(header_text.size());
  char len_bytes[8];
  for (int i = 0; i < 8; ++i) len_bytes[i] = static_cast<char>((header_len >> (8 * i)) & 0xFF);
  out.write(len_bytes, 8);
  out.write(header_text.data(), static_cast<std::streamsize>(header_text.size()));
  if (t.dtype == "f64") {
    out.write(reinterpret_cast<const char*>(t.data.data()),
              static_cast<std::streamsize>(t.data.size() * sizeof(double)));
  } else {
    std::vector<float> narrow(t.data.begin(), t.data.end());
    out.write(reinterpret_cast<const char*>(narrow.data()),
              static_cast<std::streamsize>(narrow.size() * sizeof(float)));
  }
  if (!out) throw InputMissing("write_tensor: write failed for '" + path.string() + "'");
}

inline TensorData read_tensor(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputMissing("read_tensor: cannot open '" + path.string() + "'");
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const std::size_t file_size = bytes.size();

  if (file_size < kMagicSize || std::memcmp(bytes.data(), kTensorMagic, kMagicSize) != 0)
    throw FormatError("read_tensor: bad magic in '" + path.string() + "'", 0);
  if (file_size < kHeaderOffset)
    throw FormatError("read_tensor: truncated header length in '" + path.string() + "'",
                      file_size);
  std::uint64_t header_len = 0;
  for (int i = 0; i < 8; ++i)
    header_len |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[kHeaderLenOffset + i]))
                  << (8 * i);
  if (file_size < kHeaderOffset + header_len)
    throw FormatError("read_tensor: truncated header in '" + path.string() + "'", file_size);

  json header;
  try {
    header = json::parse(bytes.begin() + kHeaderOffset,
                         bytes.begin() + static_cast<std::ptrdiff_t>(kHeaderOffset + header_len));
  } catch (const json::exception& e) {
    throw FormatError("read_tensor: header is not valid JSON (" + std::string(e.what()) + ")",
                      kHeaderOffset);
  }

  TensorData t;
  try {
    t.dtype = header.at("dtype").get<std::string>();
    t.shape = header.at("shape").get<std::vector<std::size_t>>();
    t.dim_names = header.at("dim_names").get<std::vector<std::string>>();
    if (header.contains("coords"))
      t.coords = header["coords"].get<std::map<std::string, std::vector<double>>>();
    if (header.contains("labels"))
      t.labels = header["labels"].get<std::map<std::string, std::vector<std::string>>>();
    if (header.contains("metadata")) t.metadata = header["metadata"];
  } catch (const json::exception& e) {
    throw FormatError("read_tensor: bad header fields (" + std::string(e.what()) + ")",
                      kHeaderOffset);
  }
  if (t.dtype != "f32" && t.dtype != "f64")
    throw FormatError("read_tensor: unknown dtype '" + t.dtype + "'", kHeaderOffset);
  if (t.dim_names.size() != t.shape.size())
    throw FormatError("read_tensor: dim_names length differs from shape length", kHeaderOffset);

  const std::size_t dsize = t.dtype == "f64" ? sizeof(double) : sizeof(float);
  const std::size_t payload_offset = kHeaderOffset + header_len;
  const std::size_t expected = payload_offset + t.element_count() * dsize;
  if (file_size < expected)
    throw FormatError("read_tensor: truncated payload in '" + path.string() + "'", file_size);
  if (file_size > expected)
    throw FormatError("read_tensor: trailing bytes after payload in '" + path.string() + "'",
                      expected);

  t.data.resize(t.element_count());
  if (t.dtype == "f64") {
    std::memcpy(t.data.data(), bytes.data() + payload_offset, t.data.size() * sizeof(double));
  } else {
    std::vector<float> narrow(t.element_count());
    std::memcpy(narrow.data(), bytes.data() + payload_offset, narrow.size() * sizeof(float));
    for (std::size_t i = 0; i < narrow.size(); ++i) t.data[i] = static_cast<double>(narrow[i]);
  }
  return t;
}

struct TensorReport {
  std::vector<std::size_t> shape;
  std::vector<std::string> dim_names;
  std::string dtype;
  std::size_t n_values = 0;
  std::size_t n_nonfinite = 0;
};

/// Checks magic, header, payload length; scans for non-finite values (NaN
/// sentinels are legal in decoding RDMs and overlays, so they are counted,
/// not rejected).
inline TensorReport validate_tensor(const std::filesystem::path& path) {
  const TensorData t = read_tensor(path);
  TensorReport report;
  report.shape = t.shape;
  report.dim_names = t.dim_names;
  report.dtype = t.dtype;
  report.n_values = t.data.size();
  for (double v : t.data)
    if (!std::isfinite(v)) ++report.n_nonfinite;
  return report;
}

// ---------------------------------------------------------------------------
// Domain type <-> tensor conversions
// ---------------------------------------------------------------------------

inline TensorData tensor_from_pattern(const PatternMatrix& p) {
  TensorData t;
  t.shape = {p.conditions.count(), p.features()};
  t.dim_names = {"condition", "feature"};
  t.labels["condition"] = p.conditions.labels;
  t.data.resize(t.element_count());
  for (Eigen::Index i = 0; i < p.values.rows(); ++i)
    for (Eigen::Index j = 0; j < p.values.cols(); ++j)
      t.data[static_cast<std::size_t>(i) * p.features() + static_cast<std::size_t>(j)] =
          p.values(i, j);
  return t;
}

inline PatternMatrix pattern_from_tensor(const TensorData& t) {
  if (t.shape.size() != 2) throw FormatError("pattern_from_tensor: need a 2-D tensor", kHeaderOffset);
  PatternMatrix p;
  if (auto it = t.labels.find(t.dim_names[0]); it != t.labels.end() && !it->second.empty())
    p.conditions.labels = it->second;
  else
    p.conditions = make_indexed_conditions(t.shape[0]);
  p.values.resize(static_cast<Eigen::Index>(t.shape[0]), static_cast<Eigen::Index>(t.shape[1]));
  for (std::size_t i = 0; i < t.shape[0]; ++i)
    for (std::size_t j = 0; j < t.shape[1]; ++j)
      p.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
          t.data[i * t.shape[1] + j];
  p.validate();
  return p;
}

inline const char* rdm_kind_name(RdmKind kind) {
  return kind == RdmKind::correlation_distance ? "correlation_distance" : "decoding_accuracy";
}

inline RdmKind rdm_kind_from_name(const std::string& name) {
  if (name == "correlation_distance") return RdmKind::correlation_distance;
  if (name == "decoding_accuracy") return RdmKind::decoding_accuracy;
  throw FormatError("unknown RDM kind '" + name + "'", kHeaderOffset);
}

inline TensorData tensor_from_rdm(const RDM& r) {
  TensorData t;
  const std::size_t n = r.count();
  t.shape = {n, n};
  t.dim_names = {"condition", "condition"};
  t.labels["condition"] = r.conditions.labels;
  t.metadata["kind"] = rdm_kind_name(r.kind);
  t.data.resize(n * n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      t.data[i * n + j] = r.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
  return t;
}

inline RDM rdm_from_tensor(const TensorData& t) {
  if (t.shape.size() != 2 || t.shape[0] != t.shape[1])
    throw FormatError("rdm_from_tensor: need a square 2-D tensor", kHeaderOffset);
  RDM r;
  const std::size_t n = t.shape[0];
  if (auto it = t.labels.find("condition"); it != t.labels.end() && !it->second.empty())
    r.conditions.labels = it->second;
  else
    r.conditions = make_indexed_conditions(n);
  r.kind = t.metadata.contains("kind")
               ? rdm_kind_from_name(t.metadata["kind"].get<std::string>())
               : RdmKind::correlation_distance;
  r.values.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      r.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = t.data[i * n + j];
  r.validate();
  return r;
}

inline const char* axis_name(SeriesAxis axis) {
  switch (axis) {
    case SeriesAxis::time_ms: return "time_ms";
    case SeriesAxis::layer: return "layer";
    default: return "vertex";
  }
}

inline SeriesAxis axis_from_name(const std::string& name) {
  if (name == "time_ms") return SeriesAxis::time_ms;
  if (name == "layer") return SeriesAxis::layer;
  if (name == "vertex") return SeriesAxis::vertex;
  throw FormatError("unknown series axis '" + name + "'", kHeaderOffset);
}

inline TensorData tensor_from_series(const RDMSeries& s) {
  s.validate();
  if (s.rdms.empty()) throw ShapeMismatch("tensor_from_series: empty series");
  const std::size_t n = s.rdms.front().count();
  TensorData t;
  t.shape = {s.size(), n, n};
  t.dim_names = {axis_name(s.axis), "condition", "condition"};
  t.coords[axis_name(s.axis)] = s.coordinates;
  t.labels["condition"] = s.rdms.front().conditions.labels;
  t.metadata["kind"] = rdm_kind_name(s.rdms.front().kind);
  t.data.resize(t.element_count());
  for (std::size_t k = 0; k < s.size(); ++k)
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j)
        t.data[(k * n + i) * n + j] =
            s.rdms[k].values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
  return t;
}

inline RDMSeries series_from_tensor(const TensorData& t) {
  if (t.shape.size() != 3 || t.shape[1] != t.shape[2])
    throw FormatError("series_from_tensor: need a [len, n, n] tensor", kHeaderOffset);
  RDMSeries s;
  s.axis = axis_from_name(t.dim_names[0]);
  if (auto it = t.coords.find(t.dim_names[0]); it != t.coords.end())
    s.coordinates = it->second;
  else {
    s.coordinates.resize(t.shape[0]);
    for (std::size_t i = 0; i < t.shape[0]; ++i) s.coordinates[i] = static_cast<double>(i);
  }
  const std::size_t n = t.shape[1];
  ConditionSet cs;
  if (auto it = t.labels.find("condition"); it != t.labels.end() && !it->second.empty())
    cs.labels = it->second;
  else
    cs = make_indexed_conditions(n);
  const RdmKind kind = t.metadata.contains("kind")
                           ? rdm_kind_from_name(t.metadata["kind"].get<std::string>())
                           : RdmKind::correlation_distance;
  for (std::size_t k = 0; k < t.shape[0]; ++k) {
    RDM r;
    r.conditions = cs;
    r.kind = kind;
    r.values.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j)
        r.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
            t.data[(k * n + i) * n + j];
    s.rdms.push_back(std::move(r));
  }
  s.validate();
  return s;
}

inline TensorData tensor_from_trials(const TrialTensor& tr) {
  tr.validate();
  TensorData t;
  t.shape = {tr.conditions.count(), tr.trials, tr.channels, tr.time_points()};
  t.dim_names = {"condition", "trial", "channel", "time_ms"};
  t.coords["time_ms"] = tr.time_ms;
  t.labels["condition"] = tr.conditions.labels;
  t.data = tr.data;
  return t;
}

inline TrialTensor trials_from_tensor(const TensorData& t) {
  if (t.shape.size() != 4)
    throw FormatError("trials_from_tensor: need a 4-D tensor", kHeaderOffset);
  TrialTensor tr;
  if (auto it = t.labels.find("condition"); it != t.labels.end() && !it->second.empty())
    tr.conditions.labels = it->second;
  else
    tr.conditions = make_indexed_conditions(t.shape[0]);
  tr.trials = t.shape[1];
  tr.channels = t.shape[2];
  if (auto it = t.coords.find(t.dim_names[3]); it != t.coords.end())
    tr.time_ms = it->second;
  else {
    tr.time_ms.resize(t.shape[3]);
    for (std::size_t i = 0; i < t.shape[3]; ++i) tr.time_ms[i] = static_cast<double>(i);
  }
  tr.data = t.data;
  tr.validate();
  return tr;
}

/// 2-D subjects x points tensor; point coordinates ride along under the
/// second dim name (e.g. "time_ms" or "vertex").
inline TensorData tensor_from_subject_data(const SubjectData& d, const std::string& point_dim,
                                           const std::vector<double>& point_coords) {
  TensorData t;
  t.shape = {d.subjects(), d.points()};
  t.dim_names = {"subject", point_dim};
  if (!point_coords.empty()) {
    if (point_coords.size() != d.points())
      throw LengthMismatch("tensor_from_subject_data: coordinate count mismatch");
    t.coords[point_dim] = point_coords;
  }
  t.data.resize(t.element_count());
  for (std::size_t s = 0; s < d.subjects(); ++s)
    for (std::size_t p = 0; p < d.points(); ++p)
      t.data[s * d.points() + p] =
          d.values(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(p));
  return t;
}

inline SubjectData subject_data_from_tensor(const TensorData& t) {
  if (t.shape.size() != 2)
    throw FormatError("subject_data_from_tensor: need a 2-D tensor", kHeaderOffset);
  SubjectData d;
  d.values.resize(static_cast<Eigen::Index>(t.shape[0]), static_cast<Eigen::Index>(t.shape[1]));
  for (std::size_t s = 0; s < t.shape[0]; ++s)
    for (std::size_t p = 0; p < t.shape[1]; ++p)
      d.values(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(p)) =
          t.data[s * t.shape[1] + p];
  d.validate();
  return d;
}

inline TensorData tensor_from_image(const Image& img) {
  img.validate();
  TensorData t;
  t.shape = {img.height, img.width, img.channels};
  t.dim_names = {"y", "x", "channel"};
  t.data = img.data;
  return t;
}

inline Image image_from_tensor(const TensorData& t) {
  Image img;
  if (t.shape.size() == 2) {
    img.height = t.shape[0];
    img.width = t.shape[1];
    img.channels = 1;
  } else if (t.shape.size() == 3) {
    img.height = t.shape[0];
    img.width = t.shape[1];
    img.channels = t.shape[2];
  } else {
    throw FormatError("image_from_tensor: need a 2-D or 3-D tensor", kHeaderOffset);
  }
  img.data = t.data;
  img.validate();
  return img;
}

inline TensorData tensor_from_map2d(const Map2D& m) {
  TensorData t;
  t.shape = {m.height, m.width};
  t.dim_names = {"y", "x"};
  t.data = m.data;
  return t;
}

inline Map2D map2d_from_tensor(const TensorData& t) {
  if (t.shape.size() != 2) throw FormatError("map2d_from_tensor: need a 2-D tensor", kHeaderOffset);
  return {t.shape[0], t.shape[1], t.data};
}

inline TensorData tensor_from_vector(const std::vector<double>& v, const std::string& dim,
                                     const std::vector<double>& coords = {}) {
  TensorData t;
  t.shape = {v.size()};
  t.dim_names = {dim};
  if (!coords.empty()) {
    if (coords.size() != v.size())
      throw LengthMismatch("tensor_from_vector: coordinate count mismatch");
    t.coords[dim] = coords;
  }
  t.data = v;
  return t;
}

// ---------------------------------------------------------------------------
// ASCII OFF meshes, CSV mappings, weight-graph JSON
// ---------------------------------------------------------------------------

inline CorticalMesh read_off(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputMissing("read_off: cannot open '" + path.string() + "'");
  auto next_line = [&](std::string& line) {
    while (std::getline(in, line)) {
      const auto start = line.find_first_not_of(" \t\r\n");
      if (start == std::string::npos || line[start] == '#') continue;
      return true;
    }
    return false;
  };
  std::string line;
  if (!next_line(line) || line.substr(0, 3) != "OFF")
    throw FormatError("read_off: missing OFF header in '" + path.string() + "'", 0);
  if (!next_line(line)) throw FormatError("read_off: missing counts line", 0);
  std::istringstream counts(line);
  std::size_t nv = 0, nf = 0, ne = 0;
  if (!(counts >> nv >> nf)) throw FormatError("read_off: bad counts line", 0);
  counts >> ne;  // edge count is ignored, as usual for OFF

  std::vector<std::array<double, 3>> vertices(nv);
  for (std::size_t i = 0; i < nv; ++i) {
    if (!next_line(line)) throw FormatError("read_off: truncated vertex list", 0);
    std::istringstream row(line);
    if (!(row >> vertices[i][0] >> vertices[i][1] >> vertices[i][2]))
      throw FormatError("read_off: bad vertex line " + std::to_string(i), 0);
  }
  std::vector<std::array<int, 3>> faces(nf);
  for (std::size_t i = 0; i < nf; ++i) {
    if (!next_line(line)) throw FormatError("read_off: truncated face list", 0);
    std::istringstream row(line);
    int arity = 0;
    if (!(row >> arity) || arity != 3)
      throw FormatError("read_off: face " + std::to_string(i) + " is not a triangle", 0);
    if (!(row >> faces[i][0] >> faces[i][1] >> faces[i][2]))
      throw FormatError("read_off: bad face line " + std::to_string(i), 0);
  }
  return make_mesh(std::move(vertices), std::move(faces));
}

inline void write_off(const std::filesystem::path& path, const CorticalMesh& mesh) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw InputMissing("write_off: cannot open '" + path.string() + "'");
  out << "OFF\n" << mesh.vertices.size() << " " << mesh.faces.size() << " 0\n";
  out.precision(17);
  for (const auto& v : mesh.vertices) out << v[0] << " " << v[1] << " " << v[2] << "\n";
  for (const auto& f : mesh.faces) out << "3 " << f[0] << " " << f[1] << " " << f[2] << "\n";
}

/// Two-column integer CSV with a header row: (vertex_id, feature_id) for
/// feature maps, (subject_vertex, average_vertex) for correspondence tables.
inline std::vector<std::pair<int, int>> read_mapping_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputMissing("read_mapping_csv: cannot open '" + path.string() + "'");
  std::string line;
  if (!std::getline(in, line))
    throw FormatError("read_mapping_csv: empty file '" + path.string() + "'", 0);
  std::vector<std::pair<int, int>> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r\n") == std::string::npos) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos)
      throw FormatError("read_mapping_csv: line " + std::to_string(line_no) + " has no comma", 0);
    try {
      rows.emplace_back(std::stoi(line.substr(0, comma)), std::stoi(line.substr(comma + 1)));
    } catch (const std::exception&) {
      throw FormatError("read_mapping_csv: bad integers on line " + std::to_string(line_no), 0);
    }
  }
  return rows;
}

inline void write_mapping_csv(const std::filesystem::path& path,
                              const std::vector<std::pair<int, int>>& rows,
                              const std::string& header = "vertex_id,feature_id") {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw InputMissing("write_mapping_csv: cannot open '" + path.string() + "'");
  out << header << "\n";
  for (const auto& [a, b] : rows) out << a << "," << b << "\n";
}

inline FeatureMap feature_map_from_rows(const std::vector<std::pair<int, int>>& rows,
                                        std::size_t n_vertices) {
  FeatureMap fm;
  fm.feature_of_vertex.assign(n_vertices, -1);
  for (const auto& [v, f] : rows) {
    if (v < 0 || static_cast<std::size_t>(v) >= n_vertices)
      throw VertexOutOfRange("feature map references vertex " + std::to_string(v));
    fm.feature_of_vertex[static_cast<std::size_t>(v)] = f;
  }
  for (std::size_t v = 0; v < n_vertices; ++v)
    if (fm.feature_of_vertex[v] < 0)
      throw DegenerateInput("feature map misses vertex " + std::to_string(v));
  return fm;
}

/// 2-D pattern CSV: header row "condition,<feature ids...>", one labeled row
/// per condition.
inline PatternMatrix read_pattern_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputMissing("read_pattern_csv: cannot open '" + path.string() + "'");
  std::string line;
  if (!std::getline(in, line))
    throw FormatError("read_pattern_csv: empty file '" + path.string() + "'", 0);
  auto split = [](const std::string& s) {
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream row(s);
    while (std::getline(row, cell, ',')) {
      while (!cell.empty() && (cell.back() == '\r' || cell.back() == '\n')) cell.pop_back();
      cells.push_back(cell);
    }
    return cells;
  };
  const std::size_t n_cols = split(line).size();
  if (n_cols < 2) throw FormatError("read_pattern_csv: header needs features", 0);

  PatternMatrix p;
  std::vector<std::vector<double>> rows;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r\n") == std::string::npos) continue;
    const auto cells = split(line);
    if (cells.size() != n_cols)
      throw FormatError("read_pattern_csv: ragged row " + std::to_string(rows.size() + 2), 0);
    p.conditions.labels.push_back(cells[0]);
    std::vector<double> values;
    for (std::size_t i = 1; i < cells.size(); ++i) {
      try {
        values.push_back(std::stod(cells[i]));
      } catch (const std::exception&) {
        throw FormatError("read_pattern_csv: bad number '" + cells[i] + "'", 0);
      }
    }
    rows.push_back(std::move(values));
  }
  p.values.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(n_cols - 1));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j + 1 < n_cols; ++j)
      p.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
  p.validate();
  return p;
}

inline WeightGraph read_weight_graph(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputMissing("read_weight_graph: cannot open '" + path.string() + "'");
  json doc;
  try {
    in >> doc;
  } catch (const json::exception& e) {
    throw FormatError("read_weight_graph: bad JSON (" + std::string(e.what()) + ")", 0);
  }
  WeightGraph g;
  try {
    g.units_per_layer = doc.at("units_per_layer").get<std::vector<int>>();
    for (const auto& e : doc.at("edges"))
      g.edges.push_back({e.at(0).get<int>(), e.at(1).get<int>(), e.at(2).get<int>(),
                         e.at(3).get<int>(), e.at(4).get<double>()});
  } catch (const json::exception& e) {
    throw FormatError("read_weight_graph: bad fields (" + std::string(e.what()) + ")", 0);
  }
  g.validate();
  return g;
}

inline void write_weight_graph(const std::filesystem::path& path, const WeightGraph& g) {
  json doc;
  doc["units_per_layer"] = g.units_per_layer;
  doc["edges"] = json::array();
  for (const auto& e : g.edges)
    doc["edges"].push_back({e.src_layer, e.src_unit, e.dst_layer, e.dst_unit, e.weight});
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  out << doc.dump(2) << "\n";
}

inline void write_json(const std::filesystem::path& path, const json& doc) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw InputMissing("write_json: cannot open '" + path.string() + "'");
  out << doc.dump(2) << "\n";
}

inline json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputMissing("read_json: cannot open '" + path.string() + "'");
  try {
    json doc;
    in >> doc;
    return doc;
  } catch (const json::exception& e) {
    throw FormatError("read_json: bad JSON in '" + path.string() + "' (" + e.what() + ")", 0);
  }
}

inline std::string fnv1a_hex(const std::string& bytes) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001B3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace rsat
