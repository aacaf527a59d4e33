// SPDX-License-Identifier: Apache-2.0
#include "close/scan.hpp"

#include <cmath>
#include <fstream>

#include <Eigen/Eigenvalues>
#include <json.hpp>

#include "close/error.hpp"
#include "close/knn.hpp"
#include "close/ply.hpp"

namespace closenet {
namespace {

using nlohmann::json;

constexpr int kSchemaVersion = 1;

json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ParseError(path.string() + ": " + e.what(), e.byte);
  }
}

void write_json(const std::filesystem::path& path, const json& doc) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << doc.dump(1) << '\n';
}

std::vector<ClassId> labels_from_json(const json& arr) {
  if (!arr.is_array()) throw ValidationError("labels must be an array");
  std::vector<ClassId> labels;
  labels.reserve(arr.size());
  for (std::size_t i = 0; i < arr.size(); ++i) {
    if (!arr[i].is_number_integer()) throw ValidationError("label at index " + std::to_string(i) + " is not an integer");
    const long long id = arr[i].get<long long>();
    if (id < 1 || id > kNumClasses) {
      throw ValidationError("label " + std::to_string(id) + " at index " + std::to_string(i) +
                            " is outside 1..18");
    }
    labels.push_back(static_cast<ClassId>(id - 1));
  }
  return labels;
}

json labels_to_json(std::span<const ClassId> labels) {
  json arr = json::array();
  for (ClassId id : labels) arr.push_back(int(id) + 1);
  return arr;
}

GarmentVector garments_from_json(const json& j) {
  if (j.is_string()) return GarmentVector::parse(j.get<std::string>(), LabelTaxonomy::standard());
  if (!j.is_array()) throw ValidationError("garments must be an array");
  GarmentVector g;
  if (j.size() == kNumClasses && std::all_of(j.begin(), j.end(), [](const json& v) { return v.is_number(); })) {
    for (int i = 0; i < kNumClasses; ++i) {
      const double v = j[i].get<double>();
      if (v != 0.0 && v != 1.0) throw ValidationError("garment flags must be 0 or 1");
      g.set(static_cast<ClassId>(i), v == 1.0);
    }
  } else {
    for (const auto& name : j) g.set(LabelTaxonomy::standard().resolve(name.get<std::string>()));
  }
  g.validate();
  return g;
}

json garments_to_json(const GarmentVector& g) {
  json arr = json::array();
  for (int i = 0; i < kNumClasses; ++i) arr.push_back(g.has(static_cast<ClassId>(i)) ? 1 : 0);
  return arr;
}

const std::vector<double>* find_column(const ply::VertexTable& t, std::initializer_list<const char*> names,
                                       std::string* type = nullptr) {
  for (const char* n : names) {
    auto it = t.columns.find(n);
    if (it != t.columns.end()) {
      if (type) *type = t.types.at(n);
      return &it->second;
    }
  }
  return nullptr;
}

}  // namespace

void ScanSample::validate() const {
  const std::size_t n = points.rows();
  if (points.cols() != 3) throw ShapeMismatchError("points must be n×3");
  if (colors.rows() != n || colors.cols() != 3) throw ShapeMismatchError("colors must be n×3");
  if (normals.rows() != n || normals.cols() != 3) throw ShapeMismatchError("normals must be n×3");
  for (std::size_t i = 0; i < n; ++i) {
    double norm2 = 0.0;
    for (int a = 0; a < 3; ++a) {
      if (!std::isfinite(points(i, a))) {
        throw ValidationError("non-finite position at point " + std::to_string(i));
      }
      const double c = colors(i, a);
      if (!(c >= 0.0 && c <= 1.0)) throw ValidationError("color outside [0,1] at point " + std::to_string(i));
      norm2 += normals(i, a) * normals(i, a);
    }
    if (std::abs(std::sqrt(norm2) - 1.0) > 1e-4) {
      throw ValidationError("normal at point " + std::to_string(i) + " is not unit length");
    }
  }
  if (garments) garments->validate();
  if (labels) {
    if (labels->size() != n) {
      throw ShapeMismatchError("label count " + std::to_string(labels->size()) +
                               " != point count " + std::to_string(n));
    }
    validate_labels(*labels);
    if (garments) {
      for (std::size_t i = 0; i < n; ++i) {
        if (!garments->has((*labels)[i])) {
          throw ValidationError("label '" + std::string(LabelTaxonomy::standard().name((*labels)[i])) +
                                "' at point " + std::to_string(i) + " is not declared in the garment vector");
        }
      }
    }
  }
  if (body) body->validate();
}

std::pair<ScanSample, NormalizationRecord> normalize(const ScanSample& scan) {
  const std::size_t n = scan.size();
  if (n == 0) throw ValidationError("cannot normalize an empty scan");
  NormalizationRecord record;
  for (int a = 0; a < 3; ++a) {
    double sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) sum += scan.points(i, a);
    record.translation[a] = sum / static_cast<double>(n);
  }
  ScanSample out = scan;
  for (std::size_t i = 0; i < n; ++i) {
    for (int a = 0; a < 3; ++a) out.points(i, a) -= record.translation[a];
  }
  if (out.body) {
    for (int a = 0; a < 3; ++a) out.body->translation[a] -= record.translation[a];
  }
  return {std::move(out), record};
}

Matrix estimate_normals(const Matrix& points, int k) {
  const std::size_t n = points.rows();
  Matrix normals(n, 3);
  if (n == 0) return normals;
  Eigen::Vector3d centroid = Eigen::Vector3d::Zero();
  for (std::size_t i = 0; i < n; ++i) centroid += Eigen::Vector3d(points(i, 0), points(i, 1), points(i, 2));
  centroid /= static_cast<double>(n);

  KnnGraph graph;
  if (n >= 3) graph = build_knn_graph(points, k);
  for (std::size_t i = 0; i < n; ++i) {
    const Eigen::Vector3d p(points(i, 0), points(i, 1), points(i, 2));
    Eigen::Vector3d normal = p - centroid;
    if (n >= 3) {
      Eigen::Vector3d mean = p;
      const auto nbrs = graph.of(i);
      for (auto j : nbrs) mean += Eigen::Vector3d(points(j, 0), points(j, 1), points(j, 2));
      mean /= static_cast<double>(nbrs.size() + 1);
      Eigen::Matrix3d cov = (p - mean) * (p - mean).transpose();
      for (auto j : nbrs) {
        const Eigen::Vector3d d = Eigen::Vector3d(points(j, 0), points(j, 1), points(j, 2)) - mean;
        cov += d * d.transpose();
      }
      Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> solver(cov);
      normal = solver.eigenvectors().col(0);
    }
    if (normal.norm() < 1e-12 || !normal.allFinite()) normal = Eigen::Vector3d::UnitZ();
    normal.normalize();
    if (normal.dot(p - centroid) < 0.0) normal = -normal;
    for (int a = 0; a < 3; ++a) normals(i, a) = normal[a];
  }
  return normals;
}

void read_scan_metadata(const std::filesystem::path& path, ScanSample& scan) {
  const json doc = read_json(path);
  if (!doc.is_object()) throw ValidationError(path.string() + ": metadata must be an object");
  if (doc.contains("schema") && doc.at("schema") != kSchemaVersion) {
    throw ValidationError(path.string() + ": unsupported schema version");
  }
  if (doc.contains("id") && doc.at("id").is_string()) scan.id = doc.at("id").get<std::string>();
  if (doc.contains("garments") && !doc.at("garments").is_null()) scan.garments = garments_from_json(doc.at("garments"));
  if (doc.contains("body") && !doc.at("body").is_null()) scan.body = body_params_from_json(doc.at("body"));
  if (doc.contains("labels") && !doc.at("labels").is_null()) {
    auto labels = labels_from_json(doc.at("labels"));
    if (scan.points.rows() != 0 && labels.size() != scan.points.rows()) {
      throw ShapeMismatchError(path.string() + ": label count " + std::to_string(labels.size()) +
                               " != point count " + std::to_string(scan.points.rows()));
    }
    scan.labels = std::move(labels);
  }
}

void write_scan_metadata(const ScanSample& scan, const std::filesystem::path& path) {
  json doc = {{"schema", kSchemaVersion}, {"id", scan.id}};
  doc["labels"] = scan.labels ? labels_to_json(*scan.labels) : json(nullptr);
  doc["garments"] = scan.garments ? garments_to_json(*scan.garments) : json(nullptr);
  doc["body"] = scan.body ? to_json(*scan.body) : json(nullptr);
  write_json(path, doc);
}

std::vector<ClassId> read_label_file(const std::filesystem::path& path) {
  const json doc = read_json(path);
  if (doc.is_array()) return labels_from_json(doc);
  if (!doc.is_object() || !doc.contains("labels")) throw ValidationError(path.string() + ": no labels array");
  return labels_from_json(doc.at("labels"));
}

void write_label_file(const std::filesystem::path& path, const std::string& id,
                      std::span<const ClassId> labels, std::span<const double> confidence) {
  json doc = {{"schema", kSchemaVersion}, {"id", id}, {"labels", labels_to_json(labels)}};
  if (!confidence.empty()) doc["confidence"] = std::vector<double>(confidence.begin(), confidence.end());
  write_json(path, doc);
}

ScanSample load_scan(const std::filesystem::path& ply_path,
                     const std::optional<std::filesystem::path>& meta_path) {
  const ply::VertexTable table = ply::read(ply_path);
  const auto* x = find_column(table, {"x"});
  const auto* y = find_column(table, {"y"});
  const auto* z = find_column(table, {"z"});
  if (!x || !y || !z) throw ParseError(ply_path.string() + ": vertex element lacks x/y/z", 0);

  ScanSample scan;
  scan.id = ply_path.stem().string();
  const std::size_t n = table.count;
  scan.points.resize(n, 3);
  scan.colors.resize(n, 3, 0.5);
  for (std::size_t i = 0; i < n; ++i) {
    scan.points(i, 0) = (*x)[i];
    scan.points(i, 1) = (*y)[i];
    scan.points(i, 2) = (*z)[i];
  }

  std::string color_type;
  const auto* r = find_column(table, {"red", "r", "diffuse_red"}, &color_type);
  const auto* g = find_column(table, {"green", "g", "diffuse_green"});
  const auto* b = find_column(table, {"blue", "b", "diffuse_blue"});
  if (r && g && b) {
    const bool is_float = color_type.starts_with("float") || color_type == "double";
    const double divisor = is_float ? 1.0 : 255.0;
    for (std::size_t i = 0; i < n; ++i) {
      scan.colors(i, 0) = std::clamp((*r)[i] / divisor, 0.0, 1.0);
      scan.colors(i, 1) = std::clamp((*g)[i] / divisor, 0.0, 1.0);
      scan.colors(i, 2) = std::clamp((*b)[i] / divisor, 0.0, 1.0);
    }
  }

  const auto* nx = find_column(table, {"nx"});
  const auto* ny = find_column(table, {"ny"});
  const auto* nz = find_column(table, {"nz"});
  bool have_normals = nx && ny && nz;
  if (have_normals) {
    scan.normals.resize(n, 3);
    for (std::size_t i = 0; i < n && have_normals; ++i) {
      const double len = std::sqrt((*nx)[i] * (*nx)[i] + (*ny)[i] * (*ny)[i] + (*nz)[i] * (*nz)[i]);
      if (!(len > 1e-12) || !std::isfinite(len)) {
        have_normals = false;
        break;
      }
      // Keep stored unit normals bit-exact; only rescale ones that are off.
      const double s = std::abs(len - 1.0) <= 1e-6 ? 1.0 : 1.0 / len;
      scan.normals(i, 0) = (*nx)[i] * s;
      scan.normals(i, 1) = (*ny)[i] * s;
      scan.normals(i, 2) = (*nz)[i] * s;
    }
  }
  if (!have_normals) scan.normals = estimate_normals(scan.points, 12);

  if (meta_path) read_scan_metadata(*meta_path, scan);
  scan.validate();
  return scan;
}

std::optional<std::filesystem::path> save_scan(const ScanSample& scan,
                                               const std::filesystem::path& ply_path, bool ascii) {
  scan.validate();
  const std::size_t n = scan.size();
  std::array<std::vector<double>, 9> cols;
  for (auto& c : cols) c.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (int a = 0; a < 3; ++a) {
      cols[a][i] = scan.points(i, a);
      cols[3 + a][i] = scan.normals(i, a);
      cols[6 + a][i] = std::round(scan.colors(i, a) * 255.0);
    }
  }
  ply::write(ply_path, n,
             {{"x", "double", &cols[0]},  {"y", "double", &cols[1]},  {"z", "double", &cols[2]},
              {"nx", "double", &cols[3]}, {"ny", "double", &cols[4]}, {"nz", "double", &cols[5]},
              {"red", "uchar", &cols[6]}, {"green", "uchar", &cols[7]}, {"blue", "uchar", &cols[8]}},
             ascii);
  if (!scan.labels && !scan.body && !scan.garments) return std::nullopt;
  std::filesystem::path meta = ply_path;
  meta.replace_extension(".json");
  write_scan_metadata(scan, meta);
  return meta;
}

}  // namespace closenet
