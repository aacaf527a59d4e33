// SPDX-License-Identifier: Apache-2.0
#include "close/body_model.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include <json.hpp>

#include "close/error.hpp"
#include "close/hashing.hpp"
#include "close/knn.hpp"
#include "close/toy_humanoid.hpp"

namespace closenet {

using nlohmann::json;

std::vector<std::string> BodyModel::vertex_regions() const {
  std::vector<std::string> out(num_vertices());
  for (const auto& [name, ids] : regions) {
    for (auto v : ids) {
      if (v < out.size()) out[v] = name;
    }
  }
  return out;
}

void BodyModel::validate() const {
  const std::size_t V = num_vertices(), J = num_joints();
  if (V == 0 || template_vertices.cols() != 3) throw ValidationError("body model: template must be V×3");
  if (J == 0 || joints.cols() != 3) throw ValidationError("body model: joints must be J×3");
  if (parents.size() != J || parents[0] != -1)
    throw ValidationError("body model: parents must have J entries with parents[0] == -1");
  for (std::size_t j = 1; j < J; ++j) {
    if (parents[j] < 0 || static_cast<std::size_t>(parents[j]) >= j)
      throw ValidationError("body model: parents must precede their children");
  }
  if (skin_weights.rows() != V || skin_weights.cols() != J)
    throw ValidationError("body model: skin weights must be V×J");
  for (std::size_t v = 0; v < V; ++v) {
    double sum = 0.0;
    for (double w : skin_weights.row(v)) sum += w;
    if (std::abs(sum - 1.0) > 1e-6)
      throw ValidationError("body model: skin weights of vertex " + std::to_string(v) + " do not sum to 1");
  }
  if (shape_dirs.size() != joint_shape_dirs.size())
    throw ValidationError("body model: shape and joint shape directions differ in count");
  for (std::size_t b = 0; b < shape_dirs.size(); ++b) {
    if (shape_dirs[b].rows() != V || shape_dirs[b].cols() != 3 || joint_shape_dirs[b].rows() != J ||
        joint_shape_dirs[b].cols() != 3)
      throw ValidationError("body model: shape direction " + std::to_string(b) + " has wrong dimensions");
  }
  for (const auto& [name, ids] : regions) {
    for (auto v : ids) {
      if (v >= V) throw ValidationError("body model: region '" + name + "' references a missing vertex");
    }
  }
}

std::uint64_t BodyModel::hash() const {
  Fnv1a h;
  h.update(template_vertices.values());
  h.update(joints.values());
  for (int p : parents) h.update_value(p);
  h.update(skin_weights.values());
  for (const auto& d : shape_dirs) h.update(d.values());
  for (const auto& d : joint_shape_dirs) h.update(d.values());
  return h.digest();
}

namespace {

json matrix_to_json(const Matrix& m) {
  json rows = json::array();
  for (std::size_t r = 0; r < m.rows(); ++r) rows.push_back(std::vector<double>(m.row(r).begin(), m.row(r).end()));
  return rows;
}

Matrix matrix_from_json(const json& j, std::size_t cols, const char* what) {
  if (!j.is_array()) throw ValidationError(std::string("body model: '") + what + "' must be an array");
  Matrix m(j.size(), cols);
  for (std::size_t r = 0; r < j.size(); ++r) {
    const auto& row = j[r];
    if (!row.is_array() || (cols != 0 && row.size() != cols))
      throw ValidationError(std::string("body model: row ") + std::to_string(r) + " of '" + what +
                            "' has the wrong length");
    for (std::size_t c = 0; c < cols; ++c) m(r, c) = row[c].get<double>();
  }
  return m;
}

}  // namespace

BodyModel load_body_model(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open body model " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ParseError("body model " + path.string() + ": " + e.what(), e.byte);
  }
  try {
    if (doc.value("schema", 0) != 1) throw ValidationError("body model: unsupported schema");
    BodyModel m;
    m.template_vertices = matrix_from_json(doc.at("template"), 3, "template");
    m.joints = matrix_from_json(doc.at("joints"), 3, "joints");
    m.parents = doc.at("parents").get<std::vector<int>>();
    m.skin_weights = matrix_from_json(doc.at("weights"), m.num_joints(), "weights");
    for (const auto& d : doc.value("shape_dirs", json::array()))
      m.shape_dirs.push_back(matrix_from_json(d, 3, "shape_dirs"));
    for (const auto& d : doc.value("joint_shape_dirs", json::array()))
      m.joint_shape_dirs.push_back(matrix_from_json(d, 3, "joint_shape_dirs"));
    if (doc.contains("regions"))
      m.regions = doc.at("regions").get<std::map<std::string, std::vector<std::uint32_t>>>();
    m.validate();
    return m;
  } catch (const json::exception& e) {
    throw ValidationError("body model " + path.string() + ": " + e.what());
  }
}

void save_body_model(const BodyModel& model, const std::filesystem::path& path) {
  model.validate();
  json doc;
  doc["schema"] = 1;
  doc["template"] = matrix_to_json(model.template_vertices);
  doc["joints"] = matrix_to_json(model.joints);
  doc["parents"] = model.parents;
  doc["weights"] = matrix_to_json(model.skin_weights);
  doc["shape_dirs"] = json::array();
  for (const auto& d : model.shape_dirs) doc["shape_dirs"].push_back(matrix_to_json(d));
  doc["joint_shape_dirs"] = json::array();
  for (const auto& d : model.joint_shape_dirs) doc["joint_shape_dirs"].push_back(matrix_to_json(d));
  doc["regions"] = model.regions;
  std::ofstream out(path);
  if (!out) throw Error("cannot write body model " + path.string());
  out << doc.dump();
}

const BodyModel& toy_body_model() {
  static const BodyModel model = [] {
    auto m = toy::build_body_model();
    m.validate();
    return m;
  }();
  return model;
}

namespace {

using Mat3 = std::array<double, 9>;

Mat3 rodrigues(double x, double y, double z) {
  const double theta = std::sqrt(x * x + y * y + z * z);
  if (theta < 1e-12) return {1, 0, 0, 0, 1, 0, 0, 0, 1};
  const double kx = x / theta, ky = y / theta, kz = z / theta;
  const double c = std::cos(theta), s = std::sin(theta), v = 1.0 - c;
  return {c + kx * kx * v,      kx * ky * v - kz * s, kx * kz * v + ky * s,
          ky * kx * v + kz * s, c + ky * ky * v,      ky * kz * v - kx * s,
          kz * kx * v - ky * s, kz * ky * v + kx * s, c + kz * kz * v};
}

void check_params(const BodyModel& model, const BodyParams& params) {
  params.validate();
  if (!params.pose.empty() && params.pose.size() != 3 * model.num_joints())
    throw ShapeMismatchError("body pose has " + std::to_string(params.pose.size()) + " values, model needs " +
                             std::to_string(3 * model.num_joints()));
  if (!params.shape.empty() && params.shape.size() != model.num_shape())
    throw ShapeMismatchError("body shape has " + std::to_string(params.shape.size()) +
                             " coefficients, model has " + std::to_string(model.num_shape()));
}

}  // namespace

std::pair<Matrix, Matrix> shaped_rest(const BodyModel& model, const BodyParams& params) {
  check_params(model, params);
  Matrix verts = model.template_vertices;
  Matrix joints = model.joints;
  for (std::size_t b = 0; b < params.shape.size(); ++b) {
    add_inplace(verts, model.shape_dirs[b], params.shape[b]);
    add_inplace(joints, model.joint_shape_dirs[b], params.shape[b]);
  }
  return {std::move(verts), std::move(joints)};
}

std::vector<std::array<double, 12>> joint_transforms(const BodyModel& model, const BodyParams& params) {
  const auto [verts, joints] = shaped_rest(model, params);
  const std::size_t J = model.num_joints();
  std::vector<std::array<double, 12>> global(J);
  for (std::size_t j = 0; j < J; ++j) {
    const Mat3 r = params.pose.empty()
                       ? Mat3{1, 0, 0, 0, 1, 0, 0, 0, 1}
                       : rodrigues(params.pose[3 * j], params.pose[3 * j + 1], params.pose[3 * j + 2]);
    std::array<double, 3> offset{joints(j, 0), joints(j, 1), joints(j, 2)};
    if (model.parents[j] >= 0) {
      const auto p = static_cast<std::size_t>(model.parents[j]);
      for (int a = 0; a < 3; ++a) offset[a] -= joints(p, a);
    }
    std::array<double, 12> local{r[0], r[1], r[2], offset[0], r[3], r[4], r[5], offset[1],
                                 r[6], r[7], r[8], offset[2]};
    if (model.parents[j] < 0) {
      global[j] = local;
      continue;
    }
    const auto& g = global[static_cast<std::size_t>(model.parents[j])];
    auto& out = global[j];
    for (int row = 0; row < 3; ++row) {
      for (int col = 0; col < 4; ++col) {
        double v = 0.0;
        for (int k = 0; k < 3; ++k) v += g[row * 4 + k] * local[k * 4 + col];
        if (col == 3) v += g[row * 4 + 3];
        out[row * 4 + col] = v;
      }
    }
  }
  // Remove the rest joint location so transforms act on rest-pose coordinates.
  for (std::size_t j = 0; j < J; ++j) {
    auto& g = global[j];
    for (int row = 0; row < 3; ++row) {
      double rj = 0.0;
      for (int k = 0; k < 3; ++k) rj += g[row * 4 + k] * joints(j, k);
      g[row * 4 + 3] += params.translation[row] - rj;
    }
  }
  return global;
}

Matrix pose_body(const BodyModel& model, const BodyParams& params) {
  const auto transforms = joint_transforms(model, params);
  const auto rest = shaped_rest(model, params).first;
  const std::size_t V = model.num_vertices(), J = model.num_joints();
  Matrix out(V, 3);
  for (std::size_t v = 0; v < V; ++v) {
    std::array<double, 12> blended{};
    for (std::size_t j = 0; j < J; ++j) {
      const double w = model.skin_weights(v, j);
      if (w == 0.0) continue;
      for (int e = 0; e < 12; ++e) blended[e] += w * transforms[j][e];
    }
    for (int row = 0; row < 3; ++row) {
      out(v, row) = blended[row * 4] * rest(v, 0) + blended[row * 4 + 1] * rest(v, 1) +
                    blended[row * 4 + 2] * rest(v, 2) + blended[row * 4 + 3];
    }
  }
  return out;
}

BodyFeatureField encode_body(const Matrix& points, const BodyModel& model, const BodyParams& params) {
  if (points.cols() != 3) throw ShapeMismatchError("encode_body: points must be n×3");
  const Matrix posed = pose_body(model, params);
  const PointGrid grid(posed);
  BodyFeatureField field;
  field.coords.resize(points.rows(), 3);
  field.vertex.resize(points.rows());
  for (std::size_t i = 0; i < points.rows(); ++i) {
    const auto v = grid.nearest({points(i, 0), points(i, 1), points(i, 2)});
    field.vertex[i] = v;
    for (int a = 0; a < 3; ++a) field.coords(i, a) = model.template_vertices(v, a);
  }
  return field;
}

BodyFeatureField encode_body(const ScanSample& scan, const BodyModel& model) {
  if (!scan.body) throw ValidationError("scan '" + scan.id + "' has no body parameters");
  return encode_body(scan.points, model, *scan.body);
}

BodyFeatureField encode_body_hybrid(const ScanSample&, const BodyModel&) {
  throw Error("hybrid body encoding is not available; use the canonical encoder");
}

BodyFeatureCache::BodyFeatureCache(std::optional<std::filesystem::path> directory)
    : directory_(std::move(directory)) {
  if (directory_) std::filesystem::create_directories(*directory_);
}

std::string BodyFeatureCache::file_name(const std::string& scan_id, std::uint64_t key_hash) {
  return scan_id + "." + to_hex(key_hash) + ".bodyfeat";
}

std::size_t BodyFeatureCache::size() const {
  std::lock_guard lock(mutex_);
  return entries_.size();
}

namespace {

constexpr char kFeatMagic[8] = {'C', 'L', 'B', 'F', 'E', 'A', 'T', '1'};

std::shared_ptr<BodyFeatureField> read_feature_file(const std::filesystem::path& path, std::size_t n) {
  std::ifstream in(path, std::ios::binary);
  if (!in) return nullptr;
  char magic[8];
  std::uint64_t count = 0;
  in.read(magic, 8);
  in.read(reinterpret_cast<char*>(&count), sizeof count);
  if (!in || std::memcmp(magic, kFeatMagic, 8) != 0 || count != n) return nullptr;
  auto field = std::make_shared<BodyFeatureField>();
  field->vertex.resize(n);
  field->coords.resize(n, 3);
  in.read(reinterpret_cast<char*>(field->vertex.data()), static_cast<std::streamsize>(n * sizeof(std::uint32_t)));
  in.read(reinterpret_cast<char*>(field->coords.data()), static_cast<std::streamsize>(n * 3 * sizeof(double)));
  if (!in) return nullptr;
  return field;
}

void write_feature_file(const std::filesystem::path& path, const BodyFeatureField& field) {
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) return;
    const std::uint64_t count = field.vertex.size();
    out.write(kFeatMagic, 8);
    out.write(reinterpret_cast<const char*>(&count), sizeof count);
    out.write(reinterpret_cast<const char*>(field.vertex.data()),
              static_cast<std::streamsize>(count * sizeof(std::uint32_t)));
    out.write(reinterpret_cast<const char*>(field.coords.data()),
              static_cast<std::streamsize>(count * 3 * sizeof(double)));
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
}

}  // namespace

std::shared_ptr<const BodyFeatureField> BodyFeatureCache::get(const ScanSample& scan, const BodyModel& model) {
  if (!scan.body) throw ValidationError("scan '" + scan.id + "' has no body parameters");
  Fnv1a h;
  h.update_value(scan.body->hash());
  h.update_value(model.hash());
  h.update(scan.points.values());
  const std::string key = file_name(scan.id, h.digest());
  {
    std::lock_guard lock(mutex_);
    if (auto it = entries_.find(key); it != entries_.end()) return it->second;
  }
  std::shared_ptr<const BodyFeatureField> field;
  if (directory_) field = read_feature_file(*directory_ / key, scan.size());
  if (!field) {
    auto computed = std::make_shared<BodyFeatureField>(encode_body(scan, model));
    if (directory_) write_feature_file(*directory_ / key, *computed);
    field = std::move(computed);
  }
  std::lock_guard lock(mutex_);
  return entries_.emplace(key, field).first->second;
}

}  // namespace closenet
