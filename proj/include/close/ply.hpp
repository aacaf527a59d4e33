// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace closenet::ply {

/// Vertex properties of a PLY file keyed by property name. Faces and other
/// elements are skipped.
struct VertexTable {
  std::size_t count = 0;
  std::map<std::string, std::vector<double>> columns;
  std::map<std::string, std::string> types;  // declared scalar type per column

  bool has(const std::string& name) const { return columns.contains(name); }
};

VertexTable read(const std::filesystem::path& path);
VertexTable parse(const std::string& bytes);

struct Column {
  std::string name;
  std::string type;  // "double", "float", "uchar", ...
  const std::vector<double>* values;
};

void write(const std::filesystem::path& path, std::size_t count, const std::vector<Column>& columns,
           bool ascii = false);

}  // namespace closenet::ply
