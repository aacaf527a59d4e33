// SPDX-License-Identifier: Apache-2.0
#include "close/ply.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <charconv>
#include <cstring>
#include <fstream>
#include <sstream>

#include "close/error.hpp"

namespace closenet::ply {
namespace {

enum class Format { Ascii, BinaryLE, BinaryBE };

struct Property {
  std::string name;
  std::string type;
  bool is_list = false;
  std::string count_type;
};

struct Element {
  std::string name;
  std::size_t count = 0;
  std::vector<Property> properties;
};

std::size_t type_size(const std::string& type, std::size_t offset) {
  if (type == "char" || type == "uchar" || type == "int8" || type == "uint8") return 1;
  if (type == "short" || type == "ushort" || type == "int16" || type == "uint16") return 2;
  if (type == "int" || type == "uint" || type == "int32" || type == "uint32" ||
      type == "float" || type == "float32")
    return 4;
  if (type == "double" || type == "float64") return 8;
  throw ParseError("unknown PLY scalar type '" + type + "'", offset);
}

template <typename T>
T load(const char* p, bool swap) {
  std::array<char, sizeof(T)> bytes;
  std::memcpy(bytes.data(), p, sizeof(T));
  if (swap) std::reverse(bytes.begin(), bytes.end());
  T value;
  std::memcpy(&value, bytes.data(), sizeof(T));
  return value;
}

double decode(const std::string& type, const char* p, bool swap) {
  if (type == "char" || type == "int8") return load<std::int8_t>(p, swap);
  if (type == "uchar" || type == "uint8") return load<std::uint8_t>(p, swap);
  if (type == "short" || type == "int16") return load<std::int16_t>(p, swap);
  if (type == "ushort" || type == "uint16") return load<std::uint16_t>(p, swap);
  if (type == "int" || type == "int32") return load<std::int32_t>(p, swap);
  if (type == "uint" || type == "uint32") return load<std::uint32_t>(p, swap);
  if (type == "float" || type == "float32") return load<float>(p, swap);
  return load<double>(p, swap);
}

template <typename T>
void store(std::string& out, T value) {
  char bytes[sizeof(T)];
  std::memcpy(bytes, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  out.append(bytes, sizeof(T));
}

void encode(std::string& out, const std::string& type, double v) {
  if (type == "char" || type == "int8") store(out, static_cast<std::int8_t>(v));
  else if (type == "uchar" || type == "uint8") store(out, static_cast<std::uint8_t>(v));
  else if (type == "short" || type == "int16") store(out, static_cast<std::int16_t>(v));
  else if (type == "ushort" || type == "uint16") store(out, static_cast<std::uint16_t>(v));
  else if (type == "int" || type == "int32") store(out, static_cast<std::int32_t>(v));
  else if (type == "uint" || type == "uint32") store(out, static_cast<std::uint32_t>(v));
  else if (type == "float" || type == "float32") store(out, static_cast<float>(v));
  else store(out, v);
}

class Cursor {
 public:
  explicit Cursor(const std::string& bytes) : bytes_(bytes) {}

  std::size_t offset() const { return pos_; }
  bool at_end() const { return pos_ >= bytes_.size(); }

  std::string line() {
    if (at_end()) throw ParseError("unexpected end of PLY header", pos_);
    const std::size_t end = bytes_.find('\n', pos_);
    if (end == std::string::npos) throw ParseError("unterminated PLY header line", pos_);
    std::string out = bytes_.substr(pos_, end - pos_);
    if (!out.empty() && out.back() == '\r') out.pop_back();
    pos_ = end + 1;
    return out;
  }

  std::string_view token() {
    while (pos_ < bytes_.size() && std::isspace(static_cast<unsigned char>(bytes_[pos_]))) ++pos_;
    const std::size_t start = pos_;
    while (pos_ < bytes_.size() && !std::isspace(static_cast<unsigned char>(bytes_[pos_]))) ++pos_;
    if (start == pos_) throw ParseError("unexpected end of PLY data", start);
    return std::string_view(bytes_).substr(start, pos_ - start);
  }

  double number() {
    const std::size_t start = pos_;
    const std::string_view tok = token();
    double value = 0.0;
    const auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), value);
    if (ec != std::errc() || ptr != tok.data() + tok.size()) {
      throw ParseError("malformed number '" + std::string(tok) + "'", start);
    }
    return value;
  }

  const char* take(std::size_t n) {
    if (pos_ + n > bytes_.size()) throw ParseError("truncated binary PLY body", pos_);
    const char* p = bytes_.data() + pos_;
    pos_ += n;
    return p;
  }

 private:
  const std::string& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

VertexTable parse(const std::string& bytes) {
  Cursor cur(bytes);
  if (cur.line() != "ply") throw ParseError("missing 'ply' magic", 0);
  Format format = Format::Ascii;
  bool have_format = false;
  std::vector<Element> elements;
  while (true) {
    const std::size_t line_start = cur.offset();
    std::istringstream ls(cur.line());
    std::string keyword;
    ls >> keyword;
    if (keyword.empty() || keyword == "comment" || keyword == "obj_info") continue;
    if (keyword == "end_header") break;
    if (keyword == "format") {
      std::string f;
      ls >> f;
      if (f == "ascii") format = Format::Ascii;
      else if (f == "binary_little_endian") format = Format::BinaryLE;
      else if (f == "binary_big_endian") format = Format::BinaryBE;
      else throw ParseError("unsupported PLY format '" + f + "'", line_start);
      have_format = true;
    } else if (keyword == "element") {
      Element e;
      long long count = -1;
      ls >> e.name >> count;
      if (!ls || count < 0) throw ParseError("malformed element line", line_start);
      e.count = static_cast<std::size_t>(count);
      elements.push_back(std::move(e));
    } else if (keyword == "property") {
      if (elements.empty()) throw ParseError("property before any element", line_start);
      Property p;
      ls >> p.type;
      if (p.type == "list") {
        p.is_list = true;
        ls >> p.count_type >> p.type;
        type_size(p.count_type, line_start);
      }
      ls >> p.name;
      if (!ls) throw ParseError("malformed property line", line_start);
      type_size(p.type, line_start);
      elements.back().properties.push_back(std::move(p));
    } else {
      throw ParseError("unknown PLY header keyword '" + keyword + "'", line_start);
    }
  }
  if (!have_format) throw ParseError("PLY header lacks a format line", 0);

  VertexTable table;
  bool found_vertex = false;
  const bool swap = (format == Format::BinaryLE) != (std::endian::native == std::endian::little);
  for (const Element& e : elements) {
    const bool is_vertex = e.name == "vertex";
    if (is_vertex) {
      found_vertex = true;
      table.count = e.count;
      for (const Property& p : e.properties) {
        if (!p.is_list) {
          table.columns[p.name].reserve(e.count);
          table.types[p.name] = p.type;
        }
      }
    }
    for (std::size_t row = 0; row < e.count; ++row) {
      for (const Property& p : e.properties) {
        if (format == Format::Ascii) {
          if (p.is_list) {
            const std::size_t at = cur.offset();
            const double n = cur.number();
            if (n < 0) throw ParseError("negative list length", at);
            for (long long i = 0; i < static_cast<long long>(n); ++i) cur.number();
          } else {
            const double v = cur.number();
            if (is_vertex) table.columns[p.name].push_back(v);
          }
        } else {
          if (p.is_list) {
            const std::size_t at = cur.offset();
            const double n = decode(p.count_type, cur.take(type_size(p.count_type, at)), swap);
            if (n < 0) throw ParseError("negative list length", at);
            cur.take(static_cast<std::size_t>(n) * type_size(p.type, at));
          } else {
            const double v = decode(p.type, cur.take(type_size(p.type, cur.offset())), swap);
            if (is_vertex) table.columns[p.name].push_back(v);
          }
        }
      }
    }
  }
  if (!found_vertex) throw ParseError("PLY file has no vertex element", bytes.size());
  return table;
}

VertexTable read(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open point cloud " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse(bytes);
}

void write(const std::filesystem::path& path, std::size_t count, const std::vector<Column>& columns,
           bool ascii) {
  std::string out = "ply\nformat ";
  out += ascii ? "ascii 1.0\n" : "binary_little_endian 1.0\n";
  out += "element vertex " + std::to_string(count) + "\n";
  for (const Column& c : columns) {
    if (c.values->size() != count) throw ShapeMismatchError("PLY column '" + c.name + "' length");
    out += "property " + c.type + " " + c.name + "\n";
  }
  out += "end_header\n";
  for (std::size_t i = 0; i < count; ++i) {
    for (std::size_t c = 0; c < columns.size(); ++c) {
      const double v = (*columns[c].values)[i];
      if (ascii) {
        char buffer[64];
        const auto [ptr, ec] = std::to_chars(buffer, buffer + sizeof(buffer), v);
        out.append(buffer, ptr);
        out.push_back(c + 1 == columns.size() ? '\n' : ' ');
      } else {
        encode(out, columns[c].type, v);
      }
    }
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("cannot write " + path.string());
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
}

}  // namespace closenet::ply
