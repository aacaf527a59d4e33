// SPDX-License-Identifier: Apache-2.0
#include "close/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "close/error.hpp"

namespace closenet {

using nlohmann::json;

namespace {

constexpr char kMagic[8] = {'C', 'L', 'O', 'S', 'E', 'C', 'K', 'P'};

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

}  // namespace

void save_checkpoint(const NetworkState& state, const std::filesystem::path& path, const json& metadata) {
  json header;
  header["schema"] = 1;
  header["taxonomy"] = LabelTaxonomy::standard().fingerprint();
  header["config"] = to_json(state.config);
  header["state_hash"] = state.hash();
  header["metadata"] = metadata;
  json tensors = json::array();
  std::uint64_t offset = 0;
  for (const auto& [name, m] : state.params) {
    tensors.push_back({{"name", name}, {"rows", m.rows()}, {"cols", m.cols()}, {"offset", offset}});
    offset += m.size();
  }
  header["tensors"] = tensors;
  const std::string text = header.dump();

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw Error("cannot write checkpoint " + path.string());
    const std::uint32_t version = kCheckpointVersion;
    const std::uint64_t length = text.size();
    out.write(kMagic, sizeof kMagic);
    out.write(reinterpret_cast<const char*>(&version), sizeof version);
    out.write(reinterpret_cast<const char*>(&length), sizeof length);
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& [_, m] : state.params) {
      out.write(reinterpret_cast<const char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double)));
    }
    if (!out) throw Error("failed writing checkpoint " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

NetworkState load_checkpoint(const std::filesystem::path& path, const LabelTaxonomy& taxonomy, json* metadata) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open checkpoint " + path.string());
  char magic[8];
  std::uint32_t version = 0;
  std::uint64_t length = 0;
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kMagic, sizeof kMagic) != 0)
    throw ParseError(path.string() + " is not a checkpoint", 0);
  in.read(reinterpret_cast<char*>(&version), sizeof version);
  in.read(reinterpret_cast<char*>(&length), sizeof length);
  if (!in) throw ParseError("truncated checkpoint header", 8);
  if (version != kCheckpointVersion)
    throw ValidationError("unsupported checkpoint version " + std::to_string(version));
  if (length > (1u << 30)) throw ParseError("implausible checkpoint header length", 12);
  std::string text(length, '\0');
  in.read(text.data(), static_cast<std::streamsize>(length));
  if (!in) throw ParseError("truncated checkpoint header", 20);
  json header;
  try {
    header = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError("checkpoint header: " + std::string(e.what()), 20 + e.byte);
  }
  const std::size_t data_start = 20 + length;
  try {
    if (header.at("taxonomy").get<std::string>() != taxonomy.fingerprint())
      throw ValidationError("checkpoint " + path.string() + " was trained with a different label taxonomy");
    NetworkState expected = NetworkState::initialize(network_config_from_json(header.at("config")), 0);
    const auto& tensors = header.at("tensors");
    if (tensors.size() != expected.params.size())
      throw ValidationError("checkpoint tensor count does not match its config");
    std::uint64_t expected_offset = 0;
    for (const auto& t : tensors) {
      const auto name = t.at("name").get<std::string>();
      auto it = expected.params.find(name);
      if (it == expected.params.end()) throw ValidationError("checkpoint has unexpected tensor '" + name + "'");
      Matrix& m = it->second;
      if (t.at("rows").get<std::size_t>() != m.rows() || t.at("cols").get<std::size_t>() != m.cols())
        throw ShapeMismatchError("checkpoint tensor '" + name + "' has the wrong shape");
      const auto offset = t.at("offset").get<std::uint64_t>();
      if (offset != expected_offset) throw ParseError("checkpoint tensor directory out of order", data_start);
      in.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double)));
      if (!in) throw ParseError("truncated tensor '" + name + "'", data_start + offset * sizeof(double));
      expected_offset += m.size();
    }
    if (metadata) *metadata = header.value("metadata", json::object());
    return expected;
  } catch (const json::exception& e) {
    throw ValidationError("checkpoint header: " + std::string(e.what()));
  }
}

void require_encoders(const NetworkState& state, BodyEncoderMode body, ClothingEncoderMode clothing) {
  if (state.config.body_encoder != body || state.config.clothing_encoder != clothing)
    throw ValidationError("checkpoint flags (body=" + std::string(to_string(state.config.body_encoder)) +
                          ", clothing=" + std::string(to_string(state.config.clothing_encoder)) +
                          ") differ from the requested (body=" + std::string(to_string(body)) +
                          ", clothing=" + std::string(to_string(clothing)) + ")");
}

}  // namespace closenet
