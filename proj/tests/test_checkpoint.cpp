// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <fstream>
#include <random>

#include "close/checkpoint.hpp"
#include "close/error.hpp"
#include "support.hpp"

using namespace closenet;
using namespace closenet::testing;

TEST_CASE("checkpoints round trip bit for bit with their flags") {
  TempDir dir("ckpt");
  for (auto cloth : {ClothingEncoderMode::Attention, ClothingEncoderMode::Binary, ClothingEncoderMode::None}) {
    NetworkConfig cfg = small_config();
    cfg.clothing_encoder = cloth;
    cfg.body_encoder = cloth == ClothingEncoderMode::None ? BodyEncoderMode::None : BodyEncoderMode::Canonical;
    const NetworkState st = NetworkState::initialize(cfg, 77);
    save_checkpoint(st, dir / "m.ckpt", {{"note", "x"}});
    nlohmann::json meta;
    const NetworkState back = load_checkpoint(dir / "m.ckpt", LabelTaxonomy::standard(), &meta);
    CHECK(back.config == cfg);
    CHECK(back.hash() == st.hash());
    CHECK(meta.at("note") == "x");
    CHECK_NOTHROW(require_encoders(back, cfg.body_encoder, cfg.clothing_encoder));
    CHECK_THROWS_AS(require_encoders(back, cfg.body_encoder, ClothingEncoderMode::Binary == cloth
                                                                 ? ClothingEncoderMode::Attention
                                                                 : ClothingEncoderMode::Binary),
                    ValidationError);
  }
}

TEST_CASE("the container starts with magic, version and header length") {
  TempDir dir("ckpt-layout");
  const NetworkState st = NetworkState::initialize(tiny_config(), 1);
  save_checkpoint(st, dir / "t.ckpt");
  std::ifstream in(dir / "t.ckpt", std::ios::binary);
  std::string bytes((std::istreambuf_iterator<char>(in)), {});
  REQUIRE(bytes.size() > 20);
  CHECK(bytes.substr(0, 8) == "CLOSECKP");
  std::uint32_t version;
  std::uint64_t length;
  std::memcpy(&version, bytes.data() + 8, 4);
  std::memcpy(&length, bytes.data() + 12, 8);
  CHECK(version == kCheckpointVersion);
  const auto header = nlohmann::json::parse(bytes.substr(20, length));
  CHECK(header.contains("config"));
  CHECK(bytes.size() == 20 + length + st.num_parameters() * sizeof(double));
}

TEST_CASE("foreign taxonomies and damaged files are refused") {
  TempDir dir("ckpt-bad");
  const NetworkState st = NetworkState::initialize(tiny_config(), 2);
  save_checkpoint(st, dir / "ok.ckpt");
  std::ifstream in(dir / "ok.ckpt", std::ios::binary);
  std::string bytes((std::istreambuf_iterator<char>(in)), {});

  // Same length header, different label-name fingerprint.
  std::string foreign = bytes;
  const std::string fp = LabelTaxonomy::standard().fingerprint();
  const auto at = foreign.find(fp);
  REQUIRE(at != std::string::npos);
  foreign.replace(at, fp.size(), std::string(fp.size(), 'f'));
  std::ofstream(dir / "foreign.ckpt", std::ios::binary) << foreign;
  CHECK_THROWS_AS(load_checkpoint(dir / "foreign.ckpt"), ValidationError);

  std::ofstream(dir / "short.ckpt", std::ios::binary) << bytes.substr(0, bytes.size() - 5);
  CHECK_THROWS_AS(load_checkpoint(dir / "short.ckpt"), ParseError);
  std::string magic = bytes;
  magic[0] = 'X';
  std::ofstream(dir / "magic.ckpt", std::ios::binary) << magic;
  CHECK_THROWS_AS(load_checkpoint(dir / "magic.ckpt"), ParseError);
  std::string header = bytes;
  header[21] = '#';
  std::ofstream(dir / "header.ckpt", std::ios::binary) << header;
  CHECK_THROWS_AS(load_checkpoint(dir / "header.ckpt"), ParseError);
  CHECK_THROWS_AS(load_checkpoint(dir / "missing.ckpt"), ValidationError);
}
