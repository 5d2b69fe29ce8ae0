/* Copyright 2026 The bvlab Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#include <cstring>
#include <filesystem>
#include <random>

#include "bvlab/errors.hpp"
#include "bvlab/tensor_store.hpp"
#include "bvlab/util.hpp"
#include "doctest.h"
#include "json.hpp"
#include "oracles.hpp"

using namespace bvlab;
using bvlab::testing::random_map;

namespace {

std::vector<std::uint8_t> bytes_with_header(const std::string& header, std::size_t payload_len) {
  std::vector<std::uint8_t> out = {'N', 'T', 'C', 'H', 'K', 'P', 'T', '1'};
  std::uint64_t h = header.size();
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(h >> (8 * i)));
  out.insert(out.end(), header.begin(), header.end());
  out.resize(out.size() + payload_len, 0);
  return out;
}

std::filesystem::path temp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("bvlab_test_" + name);
}

}  // namespace

TEST_CASE("payload is little-endian f32 in name order") {
  NamedTensorMap m;
  m.set("w", Tensor({2}, {1.0f, 2.0f}));
  const auto bytes = serialize_checkpoint(m);
  REQUIRE(bytes.size() >= 24);
  CHECK(std::memcmp(bytes.data(), "NTCHKPT1", 8) == 0);
  std::uint64_t h = 0;
  for (int i = 0; i < 8; ++i) h |= std::uint64_t{bytes[8 + i]} << (8 * i);
  REQUIRE(bytes.size() == 16 + h + 8);
  const std::vector<std::uint8_t> payload(bytes.end() - 8, bytes.end());
  // 1.0f = 0x3F800000, 2.0f = 0x40000000
  CHECK(payload == std::vector<std::uint8_t>{0x00, 0x00, 0x80, 0x3F, 0x00, 0x00, 0x00, 0x40});
  const auto header = nlohmann::json::parse(bytes.begin() + 16, bytes.begin() + 16 + h);
  CHECK(header["w"]["shape"] == nlohmann::json::array({2}));
  CHECK(header["w"]["offset"] == 0);
  CHECK(header["w"]["nbytes"] == 8);
}

TEST_CASE("offsets follow lexicographic order regardless of insertion") {
  NamedTensorMap a, b;
  a.set("zeta", Tensor({1}, {3.0f}));
  a.set("alpha", Tensor({2}, {1.0f, 2.0f}));
  b.set("alpha", Tensor({2}, {1.0f, 2.0f}));
  b.set("zeta", Tensor({1}, {3.0f}));
  const auto ba = serialize_checkpoint(a);
  CHECK(ba == serialize_checkpoint(b));
  std::uint64_t h = 0;
  for (int i = 0; i < 8; ++i) h |= std::uint64_t{ba[8 + i]} << (8 * i);
  const auto header = nlohmann::json::parse(ba.begin() + 16, ba.begin() + 16 + h);
  CHECK(header["alpha"]["offset"] == 0);
  CHECK(header["zeta"]["offset"] == 8);
}

TEST_CASE("empty map round-trips") {
  NamedTensorMap m;
  const auto bytes = serialize_checkpoint(m);
  CHECK(deserialize_checkpoint(bytes) == m);
}

TEST_CASE("meta is stored and restored") {
  NamedTensorMap m;
  m.set("w", Tensor({1}, {0.5f}));
  m.meta["role"] = "clean";
  m.meta["seed"] = "7";
  const auto back = deserialize_checkpoint(serialize_checkpoint(m));
  CHECK(back == m);
  CHECK(back.role() == "clean");
}

TEST_CASE("round trip is bit exact on random maps") {
  std::mt19937_64 rng(11);
  for (int i = 0; i < 100; ++i) {
    auto m = random_map(rng, 1e6f, 0.1);
    // Denormals and signed zeros must survive too.
    m.entries.begin()->second.data[0] = (i % 2) ? -0.0f : 1e-40f;
    const auto bytes = serialize_checkpoint(m);
    const auto back = deserialize_checkpoint(bytes);
    REQUIRE(back.entries.size() == m.entries.size());
    for (const auto& [name, t] : m.entries) {
      const auto& u = back.at(name);
      CHECK(u.shape == t.shape);
      CHECK(std::memcmp(u.data.data(), t.data.data(), t.data.size() * 4) == 0);
    }
    CHECK(serialize_checkpoint(back) == bytes);
  }
}

TEST_CASE("save and load through a file") {
  std::mt19937_64 rng(3);
  const auto m = random_map(rng);
  const auto p1 = temp_path("a.ntc"), p2 = temp_path("b.ntc");
  save_checkpoint(m, p1);
  save_checkpoint(m, p2);
  CHECK(read_file(p1) == read_file(p2));
  CHECK(load_checkpoint(p1) == m);
  std::filesystem::remove(p1);
  std::filesystem::remove(p2);
}

TEST_CASE("load rejects corrupt files") {
  NamedTensorMap m;
  m.set("w", Tensor({2}, {1.0f, 2.0f}));
  auto good = serialize_checkpoint(m);

  SUBCASE("bad magic") {
    auto b = good;
    b[0] = 'X';
    CHECK_THROWS_WITH_AS(deserialize_checkpoint(b), "bad magic", FormatError);
  }
  SUBCASE("too short for magic") {
    std::vector<std::uint8_t> b(good.begin(), good.begin() + 5);
    CHECK_THROWS_AS(deserialize_checkpoint(b), FormatError);
  }
  SUBCASE("truncated header") {
    std::vector<std::uint8_t> b(good.begin(), good.begin() + 20);
    CHECK_THROWS_WITH_AS(deserialize_checkpoint(b), "truncated header", FormatError);
  }
  SUBCASE("truncated payload") {
    good.pop_back();
    CHECK_THROWS_AS(deserialize_checkpoint(good), FormatError);
  }
  SUBCASE("trailing bytes") {
    good.push_back(0);
    CHECK_THROWS_AS(deserialize_checkpoint(good), FormatError);
  }
  SUBCASE("shape [3] with an 8-byte payload") {
    const auto b = bytes_with_header(R"({"w":{"nbytes":8,"offset":0,"shape":[3]}})", 8);
    CHECK_THROWS_WITH_AS(deserialize_checkpoint(b), doctest::Contains("length mismatch"), FormatError);
  }
  SUBCASE("declared 12 bytes but 8 present") {
    const auto b = bytes_with_header(R"({"w":{"nbytes":12,"offset":0,"shape":[3]}})", 8);
    CHECK_THROWS_WITH_AS(deserialize_checkpoint(b), doctest::Contains("length mismatch"), FormatError);
  }
  SUBCASE("non-contiguous layout") {
    const auto b = bytes_with_header(
        R"({"a":{"nbytes":4,"offset":4,"shape":[1]},"b":{"nbytes":4,"offset":0,"shape":[1]}})", 8);
    CHECK_THROWS_AS(deserialize_checkpoint(b), FormatError);
  }
  SUBCASE("header not JSON") {
    const auto b = bytes_with_header("{nope", 0);
    CHECK_THROWS_AS(deserialize_checkpoint(b), FormatError);
  }
  SUBCASE("non-finite payload") {
    const float nan = std::numeric_limits<float>::quiet_NaN();
    std::memcpy(good.data() + good.size() - 4, &nan, 4);
    CHECK_THROWS_AS(deserialize_checkpoint(good), FormatError);
  }
  SUBCASE("missing file") {
    CHECK_THROWS_AS(load_checkpoint(temp_path("does_not_exist.ntc")), IoError);
  }
}

TEST_CASE("save refuses non-finite values") {
  NamedTensorMap m;
  m.set("w", Tensor({2}, {1.0f, std::numeric_limits<float>::infinity()}));
  CHECK_THROWS_AS(serialize_checkpoint(m), ValidationError);
  CHECK_THROWS_AS(save_checkpoint(m, temp_path("inf.ntc")), ValidationError);
  CHECK_FALSE(std::filesystem::exists(temp_path("inf.ntc")));
}

TEST_CASE("map invariants") {
  NamedTensorMap m;
  CHECK_THROWS_AS(m.set("", Tensor({1}, {0.0f})), ValidationError);
  CHECK_THROWS_AS(Tensor({2}, {1.0f}), ValidationError);
  CHECK_THROWS_AS(Tensor({0}), ValidationError);
  CHECK_THROWS_AS(m.at("missing"), ValidationError);
}

TEST_CASE("validate_compatible") {
  NamedTensorMap w2, w3, wb;
  w2.set("w", Tensor({2}));
  w3.set("w", Tensor({3}));
  wb.set("w", Tensor({2}));
  wb.set("b", Tensor({1}));
  CHECK_NOTHROW(validate_compatible(w2, w2));
  CHECK_THROWS_WITH_AS(validate_compatible(w2, w3), doctest::Contains("\"w\""), ValidationError);
  CHECK_THROWS_WITH_AS(validate_compatible(w2, wb), "name-set mismatch: b", ValidationError);
}

TEST_CASE("content hash tracks content") {
  std::mt19937_64 rng(5);
  auto m = random_map(rng);
  const auto h = content_hash(m);
  CHECK(h.size() == 64);
  CHECK(content_hash(m) == h);
  m.entries.begin()->second.data[0] += 1.0f;
  CHECK(content_hash(m) != h);
}
