#include "fillup/checkpoint.hpp"
#include "fillup/checksum.hpp"
#include "fillup/common.hpp"
#include "fillup/rng.hpp"

#include "helpers.hpp"

#include <doctest.h>

#include <set>

using namespace fillup;

TEST_CASE("fnv1a64 matches published test vectors") {
  CHECK(fnv1a64("") == 0xcbf29ce484222325ULL);
  CHECK(fnv1a64("a") == 0xaf63dc4c8601ec8cULL);
  CHECK(fnv1a64("foobar") == 0x85944171f73967e8ULL);
}

TEST_CASE("file checksum equals checksum of the bytes") {
  auto dir = test::scratch_dir("checksum");
  std::string text(200000, 'x');
  for (std::size_t i = 0; i < text.size(); i += 7) text[i] = static_cast<char>('a' + i % 26);
  {
    std::ofstream out(dir / "f.bin", std::ios::binary);
    out << text;
  }
  CHECK(file_checksum(dir / "f.bin") == fnv1a64(text));
  CHECK_THROWS_AS(file_checksum(dir / "missing"), FormatError);
}

TEST_CASE("hex round trip") {
  for (std::uint64_t v : {0ULL, 1ULL, 0xdeadbeefULL, ~0ULL}) {
    CHECK(to_hex(v).size() == 16);
    CHECK(from_hex(to_hex(v)) == v);
  }
  CHECK_THROWS_AS(from_hex("xyz"), FormatError);
  CHECK_THROWS_AS(from_hex(""), FormatError);
}

TEST_CASE("derive_seed separates names and indices") {
  std::set<std::uint64_t> seen;
  for (std::uint64_t master : {0ULL, 1ULL})
    for (const char* name : {"draw", "generators", "invert"})
      for (std::uint64_t i = 0; i < 10; ++i) seen.insert(derive_seed(master, name, i));
  CHECK(seen.size() == 60);
  CHECK(derive_seed(5, "x", 3) == derive_seed(5, "x", 3));
}

TEST_CASE("rng streams are reproducible") {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) CHECK(a.normal() == b.normal());
  Rng s1 = a.substream("k", 1), s2 = b.substream("k", 1);
  CHECK(s1.next_u64() == s2.next_u64());
}

TEST_CASE("checkpoint round trip stores float32 parameters") {
  auto dir = test::scratch_dir("checkpoint");
  std::vector<double> params{0.0, 1.5, -2.25, 1e-3, 3.14159265358979};
  nlohmann::json header{{"kind", "test"}, {"seed", 7}};
  write_checkpoint(dir / "a.ckpt", header, params);
  auto ck = read_checkpoint(dir / "a.ckpt");
  CHECK(ck.header["kind"] == "test");
  CHECK(ck.header["param_count"] == params.size());
  CHECK(ck.header["version"] == kCheckpointVersion);
  REQUIRE(ck.blob.size() == params.size());
  for (std::size_t i = 0; i < params.size(); ++i) CHECK(ck.blob[i] == static_cast<float>(params[i]));
  CHECK(ck.header["blob_checksum"] == to_hex(blob_checksum(params)));
}

TEST_CASE("corrupted checkpoints are rejected") {
  std::vector<double> params{1.0, 2.0, 3.0};
  auto bytes = encode_checkpoint({{"kind", "test"}}, params);
  SUBCASE("flipped blob byte") {
    bytes.back() ^= std::byte{1};
    CHECK_THROWS_AS(decode_checkpoint(bytes), FormatError);
  }
  SUBCASE("bad magic") {
    bytes[0] = std::byte{'X'};
    CHECK_THROWS_AS(decode_checkpoint(bytes), FormatError);
  }
  SUBCASE("truncated") {
    bytes.resize(bytes.size() - 2);
    CHECK_THROWS_AS(decode_checkpoint(bytes), FormatError);
  }
}
