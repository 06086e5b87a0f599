#include "fillup/checkpoint.hpp"

#include "fillup/checksum.hpp"
#include "fillup/common.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace fillup {

namespace {

constexpr char kMagic[8] = {'F', 'I', 'L', 'L', 'U', 'P', 'C', 'K'};

static_assert(std::endian::native == std::endian::little, "checkpoint encoding assumes a little-endian host");

std::vector<std::byte> float_blob(std::span<const double> params) {
  std::vector<std::byte> out(params.size() * sizeof(float));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const float f = static_cast<float>(params[i]);
    std::memcpy(out.data() + i * sizeof(float), &f, sizeof(float));
  }
  return out;
}

}  // namespace

std::uint64_t blob_checksum(std::span<const double> params) { return fnv1a64(float_blob(params)); }

std::vector<std::byte> encode_checkpoint(nlohmann::json header, std::span<const double> params) {
  auto blob = float_blob(params);
  header["version"] = kCheckpointVersion;
  header["param_count"] = params.size();
  header["blob_checksum"] = to_hex(fnv1a64(blob));
  const std::string text = header.dump();
  std::vector<std::byte> out;
  out.reserve(16 + text.size() + blob.size());
  for (char c : kMagic) out.push_back(static_cast<std::byte>(c));
  std::uint64_t len = text.size();
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::byte>((len >> (8 * i)) & 0xff));
  for (char c : text) out.push_back(static_cast<std::byte>(c));
  out.insert(out.end(), blob.begin(), blob.end());
  return out;
}

Checkpoint decode_checkpoint(std::span<const std::byte> bytes) {
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kMagic, 8) != 0) throw FormatError("checkpoint: bad magic");
  std::uint64_t len = 0;
  for (int i = 0; i < 8; ++i) len |= static_cast<std::uint64_t>(bytes[8 + i]) << (8 * i);
  if (len > bytes.size() - 16) throw FormatError("checkpoint: truncated header");
  Checkpoint ck;
  try {
    ck.header = nlohmann::json::parse(reinterpret_cast<const char*>(bytes.data() + 16),
                                      reinterpret_cast<const char*>(bytes.data() + 16 + len));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint: bad header: ") + e.what());
  }
  auto blob = bytes.subspan(16 + len);
  const auto count = ck.header.value("param_count", std::size_t{0});
  if (blob.size() != count * sizeof(float)) throw FormatError("checkpoint: blob size mismatch");
  if (ck.header.value("blob_checksum", std::string{}) != to_hex(fnv1a64(blob)))
    throw FormatError("checkpoint: blob checksum mismatch");
  ck.blob.resize(count);
  std::memcpy(ck.blob.data(), blob.data(), blob.size());
  return ck;
}

void write_checkpoint(const std::filesystem::path& path, nlohmann::json header, std::span<const double> params) {
  auto bytes = encode_checkpoint(std::move(header), params);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  std::vector<char> raw((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(std::as_bytes(std::span(raw)));
}

}  // namespace fillup
