#include "dx2ct/container.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>

#include <json.hpp>

#include "dx2ct/common.hpp"

namespace dx2ct::io {

namespace {

constexpr std::size_t kMaxHeaderBytes = 65536;

static_assert(sizeof(float) == 4 && std::numeric_limits<float>::is_iec559,
              "payload format requires IEEE-754 binary32");

[[noreturn]] void fail(const std::string& path, std::size_t offset,
                       const std::string& what) {
  throw IoError(path + ": " + what + " (byte offset " + std::to_string(offset) +
                ")");
}

}  // namespace

void write_array(const std::string& path, const Tensor<float>& t) {
  require_valid(t.rank() >= 1, "write_array: scalar tensors not supported");
  nlohmann::json header;  // nlohmann objects serialize with sorted keys
  header["dtype"] = "f32le";
  header["order"] = "row-major";
  header["shape"] = t.shape();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError(path + ": cannot open for writing");
  out << header.dump() << '\n';
  if constexpr (std::endian::native == std::endian::little) {
    out.write(reinterpret_cast<const char*>(t.data()),
              static_cast<std::streamsize>(t.numel() * 4));
  } else {
    for (std::size_t i = 0; i < t.numel(); ++i) {
      std::uint32_t bits;
      std::memcpy(&bits, &t[i], 4);
      char b[4] = {char(bits), char(bits >> 8), char(bits >> 16), char(bits >> 24)};
      out.write(b, 4);
    }
  }
  if (!out) throw IoError(path + ": write failed");
}

Tensor<float> read_array(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(path + ": cannot open for reading");
  std::string bytes((std::istreambuf_iterator<char>(in)),
                    std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError(path + ": read failed");

  std::size_t nl = bytes.find('\n');
  if (nl == std::string::npos || nl > kMaxHeaderBytes)
    fail(path, 0, "malformed header: no newline-terminated JSON line");
  const std::size_t payload_off = nl + 1;

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.substr(0, nl));
  } catch (const nlohmann::json::exception& e) {
    fail(path, 0, std::string("malformed header: ") + e.what());
  }
  if (!header.is_object()) fail(path, 0, "malformed header: not a JSON object");
  for (auto it = header.begin(); it != header.end(); ++it)
    if (it.key() != "dtype" && it.key() != "order" && it.key() != "shape")
      fail(path, 0, "malformed header: unknown key '" + it.key() + "'");
  if (header.value("dtype", "") != "f32le")
    fail(path, 0, "malformed header: dtype must be \"f32le\"");
  if (header.value("order", "") != "row-major")
    fail(path, 0, "malformed header: order must be \"row-major\"");
  if (!header.contains("shape") || !header["shape"].is_array() ||
      header["shape"].empty())
    fail(path, 0, "malformed header: shape must be a non-empty array");

  Shape shape;
  std::size_t numel = 1;
  for (const auto& d : header["shape"]) {
    if (!d.is_number_unsigned() || d.get<std::uint64_t>() == 0)
      fail(path, 0, "malformed header: shape entries must be positive integers");
    std::size_t v = d.get<std::size_t>();
    require_valid(numel <= (std::size_t(1) << 31) / v,
                  path + ": shape too large");
    shape.push_back(v);
    numel *= v;
  }

  const std::size_t want = numel * 4;
  const std::size_t have = bytes.size() - payload_off;
  if (have < want)
    fail(path, payload_off + have,
         "truncated payload: expected " + std::to_string(want) + " bytes, found " +
             std::to_string(have));
  if (have > want)
    fail(path, payload_off + want,
         "trailing bytes after payload: expected " + std::to_string(want) +
             " bytes, found " + std::to_string(have));

  Tensor<float> t(shape);
  if constexpr (std::endian::native == std::endian::little) {
    std::memcpy(t.data(), bytes.data() + payload_off, want);
  } else {
    for (std::size_t i = 0; i < numel; ++i) {
      const unsigned char* b =
          reinterpret_cast<const unsigned char*>(bytes.data()) + payload_off + 4 * i;
      std::uint32_t bits = std::uint32_t(b[0]) | std::uint32_t(b[1]) << 8 |
                           std::uint32_t(b[2]) << 16 | std::uint32_t(b[3]) << 24;
      std::memcpy(&t[i], &bits, 4);
    }
  }
  for (std::size_t i = 0; i < numel; ++i)
    if (!std::isfinite(t[i]))
      fail(path, payload_off + 4 * i, "non-finite value in payload");
  return t;
}

Tensor<float> read_volume(const std::string& path) {
  Tensor<float> t = read_array(path);
  if (t.rank() != 3)
    throw IoError(path + ": expected a rank-3 volume, got shape " +
                  shape_str(t.shape()));
  return t;
}

Tensor<float> read_image(const std::string& path) {
  Tensor<float> t = read_array(path);
  if (t.rank() != 2)
    throw IoError(path + ": expected a rank-2 image, got shape " +
                  shape_str(t.shape()));
  return t;
}

}  // namespace dx2ct::io
