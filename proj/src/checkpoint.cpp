#include "dx2ct/checkpoint.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <vector>

#include <json.hpp>

#include "dx2ct/common.hpp"

namespace dx2ct::io {

namespace {

constexpr const char* kFormat = "dx2ct-checkpoint";
constexpr int kVersion = 1;
constexpr std::size_t kMaxHeaderBytes = 1 << 20;

static_assert(sizeof(float) == 4 && std::numeric_limits<float>::is_iec559,
              "payload format requires IEEE-754 binary32");
static_assert(std::endian::native == std::endian::little,
              "checkpoint IO assumes a little-endian host");

void append(std::vector<float>& payload, const Tensor<float>& t) {
  payload.insert(payload.end(), t.data(), t.data() + t.numel());
}

}  // namespace

void save_checkpoint(const std::string& path,
                     const nn::ParamStore<float>& store,
                     const nn::Adam<float>& adam, const CheckpointMeta& meta) {
  nlohmann::json header;
  header["format"] = kFormat;
  header["version"] = kVersion;
  header["dtype"] = "f32le";
  header["step"] = meta.step;
  header["adam_t"] = adam.t;
  header["rng_state"] = std::to_string(meta.rng_state);
  if (meta.config_echo.empty()) {
    header["config"] = nullptr;
  } else {
    try {
      header["config"] = nlohmann::json::parse(meta.config_echo);
    } catch (const nlohmann::json::exception& e) {
      throw IoError(path + ": config echo is not valid JSON: " + e.what());
    }
  }

  nlohmann::json table = nlohmann::json::array();
  std::vector<float> payload;
  for (const auto& [name, entry] : store.entries) {
    table.push_back({{"name", name}, {"shape", entry.value.shape()}});
    append(payload, entry.value);
  }
  for (const auto& [name, entry] : store.entries) {
    auto it = adam.state.find(name);
    const Tensor<float> zeros = Tensor<float>::zeros(entry.value.shape());
    append(payload, it == adam.state.end() ? zeros : it->second.m);
    append(payload, it == adam.state.end() ? zeros : it->second.v);
  }
  header["params"] = std::move(table);
  header["payload_floats"] = payload.size();

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError(path + ": cannot open for writing");
  out << header.dump() << '\n';
  out.write(reinterpret_cast<const char*>(payload.data()),
            static_cast<std::streamsize>(payload.size() * 4));
  if (!out) throw IoError(path + ": write failed");
}

CheckpointMeta load_checkpoint(const std::string& path,
                               nn::ParamStore<float>& store,
                               nn::Adam<float>& adam) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(path + ": cannot open for reading");
  std::string bytes((std::istreambuf_iterator<char>(in)),
                    std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError(path + ": read failed");

  const std::size_t nl = bytes.find('\n');
  if (nl == std::string::npos || nl > kMaxHeaderBytes)
    throw IoError(path + ": malformed header: no newline-terminated JSON line");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.substr(0, nl));
  } catch (const nlohmann::json::exception& e) {
    throw IoError(path + ": malformed header: " + std::string(e.what()));
  }
  if (!header.is_object() || header.value("format", "") != kFormat)
    throw IoError(path + ": not a checkpoint file");
  if (header.value("version", 0) != kVersion)
    throw IoError(path + ": unsupported checkpoint version");
  if (header.value("dtype", "") != "f32le")
    throw IoError(path + ": unsupported payload dtype");
  if (!header.contains("params") || !header["params"].is_array())
    throw IoError(path + ": malformed header: missing parameter table");

  const auto& table = header["params"];
  require_valid(table.size() == store.entries.size(),
                path + ": parameter table does not match the model (" +
                    std::to_string(table.size()) + " stored, " +
                    std::to_string(store.entries.size()) + " expected)");
  std::size_t idx = 0, floats = 0;
  for (const auto& [name, entry] : store.entries) {
    const auto& row = table[idx++];
    require_valid(row.value("name", "") == name,
                  path + ": parameter table mismatch at '" + name + "'");
    const Shape shape = row.value("shape", Shape{});
    require_valid(shape == entry.value.shape(),
                  path + ": shape mismatch for '" + name + "'");
    floats += entry.value.numel();
  }
  floats *= 3;  // values + adam m + adam v

  const std::size_t payload_off = nl + 1;
  const std::size_t have = bytes.size() - payload_off;
  if (have != floats * 4)
    throw IoError(path + ": payload size mismatch: expected " +
                  std::to_string(floats * 4) + " bytes, found " +
                  std::to_string(have));

  std::vector<float> payload(floats);
  std::memcpy(payload.data(), bytes.data() + payload_off, have);
  for (std::size_t i = 0; i < floats; ++i)
    if (!std::isfinite(payload[i]))
      throw IoError(path + ": non-finite value in payload");

  std::size_t off = 0;
  for (auto& [name, entry] : store.entries) {
    std::memcpy(entry.value.data(), payload.data() + off,
                entry.value.numel() * 4);
    off += entry.value.numel();
  }
  adam.state.clear();
  for (auto& [name, entry] : store.entries) {
    nn::Adam<float>::Moments mo{Tensor<float>(entry.value.shape()),
                                Tensor<float>(entry.value.shape())};
    std::memcpy(mo.m.data(), payload.data() + off, entry.value.numel() * 4);
    off += entry.value.numel();
    std::memcpy(mo.v.data(), payload.data() + off, entry.value.numel() * 4);
    off += entry.value.numel();
    adam.state.emplace(name, std::move(mo));
  }
  adam.t = header.value("adam_t", std::int64_t{0});

  CheckpointMeta meta;
  meta.step = header.value("step", std::uint64_t{0});
  try {
    meta.rng_state = std::stoull(header.value("rng_state", "0"));
  } catch (const std::exception&) {
    throw IoError(path + ": malformed rng_state");
  }
  if (header.contains("config") && !header["config"].is_null())
    meta.config_echo = header["config"].dump();
  return meta;
}

std::string peek_checkpoint_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(path + ": cannot open for reading");
  std::string line;
  if (!std::getline(in, line) || line.size() > kMaxHeaderBytes)
    throw IoError(path + ": malformed header: no newline-terminated JSON line");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw IoError(path + ": malformed header: " + std::string(e.what()));
  }
  if (!header.is_object() || header.value("format", "") != kFormat)
    throw IoError(path + ": not a checkpoint file");
  if (header.contains("config") && !header["config"].is_null())
    return header["config"].dump();
  return "";
}

}  // namespace dx2ct::io
