#pragma once

#include <nlohmann/json.hpp>

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace cdx {

/// Versioned binary checkpoint: magic "CDXP", u32 schema id, u32 header
/// length, JSON header (tensor names/shapes/offsets plus metadata), then a
/// flat little-endian f32 parameter blob.
struct Checkpoint {
  static constexpr uint32_t kSchema = 1;

  nlohmann::json meta;  // config hash, seeds, curriculum state, ...
  std::map<std::string, std::pair<std::vector<int64_t>, std::vector<float>>>
      tensors;

  void add_tensor(const std::string& name, std::vector<int64_t> shape,
                  std::vector<float> data) {
    tensors[name] = {std::move(shape), std::move(data)};
  }

  const std::vector<float>& tensor(const std::string& name) const {
    auto it = tensors.find(name);
    if (it == tensors.end())
      throw std::runtime_error("checkpoint tensor missing: " + name);
    return it->second.second;
  }

  bool has_tensor(const std::string& name) const {
    return tensors.count(name) != 0;
  }

  void save(const std::string& path) const {
    nlohmann::json header;
    header["meta"] = meta;
    nlohmann::json tens = nlohmann::json::array();
    uint64_t offset = 0;
    for (const auto& [name, sd] : tensors) {
      tens.push_back({{"name", name},
                      {"shape", sd.first},
                      {"offset", offset},
                      {"count", sd.second.size()}});
      offset += sd.second.size();
    }
    header["tensors"] = tens;
    const std::string header_str = header.dump();

    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write checkpoint: " + path);
    f.write("CDXP", 4);
    const uint32_t schema = kSchema;
    f.write(reinterpret_cast<const char*>(&schema), 4);
    const uint32_t hlen = static_cast<uint32_t>(header_str.size());
    f.write(reinterpret_cast<const char*>(&hlen), 4);
    f.write(header_str.data(), header_str.size());
    for (const auto& [name, sd] : tensors) {
      f.write(reinterpret_cast<const char*>(sd.second.data()),
              static_cast<std::streamsize>(sd.second.size() * sizeof(float)));
    }
  }

  static Checkpoint load(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot read checkpoint: " + path);
    char magic[4];
    f.read(magic, 4);
    if (!f || std::memcmp(magic, "CDXP", 4) != 0)
      throw std::runtime_error("bad checkpoint magic in " + path);
    uint32_t schema = 0, hlen = 0;
    f.read(reinterpret_cast<char*>(&schema), 4);
    f.read(reinterpret_cast<char*>(&hlen), 4);
    if (schema != kSchema)
      throw std::runtime_error("unsupported checkpoint schema");
    std::string header_str(hlen, '\0');
    f.read(header_str.data(), hlen);
    const nlohmann::json header = nlohmann::json::parse(header_str);

    Checkpoint ckpt;
    ckpt.meta = header.at("meta");
    for (const auto& t : header.at("tensors")) {
      const std::string name = t.at("name").get<std::string>();
      std::vector<int64_t> shape = t.at("shape").get<std::vector<int64_t>>();
      const size_t count = t.at("count").get<size_t>();
      std::vector<float> data(count);
      f.read(reinterpret_cast<char*>(data.data()),
             static_cast<std::streamsize>(count * sizeof(float)));
      if (!f) throw std::runtime_error("truncated checkpoint " + path);
      ckpt.tensors[name] = {std::move(shape), std::move(data)};
    }
    return ckpt;
  }
};

}  // namespace cdx
