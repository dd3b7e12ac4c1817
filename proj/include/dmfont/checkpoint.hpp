#pragma once

#include <cstring>
#include <fstream>
#include <map>
#include <set>
#include <string>

#include <nlohmann/json.hpp>

#include "dmfont/tensor.hpp"

namespace dmfont {

// Checkpoint container: 8-byte magic, u32 version, u64 header length, a JSON
// header (metadata plus an array table of name/shape/offset), then raw
// little-endian float32 payload. Array order in the table matches payload
// order; offsets are element (not byte) offsets into the payload.
namespace ckpt {
inline constexpr char kMagic[8] = {'D', 'M', 'F', 'C', 'K', 'P', 'T', '1'};
inline constexpr uint32_t kVersion = 1;
}  // namespace ckpt

class CheckpointWriter {
 public:
  nlohmann::json meta;

  void add(const std::string& name, const Tensor& t) {
    DMFONT_CHECK(!names_.count(name), ErrorCode::InvalidArgument,
                 "duplicate checkpoint array: " + name);
    names_.insert(name);
    entries_.emplace_back(name, t);
  }

  void save(const std::string& path) const {
    nlohmann::json header = meta;
    header["arrays"] = nlohmann::json::array();
    int64_t offset = 0;
    for (const auto& [name, t] : entries_) {
      header["arrays"].push_back({{"name", name}, {"shape", t.shape()}, {"offset", offset}});
      offset += t.numel();
    }
    std::string hs = header.dump();
    std::ofstream f(path, std::ios::binary);
    DMFONT_CHECK(f.good(), ErrorCode::IoError, "cannot write " + path);
    f.write(ckpt::kMagic, 8);
    uint32_t ver = ckpt::kVersion;
    uint64_t hlen = hs.size();
    f.write(reinterpret_cast<const char*>(&ver), sizeof(ver));
    f.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
    f.write(hs.data(), std::streamsize(hs.size()));
    for (const auto& [name, t] : entries_)
      f.write(reinterpret_cast<const char*>(t.data()),
              std::streamsize(size_t(t.numel()) * sizeof(float)));
    DMFONT_CHECK(f.good(), ErrorCode::IoError, "write failed: " + path);
  }

 private:
  std::set<std::string> names_;
  std::vector<std::pair<std::string, Tensor>> entries_;
};

struct Checkpoint {
  nlohmann::json meta;
  std::map<std::string, Tensor> arrays;

  bool has(const std::string& name) const { return arrays.count(name) > 0; }

  const Tensor& get(const std::string& name) const {
    auto it = arrays.find(name);
    DMFONT_CHECK(it != arrays.end(), ErrorCode::ConfigMismatch,
                 "checkpoint missing array: " + name);
    return it->second;
  }

  static Checkpoint load(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    DMFONT_CHECK(f.good(), ErrorCode::IoError, "cannot read " + path);
    char magic[8];
    f.read(magic, 8);
    DMFONT_CHECK(f.good() && std::memcmp(magic, ckpt::kMagic, 8) == 0, ErrorCode::IoError,
                 "not a checkpoint file: " + path);
    uint32_t ver = 0;
    uint64_t hlen = 0;
    f.read(reinterpret_cast<char*>(&ver), sizeof(ver));
    f.read(reinterpret_cast<char*>(&hlen), sizeof(hlen));
    DMFONT_CHECK(f.good() && ver == ckpt::kVersion, ErrorCode::IoError,
                 "unsupported checkpoint version in " + path);
    std::string hs(hlen, '\0');
    f.read(hs.data(), std::streamsize(hlen));
    DMFONT_CHECK(f.good(), ErrorCode::IoError, "truncated checkpoint header: " + path);
    Checkpoint ck;
    try {
      ck.meta = nlohmann::json::parse(hs);
    } catch (const std::exception& e) {
      raise(ErrorCode::IoError, "bad checkpoint header: " + std::string(e.what()));
    }
    for (const auto& a : ck.meta.at("arrays")) {
      Shape shape = a.at("shape").get<Shape>();
      Tensor t(shape);
      f.read(reinterpret_cast<char*>(t.data()),
             std::streamsize(size_t(t.numel()) * sizeof(float)));
      DMFONT_CHECK(f.good(), ErrorCode::IoError,
                   "truncated checkpoint payload at " + a.at("name").get<std::string>());
      ck.arrays.emplace(a.at("name").get<std::string>(), std::move(t));
    }
    ck.meta.erase("arrays");
    return ck;
  }
};

}  // namespace dmfont
