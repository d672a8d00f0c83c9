#include "mcs/checkpoint.hpp"

#include <openssl/evp.h>

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <unordered_map>

#include "json.hpp"

namespace mcs {

namespace {

constexpr char kMagic[8] = {'M', 'C', 'S', 'C', 'K', 'P', 'T', '1'};
constexpr int kFormatVersion = 1;

std::string hex_digest(const unsigned char* digest, unsigned len) {
  static const char* hexd = "0123456789abcdef";
  std::string out;
  out.reserve(2 * len);
  for (unsigned i = 0; i < len; ++i) {
    out.push_back(hexd[digest[i] >> 4]);
    out.push_back(hexd[digest[i] & 0xf]);
  }
  return out;
}

class Sha256 {
 public:
  Sha256() : ctx_(EVP_MD_CTX_new()) {
    if (!ctx_ || EVP_DigestInit_ex(ctx_, EVP_sha256(), nullptr) != 1) {
      throw std::runtime_error("sha256: failed to initialize digest");
    }
  }
  ~Sha256() { EVP_MD_CTX_free(ctx_); }
  void update(const void* data, std::size_t n) {
    if (EVP_DigestUpdate(ctx_, data, n) != 1) throw std::runtime_error("sha256: update failed");
  }
  std::string finish() {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned len = 0;
    if (EVP_DigestFinal_ex(ctx_, digest, &len) != 1) {
      throw std::runtime_error("sha256: finalize failed");
    }
    return hex_digest(digest, len);
  }

 private:
  EVP_MD_CTX* ctx_;
};

}  // namespace

void save_checkpoint(const std::string& path, const ParamList& params, bool includes_predictor) {
  nlohmann::json header;
  header["format_version"] = kFormatVersion;
  header["dtype"] = "f64";
  header["includes_predictor"] = includes_predictor;
  nlohmann::json tensors = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& p : params) {
    if (!includes_predictor && p.name.rfind("pred.", 0) == 0) continue;
    nlohmann::json t;
    t["name"] = p.name;
    t["shape"] = p.tensor.shape();
    t["offset"] = offset;
    t["nbytes"] = static_cast<std::uint64_t>(p.tensor.size()) * sizeof(double);
    tensors.push_back(std::move(t));
    offset += static_cast<std::uint64_t>(p.tensor.size()) * sizeof(double);
  }
  header["tensors"] = std::move(tensors);
  const std::string hjson = header.dump();

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open checkpoint file for writing: " + path);
  out.write(kMagic, sizeof(kMagic));
  const std::uint64_t hlen = hjson.size();
  out.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
  out.write(hjson.data(), static_cast<std::streamsize>(hjson.size()));
  for (const auto& p : params) {
    if (!includes_predictor && p.name.rfind("pred.", 0) == 0) continue;
    auto v = p.tensor.values();
    out.write(reinterpret_cast<const char*>(v.data()),
              static_cast<std::streamsize>(v.size() * sizeof(double)));
  }
  if (!out) throw std::runtime_error("failed writing checkpoint file: " + path);
}

CheckpointInfo load_checkpoint(const std::string& path, ParamList& params,
                               bool allow_missing_predictor) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint file: " + path);
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw std::runtime_error("not a checkpoint file: " + path);
  }
  std::uint64_t hlen = 0;
  in.read(reinterpret_cast<char*>(&hlen), sizeof(hlen));
  std::string hjson(hlen, '\0');
  in.read(hjson.data(), static_cast<std::streamsize>(hlen));
  if (!in) throw std::runtime_error("truncated checkpoint header: " + path);
  nlohmann::json header = nlohmann::json::parse(hjson);
  CheckpointInfo info;
  info.format_version = header.at("format_version").get<int>();
  info.includes_predictor = header.value("includes_predictor", true);
  if (header.at("dtype").get<std::string>() != "f64") {
    throw std::runtime_error("checkpoint dtype is not f64: " + path);
  }

  const std::streampos data_start = in.tellg();
  struct Entry {
    std::vector<int> shape;
    std::uint64_t offset;
    std::uint64_t nbytes;
  };
  std::unordered_map<std::string, Entry> by_name;
  for (const auto& t : header.at("tensors")) {
    Entry e;
    e.shape = t.at("shape").get<std::vector<int>>();
    e.offset = t.at("offset").get<std::uint64_t>();
    e.nbytes = t.at("nbytes").get<std::uint64_t>();
    by_name.emplace(t.at("name").get<std::string>(), std::move(e));
  }

  for (auto& p : params) {
    auto it = by_name.find(p.name);
    if (it == by_name.end()) {
      if (allow_missing_predictor && !info.includes_predictor && p.name.rfind("pred.", 0) == 0) {
        continue;
      }
      throw std::runtime_error("checkpoint is missing parameter '" + p.name + "': " + path);
    }
    if (it->second.shape != p.tensor.shape()) {
      Tensor probe = Tensor::zeros(it->second.shape);
      throw std::runtime_error("checkpoint parameter '" + p.name + "' has shape " +
                               probe.shape_str() + " but the model expects " +
                               p.tensor.shape_str());
    }
    in.seekg(data_start + static_cast<std::streamoff>(it->second.offset));
    auto v = p.tensor.values();
    in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(it->second.nbytes));
    if (!in) throw std::runtime_error("truncated checkpoint payload: " + path);
    p.tensor.check_finite("checkpoint parameter " + p.name);
  }
  return info;
}

std::string sha256_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open file for hashing: " + path);
  Sha256 h;
  char buf[1 << 16];
  while (in) {
    in.read(buf, sizeof(buf));
    h.update(buf, static_cast<std::size_t>(in.gcount()));
  }
  return h.finish();
}

std::string sha256_params(const ParamList& params) {
  Sha256 h;
  for (const auto& p : params) {
    h.update(p.name.data(), p.name.size());
    auto v = p.tensor.values();
    h.update(v.data(), v.size() * sizeof(double));
  }
  return h.finish();
}

}  // namespace mcs
