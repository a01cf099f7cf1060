#include <array>
#include <fstream>

#include <openssl/evp.h>

#include "lexenrich/cli.hpp"
#include "lexenrich/datastore.hpp"
#include "lexenrich/error.hpp"

namespace lexenrich::cli {

namespace {

class Digest {
 public:
  Digest() : ctx_(EVP_MD_CTX_new()) {
    if (!ctx_ || EVP_DigestInit_ex(ctx_, EVP_sha256(), nullptr) != 1) {
      EVP_MD_CTX_free(ctx_);
      throw std::runtime_error("SHA-256 initialization failed");
    }
  }
  ~Digest() { EVP_MD_CTX_free(ctx_); }
  Digest(const Digest&) = delete;
  Digest& operator=(const Digest&) = delete;

  void update(const char* data, std::size_t n) { EVP_DigestUpdate(ctx_, data, n); }

  std::string hex() {
    std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
    unsigned int len = 0;
    EVP_DigestFinal_ex(ctx_, md.data(), &len);
    static constexpr char kHex[] = "0123456789abcdef";
    std::string out;
    for (unsigned int i = 0; i < len; ++i) {
      out += kHex[md[i] >> 4];
      out += kHex[md[i] & 0xF];
    }
    return out;
  }

 private:
  EVP_MD_CTX* ctx_;
};

nlohmann::json file_entry(const std::string& role, const fs::path& path) {
  return {{"role", role},
          {"name", path.filename().string()},
          {"bytes", fs::file_size(path)},
          {"sha256", sha256_file(path)}};
}

}  // namespace

std::string sha256_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  Digest digest;
  std::array<char, 1 << 16> buf{};
  while (in) {
    in.read(buf.data(), buf.size());
    digest.update(buf.data(), static_cast<std::size_t>(in.gcount()));
  }
  return digest.hex();
}

std::string sha256_text(std::string_view text) {
  Digest digest;
  digest.update(text.data(), text.size());
  return digest.hex();
}

std::vector<fs::path> input_files(const fs::path& path) {
  if (fs::is_regular_file(path) && path.extension() != ".manifest" && path.extension() != ".bin") {
    return {path};
  }
  const fs::path base = bundle_base(path);
  std::vector<fs::path> files = {manifest_path(base), payload_path(base)};
  fs::path ids = base;
  ids += ".ids";
  if (fs::exists(ids)) files.push_back(ids);
  for (const auto& f : files) {
    if (!fs::exists(f)) throw IoError("missing input file " + f.string());
  }
  return files;
}

void write_run_manifest(const fs::path& out_dir, std::string_view command, const RunConfig& config,
                        const std::vector<std::pair<std::string, fs::path>>& inputs,
                        const std::vector<fs::path>& outputs) {
  const nlohmann::json settings = config.settings();
  nlohmann::json j;
  j["command"] = command;
  j["settings"] = settings;
  j["settings_sha256"] = sha256_text(settings.dump());
  j["seed"] = config.seed;
  j["inputs"] = nlohmann::json::array();
  for (const auto& [role, path] : inputs) {
    if (path.empty()) continue;
    for (const auto& f : input_files(path)) j["inputs"].push_back(file_entry(role, f));
  }
  j["outputs"] = nlohmann::json::array();
  for (const auto& path : outputs) j["outputs"].push_back(file_entry("output", path));

  const fs::path target = out_dir / "manifest.json";
  std::ofstream out(target, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + target.string());
  out << j.dump(2) << '\n';
  if (!out) throw IoError("write failed for " + target.string());
}

}  // namespace lexenrich::cli
