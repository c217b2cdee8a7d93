#include "churnrec/tools/manifest.hpp"

#include <algorithm>
#include <array>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <vector>

#include <openssl/evp.h>

#include "churnrec/error.hpp"

namespace churnrec::tools {

std::string git_blob_sha1(std::string_view content) {
  const std::string header = "blob " + std::to_string(content.size()) + '\0';
  std::array<unsigned char, EVP_MAX_MD_SIZE> digest{};
  unsigned int length = 0;
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  if (ctx == nullptr) throw Error("cannot allocate digest context");
  const bool ok = EVP_DigestInit_ex(ctx, EVP_sha1(), nullptr) == 1 &&
                  EVP_DigestUpdate(ctx, header.data(), header.size()) == 1 &&
                  EVP_DigestUpdate(ctx, content.data(), content.size()) == 1 &&
                  EVP_DigestFinal_ex(ctx, digest.data(), &length) == 1;
  EVP_MD_CTX_free(ctx);
  if (!ok) throw Error("sha1 digest failed");
  std::string hex;
  hex.reserve(2 * length);
  for (unsigned int i = 0; i < length; ++i) {
    char pair[3];
    std::snprintf(pair, sizeof(pair), "%02x", digest[i]);
    hex += pair;
  }
  return hex;
}

std::string hash_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read " + path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return git_blob_sha1(buffer.str());
}

bool is_volatile_artifact(const std::filesystem::path& relative) {
  const std::string name = relative.filename().string();
  return name.rfind("timings_", 0) == 0 || name.rfind("latency_", 0) == 0 ||
         name == "tables.txt";
}

nlohmann::json build_manifest(const std::filesystem::path& root, const nlohmann::json& config,
                              std::uint64_t seed) {
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::recursive_directory_iterator(root)) {
    if (!entry.is_regular_file()) continue;
    const auto relative = std::filesystem::relative(entry.path(), root);
    if (relative == "manifest.json") continue;
    files.push_back(relative);
  }
  std::sort(files.begin(), files.end(),
            [](const auto& a, const auto& b) { return a.generic_string() < b.generic_string(); });

  nlohmann::json outputs = nlohmann::json::object();
  nlohmann::json volatile_outputs = nlohmann::json::object();
  for (const auto& relative : files) {
    auto& target = is_volatile_artifact(relative) ? volatile_outputs : outputs;
    target[relative.generic_string()] = hash_file(root / relative);
  }
  return {{"format", "churnrec.manifest"},
          {"version", 1},
          {"seed", seed},
          {"config", config},
          {"outputs", outputs},
          {"volatile", volatile_outputs}};
}

void write_manifest(const std::filesystem::path& root, const nlohmann::json& config,
                    std::uint64_t seed) {
  const auto doc = build_manifest(root, config, seed);
  std::ofstream out(root / "manifest.json", std::ios::binary);
  if (!out) throw Error("cannot write manifest");
  out << doc.dump(1) << '\n';
}

}  // namespace churnrec::tools
