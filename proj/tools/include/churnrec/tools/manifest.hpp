#pragma once

#include <filesystem>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

namespace churnrec::tools {

// SHA-1 of "blob <size>\0<content>", as git computes object ids.
std::string git_blob_sha1(std::string_view content);
std::string hash_file(const std::filesystem::path& path);

// Wall-clock outputs differ between identical runs; they are hashed apart.
bool is_volatile_artifact(const std::filesystem::path& relative);

// Hashes every file under root except the manifest itself. Paths are
// relative to root with forward slashes, sorted.
nlohmann::json build_manifest(const std::filesystem::path& root, const nlohmann::json& config,
                              std::uint64_t seed);
void write_manifest(const std::filesystem::path& root, const nlohmann::json& config,
                    std::uint64_t seed);

}  // namespace churnrec::tools
