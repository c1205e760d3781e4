#include "tpc/manifest.hpp"

#include <openssl/evp.h>

#include <cstdio>
#include <fstream>

#include "tpc/errors.hpp"

namespace tpc {

std::string git_blob_hash(const std::string& content) {
  const std::string blob = "blob " + std::to_string(content.size()) + std::string(1, '\0') + content;
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(blob.data(), blob.size(), digest, &len, EVP_sha1(), nullptr) != 1) {
    throw ContractError("SHA-1 digest failed");
  }
  std::string hex;
  char buf[3];
  for (unsigned int i = 0; i < len; ++i) {
    std::snprintf(buf, sizeof(buf), "%02x", digest[i]);
    hex += buf;
  }
  return hex;
}

Json RunManifest::to_json() const {
  Json j;
  j["command"] = command;
  j["version"] = kVersion;
  j["version_hash"] = git_blob_hash(kVersion);
  j["seed"] = seed;
  j["argv"] = argv;
  j["overrides"] = overrides;
  j["config"] = config;
  return j;
}

void write_manifest(const std::filesystem::path& out_dir, const RunManifest& manifest) {
  std::ofstream out(out_dir / "manifest.json");
  if (!out) throw FormatError("cannot write " + (out_dir / "manifest.json").string());
  out << manifest.to_json().dump(2) << '\n';
}

}  // namespace tpc
