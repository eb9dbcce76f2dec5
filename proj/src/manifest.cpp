#include "tio/manifest.hpp"

#include <algorithm>
#include <fstream>
#include <iterator>

#include <openssl/evp.h>

#include "tio/image_io.hpp"

namespace tio {

namespace {

std::string sha1Hex(const std::string& data) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), md, &len, EVP_sha1(), nullptr) != 1)
    throw std::runtime_error("SHA-1 digest failed");
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[md[i] >> 4];
    out += hex[md[i] & 15];
  }
  return out;
}

std::string readAll(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), {}};
}

}  // namespace

std::string gitBlobHash(const std::string& content) {
  return sha1Hex("blob " + std::to_string(content.size()) + '\0' + content);
}

std::string contentHash(const std::filesystem::path& path) {
  if (std::filesystem::is_regular_file(path)) return gitBlobHash(readAll(path));
  if (!std::filesystem::is_directory(path)) throw IoError("cannot hash " + path.string() + ": no such file");
  std::vector<std::string> lines;
  for (const auto& e : std::filesystem::recursive_directory_iterator(path))
    if (e.is_regular_file())
      lines.push_back(std::filesystem::relative(e.path(), path).generic_string() + " " + gitBlobHash(readAll(e.path())));
  std::sort(lines.begin(), lines.end());
  std::string listing;
  for (const auto& l : lines) listing += l + "\n";
  return gitBlobHash(listing);
}

std::string contentHash(const std::vector<std::filesystem::path>& paths) {
  std::string listing;
  for (const auto& p : paths) listing += contentHash(p) + "\n";
  return gitBlobHash(listing);
}

Config RunManifest::toConfig() const {
  Config c = config;
  c.set("run.command", command);
  c.set("run.seed", std::to_string(seed));
  c.set("run.output", output.string());
  for (std::size_t i = 0; i < inputs.size(); ++i) c.set("run.input." + std::to_string(i), inputs[i].string());
  c.set("run.input_hash", input_hash);
  return c;
}

void RunManifest::write() const {
  std::error_code ec;
  std::filesystem::create_directories(output, ec);
  if (ec || !std::filesystem::is_directory(output)) throw IoError("cannot create " + output.string());
  toConfig().save(output / "run_manifest");
}

}  // namespace tio
