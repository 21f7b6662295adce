#include "resexp/io/json_io.hpp"

#include <openssl/evp.h>

#include <cstdio>
#include <fstream>
#include <sstream>

#include "resexp/error.hpp"

namespace resexp::io {

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::ConfigError, "cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const std::filesystem::path& path, std::string_view text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::ConfigError, "cannot write " + path.string());
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    if (!out) throw Error(ErrorCode::ConfigError, "write failed for " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

Json parse_json(std::string_view text, std::string_view source) {
  try {
    return Json::parse(text.begin(), text.end());
  } catch (const nlohmann::json::parse_error& e) {
    std::size_t line = 1, col = 1;
    const std::size_t stop = std::min<std::size_t>(e.byte > 0 ? e.byte - 1 : 0, text.size());
    for (std::size_t i = 0; i < stop; ++i) {
      if (text[i] == '\n') {
        ++line;
        col = 1;
      } else {
        ++col;
      }
    }
    throw Error(ErrorCode::ConfigError,
                std::string(source) + ":" + std::to_string(line) + ":" + std::to_string(col) + ": " + e.what());
  }
}

Json load_json_file(const std::filesystem::path& path) { return parse_json(read_text_file(path), path.string()); }

std::string dump_json(const Json& j) { return j.dump(2) + "\n"; }

void require_known_keys(const Json& j, std::initializer_list<std::string_view> allowed, std::string_view context) {
  if (!j.is_object()) throw Error(ErrorCode::ConfigError, std::string(context) + ": expected an object");
  for (const auto& [key, _] : j.items()) {
    bool known = false;
    for (auto a : allowed) known = known || key == a;
    if (!known) throw Error(ErrorCode::ConfigError, std::string(context) + ": unknown key '" + key + "'");
  }
}

void throw_config_type_error(std::string_view key, std::string_view what) {
  throw Error(ErrorCode::ConfigError, "key '" + std::string(key) + "': " + std::string(what));
}

void throw_missing_key(std::string_view key, std::string_view context) {
  throw Error(ErrorCode::ConfigError, std::string(context) + ": missing key '" + std::string(key) + "'");
}

std::string sha256_hex(std::string_view bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr);
  std::string hex;
  char buf[3];
  for (unsigned int i = 0; i < len; ++i) {
    std::snprintf(buf, sizeof buf, "%02x", digest[i]);
    hex += buf;
  }
  return hex;
}

}  // namespace resexp::io
