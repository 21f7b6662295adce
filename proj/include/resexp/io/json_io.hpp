#pragma once

#include <filesystem>
#include <initializer_list>
#include <string>
#include <string_view>

#include "json.hpp"

namespace resexp::io {

using Json = nlohmann::json;

std::string read_text_file(const std::filesystem::path& path);
// Writes via a temporary sibling and rename, so readers never see a partial file.
void write_text_file(const std::filesystem::path& path, std::string_view text);

// Parses JSON text; syntax errors become ConfigError "<source>:<line>:<col>: ...".
Json parse_json(std::string_view text, std::string_view source);
Json load_json_file(const std::filesystem::path& path);
// Pretty-printed, key-sorted, trailing newline: stable bytes for identical values.
std::string dump_json(const Json& j);

// Rejects keys outside `allowed` (ConfigError naming the context).
void require_known_keys(const Json& j, std::initializer_list<std::string_view> allowed, std::string_view context);

[[noreturn]] void throw_config_type_error(std::string_view key, std::string_view what);
[[noreturn]] void throw_missing_key(std::string_view key, std::string_view context);

template <typename T>
T get_or(const Json& j, const char* key, T fallback) {
  if (!j.contains(key) || j.at(key).is_null()) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw_config_type_error(key, e.what());
  }
}

template <typename T>
T get_required(const Json& j, const char* key, std::string_view context) {
  if (!j.contains(key)) throw_missing_key(key, context);
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw_config_type_error(key, e.what());
  }
}

std::string sha256_hex(std::string_view bytes);

}  // namespace resexp::io
