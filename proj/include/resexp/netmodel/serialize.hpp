#pragma once

#include <filesystem>
#include <optional>
#include <string>

#include "resexp/io/json_io.hpp"
#include "resexp/netmodel/spec.hpp"

namespace resexp::net {

inline constexpr int kModelFormatVersion = 1;

io::Json tensor_to_json(const nd::Tensor& t);
nd::Tensor tensor_from_json(const io::Json& j);

io::Json spec_to_json(const NetworkSpec& spec);
// Missing keys take NetworkSpec defaults; unknown keys are a ConfigError.
NetworkSpec spec_from_json(const io::Json& j);

io::Json state_to_json(const NetworkState& state);
NetworkState state_from_json(const io::Json& j);

io::Json block_to_json(const InsertedBlock& block);
InsertedBlock block_from_json(const io::Json& j);

// A network, optionally expanded by an inserted block.
struct ModelFile {
  NetworkSpec spec;
  NetworkState state;
  std::optional<InsertedBlock> block;
};

std::string model_to_text(const ModelFile& model);
ModelFile model_from_text(const std::string& text, const std::string& source);
void save_model(const std::filesystem::path& path, const ModelFile& model);
ModelFile load_model(const std::filesystem::path& path);

}  // namespace resexp::net
