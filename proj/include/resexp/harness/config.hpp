#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include "resexp/alignlab/alignlab.hpp"
#include "resexp/harness/harness.hpp"
#include "resexp/io/json_io.hpp"
#include "resexp/scalelab/scalelab.hpp"

namespace resexp::harness {

// Section parsers for the JSON run configs. Missing keys take defaults; unknown keys are ConfigErrors.
TaskConfig task_from_json(const io::Json& j);
io::Json task_to_json(const TaskConfig& t);
SgdConfig sgd_from_json(const io::Json& j, SgdConfig defaults = {});
io::Json sgd_to_json(const SgdConfig& s);
ExpansionConfig expansion_from_json(const io::Json& j);
SweepConfig sweep_from_json(const io::Json& j);
scale::CouplingModel coupling_from_json(const io::Json& j);
align::SamplingMode sampling_mode_from_string(std::string_view s);

// Seed precedence: explicit override, then RESEXP_SEED, then the config value.
std::uint64_t resolve_seed(std::optional<std::uint64_t> flag, std::uint64_t config_value);

}  // namespace resexp::harness
