#pragma once

#include <string>
#include <vector>

#include "avnft/model.hpp"
#include "avnft/trainer.hpp"

namespace avnft {

/// Everything one experiment needs: architecture plus training loop settings
/// (the sampler and reward knobs live inside the train config).
struct RunConfig {
    ModelConfig model;
    TrainConfig train;
};

/// A parsed configuration plus one line per key that was absent from the
/// file and therefore kept its default, as "section.key = value".
struct ConfigLoad {
    RunConfig config;
    std::vector<std::string> defaulted;
};

/// Parses INI text with sections [model], [sampler], [train], [rewards].
/// Lines are `key = value`; blank lines and lines starting with '#' or ';'
/// are ignored; later duplicates of a key win. Unknown sections or keys and
/// malformed values raise std::invalid_argument naming the offender. The
/// resulting config is validated before it is returned.
ConfigLoad parse_run_config(const std::string& text);

/// Reads the file at path and parses it; a missing or unreadable file is a
/// std::runtime_error.
ConfigLoad load_run_config(const std::string& path);

/// Renders every key of the schema with the config's current values, in a
/// form parse_run_config accepts and that reproduces the config exactly.
std::string render_run_config(const RunConfig& config);

}  // namespace avnft
