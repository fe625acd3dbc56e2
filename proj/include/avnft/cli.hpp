#pragma once

#include <cstdint>
#include <optional>
#include <string>

namespace avnft {

/// Command-line overrides applied on top of a parsed config file.
struct CliOverrides {
    std::optional<std::uint64_t> seed;  // replaces the training master seed
    std::string mode;                   // replaces the training mode when nonempty
};

// Each command returns a process exit status: 0 on success, 1 for usage or
// configuration problems, 2 when a numeric check fails or training produces
// unusable values. All output goes to stdout; errors go to stderr.

/// Runs the full training loop and writes metrics.jsonl, policy.ckpt,
/// policy_old.ckpt, and the resolved config.ini into out_dir.
int cmd_train(const std::string& config_path, const std::string& out_dir,
              const CliOverrides& overrides = {});

/// Verifies tape gradients against central finite differences on a miniature
/// model, plus the closed-form zero-gradient regimes. Objective knobs and the
/// detach ratio come from the config when one is given.
int cmd_gradcheck(const std::string& config_path, std::uint64_t seed);

/// Samples rollout groups with an untrained policy, reports how often the
/// per-stream advantages disagree in sign, and optionally writes a scatter
/// table (one row per rollout) as CSV.
int cmd_diagnose_conflict(const std::string& config_path, const std::string& out_csv,
                          int groups, const CliOverrides& overrides = {});

/// Compares synchronization rewards with and without cross-attention blocks
/// disabled in one direction ("a2v" or "v2a"). Blocks are given as ranges
/// like "0-1,3"; an empty string masks every block of that direction. When
/// the whole direction is masked, also proves the receiving stream's output
/// is bitwise independent of the other modality's input. An optional
/// checkpoint replaces the freshly initialized policy.
int cmd_ablate_kv(const std::string& config_path, const std::string& direction,
                  const std::string& block_ranges, const std::string& checkpoint = "");

/// Prints the layer-wise gradient-norm table of the joint objective with
/// partial detach off and on, per-row ratios, and the partition identity
/// check (bucket norms must recombine into the total exactly).
int cmd_profile_gradients(const std::string& config_path, const std::string& checkpoint = "");

/// Converts a metrics JSONL file to another format (currently "csv"); writes
/// to out_path, or stdout when out_path is empty.
int cmd_export(const std::string& metrics_path, const std::string& out_path,
               const std::string& format);

}  // namespace avnft
