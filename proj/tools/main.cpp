#include <cstdint>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "avnft/cli.hpp"

int main(int argc, char** argv) {
    CLI::App app{"desk-scale two-stream diffusion RL laboratory"};
    app.require_subcommand(1);

    std::string config_path, out_path, mode, direction, blocks, checkpoint, metrics_path, format;
    std::optional<std::uint64_t> seed;
    std::uint64_t probe_seed = 1;
    int groups = 175;

    auto add_seed = [&](CLI::App* cmd) {
        cmd->add_option("--seed", seed, "override the training master seed");
    };
    auto add_mode = [&](CLI::App* cmd) {
        cmd->add_option("--mode", mode,
                        "override the training mode (shared-advantage, routing-only, "
                        "routing-surgery, omninft)");
    };

    CLI::App* train = app.add_subcommand("train", "run the training loop");
    train->add_option("--config", config_path, "INI config file")->required();
    train->add_option("--out", out_path, "output directory")->required();
    add_seed(train);
    add_mode(train);

    CLI::App* gradcheck =
        app.add_subcommand("gradcheck", "verify derivatives with finite differences");
    gradcheck->add_option("--config", config_path,
                          "INI config file (objective knobs only; geometry stays miniature)");
    gradcheck->add_option("--seed", probe_seed, "probe seed");

    CLI::App* diagnose = app.add_subcommand(
        "diagnose-conflict", "measure per-stream advantage sign disagreement");
    diagnose->add_option("--config", config_path, "INI config file")->required();
    diagnose->add_option("--out", out_path, "scatter CSV output path");
    diagnose->add_option("--groups", groups, "number of rollout groups");
    add_seed(diagnose);

    CLI::App* ablate =
        app.add_subcommand("ablate-kv", "disable cross-attention blocks in one direction");
    ablate->add_option("--config", config_path, "INI config file")->required();
    ablate->add_option("--direction", direction, "a2v or v2a")->required();
    ablate->add_option("--blocks", blocks, "block ranges like 0-1,3 (default: all)");
    ablate->add_option("--ckpt", checkpoint, "policy checkpoint (default: fresh probe policy)");

    CLI::App* profile =
        app.add_subcommand("profile-gradients", "layer-wise gradient norms, detach off vs on");
    profile->add_option("--config", config_path, "INI config file")->required();
    profile->add_option("--ckpt", checkpoint, "policy checkpoint (default: fresh probe policy)");

    CLI::App* exporter = app.add_subcommand("export", "convert a metrics file");
    exporter->add_option("--metrics", metrics_path, "metrics JSONL file")->required();
    exporter->add_option("--out", out_path, "output path (default: stdout)");
    exporter->add_option("--format", format, "output format (csv)")->default_val("csv");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 1;
    }

    avnft::CliOverrides overrides{seed, mode};
    if (train->parsed()) return avnft::cmd_train(config_path, out_path, overrides);
    if (gradcheck->parsed()) return avnft::cmd_gradcheck(config_path, probe_seed);
    if (diagnose->parsed())
        return avnft::cmd_diagnose_conflict(config_path, out_path, groups, overrides);
    if (ablate->parsed()) return avnft::cmd_ablate_kv(config_path, direction, blocks, checkpoint);
    if (profile->parsed()) return avnft::cmd_profile_gradients(config_path, checkpoint);
    if (exporter->parsed()) return avnft::cmd_export(metrics_path, out_path, format);
    return 1;
}
