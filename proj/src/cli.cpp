#include "avnft/cli.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <set>
#include <vector>

#include "avnft/config.hpp"
#include "avnft/errors.hpp"
#include "avnft/gradcheck.hpp"
#include "avnft/metrics.hpp"
#include "avnft/rng.hpp"

namespace avnft {

namespace {

int guarded(const std::function<int()>& body) {
    try {
        return body();
    } catch (const NumericError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}

RunConfig load_with_overrides(const std::string& config_path, const CliOverrides& overrides) {
    if (config_path.empty()) throw std::invalid_argument("a config file is required (--config)");
    ConfigLoad loaded = load_run_config(config_path);
    for (const std::string& line : loaded.defaulted)
        std::cout << "config default: " << line << "\n";
    RunConfig cfg = loaded.config;
    if (overrides.seed) cfg.train.master_seed = *overrides.seed;
    if (!overrides.mode.empty()) cfg.train.mode = parse_mode(overrides.mode);
    return cfg;
}

// Fresh policies have zero output projections (velocity starts at zero),
// which also blocks all gradient flow into the blocks; diagnostic probes on
// untrained policies need nonzero heads to be informative.
void randomize_heads(DualStreamPolicy& policy, std::uint64_t seed) {
    for (const char* stream : {"audio", "video"}) {
        Tensor& w = policy.param(std::string(stream) + ".out.w");
        Rng rng(seed_combine({seed, tag64(stream)}));
        for (double& x : w.mutable_data()) x = rng.uniform(-0.5, 0.5);
    }
}

DualStreamPolicy probe_policy(const RunConfig& cfg, const std::string& checkpoint) {
    if (!checkpoint.empty()) {
        DualStreamPolicy policy = load_checkpoint(checkpoint);
        if (policy.config().d_model != cfg.model.d_model ||
            policy.config().n_audio_tokens != cfg.model.n_audio_tokens ||
            policy.config().n_video_tokens != cfg.model.n_video_tokens)
            throw std::invalid_argument("checkpoint geometry does not match the config");
        return policy;
    }
    DualStreamPolicy policy(cfg.model,
                            seed_combine({cfg.train.master_seed, tag64("init")}));
    randomize_heads(policy, seed_combine({cfg.train.master_seed, tag64("probe-head")}));
    return policy;
}

std::set<int> parse_ranges(const std::string& raw) {
    std::set<int> out;
    std::size_t pos = 0;
    while (pos < raw.size()) {
        std::size_t comma = raw.find(',', pos);
        std::string item = raw.substr(pos, comma == std::string::npos ? comma : comma - pos);
        pos = comma == std::string::npos ? raw.size() : comma + 1;
        if (item.empty()) throw std::invalid_argument("blocks: empty entry in '" + raw + "'");
        std::size_t dash = item.find('-');
        try {
            if (dash == std::string::npos) {
                out.insert(std::stoi(item));
            } else {
                int lo = std::stoi(item.substr(0, dash));
                int hi = std::stoi(item.substr(dash + 1));
                if (hi < lo) throw std::invalid_argument("descending");
                for (int b = lo; b <= hi; ++b) out.insert(b);
            }
        } catch (const std::exception&) {
            throw std::invalid_argument("blocks: cannot parse '" + item + "' (use forms like 0-2,5)");
        }
    }
    return out;
}

double mean_of(const std::vector<double>& xs) {
    double s = 0.0;
    for (double x : xs) s += x;
    return xs.empty() ? 0.0 : s / static_cast<double>(xs.size());
}

}  // namespace

int cmd_train(const std::string& config_path, const std::string& out_dir,
              const CliOverrides& overrides) {
    return guarded([&]() {
        RunConfig cfg = load_with_overrides(config_path, overrides);
        if (out_dir.empty()) throw std::invalid_argument("an output directory is required (--out)");
        std::filesystem::create_directories(out_dir);
        const std::filesystem::path out(out_dir);

        {
            std::ofstream resolved(out / "config.ini");
            resolved << render_run_config(cfg);
        }

        Trainer trainer(cfg.model, cfg.train);
        MetricsWriter writer((out / "metrics.jsonl").string());
        trainer.run([&](const IterationMetrics& m) {
            writer.append(m);
            std::printf(
                "iter %4d  r_v %.4f  r_a %.4f  r_av %.4f  conflict %.2f  loss_v %.5f  "
                "loss_a %.5f\n",
                m.iteration, m.mean_r_video, m.mean_r_audio, m.mean_r_sync, m.conflict_rate,
                m.video_loss, m.audio_loss);
        });

        save_checkpoint(trainer.policy(), (out / "policy.ckpt").string());
        save_checkpoint(trainer.old_policy(), (out / "policy_old.ckpt").string());
        std::cout << "wrote metrics.jsonl, policy.ckpt, policy_old.ckpt, config.ini to "
                  << out_dir << "\n";
        return 0;
    });
}

int cmd_gradcheck(const std::string& config_path, std::uint64_t seed) {
    return guarded([&]() {
        // geometry stays miniature so the sweep covers every element quickly;
        // the objective knobs and the detach ratio follow the config
        ModelConfig model;
        model.blocks_audio = 2;
        model.blocks_video = 2;
        model.d_model = 8;
        model.heads = 2;
        model.n_audio_tokens = 3;
        model.n_video_tokens = 4;
        model.shallow_boundary = 1;
        model.detach_ratio = 0.25;
        model.prompt_vocab = 4;
        NftConfig nft;
        if (!config_path.empty()) {
            ConfigLoad loaded = load_run_config(config_path);
            nft = loaded.config.train.nft;
            model.detach_ratio = loaded.config.model.detach_ratio;
        }
        GradCheckReport report = run_gradcheck(model, nft, seed);
        std::cout << format_gradcheck(report);
        if (!report.passed()) throw NumericError("derivative verification failed");
        return 0;
    });
}

int cmd_diagnose_conflict(const std::string& config_path, const std::string& out_csv,
                          int groups, const CliOverrides& overrides) {
    return guarded([&]() {
        RunConfig cfg = load_with_overrides(config_path, overrides);
        if (groups <= 0) throw std::invalid_argument("--groups must be positive");
        DualStreamPolicy policy(cfg.model,
                                seed_combine({cfg.train.master_seed, tag64("init")}));
        randomize_heads(policy, seed_combine({cfg.train.master_seed, tag64("probe-head")}));
        std::vector<PromptSpec> corpus =
            make_corpus(cfg.model, cfg.train.corpus_size,
                        seed_combine({cfg.train.master_seed, tag64("corpus")}));

        std::string csv = "group,rollout,adv_video,adv_audio,conflict\n";
        int conflicts = 0, total = 0;
        for (int g = 0; g < groups; ++g) {
            const PromptSpec& spec = corpus[static_cast<std::size_t>(g) % corpus.size()];
            SamplerConfig sampler = cfg.train.sampler;
            sampler.seed = seed_combine({cfg.train.master_seed, tag64("diagnose-sample"),
                                         static_cast<std::uint64_t>(g)});
            std::vector<Rollout> rollouts =
                rollout_group(policy, spec.id, cfg.train.group_size, sampler);
            std::vector<double> rv, ra;
            for (std::size_t j = 0; j < rollouts.size(); ++j) {
                RewardVector r = evaluate_rewards(rollouts[j].x0_pred, spec);
                r = inject_conflict(r, cfg.train.conflict_eps,
                                    seed_combine({cfg.train.master_seed,
                                                  tag64("diagnose-conflict"),
                                                  static_cast<std::uint64_t>(g), j}));
                rv.push_back(r.video);
                ra.push_back(r.audio);
            }
            std::vector<double> av = group_advantages(rv, cfg.train.nft.z_floor);
            std::vector<double> aa = group_advantages(ra, cfg.train.nft.z_floor);
            for (std::size_t j = 0; j < av.size(); ++j) {
                bool conflict = av[j] * aa[j] < 0.0;
                conflicts += conflict ? 1 : 0;
                ++total;
                char row[128];
                std::snprintf(row, sizeof(row), "%d,%zu,%.17g,%.17g,%d\n", g, j, av[j], aa[j],
                              conflict ? 1 : 0);
                csv += row;
            }
        }
        if (!out_csv.empty()) {
            std::ofstream out(out_csv);
            if (!out) throw std::runtime_error("cannot open '" + out_csv + "' for writing");
            out << csv;
        }
        std::printf("conflict rate: %.4f over %d rollouts (%d groups of %d, eps %.4g)\n",
                    static_cast<double>(conflicts) / static_cast<double>(total), total, groups,
                    cfg.train.group_size, cfg.train.conflict_eps);
        return 0;
    });
}

int cmd_ablate_kv(const std::string& config_path, const std::string& direction,
                  const std::string& block_ranges, const std::string& checkpoint) {
    return guarded([&]() {
        RunConfig cfg = load_with_overrides(config_path, {});
        BlockMask mask;
        if (direction == "a2v") {
            mask.direction = BlockMask::Direction::A2V;
        } else if (direction == "v2a") {
            mask.direction = BlockMask::Direction::V2A;
        } else {
            throw std::invalid_argument("direction must be a2v or v2a, got '" + direction + "'");
        }
        const int dir_blocks = mask.direction == BlockMask::Direction::A2V
                                   ? cfg.model.blocks_video
                                   : cfg.model.blocks_audio;
        mask.blocked = block_ranges.empty()
                           ? BlockMask::all(mask.direction, dir_blocks).blocked
                           : parse_ranges(block_ranges);
        mask.validate(cfg.model);

        DualStreamPolicy policy = probe_policy(cfg, checkpoint);
        std::vector<PromptSpec> corpus =
            make_corpus(cfg.model, cfg.train.corpus_size,
                        seed_combine({cfg.train.master_seed, tag64("corpus")}));

        std::printf("masking %zu/%d %s cross blocks\n", mask.blocked.size(), dir_blocks,
                    direction.c_str());
        std::vector<double> deltas;
        for (std::size_t p = 0; p < corpus.size(); ++p) {
            SamplerConfig sampler = cfg.train.sampler;
            sampler.seed = seed_combine({cfg.train.master_seed, tag64("ablate"),
                                         static_cast<std::uint64_t>(p)});
            std::vector<Rollout> base = rollout_group(policy, corpus[p].id,
                                                      cfg.train.group_size, sampler);
            std::vector<Rollout> cut = rollout_group(policy, corpus[p].id, cfg.train.group_size,
                                                     sampler, SurgeryConfig::off(), mask);
            std::vector<double> sync_base, sync_cut;
            for (std::size_t j = 0; j < base.size(); ++j) {
                sync_base.push_back(evaluate_rewards(base[j].x0_pred, corpus[p]).sync);
                sync_cut.push_back(evaluate_rewards(cut[j].x0_pred, corpus[p]).sync);
            }
            double b = mean_of(sync_base), c = mean_of(sync_cut);
            deltas.push_back(c - b);
            std::printf("prompt %d: sync %+.6f (unmasked) -> %+.6f (masked), delta %+.6f\n",
                        corpus[p].id, b, c, c - b);
        }
        std::printf("mean sync delta: %+.6f\n", mean_of(deltas));

        if (static_cast<int>(mask.blocked.size()) == dir_blocks) {
            // the whole direction is cut, so the receiving stream must not
            // react to the other modality at all
            LatentPair x = gaussian_prior(cfg.model,
                                          seed_combine({cfg.train.master_seed, tag64("probe-x")}));
            LatentPair other = gaussian_prior(
                cfg.model, seed_combine({cfg.train.master_seed, tag64("probe-y")}));
            bool a2v = mask.direction == BlockMask::Direction::A2V;
            ForwardResult before = policy.forward(x.audio, x.video, 0.5, corpus[0].id,
                                                  SurgeryConfig::off(), mask);
            ForwardResult after =
                a2v ? policy.forward(other.audio, x.video, 0.5, corpus[0].id,
                                     SurgeryConfig::off(), mask)
                    : policy.forward(x.audio, other.video, 0.5, corpus[0].id,
                                     SurgeryConfig::off(), mask);
            const Tensor& rb = a2v ? before.velocity_video : before.velocity_audio;
            const Tensor& ra = a2v ? after.velocity_video : after.velocity_audio;
            bool identical = rb.data() == ra.data();
            std::printf("independence probe (%s output vs %s perturbation): %s\n",
                        a2v ? "video" : "audio", a2v ? "audio" : "video",
                        identical ? "PASS (bitwise)" : "FAIL");
            if (!identical)
                throw NumericError("masked direction still leaks across modalities");
        } else {
            std::printf("independence probe: skipped (mask does not cover every block)\n");
        }
        return 0;
    });
}

int cmd_profile_gradients(const std::string& config_path, const std::string& checkpoint) {
    return guarded([&]() {
        RunConfig cfg = load_with_overrides(config_path, {});
        DualStreamPolicy policy = probe_policy(cfg, checkpoint);
        DualStreamPolicy old_policy(cfg.model,
                                    seed_combine({cfg.train.master_seed, tag64("profile-old")}));
        std::vector<PromptSpec> corpus =
            make_corpus(cfg.model, 1, seed_combine({cfg.train.master_seed, tag64("corpus")}));
        LatentPair x0 = gaussian_prior(cfg.model,
                                       seed_combine({cfg.train.master_seed, tag64("profile-x0")}));
        LatentPair x1 = gaussian_prior(cfg.model,
                                       seed_combine({cfg.train.master_seed, tag64("profile-x1")}));

        auto table_for = [&](const SurgeryConfig& surgery) {
            return layer_grad_norms(policy, [&](Tape&, DualStreamPolicy& p) {
                BranchLosses bl = nft_losses(p, old_policy, x0, x1, 0.5, corpus[0].id, 0.8, 0.3,
                                             cfg.train.nft, nullptr, surgery, nullptr);
                return total_loss(bl.video, bl.audio);
            });
        };
        GradNormTable off = table_for(SurgeryConfig::off());
        GradNormTable on = table_for(SurgeryConfig::from(cfg.model));

        std::printf("%-7s %5s %-9s %14s %14s %10s\n", "stream", "block", "path", "detach off",
                    "detach on", "ratio");
        for (std::size_t i = 0; i < off.rows.size(); ++i) {
            const GradNormRow& a = off.rows[i];
            const GradNormRow& b = on.rows[i];
            double ratio = a.norm > 0.0 ? b.norm / a.norm : 0.0;
            std::printf("%-7s %5d %-9s %14.6e %14.6e %10.6f\n", a.stream.c_str(), a.block,
                        a.path.c_str(), a.norm, b.norm, ratio);
        }
        std::printf("total: %.6e (off) %.6e (on)\n", off.total, on.total);

        // bucket norms must recombine into the total: the rows partition the
        // parameter set
        auto partition_gap = [](const GradNormTable& t) {
            double sq = 0.0;
            for (const GradNormRow& r : t.rows) sq += r.norm * r.norm;
            double recombined = std::sqrt(sq);
            return std::abs(recombined - t.total) / std::max(1e-12, t.total);
        };
        double gap_off = partition_gap(off), gap_on = partition_gap(on);
        std::printf("partition check: rel gap %.2e (off), %.2e (on)\n", gap_off, gap_on);
        if (gap_off > 1e-9 || gap_on > 1e-9)
            throw NumericError("gradient buckets do not recombine into the total norm");

        // shallow audio->video KV rows must scale by exactly (1 - alpha_s)
        const double expected = 1.0 - cfg.model.detach_ratio;
        std::printf("expected shallow KV ratio (1 - alpha_s): %.6f\n", expected);
        for (std::size_t i = 0; i < off.rows.size(); ++i) {
            const GradNormRow& a = off.rows[i];
            if (a.stream != "video" || a.path != "cross_kv" || a.block < 0 ||
                a.block >= cfg.model.shallow_boundary || a.norm == 0.0)
                continue;
            double ratio = on.rows[i].norm / a.norm;
            if (std::abs(ratio - expected) > 1e-9)
                throw NumericError("shallow KV gradient ratio " + std::to_string(ratio) +
                                   " deviates from 1 - alpha_s");
        }
        return 0;
    });
}

int cmd_export(const std::string& metrics_path, const std::string& out_path,
               const std::string& format) {
    return guarded([&]() {
        if (format != "csv")
            throw std::invalid_argument("unsupported format '" + format + "' (expected csv)");
        std::vector<IterationMetrics> series = read_metrics(metrics_path);
        std::string csv = metrics_to_csv(series);
        if (out_path.empty()) {
            std::cout << csv;
        } else {
            std::ofstream out(out_path);
            if (!out) throw std::runtime_error("cannot open '" + out_path + "' for writing");
            out << csv;
            std::cout << "wrote " << series.size() << " rows to " << out_path << "\n";
        }
        return 0;
    });
}

}  // namespace avnft
