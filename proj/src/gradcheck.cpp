#include "avnft/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <vector>

#include "avnft/rng.hpp"
#include "avnft/sampling.hpp"

namespace avnft {

namespace {

// Output projections are zero-initialized, which would silence most
// gradients; give them generic values so every path carries signal.
void randomize_head(DualStreamPolicy& policy, const std::string& stream, std::uint64_t seed) {
    Tensor& w = policy.param(stream + ".out.w");
    Rng rng(seed);
    for (double& x : w.mutable_data()) x = rng.uniform(-0.5, 0.5);
}

struct Probe {
    DualStreamPolicy policy;
    DualStreamPolicy old_policy;
    LatentPair x0;
    LatentPair x1;
    double t = 0.37;
    int prompt = 0;
    double r_video = 0.8;
    double r_audio = 0.3;
    RegionWeights weights;
};

Probe make_probe(const ModelConfig& model, std::uint64_t seed) {
    Probe p;
    p.policy = DualStreamPolicy(model, seed_combine({seed, tag64("train")}));
    p.old_policy = DualStreamPolicy(model, seed_combine({seed, tag64("old")}));
    p.x0 = gaussian_prior(model, seed_combine({seed, tag64("x0")}));
    p.x1 = gaussian_prior(model, seed_combine({seed, tag64("x1")}));
    randomize_head(p.policy, "audio", seed_combine({seed, tag64("head-a")}));
    randomize_head(p.policy, "video", seed_combine({seed, tag64("head-v")}));
    randomize_head(p.old_policy, "audio", seed_combine({seed, tag64("old-head-a")}));
    randomize_head(p.old_policy, "video", seed_combine({seed, tag64("old-head-v")}));
    // non-uniform weights so the region-weighted video path is exercised
    p.weights.lambda = 1.0;
    p.weights.weight.resize(static_cast<std::size_t>(model.n_video_tokens));
    for (std::size_t i = 0; i < p.weights.weight.size(); ++i)
        p.weights.weight[i] = 1.0 + 0.3 * static_cast<double>(i);
    return p;
}

FdSweep fd_sweep(Probe& probe, const NftConfig& nft, const SurgeryConfig& surgery) {
    DetachAnchors anchors;
    const DetachAnchors* ap = surgery.enabled ? &anchors : nullptr;

    // analytic pass; with surgery active it also records the frozen branches
    Tape tape;
    probe.policy.attach_all(tape);
    anchors.recording = true;
    BranchLosses bl = nft_losses(probe.policy, probe.old_policy, probe.x0, probe.x1, probe.t,
                                 probe.prompt, probe.r_video, probe.r_audio, nft,
                                 &probe.weights, surgery, ap);
    Gradients grads = tape.backward(total_loss(bl.video, bl.audio));
    std::map<std::string, std::vector<double>> analytic;
    for (const std::string& name : probe.policy.param_names())
        analytic[name] = grads.of(probe.policy.param(name));
    probe.policy.detach_all();

    anchors.recording = false;
    auto value = [&]() {
        anchors.rewind();
        BranchLosses v = nft_losses(probe.policy, probe.old_policy, probe.x0, probe.x1, probe.t,
                                    probe.prompt, probe.r_video, probe.r_audio, nft,
                                    &probe.weights, surgery, ap);
        return total_loss(v.video, v.audio).data()[0];
    };

    const double h = 1e-5;
    FdSweep sweep;
    for (const std::string& name : probe.policy.param_names()) {
        Tensor& p = probe.policy.param(name);
        for (std::size_t i = 0; i < p.size(); ++i) {
            double saved = p.data()[i];
            p.mutable_data()[i] = saved + h;
            double up = value();
            p.mutable_data()[i] = saved - h;
            double down = value();
            p.mutable_data()[i] = saved;
            double fd = (up - down) / (2.0 * h);
            double an = analytic[name][i];
            // denominator floor keeps finite-difference roundoff on
            // near-zero entries from masquerading as relative error
            double err = std::abs(an - fd) / std::max({1e-3, std::abs(an), std::abs(fd)});
            ++sweep.elements;
            if (err > sweep.max_rel_err) {
                sweep.max_rel_err = err;
                sweep.worst_param = name + "[" + std::to_string(i) + "]";
                sweep.worst_analytic = an;
                sweep.worst_numeric = fd;
            }
        }
    }
    return sweep;
}

// Total gradient norm of the joint objective under the given knobs.
double grad_norm_total(Probe& probe, const NftConfig& nft, const SurgeryConfig& surgery) {
    Tape tape;
    probe.policy.attach_all(tape);
    BranchLosses bl = nft_losses(probe.policy, probe.old_policy, probe.x0, probe.x1, probe.t,
                                 probe.prompt, probe.r_video, probe.r_audio, nft,
                                 &probe.weights, surgery, nullptr);
    Gradients grads = tape.backward(total_loss(bl.video, bl.audio));
    double total_sq = 0.0;
    for (const std::string& name : probe.policy.param_names()) {
        double n = grads.l2_norm(probe.policy.param(name));
        total_sq += n * n;
    }
    probe.policy.detach_all();
    return std::sqrt(total_sq);
}

// Norm over the audio->video KV projection parameters only.
double kv_path_norm(Probe& probe, const NftConfig& nft, const SurgeryConfig& surgery) {
    Tape tape;
    probe.policy.attach_all(tape);
    BranchLosses bl = nft_losses(probe.policy, probe.old_policy, probe.x0, probe.x1, probe.t,
                                 probe.prompt, probe.r_video, probe.r_audio, nft,
                                 &probe.weights, surgery, nullptr);
    Gradients grads = tape.backward(total_loss(bl.video, bl.audio));
    double total_sq = 0.0;
    for (const std::string& name : probe.policy.param_names()) {
        GradNormRow bucket = grad_bucket_of(name);
        if (bucket.stream == "video" && bucket.path == "cross_kv") {
            double n = grads.l2_norm(probe.policy.param(name));
            total_sq += n * n;
        }
    }
    probe.policy.detach_all();
    return std::sqrt(total_sq);
}

}  // namespace

bool GradCheckReport::passed() const {
    return plain.max_rel_err <= tolerance && surgered.max_rel_err <= tolerance &&
           beta_zero_grad_norm == 0.0 && alpha_one_kv_norm == 0.0;
}

GradCheckReport run_gradcheck(const ModelConfig& model, const NftConfig& nft,
                              std::uint64_t seed, double tolerance) {
    model.validate();
    nft.validate();
    Probe probe = make_probe(model, seed);

    GradCheckReport report;
    report.tolerance = tolerance;
    report.plain = fd_sweep(probe, nft, SurgeryConfig::off());
    report.surgered = fd_sweep(probe, nft, SurgeryConfig::from(model));

    NftConfig frozen = nft;
    frozen.beta = 0.0;
    report.beta_zero_grad_norm = grad_norm_total(probe, frozen, SurgeryConfig::off());

    SurgeryConfig full_detach{true, std::max(model.blocks_audio, model.blocks_video), 1.0};
    report.alpha_one_kv_norm = kv_path_norm(probe, nft, full_detach);
    return report;
}

std::string format_gradcheck(const GradCheckReport& r) {
    char buf[256];
    std::string out;
    auto line = [&](bool ok, const char* fmt, auto... args) {
        std::snprintf(buf, sizeof(buf), fmt, args...);
        out += std::string(ok ? "PASS  " : "FAIL  ") + buf + "\n";
    };
    line(r.plain.max_rel_err <= r.tolerance,
         "finite differences, detach off: max rel err %.3e over %zu elements (worst %s)",
         r.plain.max_rel_err, r.plain.elements, r.plain.worst_param.c_str());
    line(r.surgered.max_rel_err <= r.tolerance,
         "finite differences, detach on:  max rel err %.3e over %zu elements (worst %s)",
         r.surgered.max_rel_err, r.surgered.elements, r.surgered.worst_param.c_str());
    line(r.beta_zero_grad_norm == 0.0, "beta = 0 gradient norm: %.3e (must be exactly 0)",
         r.beta_zero_grad_norm);
    line(r.alpha_one_kv_norm == 0.0,
         "fully detached KV-path gradient norm: %.3e (must be exactly 0)", r.alpha_one_kv_norm);
    return out;
}

}  // namespace avnft
