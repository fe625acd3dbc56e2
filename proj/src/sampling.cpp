#include "avnft/sampling.hpp"

#include <stdexcept>
#include <string>

#include "avnft/rng.hpp"

namespace avnft {

LatentPair LatentPair::zeros(const ModelConfig& cfg) {
    return LatentPair{Tensor::zeros({cfg.n_audio_tokens, cfg.d_model}),
                      Tensor::zeros({cfg.n_video_tokens, cfg.d_model})};
}

void LatentPair::validate(const ModelConfig& cfg) const {
    if (audio.rank() != 2 || audio.rows() != cfg.n_audio_tokens || audio.cols() != cfg.d_model ||
        video.rank() != 2 || video.rows() != cfg.n_video_tokens || video.cols() != cfg.d_model)
        throw std::invalid_argument("latent pair: audio " + shape_str(audio.shape()) + " video " +
                                    shape_str(video.shape()) + " do not match config");
}

std::set<int> SamplerConfig::last_k(int num_steps, int k) {
    std::set<int> out;
    for (int s = std::max(0, num_steps - k); s < num_steps; ++s) out.insert(s);
    return out;
}

void SamplerConfig::validate() const {
    if (num_steps < 1)
        throw std::invalid_argument("sampler: num_steps must be >= 1, got " +
                                    std::to_string(num_steps));
    if (late_steps.empty())
        throw std::invalid_argument("sampler: late step set must be nonempty");
    for (int s : late_steps)
        if (s < 0 || s >= num_steps)
            throw std::invalid_argument("sampler: late step " + std::to_string(s) +
                                        " outside [0, " + std::to_string(num_steps) + ")");
}

LatentPair interpolate(const LatentPair& x0, const LatentPair& x1, double t) {
    if (!(t >= 0.0 && t <= 1.0))
        throw std::invalid_argument("interpolate: t " + std::to_string(t) + " outside [0,1]");
    return LatentPair{add(scale(x0.audio, 1.0 - t), scale(x1.audio, t)),
                      add(scale(x0.video, 1.0 - t), scale(x1.video, t))};
}

LatentPair velocity_target(const LatentPair& x0, const LatentPair& x1) {
    return LatentPair{sub(x1.audio, x0.audio), sub(x1.video, x0.video)};
}

LatentPair gaussian_prior(const ModelConfig& cfg, std::uint64_t seed) {
    auto draw = [&](int rows, const char* tag) {
        Rng rng(seed_combine({seed, tag64(tag)}));
        std::vector<double> data(static_cast<std::size_t>(rows) * cfg.d_model);
        for (double& x : data) x = rng.normal();
        return Tensor::from({rows, cfg.d_model}, std::move(data));
    };
    return LatentPair{draw(cfg.n_audio_tokens, "audio-prior"),
                      draw(cfg.n_video_tokens, "video-prior")};
}

LatentPair euler_integrate(const VelocityFn& field, LatentPair x, int num_steps) {
    if (num_steps < 1)
        throw std::invalid_argument("sampler: num_steps must be >= 1, got " +
                                    std::to_string(num_steps));
    const double dt = 1.0 / num_steps;
    for (int k = 0; k < num_steps; ++k) {
        double t = 1.0 - k * dt;
        LatentPair v = field(x, t, k);
        x.audio = sub(x.audio, scale(v.audio, dt));
        x.video = sub(x.video, scale(v.video, dt));
    }
    return x;
}

Rollout sample_ode(const DualStreamPolicy& policy, int prompt, const SamplerConfig& sampler,
                   const SurgeryConfig& surgery, const BlockMask& mask) {
    sampler.validate();
    std::uint64_t prior_seed = seed_combine({sampler.seed, static_cast<std::uint64_t>(prompt)});
    LatentPair x1 = gaussian_prior(policy.config(), prior_seed);

    Rollout out;
    out.cache.n_audio = policy.config().n_audio_tokens;
    out.cache.n_video = policy.config().n_video_tokens;
    auto field = [&](const LatentPair& x, double t, int step) {
        bool cache_now = sampler.late_steps.count(step) > 0;
        ForwardResult f =
            policy.forward(x.audio, x.video, t, prompt, surgery, mask, cache_now, step);
        if (cache_now) out.cache.merge(f.cache);
        return LatentPair{f.velocity_audio, f.velocity_video};
    };
    out.x0_pred = euler_integrate(field, std::move(x1), sampler.num_steps);
    return out;
}

std::vector<Rollout> rollout_group(const DualStreamPolicy& policy, int prompt, int group_size,
                                   const SamplerConfig& sampler, const SurgeryConfig& surgery,
                                   const BlockMask& mask) {
    if (group_size < 1)
        throw std::invalid_argument("rollout group: size must be >= 1, got " +
                                    std::to_string(group_size));
    std::vector<Rollout> out;
    out.reserve(static_cast<std::size_t>(group_size));
    for (int j = 0; j < group_size; ++j) {
        SamplerConfig per = sampler;
        per.seed = seed_combine({sampler.seed, tag64("rollout"), static_cast<std::uint64_t>(j)});
        out.push_back(sample_ode(policy, prompt, per, surgery, mask));
    }
    return out;
}

}  // namespace avnft
