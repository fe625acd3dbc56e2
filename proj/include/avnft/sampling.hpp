#pragma once

#include <cstdint>
#include <functional>
#include <set>
#include <vector>

#include "avnft/model.hpp"
#include "avnft/tensor.hpp"

namespace avnft {

/// One joint sample: audio and video token latents sharing a timestep.
struct LatentPair {
    Tensor audio;  // [n_audio_tokens x d_model]
    Tensor video;  // [n_video_tokens x d_model]

    static LatentPair zeros(const ModelConfig& cfg);
    void validate(const ModelConfig& cfg) const;
};

/// Euler grid settings. Step k integrates from t = 1 - k/num_steps; the
/// late_steps set T names the step indices (near t = 0) whose attention maps
/// are cached for region scoring.
struct SamplerConfig {
    int num_steps = 16;
    std::set<int> late_steps = {12, 13, 14, 15};
    std::uint64_t seed = 0;

    static std::set<int> last_k(int num_steps, int k);
    void validate() const;
};

/// Linear path position: (1 - t) x0 + t x1 per modality, shared t.
LatentPair interpolate(const LatentPair& x0, const LatentPair& x1, double t);

/// Time derivative of the linear path: x1 - x0 per modality.
LatentPair velocity_target(const LatentPair& x0, const LatentPair& x1);

/// Independent standard-normal latents per modality (separate streams).
LatentPair gaussian_prior(const ModelConfig& cfg, std::uint64_t seed);

/// Velocity field callback: (current state, t, step index) -> velocities.
using VelocityFn = std::function<LatentPair(const LatentPair&, double, int)>;

/// Deterministic Euler integration from t = 1 down to 0 on a uniform grid:
/// x <- x - (1/num_steps) * field(x, t, k), both modalities in lockstep.
/// Exact for constant fields regardless of step count.
LatentPair euler_integrate(const VelocityFn& field, LatentPair start, int num_steps);

struct Rollout {
    LatentPair x0_pred;
    AttentionCache cache;
};

/// Generates one joint sample: draws the prior from (seed, prompt, modality),
/// integrates the policy's velocity field, and caches deep-block attention at
/// the late steps. Never mutates the policy.
Rollout sample_ode(const DualStreamPolicy& policy, int prompt, const SamplerConfig& sampler,
                   const SurgeryConfig& surgery = SurgeryConfig::off(),
                   const BlockMask& mask = BlockMask::none());

/// group_size independent rollouts for one prompt, with per-rollout prior
/// seeds derived from (sampler.seed, rollout index). Collected in index order.
std::vector<Rollout> rollout_group(const DualStreamPolicy& policy, int prompt, int group_size,
                                   const SamplerConfig& sampler,
                                   const SurgeryConfig& surgery = SurgeryConfig::off(),
                                   const BlockMask& mask = BlockMask::none());

}  // namespace avnft
