#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "avnft/model.hpp"
#include "avnft/rewards.hpp"
#include "avnft/sampling.hpp"
#include "avnft/tensor.hpp"

namespace avnft {

/// Knobs of the sign-aware fine-tuning objective.
struct NftConfig {
    double beta = 0.5;     // implicit-policy mixing; 0 freezes learning
    double lambda = 1.5;   // region reweighting strength
    double z_floor = 1e-8; // lower bound on the group std normalizer
    double clip_lo = -1.0; // advantage clip range feeding the
    double clip_hi = 1.0;  //   optimality probability

    void validate() const;
};

/// Per-group advantages: the three normalized scores, their routed sums,
/// and the optimality probabilities derived from the routed values.
struct AdvantageSet {
    std::vector<double> video;         // A_v
    std::vector<double> audio;         // A_a
    std::vector<double> sync;          // A_av
    std::vector<double> routed_video;  // A_v + A_av
    std::vector<double> routed_audio;  // A_a + A_av
    std::vector<double> r_video;       // optimality probabilities in [0,1]
    std::vector<double> r_audio;

    std::size_t size() const { return video.size(); }
};

/// Per-video-token loss weights derived from cross-attention mass.
struct RegionWeights {
    std::vector<double> weight;  // length n_video_tokens, each in [1, 1+lambda]
    double lambda = 0.0;

    double sum() const;
};

/// (raw - mean) / max(population std, z_floor). A degenerate group (all
/// scores equal) maps to all zeros.
std::vector<double> group_advantages(const std::vector<double>& raw, double z_floor);

struct RoutedPair {
    std::vector<double> video;
    std::vector<double> audio;
};

/// Routed sums: video gets A_v + A_av, audio gets A_a + A_av.
RoutedPair route_advantages(const std::vector<double>& a_video,
                            const std::vector<double>& a_audio,
                            const std::vector<double>& a_sync);

/// Baseline single-scalar mode: normalize the per-rollout sums of the raw
/// rewards once, so both streams see the same advantage.
std::vector<double> shared_advantage(const std::vector<double>& r_video,
                                     const std::vector<double>& r_audio,
                                     const std::vector<double>& r_sync, double z_floor);

/// r = 1/2 + 1/2 * clip(a, clip_lo, clip_hi), mapped into [0,1].
double optimality_probability(double a, double clip_lo = -1.0, double clip_hi = 1.0);

/// Full advantage pipeline for one group of rollout rewards. In shared
/// mode every rollout gets one scalar advantage (so r_video == r_audio);
/// otherwise the three scores are normalized separately and routed.
AdvantageSet advantage_set(const std::vector<RewardVector>& rewards, const NftConfig& nft,
                           bool shared);

/// v_plus = (1-beta) v_old + beta v_train; v_minus = (1+beta) v_old - beta
/// v_train. Their sum is 2 v_old identically.
std::pair<Tensor, Tensor> implicit_policies(const Tensor& v_old, const Tensor& v_train,
                                            double beta);

/// Average attention mass received by each video token across the cached
/// deep-block maps, min-max normalized and mapped to w = 1 + lambda * s.
/// A spread below 1e-9 (or lambda = 0) yields uniform weights.
RegionWeights region_weights(const AttentionCache& cache, double lambda);

enum class Branch { Audio, Video };

struct BranchLosses {
    Tensor video;  // scalar, on the training tape
    Tensor audio;  // scalar, on the training tape
};

/// Both branch losses from one pair of joint forwards. Builds x_t on the
/// straight path between x0 and the fresh prior x1, evaluates the training
/// and frozen policies at (x_t, t), mixes them into the implicit positive
/// and negative velocities, and scores each branch as
///   r * |v_plus - v|^2 + (1 - r) * |v_minus - v|^2
/// with v = x1 - x0. The video term is region-weighted (normalized by the
/// weight sum) when weights are given; audio is a plain per-token mean.
BranchLosses nft_losses(const DualStreamPolicy& policy, const DualStreamPolicy& old_policy,
                        const LatentPair& x0, const LatentPair& x1, double t, int prompt,
                        double r_video, double r_audio, const NftConfig& nft,
                        const RegionWeights* weights = nullptr,
                        const SurgeryConfig& surgery = SurgeryConfig::off(),
                        const DetachAnchors* anchors = nullptr);

/// One branch of the objective; see nft_losses for the shared mechanics.
Tensor nft_branch_loss(const DualStreamPolicy& policy, const DualStreamPolicy& old_policy,
                       const LatentPair& x0, const LatentPair& x1, double t, int prompt,
                       double r, Branch branch, const NftConfig& nft,
                       const RegionWeights* weights = nullptr,
                       const SurgeryConfig& surgery = SurgeryConfig::off(),
                       const DetachAnchors* anchors = nullptr);

/// Joint objective: sum of the two branch losses.
Tensor total_loss(const Tensor& video_branch, const Tensor& audio_branch);

}  // namespace avnft
