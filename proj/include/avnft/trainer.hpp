#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "avnft/model.hpp"
#include "avnft/objective.hpp"
#include "avnft/rewards.hpp"
#include "avnft/sampling.hpp"

namespace avnft {

/// Ablation ladder: the baseline collapses rewards into one shared scalar;
/// each later rung adds one mechanism on top of per-modality routing.
enum class TrainMode {
    SharedAdvantage,  // single advantage, no surgery, no region weights
    RoutingOnly,      // routed advantages only
    RoutingSurgery,   // routing + partial stop-gradient on A2V keys/values
    OmniNft,          // routing + surgery + region-weighted video loss
};

std::string mode_name(TrainMode mode);
TrainMode parse_mode(const std::string& name);
bool mode_is_shared(TrainMode mode);
bool mode_uses_surgery(TrainMode mode);
bool mode_uses_region_weights(TrainMode mode);

struct TrainConfig {
    int iterations = 50;
    int prompts_per_iter = 2;
    int group_size = 8;
    int minibatch = 8;
    double lr = 1e-3;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    NftConfig nft;
    std::vector<double> eta = {0.9};  // old-policy blend per iteration; last value repeats
    std::uint64_t master_seed = 1;
    SamplerConfig sampler;  // seed field is re-derived from master_seed per iteration
    TrainMode mode = TrainMode::OmniNft;
    int corpus_size = 2;         // distinct prompts cycled across iterations
    double conflict_eps = 0.0;   // reward contamination magnitude (ablations)
    bool profile_gradients = false;

    double eta_at(int iteration) const;
    void validate() const;
};

/// One sampled rollout ready for optimization.
struct BufferEntry {
    int prompt = 0;
    LatentPair x0;
    double r_video = 0.5;   // optimality probabilities in [0,1]
    double r_audio = 0.5;
    RegionWeights weights;  // uniform unless region reweighting is active
    int iteration = 0;
};

struct SamplingResult {
    std::vector<BufferEntry> entries;
    std::vector<RewardVector> clean_rewards;  // pre-contamination, metrics only
    std::vector<std::pair<double, double>> advantage_pairs;  // per-stream (A_v, A_a)
    double conflict_rate = 0.0;  // fraction with sign(A_v) != sign(A_a)
};

struct TrainStats {
    double video_loss = 0.0;  // means over optimized elements
    double audio_loss = 0.0;
    int steps = 0;            // optimizer steps taken
};

struct IterationMetrics {
    int iteration = 0;
    double wall_seconds = 0.0;
    double mean_r_video = 0.0, std_r_video = 0.0;
    double mean_r_audio = 0.0, std_r_audio = 0.0;
    double mean_r_sync = 0.0, std_r_sync = 0.0;
    double video_loss = 0.0, audio_loss = 0.0;
    double conflict_rate = 0.0;
    bool has_grad_norms = false;
    GradNormTable grad_norms;
};

/// Adaptive moment optimizer with bias correction, state keyed by
/// parameter name.
class Adam {
public:
    Adam(double lr, double beta1, double beta2, double eps);
    void step(DualStreamPolicy& policy, const Gradients& grads);

private:
    double lr_, beta1_, beta2_, eps_;
    long t_ = 0;
    std::map<std::string, std::vector<double>> m_, v_;
};

/// theta_old <- eta * theta_old + (1 - eta) * theta, elementwise.
void ema_update(DualStreamPolicy& old_policy, const DualStreamPolicy& policy, double eta);

/// Two-stage online loop: the frozen policy samples groups into a buffer,
/// the training policy is optimized against the sign-aware objective, and
/// the frozen policy trails it by exponential moving average. The buffer
/// lives for exactly one iteration.
class Trainer {
public:
    Trainer(const ModelConfig& model, const TrainConfig& config);

    SamplingResult sampling_stage(int iteration);
    TrainStats training_stage(const std::vector<BufferEntry>& buffer, int iteration);
    IterationMetrics run_iteration(int iteration);
    std::vector<IterationMetrics> run(
        const std::function<void(const IterationMetrics&)>& on_iteration = {});

    DualStreamPolicy& policy() { return policy_; }
    DualStreamPolicy& old_policy() { return old_policy_; }
    const ModelConfig& model_config() const { return model_; }
    const TrainConfig& train_config() const { return config_; }
    const std::vector<PromptSpec>& corpus() const { return corpus_; }

private:
    const PromptSpec& prompt_for(int iteration, int slot) const;

    ModelConfig model_;
    TrainConfig config_;
    DualStreamPolicy policy_;
    DualStreamPolicy old_policy_;
    std::vector<PromptSpec> corpus_;
    Adam adam_;
};

}  // namespace avnft
