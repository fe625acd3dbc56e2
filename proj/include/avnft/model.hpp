#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "avnft/tensor.hpp"

namespace avnft {

/// Architecture hyperparameters for the dual-stream velocity predictor.
/// Blocks below shallow_boundary count as "shallow": audio-to-video KV edges
/// there are partially detached when surgery is enabled; blocks at or above
/// the boundary are "deep" and also the source of cached attention maps.
struct ModelConfig {
    int blocks_audio = 6;
    int blocks_video = 6;
    int d_model = 32;
    int heads = 2;
    int n_audio_tokens = 8;
    int n_video_tokens = 16;
    int shallow_boundary = 2;   // L: first deep block index
    double detach_ratio = 0.1;  // alpha_s applied below the boundary
    int prompt_vocab = 16;

    void validate() const;  // throws std::invalid_argument on bad values
};

/// Partial-detach schedule: alpha_s on audio->video KV edges of shallow
/// blocks, zero elsewhere. Disabled means alpha = 0 everywhere.
struct SurgeryConfig {
    bool enabled = false;
    int shallow_boundary = 2;
    double alpha_s = 0.1;

    static SurgeryConfig off() { return SurgeryConfig{}; }
    static SurgeryConfig from(const ModelConfig& cfg) {
        return SurgeryConfig{true, cfg.shallow_boundary, cfg.detach_ratio};
    }
    double alpha_at(int block) const {
        return (enabled && block < shallow_boundary) ? alpha_s : 0.0;
    }
    void validate() const;
};

/// Disables the cross-attention sublayer of the listed blocks in one
/// direction; the residual branch passes through unchanged there.
struct BlockMask {
    enum class Direction { A2V, V2A };

    Direction direction = Direction::A2V;
    std::set<int> blocked;

    static BlockMask none() { return BlockMask{}; }
    static BlockMask all(Direction d, int blocks);
    bool covers(Direction d, int block) const {
        return d == direction && blocked.count(block) > 0;
    }
    void validate(const ModelConfig& cfg) const;
};

/// Head-averaged video-as-keys attention maps from the audio stream's cross
/// sublayer, keyed by (block, denoising step). Each row (one audio query)
/// is a softmax over the video tokens. Only deep blocks are recorded.
struct AttentionCache {
    std::map<std::pair<int, int>, std::vector<double>> maps;
    int n_audio = 0;
    int n_video = 0;

    bool empty() const { return maps.empty(); }
    void merge(const AttentionCache& other);
};

struct ForwardResult {
    Tensor velocity_audio;  // [n_audio_tokens x d_model]
    Tensor velocity_video;  // [n_video_tokens x d_model]
    AttentionCache cache;
};

/// Evaluation mode for derivative verification. partial_detach has a forward
/// value independent of alpha, so naive finite differences measure the
/// unscaled derivative; replaying with the stop-gradient branch frozen at
/// recorded base values yields the function the backward pass actually
/// differentiates. Record once at the base point, then replay per probe.
struct DetachAnchors {
    bool recording = true;
    mutable std::size_t cursor = 0;
    mutable std::vector<std::vector<double>> values;

    void rewind() const { cursor = 0; }
};

/// Two-stream transformer predicting per-token velocities for both
/// modalities. Each block runs pre-norm self-attention, cross-attention
/// against the other stream's block-entry hidden state, and a feed-forward
/// sublayer, all residual. Audio->video KV projections are the surgery site;
/// video-as-keys maps from the audio stream feed the attention cache.
class DualStreamPolicy {
public:
    DualStreamPolicy() = default;
    DualStreamPolicy(const ModelConfig& cfg, std::uint64_t seed);

    const ModelConfig& config() const { return cfg_; }
    /// canonical parameter order; identical for equal configs
    const std::vector<std::string>& param_names() const { return names_; }
    Tensor& param(const std::string& name);
    const Tensor& param(const std::string& name) const;
    std::size_t parameter_count() const;

    /// enumerated (name, shape) pairs for a config, in canonical order
    static std::vector<std::pair<std::string, std::vector<int>>> parameter_shapes(
        const ModelConfig& cfg);

    void attach_all(Tape& tape);
    void detach_all();

    ForwardResult forward(const Tensor& x_audio, const Tensor& x_video, double t, int prompt,
                          const SurgeryConfig& surgery = SurgeryConfig::off(),
                          const BlockMask& mask = BlockMask::none(), bool cache_attn = false,
                          int step_tag = 0, const DetachAnchors* anchors = nullptr) const;

private:
    Tensor layer_normed(const std::string& prefix, const Tensor& x) const;
    Tensor attention(const std::string& prefix, const Tensor& q_in, const Tensor& kv_in,
                     double alpha, const DetachAnchors* anchors,
                     std::vector<double>* avg_map) const;
    Tensor feed_forward(const std::string& prefix, const Tensor& x) const;

    ModelConfig cfg_;
    std::vector<std::string> names_;
    std::map<std::string, Tensor> params_;
};

DualStreamPolicy init_policy(const ModelConfig& cfg, std::uint64_t seed);

/// Scaled dot-product attention on already-projected matrices, with the KV
/// side partially detached: gradients into k and v are scaled by (1 - alpha)
/// while the forward value matches alpha = 0 bit-for-bit.
Tensor a2v_cross_attention(const Tensor& q, const Tensor& k, const Tensor& v, int heads,
                           double alpha);

// ---- layer-wise gradient profiling ---------------------------------------

/// One row of the gradient-norm table. Block-level paths are
/// self | cross_q | cross_kv | ff; stream-level groups (block = -1) are
/// embed | head, and the shared conditioning stack is ("shared", -1, "cond").
/// Together the rows partition every parameter exactly once.
struct GradNormRow {
    std::string stream;
    int block = -1;
    std::string path;
    double norm = 0.0;
};

struct GradNormTable {
    std::vector<GradNormRow> rows;
    double total = 0.0;
};

/// Classify a parameter name into its (stream, block, path) bucket.
GradNormRow grad_bucket_of(const std::string& name);

/// Runs loss_fn with all parameters attached to a fresh tape, then groups
/// backward gradient norms by (stream, block, path).
GradNormTable layer_grad_norms(
    DualStreamPolicy& policy,
    const std::function<Tensor(Tape&, DualStreamPolicy&)>& loss_fn);

// ---- checkpointing -------------------------------------------------------

/// Versioned binary container: config header plus named parameter blobs in
/// canonical order. save(load(p)) reproduces the file byte for byte.
void save_checkpoint(const DualStreamPolicy& policy, const std::string& path);
DualStreamPolicy load_checkpoint(const std::string& path);

}  // namespace avnft
