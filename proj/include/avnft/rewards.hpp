#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "avnft/model.hpp"
#include "avnft/sampling.hpp"
#include "avnft/tensor.hpp"

namespace avnft {

/// Toy semantics of one prompt: per-stream target latents plus the token
/// pairs whose energies are supposed to move together. Targets are a pure
/// function of (config, target_seed, pairing), so a corpus file only needs
/// to store ids, seeds, and pairings.
struct PromptSpec {
    int id = 0;
    std::uint64_t target_seed = 0;
    Tensor video_target;  // [n_video_tokens x d_model]
    Tensor audio_target;  // [n_audio_tokens x d_model]
    std::vector<std::pair<int, int>> sync_pairing;  // (video token, audio token)

    void validate(const ModelConfig& cfg) const;
};

struct RewardVector {
    double video = 0.0;
    double audio = 0.0;
    double sync = 0.0;
};

/// exp(-squared distance to target / token count / width), in (0, 1].
double reward_video(const Tensor& x_video, const PromptSpec& spec);
double reward_audio(const Tensor& x_audio, const PromptSpec& spec);

/// Pearson correlation between the per-token L2 energies of the paired
/// tokens; zero when either energy sequence is constant. Needs >= 2 pairs.
double reward_sync(const Tensor& x_audio, const Tensor& x_video, const PromptSpec& spec);

RewardVector evaluate_rewards(const LatentPair& x0, const PromptSpec& spec);

/// Anti-correlated contamination: adds +eps*u to the video reward and
/// -eps*u to the audio reward, u a symmetric sign, so their sum is kept.
RewardVector inject_conflict(const RewardVector& r, double eps, std::uint64_t seed);

/// Deterministic prompt construction. Paired audio target rows are rescaled
/// to the energy of their video partners, so the target itself scores a
/// sync of one and all three rewards pull in a consistent direction.
PromptSpec build_prompt(const ModelConfig& cfg, int id, std::uint64_t target_seed,
                        std::vector<std::pair<int, int>> pairing);
PromptSpec make_prompt(const ModelConfig& cfg, int id, std::uint64_t target_seed);
std::vector<PromptSpec> make_corpus(const ModelConfig& cfg, int count, std::uint64_t seed);

/// Plain-text corpus: one "prompt <id> seed <seed> pairs v:a,v:a,..." line
/// per prompt; targets are regenerated from the seeds on load.
void save_corpus(const std::vector<PromptSpec>& corpus, const std::string& path);
std::vector<PromptSpec> load_corpus(const ModelConfig& cfg, const std::string& path);

}  // namespace avnft
