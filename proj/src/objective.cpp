#include "avnft/objective.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

namespace avnft {

void NftConfig::validate() const {
    if (!(beta >= 0.0))
        throw std::invalid_argument("nft config: beta " + std::to_string(beta) +
                                    " must be >= 0");
    if (!(lambda >= 0.0))
        throw std::invalid_argument("nft config: lambda " + std::to_string(lambda) +
                                    " must be >= 0");
    if (!(z_floor > 0.0))
        throw std::invalid_argument("nft config: z floor must be positive");
    if (!(clip_lo < clip_hi))
        throw std::invalid_argument("nft config: clip range [" + std::to_string(clip_lo) + ", " +
                                    std::to_string(clip_hi) + "] is empty");
}

double RegionWeights::sum() const {
    return std::accumulate(weight.begin(), weight.end(), 0.0);
}

std::vector<double> group_advantages(const std::vector<double>& raw, double z_floor) {
    if (raw.empty()) throw std::invalid_argument("group advantages: empty group");
    const double n = static_cast<double>(raw.size());
    const double mean = std::accumulate(raw.begin(), raw.end(), 0.0) / n;
    double var = 0.0;
    for (double x : raw) var += (x - mean) * (x - mean);
    const double denom = std::max(std::sqrt(var / n), z_floor);
    std::vector<double> out(raw.size());
    for (std::size_t j = 0; j < raw.size(); ++j) out[j] = (raw[j] - mean) / denom;
    return out;
}

RoutedPair route_advantages(const std::vector<double>& a_video,
                            const std::vector<double>& a_audio,
                            const std::vector<double>& a_sync) {
    if (a_video.size() != a_audio.size() || a_video.size() != a_sync.size())
        throw std::invalid_argument("route advantages: lengths " +
                                    std::to_string(a_video.size()) + "/" +
                                    std::to_string(a_audio.size()) + "/" +
                                    std::to_string(a_sync.size()) + " differ");
    RoutedPair out;
    out.video.resize(a_video.size());
    out.audio.resize(a_video.size());
    for (std::size_t j = 0; j < a_video.size(); ++j) {
        out.video[j] = a_video[j] + a_sync[j];
        out.audio[j] = a_audio[j] + a_sync[j];
    }
    return out;
}

std::vector<double> shared_advantage(const std::vector<double>& r_video,
                                     const std::vector<double>& r_audio,
                                     const std::vector<double>& r_sync, double z_floor) {
    if (r_video.size() != r_audio.size() || r_video.size() != r_sync.size())
        throw std::invalid_argument("shared advantage: reward lists of unequal length");
    std::vector<double> sums(r_video.size());
    for (std::size_t j = 0; j < sums.size(); ++j)
        sums[j] = r_video[j] + r_audio[j] + r_sync[j];
    return group_advantages(sums, z_floor);
}

double optimality_probability(double a, double clip_lo, double clip_hi) {
    if (!std::isfinite(a))
        throw std::invalid_argument("optimality probability: non-finite advantage");
    return 0.5 + 0.5 * std::clamp(a, clip_lo, clip_hi);
}

AdvantageSet advantage_set(const std::vector<RewardVector>& rewards, const NftConfig& nft,
                           bool shared) {
    if (rewards.empty()) throw std::invalid_argument("advantage set: empty group");
    nft.validate();
    std::vector<double> rv, ra, rs;
    for (const RewardVector& r : rewards) {
        rv.push_back(r.video);
        ra.push_back(r.audio);
        rs.push_back(r.sync);
    }
    AdvantageSet out;
    if (shared) {
        std::vector<double> a = shared_advantage(rv, ra, rs, nft.z_floor);
        out.video = a;
        out.audio = a;
        out.sync.assign(a.size(), 0.0);
        out.routed_video = a;
        out.routed_audio = a;
    } else {
        out.video = group_advantages(rv, nft.z_floor);
        out.audio = group_advantages(ra, nft.z_floor);
        out.sync = group_advantages(rs, nft.z_floor);
        RoutedPair routed = route_advantages(out.video, out.audio, out.sync);
        out.routed_video = std::move(routed.video);
        out.routed_audio = std::move(routed.audio);
    }
    for (std::size_t j = 0; j < out.size(); ++j) {
        out.r_video.push_back(optimality_probability(out.routed_video[j], nft.clip_lo,
                                                     nft.clip_hi));
        out.r_audio.push_back(optimality_probability(out.routed_audio[j], nft.clip_lo,
                                                     nft.clip_hi));
    }
    return out;
}

std::pair<Tensor, Tensor> implicit_policies(const Tensor& v_old, const Tensor& v_train,
                                            double beta) {
    if (v_old.shape() != v_train.shape())
        throw std::invalid_argument("implicit policies: shapes " + shape_str(v_old.shape()) +
                                    " vs " + shape_str(v_train.shape()));
    Tensor plus = add(scale(v_old, 1.0 - beta), scale(v_train, beta));
    Tensor minus = sub(scale(v_old, 1.0 + beta), scale(v_train, beta));
    return {plus, minus};
}

RegionWeights region_weights(const AttentionCache& cache, double lambda) {
    if (cache.empty()) throw std::invalid_argument("region weights: empty attention cache");
    const int na = cache.n_audio, nv = cache.n_video;
    std::vector<double> s(static_cast<std::size_t>(nv), 0.0);
    for (const auto& [key, map] : cache.maps) {
        if (map.size() != static_cast<std::size_t>(na) * static_cast<std::size_t>(nv))
            throw std::invalid_argument("region weights: cached map has wrong size");
        for (int j = 0; j < na; ++j)
            for (int i = 0; i < nv; ++i)
                s[static_cast<std::size_t>(i)] += map[static_cast<std::size_t>(j) * nv + i];
    }
    for (double& x : s) x /= static_cast<double>(cache.maps.size());

    RegionWeights out;
    out.lambda = lambda;
    const auto [lo_it, hi_it] = std::minmax_element(s.begin(), s.end());
    const double lo = *lo_it, spread = *hi_it - *lo_it;
    out.weight.assign(s.size(), 1.0);
    if (spread >= 1e-9 && lambda != 0.0)
        for (std::size_t i = 0; i < s.size(); ++i)
            out.weight[i] = 1.0 + lambda * (s[i] - lo) / spread;
    return out;
}

namespace {

// r * |v_plus - v|^2 + (1-r) * |v_minus - v|^2 for one stream. The plain
// form is the per-token mean; the weighted form replaces the mean with a
// weighted sum over per-token squared errors, normalized by the weight sum.
Tensor stream_loss(const Tensor& v_old, const Tensor& v_train, const Tensor& v_target,
                   double r, double beta, const RegionWeights* weights) {
    auto [v_plus, v_minus] = implicit_policies(v_old, v_train, beta);
    auto term = [&](const Tensor& v_mix) {
        if (weights == nullptr)
            return scale(squared_error(v_mix, v_target), 1.0 / v_target.rows());
        if (static_cast<int>(weights->weight.size()) != v_target.rows())
            throw std::invalid_argument("region weights: " +
                                        std::to_string(weights->weight.size()) +
                                        " weights for " + std::to_string(v_target.rows()) +
                                        " tokens");
        Tensor diff = sub(v_mix, v_target);
        Tensor per_entry = mul(diff, diff);
        Tensor ones = Tensor::full({v_target.cols(), 1}, 1.0);
        Tensor per_token = matmul(per_entry, ones);  // [tokens x 1]
        Tensor wrow = Tensor::from({1, v_target.rows()}, weights->weight);
        return scale(sum_all(matmul(wrow, per_token)), 1.0 / weights->sum());
    };
    return add(scale(term(v_plus), r), scale(term(v_minus), 1.0 - r));
}

void check_loss_args(double r_video, double r_audio, double t) {
    if (!(r_video >= 0.0 && r_video <= 1.0) || !(r_audio >= 0.0 && r_audio <= 1.0))
        throw std::invalid_argument("branch loss: optimality probability outside [0,1]");
    if (!(t > 0.0 && t < 1.0))
        throw std::invalid_argument("branch loss: t " + std::to_string(t) +
                                    " outside (0,1)");
}

}  // namespace

BranchLosses nft_losses(const DualStreamPolicy& policy, const DualStreamPolicy& old_policy,
                        const LatentPair& x0, const LatentPair& x1, double t, int prompt,
                        double r_video, double r_audio, const NftConfig& nft,
                        const RegionWeights* weights, const SurgeryConfig& surgery,
                        const DetachAnchors* anchors) {
    check_loss_args(r_video, r_audio, t);
    nft.validate();
    LatentPair xt = interpolate(x0, x1, t);
    LatentPair v = velocity_target(x0, x1);
    ForwardResult train = policy.forward(xt.audio, xt.video, t, prompt, surgery,
                                         BlockMask::none(), false, 0, anchors);
    ForwardResult old = old_policy.forward(xt.audio, xt.video, t, prompt);
    BranchLosses out;
    out.video = stream_loss(old.velocity_video, train.velocity_video, v.video, r_video,
                            nft.beta, weights);
    out.audio = stream_loss(old.velocity_audio, train.velocity_audio, v.audio, r_audio,
                            nft.beta, nullptr);
    return out;
}

Tensor nft_branch_loss(const DualStreamPolicy& policy, const DualStreamPolicy& old_policy,
                       const LatentPair& x0, const LatentPair& x1, double t, int prompt,
                       double r, Branch branch, const NftConfig& nft,
                       const RegionWeights* weights, const SurgeryConfig& surgery,
                       const DetachAnchors* anchors) {
    BranchLosses both = nft_losses(policy, old_policy, x0, x1, t, prompt, r, r, nft, weights,
                                   surgery, anchors);
    return branch == Branch::Video ? both.video : both.audio;
}

Tensor total_loss(const Tensor& video_branch, const Tensor& audio_branch) {
    return add(video_branch, audio_branch);
}

}  // namespace avnft
