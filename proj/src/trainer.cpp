#include "avnft/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "avnft/errors.hpp"
#include "avnft/rng.hpp"

namespace avnft {

std::string mode_name(TrainMode mode) {
    switch (mode) {
        case TrainMode::SharedAdvantage: return "shared-advantage";
        case TrainMode::RoutingOnly: return "routing-only";
        case TrainMode::RoutingSurgery: return "routing-surgery";
        case TrainMode::OmniNft: return "omninft";
    }
    throw std::invalid_argument("mode: unknown enum value");
}

TrainMode parse_mode(const std::string& name) {
    if (name == "shared-advantage") return TrainMode::SharedAdvantage;
    if (name == "routing-only") return TrainMode::RoutingOnly;
    if (name == "routing-surgery") return TrainMode::RoutingSurgery;
    if (name == "omninft") return TrainMode::OmniNft;
    throw std::invalid_argument(
        "mode: unknown name '" + name +
        "', expected omninft | shared-advantage | routing-only | routing-surgery");
}

bool mode_is_shared(TrainMode mode) { return mode == TrainMode::SharedAdvantage; }

bool mode_uses_surgery(TrainMode mode) {
    return mode == TrainMode::RoutingSurgery || mode == TrainMode::OmniNft;
}

bool mode_uses_region_weights(TrainMode mode) { return mode == TrainMode::OmniNft; }

double TrainConfig::eta_at(int iteration) const {
    if (eta.empty()) throw std::invalid_argument("train config: empty eta schedule");
    std::size_t i = std::min<std::size_t>(static_cast<std::size_t>(std::max(iteration, 0)),
                                          eta.size() - 1);
    return eta[i];
}

void TrainConfig::validate() const {
    if (iterations < 0) throw std::invalid_argument("train config: negative iterations");
    if (prompts_per_iter < 1)
        throw std::invalid_argument("train config: prompts_per_iter must be >= 1");
    if (group_size < 2) throw std::invalid_argument("train config: group_size must be >= 2");
    if (minibatch < 1) throw std::invalid_argument("train config: minibatch must be >= 1");
    if (!(lr >= 0.0)) throw std::invalid_argument("train config: negative learning rate");
    if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0) || !(adam_beta2 >= 0.0 && adam_beta2 < 1.0))
        throw std::invalid_argument("train config: moment coefficients must lie in [0,1)");
    if (!(adam_eps > 0.0)) throw std::invalid_argument("train config: adam_eps must be positive");
    if (eta.empty()) throw std::invalid_argument("train config: empty eta schedule");
    for (double e : eta)
        if (!(e >= 0.0 && e <= 1.0))
            throw std::invalid_argument("train config: eta " + std::to_string(e) +
                                        " outside [0,1]");
    if (corpus_size < 1) throw std::invalid_argument("train config: corpus_size must be >= 1");
    if (!(conflict_eps >= 0.0))
        throw std::invalid_argument("train config: negative conflict_eps");
    nft.validate();
    sampler.validate();
}

Adam::Adam(double lr, double beta1, double beta2, double eps)
    : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

void Adam::step(DualStreamPolicy& policy, const Gradients& grads) {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (const std::string& name : policy.param_names()) {
        Tensor& p = policy.param(name);
        std::vector<double> g = grads.of(p);
        std::vector<double>& m = m_[name];
        std::vector<double>& v = v_[name];
        if (m.empty()) {
            m.assign(p.size(), 0.0);
            v.assign(p.size(), 0.0);
        }
        std::vector<double>& data = p.mutable_data();
        for (std::size_t i = 0; i < data.size(); ++i) {
            m[i] = beta1_ * m[i] + (1.0 - beta1_) * g[i];
            v[i] = beta2_ * v[i] + (1.0 - beta2_) * g[i] * g[i];
            data[i] -= lr_ * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + eps_);
        }
    }
}

void ema_update(DualStreamPolicy& old_policy, const DualStreamPolicy& policy, double eta) {
    if (!(eta >= 0.0 && eta <= 1.0))
        throw std::invalid_argument("ema: eta " + std::to_string(eta) + " outside [0,1]");
    if (old_policy.param_names() != policy.param_names())
        throw std::invalid_argument("ema: parameter sets differ");
    for (const std::string& name : old_policy.param_names()) {
        std::vector<double>& o = old_policy.param(name).mutable_data();
        const std::vector<double>& c = policy.param(name).data();
        if (o.size() != c.size())
            throw std::invalid_argument("ema: size mismatch for " + name);
        for (std::size_t i = 0; i < o.size(); ++i) o[i] = eta * o[i] + (1.0 - eta) * c[i];
    }
}

Trainer::Trainer(const ModelConfig& model, const TrainConfig& config)
    : model_(model),
      config_(config),
      policy_(model, seed_combine({config.master_seed, tag64("init")})),
      old_policy_(model, seed_combine({config.master_seed, tag64("init")})),
      corpus_(make_corpus(model, config.corpus_size,
                          seed_combine({config.master_seed, tag64("corpus")}))),
      adam_(config.lr, config.adam_beta1, config.adam_beta2, config.adam_eps) {
    model_.validate();
    config_.validate();
}

const PromptSpec& Trainer::prompt_for(int iteration, int slot) const {
    std::size_t index =
        (static_cast<std::size_t>(iteration) * static_cast<std::size_t>(config_.prompts_per_iter) +
         static_cast<std::size_t>(slot)) %
        corpus_.size();
    return corpus_[index];
}

SamplingResult Trainer::sampling_stage(int iteration) {
    SamplingResult out;
    const NftConfig& nft = config_.nft;
    for (int slot = 0; slot < config_.prompts_per_iter; ++slot) {
        const PromptSpec& spec = prompt_for(iteration, slot);
        try {
            SamplerConfig sampler = config_.sampler;
            sampler.seed = seed_combine({config_.master_seed, tag64("sample"),
                                         static_cast<std::uint64_t>(iteration),
                                         static_cast<std::uint64_t>(slot)});
            std::vector<Rollout> rollouts =
                rollout_group(old_policy_, spec.id, config_.group_size, sampler);

            std::vector<RewardVector> clean, noisy;
            for (std::size_t j = 0; j < rollouts.size(); ++j) {
                RewardVector r = evaluate_rewards(rollouts[j].x0_pred, spec);
                clean.push_back(r);
                noisy.push_back(inject_conflict(
                    r, config_.conflict_eps,
                    seed_combine({config_.master_seed, tag64("conflict"),
                                  static_cast<std::uint64_t>(iteration),
                                  static_cast<std::uint64_t>(slot), j})));
            }
            AdvantageSet set = advantage_set(noisy, nft, mode_is_shared(config_.mode));

            // stream-wise advantages feed the conflict diagnostic in every mode
            std::vector<double> rv, ra;
            for (const RewardVector& r : noisy) {
                rv.push_back(r.video);
                ra.push_back(r.audio);
            }
            std::vector<double> av = group_advantages(rv, nft.z_floor);
            std::vector<double> aa = group_advantages(ra, nft.z_floor);

            for (std::size_t j = 0; j < rollouts.size(); ++j) {
                BufferEntry e;
                e.prompt = spec.id;
                e.x0 = rollouts[j].x0_pred;
                e.r_video = set.r_video[j];
                e.r_audio = set.r_audio[j];
                if (mode_uses_region_weights(config_.mode)) {
                    e.weights = region_weights(rollouts[j].cache, nft.lambda);
                } else {
                    e.weights.lambda = 0.0;
                    e.weights.weight.assign(static_cast<std::size_t>(model_.n_video_tokens),
                                            1.0);
                }
                e.iteration = iteration;
                out.entries.push_back(std::move(e));
                out.clean_rewards.push_back(clean[j]);
                out.advantage_pairs.push_back({av[j], aa[j]});
            }
        } catch (const std::exception& err) {
            throw std::runtime_error("sampling: iteration " + std::to_string(iteration) +
                                     ", prompt " + std::to_string(spec.id) + ": " + err.what());
        }
    }
    int conflicts = 0;
    for (const auto& [av, aa] : out.advantage_pairs)
        if (av * aa < 0.0) ++conflicts;
    out.conflict_rate = out.advantage_pairs.empty()
                            ? 0.0
                            : static_cast<double>(conflicts) /
                                  static_cast<double>(out.advantage_pairs.size());
    return out;
}

TrainStats Trainer::training_stage(const std::vector<BufferEntry>& buffer, int iteration) {
    if (buffer.empty()) throw std::invalid_argument("training: empty buffer");
    const SurgeryConfig surgery =
        mode_uses_surgery(config_.mode) ? SurgeryConfig::from(model_) : SurgeryConfig::off();

    std::vector<std::size_t> order(buffer.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng shuffle_rng(seed_combine({config_.master_seed, tag64("shuffle"),
                                  static_cast<std::uint64_t>(iteration)}));
    shuffle_rng.shuffle(order);
    Rng t_rng(seed_combine({config_.master_seed, tag64("train-t"),
                            static_cast<std::uint64_t>(iteration)}));

    TrainStats stats;
    double video_sum = 0.0, audio_sum = 0.0;
    int count = 0;
    const std::size_t batch = static_cast<std::size_t>(config_.minibatch);
    for (std::size_t start = 0; start < order.size(); start += batch) {
        const std::size_t stop = std::min(start + batch, order.size());
        Tape tape;
        policy_.attach_all(tape);
        try {
            Tensor batch_loss;
            for (std::size_t k = start; k < stop; ++k) {
                const BufferEntry& e = buffer[order[k]];
                const double t = t_rng.uniform(0.001, 0.999);
                LatentPair x1 = gaussian_prior(
                    model_, seed_combine({config_.master_seed, tag64("train-prior"),
                                          static_cast<std::uint64_t>(iteration), k}));
                BranchLosses bl = nft_losses(policy_, old_policy_, e.x0, x1, t, e.prompt,
                                             e.r_video, e.r_audio, config_.nft, &e.weights,
                                             surgery, nullptr);
                const double lv = bl.video.data()[0], la = bl.audio.data()[0];
                if (!std::isfinite(lv) || !std::isfinite(la))
                    throw NumericError(
                        "non-finite loss on entry from iteration " +
                        std::to_string(e.iteration) + ", prompt " + std::to_string(e.prompt) +
                        ", buffer index " + std::to_string(order[k]));
                video_sum += lv;
                audio_sum += la;
                ++count;
                Tensor element = total_loss(bl.video, bl.audio);
                batch_loss = batch_loss.defined() ? add(batch_loss, element) : element;
            }
            Gradients grads =
                tape.backward(scale(batch_loss, 1.0 / static_cast<double>(stop - start)));
            adam_.step(policy_, grads);
            policy_.detach_all();
        } catch (const NumericError& err) {
            policy_.detach_all();
            throw NumericError("training: iteration " + std::to_string(iteration) + ": " +
                               err.what());
        } catch (const std::exception& err) {
            policy_.detach_all();
            throw std::runtime_error("training: iteration " + std::to_string(iteration) + ": " +
                                     err.what());
        }
        ++stats.steps;
    }
    stats.video_loss = video_sum / count;
    stats.audio_loss = audio_sum / count;
    return stats;
}

namespace {

void reward_stats(const std::vector<RewardVector>& rewards, IterationMetrics& m) {
    const double n = static_cast<double>(rewards.size());
    double mv = 0, ma = 0, ms = 0;
    for (const RewardVector& r : rewards) {
        mv += r.video;
        ma += r.audio;
        ms += r.sync;
    }
    mv /= n;
    ma /= n;
    ms /= n;
    double vv = 0, va = 0, vs = 0;
    for (const RewardVector& r : rewards) {
        vv += (r.video - mv) * (r.video - mv);
        va += (r.audio - ma) * (r.audio - ma);
        vs += (r.sync - ms) * (r.sync - ms);
    }
    m.mean_r_video = mv;
    m.std_r_video = std::sqrt(vv / n);
    m.mean_r_audio = ma;
    m.std_r_audio = std::sqrt(va / n);
    m.mean_r_sync = ms;
    m.std_r_sync = std::sqrt(vs / n);
}

}  // namespace

IterationMetrics Trainer::run_iteration(int iteration) {
    const auto started = std::chrono::steady_clock::now();
    IterationMetrics m;
    m.iteration = iteration;

    SamplingResult sampled = sampling_stage(iteration);
    reward_stats(sampled.clean_rewards, m);
    m.conflict_rate = sampled.conflict_rate;

    TrainStats stats = training_stage(sampled.entries, iteration);
    m.video_loss = stats.video_loss;
    m.audio_loss = stats.audio_loss;

    if (config_.profile_gradients) {
        const BufferEntry& probe = sampled.entries.front();
        const SurgeryConfig surgery =
            mode_uses_surgery(config_.mode) ? SurgeryConfig::from(model_) : SurgeryConfig::off();
        LatentPair x1 = gaussian_prior(
            model_, seed_combine({config_.master_seed, tag64("profile"),
                                  static_cast<std::uint64_t>(iteration)}));
        m.grad_norms = layer_grad_norms(policy_, [&](Tape&, DualStreamPolicy& p) {
            BranchLosses bl = nft_losses(p, old_policy_, probe.x0, x1, 0.5, probe.prompt,
                                         probe.r_video, probe.r_audio, config_.nft,
                                         &probe.weights, surgery, nullptr);
            return total_loss(bl.video, bl.audio);
        });
        m.has_grad_norms = true;
    }

    ema_update(old_policy_, policy_, config_.eta_at(iteration));
    // sampled.entries dies here: the buffer is cleared once per iteration,
    // after the old policy has blended toward the trained one

    m.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    return m;
}

std::vector<IterationMetrics> Trainer::run(
    const std::function<void(const IterationMetrics&)>& on_iteration) {
    std::vector<IterationMetrics> series;
    for (int i = 0; i < config_.iterations; ++i) {
        IterationMetrics m = run_iteration(i);
        series.push_back(m);
        if (on_iteration) on_iteration(m);
    }
    return series;
}

}  // namespace avnft
