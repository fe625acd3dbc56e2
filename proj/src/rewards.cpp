#include "avnft/rewards.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "avnft/rng.hpp"

namespace avnft {

void PromptSpec::validate(const ModelConfig& cfg) const {
    if (id < 0 || id >= cfg.prompt_vocab)
        throw std::invalid_argument("prompt " + std::to_string(id) + ": id outside vocab of " +
                                    std::to_string(cfg.prompt_vocab));
    if (video_target.rank() != 2 || video_target.rows() != cfg.n_video_tokens ||
        video_target.cols() != cfg.d_model || audio_target.rows() != cfg.n_audio_tokens ||
        audio_target.cols() != cfg.d_model)
        throw std::invalid_argument("prompt " + std::to_string(id) + ": target shapes video " +
                                    shape_str(video_target.shape()) + " audio " +
                                    shape_str(audio_target.shape()) + " do not match config");
    if (sync_pairing.empty())
        throw std::invalid_argument("prompt " + std::to_string(id) + ": empty sync pairing");
    for (const auto& p : sync_pairing)
        if (p.first < 0 || p.first >= cfg.n_video_tokens || p.second < 0 ||
            p.second >= cfg.n_audio_tokens)
            throw std::invalid_argument("prompt " + std::to_string(id) + ": pair (" +
                                        std::to_string(p.first) + "," + std::to_string(p.second) +
                                        ") outside token ranges");
}

namespace {

double mean_squared_distance(const Tensor& x, const Tensor& target) {
    if (x.shape() != target.shape())
        throw std::invalid_argument("reward: latent " + shape_str(x.shape()) +
                                    " does not match target " + shape_str(target.shape()));
    double s = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        double d = x.data()[i] - target.data()[i];
        s += d * d;
    }
    return s / static_cast<double>(x.size());
}

double row_energy(const Tensor& x, int row) {
    double s = 0.0;
    for (int j = 0; j < x.cols(); ++j) s += x.at(row, j) * x.at(row, j);
    return std::sqrt(s);
}

double pearson(const std::vector<double>& a, const std::vector<double>& b) {
    const double n = static_cast<double>(a.size());
    double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
    double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
    double num = 0.0, va = 0.0, vb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        double da = a[i] - ma, db = b[i] - mb;
        num += da * db;
        va += da * da;
        vb += db * db;
    }
    constexpr double kFlat = 1e-18;  // constant sequences carry no sync signal
    if (va < kFlat || vb < kFlat) return 0.0;
    return num / std::sqrt(va * vb);
}

}  // namespace

double reward_video(const Tensor& x_video, const PromptSpec& spec) {
    return std::exp(-mean_squared_distance(x_video, spec.video_target));
}

double reward_audio(const Tensor& x_audio, const PromptSpec& spec) {
    return std::exp(-mean_squared_distance(x_audio, spec.audio_target));
}

double reward_sync(const Tensor& x_audio, const Tensor& x_video, const PromptSpec& spec) {
    if (spec.sync_pairing.size() < 2)
        throw std::invalid_argument("sync reward: needs >= 2 pairs, prompt " +
                                    std::to_string(spec.id) + " has " +
                                    std::to_string(spec.sync_pairing.size()));
    std::vector<double> ev, ea;
    for (const auto& p : spec.sync_pairing) {
        if (p.first >= x_video.rows() || p.second >= x_audio.rows())
            throw std::invalid_argument("sync reward: pair outside latent shapes");
        ev.push_back(row_energy(x_video, p.first));
        ea.push_back(row_energy(x_audio, p.second));
    }
    return pearson(ev, ea);
}

RewardVector evaluate_rewards(const LatentPair& x0, const PromptSpec& spec) {
    return RewardVector{reward_video(x0.video, spec), reward_audio(x0.audio, spec),
                        reward_sync(x0.audio, x0.video, spec)};
}

RewardVector inject_conflict(const RewardVector& r, double eps, std::uint64_t seed) {
    if (eps < 0.0)
        throw std::invalid_argument("conflict injection: eps " + std::to_string(eps) +
                                    " must be >= 0");
    if (eps == 0.0) return r;
    Rng rng(seed);
    double u = static_cast<double>(rng.sign());
    return RewardVector{r.video + eps * u, r.audio - eps * u, r.sync};
}

PromptSpec build_prompt(const ModelConfig& cfg, int id, std::uint64_t target_seed,
                        std::vector<std::pair<int, int>> pairing) {
    auto draw = [&](int rows, const char* tag) {
        Rng rng(seed_combine({target_seed, tag64(tag)}));
        std::vector<double> d(static_cast<std::size_t>(rows) * cfg.d_model);
        for (double& x : d) x = rng.normal();
        return Tensor::from({rows, cfg.d_model}, std::move(d));
    };
    PromptSpec spec;
    spec.id = id;
    spec.target_seed = target_seed;
    spec.video_target = draw(cfg.n_video_tokens, "video-target");
    spec.audio_target = draw(cfg.n_audio_tokens, "audio-target");
    spec.sync_pairing = std::move(pairing);
    // align paired energies so the target configuration scores sync = 1
    for (const auto& p : spec.sync_pairing) {
        double want = row_energy(spec.video_target, p.first);
        double have = std::max(row_energy(spec.audio_target, p.second), 1e-12);
        double factor = want / have;
        for (int j = 0; j < cfg.d_model; ++j)
            spec.audio_target.mutable_data()[static_cast<std::size_t>(p.second) * cfg.d_model + j] *=
                factor;
    }
    spec.validate(cfg);
    return spec;
}

PromptSpec make_prompt(const ModelConfig& cfg, int id, std::uint64_t target_seed) {
    Rng rng(seed_combine({target_seed, tag64("pairing")}));
    std::vector<int> vids(static_cast<std::size_t>(cfg.n_video_tokens));
    std::vector<int> aids(static_cast<std::size_t>(cfg.n_audio_tokens));
    std::iota(vids.begin(), vids.end(), 0);
    std::iota(aids.begin(), aids.end(), 0);
    rng.shuffle(vids);
    rng.shuffle(aids);
    int pairs = std::min(cfg.n_video_tokens, cfg.n_audio_tokens);
    std::vector<std::pair<int, int>> pairing;
    for (int p = 0; p < pairs; ++p) pairing.push_back({vids[p], aids[p]});
    return build_prompt(cfg, id, target_seed, std::move(pairing));
}

std::vector<PromptSpec> make_corpus(const ModelConfig& cfg, int count, std::uint64_t seed) {
    if (count < 1 || count > cfg.prompt_vocab)
        throw std::invalid_argument("corpus: count " + std::to_string(count) +
                                    " outside [1, prompt_vocab=" +
                                    std::to_string(cfg.prompt_vocab) + "]");
    std::vector<PromptSpec> out;
    for (int id = 0; id < count; ++id)
        out.push_back(make_prompt(cfg, id, seed_combine({seed, tag64("prompt"),
                                                         static_cast<std::uint64_t>(id)})));
    return out;
}

void save_corpus(const std::vector<PromptSpec>& corpus, const std::string& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("corpus: cannot open for writing: " + path);
    out << "avnft-prompts v1\n";
    for (const PromptSpec& spec : corpus) {
        out << "prompt " << spec.id << " seed " << spec.target_seed << " pairs ";
        for (std::size_t i = 0; i < spec.sync_pairing.size(); ++i)
            out << (i ? "," : "") << spec.sync_pairing[i].first << ":"
                << spec.sync_pairing[i].second;
        out << "\n";
    }
    out.flush();
    if (!out) throw std::runtime_error("corpus: write failed: " + path);
}

std::vector<PromptSpec> load_corpus(const ModelConfig& cfg, const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("corpus: cannot open: " + path);
    std::string line;
    if (!std::getline(in, line) || line != "avnft-prompts v1")
        throw std::runtime_error("corpus: bad header in " + path);
    std::vector<PromptSpec> out;
    int lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::istringstream is(line);
        std::string kw_prompt, kw_seed, kw_pairs, pairs_text;
        int id;
        std::uint64_t seed;
        if (!(is >> kw_prompt >> id >> kw_seed >> seed >> kw_pairs >> pairs_text) ||
            kw_prompt != "prompt" || kw_seed != "seed" || kw_pairs != "pairs")
            throw std::runtime_error("corpus: malformed line " + std::to_string(lineno) + ": " +
                                     line);
        std::vector<std::pair<int, int>> pairing;
        std::istringstream ps(pairs_text);
        std::string pair_text;
        while (std::getline(ps, pair_text, ',')) {
            std::size_t colon = pair_text.find(':');
            if (colon == std::string::npos)
                throw std::runtime_error("corpus: malformed pair on line " +
                                         std::to_string(lineno) + ": " + pair_text);
            pairing.push_back({std::stoi(pair_text.substr(0, colon)),
                               std::stoi(pair_text.substr(colon + 1))});
        }
        out.push_back(build_prompt(cfg, id, seed, std::move(pairing)));
    }
    if (out.empty()) throw std::runtime_error("corpus: no prompts in " + path);
    return out;
}

}  // namespace avnft
