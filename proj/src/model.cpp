#include "avnft/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <tuple>

#include "avnft/rng.hpp"

namespace avnft {

// ---- configuration -------------------------------------------------------

void ModelConfig::validate() const {
    if (blocks_audio < 1 || blocks_video < 1 || d_model < 1 || heads < 1 ||
        n_audio_tokens < 1 || n_video_tokens < 1 || prompt_vocab < 1)
        throw std::invalid_argument("model config: all counts must be >= 1");
    if (blocks_audio != blocks_video)
        throw std::invalid_argument("model config: blocks_audio " + std::to_string(blocks_audio) +
                                    " != blocks_video " + std::to_string(blocks_video) +
                                    " (streams advance in lockstep)");
    if (d_model % heads != 0)
        throw std::invalid_argument("model config: d_model " + std::to_string(d_model) +
                                    " not divisible by heads " + std::to_string(heads));
    if (d_model % 2 != 0)
        throw std::invalid_argument("model config: d_model must be even (sin/cos timestep pairs)");
    if (shallow_boundary < 0 || shallow_boundary > std::min(blocks_audio, blocks_video))
        throw std::invalid_argument("model config: shallow_boundary " +
                                    std::to_string(shallow_boundary) + " outside [0, blocks]");
    if (!(detach_ratio >= 0.0 && detach_ratio <= 1.0))
        throw std::invalid_argument("model config: detach_ratio " + std::to_string(detach_ratio) +
                                    " outside [0,1]");
}

void SurgeryConfig::validate() const {
    if (!(alpha_s >= 0.0 && alpha_s <= 1.0))
        throw std::invalid_argument("surgery config: alpha_s " + std::to_string(alpha_s) +
                                    " outside [0,1]");
    if (shallow_boundary < 0)
        throw std::invalid_argument("surgery config: negative shallow boundary");
}

BlockMask BlockMask::all(Direction d, int blocks) {
    BlockMask m;
    m.direction = d;
    for (int b = 0; b < blocks; ++b) m.blocked.insert(b);
    return m;
}

void BlockMask::validate(const ModelConfig& cfg) const {
    int limit = std::min(cfg.blocks_audio, cfg.blocks_video);
    for (int b : blocked)
        if (b < 0 || b >= limit)
            throw std::invalid_argument("block mask: index " + std::to_string(b) +
                                        " outside [0, " + std::to_string(limit) + ")");
}

void AttentionCache::merge(const AttentionCache& other) {
    if (n_audio == 0) {
        n_audio = other.n_audio;
        n_video = other.n_video;
    }
    for (const auto& kv : other.maps) maps[kv.first] = kv.second;
}

// ---- parameter registry --------------------------------------------------

std::vector<std::pair<std::string, std::vector<int>>> DualStreamPolicy::parameter_shapes(
    const ModelConfig& cfg) {
    cfg.validate();
    std::vector<std::pair<std::string, std::vector<int>>> out;
    const int d = cfg.d_model;
    const int f = 4 * d;
    auto ln = [&](const std::string& p) {
        out.push_back({p + ".g", {d}});
        out.push_back({p + ".b", {d}});
    };
    auto attn = [&](const std::string& p) {
        for (const char* w : {"wq", "wk", "wv", "wo"}) out.push_back({p + "." + w, {d, d}});
        for (const char* b : {"bq", "bk", "bv", "bo"}) out.push_back({p + "." + b, {d}});
    };
    auto stream = [&](const std::string& s, int blocks, int tokens) {
        out.push_back({s + ".in.w", {d, d}});
        out.push_back({s + ".in.b", {d}});
        out.push_back({s + ".pos", {tokens, d}});
        for (int b = 0; b < blocks; ++b) {
            std::string base = s + ".b" + std::to_string(b);
            ln(base + ".ln1");
            attn(base + ".self");
            ln(base + ".ln2");
            ln(base + ".lnkv");
            attn(base + ".cross");
            ln(base + ".ln3");
            out.push_back({base + ".ff.w1", {d, f}});
            out.push_back({base + ".ff.b1", {f}});
            out.push_back({base + ".ff.w2", {f, d}});
            out.push_back({base + ".ff.b2", {d}});
        }
        ln(s + ".out_ln");
        out.push_back({s + ".out.w", {d, d}});
        out.push_back({s + ".out.b", {d}});
    };
    stream("audio", cfg.blocks_audio, cfg.n_audio_tokens);
    stream("video", cfg.blocks_video, cfg.n_video_tokens);
    out.push_back({"time.w1", {d, d}});
    out.push_back({"time.b1", {d}});
    out.push_back({"time.w2", {d, d}});
    out.push_back({"time.b2", {d}});
    out.push_back({"prompt.table", {cfg.prompt_vocab, d}});
    return out;
}

namespace {

std::size_t numel_of(const std::vector<int>& shape) {
    std::size_t n = 1;
    for (int d : shape) n *= static_cast<std::size_t>(d);
    return n;
}

// Initialization is keyed by parameter name, not draw order, so adding or
// reordering parameters never silently changes unrelated weights.
Tensor init_param(const std::string& name, const std::vector<int>& shape, std::uint64_t seed) {
    std::string last = name.substr(name.rfind('.') + 1);
    // zero output projections: the initial velocity field is exactly zero,
    // which keeps the first sampling stages well-behaved
    if (name == "audio.out.w" || name == "video.out.w") return Tensor::zeros(shape);
    if (last == "g") return Tensor::full(shape, 1.0);
    if (last[0] == 'b') return Tensor::zeros(shape);
    int fan_in = (last == "pos" || last == "table") ? shape.back() : shape.front();
    double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    Rng rng(seed_combine({seed, tag64(name.c_str())}));
    std::vector<double> data(numel_of(shape));
    for (double& x : data) x = rng.uniform(-bound, bound);
    return Tensor::from(shape, std::move(data));
}

}  // namespace

DualStreamPolicy::DualStreamPolicy(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    for (const auto& entry : parameter_shapes(cfg)) {
        names_.push_back(entry.first);
        params_[entry.first] = init_param(entry.first, entry.second, seed);
    }
}

DualStreamPolicy init_policy(const ModelConfig& cfg, std::uint64_t seed) {
    return DualStreamPolicy(cfg, seed);
}

Tensor& DualStreamPolicy::param(const std::string& name) {
    auto it = params_.find(name);
    if (it == params_.end())
        throw std::invalid_argument("policy: unknown parameter " + name);
    return it->second;
}

const Tensor& DualStreamPolicy::param(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end())
        throw std::invalid_argument("policy: unknown parameter " + name);
    return it->second;
}

std::size_t DualStreamPolicy::parameter_count() const {
    std::size_t n = 0;
    for (const auto& kv : params_) n += kv.second.size();
    return n;
}

void DualStreamPolicy::attach_all(Tape& tape) {
    for (const std::string& n : names_) params_[n].attach(tape);
}

void DualStreamPolicy::detach_all() {
    for (const std::string& n : names_) params_[n].detach();
}

// ---- forward pass --------------------------------------------------------

namespace {

// sin/cos features over a geometric frequency ladder from 1 to 1000
Tensor time_features(double t, int d) {
    std::vector<double> f(static_cast<std::size_t>(d));
    int half = d / 2;
    for (int k = 0; k < half; ++k) {
        double freq = std::pow(1000.0, half > 1 ? static_cast<double>(k) / (half - 1) : 0.0);
        f[2 * k] = std::sin(t * freq);
        f[2 * k + 1] = std::cos(t * freq);
    }
    return Tensor::from({1, d}, std::move(f));
}

// Replaces partial_detach during derivative verification: the stop-gradient
// branch is held at values recorded at the base point, so finite differences
// see exactly the function the backward pass differentiates.
Tensor anchored_detach(const Tensor& x, double alpha, const DetachAnchors* anchors) {
    if (alpha <= 0.0) return x;
    if (anchors == nullptr || anchors->recording) {
        if (anchors) {
            anchors->values.push_back(x.data());
            ++anchors->cursor;
        }
        return partial_detach(x, alpha);
    }
    if (anchors->cursor >= anchors->values.size())
        throw std::logic_error("detach anchors: replay past the recorded sequence");
    Tensor frozen = Tensor::from(x.shape(), anchors->values[anchors->cursor++]);
    return add(scale(frozen, alpha), scale(x, 1.0 - alpha));
}

Tensor multihead_core(const Tensor& q, const Tensor& k, const Tensor& v, int heads,
                      std::vector<double>* avg_map) {
    if (q.rank() != 2 || k.rank() != 2 || v.rank() != 2 || k.cols() != q.cols() ||
        v.cols() != q.cols() || k.rows() != v.rows())
        throw std::invalid_argument("attention: incompatible shapes q" + shape_str(q.shape()) +
                                    " k" + shape_str(k.shape()) + " v" + shape_str(v.shape()));
    int d = q.cols();
    if (heads < 1 || d % heads != 0)
        throw std::invalid_argument("attention: width " + std::to_string(d) +
                                    " not divisible by " + std::to_string(heads) + " heads");
    int dh = d / heads;
    double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
    if (avg_map) avg_map->assign(static_cast<std::size_t>(q.rows()) * k.rows(), 0.0);
    std::vector<Tensor> outs;
    for (int h = 0; h < heads; ++h) {
        Tensor qh = heads == 1 ? q : slice(q, 0, q.rows(), h * dh, (h + 1) * dh);
        Tensor kh = heads == 1 ? k : slice(k, 0, k.rows(), h * dh, (h + 1) * dh);
        Tensor vh = heads == 1 ? v : slice(v, 0, v.rows(), h * dh, (h + 1) * dh);
        Tensor attn = softmax_rows(scale(matmul(qh, transpose(kh)), inv_sqrt));
        if (avg_map)
            for (std::size_t i = 0; i < avg_map->size(); ++i)
                (*avg_map)[i] += attn.data()[i] / heads;
        outs.push_back(matmul(attn, vh));
    }
    return heads == 1 ? outs[0] : concat_cols(outs);
}

}  // namespace

Tensor a2v_cross_attention(const Tensor& q, const Tensor& k, const Tensor& v, int heads,
                           double alpha) {
    if (!(alpha >= 0.0 && alpha <= 1.0))
        throw std::invalid_argument("cross attention: alpha " + std::to_string(alpha) +
                                    " outside [0,1]");
    Tensor kk = alpha > 0.0 ? partial_detach(k, alpha) : k;
    Tensor vv = alpha > 0.0 ? partial_detach(v, alpha) : v;
    return multihead_core(q, kk, vv, heads, nullptr);
}

Tensor DualStreamPolicy::layer_normed(const std::string& prefix, const Tensor& x) const {
    return layer_norm(x, param(prefix + ".g"), param(prefix + ".b"));
}

Tensor DualStreamPolicy::attention(const std::string& prefix, const Tensor& q_in,
                                   const Tensor& kv_in, double alpha,
                                   const DetachAnchors* anchors,
                                   std::vector<double>* avg_map) const {
    Tensor q = add_rowvec(matmul(q_in, param(prefix + ".wq")), param(prefix + ".bq"));
    Tensor k = add_rowvec(matmul(kv_in, param(prefix + ".wk")), param(prefix + ".bk"));
    Tensor v = add_rowvec(matmul(kv_in, param(prefix + ".wv")), param(prefix + ".bv"));
    k = anchored_detach(k, alpha, anchors);
    v = anchored_detach(v, alpha, anchors);
    Tensor mixed = multihead_core(q, k, v, cfg_.heads, avg_map);
    return add_rowvec(matmul(mixed, param(prefix + ".wo")), param(prefix + ".bo"));
}

Tensor DualStreamPolicy::feed_forward(const std::string& prefix, const Tensor& x) const {
    Tensor h = tanh_op(add_rowvec(matmul(x, param(prefix + ".w1")), param(prefix + ".b1")));
    return add_rowvec(matmul(h, param(prefix + ".w2")), param(prefix + ".b2"));
}

ForwardResult DualStreamPolicy::forward(const Tensor& x_audio, const Tensor& x_video, double t,
                                        int prompt, const SurgeryConfig& surgery,
                                        const BlockMask& mask, bool cache_attn, int step_tag,
                                        const DetachAnchors* anchors) const {
    if (x_audio.rank() != 2 || x_audio.rows() != cfg_.n_audio_tokens ||
        x_audio.cols() != cfg_.d_model)
        throw std::invalid_argument("forward: audio latent " + shape_str(x_audio.shape()) +
                                    " does not match config [" +
                                    std::to_string(cfg_.n_audio_tokens) + "x" +
                                    std::to_string(cfg_.d_model) + "]");
    if (x_video.rank() != 2 || x_video.rows() != cfg_.n_video_tokens ||
        x_video.cols() != cfg_.d_model)
        throw std::invalid_argument("forward: video latent " + shape_str(x_video.shape()) +
                                    " does not match config [" +
                                    std::to_string(cfg_.n_video_tokens) + "x" +
                                    std::to_string(cfg_.d_model) + "]");
    if (!(t >= 0.0 && t <= 1.0))
        throw std::invalid_argument("forward: timestep " + std::to_string(t) + " outside [0,1]");
    if (prompt < 0 || prompt >= cfg_.prompt_vocab)
        throw std::invalid_argument("forward: prompt id " + std::to_string(prompt) +
                                    " outside vocab of " + std::to_string(cfg_.prompt_vocab));
    surgery.validate();
    mask.validate(cfg_);

    // shared conditioning: timestep MLP plus learned prompt embedding
    Tensor tf = time_features(t, cfg_.d_model);
    Tensor th = tanh_op(add_rowvec(matmul(tf, param("time.w1")), param("time.b1")));
    Tensor tvec = add_rowvec(matmul(th, param("time.w2")), param("time.b2"));
    Tensor pvec = embed_row(param("prompt.table"), prompt);

    auto lift = [&](const Tensor& x, const std::string& s) {
        Tensor h = add(add_rowvec(matmul(x, param(s + ".in.w")), param(s + ".in.b")),
                       param(s + ".pos"));
        return add_rowvec(add_rowvec(h, tvec), pvec);
    };
    Tensor h_a = lift(x_audio, "audio");
    Tensor h_v = lift(x_video, "video");

    ForwardResult out;
    out.cache.n_audio = cfg_.n_audio_tokens;
    out.cache.n_video = cfg_.n_video_tokens;

    for (int b = 0; b < cfg_.blocks_video; ++b) {
        const std::string vb = "video.b" + std::to_string(b);
        const std::string ab = "audio.b" + std::to_string(b);
        // cross-attention reads the other stream at block entry, so both
        // streams can advance in lockstep without ordering asymmetry
        Tensor snap_a = h_a;
        Tensor snap_v = h_v;

        Tensor nv = layer_normed(vb + ".ln1", h_v);
        h_v = add(h_v, attention(vb + ".self", nv, nv, 0.0, nullptr, nullptr));
        if (!mask.covers(BlockMask::Direction::A2V, b)) {
            Tensor q = layer_normed(vb + ".ln2", h_v);
            Tensor kv = layer_normed(vb + ".lnkv", snap_a);
            h_v = add(h_v, attention(vb + ".cross", q, kv, surgery.alpha_at(b), anchors, nullptr));
        }
        h_v = add(h_v, feed_forward(vb + ".ff", layer_normed(vb + ".ln3", h_v)));

        Tensor na = layer_normed(ab + ".ln1", h_a);
        h_a = add(h_a, attention(ab + ".self", na, na, 0.0, nullptr, nullptr));
        if (!mask.covers(BlockMask::Direction::V2A, b)) {
            Tensor q = layer_normed(ab + ".ln2", h_a);
            Tensor kv = layer_normed(ab + ".lnkv", snap_v);
            std::vector<double>* map_slot = nullptr;
            if (cache_attn && b >= cfg_.shallow_boundary)
                map_slot = &out.cache.maps[{b, step_tag}];
            h_a = add(h_a, attention(ab + ".cross", q, kv, 0.0, nullptr, map_slot));
        }
        h_a = add(h_a, feed_forward(ab + ".ff", layer_normed(ab + ".ln3", h_a)));
    }

    out.velocity_audio = add_rowvec(
        matmul(layer_normed("audio.out_ln", h_a), param("audio.out.w")), param("audio.out.b"));
    out.velocity_video = add_rowvec(
        matmul(layer_normed("video.out_ln", h_v), param("video.out.w")), param("video.out.b"));
    return out;
}

// ---- gradient profiling --------------------------------------------------

GradNormRow grad_bucket_of(const std::string& name) {
    GradNormRow row;
    if (name.rfind("time.", 0) == 0 || name == "prompt.table") {
        row.stream = "shared";
        row.path = "cond";
        return row;
    }
    std::size_t dot = name.find('.');
    row.stream = name.substr(0, dot);
    std::string rest = name.substr(dot + 1);
    if (rest.rfind("in.", 0) == 0 || rest == "pos") {
        row.path = "embed";
        return row;
    }
    if (rest.rfind("out", 0) == 0) {  // out.* and out_ln.*
        row.path = "head";
        return row;
    }
    std::size_t dot2 = rest.find('.');
    row.block = std::stoi(rest.substr(1, dot2 - 1));
    std::string sub = rest.substr(dot2 + 1);
    if (sub.rfind("ln1.", 0) == 0 || sub.rfind("self.", 0) == 0) {
        row.path = "self";
    } else if (sub.rfind("ln3.", 0) == 0 || sub.rfind("ff.", 0) == 0) {
        row.path = "ff";
    } else if (sub.rfind("lnkv.", 0) == 0) {
        row.path = "cross_kv";
    } else if (sub.rfind("cross.", 0) == 0) {
        std::string leaf = sub.substr(6);
        bool kv = leaf == "wk" || leaf == "bk" || leaf == "wv" || leaf == "bv";
        row.path = kv ? "cross_kv" : "cross_q";
    } else if (sub.rfind("ln2.", 0) == 0) {
        row.path = "cross_q";
    } else {
        throw std::invalid_argument("unrecognized parameter name: " + name);
    }
    return row;
}

GradNormTable layer_grad_norms(
    DualStreamPolicy& policy,
    const std::function<Tensor(Tape&, DualStreamPolicy&)>& loss_fn) {
    Tape tape;
    policy.attach_all(tape);
    GradNormTable table;
    try {
        Tensor loss = loss_fn(tape, policy);
        Gradients grads = tape.backward(loss);
        std::map<std::tuple<std::string, int, std::string>, double> acc;
        double total_sq = 0.0;
        for (const std::string& name : policy.param_names()) {
            GradNormRow bucket = grad_bucket_of(name);
            double n = grads.l2_norm(policy.param(name));
            acc[{bucket.stream, bucket.block, bucket.path}] += n * n;
            total_sq += n * n;
        }
        for (const auto& kv : acc)
            table.rows.push_back({std::get<0>(kv.first), std::get<1>(kv.first),
                                  std::get<2>(kv.first), std::sqrt(kv.second)});
        table.total = std::sqrt(total_sq);
    } catch (...) {
        policy.detach_all();
        throw;
    }
    policy.detach_all();
    return table;
}

// ---- checkpointing -------------------------------------------------------

namespace {

constexpr char kCkptMagic[8] = {'A', 'V', 'N', 'F', 'T', 'C', 'K', '1'};

template <typename T>
void put(std::ostream& out, T v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& in) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in) throw std::runtime_error("checkpoint: truncated file");
    return v;
}

}  // namespace

void save_checkpoint(const DualStreamPolicy& policy, const std::string& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("checkpoint: cannot open for writing: " + path);
    const ModelConfig& c = policy.config();
    out.write(kCkptMagic, sizeof(kCkptMagic));
    for (int field : {c.blocks_audio, c.blocks_video, c.d_model, c.heads, c.n_audio_tokens,
                      c.n_video_tokens, c.shallow_boundary, c.prompt_vocab})
        put<std::int32_t>(out, field);
    put<double>(out, c.detach_ratio);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(policy.param_names().size()));
    for (const std::string& name : policy.param_names()) {
        const Tensor& p = policy.param(name);
        put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
        out.write(name.data(), static_cast<std::streamsize>(name.size()));
        put<std::uint32_t>(out, static_cast<std::uint32_t>(p.shape().size()));
        for (int dim : p.shape()) put<std::int32_t>(out, dim);
        out.write(reinterpret_cast<const char*>(p.data().data()),
                  static_cast<std::streamsize>(p.size() * sizeof(double)));
    }
    out.flush();
    if (!out) throw std::runtime_error("checkpoint: write failed: " + path);
}

DualStreamPolicy load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("checkpoint: cannot open: " + path);
    char magic[sizeof(kCkptMagic)];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kCkptMagic, sizeof(magic)) != 0)
        throw std::runtime_error("checkpoint: bad magic in " + path);
    ModelConfig c;
    c.blocks_audio = get<std::int32_t>(in);
    c.blocks_video = get<std::int32_t>(in);
    c.d_model = get<std::int32_t>(in);
    c.heads = get<std::int32_t>(in);
    c.n_audio_tokens = get<std::int32_t>(in);
    c.n_video_tokens = get<std::int32_t>(in);
    c.shallow_boundary = get<std::int32_t>(in);
    c.prompt_vocab = get<std::int32_t>(in);
    c.detach_ratio = get<double>(in);
    c.validate();

    DualStreamPolicy policy(c, 0);
    std::uint32_t count = get<std::uint32_t>(in);
    if (count != policy.param_names().size())
        throw std::runtime_error("checkpoint: parameter count mismatch in " + path);
    for (const std::string& expected : policy.param_names()) {
        std::uint32_t len = get<std::uint32_t>(in);
        std::string name(len, '\0');
        in.read(name.data(), len);
        if (!in || name != expected)
            throw std::runtime_error("checkpoint: expected parameter " + expected + ", found " +
                                     name);
        Tensor& p = policy.param(name);
        std::uint32_t rank = get<std::uint32_t>(in);
        std::vector<int> shape(rank);
        for (std::uint32_t i = 0; i < rank; ++i) shape[i] = get<std::int32_t>(in);
        if (shape != p.shape())
            throw std::runtime_error("checkpoint: shape mismatch for " + name);
        in.read(reinterpret_cast<char*>(p.mutable_data().data()),
                static_cast<std::streamsize>(p.size() * sizeof(double)));
        if (!in) throw std::runtime_error("checkpoint: truncated data for " + name);
    }
    if (in.peek() != std::char_traits<char>::eof())
        throw std::runtime_error("checkpoint: trailing bytes in " + path);
    return policy;
}

}  // namespace avnft
