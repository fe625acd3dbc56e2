#include "doctest.h"

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "avnft/model.hpp"
#include "avnft/rng.hpp"
#include "avnft/tensor.hpp"

using namespace avnft;

namespace {

Tensor rand_tensor(std::vector<int> shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
    Rng rng(seed);
    std::size_t n = 1;
    for (int d : shape) n *= static_cast<std::size_t>(d);
    std::vector<double> data(n);
    for (double& x : data) x = rng.uniform(lo, hi);
    return Tensor::from(std::move(shape), std::move(data));
}

ModelConfig probe_config() {
    ModelConfig cfg;
    cfg.blocks_audio = 2;
    cfg.blocks_video = 2;
    cfg.d_model = 8;
    cfg.heads = 2;
    cfg.n_audio_tokens = 3;
    cfg.n_video_tokens = 4;
    cfg.shallow_boundary = 2;  // every block shallow: each A2V edge is detached
    cfg.detach_ratio = 0.1;
    cfg.prompt_vocab = 4;
    return cfg;
}

// the zero-initialized output heads would silence all gradients, so tests
// that need gradient flow give them random values first
void randomize_head(DualStreamPolicy& policy, const std::string& stream, std::uint64_t seed) {
    Tensor& w = policy.param(stream + ".out.w");
    Rng rng(seed);
    for (double& x : w.mutable_data()) x = rng.uniform(-0.5, 0.5);
}

// gradients of mean(video velocity squared) for every parameter
std::map<std::string, std::vector<double>> video_loss_grads(DualStreamPolicy& policy,
                                                            const SurgeryConfig& surgery,
                                                            const BlockMask& mask,
                                                            const Tensor& x_a, const Tensor& x_v) {
    Tape tape;
    policy.attach_all(tape);
    ForwardResult r = policy.forward(x_a, x_v, 0.5, 1, surgery, mask);
    Tensor loss = mean_all(mul(r.velocity_video, r.velocity_video));
    Gradients grads = tape.backward(loss);
    std::map<std::string, std::vector<double>> out;
    for (const std::string& n : policy.param_names()) out[n] = grads.of(policy.param(n));
    policy.detach_all();
    return out;
}

}  // namespace

TEST_SUITE("model") {

TEST_CASE("config validation rejects inconsistent settings") {
    ModelConfig ok = probe_config();
    CHECK_NOTHROW(ok.validate());

    ModelConfig bad = ok;
    bad.heads = 3;  // 8 % 3 != 0
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    bad = ok;
    bad.blocks_audio = 3;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    bad = ok;
    bad.shallow_boundary = 5;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    bad = ok;
    bad.detach_ratio = 1.5;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    bad = ok;
    bad.n_video_tokens = 0;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);

    SurgeryConfig s;
    s.alpha_s = -0.2;
    CHECK_THROWS_AS(s.validate(), std::invalid_argument);
    BlockMask m;
    m.blocked.insert(9);
    CHECK_THROWS_AS(m.validate(ok), std::invalid_argument);
}

TEST_CASE("initialization is seed-deterministic and seed-sensitive") {
    ModelConfig cfg = probe_config();
    DualStreamPolicy a(cfg, 77), b(cfg, 77), c(cfg, 78);
    REQUIRE(a.param_names() == b.param_names());
    for (const std::string& n : a.param_names())
        CHECK(a.param(n).data() == b.param(n).data());
    bool any_diff = false;
    for (const std::string& n : a.param_names())
        if (a.param(n).data() != c.param(n).data()) any_diff = true;
    CHECK(any_diff);
    CHECK(a.parameter_count() == c.parameter_count());
}

TEST_CASE("parameter count matches an independent shape enumeration") {
    // hand-walk of the default architecture, written out layer by layer
    ModelConfig cfg;  // defaults: 6+6 blocks, d 32, 8+16 tokens, vocab 16
    DualStreamPolicy policy(cfg, 1);

    std::size_t ln = 2 * 32;                           // gamma + beta
    std::size_t attn = 4 * (32 * 32) + 4 * 32;         // q/k/v/o weights + biases
    std::size_t ff = 32 * 128 + 128 + 128 * 32 + 32;   // two projections
    std::size_t block = 4 * ln + 2 * attn + ff;        // ln1..ln3 + lnkv, self + cross
    std::size_t common = (32 * 32 + 32) + ln + (32 * 32 + 32);  // in proj, out ln, out proj
    std::size_t audio = 6 * block + common + 8 * 32;   // + positional rows
    std::size_t video = 6 * block + common + 16 * 32;
    std::size_t shared = 2 * (32 * 32 + 32) + 16 * 32; // timestep mlp + prompt table

    CHECK(policy.parameter_count() == audio + video + shared);
    CHECK(policy.parameter_count() == 212416u);
}

TEST_CASE("forward produces velocity fields shaped like the latents") {
    ModelConfig cfg = probe_config();
    DualStreamPolicy policy(cfg, 5);
    Tensor x_a = rand_tensor({3, 8}, 100);
    Tensor x_v = rand_tensor({4, 8}, 101);
    ForwardResult r = policy.forward(x_a, x_v, 0.3, 0);
    CHECK(r.velocity_audio.shape() == std::vector<int>{3, 8});
    CHECK(r.velocity_video.shape() == std::vector<int>{4, 8});
    CHECK(r.cache.empty());

    // zero-initialized output heads start from an exactly-zero velocity field
    for (double v : r.velocity_audio.data()) CHECK(v == 0.0);

    // repeated evaluation is bitwise stable
    ForwardResult r2 = policy.forward(x_a, x_v, 0.3, 0);
    CHECK(r.velocity_video.data() == r2.velocity_video.data());

    CHECK_THROWS_AS(policy.forward(rand_tensor({5, 8}, 1), x_v, 0.3, 0), std::invalid_argument);
    CHECK_THROWS_AS(policy.forward(x_a, x_v, 1.5, 0), std::invalid_argument);
    CHECK_THROWS_AS(policy.forward(x_a, x_v, 0.3, 99), std::invalid_argument);
}

TEST_CASE("surgery leaves every forward value bit-identical") {
    ModelConfig cfg = probe_config();
    DualStreamPolicy policy(cfg, 9);
    randomize_head(policy, "video", 2);
    randomize_head(policy, "audio", 3);
    Tensor x_a = rand_tensor({3, 8}, 110);
    Tensor x_v = rand_tensor({4, 8}, 111);

    ForwardResult off = policy.forward(x_a, x_v, 0.4, 2, SurgeryConfig::off());
    ForwardResult on = policy.forward(x_a, x_v, 0.4, 2, SurgeryConfig::from(cfg));
    CHECK(off.velocity_audio.data() == on.velocity_audio.data());
    CHECK(off.velocity_video.data() == on.velocity_video.data());

    SurgeryConfig extreme{true, 2, 1.0};
    ForwardResult full = policy.forward(x_a, x_v, 0.4, 2, extreme);
    CHECK(off.velocity_video.data() == full.velocity_video.data());
}

TEST_CASE("full one-direction masks sever the cross-stream dependence") {
    ModelConfig cfg = probe_config();
    DualStreamPolicy policy(cfg, 13);
    randomize_head(policy, "video", 4);
    randomize_head(policy, "audio", 5);
    Tensor x_a = rand_tensor({3, 8}, 120);
    Tensor x_v = rand_tensor({4, 8}, 121);
    Tensor x_v2 = rand_tensor({4, 8}, 122);  // unrelated perturbed video input
    Tensor x_a2 = rand_tensor({3, 8}, 123);

    BlockMask no_v2a = BlockMask::all(BlockMask::Direction::V2A, 2);
    ForwardResult r1 = policy.forward(x_a, x_v, 0.5, 1, SurgeryConfig::off(), no_v2a);
    ForwardResult r2 = policy.forward(x_a, x_v2, 0.5, 1, SurgeryConfig::off(), no_v2a);
    CHECK(r1.velocity_audio.data() == r2.velocity_audio.data());   // audio blind to video
    CHECK(r1.velocity_video.data() != r2.velocity_video.data());

    BlockMask no_a2v = BlockMask::all(BlockMask::Direction::A2V, 2);
    ForwardResult r3 = policy.forward(x_a, x_v, 0.5, 1, SurgeryConfig::off(), no_a2v);
    ForwardResult r4 = policy.forward(x_a2, x_v, 0.5, 1, SurgeryConfig::off(), no_a2v);
    CHECK(r3.velocity_video.data() == r4.velocity_video.data());   // video blind to audio
    CHECK(r3.velocity_audio.data() != r4.velocity_audio.data());

    // without a mask both outputs depend on both inputs
    ForwardResult r5 = policy.forward(x_a, x_v, 0.5, 1);
    ForwardResult r6 = policy.forward(x_a, x_v2, 0.5, 1);
    CHECK(r5.velocity_audio.data() != r6.velocity_audio.data());
}

TEST_CASE("attention cache holds row-stochastic deep-block maps") {
    ModelConfig cfg = probe_config();
    cfg.blocks_audio = cfg.blocks_video = 3;
    cfg.shallow_boundary = 1;  // deep blocks: 1, 2
    DualStreamPolicy policy(cfg, 21);
    Tensor x_a = rand_tensor({3, 8}, 130);
    Tensor x_v = rand_tensor({4, 8}, 131);

    ForwardResult r = policy.forward(x_a, x_v, 0.2, 0, SurgeryConfig::off(), BlockMask::none(),
                                     /*cache_attn=*/true, /*step_tag=*/7);
    REQUIRE(r.cache.maps.size() == 2);
    CHECK(r.cache.maps.count({1, 7}) == 1);
    CHECK(r.cache.maps.count({2, 7}) == 1);
    CHECK(r.cache.n_audio == 3);
    CHECK(r.cache.n_video == 4);
    for (const auto& kv : r.cache.maps) {
        REQUIRE(kv.second.size() == 12);  // audio queries x video keys
        for (int i = 0; i < 3; ++i) {
            double row_sum = 0.0;
            for (int j = 0; j < 4; ++j) {
                double a = kv.second[static_cast<std::size_t>(i) * 4 + j];
                CHECK(a >= 0.0);
                row_sum += a;
            }
            CHECK(row_sum == doctest::Approx(1.0).epsilon(1e-9));
        }
    }

    AttentionCache merged;
    merged.merge(r.cache);
    ForwardResult r2 = policy.forward(x_a, x_v, 0.1, 0, SurgeryConfig::off(), BlockMask::none(),
                                      true, 8);
    merged.merge(r2.cache);
    CHECK(merged.maps.size() == 4);
}

TEST_CASE("projected cross-attention forwards identically for any alpha") {
    Tensor q = rand_tensor({2, 8}, 140);
    Tensor k = rand_tensor({3, 8}, 141);
    Tensor v = rand_tensor({3, 8}, 142);
    Tensor base = a2v_cross_attention(q, k, v, 2, 0.0);
    Tensor half = a2v_cross_attention(q, k, v, 2, 0.5);
    CHECK(base.data() == half.data());
    CHECK(base.shape() == std::vector<int>{2, 8});
    CHECK_THROWS_AS(a2v_cross_attention(q, k, v, 2, 1.2), std::invalid_argument);
    CHECK_THROWS_AS(a2v_cross_attention(q, rand_tensor({3, 6}, 1), v, 2, 0.0),
                    std::invalid_argument);

    // a single key row wins the softmax outright for every query
    Tensor k1 = rand_tensor({1, 8}, 143);
    Tensor v1 = rand_tensor({1, 8}, 144);
    Tensor single = a2v_cross_attention(q, k1, v1, 2, 0.3);
    for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 8; ++j)
            CHECK(single.at(i, j) == doctest::Approx(v1.at(0, j)).epsilon(1e-15));
}

TEST_CASE("projected cross-attention scales KV gradients by one minus alpha") {
    auto grads = [](double alpha) {
        Tape tape;
        Tensor q = rand_tensor({2, 8}, 150);
        Tensor k = rand_tensor({3, 8}, 151);
        Tensor v = rand_tensor({3, 8}, 152);
        q.attach(tape);
        k.attach(tape);
        v.attach(tape);
        Tensor out = a2v_cross_attention(q, k, v, 2, alpha);
        Tensor loss = mean_all(mul(out, rand_tensor({2, 8}, 153)));
        Gradients g = tape.backward(loss);
        return std::make_tuple(g.of(q), g.of(k), g.of(v));
    };
    auto [q0, k0, v0] = grads(0.0);
    auto [q3, k3, v3] = grads(0.3);
    CHECK(q0 == q3);  // query path untouched, bit for bit
    for (std::size_t i = 0; i < k0.size(); ++i) {
        CHECK(k3[i] == doctest::Approx(0.7 * k0[i]).epsilon(1e-12));
        CHECK(v3[i] == doctest::Approx(0.7 * v0[i]).epsilon(1e-12));
    }
    auto [q1, k1, v1] = grads(1.0);
    CHECK(q0 == q1);
    for (double g : k1) CHECK(g == 0.0);
    for (double g : v1) CHECK(g == 0.0);
}

TEST_CASE("isolated probe: audio-side gradients scale by one minus alpha_s") {
    // Video-only loss and a fully masked V2A direction leave exactly one
    // route from the audio tower to the loss: the detached A2V KV edge of
    // each (all-shallow) block. Every audio-tower gradient must then scale
    // by (1 - alpha_s), as must the A2V KV projections themselves.
    ModelConfig cfg = probe_config();
    DualStreamPolicy policy(cfg, 31);
    randomize_head(policy, "video", 6);
    Tensor x_a = rand_tensor({3, 8}, 160);
    Tensor x_v = rand_tensor({4, 8}, 161);
    BlockMask no_v2a = BlockMask::all(BlockMask::Direction::V2A, 2);

    auto off = video_loss_grads(policy, SurgeryConfig::off(), no_v2a, x_a, x_v);
    auto on = video_loss_grads(policy, SurgeryConfig::from(cfg), no_v2a, x_a, x_v);

    int scaled_checked = 0;
    for (const std::string& name : policy.param_names()) {
        GradNormRow bucket = grad_bucket_of(name);
        bool audio_tower = bucket.stream == "audio" && bucket.path != "head";
        bool a2v_kv = bucket.stream == "video" && bucket.path == "cross_kv";
        if (bucket.stream == "audio" && bucket.path == "head") {
            for (double g : off[name]) CHECK(g == 0.0);  // loss never sees audio head
            continue;
        }
        if (!audio_tower && !a2v_kv) continue;
        for (std::size_t i = 0; i < off[name].size(); ++i) {
            double want = 0.9 * off[name][i];
            CHECK(std::abs(on[name][i] - want) <= 1e-10 * std::max(std::abs(want), 1e-6));
        }
        ++scaled_checked;
    }
    CHECK(scaled_checked > 10);

    // alpha_s = 1 closes the KV edge completely
    SurgeryConfig closed{true, 2, 1.0};
    auto dead = video_loss_grads(policy, closed, no_v2a, x_a, x_v);
    for (const std::string& name : policy.param_names()) {
        GradNormRow bucket = grad_bucket_of(name);
        if ((bucket.stream == "audio") || (bucket.stream == "video" && bucket.path == "cross_kv"))
            for (double g : dead[name]) CHECK(g == 0.0);
    }
}

TEST_CASE("parameter names classify into a full partition of buckets") {
    CHECK(grad_bucket_of("time.w1").path == "cond");
    CHECK(grad_bucket_of("prompt.table").stream == "shared");
    CHECK(grad_bucket_of("audio.in.w").path == "embed");
    CHECK(grad_bucket_of("audio.pos").path == "embed");
    CHECK(grad_bucket_of("video.out_ln.g").path == "head");
    CHECK(grad_bucket_of("video.out.b").path == "head");
    GradNormRow r = grad_bucket_of("video.b3.cross.wk");
    CHECK(r.stream == "video");
    CHECK(r.block == 3);
    CHECK(r.path == "cross_kv");
    CHECK(grad_bucket_of("video.b3.cross.wq").path == "cross_q");
    CHECK(grad_bucket_of("video.b3.cross.wo").path == "cross_q");
    CHECK(grad_bucket_of("audio.b0.lnkv.g").path == "cross_kv");
    CHECK(grad_bucket_of("audio.b0.ln2.b").path == "cross_q");
    CHECK(grad_bucket_of("audio.b1.ln1.g").path == "self");
    CHECK(grad_bucket_of("audio.b1.self.bo").path == "self");
    CHECK(grad_bucket_of("audio.b1.ln3.g").path == "ff");
    CHECK(grad_bucket_of("audio.b1.ff.w2").path == "ff");
}

TEST_CASE("gradient-norm table partitions the total norm") {
    ModelConfig cfg = probe_config();
    DualStreamPolicy policy(cfg, 41);
    randomize_head(policy, "video", 7);
    randomize_head(policy, "audio", 8);
    Tensor x_a = rand_tensor({3, 8}, 170);
    Tensor x_v = rand_tensor({4, 8}, 171);

    auto loss_fn = [&](Tape&, DualStreamPolicy& p) {
        ForwardResult r = p.forward(x_a, x_v, 0.5, 1);
        return add(mean_all(mul(r.velocity_video, r.velocity_video)),
                   mean_all(mul(r.velocity_audio, r.velocity_audio)));
    };
    GradNormTable table = layer_grad_norms(policy, loss_fn);
    CHECK(table.total > 0.0);
    double sq = 0.0;
    for (const GradNormRow& row : table.rows) sq += row.norm * row.norm;
    CHECK(std::abs(sq - table.total * table.total) <= 1e-9 * std::max(1.0, sq));

    // a zero loss zeroes the whole table
    GradNormTable zero = layer_grad_norms(policy, [&](Tape&, DualStreamPolicy& p) {
        ForwardResult r = p.forward(x_a, x_v, 0.5, 1);
        return scale(mean_all(mul(r.velocity_video, r.velocity_video)), 0.0);
    });
    CHECK(zero.total == 0.0);
    for (const GradNormRow& row : zero.rows) CHECK(row.norm == 0.0);

    // with V2A fully masked, the audio stream's video-KV path carries nothing
    BlockMask no_v2a = BlockMask::all(BlockMask::Direction::V2A, 2);
    GradNormTable masked = layer_grad_norms(policy, [&](Tape&, DualStreamPolicy& p) {
        ForwardResult r = p.forward(x_a, x_v, 0.5, 1, SurgeryConfig::off(), no_v2a);
        return add(mean_all(mul(r.velocity_video, r.velocity_video)),
                   mean_all(mul(r.velocity_audio, r.velocity_audio)));
    });
    for (const GradNormRow& row : masked.rows)
        if (row.stream == "audio" && row.path == "cross_kv") CHECK(row.norm == 0.0);
}

TEST_CASE("checkpoints round-trip byte-stably") {
    const std::string path = "test_model_ckpt.bin";
    ModelConfig cfg = probe_config();
    DualStreamPolicy policy(cfg, 55);
    randomize_head(policy, "video", 9);
    save_checkpoint(policy, path);

    DualStreamPolicy loaded = load_checkpoint(path);
    REQUIRE(loaded.param_names() == policy.param_names());
    for (const std::string& n : policy.param_names())
        CHECK(loaded.param(n).data() == policy.param(n).data());
    CHECK(loaded.config().d_model == cfg.d_model);
    CHECK(loaded.config().detach_ratio == cfg.detach_ratio);

    const std::string path2 = "test_model_ckpt2.bin";
    save_checkpoint(loaded, path2);
    std::ifstream f1(path, std::ios::binary), f2(path2, std::ios::binary);
    std::string b1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
    std::string b2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
    CHECK(b1 == b2);
    CHECK(!b1.empty());

    std::ofstream bad("test_model_ckpt_bad.bin", std::ios::binary);
    bad << "not a checkpoint";
    bad.close();
    CHECK_THROWS_AS(load_checkpoint("test_model_ckpt_bad.bin"), std::runtime_error);
    CHECK_THROWS_AS(load_checkpoint("no_such_file.bin"), std::runtime_error);

    std::remove(path.c_str());
    std::remove(path2.c_str());
    std::remove("test_model_ckpt_bad.bin");
}

}  // TEST_SUITE
