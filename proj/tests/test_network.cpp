// Copyright (c) 2026 The Tandem Authors
// SPDX-License-Identifier: Apache-2.0

#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "tandem/network.hpp"

using namespace tandem;

namespace {

// Tiny everything: fast to build, wide enough to be non-degenerate.
ModelConfig tiny_config(Variant v = Variant::joint_adapters) {
    ModelConfig cfg;
    cfg.d = 8;
    cfg.heads = 2;
    cfg.L_e = 1;
    cfg.L_d = 1;
    cfg.K = 4;
    cfg.d_b = 2;
    cfg.N = 4;
    cfg.M = 2;
    cfg.J = 3;
    cfg.E = 5;
    cfg.D_a = 4;
    cfg.S = 2;
    cfg.T = 5;
    cfg.beta_start = 1e-3;
    cfg.beta_end = 0.2;
    cfg.variant = v;
    return cfg;
}

Conditioning make_conditioning(const ModelConfig& cfg, std::uint64_t seed, int speaker = 0,
                               int t = 2) {
    Rng rng(seed);
    Conditioning c;
    c.seed_frames = cfg.M;
    c.seed.resize(static_cast<std::size_t>(cfg.M * cfg.motion_width()));
    for (auto& v : c.seed) v = rng.uniform(-1.0, 1.0);
    c.audio.frames = cfg.N;
    c.audio.dim = cfg.D_a;
    c.audio.values.resize(static_cast<std::size_t>(cfg.N * cfg.D_a));
    for (auto& v : c.audio.values) v = rng.uniform(0.0, 1.0);
    c.speaker_id = speaker;
    c.t = t;
    return c;
}

Tensor random_input(Rng& rng, std::int64_t n, std::int64_t w) {
    std::vector<double> v(static_cast<std::size_t>(n * w));
    for (auto& x : v) x = rng.uniform(-1.0, 1.0);
    return Tensor::from({n, w}, std::move(v));
}

}  // namespace

TEST_CASE("conditioning prefix layout") {
    auto cfg = tiny_config();
    Denoiser net(cfg, 3);
    auto c = make_conditioning(cfg, 10);

    SECTION("prefix has M + 2 tokens of width d") {
        Tensor p = net.embed_conditioning(c);
        REQUIRE(p.rows() == cfg.M + 2);
        REQUIRE(p.cols() == cfg.d);
    }
    SECTION("prefix length is 6 for M=4") {
        ModelConfig big = cfg;
        big.M = 4;
        big.N = 8;
        Denoiser net4(big, 3);
        auto c4 = make_conditioning(big, 10);
        REQUIRE(net4.embed_conditioning(c4).rows() == 6);
    }
    SECTION("same bundle twice gives an identical prefix") {
        Tensor a = net.embed_conditioning(c);
        Tensor b = net.embed_conditioning(c);
        REQUIRE(a.values() == b.values());
    }
    SECTION("bundles differing only in t differ only in the fused token") {
        auto c2 = c;
        c2.t = 4;
        Tensor a = net.embed_conditioning(c);
        Tensor b = net.embed_conditioning(c2);
        const auto P = a.rows();
        for (std::int64_t i = 0; i < P - 1; ++i)
            for (std::int64_t j = 0; j < cfg.d; ++j) REQUIRE(a.at(i, j) == b.at(i, j));
        bool last_differs = false;
        for (std::int64_t j = 0; j < cfg.d; ++j)
            last_differs = last_differs || a.at(P - 1, j) != b.at(P - 1, j);
        REQUIRE(last_differs);
    }
    SECTION("unknown speaker is rejected") {
        auto bad = c;
        bad.speaker_id = cfg.S;
        REQUIRE_THROWS_AS(net.embed_conditioning(bad), ConfigError);
    }
    SECTION("per-frame audio tokens extend the prefix") {
        ModelConfig pf = cfg;
        pf.audio_mode = "tokens";
        Denoiser net_pf(pf, 3);
        REQUIRE(net_pf.embed_conditioning(c).rows() == pf.M + pf.N + 1);
    }
    SECTION("additive audio injection keeps the prefix layout") {
        ModelConfig am = cfg;
        am.audio_mode = "add";
        Denoiser net_add(am, 3);
        randomize_heads(net_add, 4);
        REQUIRE(net_add.embed_conditioning(c).rows() == am.M + 2);
        // A change in one audio frame must reach the outputs.
        Rng rng(6);
        Tensor xf = random_input(rng, am.N, am.face_width());
        Tensor xb = random_input(rng, am.N, am.body_width());
        auto [f0, b0] = net_add.forward(xf, xb, c);
        auto c2 = c;
        c2.audio.values[static_cast<std::size_t>(2 * am.D_a)] += 0.5;
        auto [f1, b1] = net_add.forward(xf, xb, c2);
        REQUIRE(f0.values() != f1.values());
        REQUIRE(b0.values() != b1.values());
    }
}

TEST_CASE("input projections") {
    auto cfg = tiny_config();
    Denoiser net(cfg, 5);
    SECTION("zero inputs with zero biases give zero latents") {
        Tensor x = Tensor::zeros({cfg.N, cfg.face_width()});
        Tensor h = net.project_in(x, "in.face");
        for (double v : h.values()) REQUIRE(v == 0.0);
    }
    SECTION("both branches land at width d") {
        Rng rng(2);
        REQUIRE(net.project_in(random_input(rng, cfg.N, cfg.face_width()), "in.face").cols() ==
                cfg.d);
        REQUIRE(net.project_in(random_input(rng, cfg.N, cfg.body_width()), "in.body").cols() ==
                cfg.d);
    }
    SECTION("gradient reaches both projection stages") {
        Rng rng(3);
        Tensor x = random_input(rng, cfg.N, cfg.face_width());
        auto loss = [&]() { return mean_all(net.project_in(x, "in.face")); };
        auto report = grad_check(loss, net.params(), 1e-5, 4);
        double s1 = 0.0, s2 = 0.0;
        for (const auto& e : report.entries) {
            if (e.name == "in.face.s1.w") s1 = e.checked;
            if (e.name == "in.face.s2.w") s2 = e.checked;
        }
        REQUIRE(s1 > 0);
        REQUIRE(s2 > 0);
        REQUIRE(report.max_rel_err < 1e-4);
    }
}

TEST_CASE("adapter module") {
    auto cfg = tiny_config();
    Denoiser net(cfg, 7);
    Rng rng(4);
    Tensor self_seq = random_input(rng, 6, cfg.d);
    Tensor other_seq = random_input(rng, 6, cfg.d);
    const std::string ad = "enc.0.ad.face.att";

    SECTION("zero-initialized upsample makes the residual exactly zero") {
        Tensor r = adapter_forward(self_seq, other_seq, net.params(), ad);
        for (double v : r.values()) REQUIRE(v == 0.0);
    }
    SECTION("live adapter responds to the other branch") {
        Rng wr(8);
        for (auto& v : net.params().get(ad + ".up.w").values()) v = wr.uniform(-0.5, 0.5);
        Tensor r0 = adapter_forward(self_seq, other_seq, net.params(), ad);
        Tensor perturbed = random_input(wr, 6, cfg.d);
        Tensor r1 = adapter_forward(self_seq, perturbed, net.params(), ad);
        double diff = 0.0;
        for (std::size_t i = 0; i < r0.values().size(); ++i)
            diff += std::abs(r0.values()[i] - r1.values()[i]);
        REQUIRE(diff > 1e-8);
    }
    SECTION("a single latent token broadcasts one convex mixture row") {
        ModelConfig k1 = cfg;
        k1.K = 1;
        Denoiser net1(k1, 7);
        Rng wr(9);
        for (auto& v : net1.params().get(ad + ".up.w").values()) v = wr.uniform(-0.5, 0.5);
        Tensor r = adapter_forward(self_seq, other_seq, net1.params(), ad);
        for (std::int64_t i = 1; i < r.rows(); ++i)
            for (std::int64_t j = 0; j < r.cols(); ++j)
                REQUIRE_THAT(r.at(i, j), Catch::Matchers::WithinAbs(r.at(0, j), 1e-12));
        // The single summary row is a convex mixture of the other sequence.
        Tensor summary = scaled_dot_attention(net1.params().get(ad + ".latent"), other_seq,
                                              other_seq);
        for (std::int64_t j = 0; j < cfg.d; ++j) {
            double lo = other_seq.at(0, j), hi = other_seq.at(0, j);
            for (std::int64_t i = 1; i < other_seq.rows(); ++i) {
                lo = std::min(lo, other_seq.at(i, j));
                hi = std::max(hi, other_seq.at(i, j));
            }
            REQUIRE(summary.at(0, j) >= lo - 1e-12);
            REQUIRE(summary.at(0, j) <= hi + 1e-12);
        }
    }
    SECTION("width mismatch is an error") {
        Tensor narrow = random_input(rng, 6, cfg.d / 2);
        REQUIRE_THROWS_AS(adapter_forward(self_seq, narrow, net.params(), ad), ShapeError);
    }
}

TEST_CASE("transformer block pair") {
    auto cfg = tiny_config();
    Denoiser net(cfg, 11);
    Rng rng(6);
    Tensor f = random_input(rng, 6, cfg.d);
    Tensor b = random_input(rng, 6, cfg.d);

    SECTION("zero adapters reduce to the plain shared block per branch") {
        auto [f1, b1] = net.block_pair(f, b, "enc.0", "enc.0", "enc.0.ad.face.att",
                                       "enc.0.ad.face.ff", "enc.0.ad.body.att",
                                       "enc.0.ad.body.ff");
        auto [f2, b2] = net.block_pair(f, b, "enc.0", "enc.0", "", "", "", "");
        for (std::size_t i = 0; i < f1.values().size(); ++i) {
            REQUIRE(f1.values()[i] == f2.values()[i]);
            REQUIRE(b1.values()[i] == b2.values()[i]);
        }
    }
    SECTION("identical inputs give identical branch outputs") {
        auto [f1, b1] = net.block_pair(f, f, "enc.0", "enc.0", "enc.0.ad.face.att",
                                       "enc.0.ad.face.ff", "enc.0.ad.face.att",
                                       "enc.0.ad.face.ff");
        REQUIRE(f1.values() == b1.values());
    }
    SECTION("output shape equals input shape") {
        auto [f1, b1] = net.block_pair(f, b, "enc.0", "enc.0", "", "", "", "");
        REQUIRE(f1.shape() == f.shape());
        REQUIRE(b1.shape() == b.shape());
    }
}

TEST_CASE("full denoiser forward") {
    auto cfg = tiny_config();
    Denoiser net(cfg, 13);
    randomize_heads(net, 14);
    auto c = make_conditioning(cfg, 20);
    Rng rng(15);
    Tensor xf = random_input(rng, cfg.N, cfg.face_width());
    Tensor xb = random_input(rng, cfg.N, cfg.body_width());

    SECTION("output widths and frame counts match the contract") {
        for (Variant v : {Variant::joint_adapters, Variant::separate, Variant::combined,
                          Variant::split}) {
            Denoiser model(tiny_config(v), 13);
            auto [of, ob] = model.forward(xf, xb, c);
            REQUIRE(of.rows() == cfg.N);
            REQUIRE(ob.rows() == cfg.N);
            REQUIRE(of.cols() == cfg.face_width());
            REQUIRE(ob.cols() == cfg.body_width());
        }
    }
    SECTION("deterministic for fixed inputs and parameters") {
        auto [a1, b1] = net.forward(xf, xb, c);
        auto [a2, b2] = net.forward(xf, xb, c);
        REQUIRE(a1.values() == a2.values());
        REQUIRE(b1.values() == b2.values());
    }
    SECTION("zero-initialized adapters equal the adapter-free backbone") {
        auto [a1, b1] = net.forward(xf, xb, c);
        net.set_adapters_enabled(false);
        auto [a2, b2] = net.forward(xf, xb, c);
        net.set_adapters_enabled(true);
        double max_diff = 0.0;
        for (std::size_t i = 0; i < a1.values().size(); ++i)
            max_diff = std::max(max_diff, std::abs(a1.values()[i] - a2.values()[i]));
        for (std::size_t i = 0; i < b1.values().size(); ++i)
            max_diff = std::max(max_diff, std::abs(b1.values()[i] - b2.values()[i]));
        REQUIRE(max_diff < 1e-10);
    }
    SECTION("block weights are physically shared between branches") {
        auto [a1, b1] = net.forward(xf, xb, c);
        net.params().get("enc.0.attn.q.w").values()[3] += 0.5;
        auto [a2, b2] = net.forward(xf, xb, c);
        double df = 0.0, db = 0.0;
        for (std::size_t i = 0; i < a1.values().size(); ++i)
            df += std::abs(a1.values()[i] - a2.values()[i]);
        for (std::size_t i = 0; i < b1.values().size(); ++i)
            db += std::abs(b1.values()[i] - b2.values()[i]);
        REQUIRE(df > 1e-9);
        REQUIRE(db > 1e-9);
    }
    SECTION("cross-modal coupling is live once adapters are nonzero") {
        Rng wr(30);
        for (const auto& name : net.params().names())
            if (name.find(".ad.") != std::string::npos && name.ends_with("up.w"))
                for (auto& v : net.params().get(name).values()) v = wr.uniform(-0.3, 0.3);
        // Finite difference: face output must move when a body input moves.
        auto [f0, b0] = net.forward(xf, xb, c);
        Tensor xb2 = xb;
        std::vector<double> bumped = xb.values();
        bumped[5] += 1e-3;
        Tensor xb_bumped = Tensor::from({cfg.N, cfg.body_width()}, bumped);
        auto [f1, b1] = net.forward(xf, xb_bumped, c);
        double dface = 0.0;
        for (std::size_t i = 0; i < f0.values().size(); ++i)
            dface += std::abs(f0.values()[i] - f1.values()[i]);
        REQUIRE(dface > 1e-12);

        std::vector<double> fb = xf.values();
        fb[2] += 1e-3;
        auto [f2, b2] = net.forward(Tensor::from({cfg.N, cfg.face_width()}, fb), xb, c);
        double dbody = 0.0;
        for (std::size_t i = 0; i < b0.values().size(); ++i)
            dbody += std::abs(b0.values()[i] - b2.values()[i]);
        REQUIRE(dbody > 1e-12);
    }
    SECTION("wrong input widths are shape errors") {
        REQUIRE_THROWS_AS(net.forward(xb, xb, c), ShapeError);
    }
}

TEST_CASE("full-network gradient check on a toy configuration") {
    ModelConfig cfg = tiny_config();
    cfg.N = 2;
    cfg.M = 1;
    Denoiser net(cfg, 17);
    randomize_heads(net, 18);
    auto c = make_conditioning(cfg, 21, 1, 3);
    Rng rng(19);
    Tensor xf = random_input(rng, cfg.N, cfg.face_width());
    Tensor xb = random_input(rng, cfg.N, cfg.body_width());
    Tensor target_f = random_input(rng, cfg.N, cfg.face_width());
    Tensor target_b = random_input(rng, cfg.N, cfg.body_width());

    auto loss = [&]() {
        auto [of, ob] = net.forward(xf, xb, c);
        Tensor x0_hat = concat_cols(ob, of);
        Tensor x0 = concat_cols(target_b, target_f);
        return add(loss_rec(x0, x0_hat), loss_vel(x0, x0_hat));
    };
    auto report = grad_check(loss, net.params(), 1e-5, 6);
    INFO("worst parameter: " << report.worst_name << " rel err " << report.max_rel_err);
    REQUIRE(report.max_rel_err < 1e-4);
}

TEST_CASE("parameter counting") {
    SECTION("a single linear layer with bias") {
        ParamStore s;
        s.add("w", Tensor::zeros({3, 2}, true));
        s.add("b", Tensor::zeros({2}, true));
        REQUIRE(s.total_count() == 8);
    }
    SECTION("construction matches the analytic count for every variant") {
        for (Variant v : {Variant::joint_adapters, Variant::separate, Variant::combined,
                          Variant::split}) {
            ModelConfig cfg = tiny_config(v);
            Denoiser net(cfg, 1);
            REQUIRE(net.param_count() == count_params(cfg, v));
        }
    }
    SECTION("two constructions from the same config yield identical counts") {
        ModelConfig cfg = tiny_config();
        Denoiser a(cfg, 1), b(cfg, 2);
        REQUIRE(a.param_count() == b.param_count());
        REQUIRE(a.params().names() == b.params().names());
    }
    SECTION("joint model is smaller than separate networks for d >= 8") {
        for (int d : {8, 16, 32, 64, 128, 256}) {
            ModelConfig cfg;
            cfg.d = d;
            cfg.heads = d >= 16 ? 4 : 2;
            cfg.d_b = std::max(1, d / 8);
            REQUIRE(count_params(cfg, Variant::joint_adapters) <
                    count_params(cfg, Variant::separate));
        }
    }
    SECTION("parameter ratio at the paper-shaped config") {
        ModelConfig cfg = paper_shaped_config();
        const auto joint = count_params(cfg, Variant::joint_adapters);
        const auto separate = count_params(cfg, Variant::separate);
        const double ratio = static_cast<double>(joint) / static_cast<double>(separate);
        REQUIRE(ratio < 0.60);
        REQUIRE(ratio > 0.45);
        // Joint model lands in the tens of millions, mirroring the shipped
        // configuration's scale.
        REQUIRE(joint > 20'000'000);
        REQUIRE(joint < 40'000'000);
    }
    SECTION("split exceeds separate (two networks plus adapters)") {
        ModelConfig cfg;
        REQUIRE(count_params(cfg, Variant::split) > count_params(cfg, Variant::separate));
    }
}

TEST_CASE("model config text round trip") {
    ModelConfig cfg = tiny_config(Variant::split);
    cfg.audio_mode = "add";
    cfg.head_init = "random";
    const auto text = cfg.to_text();
    ModelConfig back = ModelConfig::from_text(text);
    REQUIRE(back.to_text() == text);
    REQUIRE(back.hash() == cfg.hash());
    REQUIRE(back.variant == Variant::split);
    REQUIRE(back.audio_mode == "add");

    SECTION("unknown keys are rejected unless ignored") {
        REQUIRE_THROWS_AS(ModelConfig::from_text("nonsense=1\n"), ConfigError);
        REQUIRE_NOTHROW(ModelConfig::from_text("nonsense=1\n", /*ignore_unknown=*/true));
    }
    SECTION("invalid configuration values are rejected") {
        ModelConfig bad = tiny_config();
        bad.heads = 3;  // d=8 not divisible
        REQUIRE_THROWS_AS(bad.validate(), ConfigError);
        REQUIRE_THROWS_AS(parse_variant("mixed"), ConfigError);
    }
}
