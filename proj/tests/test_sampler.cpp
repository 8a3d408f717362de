// Copyright (c) 2026 The Tandem Authors
// SPDX-License-Identifier: Apache-2.0

#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <limits>
#include <vector>

#include "tandem/sampler.hpp"

using namespace tandem;

namespace {

ModelConfig sampler_config(int N = 34, int M = 4) {
    ModelConfig cfg;
    cfg.N = N;
    cfg.M = M;
    cfg.T = 5;
    cfg.beta_start = 1e-3;
    cfg.beta_end = 0.2;
    return cfg;
}

// Oracle denoiser: always predicts a fixed clean motion window.
DenoiseFn oracle_for(const MotionSequence& x0) {
    const auto flat = concat_motion(x0);
    const int bw = x0.body_width(), fw = x0.face_width(), tw = x0.total_width();
    const std::int64_t N = x0.frames;
    return [flat, bw, fw, tw, N](const std::vector<double>&, const std::vector<double>&,
                                 const Conditioning&) {
        std::vector<double> f(static_cast<std::size_t>(N * fw));
        std::vector<double> b(static_cast<std::size_t>(N * bw));
        for (std::int64_t i = 0; i < N; ++i) {
            const double* row = &flat[static_cast<std::size_t>(i * tw)];
            std::copy(row, row + bw, &b[static_cast<std::size_t>(i * bw)]);
            std::copy(row + bw, row + tw, &f[static_cast<std::size_t>(i * fw)]);
        }
        return std::make_pair(f, b);
    };
}

Conditioning seed_conditioning(const ModelConfig& cfg, const MotionSequence& gt,
                               const AudioFeatureTrack& audio) {
    Conditioning c;
    c.seed = concat_motion(gt.slice(0, cfg.M));
    c.seed_frames = cfg.M;
    c.audio = audio.slice(0, cfg.N);
    c.speaker_id = 0;
    c.t = cfg.T;
    return c;
}

}  // namespace

TEST_CASE("blend weights follow the convex interpolation rule") {
    SECTION("exact values for M=4") {
        auto w = blend_weights(4);
        REQUIRE(w[0].first == 0.8);
        REQUIRE(w[1].first == 0.6);
        REQUIRE(w[2].first == 0.4);
        REQUIRE(w[3].first == 0.2);
        REQUIRE(w[0].second == 0.2);
        REQUIRE(w[3].second == 0.8);
    }
    SECTION("weights are convex for every overlap length") {
        for (int M = 1; M <= 12; ++M) {
            for (const auto& [wp, wn] : blend_weights(M)) {
                REQUIRE(wp > 0.0);
                REQUIRE(wp < 1.0);
                REQUIRE(wn > 0.0);
                REQUIRE(wn < 1.0);
                REQUIRE(wp + wn == 1.0);
            }
        }
    }
}

TEST_CASE("blend_overlap") {
    SECTION("equal inputs are preserved") {
        std::vector<double> prev = {1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0};
        auto out = blend_overlap(prev, prev, 4, 2);
        for (std::size_t i = 0; i < prev.size(); ++i)
            REQUIRE_THAT(out[i], Catch::Matchers::WithinAbs(prev[i], 1e-15));
    }
    SECTION("hand-computed endpoints for M=4") {
        std::vector<double> prev(4, 1.0);
        std::vector<double> next(4, 0.0);
        auto out = blend_overlap(prev, next, 4, 1);
        REQUIRE(out[0] == 0.8);
        REQUIRE(out[3] == 0.2);
    }
    SECTION("blend stays in the pointwise hull") {
        Rng rng(5);
        for (int rep = 0; rep < 10; ++rep) {
            const int M = 1 + static_cast<int>(rng.integer(6));
            const int w = 1 + static_cast<int>(rng.integer(5));
            std::vector<double> prev(static_cast<std::size_t>(M * w)), next(prev.size());
            for (auto& v : prev) v = rng.uniform(-2.0, 2.0);
            for (auto& v : next) v = rng.uniform(-2.0, 2.0);
            auto out = blend_overlap(prev, next, M, w);
            for (std::size_t i = 0; i < out.size(); ++i) {
                REQUIRE(out[i] >= std::min(prev[i], next[i]) - 1e-12);
                REQUIRE(out[i] <= std::max(prev[i], next[i]) + 1e-12);
            }
        }
    }
    SECTION("shape mismatch") {
        std::vector<double> a(8, 0.0), b(6, 0.0);
        REQUIRE_THROWS_AS(blend_overlap(a, b, 4, 2), ShapeError);
    }
}

TEST_CASE("sample_segment") {
    auto cfg = sampler_config();
    auto schedule = cfg.schedule();
    SynthConfig sc;
    sc.seed = 41;
    sc.num_sequences = 1;
    sc.frames_per_sequence = 40;
    auto data = synth_dataset(sc);
    const auto gt = data.motions[0].slice(0, cfg.N);
    auto cond = seed_conditioning(cfg, data.motions[0], data.audios[0]);

    SECTION("fixed rng seed reproduces the output") {
        // Input-dependent denoiser (passes the noisy input through), so the
        // sampling noise is visible in the output.
        DenoiseFn passthrough = [](const std::vector<double>& xf,
                                   const std::vector<double>& xb, const Conditioning&) {
            return std::make_pair(xf, xb);
        };
        Rng r1(100), r2(100), r3(101);
        auto a = sample_segment(passthrough, cond, cfg, schedule, r1);
        auto b = sample_segment(passthrough, cond, cfg, schedule, r2);
        auto c = sample_segment(passthrough, cond, cfg, schedule, r3);
        REQUIRE(a.body == b.body);
        REQUIRE(a.face == b.face);
        REQUIRE(a.body != c.body);
    }
    SECTION("oracle predictor recovers the ground truth") {
        auto oracle = oracle_for(gt);
        Rng rng(7);
        auto noiseless = sample_segment(oracle, cond, cfg, schedule, rng, /*noiseless=*/true);
        for (std::size_t i = 0; i < gt.body.size(); ++i)
            REQUIRE_THAT(noiseless.body[i], Catch::Matchers::WithinAbs(gt.body[i], 1e-8));
        for (std::size_t i = 0; i < gt.face.size(); ++i)
            REQUIRE_THAT(noiseless.face[i], Catch::Matchers::WithinAbs(gt.face[i], 1e-8));
    }
    SECTION("output has N = 34 frames and full widths") {
        auto oracle = oracle_for(gt);
        Rng rng(8);
        auto out = sample_segment(oracle, cond, cfg, schedule, rng);
        REQUIRE(out.frames == 34);
        REQUIRE(out.body_width() == 129);
        REQUIRE(out.face_width() == 103);
    }
    SECTION("non-finite predictions abort with the step index") {
        DenoiseFn bad = [&](const std::vector<double>&, const std::vector<double>&,
                            const Conditioning&) {
            std::vector<double> f(static_cast<std::size_t>(cfg.N * cfg.face_width()),
                                  std::numeric_limits<double>::infinity());
            std::vector<double> b(static_cast<std::size_t>(cfg.N * cfg.body_width()), 0.0);
            return std::make_pair(f, b);
        };
        Rng rng(9);
        REQUIRE_THROWS_WITH(sample_segment(bad, cond, cfg, schedule, rng),
                            Catch::Matchers::ContainsSubstring("t=5"));
    }
}

TEST_CASE("generate_long windowing and seed chaining") {
    auto cfg = sampler_config();
    auto schedule = cfg.schedule();
    SynthConfig sc;
    sc.seed = 43;
    sc.num_sequences = 1;
    sc.frames_per_sequence = 301;
    auto data = synth_dataset(sc);
    const auto& motion = data.motions[0];
    const auto& audio = data.audios[0];
    const auto seed = concat_motion(motion.slice(0, cfg.M));

    SECTION("a single window when F equals N") {
        auto oracle = oracle_for(motion.slice(0, 34));
        Rng rng(1);
        GenerationTrace trace;
        auto out = generate_long(oracle, audio.slice(0, 34), seed, 0, cfg, schedule, rng,
                                 &trace);
        REQUIRE(out.frames == 34);
        REQUIRE(trace.segment_offsets == std::vector<std::int64_t>{0});
        REQUIRE(trace.blend_regions.empty());
    }
    SECTION("two windows at offsets 0 and 30 for F=64") {
        auto oracle = oracle_for(motion.slice(0, 34));
        Rng rng(2);
        GenerationTrace trace;
        auto out = generate_long(oracle, audio.slice(0, 64), seed, 0, cfg, schedule, rng,
                                 &trace);
        REQUIRE(out.frames == 64);
        REQUIRE(trace.segment_offsets == std::vector<std::int64_t>{0, 30});
        REQUIRE(trace.blend_regions.size() == 1);
        REQUIRE(trace.blend_regions[0].start == 30);
        REQUIRE(trace.blend_regions[0].length == 4);
    }
    SECTION("output length equals audio length with a back-aligned tail") {
        auto oracle = oracle_for(motion.slice(0, 34));
        for (std::int64_t F : {34, 64, 100, 301}) {
            Rng rng(static_cast<std::uint64_t>(F));
            GenerationTrace trace;
            auto out =
                generate_long(oracle, audio.slice(0, F), seed, 0, cfg, schedule, rng, &trace);
            REQUIRE(out.frames == F);
            REQUIRE(trace.segment_offsets.back() + cfg.N == F);
        }
    }
    SECTION("audio shorter than one segment is rejected with padding advice") {
        auto oracle = oracle_for(motion.slice(0, 34));
        Rng rng(3);
        REQUIRE_THROWS_WITH(
            generate_long(oracle, audio.slice(0, 20), seed, 0, cfg, schedule, rng),
            Catch::Matchers::ContainsSubstring("pad"));
    }
    SECTION("each segment is seeded with the previous segment's raw frames") {
        auto oracle = oracle_for(motion.slice(0, 34));
        Rng rng(4);
        GenerationTrace trace;
        generate_long(oracle, audio.slice(0, 100), seed, 0, cfg, schedule, rng, &trace);
        REQUIRE(trace.segment_seeds.size() == trace.raw_segments.size());
        REQUIRE(trace.segment_seeds[0] == seed);
        for (std::size_t k = 1; k < trace.segment_seeds.size(); ++k) {
            const auto& prev = trace.raw_segments[k - 1];
            // Raw pre-blend frames aligned to this window's start; equals the
            // final M frames whenever the stride is the standard N-M.
            const std::int64_t local =
                trace.segment_offsets[k] - trace.segment_offsets[k - 1];
            const auto expected = concat_motion(prev.slice(local, local + cfg.M));
            REQUIRE(trace.segment_seeds[k] == expected);
            if (local == cfg.N - cfg.M)
                REQUIRE(expected == concat_motion(prev.slice(cfg.N - cfg.M, cfg.N)));
        }
    }
    SECTION("window-exact oracle reproduces the ground truth end to end") {
        // The oracle returns the true window for whichever segment is being
        // sampled; overlapping windows then blend identical values.
        std::int64_t current_offset = -1;
        std::size_t call_count = 0;
        std::vector<std::int64_t> offsets = {0, 30, 60, 66};
        DenoiseFn window_oracle = [&](const std::vector<double>& xf,
                                      const std::vector<double>& xb, const Conditioning& c) {
            if (c.t == schedule.T && call_count % static_cast<std::size_t>(schedule.T) == 0)
                current_offset = offsets[call_count / static_cast<std::size_t>(schedule.T)];
            ++call_count;
            const auto window = motion.slice(current_offset, current_offset + 34);
            return oracle_for(window)(xf, xb, c);
        };
        Rng rng(5);
        auto out = generate_long(window_oracle, audio.slice(0, 100), seed, 0, cfg, schedule,
                                 rng, nullptr, /*noiseless=*/true);
        REQUIRE(out.frames == 100);
        const auto gt = motion.slice(0, 100);
        for (std::size_t i = 0; i < gt.body.size(); ++i)
            REQUIRE_THAT(out.body[i], Catch::Matchers::WithinAbs(gt.body[i], 1e-9));
        for (std::size_t i = 0; i < gt.face.size(); ++i)
            REQUIRE_THAT(out.face[i], Catch::Matchers::WithinAbs(gt.face[i], 1e-9));
    }
}
