// Copyright (c) 2026 The Tandem Authors
// SPDX-License-Identifier: Apache-2.0
//
// Segment sampling through the reverse chain, plus long-form generation via
// seed chaining and convex overlap blending.

#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "tandem/data.hpp"
#include "tandem/diffusion.hpp"
#include "tandem/errors.hpp"
#include "tandem/network.hpp"
#include "tandem/rng.hpp"

namespace tandem {

// Pure denoiser callable over flat vectors; Denoiser::sample_fn() provides
// the production implementation, tests inject oracles.
using DenoiseFn = std::function<std::pair<std::vector<double>, std::vector<double>>(
    const std::vector<double>& xt_face, const std::vector<double>& xt_body,
    const Conditioning& c)>;

// Convex interpolation weights for an overlap of length M:
//   prev weight (M-i)/(M+1), next weight (i+1)/(M+1), i = 0..M-1.
inline std::vector<std::pair<double, double>> blend_weights(int M) {
    std::vector<std::pair<double, double>> w;
    w.reserve(static_cast<std::size_t>(M));
    for (int i = 0; i < M; ++i)
        w.emplace_back(static_cast<double>(M - i) / static_cast<double>(M + 1),
                       static_cast<double>(i + 1) / static_cast<double>(M + 1));
    return w;
}

// Blends the trailing frames of the previous segment with the leading frames
// of the next one. Inputs are [M x width] in concat layout.
inline std::vector<double> blend_overlap(const std::vector<double>& prev_tail,
                                         const std::vector<double>& next_head, int frames,
                                         int width) {
    if (prev_tail.size() != next_head.size() ||
        prev_tail.size() != static_cast<std::size_t>(frames) * static_cast<std::size_t>(width))
        throw ShapeError("blend_overlap: shapes disagree (prev " +
                         std::to_string(prev_tail.size()) + ", next " +
                         std::to_string(next_head.size()) + ", expected " +
                         std::to_string(frames * width) + ")");
    const auto w = blend_weights(frames);
    std::vector<double> out(prev_tail.size());
    for (int i = 0; i < frames; ++i) {
        const auto [wp, wn] = w[static_cast<std::size_t>(i)];
        const std::size_t base = static_cast<std::size_t>(i) * static_cast<std::size_t>(width);
        for (int j = 0; j < width; ++j)
            out[base + static_cast<std::size_t>(j)] =
                prev_tail[base + static_cast<std::size_t>(j)] * wp +
                next_head[base + static_cast<std::size_t>(j)] * wn;
    }
    return out;
}

// Draws x_T from a standard normal and iterates the posterior with the
// model's clean-sample prediction down to t=1.
inline MotionSequence sample_segment(const DenoiseFn& denoise, const Conditioning& cond,
                                     const ModelConfig& cfg, const DiffusionSchedule& schedule,
                                     Rng& rng, bool noiseless = false, double fps = 30.0) {
    const int N = cfg.N;
    const int bw = cfg.body_width(), fw = cfg.face_width(), tw = cfg.motion_width();
    std::vector<double> x(static_cast<std::size_t>(N * tw));
    for (auto& v : x) v = rng.normal();

    const ReverseVariance kind = parse_reverse_variance(cfg.reverse_variance);
    Conditioning c = cond;
    std::vector<double> xf(static_cast<std::size_t>(N * fw));
    std::vector<double> xb(static_cast<std::size_t>(N * bw));
    for (int t = schedule.T; t >= 1; --t) {
        for (int i = 0; i < N; ++i) {
            const double* row = &x[static_cast<std::size_t>(i * tw)];
            std::copy(row, row + bw, &xb[static_cast<std::size_t>(i * bw)]);
            std::copy(row + bw, row + tw, &xf[static_cast<std::size_t>(i * fw)]);
        }
        c.t = t;
        auto [x0f, x0b] = denoise(xf, xb, c);
        std::vector<double> x0_hat(static_cast<std::size_t>(N * tw));
        for (int i = 0; i < N; ++i) {
            std::copy(&x0b[static_cast<std::size_t>(i * bw)],
                      &x0b[static_cast<std::size_t>((i + 1) * bw)],
                      &x0_hat[static_cast<std::size_t>(i * tw)]);
            std::copy(&x0f[static_cast<std::size_t>(i * fw)],
                      &x0f[static_cast<std::size_t>((i + 1) * fw)],
                      &x0_hat[static_cast<std::size_t>(i * tw + bw)]);
        }
        if (t > 1 && !noiseless) {
            std::vector<double> noise(x.size());
            for (auto& v : noise) v = rng.normal();
            x = posterior_step(x, x0_hat, t, schedule, &noise, kind);
        } else {
            x = posterior_step(x, x0_hat, t, schedule, nullptr, kind);
        }
        if (!all_finite(x))
            throw NumericError("sample_segment: non-finite values at step t=" +
                               std::to_string(t));
    }
    return split_motion(N, x, cfg.J, cfg.E, fps);
}

struct BlendRegion {
    std::int64_t start = 0;   // frame offset in the output
    std::int64_t length = 0;  // overlap length (M, or longer for the back-aligned tail)
};

// Instrumentation for provenance sidecars and the seed-chaining invariant.
struct GenerationTrace {
    std::vector<std::int64_t> segment_offsets;
    std::vector<BlendRegion> blend_regions;
    std::vector<std::vector<double>> segment_seeds;  // conditioning seed per segment
    std::vector<MotionSequence> raw_segments;        // pre-blend outputs
};

// Long-form generation: the audio is windowed into N-frame segments with
// M-frame overlap (a final back-aligned window covers any remainder), the
// first segment consumes the caller's seed, and each later segment is seeded
// with the previous segment's last M raw frames. Overlaps are blended.
inline MotionSequence generate_long(const DenoiseFn& denoise, const AudioFeatureTrack& audio,
                                    const std::vector<double>& seed, int speaker_id,
                                    const ModelConfig& cfg, const DiffusionSchedule& schedule,
                                    Rng& rng, GenerationTrace* trace = nullptr,
                                    bool noiseless = false, double fps = 30.0) {
    const std::int64_t F = audio.frames;
    const int N = cfg.N, M = cfg.M;
    const int tw = cfg.motion_width();
    if (F < N)
        throw ShapeError("generate_long: audio has " + std::to_string(F) +
                         " frames but one segment needs " + std::to_string(N) +
                         "; pad the audio to at least N frames");
    if (audio.dim != cfg.D_a)
        throw ShapeError("generate_long: audio dim " + std::to_string(audio.dim) +
                         " does not match configured D_a=" + std::to_string(cfg.D_a));
    if (seed.size() != static_cast<std::size_t>(M * tw))
        throw ShapeError("generate_long: seed must hold M=" + std::to_string(M) + " frames");

    std::vector<std::int64_t> offsets;
    for (std::int64_t o = 0; o + N <= F; o += N - M) offsets.push_back(o);
    if (offsets.back() + N < F) offsets.push_back(F - N);  // back-aligned tail window

    std::vector<double> out(static_cast<std::size_t>(F * tw), 0.0);
    std::vector<double> current_seed = seed;
    MotionSequence prev_segment;

    for (std::size_t k = 0; k < offsets.size(); ++k) {
        const std::int64_t o = offsets[k];
        Conditioning c;
        c.seed = current_seed;
        c.seed_frames = M;
        c.audio = audio.slice(o, o + N);
        c.speaker_id = speaker_id;
        c.t = schedule.T;
        MotionSequence seg = sample_segment(denoise, c, cfg, schedule, rng, noiseless, fps);
        const auto seg_flat = concat_motion(seg);

        if (trace) {
            trace->segment_offsets.push_back(o);
            trace->segment_seeds.push_back(current_seed);
            trace->raw_segments.push_back(seg);
        }

        if (k == 0) {
            std::copy(seg_flat.begin(), seg_flat.end(), out.begin());
        } else {
            const std::int64_t prev_end = offsets[k - 1] + N;
            const std::int64_t overlap = prev_end - o;
            const auto prev_flat = concat_motion(prev_segment);
            std::vector<double> prev_tail(
                prev_flat.end() - static_cast<std::ptrdiff_t>(overlap * tw), prev_flat.end());
            std::vector<double> next_head(
                seg_flat.begin(), seg_flat.begin() + static_cast<std::ptrdiff_t>(overlap * tw));
            const auto blended =
                blend_overlap(prev_tail, next_head, static_cast<int>(overlap), tw);
            std::copy(blended.begin(), blended.end(),
                      out.begin() + static_cast<std::ptrdiff_t>(o * tw));
            std::copy(seg_flat.begin() + static_cast<std::ptrdiff_t>(overlap * tw),
                      seg_flat.end(), out.begin() + static_cast<std::ptrdiff_t>(prev_end * tw));
            if (trace) trace->blend_regions.push_back({o, overlap});
        }

        // Seed chaining uses this segment's raw (pre-blend) frames aligned to
        // the next window's start; for the standard stride that is exactly
        // the final M frames, and for the back-aligned tail window it is the
        // slice covering the same absolute frames.
        if (k + 1 < offsets.size()) {
            const std::int64_t local = offsets[k + 1] - o;
            current_seed = concat_motion(seg.slice(local, local + M));
        }
        prev_segment = std::move(seg);
    }
    return split_motion(F, out, cfg.J, cfg.E, fps);
}

}  // namespace tandem
