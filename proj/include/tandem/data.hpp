// Copyright (c) 2026 The Tandem Authors
// SPDX-License-Identifier: Apache-2.0
//
// Motion/audio data types, clip windowing, binary file formats, and the
// deterministic synthetic dataset generator.

#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "tandem/binio.hpp"
#include "tandem/errors.hpp"
#include "tandem/rng.hpp"

namespace tandem {

// Frame-indexed body rotations (3*J axis-angle values) and face parameters
// (3 jaw rotations + E expression weights). Frames are rows.
struct MotionSequence {
    std::int64_t frames = 0;
    int J = 43;
    int E = 100;
    double fps = 30.0;
    std::vector<double> body;  // frames x (3*J), row-major
    std::vector<double> face;  // frames x (3+E), row-major

    int body_width() const { return 3 * J; }
    int face_width() const { return 3 + E; }
    int total_width() const { return body_width() + face_width(); }

    double body_at(std::int64_t t, int i) const {
        return body[static_cast<std::size_t>(t * body_width() + i)];
    }
    double face_at(std::int64_t t, int i) const {
        return face[static_cast<std::size_t>(t * face_width() + i)];
    }

    void validate() const {
        if (body.size() != static_cast<std::size_t>(frames * body_width()) ||
            face.size() != static_cast<std::size_t>(frames * face_width()))
            throw ShapeError("motion sequence: storage does not match frames=" +
                             std::to_string(frames) + " J=" + std::to_string(J) +
                             " E=" + std::to_string(E));
    }

    MotionSequence slice(std::int64_t f0, std::int64_t f1) const {
        if (f0 < 0 || f1 > frames || f0 >= f1)
            throw ShapeError("motion slice [" + std::to_string(f0) + "," + std::to_string(f1) +
                             ") invalid for " + std::to_string(frames) + " frames");
        MotionSequence out;
        out.frames = f1 - f0;
        out.J = J;
        out.E = E;
        out.fps = fps;
        out.body.assign(body.begin() + static_cast<std::ptrdiff_t>(f0 * body_width()),
                        body.begin() + static_cast<std::ptrdiff_t>(f1 * body_width()));
        out.face.assign(face.begin() + static_cast<std::ptrdiff_t>(f0 * face_width()),
                        face.begin() + static_cast<std::ptrdiff_t>(f1 * face_width()));
        return out;
    }
};

// Precomputed per-frame speech features, aligned 1:1 with motion frames.
struct AudioFeatureTrack {
    std::int64_t frames = 0;
    int dim = 16;
    std::vector<double> values;  // frames x dim, row-major

    double at(std::int64_t t, int c) const {
        return values[static_cast<std::size_t>(t * dim + c)];
    }

    // Channel 0 carries the scalar envelope by convention (the synthetic
    // generator writes it there; beat detection reads it back).
    std::vector<double> envelope() const {
        std::vector<double> env(static_cast<std::size_t>(frames));
        for (std::int64_t t = 0; t < frames; ++t) env[static_cast<std::size_t>(t)] = at(t, 0);
        return env;
    }

    AudioFeatureTrack slice(std::int64_t f0, std::int64_t f1) const {
        if (f0 < 0 || f1 > frames || f0 >= f1)
            throw ShapeError("audio slice [" + std::to_string(f0) + "," + std::to_string(f1) +
                             ") invalid for " + std::to_string(frames) + " frames");
        AudioFeatureTrack out;
        out.frames = f1 - f0;
        out.dim = dim;
        out.values.assign(values.begin() + static_cast<std::ptrdiff_t>(f0 * dim),
                          values.begin() + static_cast<std::ptrdiff_t>(f1 * dim));
        return out;
    }
};

// The full motion vector is the concatenation [body | face] per frame.
inline std::vector<double> concat_motion(const MotionSequence& m) {
    m.validate();
    std::vector<double> out;
    out.reserve(static_cast<std::size_t>(m.frames * m.total_width()));
    for (std::int64_t t = 0; t < m.frames; ++t) {
        out.insert(out.end(), m.body.begin() + static_cast<std::ptrdiff_t>(t * m.body_width()),
                   m.body.begin() + static_cast<std::ptrdiff_t>((t + 1) * m.body_width()));
        out.insert(out.end(), m.face.begin() + static_cast<std::ptrdiff_t>(t * m.face_width()),
                   m.face.begin() + static_cast<std::ptrdiff_t>((t + 1) * m.face_width()));
    }
    return out;
}

inline MotionSequence split_motion(std::int64_t frames, const std::vector<double>& concat,
                                   int J = 43, int E = 100, double fps = 30.0) {
    MotionSequence m;
    m.frames = frames;
    m.J = J;
    m.E = E;
    m.fps = fps;
    const int bw = m.body_width(), fw = m.face_width(), tw = m.total_width();
    if (concat.size() != static_cast<std::size_t>(frames * tw))
        throw ShapeError("split_motion: expected " + std::to_string(frames * tw) +
                         " values, got " + std::to_string(concat.size()));
    m.body.reserve(static_cast<std::size_t>(frames * bw));
    m.face.reserve(static_cast<std::size_t>(frames * fw));
    for (std::int64_t t = 0; t < frames; ++t) {
        const double* row = &concat[static_cast<std::size_t>(t * tw)];
        m.body.insert(m.body.end(), row, row + bw);
        m.face.insert(m.face.end(), row + bw, row + tw);
    }
    return m;
}

// Pairs body and face parts into one sequence; frame counts must agree.
inline MotionSequence make_motion(std::int64_t frames, std::vector<double> body,
                                  std::vector<double> face, int J = 43, int E = 100,
                                  double fps = 30.0) {
    MotionSequence m;
    m.frames = frames;
    m.J = J;
    m.E = E;
    m.fps = fps;
    if (body.size() != static_cast<std::size_t>(frames) * static_cast<std::size_t>(3 * J) ||
        face.size() != static_cast<std::size_t>(frames) * static_cast<std::size_t>(3 + E))
        throw ShapeError("make_motion: body/face frame counts disagree with frames=" +
                         std::to_string(frames));
    m.body = std::move(body);
    m.face = std::move(face);
    return m;
}

// One training window: N motion frames, aligned audio, the first M frames as
// the conditioning seed, and the speaker identity.
struct ClipSample {
    MotionSequence motion;
    AudioFeatureTrack audio;
    std::vector<double> seed;  // M x total_width, concat layout
    int seed_frames = 0;
    int speaker_id = 0;
};

struct DatasetSplit {
    std::vector<ClipSample> train, val, test;
};

// Sliding windows at stride N-M from frame 0; trailing frames beyond the
// last full window are dropped.
inline std::vector<ClipSample> window_clips(const MotionSequence& motion,
                                            const AudioFeatureTrack& audio, std::int64_t N,
                                            std::int64_t M, int speaker_id = 0) {
    if (motion.frames != audio.frames)
        throw ShapeError("window_clips: motion has " + std::to_string(motion.frames) +
                         " frames but audio has " + std::to_string(audio.frames));
    if (M < 0 || M >= N) throw ConfigError("window_clips: need 0 <= M < N");
    if (motion.frames < N)
        throw ShapeError("window_clips: sequence of " + std::to_string(motion.frames) +
                         " frames is shorter than one window of " + std::to_string(N) +
                         "; dataset would be empty");
    const std::int64_t stride = N - M;
    const std::int64_t count = (motion.frames - N) / stride + 1;
    std::vector<ClipSample> clips;
    clips.reserve(static_cast<std::size_t>(count));
    for (std::int64_t w = 0; w < count; ++w) {
        const std::int64_t f0 = w * stride;
        ClipSample clip;
        clip.motion = motion.slice(f0, f0 + N);
        clip.audio = audio.slice(f0, f0 + N);
        clip.seed = concat_motion(clip.motion.slice(0, M));
        clip.seed_frames = static_cast<int>(M);
        clip.speaker_id = speaker_id;
        clips.push_back(std::move(clip));
    }
    return clips;
}

// ---------------------------------------------------------------------------
// Binary file formats (little-endian; layout documented in README).
// ---------------------------------------------------------------------------

inline constexpr char kMotionMagic[8] = {'T', 'N', 'D', 'M', 'O', 'T', 'N', '1'};
inline constexpr char kFeatureMagic[8] = {'T', 'N', 'D', 'A', 'U', 'D', 'F', '1'};

inline void save_motion(const std::string& path, const MotionSequence& m) {
    m.validate();
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("motion file: cannot open for write: " + path);
    os.write(kMotionMagic, 8);
    detail::write_pod<std::uint32_t>(os, 1);
    detail::write_pod<std::uint64_t>(os, static_cast<std::uint64_t>(m.frames));
    detail::write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(m.J));
    detail::write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(m.E));
    detail::write_pod<double>(os, m.fps);
    auto flat = concat_motion(m);
    detail::write_doubles(os, flat);
    if (!os) throw IoError("motion file: write failed: " + path);
}

inline MotionSequence load_motion(const std::string& path, bool strict = true,
                                  int expect_J = 43, int expect_E = 100) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("motion file: cannot open: " + path);
    char magic[8];
    is.read(magic, 8);
    if (!is || std::memcmp(magic, kMotionMagic, 8) != 0)
        throw IoError("motion file: bad or missing header in " + path);
    const auto version = detail::read_pod<std::uint32_t>(is);
    if (version != 1) throw IoError("motion file: unsupported version");
    const auto frames = static_cast<std::int64_t>(detail::read_pod<std::uint64_t>(is));
    const int J = static_cast<int>(detail::read_pod<std::uint32_t>(is));
    const int E = static_cast<int>(detail::read_pod<std::uint32_t>(is));
    const double fps = detail::read_pod<double>(is);
    if (strict && (J != expect_J || E != expect_E))
        throw ShapeError("motion file: J=" + std::to_string(J) + " E=" + std::to_string(E) +
                         " does not match expected J=" + std::to_string(expect_J) +
                         " E=" + std::to_string(expect_E));
    std::vector<double> flat;
    detail::read_doubles(is, flat, static_cast<std::size_t>(frames * ((J + 1) * 3 + E)));
    return split_motion(frames, flat, J, E, fps);
}

inline void save_features(const std::string& path, const AudioFeatureTrack& a) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("feature file: cannot open for write: " + path);
    os.write(kFeatureMagic, 8);
    detail::write_pod<std::uint32_t>(os, 1);
    detail::write_pod<std::uint64_t>(os, static_cast<std::uint64_t>(a.frames));
    detail::write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(a.dim));
    detail::write_doubles(os, a.values);
    if (!os) throw IoError("feature file: write failed: " + path);
}

inline AudioFeatureTrack load_features(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("feature file: cannot open: " + path);
    char magic[8];
    is.read(magic, 8);
    if (!is || std::memcmp(magic, kFeatureMagic, 8) != 0)
        throw IoError("feature file: bad or missing header in " + path);
    const auto version = detail::read_pod<std::uint32_t>(is);
    if (version != 1) throw IoError("feature file: unsupported version");
    AudioFeatureTrack a;
    a.frames = static_cast<std::int64_t>(detail::read_pod<std::uint64_t>(is));
    a.dim = static_cast<int>(detail::read_pod<std::uint32_t>(is));
    detail::read_doubles(is, a.values, static_cast<std::size_t>(a.frames * a.dim));
    return a;
}

// ---------------------------------------------------------------------------
// Synthetic dataset. Audio is a band-limited random envelope; body motion is
// a speaker-dependent smooth function of low-pass filtered envelope taps;
// jaw rotation is envelope-gated oscillation; expressions are a fixed linear
// map of delayed envelope values. The construction guarantees a learnable
// audio-to-motion correlation and a nonzero face/body correlation.
// ---------------------------------------------------------------------------

struct SynthConfig {
    std::uint64_t seed = 1;
    int num_sequences = 16;
    std::int64_t frames_per_sequence = 124;
    int speakers = 4;
    int audio_dim = 16;
    int J = 43;
    int E = 100;
    double fps = 30.0;
};

struct SynthDataset {
    std::vector<MotionSequence> motions;
    std::vector<AudioFeatureTrack> audios;
    std::vector<int> speaker_ids;
};

namespace synth {

// One-pole low-pass; tau in seconds.
inline std::vector<double> lowpass(const std::vector<double>& x, double tau, double fps) {
    const double a = 1.0 - std::exp(-1.0 / (tau * fps));
    std::vector<double> y(x.size());
    double state = x.empty() ? 0.0 : x[0];
    for (std::size_t t = 0; t < x.size(); ++t) {
        state += a * (x[t] - state);
        y[t] = state;
    }
    return y;
}

inline double delayed(const std::vector<double>& x, std::int64_t t, std::int64_t d) {
    const std::int64_t i = t - d;
    return i < 0 ? 0.0 : x[static_cast<std::size_t>(i)];
}

// Band-limited random envelope in (0, 1]: a rectified mix of low-frequency
// sinusoids riding on a small floor, so speech-like bursts create onsets but
// no channel downstream ever goes exactly still.
inline std::vector<double> envelope(Rng& rng, std::int64_t frames, double fps) {
    constexpr int kComponents = 4;
    double freq[kComponents], phase[kComponents], amp[kComponents];
    double total = 0.0;
    for (int k = 0; k < kComponents; ++k) {
        freq[k] = rng.uniform(0.3, 2.5);
        phase[k] = rng.uniform(0.0, 6.283185307179586);
        amp[k] = rng.uniform(0.5, 1.0);
        total += amp[k];
    }
    std::vector<double> env(static_cast<std::size_t>(frames));
    for (std::int64_t t = 0; t < frames; ++t) {
        double v = 0.0;
        for (int k = 0; k < kComponents; ++k)
            v += amp[k] * std::sin(6.283185307179586 * freq[k] * static_cast<double>(t) / fps +
                                   phase[k]);
        env[static_cast<std::size_t>(t)] = 0.12 + 0.88 * std::max(0.0, v / total);
    }
    return env;
}

struct SpeakerStyle {
    std::vector<double> base_pose;  // 3*J
    std::vector<double> response;   // (3*J) x 3 mixing of envelope taps
    double jaw_amp = 0.4;
};

inline SpeakerStyle speaker_style(std::uint64_t seed, int speaker, int J) {
    Rng rng(mix64(seed, 0x5350u + static_cast<std::uint64_t>(speaker)));
    SpeakerStyle s;
    const int bw = 3 * J;
    s.base_pose.resize(static_cast<std::size_t>(bw));
    for (auto& v : s.base_pose) v = rng.uniform(-0.6, 0.6);
    s.response.resize(static_cast<std::size_t>(bw) * 3);
    for (auto& v : s.response) {
        const double mag = rng.uniform(0.1, 0.35);
        v = rng.uniform() < 0.5 ? -mag : mag;
    }
    s.jaw_amp = rng.uniform(0.35, 0.5);
    return s;
}

// Expression map is global (speaker-independent): E x 4 tap mixing.
inline std::vector<double> expression_map(std::uint64_t seed, int E) {
    Rng rng(mix64(seed, 0x45585052u));
    std::vector<double> map(static_cast<std::size_t>(E) * 4);
    for (auto& v : map) {
        const double mag = rng.uniform(0.05, 0.3);
        v = rng.uniform() < 0.5 ? -mag : mag;
    }
    return map;
}

// Deterministic envelope -> motion map; exposed separately so edge cases
// (for example an all-zero envelope) can be probed directly.
inline MotionSequence motion_from_envelope(const std::vector<double>& env,
                                           const SpeakerStyle& style,
                                           const std::vector<double>& expr_map, int J, int E,
                                           double fps) {
    const std::int64_t frames = static_cast<std::int64_t>(env.size());
    const int bw = 3 * J, fw = 3 + E;
    // Two low-passed taps plus one short-delay direct tap; the direct tap
    // keeps every body channel moving whenever the envelope moves.
    const auto g0 = lowpass(env, 0.25, fps);
    const auto g1 = lowpass(env, 0.45, fps);
    std::vector<double> g2(env.size());
    for (std::int64_t t = 0; t < frames; ++t)
        g2[static_cast<std::size_t>(t)] = delayed(env, t, 3);

    std::vector<double> body(static_cast<std::size_t>(frames * bw));
    std::vector<double> face(static_cast<std::size_t>(frames * fw));
    constexpr double kJawRate = 4.0;  // open/close cycles per second
    for (std::int64_t t = 0; t < frames; ++t) {
        const double taps[3] = {g0[static_cast<std::size_t>(t)] - 0.5,
                                g1[static_cast<std::size_t>(t)] - 0.5,
                                g2[static_cast<std::size_t>(t)] - 0.5};
        for (int j = 0; j < bw; ++j) {
            double v = style.base_pose[static_cast<std::size_t>(j)];
            for (int r = 0; r < 3; ++r)
                v += style.response[static_cast<std::size_t>(j * 3 + r)] * taps[r];
            body[static_cast<std::size_t>(t * bw + j)] = v;
        }
        const double e = env[static_cast<std::size_t>(t)];
        const double ph = 6.283185307179586 * kJawRate * static_cast<double>(t) / fps;
        face[static_cast<std::size_t>(t * fw + 0)] = style.jaw_amp * e * std::sin(ph);
        face[static_cast<std::size_t>(t * fw + 1)] = 0.5 * style.jaw_amp * e * std::sin(ph + 0.7);
        face[static_cast<std::size_t>(t * fw + 2)] = 0.3 * style.jaw_amp * e * std::sin(ph + 1.4);
        for (int x = 0; x < E; ++x) {
            double v = 0.0;
            for (int k = 0; k < 4; ++k)
                v += expr_map[static_cast<std::size_t>(x * 4 + k)] * delayed(env, t, 2 * k);
            face[static_cast<std::size_t>(t * fw + 3 + x)] = v;
        }
    }
    return make_motion(frames, std::move(body), std::move(face), J, E, fps);
}

inline AudioFeatureTrack features_from_envelope(const std::vector<double>& env, Rng& rng,
                                                int dim, double fps) {
    AudioFeatureTrack a;
    a.frames = static_cast<std::int64_t>(env.size());
    a.dim = dim;
    a.values.resize(static_cast<std::size_t>(a.frames * dim));
    std::vector<double> noise(env.size());
    for (auto& v : noise) v = rng.uniform(-1.0, 1.0);
    const auto smooth_noise = lowpass(noise, 0.2, fps);
    for (std::int64_t t = 0; t < a.frames; ++t) {
        a.values[static_cast<std::size_t>(t * dim)] = env[static_cast<std::size_t>(t)];
        for (int c = 1; c < dim; ++c)
            a.values[static_cast<std::size_t>(t * dim + c)] =
                delayed(env, t, c) + 0.02 * delayed(smooth_noise, t, c % 5);
    }
    return a;
}

}  // namespace synth

inline SynthDataset synth_dataset(const SynthConfig& cfg) {
    if (cfg.speakers < 1) throw ConfigError("synth_dataset: need at least one speaker");
    SynthDataset data;
    const auto expr_map = synth::expression_map(cfg.seed, cfg.E);
    std::vector<synth::SpeakerStyle> styles;
    for (int s = 0; s < cfg.speakers; ++s)
        styles.push_back(synth::speaker_style(cfg.seed, s, cfg.J));
    for (int i = 0; i < cfg.num_sequences; ++i) {
        Rng rng(mix64(cfg.seed, 0x53455100u + static_cast<std::uint64_t>(i)));
        const int speaker = i % cfg.speakers;
        const auto env = synth::envelope(rng, cfg.frames_per_sequence, cfg.fps);
        data.motions.push_back(synth::motion_from_envelope(env, styles[static_cast<std::size_t>(
                                                                    speaker)],
                                                           expr_map, cfg.J, cfg.E, cfg.fps));
        data.audios.push_back(synth::features_from_envelope(env, rng, cfg.audio_dim, cfg.fps));
        data.speaker_ids.push_back(speaker);
    }
    return data;
}

// Sequence-level split by configurable proportions (default 80/10/10), then
// windowed into clips. Sequences are disjoint across splits by construction.
inline DatasetSplit split_dataset(const SynthDataset& data, std::int64_t N, std::int64_t M,
                                  double train_frac = 0.8, double val_frac = 0.1) {
    DatasetSplit split;
    const int n = static_cast<int>(data.motions.size());
    const int n_train = static_cast<int>(std::floor(train_frac * n));
    const int n_val = static_cast<int>(std::floor((train_frac + val_frac) * n)) - n_train;
    for (int i = 0; i < n; ++i) {
        auto clips = window_clips(data.motions[static_cast<std::size_t>(i)],
                                  data.audios[static_cast<std::size_t>(i)], N, M,
                                  data.speaker_ids[static_cast<std::size_t>(i)]);
        auto& bucket = (i < n_train) ? split.train : (i < n_train + n_val) ? split.val
                                                                           : split.test;
        for (auto& c : clips) bucket.push_back(std::move(c));
    }
    return split;
}

}  // namespace tandem
