// Copyright (c) 2026 The Tandem Authors
// SPDX-License-Identifier: Apache-2.0
//
// The denoiser: per-modality projections into a shared latent space, prefix
// conditioning tokens, a transformer encoder/decoder whose block weights are
// shared between the face and body passes, and four cross-modal adapter
// modules per block. Ablation variants (separate / combined / split) reuse
// the same machinery.

#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "tandem/data.hpp"
#include "tandem/diffusion.hpp"
#include "tandem/errors.hpp"
#include "tandem/ops.hpp"
#include "tandem/params.hpp"
#include "tandem/rng.hpp"
#include "tandem/tensor.hpp"

namespace tandem {

enum class Variant { joint_adapters, separate, combined, split };

inline Variant parse_variant(const std::string& s) {
    if (s == "joint_adapters") return Variant::joint_adapters;
    if (s == "separate") return Variant::separate;
    if (s == "combined") return Variant::combined;
    if (s == "split") return Variant::split;
    throw ConfigError("unknown variant: " + s +
                      " (expected joint_adapters|separate|combined|split)");
}

inline std::string variant_name(Variant v) {
    switch (v) {
        case Variant::joint_adapters: return "joint_adapters";
        case Variant::separate: return "separate";
        case Variant::combined: return "combined";
        case Variant::split: return "split";
    }
    return "?";
}

struct ModelConfig {
    // Architecture.
    int d = 64;
    int heads = 4;
    int L_e = 2;
    int L_d = 2;
    int K = 8;    // adapter latent tokens
    int d_b = 8;  // adapter bottleneck width
    // Data dimensions.
    int N = 34;
    int M = 4;
    int J = 43;
    int E = 100;
    int D_a = 16;
    int S = 4;
    // Diffusion.
    int T = 500;
    double beta_start = 1e-4;
    double beta_end = 0.02;
    std::string reverse_variance = "beta_tilde";
    // Wiring.
    Variant variant = Variant::joint_adapters;
    // Audio conditioning route: "pooled" = one mean-pooled prefix token,
    // "tokens" = N per-frame prefix tokens, "add" = pooled prefix token plus
    // frame-aligned additive injection into the motion latents.
    std::string audio_mode = "pooled";
    // Seed conditioning route: "tokens" = the M prefix tokens only, "add" =
    // prefix tokens plus additive injection into the first M motion latents
    // (the seed pins the initial pose much more reliably this way).
    std::string seed_mode = "add";
    std::string head_init = "zero";    // output projections: zero | random

    int body_width() const { return 3 * J; }
    int face_width() const { return 3 + E; }
    int motion_width() const { return body_width() + face_width(); }
    int prefix_tokens() const { return audio_mode == "tokens" ? M + N + 1 : M + 2; }
    int tokens() const { return prefix_tokens() + N; }

    void validate() const {
        if (d < 1 || heads < 1 || d % heads != 0)
            throw ConfigError("model: d must be positive and divisible by heads");
        if (L_e < 1 || L_d < 1) throw ConfigError("model: need at least one block per stack");
        if (K < 1 || d_b < 1) throw ConfigError("model: K and d_b must be positive");
        if (M < 1 || M >= N) throw ConfigError("model: need 1 <= M < N");
        if (S < 1 || D_a < 1 || J < 1 || E < 0) throw ConfigError("model: bad data dims");
        if (T < 1) throw ConfigError("model: T must be positive");
        if (head_init != "zero" && head_init != "random")
            throw ConfigError("model: head_init must be zero|random");
        if (audio_mode != "pooled" && audio_mode != "tokens" && audio_mode != "add")
            throw ConfigError("model: audio_mode must be pooled|tokens|add");
        if (seed_mode != "tokens" && seed_mode != "add")
            throw ConfigError("model: seed_mode must be tokens|add");
        parse_reverse_variance(reverse_variance);
    }

    DiffusionSchedule schedule() const { return build_schedule("linear", T, beta_start, beta_end); }

    std::string to_text() const {
        std::ostringstream os;
        os << "audio_mode=" << audio_mode << "\n";
        os << "beta_end=" << beta_end << "\n";
        os << "beta_start=" << beta_start << "\n";
        os << "d=" << d << "\n";
        os << "d_a=" << D_a << "\n";
        os << "d_b=" << d_b << "\n";
        os << "e=" << E << "\n";
        os << "head_init=" << head_init << "\n";
        os << "heads=" << heads << "\n";
        os << "j=" << J << "\n";
        os << "k=" << K << "\n";
        os << "l_d=" << L_d << "\n";
        os << "l_e=" << L_e << "\n";
        os << "m=" << M << "\n";
        os << "n=" << N << "\n";
        os << "reverse_variance=" << reverse_variance << "\n";
        os << "s=" << S << "\n";
        os << "seed_mode=" << seed_mode << "\n";
        os << "t=" << T << "\n";
        os << "variant=" << variant_name(variant) << "\n";
        return os.str();
    }

    bool apply_key(const std::string& key, const std::string& value) {
        auto to_int = [&](const std::string& v) { return std::stoi(v); };
        auto to_double = [&](const std::string& v) { return std::stod(v); };
        if (key == "d") d = to_int(value);
        else if (key == "heads") heads = to_int(value);
        else if (key == "l_e") L_e = to_int(value);
        else if (key == "l_d") L_d = to_int(value);
        else if (key == "k") K = to_int(value);
        else if (key == "d_b") d_b = to_int(value);
        else if (key == "n") N = to_int(value);
        else if (key == "m") M = to_int(value);
        else if (key == "j") J = to_int(value);
        else if (key == "e") E = to_int(value);
        else if (key == "d_a") D_a = to_int(value);
        else if (key == "s") S = to_int(value);
        else if (key == "t") T = to_int(value);
        else if (key == "beta_start") beta_start = to_double(value);
        else if (key == "beta_end") beta_end = to_double(value);
        else if (key == "reverse_variance") reverse_variance = value;
        else if (key == "variant") variant = parse_variant(value);
        else if (key == "audio_mode") audio_mode = value;
        else if (key == "seed_mode") seed_mode = value;
        else if (key == "head_init") head_init = value;
        else return false;
        return true;
    }

    static ModelConfig from_text(const std::string& text, bool ignore_unknown = false) {
        ModelConfig cfg;
        std::istringstream is(text);
        std::string line;
        while (std::getline(is, line)) {
            if (line.empty() || line[0] == '#') continue;
            const auto eq = line.find('=');
            if (eq == std::string::npos) throw ConfigError("config: bad line: " + line);
            const std::string key = line.substr(0, eq);
            const std::string value = line.substr(eq + 1);
            if (!cfg.apply_key(key, value) && !ignore_unknown)
                throw ConfigError("config: unknown key: " + key);
        }
        cfg.validate();
        return cfg;
    }

    std::uint64_t hash() const { return fnv1a64(to_text()); }
};

// The paper-shaped configuration used for the parameter-ratio comparison;
// far too large to train here, cheap to count.
inline ModelConfig paper_shaped_config() {
    ModelConfig cfg;
    cfg.d = 512;
    cfg.heads = 8;
    cfg.L_e = 4;
    cfg.L_d = 4;
    cfg.K = 8;
    cfg.d_b = 64;
    cfg.D_a = 1024;  // external speech-encoder feature width before projection
    return cfg;
}

// Conditioning bundle: seed motion frames, the aligned audio feature window,
// the speaker identity, and the diffusion timestep.
struct Conditioning {
    std::vector<double> seed;  // M x motion_width, concat layout
    int seed_frames = 0;
    AudioFeatureTrack audio;
    int speaker_id = 0;
    int t = 1;
};

inline Conditioning conditioning_from_clip(const ClipSample& clip, int t) {
    Conditioning c;
    c.seed = clip.seed;
    c.seed_frames = clip.seed_frames;
    c.audio = clip.audio;
    c.speaker_id = clip.speaker_id;
    c.t = t;
    return c;
}

namespace netdetail {

enum class Init { weight, bias, gain, table, zero, head };

using ParamFn = std::function<void(const std::string&, const Shape&, Init)>;

inline void enum_linear(const ParamFn& fn, const std::string& name, std::int64_t in,
                        std::int64_t out, Init w_init = Init::weight) {
    fn(name + ".w", {in, out}, w_init);
    fn(name + ".b", {out}, w_init == Init::zero ? Init::zero : Init::bias);
}

inline void enum_ln(const ParamFn& fn, const std::string& name, std::int64_t d) {
    fn(name + ".g", {d}, Init::gain);
    fn(name + ".b", {d}, Init::bias);
}

inline void enum_block(const ParamFn& fn, const std::string& p, const ModelConfig& cfg) {
    const std::int64_t d = cfg.d;
    enum_ln(fn, p + ".ln1", d);
    enum_linear(fn, p + ".attn.q", d, d);
    enum_linear(fn, p + ".attn.k", d, d);
    enum_linear(fn, p + ".attn.v", d, d);
    enum_linear(fn, p + ".attn.o", d, d);
    enum_ln(fn, p + ".ln2", d);
    enum_linear(fn, p + ".ff.1", d, 4 * d);
    enum_linear(fn, p + ".ff.2", 4 * d, d);
}

inline void enum_adapter(const ParamFn& fn, const std::string& p, const ModelConfig& cfg) {
    fn(p + ".latent", {cfg.K, cfg.d}, Init::table);
    enum_linear(fn, p + ".down", cfg.d, cfg.d_b);
    enum_linear(fn, p + ".hid", cfg.d_b, cfg.d_b);
    // Zero-initialized upsample: the adapter is a no-op until trained.
    enum_linear(fn, p + ".up", cfg.d_b, cfg.d, Init::zero);
}

inline void enum_conditioning(const ParamFn& fn, const std::string& p, const ModelConfig& cfg) {
    enum_linear(fn, p + "cond.seed", cfg.motion_width(), cfg.d);
    enum_linear(fn, p + "cond.audio", cfg.D_a, cfg.d);
    fn(p + "cond.speaker", {cfg.S, cfg.d}, Init::table);
    enum_linear(fn, p + "cond.time", cfg.d, cfg.d);
}

inline void enum_stacks(const ParamFn& fn, const std::string& p, const ModelConfig& cfg,
                        int adapters_per_block) {
    auto blocks = [&](const std::string& stack, int count) {
        for (int i = 0; i < count; ++i) {
            const std::string bp = p + stack + "." + std::to_string(i);
            enum_block(fn, bp, cfg);
            if (adapters_per_block == 1) {
                enum_adapter(fn, bp + ".ad.att", cfg);
                enum_adapter(fn, bp + ".ad.ff", cfg);
            } else if (adapters_per_block == 2) {
                enum_adapter(fn, bp + ".ad.face.att", cfg);
                enum_adapter(fn, bp + ".ad.face.ff", cfg);
                enum_adapter(fn, bp + ".ad.body.att", cfg);
                enum_adapter(fn, bp + ".ad.body.ff", cfg);
            }
        }
    };
    blocks("enc", cfg.L_e);
    enum_ln(fn, p + "mid_ln", cfg.d);
    blocks("dec", cfg.L_d);
    enum_ln(fn, p + "post_ln", cfg.d);
    enum_linear(fn, p + "mlp.1", cfg.d, cfg.d);
    enum_linear(fn, p + "mlp.2", cfg.d, cfg.d);
}

// One complete single-modality denoiser column. adapters_per_block: 0 for
// separate/combined, 1 for split (the branch hosts its own two adapters).
inline void enum_net(const ParamFn& fn, const std::string& p, const ModelConfig& cfg,
                     std::int64_t in_width, std::int64_t out_width, int adapters_per_block) {
    enum_conditioning(fn, p, cfg);
    enum_linear(fn, p + "in.s1", in_width, cfg.d);
    enum_linear(fn, p + "in.s2", cfg.d, cfg.d);
    enum_stacks(fn, p, cfg, adapters_per_block);
    enum_linear(fn, p + "out", cfg.d, out_width, Init::head);
}

inline void enumerate_params(const ModelConfig& cfg, const ParamFn& fn) {
    switch (cfg.variant) {
        case Variant::joint_adapters:
            // One shared backbone; per-modality projections; four adapters
            // per block.
            enum_conditioning(fn, "", cfg);
            enum_linear(fn, "in.face.s1", cfg.face_width(), cfg.d);
            enum_linear(fn, "in.face.s2", cfg.d, cfg.d);
            enum_linear(fn, "in.body.s1", cfg.body_width(), cfg.d);
            enum_linear(fn, "in.body.s2", cfg.d, cfg.d);
            enum_stacks(fn, "", cfg, 2);
            enum_linear(fn, "out.face", cfg.d, cfg.face_width(), Init::head);
            enum_linear(fn, "out.body", cfg.d, cfg.body_width(), Init::head);
            break;
        case Variant::separate:
            enum_net(fn, "face.", cfg, cfg.face_width(), cfg.face_width(), 0);
            enum_net(fn, "body.", cfg, cfg.body_width(), cfg.body_width(), 0);
            break;
        case Variant::combined:
            enum_net(fn, "comb.", cfg, cfg.motion_width(), cfg.motion_width(), 0);
            break;
        case Variant::split:
            enum_net(fn, "face.", cfg, cfg.face_width(), cfg.face_width(), 1);
            enum_net(fn, "body.", cfg, cfg.body_width(), cfg.body_width(), 1);
            break;
    }
}

}  // namespace netdetail

// Exact trainable scalar count for a variant at a given shared config.
inline std::int64_t count_params(ModelConfig cfg, Variant variant) {
    cfg.variant = variant;
    cfg.validate();
    std::int64_t total = 0;
    netdetail::enumerate_params(cfg, [&](const std::string&, const Shape& s, netdetail::Init) {
        total += shape_numel(s);
    });
    return total;
}

// Cross-modal adapter: latent tokens attend over the other branch, the
// summary is fused into the host branch by a second attention, and a
// down/act/hidden/up bottleneck produces an additive residual.
inline Tensor adapter_forward(const Tensor& self_seq, const Tensor& other_seq,
                              const ParamStore& params, const std::string& p) {
    if (self_seq.cols() != other_seq.cols())
        throw ShapeError("adapter: branch width mismatch " + shape_str(self_seq.shape()) +
                         " vs " + shape_str(other_seq.shape()));
    const Tensor& latent = params.get(p + ".latent");
    Tensor summary = scaled_dot_attention(latent, other_seq, other_seq);
    Tensor fused = scaled_dot_attention(self_seq, summary, summary);
    Tensor h = gelu(apply_linear(fused, params.get(p + ".down.w"), params.get(p + ".down.b")));
    h = apply_linear(h, params.get(p + ".hid.w"), params.get(p + ".hid.b"));
    return apply_linear(h, params.get(p + ".up.w"), params.get(p + ".up.b"));
}

class Denoiser {
public:
    explicit Denoiser(ModelConfig cfg, std::uint64_t init_seed = 1)
        : cfg_(std::move(cfg)) {
        cfg_.validate();
        Rng rng(mix64(init_seed, 0x494e4954ULL));
        netdetail::enumerate_params(cfg_, [&](const std::string& name, const Shape& shape,
                                              netdetail::Init kind) {
            params_.add(name, init_tensor(rng, shape, kind));
        });
        pos_enc_ = positional_encoding(cfg_.tokens(), cfg_.d);
    }

    Denoiser(ModelConfig cfg, ParamStore params) : cfg_(std::move(cfg)), params_(std::move(params)) {
        cfg_.validate();
        // Checkpointed parameter sets must line up with the architecture.
        std::size_t expected = 0;
        netdetail::enumerate_params(cfg_, [&](const std::string& name, const Shape& shape,
                                              netdetail::Init) {
            if (!params_.contains(name))
                throw ConfigError("checkpoint is missing parameter " + name);
            if (params_.get(name).shape() != shape)
                throw ShapeError("checkpoint parameter " + name + " has shape " +
                                 shape_str(params_.get(name).shape()) + ", expected " +
                                 shape_str(shape));
            ++expected;
        });
        if (expected != params_.size())
            throw ConfigError("checkpoint carries extra parameters for this config");
        pos_enc_ = positional_encoding(cfg_.tokens(), cfg_.d);
    }

    const ModelConfig& config() const { return cfg_; }
    ParamStore& params() { return params_; }
    const ParamStore& params() const { return params_; }
    std::int64_t param_count() const { return params_.total_count(); }

    // Skips the adapter residuals entirely, leaving the plain shared
    // backbone; the reference point for the adapter no-op checks.
    void set_adapters_enabled(bool enabled) { adapters_enabled_ = enabled; }
    bool adapters_enabled() const { return adapters_enabled_; }

    // Prefix conditioning tokens: M projected seed frames, the audio token(s),
    // and one fused speaker+timestep token. Identical for both branches.
    Tensor embed_conditioning(const Conditioning& c, const std::string& p = "") const {
        if (c.speaker_id < 0 || c.speaker_id >= cfg_.S)
            throw ConfigError("unknown speaker_id " + std::to_string(c.speaker_id) +
                              " (S=" + std::to_string(cfg_.S) + ")");
        if (c.seed_frames != cfg_.M ||
            c.seed.size() != static_cast<std::size_t>(cfg_.M * cfg_.motion_width()))
            throw ShapeError("conditioning seed must be M=" + std::to_string(cfg_.M) +
                             " x " + std::to_string(cfg_.motion_width()) + " frames");
        if (c.audio.frames != cfg_.N || c.audio.dim != cfg_.D_a)
            throw ShapeError("conditioning audio must be N=" + std::to_string(cfg_.N) +
                             " x D_a=" + std::to_string(cfg_.D_a));
        if (c.t < 1 || c.t > cfg_.T)
            throw ConfigError("conditioning timestep outside schedule");

        Tensor seed = Tensor::from({cfg_.M, cfg_.motion_width()}, c.seed);
        Tensor seed_tokens =
            apply_linear(seed, params_.get(p + "cond.seed.w"), params_.get(p + "cond.seed.b"));

        Tensor audio = Tensor::from({cfg_.N, cfg_.D_a}, c.audio.values);
        Tensor audio_tokens =
            apply_linear(audio, params_.get(p + "cond.audio.w"), params_.get(p + "cond.audio.b"));
        if (cfg_.audio_mode != "tokens") audio_tokens = mean_rows(audio_tokens);

        Tensor speaker = slice_rows(params_.get(p + "cond.speaker"), c.speaker_id,
                                    c.speaker_id + 1);
        Tensor time_in = Tensor::from({1, cfg_.d},
                                      sinusoidal_embedding(static_cast<double>(c.t), cfg_.d));
        Tensor fused = add(speaker, apply_linear(time_in, params_.get(p + "cond.time.w"),
                                                 params_.get(p + "cond.time.b")));
        return concat_rows({seed_tokens, audio_tokens, fused});
    }

    // Two-stage projection of one modality into the shared latent width.
    Tensor project_in(const Tensor& x, const std::string& p) const {
        Tensor h = apply_linear(x, params_.get(p + ".s1.w"), params_.get(p + ".s1.b"));
        return apply_linear(h, params_.get(p + ".s2.w"), params_.get(p + ".s2.b"));
    }

    // Frame-aligned additive audio injection ("add" mode): the projected
    // audio features land directly on the motion tokens.
    Tensor audio_injection(const Conditioning& c, const std::string& cond_prefix) const {
        Tensor audio = Tensor::from({cfg_.N, cfg_.D_a}, c.audio.values);
        return apply_linear(audio, params_.get(cond_prefix + "cond.audio.w"),
                            params_.get(cond_prefix + "cond.audio.b"));
    }

    // Additive seed injection onto the first M motion tokens (same projection
    // that builds the seed prefix tokens).
    Tensor inject_seed(const Tensor& proj, const Conditioning& c,
                       const std::string& cond_prefix) const {
        Tensor seed = Tensor::from({cfg_.M, cfg_.motion_width()}, c.seed);
        Tensor tokens = apply_linear(seed, params_.get(cond_prefix + "cond.seed.w"),
                                     params_.get(cond_prefix + "cond.seed.b"));
        Tensor head = add(slice_rows(proj, 0, cfg_.M), tokens);
        return concat_rows({head, slice_rows(proj, cfg_.M, cfg_.N)});
    }

    // Pre-norm transformer block applied to both branches with shared or
    // per-branch weights; branch states are exchanged at each of the two
    // adapter insertion points (parallel residuals beside attention and the
    // feed-forward).
    std::pair<Tensor, Tensor> block_pair(const Tensor& f, const Tensor& b,
                                         const std::string& bp_f, const std::string& bp_b,
                                         const std::string& ad_f_att, const std::string& ad_f_ff,
                                         const std::string& ad_b_att,
                                         const std::string& ad_b_ff) const {
        Tensor hf = block_ln(f, bp_f + ".ln1");
        Tensor hb = block_ln(b, bp_b + ".ln1");
        Tensor att_f = block_attention(hf, bp_f);
        Tensor att_b = block_attention(hb, bp_b);
        Tensor f1 = add(f, att_f);
        Tensor b1 = add(b, att_b);
        if (!ad_f_att.empty()) f1 = add(f1, adapter_forward(hf, hb, params_, ad_f_att));
        if (!ad_b_att.empty()) b1 = add(b1, adapter_forward(hb, hf, params_, ad_b_att));

        Tensor gf = block_ln(f1, bp_f + ".ln2");
        Tensor gb = block_ln(b1, bp_b + ".ln2");
        Tensor f2 = add(f1, block_ff(gf, bp_f));
        Tensor b2 = add(b1, block_ff(gb, bp_b));
        if (!ad_f_ff.empty()) f2 = add(f2, adapter_forward(gf, gb, params_, ad_f_ff));
        if (!ad_b_ff.empty()) b2 = add(b2, adapter_forward(gb, gf, params_, ad_b_ff));
        return {f2, b2};
    }

    // Full denoising pass: noisy face (N x 103) and body (N x 129) in, clean
    // predictions out.
    std::pair<Tensor, Tensor> forward(const Tensor& x_face, const Tensor& x_body,
                                      const Conditioning& c) const {
        check_input(x_face, cfg_.face_width(), "face");
        check_input(x_body, cfg_.body_width(), "body");
        switch (cfg_.variant) {
            case Variant::joint_adapters:
                return forward_paired(x_face, x_body, c, /*shared=*/true);
            case Variant::split:
                return forward_paired(x_face, x_body, c, /*shared=*/false);
            case Variant::separate:
                return {forward_single(x_face, c, "face."),
                        forward_single(x_body, c, "body.")};
            case Variant::combined: {
                Tensor x = concat_cols(x_body, x_face);
                Tensor y = forward_single(x, c, "comb.");
                Tensor body = slice_cols(y, 0, cfg_.body_width());
                Tensor face = slice_cols(y, cfg_.body_width(), cfg_.motion_width());
                return {face, body};
            }
        }
        throw ConfigError("unreachable variant");
    }

    // Adapter for the training loop.
    DenoiseGraph graph() const {
        return [this](const Tensor& xf, const Tensor& xb, const ClipSample& clip, int t) {
            return forward(xf, xb, conditioning_from_clip(clip, t));
        };
    }

    // Pure-inference callable over flat vectors (no graph construction).
    std::function<std::pair<std::vector<double>, std::vector<double>>(
        const std::vector<double>&, const std::vector<double>&, const Conditioning&)>
    sample_fn() const {
        return [this](const std::vector<double>& xf, const std::vector<double>& xb,
                      const Conditioning& c) {
            NoGradGuard no_grad;
            Tensor tf = Tensor::from({cfg_.N, cfg_.face_width()}, xf);
            Tensor tb = Tensor::from({cfg_.N, cfg_.body_width()}, xb);
            auto [of, ob] = forward(tf, tb, c);
            return std::make_pair(of.values(), ob.values());
        };
    }

private:
    static Tensor init_tensor(Rng& rng, const Shape& shape, netdetail::Init kind) {
        switch (kind) {
            case netdetail::Init::weight:
                return init_uniform(rng, shape, 1.0 / std::sqrt(static_cast<double>(shape[0])));
            case netdetail::Init::bias:
                return Tensor::zeros(shape, true);
            case netdetail::Init::gain: {
                std::vector<double> ones(static_cast<std::size_t>(shape_numel(shape)), 1.0);
                return Tensor::from(shape, std::move(ones), true);
            }
            case netdetail::Init::table:
                return init_uniform(rng, shape,
                                    1.0 / std::sqrt(static_cast<double>(shape.back())));
            case netdetail::Init::zero:
                return Tensor::zeros(shape, true);
            case netdetail::Init::head:
                // Zero by default so an untrained model predicts the zero
                // sample; random init is kept for gradient checking.
                return Tensor::zeros(shape, true);
        }
        throw ConfigError("unreachable init kind");
    }

    void check_input(const Tensor& x, int width, const char* what) const {
        if (x.shape().size() != 2 || x.rows() != cfg_.N || x.cols() != width)
            throw ShapeError(std::string("denoiser: ") + what + " input must be [" +
                             std::to_string(cfg_.N) + "x" + std::to_string(width) + "], got " +
                             shape_str(x.shape()));
    }

    Tensor block_ln(const Tensor& x, const std::string& name) const {
        return layer_norm(x, params_.get(name + ".g"), params_.get(name + ".b"));
    }

    Tensor block_attention(const Tensor& h, const std::string& bp) const {
        Tensor q = apply_linear(h, params_.get(bp + ".attn.q.w"), params_.get(bp + ".attn.q.b"));
        Tensor k = apply_linear(h, params_.get(bp + ".attn.k.w"), params_.get(bp + ".attn.k.b"));
        Tensor v = apply_linear(h, params_.get(bp + ".attn.v.w"), params_.get(bp + ".attn.v.b"));
        return multi_head_attention(q, k, v, cfg_.heads, params_.get(bp + ".attn.o.w"),
                                    params_.get(bp + ".attn.o.b"));
    }

    Tensor block_ff(const Tensor& h, const std::string& bp) const {
        Tensor u = gelu(apply_linear(h, params_.get(bp + ".ff.1.w"), params_.get(bp + ".ff.1.b")));
        return apply_linear(u, params_.get(bp + ".ff.2.w"), params_.get(bp + ".ff.2.b"));
    }

    Tensor finish_tokens(const Tensor& x, const std::string& p) const {
        Tensor h = layer_norm(x, params_.get(p + "post_ln.g"), params_.get(p + "post_ln.b"));
        Tensor u = gelu(apply_linear(h, params_.get(p + "mlp.1.w"), params_.get(p + "mlp.1.b")));
        return apply_linear(u, params_.get(p + "mlp.2.w"), params_.get(p + "mlp.2.b"));
    }

    std::pair<Tensor, Tensor> forward_paired(const Tensor& x_face, const Tensor& x_body,
                                             const Conditioning& c, bool shared) const {
        const std::string pf = shared ? "" : "face.";
        const std::string pb = shared ? "" : "body.";
        Tensor prefix_f = embed_conditioning(c, pf);
        Tensor prefix_b = shared ? prefix_f : embed_conditioning(c, pb);

        const std::string in_f = shared ? "in.face" : "face.in";
        const std::string in_b = shared ? "in.body" : "body.in";
        Tensor proj_f = project_in(x_face, in_f);
        Tensor proj_b = project_in(x_body, in_b);
        if (cfg_.audio_mode == "add") {
            proj_f = add(proj_f, audio_injection(c, pf));
            proj_b = add(proj_b, audio_injection(c, pb));
        }
        if (cfg_.seed_mode == "add") {
            proj_f = inject_seed(proj_f, c, pf);
            proj_b = inject_seed(proj_b, c, pb);
        }
        Tensor f = add(concat_rows({prefix_f, proj_f}), pos_enc_);
        Tensor b = add(concat_rows({prefix_b, proj_b}), pos_enc_);

        auto run_stack = [&](const std::string& stack, int count, Tensor& fs, Tensor& bs) {
            for (int i = 0; i < count; ++i) {
                const std::string id = stack + "." + std::to_string(i);
                const std::string bf = pf + id;
                const std::string bb = pb + id;
                std::string af_att, af_ff, ab_att, ab_ff;
                if (adapters_enabled_) {
                    if (shared) {
                        af_att = id + ".ad.face.att";
                        af_ff = id + ".ad.face.ff";
                        ab_att = id + ".ad.body.att";
                        ab_ff = id + ".ad.body.ff";
                    } else {
                        af_att = bf + ".ad.att";
                        af_ff = bf + ".ad.ff";
                        ab_att = bb + ".ad.att";
                        ab_ff = bb + ".ad.ff";
                    }
                }
                std::tie(fs, bs) = block_pair(fs, bs, bf, bb, af_att, af_ff, ab_att, ab_ff);
            }
        };
        run_stack("enc", cfg_.L_e, f, b);
        f = layer_norm(f, params_.get(pf + "mid_ln.g"), params_.get(pf + "mid_ln.b"));
        b = layer_norm(b, params_.get(pb + "mid_ln.g"), params_.get(pb + "mid_ln.b"));
        run_stack("dec", cfg_.L_d, f, b);
        f = finish_tokens(f, pf);
        b = finish_tokens(b, pb);

        const std::int64_t P = cfg_.prefix_tokens();
        f = slice_rows(f, P, P + cfg_.N);
        b = slice_rows(b, P, P + cfg_.N);
        const std::string out_pf = shared ? "out.face" : "face.out";
        const std::string out_pb = shared ? "out.body" : "body.out";
        Tensor out_f = apply_linear(f, params_.get(out_pf + ".w"), params_.get(out_pf + ".b"));
        Tensor out_b = apply_linear(b, params_.get(out_pb + ".w"), params_.get(out_pb + ".b"));
        return {out_f, out_b};
    }

    Tensor forward_single(const Tensor& x, const Conditioning& c, const std::string& p) const {
        Tensor prefix = embed_conditioning(c, p);
        Tensor proj = project_in(x, p + "in");
        if (cfg_.audio_mode == "add") proj = add(proj, audio_injection(c, p));
        if (cfg_.seed_mode == "add") proj = inject_seed(proj, c, p);
        Tensor h = add(concat_rows({prefix, proj}), pos_enc_);
        auto run_stack = [&](const std::string& stack, int count, Tensor& s) {
            for (int i = 0; i < count; ++i) {
                const std::string bp = p + stack + "." + std::to_string(i);
                Tensor n1 = block_ln(s, bp + ".ln1");
                s = add(s, block_attention(n1, bp));
                Tensor n2 = block_ln(s, bp + ".ln2");
                s = add(s, block_ff(n2, bp));
            }
        };
        run_stack("enc", cfg_.L_e, h);
        h = layer_norm(h, params_.get(p + "mid_ln.g"), params_.get(p + "mid_ln.b"));
        run_stack("dec", cfg_.L_d, h);
        h = finish_tokens(h, p);
        const std::int64_t P = cfg_.prefix_tokens();
        h = slice_rows(h, P, P + cfg_.N);
        return apply_linear(h, params_.get(p + "out.w"), params_.get(p + "out.b"));
    }

    ModelConfig cfg_;
    ParamStore params_;
    Tensor pos_enc_;
    bool adapters_enabled_ = true;
};

// Randomized output-head weights for gradient checking; zero heads (the
// default) deliberately block gradient flow upstream at initialization.
inline void randomize_heads(Denoiser& net, std::uint64_t seed) {
    Rng rng(mix64(seed, 0x48454144ULL));
    for (const auto& name : net.params().names()) {
        if (name.find("out.") == std::string::npos || !name.ends_with(".w")) continue;
        Tensor& t = net.params().get(name);
        const double bound = 1.0 / std::sqrt(static_cast<double>(t.shape()[0]));
        for (auto& v : t.values()) v = rng.uniform(-bound, bound);
    }
}

}  // namespace tandem
