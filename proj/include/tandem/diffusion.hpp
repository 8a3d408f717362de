// Copyright (c) 2026 The Tandem Authors
// SPDX-License-Identifier: Apache-2.0
//
// DDPM machinery: variance schedule, closed-form forward noising, the
// sample-prediction posterior step, and the training losses.

#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <iostream>
#include <string>
#include <vector>

#include "tandem/data.hpp"
#include "tandem/errors.hpp"
#include "tandem/params.hpp"
#include "tandem/rng.hpp"
#include "tandem/tensor.hpp"

namespace tandem {

// Which reverse-process variance to use. The posterior form
// beta_tilde_t = (1 - abar_{t-1}) / (1 - abar_t) * beta_t is the default;
// the plain beta_t form is exposed as an alternative and produces visibly
// noisier samples on toy data.
enum class ReverseVariance { beta_tilde, beta };

inline ReverseVariance parse_reverse_variance(const std::string& s) {
    if (s == "beta_tilde") return ReverseVariance::beta_tilde;
    if (s == "beta") return ReverseVariance::beta;
    throw ConfigError("unknown reverse variance kind: " + s);
}

struct DiffusionSchedule {
    int T = 0;
    std::vector<double> beta;       // index t-1 for t in [1, T]
    std::vector<double> alpha;      // 1 - beta
    std::vector<double> alpha_bar;  // running product of alpha

    double beta_at(int t) const { return beta[static_cast<std::size_t>(t - 1)]; }
    double alpha_at(int t) const { return alpha[static_cast<std::size_t>(t - 1)]; }
    // alpha_bar(0) == 1 by convention.
    double alpha_bar_at(int t) const {
        return t == 0 ? 1.0 : alpha_bar[static_cast<std::size_t>(t - 1)];
    }

    // q(x_{t-1} | x_t, x0) mean coefficients.
    double coef_x0(int t) const {
        return std::sqrt(alpha_bar_at(t - 1)) * beta_at(t) / (1.0 - alpha_bar_at(t));
    }
    double coef_xt(int t) const {
        return std::sqrt(alpha_at(t)) * (1.0 - alpha_bar_at(t - 1)) / (1.0 - alpha_bar_at(t));
    }

    double beta_tilde(int t) const {
        return (1.0 - alpha_bar_at(t - 1)) / (1.0 - alpha_bar_at(t)) * beta_at(t);
    }

    double reverse_variance(int t, ReverseVariance kind) const {
        return kind == ReverseVariance::beta_tilde ? beta_tilde(t) : beta_at(t);
    }

    void check_t(int t) const {
        if (t < 1 || t > T)
            throw ConfigError("timestep t=" + std::to_string(t) + " outside [1, " +
                              std::to_string(T) + "]");
    }
};

inline DiffusionSchedule build_schedule(const std::string& kind, int T, double beta_start,
                                        double beta_end) {
    if (kind != "linear") throw ConfigError("unknown schedule kind: " + kind);
    if (T < 1) throw ConfigError("schedule needs T >= 1");
    if (!(0.0 < beta_start && beta_start <= beta_end && beta_end < 1.0))
        throw ConfigError("schedule needs 0 < beta_start <= beta_end < 1, got [" +
                          std::to_string(beta_start) + ", " + std::to_string(beta_end) + "]");
    DiffusionSchedule s;
    s.T = T;
    s.beta.resize(static_cast<std::size_t>(T));
    s.alpha.resize(static_cast<std::size_t>(T));
    s.alpha_bar.resize(static_cast<std::size_t>(T));
    double prod = 1.0;
    for (int i = 0; i < T; ++i) {
        const double frac = T == 1 ? 0.0 : static_cast<double>(i) / static_cast<double>(T - 1);
        const double b = beta_start + (beta_end - beta_start) * frac;
        s.beta[static_cast<std::size_t>(i)] = b;
        s.alpha[static_cast<std::size_t>(i)] = 1.0 - b;
        prod *= 1.0 - b;
        s.alpha_bar[static_cast<std::size_t>(i)] = prod;
    }
    return s;
}

// x_t = sqrt(abar_t) * x0 + sqrt(1 - abar_t) * eps
inline std::vector<double> q_sample(const std::vector<double>& x0, int t,
                                    const std::vector<double>& eps,
                                    const DiffusionSchedule& s) {
    s.check_t(t);
    if (eps.size() != x0.size())
        throw ShapeError("q_sample: eps size " + std::to_string(eps.size()) +
                         " does not match x0 size " + std::to_string(x0.size()));
    const double a = std::sqrt(s.alpha_bar_at(t));
    const double b = std::sqrt(1.0 - s.alpha_bar_at(t));
    std::vector<double> xt(x0.size());
    for (std::size_t i = 0; i < x0.size(); ++i) xt[i] = a * x0[i] + b * eps[i];
    return xt;
}

// One reverse step from the predicted clean sample: the DDPM posterior mean
// q(x_{t-1} | x_t, x0_hat) plus scheduled noise. No noise is added at t=1.
inline std::vector<double> posterior_step(const std::vector<double>& x_t,
                                          const std::vector<double>& x0_hat, int t,
                                          const DiffusionSchedule& s,
                                          const std::vector<double>* noise = nullptr,
                                          ReverseVariance kind = ReverseVariance::beta_tilde) {
    s.check_t(t);
    if (x_t.size() != x0_hat.size())
        throw ShapeError("posterior_step: x_t size " + std::to_string(x_t.size()) +
                         " does not match x0_hat size " + std::to_string(x0_hat.size()));
    const double c0 = s.coef_x0(t);
    const double ct = s.coef_xt(t);
    std::vector<double> out(x_t.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = c0 * x0_hat[i] + ct * x_t[i];
    if (t > 1 && noise != nullptr) {
        if (noise->size() != x_t.size())
            throw ShapeError("posterior_step: noise size mismatch");
        const double sigma = std::sqrt(s.reverse_variance(t, kind));
        for (std::size_t i = 0; i < out.size(); ++i) out[i] += sigma * (*noise)[i];
    }
    return out;
}

// Mean squared error over all frames and channels.
inline Tensor loss_rec(const Tensor& x0, const Tensor& x0_hat) { return mse(x0, x0_hat); }

// Mean absolute error of the frame-to-frame velocity. Sequences shorter than
// two frames carry no velocity; the loss is defined as 0 with a warning.
inline Tensor loss_vel(const Tensor& x0, const Tensor& x0_hat) {
    detail::check_same_shape(x0, x0_hat, "loss_vel");
    const std::int64_t n = x0.rows();
    if (n < 2) {
        std::cerr << "warning: loss_vel on " << n << "-frame sequence is defined as 0\n";
        return Tensor::scalar(0.0);
    }
    Tensor v0 = sub(slice_rows(x0, 1, n), slice_rows(x0, 0, n - 1));
    Tensor v1 = sub(slice_rows(x0_hat, 1, n), slice_rows(x0_hat, 0, n - 1));
    return mae(v0, v1);
}

// Graph builder supplied by the network module: given noisy face/body inputs
// and the clip's conditioning, returns predicted clean face/body.
using DenoiseGraph = std::function<std::pair<Tensor, Tensor>(
    const Tensor& xt_face, const Tensor& xt_body, const ClipSample& clip, int t)>;

struct TrainStepOptions {
    double lambda_vel = 1.0;
    AdamConfig adam;
    std::uint64_t run_seed = 1;
    ReverseVariance variance = ReverseVariance::beta_tilde;
};

struct LossBreakdown {
    double rec = 0.0;
    double vel = 0.0;
    double total = 0.0;
    bool applied = false;  // false when the step was skipped (non-finite)
};

// One optimizer step over a batch: per item, draw t uniformly, q-sample,
// run the denoiser, and accumulate L_rec + lambda * L_vel. All randomness
// derives from (run_seed, step_index), so training resumes bit-exactly.
inline LossBreakdown train_step(const std::vector<const ClipSample*>& batch,
                                const DenoiseGraph& denoise, ParamStore& params, Adam& opt,
                                const DiffusionSchedule& schedule,
                                const TrainStepOptions& opts, std::int64_t step_index) {
    if (batch.empty()) throw ConfigError("train_step: empty batch");
    Rng rng(mix64(opts.run_seed, 0x54524e00ULL + static_cast<std::uint64_t>(step_index)));

    params.zero_grads();
    LossBreakdown out;
    Tensor total;
    for (const ClipSample* clip : batch) {
        const int t = 1 + static_cast<int>(rng.integer(static_cast<std::uint64_t>(schedule.T)));
        const auto x0 = concat_motion(clip->motion);
        std::vector<double> eps(x0.size());
        for (auto& e : eps) e = rng.normal();
        const auto xt = q_sample(x0, t, eps, schedule);

        const std::int64_t frames = clip->motion.frames;
        const int bw = clip->motion.body_width();
        const int fw = clip->motion.face_width();
        MotionSequence noisy = split_motion(frames, xt, clip->motion.J, clip->motion.E,
                                            clip->motion.fps);
        Tensor xt_body = Tensor::from({frames, bw}, std::move(noisy.body));
        Tensor xt_face = Tensor::from({frames, fw}, std::move(noisy.face));

        auto [x0f_hat, x0b_hat] = denoise(xt_face, xt_body, *clip, t);
        Tensor x0_hat = concat_cols(x0b_hat, x0f_hat);
        Tensor x0_t = Tensor::from({frames, bw + fw}, x0);

        Tensor rec = loss_rec(x0_t, x0_hat);
        Tensor vel = loss_vel(x0_t, x0_hat);
        out.rec += rec.item();
        out.vel += vel.item();
        Tensor item_loss = add(rec, scale(vel, opts.lambda_vel));
        total = total.defined() ? add(total, item_loss) : item_loss;
    }
    const double inv = 1.0 / static_cast<double>(batch.size());
    total = scale(total, inv);
    out.rec *= inv;
    out.vel *= inv;
    out.total = total.item();

    if (!std::isfinite(out.total)) {
        out.applied = false;
        return out;
    }
    total.backward();
    out.applied = opt.step(params, opts.adam);
    return out;
}

}  // namespace tandem
