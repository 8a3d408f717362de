// Copyright (c) 2026 The Tandem Authors
// SPDX-License-Identifier: Apache-2.0
//
// Neural-network layers built on the autodiff tensor core.

#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "tandem/tensor.hpp"

namespace tandem {

// out = x * W + b, rows of b broadcast. Fused node: one graph entry per call
// keeps transformer graphs small.
inline Tensor apply_linear(const Tensor& x, const Tensor& w, const Tensor& b) {
    detail::check_matrix(x, "apply_linear");
    detail::check_matrix(w, "apply_linear");
    const std::int64_t n = x.rows(), k = x.cols(), m = w.cols();
    if (w.rows() != k)
        throw ShapeError("apply_linear: inner dimensions disagree, x" + shape_str(x.shape()) +
                         " vs W" + shape_str(w.shape()));
    if (b.numel() != m)
        throw ShapeError("apply_linear: bias " + shape_str(b.shape()) + " does not match W" +
                         shape_str(w.shape()));
    std::vector<double> out(static_cast<std::size_t>(n * m));
    const auto& xv = x.values();
    const auto& wv = w.values();
    const auto& bv = b.values();
    for (std::int64_t i = 0; i < n; ++i) {
        double* orow = &out[static_cast<std::size_t>(i * m)];
        for (std::int64_t j = 0; j < m; ++j) orow[j] = bv[static_cast<std::size_t>(j)];
        const double* xrow = &xv[static_cast<std::size_t>(i * k)];
        for (std::int64_t p = 0; p < k; ++p) {
            const double xp = xrow[p];
            if (xp == 0.0) continue;
            const double* wrow = &wv[static_cast<std::size_t>(p * m)];
            for (std::int64_t j = 0; j < m; ++j) orow[j] += xp * wrow[j];
        }
    }
    return make_op({n, m}, std::move(out), {x, w, b}, [n, k, m](TensorNode& self) {
        auto& px = self.parents[0];
        auto& pw = self.parents[1];
        auto& pb = self.parents[2];
        if (px->requires_grad) {
            px->ensure_grad();
            for (std::int64_t i = 0; i < n; ++i)
                for (std::int64_t p = 0; p < k; ++p) {
                    double acc = 0.0;
                    const double* grow = &self.grad[static_cast<std::size_t>(i * m)];
                    const double* wrow = &pw->value[static_cast<std::size_t>(p * m)];
                    for (std::int64_t j = 0; j < m; ++j) acc += grow[j] * wrow[j];
                    px->grad[static_cast<std::size_t>(i * k + p)] += acc;
                }
        }
        if (pw->requires_grad) {
            pw->ensure_grad();
            for (std::int64_t i = 0; i < n; ++i)
                for (std::int64_t p = 0; p < k; ++p) {
                    const double xp = px->value[static_cast<std::size_t>(i * k + p)];
                    if (xp == 0.0) continue;
                    const double* grow = &self.grad[static_cast<std::size_t>(i * m)];
                    double* wrow = &pw->grad[static_cast<std::size_t>(p * m)];
                    for (std::int64_t j = 0; j < m; ++j) wrow[j] += xp * grow[j];
                }
        }
        if (pb->requires_grad) {
            pb->ensure_grad();
            for (std::int64_t i = 0; i < n; ++i)
                for (std::int64_t j = 0; j < m; ++j)
                    pb->grad[static_cast<std::size_t>(j)] +=
                        self.grad[static_cast<std::size_t>(i * m + j)];
        }
    });
}

// Row-wise layer normalization with learned gain/bias. Population variance;
// eps keeps zero-variance rows finite (they normalize to zero).
inline Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                         double eps = 1e-8) {
    detail::check_matrix(x, "layer_norm");
    const std::int64_t n = x.rows(), d = x.cols();
    if (gain.numel() != d || bias.numel() != d)
        throw ShapeError("layer_norm: gain/bias width must be " + std::to_string(d));
    std::vector<double> out(static_cast<std::size_t>(n * d));
    std::vector<double> inv_std(static_cast<std::size_t>(n));
    std::vector<double> xhat(static_cast<std::size_t>(n * d));
    for (std::int64_t i = 0; i < n; ++i) {
        const double* row = &x.values()[static_cast<std::size_t>(i * d)];
        double mean = 0.0;
        for (std::int64_t j = 0; j < d; ++j) mean += row[j];
        mean /= static_cast<double>(d);
        double var = 0.0;
        for (std::int64_t j = 0; j < d; ++j) {
            const double c = row[j] - mean;
            var += c * c;
        }
        var /= static_cast<double>(d);
        const double is = 1.0 / std::sqrt(var + eps);
        inv_std[static_cast<std::size_t>(i)] = is;
        for (std::int64_t j = 0; j < d; ++j) {
            const double h = (row[j] - mean) * is;
            xhat[static_cast<std::size_t>(i * d + j)] = h;
            out[static_cast<std::size_t>(i * d + j)] =
                h * gain.values()[static_cast<std::size_t>(j)] +
                bias.values()[static_cast<std::size_t>(j)];
        }
    }
    return make_op({n, d}, std::move(out), {x, gain, bias},
                   [n, d, inv_std = std::move(inv_std), xhat = std::move(xhat)](TensorNode& self) {
                       auto& px = self.parents[0];
                       auto& pg = self.parents[1];
                       auto& pb = self.parents[2];
                       for (std::int64_t i = 0; i < n; ++i) {
                           const double* g = &self.grad[static_cast<std::size_t>(i * d)];
                           const double* h = &xhat[static_cast<std::size_t>(i * d)];
                           if (pg->requires_grad) {
                               pg->ensure_grad();
                               for (std::int64_t j = 0; j < d; ++j)
                                   pg->grad[static_cast<std::size_t>(j)] += g[j] * h[j];
                           }
                           if (pb->requires_grad) {
                               pb->ensure_grad();
                               for (std::int64_t j = 0; j < d; ++j)
                                   pb->grad[static_cast<std::size_t>(j)] += g[j];
                           }
                           if (px->requires_grad) {
                               px->ensure_grad();
                               // dxhat = g * gain; dx = (dxhat - mean(dxhat)
                               //        - xhat * mean(dxhat*xhat)) / std
                               double mean_dh = 0.0, mean_dh_h = 0.0;
                               for (std::int64_t j = 0; j < d; ++j) {
                                   const double dh =
                                       g[j] * pg->value[static_cast<std::size_t>(j)];
                                   mean_dh += dh;
                                   mean_dh_h += dh * h[j];
                               }
                               mean_dh /= static_cast<double>(d);
                               mean_dh_h /= static_cast<double>(d);
                               const double is = inv_std[static_cast<std::size_t>(i)];
                               for (std::int64_t j = 0; j < d; ++j) {
                                   const double dh =
                                       g[j] * pg->value[static_cast<std::size_t>(j)];
                                   px->grad[static_cast<std::size_t>(i * d + j)] +=
                                       (dh - mean_dh - h[j] * mean_dh_h) * is;
                               }
                           }
                       }
                   });
}

// Scaled dot-product attention without learned projections; the building
// block of both transformer attention and the adapter's cross-modal fusion.
inline Tensor scaled_dot_attention(const Tensor& q, const Tensor& k, const Tensor& v) {
    detail::check_matrix(q, "scaled_dot_attention");
    if (q.cols() != k.cols())
        throw ShapeError("scaled_dot_attention: query/key width mismatch " +
                         shape_str(q.shape()) + " vs " + shape_str(k.shape()));
    if (k.rows() != v.rows())
        throw ShapeError("scaled_dot_attention: key/value count mismatch " +
                         shape_str(k.shape()) + " vs " + shape_str(v.shape()));
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(q.cols()));
    Tensor scores = scale(matmul(q, transpose(k)), inv_sqrt_d);
    Tensor weights = softmax_rows(scores);
    return matmul(weights, v);
}

// Multi-head attention over pre-projected q/k/v: splits the width into
// heads, attends per head, concatenates and applies the output projection.
inline Tensor multi_head_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                                   int heads, const Tensor& wo, const Tensor& bo) {
    const std::int64_t d = q.cols();
    if (heads < 1 || d % heads != 0)
        throw ConfigError("multi_head_attention: width " + std::to_string(d) +
                          " not divisible by heads=" + std::to_string(heads));
    detail::check_same_shape(k, v, "multi_head_attention(k,v)");
    const std::int64_t dh = d / heads;
    Tensor out;
    for (int h = 0; h < heads; ++h) {
        Tensor qh = slice_cols(q, h * dh, (h + 1) * dh);
        Tensor kh = slice_cols(k, h * dh, (h + 1) * dh);
        Tensor vh = slice_cols(v, h * dh, (h + 1) * dh);
        Tensor ah = scaled_dot_attention(qh, kh, vh);
        out = (h == 0) ? ah : concat_cols(out, ah);
    }
    return apply_linear(out, wo, bo);
}

// Classic sinusoidal embedding of an integer position/timestep, width d.
inline std::vector<double> sinusoidal_embedding(double pos, std::int64_t d) {
    std::vector<double> e(static_cast<std::size_t>(d));
    const std::int64_t half = d / 2;
    for (std::int64_t i = 0; i < half; ++i) {
        const double freq = std::pow(10000.0, -2.0 * static_cast<double>(i) /
                                                   static_cast<double>(d));
        e[static_cast<std::size_t>(2 * i)] = std::sin(pos * freq);
        e[static_cast<std::size_t>(2 * i + 1)] = std::cos(pos * freq);
    }
    if (d % 2 == 1) e[static_cast<std::size_t>(d - 1)] = std::sin(pos);
    return e;
}

// Constant [n x d] positional table added to token sequences.
inline Tensor positional_encoding(std::int64_t n, std::int64_t d) {
    std::vector<double> table;
    table.reserve(static_cast<std::size_t>(n * d));
    for (std::int64_t p = 0; p < n; ++p) {
        auto row = sinusoidal_embedding(static_cast<double>(p), d);
        table.insert(table.end(), row.begin(), row.end());
    }
    return Tensor::from({n, d}, std::move(table));
}

}  // namespace tandem
