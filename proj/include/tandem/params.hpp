// Copyright (c) 2026 The Tandem Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "tandem/binio.hpp"
#include "tandem/errors.hpp"
#include "tandem/rng.hpp"
#include "tandem/tensor.hpp"

namespace tandem {

// Named trainable tensors with deterministic (insertion) iteration order.
class ParamStore {
public:
    Tensor& add(const std::string& name, Tensor t) {
        if (items_.count(name)) throw ConfigError("duplicate parameter name: " + name);
        order_.push_back(name);
        auto [it, _] = items_.emplace(name, std::move(t));
        return it->second;
    }

    bool contains(const std::string& name) const { return items_.count(name) != 0; }

    Tensor& get(const std::string& name) {
        auto it = items_.find(name);
        if (it == items_.end()) throw ConfigError("unknown parameter: " + name);
        return it->second;
    }
    const Tensor& get(const std::string& name) const {
        auto it = items_.find(name);
        if (it == items_.end()) throw ConfigError("unknown parameter: " + name);
        return it->second;
    }

    const std::vector<std::string>& names() const { return order_; }
    std::size_t size() const { return order_.size(); }

    std::int64_t total_count() const {
        std::int64_t n = 0;
        for (const auto& name : order_) n += items_.at(name).numel();
        return n;
    }

    void zero_grads() {
        for (const auto& name : order_) items_.at(name).zero_grad();
    }

private:
    std::vector<std::string> order_;
    std::unordered_map<std::string, Tensor> items_;
};

// Seeded uniform initialization scaled by 1/sqrt(fan_in); biases zero.
inline Tensor init_weight(Rng& rng, std::int64_t fan_in, std::int64_t fan_out) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::vector<double> v(static_cast<std::size_t>(fan_in * fan_out));
    for (auto& x : v) x = rng.uniform(-bound, bound);
    return Tensor::from({fan_in, fan_out}, std::move(v), /*requires_grad=*/true);
}

inline Tensor init_bias(std::int64_t width) {
    return Tensor::zeros({width}, /*requires_grad=*/true);
}

inline Tensor init_uniform(Rng& rng, Shape shape, double bound) {
    std::vector<double> v(static_cast<std::size_t>(shape_numel(shape)));
    for (auto& x : v) x = rng.uniform(-bound, bound);
    return Tensor::from(std::move(shape), std::move(v), /*requires_grad=*/true);
}

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// Bias-corrected adaptive-moment optimizer. Moment state persists across
// steps and serializes into checkpoints; a step with any non-finite gradient
// is rejected wholesale and counted.
class Adam {
public:
    // Returns false when the step was rejected.
    bool step(ParamStore& params, const AdamConfig& cfg) {
        for (const auto& name : params.names()) {
            if (!all_finite(params.get(name).grad())) {
                ++rejected_;
                return false;
            }
        }
        ++t_;
        const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t_));
        for (const auto& name : params.names()) {
            Tensor& p = params.get(name);
            auto& m = m_[name];
            auto& v = v_[name];
            if (m.size() != p.values().size()) m.assign(p.values().size(), 0.0);
            if (v.size() != p.values().size()) v.assign(p.values().size(), 0.0);
            const auto& g = p.grad();
            auto& val = p.values();
            for (std::size_t i = 0; i < val.size(); ++i) {
                m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
                v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
                const double mhat = m[i] / bc1;
                const double vhat = v[i] / bc2;
                val[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
            }
        }
        return true;
    }

    std::int64_t steps() const { return t_; }
    std::int64_t rejected() const { return rejected_; }

    const std::vector<double>& moment1(const std::string& name) const { return m_.at(name); }
    const std::vector<double>& moment2(const std::string& name) const { return v_.at(name); }
    bool has_state(const std::string& name) const { return m_.count(name) != 0; }
    void restore(std::int64_t t, const std::string& name, std::vector<double> m,
                 std::vector<double> v) {
        t_ = t;
        m_[name] = std::move(m);
        v_[name] = std::move(v);
    }

private:
    std::unordered_map<std::string, std::vector<double>> m_, v_;
    std::int64_t t_ = 0;
    std::int64_t rejected_ = 0;
};

struct GradCheckEntry {
    std::string name;
    double max_rel_err = 0.0;
    std::int64_t checked = 0;
};

struct GradCheckReport {
    std::vector<GradCheckEntry> entries;
    double max_rel_err = 0.0;
    std::string worst_name;

    bool pass(double tol) const { return max_rel_err < tol; }
};

// Central-difference check of the autodiff gradients of a scalar loss with
// respect to every parameter. loss_fn must rebuild its graph on each call.
// max_coords_per_param == 0 checks every coordinate; a positive budget
// samples deterministically (always including the first and last entries).
inline GradCheckReport grad_check(const std::function<Tensor()>& loss_fn, ParamStore& params,
                                  double h = 1e-5, std::int64_t max_coords_per_param = 0,
                                  std::uint64_t coord_seed = 0x7a2d) {
    Tensor loss = loss_fn();
    if (loss.numel() != 1) throw ShapeError("grad_check: loss must be scalar");
    if (!std::isfinite(loss.item()))
        throw NumericError("grad_check: loss is non-finite at the evaluation point");
    loss.backward();

    std::unordered_map<std::string, std::vector<double>> autodiff;
    for (const auto& name : params.names()) autodiff[name] = params.get(name).grad();

    GradCheckReport report;
    NoGradGuard no_grad;
    for (const auto& name : params.names()) {
        Tensor& p = params.get(name);
        auto& vals = p.values();
        const std::int64_t n = p.numel();

        std::vector<std::int64_t> coords;
        if (max_coords_per_param <= 0 || n <= max_coords_per_param) {
            coords.resize(static_cast<std::size_t>(n));
            for (std::int64_t i = 0; i < n; ++i) coords[static_cast<std::size_t>(i)] = i;
        } else {
            Rng rng(mix64(coord_seed, fnv1a64(name)));
            coords.push_back(0);
            coords.push_back(n - 1);
            for (std::int64_t i = 2; i < max_coords_per_param; ++i)
                coords.push_back(static_cast<std::int64_t>(rng.integer(static_cast<std::uint64_t>(n))));
        }

        GradCheckEntry entry{name, 0.0, static_cast<std::int64_t>(coords.size())};
        for (std::int64_t c : coords) {
            const double saved = vals[static_cast<std::size_t>(c)];
            vals[static_cast<std::size_t>(c)] = saved + h;
            const double fp = loss_fn().item();
            vals[static_cast<std::size_t>(c)] = saved - h;
            const double fm = loss_fn().item();
            vals[static_cast<std::size_t>(c)] = saved;
            if (!std::isfinite(fp) || !std::isfinite(fm))
                throw NumericError("grad_check: non-finite loss while probing " + name);
            const double fd = (fp - fm) / (2.0 * h);
            const double ad = autodiff[name][static_cast<std::size_t>(c)];
            const double rel = std::abs(fd - ad) / std::max(std::abs(fd) + std::abs(ad), 1e-6);
            entry.max_rel_err = std::max(entry.max_rel_err, rel);
        }
        if (entry.max_rel_err >= report.max_rel_err) {
            report.max_rel_err = entry.max_rel_err;
            report.worst_name = name;
        }
        report.entries.push_back(std::move(entry));
    }
    return report;
}

// ---------------------------------------------------------------------------
// Checkpoint container: little-endian binary, layout documented in README.
//   magic "TNDCKPT1" | u32 version | u64 config_len | config bytes
//   | u64 step | u64 n_params
//   | per param: u32 name_len, name, u32 ndim, i64 dims..., f64 values...
//   | u8 has_optimizer | [u64 adam_t | per param f64 m..., f64 v...]
// ---------------------------------------------------------------------------

inline constexpr char kCheckpointMagic[8] = {'T', 'N', 'D', 'C', 'K', 'P', 'T', '1'};

struct Checkpoint {
    std::string config_text;
    std::int64_t step = 0;
    ParamStore params;
    bool has_optimizer = false;
    std::int64_t adam_t = 0;
    std::unordered_map<std::string, std::vector<double>> adam_m, adam_v;
};

inline void save_checkpoint(const std::string& path, const std::string& config_text,
                            std::int64_t step, const ParamStore& params,
                            const Adam* opt = nullptr) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("checkpoint: cannot open for write: " + path);
    os.write(kCheckpointMagic, 8);
    detail::write_pod<std::uint32_t>(os, 1);
    detail::write_pod<std::uint64_t>(os, config_text.size());
    os.write(config_text.data(), static_cast<std::streamsize>(config_text.size()));
    detail::write_pod<std::uint64_t>(os, static_cast<std::uint64_t>(step));
    detail::write_pod<std::uint64_t>(os, params.size());
    for (const auto& name : params.names()) {
        const Tensor& t = params.get(name);
        detail::write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        detail::write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(t.shape().size()));
        for (auto e : t.shape()) detail::write_pod<std::int64_t>(os, e);
        detail::write_doubles(os, t.values());
    }
    const bool with_opt = opt != nullptr;
    detail::write_pod<std::uint8_t>(os, with_opt ? 1 : 0);
    if (with_opt) {
        detail::write_pod<std::uint64_t>(os, static_cast<std::uint64_t>(opt->steps()));
        for (const auto& name : params.names()) {
            if (opt->has_state(name)) {
                detail::write_doubles(os, opt->moment1(name));
                detail::write_doubles(os, opt->moment2(name));
            } else {
                std::vector<double> zeros(params.get(name).values().size(), 0.0);
                detail::write_doubles(os, zeros);
                detail::write_doubles(os, zeros);
            }
        }
    }
    if (!os) throw IoError("checkpoint: write failed: " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("checkpoint: cannot open: " + path);
    char magic[8];
    is.read(magic, 8);
    if (!is || std::memcmp(magic, kCheckpointMagic, 8) != 0)
        throw IoError("checkpoint: bad magic in " + path);
    const auto version = detail::read_pod<std::uint32_t>(is);
    if (version != 1) throw IoError("checkpoint: unsupported version " + std::to_string(version));

    Checkpoint ck;
    const auto cfg_len = detail::read_pod<std::uint64_t>(is);
    ck.config_text.resize(cfg_len);
    is.read(ck.config_text.data(), static_cast<std::streamsize>(cfg_len));
    ck.step = static_cast<std::int64_t>(detail::read_pod<std::uint64_t>(is));
    const auto n_params = detail::read_pod<std::uint64_t>(is);
    for (std::uint64_t i = 0; i < n_params; ++i) {
        const auto name_len = detail::read_pod<std::uint32_t>(is);
        std::string name(name_len, '\0');
        is.read(name.data(), name_len);
        const auto ndim = detail::read_pod<std::uint32_t>(is);
        Shape shape(ndim);
        for (auto& e : shape) e = detail::read_pod<std::int64_t>(is);
        std::vector<double> vals;
        detail::read_doubles(is, vals, static_cast<std::size_t>(shape_numel(shape)));
        ck.params.add(name, Tensor::from(std::move(shape), std::move(vals),
                                         /*requires_grad=*/true));
    }
    const auto has_opt = detail::read_pod<std::uint8_t>(is);
    if (has_opt) {
        ck.has_optimizer = true;
        ck.adam_t = static_cast<std::int64_t>(detail::read_pod<std::uint64_t>(is));
        for (const auto& name : ck.params.names()) {
            const std::size_t n = ck.params.get(name).values().size();
            std::vector<double> m, v;
            detail::read_doubles(is, m, n);
            detail::read_doubles(is, v, n);
            ck.adam_m[name] = std::move(m);
            ck.adam_v[name] = std::move(v);
        }
    }
    return ck;
}

inline void restore_optimizer(Adam& opt, const Checkpoint& ck) {
    for (const auto& name : ck.params.names())
        opt.restore(ck.adam_t, name, ck.adam_m.at(name), ck.adam_v.at(name));
}

}  // namespace tandem
