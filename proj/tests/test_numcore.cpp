// Copyright (c) 2026 The Tandem Authors
// SPDX-License-Identifier: Apache-2.0

#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "tandem/ops.hpp"
#include "tandem/params.hpp"
#include "tandem/rng.hpp"
#include "tandem/tensor.hpp"

using namespace tandem;

namespace {

Tensor identity_matrix(std::int64_t n, bool requires_grad = false) {
    std::vector<double> v(static_cast<std::size_t>(n * n), 0.0);
    for (std::int64_t i = 0; i < n; ++i) v[static_cast<std::size_t>(i * n + i)] = 1.0;
    return Tensor::from({n, n}, std::move(v), requires_grad);
}

Tensor random_tensor(Rng& rng, Shape shape, bool requires_grad = false, double scale = 1.0) {
    std::vector<double> v(static_cast<std::size_t>(shape_numel(shape)));
    for (auto& x : v) x = rng.uniform(-scale, scale);
    return Tensor::from(std::move(shape), std::move(v), requires_grad);
}

}  // namespace

TEST_CASE("apply_linear matches hand-computed cases") {
    SECTION("identity") {
        Tensor x = identity_matrix(2);
        Tensor w = identity_matrix(2);
        Tensor b = Tensor::zeros({2});
        Tensor y = apply_linear(x, w, b);
        REQUIRE(y.at(0, 0) == 1.0);
        REQUIRE(y.at(0, 1) == 0.0);
        REQUIRE(y.at(1, 0) == 0.0);
        REQUIRE(y.at(1, 1) == 1.0);
    }
    SECTION("hand matmul with bias") {
        Tensor x = Tensor::from({1, 2}, {1.0, 2.0});
        Tensor w = Tensor::from({2, 1}, {1.0, 1.0});
        Tensor b = Tensor::from({1}, {3.0});
        Tensor y = apply_linear(x, w, b);
        REQUIRE(y.numel() == 1);
        REQUIRE(y.item() == 6.0);
    }
    SECTION("gradient of sum(xW) wrt W") {
        Tensor x = Tensor::from({1, 2}, {1.0, 2.0});
        Tensor w = Tensor::zeros({2, 1}, /*requires_grad=*/true);
        Tensor b = Tensor::zeros({1});
        Tensor loss = sum_all(apply_linear(x, w, b));
        loss.backward();
        REQUIRE(w.grad()[0] == 1.0);
        REQUIRE(w.grad()[1] == 2.0);
    }
    SECTION("shape mismatch names both shapes") {
        Tensor x = Tensor::zeros({1, 3});
        Tensor w = Tensor::zeros({2, 1});
        Tensor b = Tensor::zeros({1});
        REQUIRE_THROWS_WITH(apply_linear(x, w, b),
                            Catch::Matchers::ContainsSubstring("[1x3]") &&
                                Catch::Matchers::ContainsSubstring("[2x1]"));
    }
}

TEST_CASE("layer_norm normalizes rows") {
    Tensor gain = Tensor::from({3}, {1.0, 1.0, 1.0});
    Tensor bias = Tensor::zeros({3});
    SECTION("zero-variance row maps to zeros") {
        Tensor x = Tensor::from({1, 3}, {5.0, 5.0, 5.0});
        Tensor y = layer_norm(x, gain, bias, 1e-8);
        for (int j = 0; j < 3; ++j) REQUIRE(y.at(0, j) == 0.0);
    }
    SECTION("two-point row normalizes to plus/minus one") {
        Tensor g2 = Tensor::from({2}, {1.0, 1.0});
        Tensor b2 = Tensor::zeros({2});
        Tensor x = Tensor::from({1, 2}, {1.0, 3.0});
        Tensor y = layer_norm(x, g2, b2, 1e-14);
        REQUIRE_THAT(y.at(0, 0), Catch::Matchers::WithinAbs(-1.0, 1e-6));
        REQUIRE_THAT(y.at(0, 1), Catch::Matchers::WithinAbs(1.0, 1e-6));
    }
    SECTION("zero gain yields all-bias output") {
        Tensor g0 = Tensor::zeros({3});
        Tensor b3 = Tensor::from({3}, {0.5, -1.0, 2.0});
        Tensor x = Tensor::from({2, 3}, {1.0, 2.0, 3.0, -1.0, 0.0, 4.0});
        Tensor y = layer_norm(x, g0, b3, 1e-8);
        for (int i = 0; i < 2; ++i) {
            REQUIRE(y.at(i, 0) == 0.5);
            REQUIRE(y.at(i, 1) == -1.0);
            REQUIRE(y.at(i, 2) == 2.0);
        }
    }
    SECTION("rows have zero mean and unit variance") {
        Rng rng(11);
        Tensor g = Tensor::from({8}, std::vector<double>(8, 1.0));
        Tensor b = Tensor::zeros({8});
        Tensor x = random_tensor(rng, {5, 8}, false, 3.0);
        Tensor y = layer_norm(x, g, b, 1e-12);
        for (int i = 0; i < 5; ++i) {
            double mean = 0.0, var = 0.0;
            for (int j = 0; j < 8; ++j) mean += y.at(i, j);
            mean /= 8.0;
            for (int j = 0; j < 8; ++j) var += (y.at(i, j) - mean) * (y.at(i, j) - mean);
            var /= 8.0;
            REQUIRE(std::abs(mean) < 1e-8);
            REQUIRE(std::abs(var - 1.0) < 1e-6);
        }
    }
}

TEST_CASE("multi_head_attention basic behavior") {
    SECTION("single key returns the value row under identity projection") {
        Tensor q = Tensor::from({2, 4}, {0.3, -1.0, 2.0, 0.1, 1.0, 1.0, -0.2, 0.0});
        Tensor k = Tensor::from({1, 4}, {0.5, 0.5, 0.5, 0.5});
        Tensor v = Tensor::from({1, 4}, {1.0, 2.0, 3.0, 4.0});
        Tensor y = multi_head_attention(q, k, v, 2, identity_matrix(4), Tensor::zeros({4}));
        for (int i = 0; i < 2; ++i)
            for (int j = 0; j < 4; ++j)
                REQUIRE_THAT(y.at(i, j), Catch::Matchers::WithinAbs(v.at(0, j), 1e-12));
    }
    SECTION("identical keys average the values") {
        Rng rng(3);
        Tensor q = random_tensor(rng, {3, 4});
        std::vector<double> krow = {0.2, -0.4, 1.0, 0.7};
        std::vector<double> kv;
        for (int i = 0; i < 5; ++i) kv.insert(kv.end(), krow.begin(), krow.end());
        Tensor k = Tensor::from({5, 4}, std::move(kv));
        Tensor v = random_tensor(rng, {5, 4});
        Tensor y = multi_head_attention(q, k, v, 1, identity_matrix(4), Tensor::zeros({4}));
        for (int j = 0; j < 4; ++j) {
            double mean = 0.0;
            for (int i = 0; i < 5; ++i) mean += v.at(i, j);
            mean /= 5.0;
            for (int i = 0; i < 3; ++i)
                REQUIRE_THAT(y.at(i, j), Catch::Matchers::WithinAbs(mean, 1e-12));
        }
    }
    SECTION("width not divisible by heads is a configuration error") {
        Tensor q = Tensor::zeros({2, 6});
        REQUIRE_THROWS_AS(
            multi_head_attention(q, q, q, 4, identity_matrix(6), Tensor::zeros({6})),
            ConfigError);
    }
}

TEST_CASE("softmax rows sum to one") {
    Rng rng(17);
    for (int rep = 0; rep < 20; ++rep) {
        const std::int64_t n = 1 + static_cast<std::int64_t>(rng.integer(6));
        const std::int64_t m = 1 + static_cast<std::int64_t>(rng.integer(9));
        Tensor x = random_tensor(rng, {n, m}, false, 8.0);
        Tensor y = softmax_rows(x);
        for (std::int64_t i = 0; i < n; ++i) {
            double s = 0.0;
            for (std::int64_t j = 0; j < m; ++j) s += y.at(i, j);
            REQUIRE(std::abs(s - 1.0) < 1e-12);
        }
    }
}

TEST_CASE("grad_check validates autodiff against central differences") {
    SECTION("square function") {
        ParamStore params;
        params.add("x", Tensor::from({1}, {3.0}, true));
        auto loss = [&]() { return mul(params.get("x"), params.get("x")); };
        auto report = grad_check(loss, params);
        REQUIRE(report.max_rel_err < 1e-8);
    }
    SECTION("one-layer net reconstruction loss") {
        Rng rng(42);
        ParamStore params;
        params.add("w", init_weight(rng, 5, 3));
        params.add("b", init_bias(3));
        Tensor x = random_tensor(rng, {4, 5});
        Tensor target = random_tensor(rng, {4, 3});
        auto loss = [&]() {
            return mse(gelu(apply_linear(x, params.get("w"), params.get("b"))), target);
        };
        auto report = grad_check(loss, params);
        REQUIRE(report.max_rel_err < 1e-4);
    }
    SECTION("constant function has zero gradients both ways") {
        ParamStore params;
        params.add("x", Tensor::from({2}, {1.0, -2.0}, true));
        Tensor c = Tensor::scalar(7.0);
        auto loss = [&]() { return add(mean_all(scale(params.get("x"), 0.0)), c); };
        auto report = grad_check(loss, params);
        REQUIRE(report.max_rel_err < 1e-10);
    }
    SECTION("non-finite loss aborts with diagnostic") {
        ParamStore params;
        params.add("x", Tensor::from({1}, {0.0}, true));
        auto loss = [&]() {
            Tensor inv = Tensor::scalar(std::numeric_limits<double>::infinity());
            return mul(params.get("x"), inv);
        };
        REQUIRE_THROWS_AS(grad_check(loss, params), NumericError);
    }
}

TEST_CASE("elementwise and structural ops pass randomized gradient checks") {
    Rng rng(7);
    for (int rep = 0; rep < 8; ++rep) {
        const std::int64_t n = 1 + static_cast<std::int64_t>(rng.integer(4));
        const std::int64_t m = 2 + static_cast<std::int64_t>(rng.integer(5));
        ParamStore params;
        params.add("a", random_tensor(rng, {n, m}, true));
        params.add("b", random_tensor(rng, {n, m}, true));
        params.add("g", random_tensor(rng, {m}, true));
        params.add("v", random_tensor(rng, {m}, true));
        Tensor target = random_tensor(rng, {n, m});

        auto loss = [&]() {
            Tensor a = params.get("a");
            Tensor b = params.get("b");
            Tensor ln = layer_norm(mul(a, b), params.get("g"), params.get("v"), 1e-6);
            Tensor sm = softmax_rows(add(a, ln));
            Tensor cat = concat_cols(slice_rows(sm, 0, n), gelu(sub(a, b)));
            Tensor sl = slice_cols(cat, 0, m + m / 2);
            Tensor pooled = mean_rows(sl);
            return add(mse(sm, target), add(mae(a, b), mean_all(pooled)));
        };
        auto report = grad_check(loss, params);
        INFO("worst parameter: " << report.worst_name);
        REQUIRE(report.max_rel_err < 1e-4);
    }
}

TEST_CASE("attention gradient check on random shapes") {
    Rng rng(23);
    for (int rep = 0; rep < 4; ++rep) {
        const std::int64_t nq = 1 + static_cast<std::int64_t>(rng.integer(4));
        const std::int64_t nk = 1 + static_cast<std::int64_t>(rng.integer(4));
        ParamStore params;
        params.add("q", random_tensor(rng, {nq, 4}, true));
        params.add("k", random_tensor(rng, {nk, 4}, true));
        params.add("v", random_tensor(rng, {nk, 4}, true));
        params.add("wo", init_weight(rng, 4, 4));
        params.add("bo", init_bias(4));
        Tensor target = random_tensor(rng, {nq, 4});
        auto loss = [&]() {
            return mse(multi_head_attention(params.get("q"), params.get("k"), params.get("v"),
                                            2, params.get("wo"), params.get("bo")),
                       target);
        };
        auto report = grad_check(loss, params);
        REQUIRE(report.max_rel_err < 1e-4);
    }
}

TEST_CASE("adam optimizer") {
    SECTION("zero gradient leaves parameters unchanged") {
        ParamStore params;
        params.add("p", Tensor::from({2}, {0.5, -0.25}, true));
        params.get("p").zero_grad();
        Adam opt;
        REQUIRE(opt.step(params, AdamConfig{}));
        REQUIRE(params.get("p").values()[0] == 0.5);
        REQUIRE(params.get("p").values()[1] == -0.25);
    }
    SECTION("constant positive gradient decreases the parameter monotonically") {
        ParamStore params;
        params.add("p", Tensor::from({1}, {0.0}, true));
        Adam opt;
        AdamConfig cfg;
        cfg.lr = 0.1;
        double prev = 0.0;
        for (int i = 0; i < 10; ++i) {
            params.get("p").grad()[0] = 1.0;
            REQUIRE(opt.step(params, cfg));
            const double cur = params.get("p").values()[0];
            REQUIRE(cur < prev);
            prev = cur;
        }
    }
    SECTION("first step matches the hand-evaluated update rule") {
        ParamStore params;
        params.add("p", Tensor::from({1}, {0.0}, true));
        params.get("p").grad()[0] = 2.0;
        Adam opt;
        AdamConfig cfg;
        cfg.lr = 0.1;
        opt.step(params, cfg);
        // m_hat = g, v_hat = g^2 at t=1, so delta = -lr * g / (|g| + eps).
        const double expected = -0.1 * 2.0 / (2.0 + 1e-8);
        REQUIRE_THAT(params.get("p").values()[0], Catch::Matchers::WithinAbs(expected, 1e-15));
    }
    SECTION("non-finite gradient rejects the step and reports it") {
        ParamStore params;
        params.add("p", Tensor::from({1}, {1.0}, true));
        params.get("p").grad()[0] = std::numeric_limits<double>::quiet_NaN();
        Adam opt;
        REQUIRE_FALSE(opt.step(params, AdamConfig{}));
        REQUIRE(opt.rejected() == 1);
        REQUIRE(params.get("p").values()[0] == 1.0);
    }
}

TEST_CASE("param store bookkeeping") {
    auto build = []() {
        Rng rng(5);
        ParamStore s;
        s.add("w1", init_weight(rng, 8, 4));
        s.add("b1", init_bias(4));
        s.add("w2", init_weight(rng, 4, 2));
        return s;
    };
    ParamStore a = build();
    ParamStore b = build();
    REQUIRE(a.total_count() == 8 * 4 + 4 + 4 * 2);
    REQUIRE(a.total_count() == b.total_count());
    REQUIRE(a.names() == b.names());
    REQUIRE_THROWS_AS(a.add("w1", init_bias(1)), ConfigError);
}

TEST_CASE("checkpoint round trip preserves values and optimizer state") {
    Rng rng(9);
    ParamStore params;
    params.add("w", init_weight(rng, 3, 3));
    params.add("b", init_bias(3));
    Adam opt;
    AdamConfig cfg;
    for (int i = 0; i < 3; ++i) {
        for (const auto& name : params.names()) {
            auto& g = params.get(name).grad();
            for (auto& x : g) x = rng.uniform(-1.0, 1.0);
        }
        opt.step(params, cfg);
    }
    const std::string path = "ckpt_roundtrip_test.bin";
    save_checkpoint(path, "d=3\n", 3, params, &opt);
    Checkpoint ck = load_checkpoint(path);
    REQUIRE(ck.config_text == "d=3\n");
    REQUIRE(ck.step == 3);
    REQUIRE(ck.params.names() == params.names());
    for (const auto& name : params.names())
        REQUIRE(ck.params.get(name).values() == params.get(name).values());
    REQUIRE(ck.has_optimizer);
    REQUIRE(ck.adam_t == 3);
    REQUIRE(ck.adam_m.at("w") == opt.moment1("w"));
    REQUIRE(ck.adam_v.at("b") == opt.moment2("b"));
    std::remove(path.c_str());
}
