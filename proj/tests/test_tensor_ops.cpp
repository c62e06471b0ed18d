#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "fsel/grad_check.hpp"
#include "fsel/ops.hpp"
#include "fsel/rng.hpp"

using namespace fsel;

namespace {

Tensor<float> random_tensor(std::vector<int> shape, Rng& rng, float scale = 1.0f) {
    Tensor<float> t = Tensor<float>::zeros(std::move(shape));
    for (auto& v : t.values()) v = scale * static_cast<float>(rng.normal());
    return t;
}

// FD check of a scalar function of one parameter tensor.
template <typename Fn>
float fd_check(Tensor<float> param, Fn&& fn, float h = 1e-2f, float tol = 1e-3f) {
    param.set_requires_grad(true);
    std::function<Tensor<float>()> loss = [&]() { return fn(param); };
    auto report = grad_check<float>(loss, {{"x", param}}, h, tol);
    return report.max_rel_error;
}

}  // namespace

TEST_CASE("matmul identity and hand cases") {
    Tensor<float> eye = Tensor<float>::from_data({2, 2}, {1, 0, 0, 1});
    Tensor<float> m = Tensor<float>::from_data({2, 2}, {3, 4, 5, 6});
    Tensor<float> out = matmul(eye, m);
    REQUIRE(out.values()[0] == 3.0f);
    REQUIRE(out.values()[1] == 4.0f);
    REQUIRE(out.values()[2] == 5.0f);
    REQUIRE(out.values()[3] == 6.0f);

    Tensor<float> a = Tensor<float>::from_data({1, 2}, {1, 2});
    Tensor<float> b = Tensor<float>::from_data({2, 1}, {3, 4});
    REQUIRE(matmul(a, b).value() == 11.0f);
}

TEST_CASE("matmul shape mismatch names both shapes") {
    Tensor<float> a = Tensor<float>::zeros({3, 4});
    Tensor<float> b = Tensor<float>::zeros({5, 2});
    REQUIRE_THROWS_MATCHES(matmul(a, b), ShapeError,
                           Catch::Matchers::MessageMatches(
                               Catch::Matchers::ContainsSubstring("(3,4)") &&
                               Catch::Matchers::ContainsSubstring("(5,2)")));
}

TEST_CASE("matmul gradients match finite differences") {
    Rng rng(11, "test");
    Tensor<float> a = random_tensor({3, 4}, rng);
    Tensor<float> b = random_tensor({4, 2}, rng);
    a.set_requires_grad(true);
    b.set_requires_grad(true);
    std::function<Tensor<float>()> loss = [&]() { return frobenius_rmse(matmul(a, b), Tensor<float>::zeros({3, 2})); };
    auto report = grad_check<float>(loss, {{"a", a}, {"b", b}}, 1e-2f, 1e-3f);
    CAPTURE(report.max_rel_error);
    REQUIRE(report.all_passed);
}

TEST_CASE("softmax basics") {
    Tensor<float> z = Tensor<float>::from_data({2}, {0, 0});
    auto out = softmax_lastaxis(z);
    REQUIRE(out.values()[0] == 0.5f);
    REQUIRE(out.values()[1] == 0.5f);

    Tensor<float> big = Tensor<float>::from_data({2}, {1000, 1000});
    auto big_out = softmax_lastaxis(big);
    REQUIRE(big_out.values()[0] == 0.5f);
    REQUIRE(std::isfinite(big_out.values()[1]));

    Tensor<float> ln = Tensor<float>::from_data({2}, {std::log(2.0f), 0});
    auto ln_out = softmax_lastaxis(ln);
    REQUIRE_THAT(ln_out.values()[0], Catch::Matchers::WithinAbs(2.0 / 3.0, 1e-6));
    REQUIRE_THAT(ln_out.values()[1], Catch::Matchers::WithinAbs(1.0 / 3.0, 1e-6));
}

TEST_CASE("softmax rows sum to one and shift invariance") {
    Rng rng(3, "test");
    // Inputs on a 1/64 grid so that x + 128 is exact in float: the shifted
    // row is then bitwise identical after max subtraction.
    Tensor<float> x = random_tensor({5, 7}, rng, 3.0f);
    for (auto& v : x.values()) v = std::round(v * 64.0f) / 64.0f;
    auto y = softmax_lastaxis(x);
    for (int r = 0; r < 5; ++r) {
        double sum = 0;
        for (int j = 0; j < 7; ++j) sum += y.values()[static_cast<std::size_t>(r) * 7 + j];
        REQUIRE_THAT(sum, Catch::Matchers::WithinAbs(1.0, 1e-6));
    }
    Tensor<float> shifted = Tensor<float>::zeros({5, 7});
    for (std::size_t i = 0; i < x.size(); ++i) shifted.values()[i] = x.values()[i] + 128.0f;
    auto y2 = softmax_lastaxis(shifted);
    for (std::size_t i = 0; i < y.size(); ++i) {
        REQUIRE(y2.values()[i] == y.values()[i]);
    }
}

TEST_CASE("softmax gradient") {
    Rng rng(4, "test");
    Tensor<float> probe = random_tensor({3, 5}, rng);
    float err = fd_check(random_tensor({3, 5}, rng), [&](const Tensor<float>& x) {
        return frobenius_rmse(softmax_lastaxis(x), probe);
    });
    REQUIRE(err < 1e-3f);
}

TEST_CASE("layernorm constant and normalized rows") {
    Tensor<float> gain = Tensor<float>::full({3}, 1.0f);
    Tensor<float> bias = Tensor<float>::zeros({3});
    Tensor<float> row = Tensor<float>::from_data({1, 3}, {5, 5, 5});
    auto out = layernorm(row, gain, bias, 1e-5f);
    for (float v : out.values()) REQUIRE_THAT(v, Catch::Matchers::WithinAbs(0.0, 1e-6));

    Tensor<float> gain2 = Tensor<float>::full({2}, 1.0f);
    Tensor<float> bias2 = Tensor<float>::zeros({2});
    Tensor<float> pm = Tensor<float>::from_data({1, 2}, {1, -1});
    auto out2 = layernorm(pm, gain2, bias2, 1e-5f);
    REQUIRE_THAT(out2.values()[0], Catch::Matchers::WithinAbs(1.0, 1e-4));
    REQUIRE_THAT(out2.values()[1], Catch::Matchers::WithinAbs(-1.0, 1e-4));
}

TEST_CASE("layernorm mean zero unit variance before affine") {
    Rng rng(5, "test");
    Tensor<float> x = random_tensor({4, 8}, rng, 2.0f);
    Tensor<float> gain = Tensor<float>::full({8}, 1.0f);
    Tensor<float> bias = Tensor<float>::zeros({8});
    auto y = layernorm(x, gain, bias, 1e-5f);
    for (int r = 0; r < 4; ++r) {
        double mu = 0, var = 0;
        for (int j = 0; j < 8; ++j) mu += y.values()[static_cast<std::size_t>(r) * 8 + j];
        mu /= 8;
        for (int j = 0; j < 8; ++j) {
            double d = y.values()[static_cast<std::size_t>(r) * 8 + j] - mu;
            var += d * d;
        }
        var /= 8;
        REQUIRE_THAT(mu, Catch::Matchers::WithinAbs(0.0, 1e-5));
        REQUIRE_THAT(var, Catch::Matchers::WithinAbs(1.0, 1e-3));
    }
}

TEST_CASE("layernorm gradients vs finite differences") {
    Rng rng(6, "test");
    Tensor<float> x = random_tensor({4, 8}, rng);
    Tensor<float> gain = random_tensor({8}, rng, 0.5f);
    Tensor<float> bias = random_tensor({8}, rng, 0.5f);
    Tensor<float> probe = random_tensor({4, 8}, rng);
    x.set_requires_grad(true);
    gain.set_requires_grad(true);
    bias.set_requires_grad(true);
    std::function<Tensor<float>()> loss = [&]() {
        return frobenius_rmse(layernorm(x, gain, bias, 1e-5f), probe);
    };
    auto report = grad_check<float>(loss, {{"x", x}, {"gain", gain}, {"bias", bias}}, 1e-2f, 1e-3f);
    CAPTURE(report.max_rel_error);
    REQUIRE(report.all_passed);
}

TEST_CASE("gelu values and monotonicity") {
    Tensor<float> zero = Tensor<float>::scalar(0.0f);
    REQUIRE(gelu(zero).value() == 0.0f);

    Tensor<float> big = Tensor<float>::from_data({2}, {20.0f, -20.0f});
    auto out = gelu(big);
    REQUIRE_THAT(out.values()[0], Catch::Matchers::WithinAbs(20.0, 1e-5));
    REQUIRE_THAT(out.values()[1], Catch::Matchers::WithinAbs(0.0, 1e-5));

    // Reference evaluation of the tanh form in double.
    const double x = 1.0;
    const double ref = 0.5 * x * (1.0 + std::tanh(0.7978845608028654 * (x + 0.044715 * x * x * x)));
    REQUIRE_THAT(gelu(Tensor<float>::scalar(1.0f)).value(),
                 Catch::Matchers::WithinAbs(ref, 1e-6));

    // GELU dips below zero with its minimum near -0.75, so monotonicity
    // only holds to the right of it.
    float prev = gelu(Tensor<float>::scalar(-0.7f)).value();
    for (int i = 1; i <= 37; ++i) {
        const float xi = -0.7f + static_cast<float>(i) * 0.1f;
        const float yi = gelu(Tensor<float>::scalar(xi)).value();
        REQUIRE(yi >= prev);
        prev = yi;
    }
    const float at_dip = gelu(Tensor<float>::scalar(-0.75f)).value();
    REQUIRE(at_dip < gelu(Tensor<float>::scalar(-3.0f)).value());
    REQUIRE(at_dip < 0.0f);
}

TEST_CASE("gelu gradient") {
    Rng rng(7, "test");
    float err = fd_check(random_tensor({3, 4}, rng), [&](const Tensor<float>& x) {
        return mean_all(gelu(x));
    });
    REQUIRE(err < 1e-3f);
}

TEST_CASE("frobenius_rmse values and symmetry") {
    Tensor<float> a = Tensor<float>::from_data({2, 2}, {1, 2, 3, 4});
    REQUIRE(frobenius_rmse(a, a).value() == 0.0f);

    Tensor<float> z = Tensor<float>::zeros({2, 2});
    Tensor<float> o = Tensor<float>::full({2, 2}, 1.0f);
    REQUIRE(frobenius_rmse(z, o).value() == 1.0f);

    Tensor<float> u = Tensor<float>::from_data({2}, {1, 2});
    Tensor<float> v = Tensor<float>::from_data({2}, {3, 2});
    REQUIRE_THAT(frobenius_rmse(u, v).value(),
                 Catch::Matchers::WithinAbs(std::sqrt(2.0), 1e-6));

    Rng rng(8, "test");
    for (int trial = 0; trial < 10; ++trial) {
        Tensor<float> x = random_tensor({3, 3}, rng);
        Tensor<float> y = random_tensor({3, 3}, rng);
        REQUIRE(frobenius_rmse(x, y).value() == frobenius_rmse(y, x).value());
    }

    REQUIRE_THROWS_AS(frobenius_rmse(a, Tensor<float>::zeros({2, 3})), ShapeError);
}

TEST_CASE("frobenius_rmse gradient on both inputs") {
    Rng rng(9, "test");
    Tensor<float> a = random_tensor({3, 4}, rng);
    Tensor<float> b = random_tensor({3, 4}, rng);
    a.set_requires_grad(true);
    b.set_requires_grad(true);
    std::function<Tensor<float>()> loss = [&]() { return frobenius_rmse(a, b); };
    auto report = grad_check<float>(loss, {{"a", a}, {"b", b}}, 1e-2f, 1e-3f);
    REQUIRE(report.all_passed);
}

TEST_CASE("elementwise and structural op gradients") {
    Rng rng(10, "test");
    Tensor<float> probe23 = random_tensor({2, 3}, rng);
    Tensor<float> probe32 = random_tensor({3, 2}, rng);
    Tensor<float> probe26 = random_tensor({2, 6}, rng);

    SECTION("add_rowvec") {
        Tensor<float> x = random_tensor({2, 3}, rng);
        Tensor<float> b = random_tensor({3}, rng);
        x.set_requires_grad(true);
        b.set_requires_grad(true);
        std::function<Tensor<float>()> loss = [&]() {
            return frobenius_rmse(add_rowvec(x, b), probe23);
        };
        REQUIRE(grad_check<float>(loss, {{"x", x}, {"b", b}}, 1e-2f, 1e-3f).all_passed);
    }
    SECTION("transpose") {
        float err = fd_check(random_tensor({2, 3}, rng), [&](const Tensor<float>& x) {
            return frobenius_rmse(transpose(x), probe32);
        });
        REQUIRE(err < 1e-3f);
    }
    SECTION("slice and concat") {
        float err = fd_check(random_tensor({2, 6}, rng), [&](const Tensor<float>& x) {
            auto left = slice_cols(x, 0, 2);
            auto right = slice_cols(x, 2, 6);
            return frobenius_rmse(concat_cols<float>({left, right}), probe26);
        });
        REQUIRE(err < 1e-3f);
        float err2 = fd_check(random_tensor({4, 3}, rng), [&](const Tensor<float>& x) {
            return frobenius_rmse(slice_rows(x, 1, 3), probe23);
        });
        REQUIRE(err2 < 1e-3f);
    }
    SECTION("mul and reshape") {
        Tensor<float> other = random_tensor({2, 3}, rng);
        float err = fd_check(random_tensor({2, 3}, rng), [&](const Tensor<float>& x) {
            return frobenius_rmse(reshape(mul(x, other), {3, 2}), probe32);
        });
        REQUIRE(err < 1e-3f);
    }
    SECTION("clamp_min_const both branches") {
        Tensor<float> lo = Tensor<float>::from_data({1}, {0.2f});
        Tensor<float> hi = Tensor<float>::from_data({1}, {0.8f});
        lo.set_requires_grad(true);
        hi.set_requires_grad(true);
        REQUIRE(clamp_min_const(lo, 0.5f).value() == 0.5f);
        REQUIRE(clamp_min_const(hi, 0.5f).value() == 0.8f);
        std::function<Tensor<float>()> loss_hi = [&]() { return clamp_min_const(hi, 0.5f); };
        REQUIRE(grad_check<float>(loss_hi, {{"hi", hi}}, 1e-3f, 1e-3f).all_passed);
        // Below the clamp the gradient is exactly zero.
        GradientTape<float> tape(clamp_min_const(lo, 0.5f));
        tape.backward();
        REQUIRE(lo.grad()[0] == 0.0f);
    }
    SECTION("lerp_rows") {
        Tensor<float> f = random_tensor({3, 4}, rng);
        Tensor<float> e = random_tensor({4}, rng);
        Tensor<float> m = Tensor<float>::from_data({3}, {0.2f, 0.7f, 0.5f});
        Tensor<float> probe34 = random_tensor({3, 4}, rng);
        f.set_requires_grad(true);
        e.set_requires_grad(true);
        m.set_requires_grad(true);
        std::function<Tensor<float>()> loss = [&]() {
            return frobenius_rmse(lerp_rows(f, e, m), probe34);
        };
        REQUIRE(grad_check<float>(loss, {{"f", f}, {"e", e}, {"m", m}}, 1e-2f, 1e-3f).all_passed);
    }
}

TEST_CASE("straight-through binarize forward and backward") {
    Tensor<float> soft = Tensor<float>::from_data({4}, {0.2f, 0.8f, 0.5f, 0.51f});
    soft.set_requires_grad(true);
    Tensor<float> hard = binarize_straight_through(soft);
    REQUIRE(hard.values()[0] == 0.0f);
    REQUIRE(hard.values()[1] == 1.0f);
    REQUIRE(hard.values()[2] == 0.0f);  // tie falls to drop
    REQUIRE(hard.values()[3] == 1.0f);

    GradientTape<float> tape(sum_all(hard));
    tape.backward();
    for (float g : soft.grad()) REQUIRE(g == 1.0f);
}

TEST_CASE("no NaN or Inf through forward and backward at magnitude 1e3") {
    Rng rng(12, "test");
    Tensor<float> x = random_tensor({4, 6}, rng, 1e3f);
    Tensor<float> gain = Tensor<float>::full({6}, 1.0f);
    Tensor<float> bias = Tensor<float>::zeros({6});
    x.set_requires_grad(true);
    gain.set_requires_grad(true);

    Tensor<float> y = softmax_lastaxis(x);
    Tensor<float> n = layernorm(x, gain, bias, 1e-5f);
    Tensor<float> g = gelu(n);
    Tensor<float> loss = frobenius_rmse(g, y);
    GradientTape<float> tape(loss);
    tape.backward();
    REQUIRE(std::isfinite(loss.value()));
    for (float v : y.values()) REQUIRE(std::isfinite(v));
    for (float v : n.values()) REQUIRE(std::isfinite(v));
    for (float v : g.values()) REQUIRE(std::isfinite(v));
    for (float v : x.grad()) REQUIRE(std::isfinite(v));
    for (float v : gain.grad()) REQUIRE(std::isfinite(v));
}

TEST_CASE("tape yields one gradient per parameter with matching shape") {
    Rng rng(13, "test");
    Tensor<float> w = random_tensor({3, 3}, rng);
    Tensor<float> x = random_tensor({2, 3}, rng);
    w.set_requires_grad(true);
    Tensor<float> loss = mean_all(matmul(x, w));
    GradientTape<float> tape(loss);
    tape.backward();
    REQUIRE(w.grad().size() == w.size());
    // Second independent pass accumulates again (caller owns zeroing).
    std::vector<float> first(w.grad().begin(), w.grad().end());
    Tensor<float> loss2 = mean_all(matmul(x, w));
    GradientTape<float> tape2(loss2);
    tape2.backward();
    for (std::size_t i = 0; i < first.size(); ++i) {
        REQUIRE_THAT(w.grad()[i], Catch::Matchers::WithinRel(2.0f * first[i], 1e-4f));
    }
}
