#include <catch2/catch_amalgamated.hpp>

#include "fsel/diffcheck.hpp"
#include "fsel/grad_check.hpp"
#include "fsel/ops.hpp"
#include "fsel/rng.hpp"

using namespace fsel;

TEST_CASE("grad_check accepts sum of squares") {
    Rng rng(21, "test");
    Tensor<float> x = Tensor<float>::zeros({6});
    for (auto& v : x.values()) v = static_cast<float>(rng.normal());
    x.set_requires_grad(true);
    std::function<Tensor<float>()> loss = [&]() { return sum_all(mul(x, x)); };
    auto report = grad_check<float>(loss, {{"x", x}}, 1e-3f, 1e-4f);
    REQUIRE(report.all_passed);

    // And the reverse-mode gradient itself is 2x.
    x.zero_grad();
    GradientTape<float> tape(loss());
    tape.backward();
    for (std::size_t i = 0; i < x.size(); ++i) {
        REQUIRE_THAT(x.grad()[i], Catch::Matchers::WithinRel(2.0f * x.values()[i], 1e-4f));
    }
}

TEST_CASE("grad_check flags a corrupted gradient") {
    Tensor<float> x = Tensor<float>::full({4}, 0.5f);
    x.set_requires_grad(true);
    std::function<Tensor<float>()> loss = [&]() { return sum_all(x); };
    std::function<void(std::vector<std::vector<float>>&)> corrupt =
        [](std::vector<std::vector<float>>& grads) { grads[0][0] += 1.0f; };
    auto report = grad_check<float>(loss, {{"x", x}}, 1e-3f, 1e-4f, corrupt);
    REQUIRE_FALSE(report.all_passed);
    REQUIRE(report.entries.size() == 1);
    REQUIRE(report.entries[0].name == "x");
    REQUIRE_FALSE(report.entries[0].passed);
}

TEST_CASE("grad_check report lists every parameter by name") {
    Tensor<float> a = Tensor<float>::full({2}, 1.0f);
    Tensor<float> b = Tensor<float>::full({3}, 2.0f);
    a.set_requires_grad(true);
    b.set_requires_grad(true);
    std::function<Tensor<float>()> loss = [&]() { return add(sum_all(mul(a, a)), sum_all(b)); };
    auto report = grad_check<float>(loss, {{"alpha", a}, {"beta", b}}, 1e-3f, 1e-3f);
    REQUIRE(report.entries.size() == 2);
    REQUIRE(report.entries[0].name == "alpha");
    REQUIRE(report.entries[1].name == "beta");
    REQUIRE(report.all_passed);
}

TEST_CASE("grad_check rejects non-positive step") {
    Tensor<float> x = Tensor<float>::full({1}, 1.0f);
    x.set_requires_grad(true);
    std::function<Tensor<float>()> loss = [&]() { return sum_all(x); };
    REQUIRE_THROWS_AS(grad_check<float>(loss, {{"x", x}}, 0.0f, 1e-3f), ConfigError);
}

TEST_CASE("full-loss differentiability suite") {
    DiffCheckConfig cfg;  // L=4, C=8, heads=2
    auto result = run_diff_check(cfg);
    CAPTURE(result.max_fd_rel_error, result.max_cross_rel_error);
    REQUIRE(result.passed);
    REQUIRE(result.max_fd_rel_error < 1e-2);

    cfg.corrupt_gradient = true;
    auto corrupted = run_diff_check(cfg);
    REQUIRE_FALSE(corrupted.passed);
}
