#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "fsel/gumbel.hpp"
#include "fsel/ops.hpp"

using namespace fsel;

TEST_CASE("gumbel transform at u = 1/e is zero") {
    REQUIRE_THAT(gumbel_from_uniform(1.0 / std::exp(1.0)), Catch::Matchers::WithinAbs(0.0, 1e-12));
}

TEST_CASE("gumbel noise mean approaches Euler-Mascheroni") {
    Rng rng(100, "gumbel");
    double acc = 0;
    const int n = 100000;
    for (int i = 0; i < n; ++i) acc += gumbel_from_uniform(rng.uniform01());
    REQUIRE_THAT(acc / n, Catch::Matchers::WithinAbs(0.5772156649, 0.02));
}

TEST_CASE("gumbel noise is deterministic per seed") {
    Rng a(42, "gumbel"), b(42, "gumbel"), c(43, "gumbel");
    auto ga = sample_gumbel_noise<float>(32, a);
    auto gb = sample_gumbel_noise<float>(32, b);
    auto gc = sample_gumbel_noise<float>(32, c);
    REQUIRE(ga == gb);
    REQUIRE(ga != gc);
}

TEST_CASE("tied logits with zero noise give soft 0.5 and hard drop") {
    Tensor<float> logits = Tensor<float>::zeros({3, 2});
    Tensor<float> noise = Tensor<float>::zeros({3, 2});
    auto mask = gumbel_softmax_2class_from_noise(logits, 1.0f, noise);
    for (int i = 0; i < 3; ++i) {
        REQUIRE(mask.soft.values()[static_cast<std::size_t>(i)] == 0.5f);
        REQUIRE(mask.hard.values()[static_cast<std::size_t>(i)] == 0.0f);
    }
}

TEST_CASE("keep frequency follows softmax of the logits") {
    // keep/drop logits (ln 2, 0): Gumbel-argmax keeps with probability 2/3.
    const float ln2 = std::log(2.0f);
    Tensor<float> logits = Tensor<float>::from_data({1, 2}, {ln2, 0.0f});
    Rng rng(7, "gumbel-mc");
    int keeps = 0;
    const int n = 100000;
    for (int i = 0; i < n; ++i) {
        auto mask = gumbel_softmax_2class(logits, 1.0f, rng);
        keeps += mask.hard.values()[0] > 0.5f ? 1 : 0;
    }
    REQUIRE_THAT(static_cast<double>(keeps) / n, Catch::Matchers::WithinAbs(2.0 / 3.0, 0.01));
}

TEST_CASE("keep frequency matches softmax on random logits within 3 sigma") {
    Rng lrng(9, "logits");
    for (int trial = 0; trial < 4; ++trial) {
        const float lk = static_cast<float>(lrng.normal());
        const float ld = static_cast<float>(lrng.normal());
        Tensor<float> logits = Tensor<float>::from_data({1, 2}, {lk, ld});
        const double pk = 1.0 / (1.0 + std::exp(static_cast<double>(ld - lk)));
        Rng rng(200 + static_cast<std::uint64_t>(trial), "gumbel-mc");
        int keeps = 0;
        const int n = 40000;
        for (int i = 0; i < n; ++i) {
            auto mask = gumbel_softmax_2class(logits, 1.0f, rng);
            keeps += mask.hard.values()[0] > 0.5f ? 1 : 0;
        }
        const double freq = static_cast<double>(keeps) / n;
        const double sigma = std::sqrt(pk * (1 - pk) / n);
        REQUIRE_THAT(freq, Catch::Matchers::WithinAbs(pk, 3 * sigma + 1e-4));
    }
}

TEST_CASE("low temperature saturates") {
    // keep - drop = +4 at tau = 0.05 with zero noise.
    Tensor<float> logits = Tensor<float>::from_data({1, 2}, {4.0f, 0.0f});
    Tensor<float> noise = Tensor<float>::zeros({1, 2});
    auto mask = gumbel_softmax_2class_from_noise(logits, 0.05f, noise);
    REQUIRE(mask.soft.values()[0] > 0.99f);
    REQUIRE(mask.hard.values()[0] == 1.0f);
}

TEST_CASE("soft approaches hard as tau goes to zero") {
    Rng rng(31, "gumbel");
    Tensor<float> logits = Tensor<float>::from_data({4, 2}, {1, 0, -2, 0, 3, 0, 0, 1});
    Tensor<float> noise =
        Tensor<float>::from_data({4, 2}, sample_gumbel_noise<float>(8, rng));
    // Keep noise away from exact ties.
    auto mask = gumbel_softmax_2class_from_noise(logits, 0.01f, noise);
    for (std::size_t i = 0; i < 4; ++i) {
        const float diff = std::abs(mask.soft.values()[i] - mask.hard.values()[i]);
        REQUIRE(diff < 1e-3f);
    }
}

TEST_CASE("hard mask is exactly binary with strictly interior soft values") {
    Rng rng(17, "gumbel");
    Rng lrng(18, "logits");
    Tensor<float> logits = Tensor<float>::zeros({16, 2});
    for (auto& v : logits.values()) v = static_cast<float>(lrng.normal());
    auto mask = gumbel_softmax_2class(logits, 1.0f, rng);
    for (std::size_t i = 0; i < 16; ++i) {
        const float h = mask.hard.values()[i];
        REQUIRE((h == 0.0f || h == 1.0f));
        REQUIRE(mask.soft.values()[i] > 0.0f);
        REQUIRE(mask.soft.values()[i] < 1.0f);
        REQUIRE((mask.hard.values()[i] == 1.0f) == (mask.soft.values()[i] > 0.5f));
    }
}

TEST_CASE("straight-through gradients equal the detach-composition path") {
    // Path A: the straight-through op. Path B: soft + stop_gradient(hard - soft).
    Rng rng(23, "gumbel");
    Tensor<float> noise = Tensor<float>::from_data({5, 2}, sample_gumbel_noise<float>(10, rng));
    Rng lrng(24, "logits");
    std::vector<float> lv(10);
    for (auto& v : lv) v = static_cast<float>(lrng.normal());

    Tensor<float> logits_a = Tensor<float>::from_data({5, 2}, lv);
    logits_a.set_requires_grad(true);
    auto mask_a = gumbel_softmax_2class_from_noise(logits_a, 1.0f, noise);
    Tensor<float> weights = Tensor<float>::from_data({5}, {0.3f, -1.2f, 2.0f, 0.5f, -0.7f});
    GradientTape<float> tape_a(sum_all(mul(mask_a.hard, weights)));
    tape_a.backward();

    Tensor<float> logits_b = Tensor<float>::from_data({5, 2}, lv);
    logits_b.set_requires_grad(true);
    auto mask_b = gumbel_softmax_2class_from_noise(logits_b, 1.0f, noise);
    Tensor<float> hard_b = add(mask_b.soft, stop_gradient(sub(mask_b.hard, mask_b.soft)));
    // The composition reproduces the hard values bit-exactly.
    for (std::size_t i = 0; i < 5; ++i) {
        REQUIRE(hard_b.values()[i] == mask_a.hard.values()[i]);
    }
    GradientTape<float> tape_b(sum_all(mul(hard_b, weights)));
    tape_b.backward();

    for (std::size_t i = 0; i < 10; ++i) {
        REQUIRE(logits_a.grad()[i] == logits_b.grad()[i]);
    }
}

TEST_CASE("keep scores") {
    Tensor<float> logits = Tensor<float>::from_data({2, 2}, {3, 1, -1, 2});
    auto scores = keep_scores(logits);
    REQUIRE(scores[0] == 2.0f);
    REQUIRE(scores[1] == -3.0f);

    // Shift invariance per row.
    Tensor<float> shifted = Tensor<float>::from_data({2, 2}, {3 + 5, 1 + 5, -1 - 2, 2 - 2});
    auto scores2 = keep_scores(shifted);
    REQUIRE(scores2[0] == scores[0]);
    REQUIRE(scores2[1] == scores[1]);
}

TEST_CASE("score ranking equals noise-free soft-probability ranking") {
    Rng lrng(25, "logits");
    Tensor<float> logits = Tensor<float>::zeros({8, 2});
    for (auto& v : logits.values()) v = static_cast<float>(lrng.normal());
    auto scores = keep_scores(logits);

    Tensor<float> zero_noise = Tensor<float>::zeros({8, 2});
    auto mask = gumbel_softmax_2class_from_noise(logits, 0.7f, zero_noise);
    for (int i = 0; i < 8; ++i) {
        for (int j = 0; j < 8; ++j) {
            const bool by_score = scores[static_cast<std::size_t>(i)] > scores[static_cast<std::size_t>(j)];
            const bool by_soft = mask.soft.values()[static_cast<std::size_t>(i)] >
                                 mask.soft.values()[static_cast<std::size_t>(j)];
            REQUIRE(by_score == by_soft);
        }
    }
}

TEST_CASE("temperature must be positive") {
    Tensor<float> logits = Tensor<float>::zeros({2, 2});
    Rng rng(1, "gumbel");
    REQUIRE_THROWS_AS(gumbel_softmax_2class(logits, 0.0f, rng), ConfigError);
    REQUIRE_THROWS_AS(gumbel_softmax_2class(logits, -1.0f, rng), ConfigError);
}
