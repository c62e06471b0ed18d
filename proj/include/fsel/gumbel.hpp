#pragma once

#include <cmath>
#include <vector>

#include "fsel/ops.hpp"
#include "fsel/rng.hpp"
#include "fsel/tensor.hpp"

namespace fsel {

// Binary keep/drop decisions for L tokens. `hard` is exactly 0/1 and is what
// downstream ops consume; gradients route through `soft` via the
// straight-through contract (hard = binarize_straight_through(soft)).
template <typename Real>
struct GumbelMask {
    Tensor<Real> hard;  // [L], values in {0,1}
    Tensor<Real> soft;  // [L], keep probabilities
    Real temperature = Real(1);

    int tokens() const { return hard.extent(0); }
};

// g = -log(-log(u)), u clamped away from {0,1} so both logs stay finite.
inline double gumbel_from_uniform(double u) {
    constexpr double lo = 1e-10;
    constexpr double hi = 1.0 - 1e-10;
    u = u < lo ? lo : (u > hi ? hi : u);
    return -std::log(-std::log(u));
}

template <typename Real>
std::vector<Real> sample_gumbel_noise(std::size_t n, Rng& rng) {
    std::vector<Real> g(n);
    for (std::size_t i = 0; i < n; ++i) g[i] = static_cast<Real>(gumbel_from_uniform(rng.uniform01()));
    return g;
}

// Two-class Gumbel-Softmax with an explicit noise tensor (one Gumbel draw per
// logit). soft_i = softmax((logits_i + g_i)/tau)[keep].
template <typename Real>
GumbelMask<Real> gumbel_softmax_2class_from_noise(const Tensor<Real>& logits, Real tau,
                                                  const Tensor<Real>& noise) {
    if (tau <= Real(0)) throw ConfigError("gumbel_softmax: temperature must be positive");
    detail::require_rank("gumbel_softmax", logits, 2);
    if (logits.extent(1) != 2) {
        throw ShapeError("gumbel_softmax: expected [L,2] logits, got " + shape_str(logits.shape()));
    }
    detail::require_same_shape("gumbel_softmax", logits, noise);
    const int l = logits.extent(0);
    Tensor<Real> z = mul_scalar(add(logits, noise), Real(1) / tau);
    Tensor<Real> probs = softmax_lastaxis(z);
    GumbelMask<Real> mask;
    mask.soft = reshape(slice_cols(probs, 0, 1), {l});
    mask.hard = binarize_straight_through(mask.soft);
    mask.temperature = tau;
    return mask;
}

template <typename Real>
GumbelMask<Real> gumbel_softmax_2class(const Tensor<Real>& logits, Real tau, Rng& rng) {
    Tensor<Real> noise =
        Tensor<Real>::from_data(logits.shape(), sample_gumbel_noise<Real>(logits.size(), rng));
    return gumbel_softmax_2class_from_noise(logits, tau, noise);
}

// Noise-free ranking score per token: logit_keep - logit_drop. This is the
// inference path; no sampling is involved.
template <typename Real>
std::vector<Real> keep_scores(const Tensor<Real>& logits) {
    detail::require_rank("keep_scores", logits, 2);
    if (logits.extent(1) != 2) {
        throw ShapeError("keep_scores: expected [L,2] logits, got " + shape_str(logits.shape()));
    }
    const int l = logits.extent(0);
    auto lv = logits.values();
    std::vector<Real> scores(static_cast<std::size_t>(l));
    for (int i = 0; i < l; ++i) {
        scores[static_cast<std::size_t>(i)] =
            lv[static_cast<std::size_t>(i) * 2] - lv[static_cast<std::size_t>(i) * 2 + 1];
    }
    return scores;
}

}  // namespace fsel
