#pragma once

#include <functional>

#include "fsel/gumbel.hpp"
#include "fsel/ops.hpp"
#include "fsel/transformer.hpp"

namespace fsel {

// Which mask values drive the pipeline. Hard is the training default
// (straight-through); Soft is the fully smooth surrogate used by gradient
// checking.
enum class MaskPath { Hard, Soft };

// The two loss terms and their sum, kept as graph scalars so one backward
// pass covers everything.
template <typename Real>
struct LossBreakdown {
    Tensor<Real> reconstruction;  // normalized RMSE
    Tensor<Real> l_pr;            // retained fraction, in [0,1]
    Tensor<Real> clamped_reg;     // max(l_pr, p)
    Tensor<Real> total;           // reconstruction + clamped_reg

    struct Values {
        Real reconstruction, l_pr, clamped_reg, total;
    };
    Values values() const {
        return {reconstruction.value(), l_pr.value(), clamped_reg.value(), total.value()};
    }
};

// Row i of the result is mask_i * F_i + (1 - mask_i) * E_masked. On the hard
// path kept rows pass through bit-exactly and dropped rows become E_masked;
// gradients reach the logits through the straight-through mask, F through
// kept rows, and E_masked through dropped rows.
template <typename Real>
Tensor<Real> apply_mask(const Tensor<Real>& features, const GumbelMask<Real>& mask,
                        const Tensor<Real>& masked_embedding, MaskPath path = MaskPath::Hard) {
    return lerp_rows(features, masked_embedding, path == MaskPath::Hard ? mask.hard : mask.soft);
}

// Mean of the mask. On the hard path the forward value is the exact retained
// fraction (a multiple of 1/L) while gradients flow through the soft values.
template <typename Real>
Tensor<Real> regularization_term(const GumbelMask<Real>& mask, MaskPath path = MaskPath::Hard) {
    return mean_all(path == MaskPath::Hard ? mask.hard : mask.soft);
}

// max(l_pr, p): below the retention target the penalty is a constant and its
// mask gradient vanishes. At l_pr == p the gradient stays live.
template <typename Real>
Tensor<Real> clamped_regularization(const Tensor<Real>& l_pr, Real p) {
    if (!(p > Real(0) && p <= Real(1))) {
        throw ConfigError("clamped_regularization: retention target p must be in (0,1], got " +
                          format_real(p));
    }
    return clamp_min_const(l_pr, p);
}

template <typename Real>
Real clamped_regularization_value(Real l_pr, Real p) {
    if (!(p > Real(0) && p <= Real(1))) {
        throw ConfigError("clamped_regularization: retention target p must be in (0,1], got " +
                          format_real(p));
    }
    return l_pr > p ? l_pr : p;
}

// Assembles the two-term objective from an already-sampled mask and any
// reconstruction map. The reconstruction term never depends on p.
template <typename Real>
LossBreakdown<Real> assemble_loss(const Tensor<Real>& features, const GumbelMask<Real>& mask,
                                  const Tensor<Real>& masked_embedding, Real p, MaskPath path,
                                  const std::function<Tensor<Real>(const Tensor<Real>&)>& reconstruct) {
    LossBreakdown<Real> loss;
    Tensor<Real> pruned = apply_mask(features, mask, masked_embedding, path);
    Tensor<Real> restored = reconstruct(pruned);
    loss.reconstruction = frobenius_rmse(restored, features);
    loss.l_pr = regularization_term(mask, path);
    loss.clamped_reg = clamped_regularization(loss.l_pr, p);
    loss.total = add(loss.reconstruction, loss.clamped_reg);
    return loss;
}

// Full training objective for one feature matrix: selector logits, one fresh
// Gumbel sample per token, masking, reconstruction, and the clamped
// regularizer.
template <typename Real>
LossBreakdown<Real> total_loss(const Tensor<Real>& features, const SelectorNetwork<Real>& selector,
                               const ReconstructorNetwork<Real>& reconstructor, Real p, Real tau,
                               Rng& rng, MaskPath path = MaskPath::Hard) {
    Tensor<Real> logits = selector_logits(selector, features);
    GumbelMask<Real> mask = gumbel_softmax_2class(logits, tau, rng);
    return assemble_loss<Real>(features, mask, selector.masked_embedding, p, path,
                               [&](const Tensor<Real>& pruned) {
                                   return reconstructor_forward(reconstructor, pruned);
                               });
}

// Deterministic variant used by gradient checks: the caller supplies the
// noise once, so repeated evaluations see the same function.
template <typename Real>
LossBreakdown<Real> total_loss_with_noise(const Tensor<Real>& features,
                                          const SelectorNetwork<Real>& selector,
                                          const ReconstructorNetwork<Real>& reconstructor, Real p,
                                          Real tau, const Tensor<Real>& noise,
                                          MaskPath path = MaskPath::Hard) {
    Tensor<Real> logits = selector_logits(selector, features);
    GumbelMask<Real> mask = gumbel_softmax_2class_from_noise(logits, tau, noise);
    return assemble_loss<Real>(features, mask, selector.masked_embedding, p, path,
                               [&](const Tensor<Real>& pruned) {
                                   return reconstructor_forward(reconstructor, pruned);
                               });
}

}  // namespace fsel
