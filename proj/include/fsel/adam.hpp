#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "fsel/tensor.hpp"

namespace fsel {

// First/second moment buffers for one parameter tensor.
template <typename Real>
struct AdamSlot {
    Tensor<Real> m;
    Tensor<Real> v;
};

// Moments aligned with a parameter registry, plus the shared step counter.
template <typename Real>
struct AdamState {
    std::vector<AdamSlot<Real>> slots;
    std::int64_t step = 0;

    static AdamState zeros_like(const std::vector<std::pair<std::string, Tensor<Real>>>& params) {
        AdamState st;
        st.slots.reserve(params.size());
        for (const auto& [name, p] : params) {
            st.slots.push_back({Tensor<Real>::zeros(p.shape()), Tensor<Real>::zeros(p.shape())});
        }
        return st;
    }
};

// One bias-corrected Adam update over the registry. Parameters and state are
// updated in place; gradients are left untouched.
template <typename Real>
void adam_step(const std::vector<std::pair<std::string, Tensor<Real>>>& params,
               AdamState<Real>& state, Real lr, Real beta1, Real beta2, Real eps) {
    if (state.slots.size() != params.size()) {
        throw ShapeError("adam_step: state has " + std::to_string(state.slots.size()) +
                         " slots for " + std::to_string(params.size()) + " parameters");
    }
    state.step += 1;
    const double t = static_cast<double>(state.step);
    const Real bc1 = static_cast<Real>(1.0 - std::pow(static_cast<double>(beta1), t));
    const Real bc2 = static_cast<Real>(1.0 - std::pow(static_cast<double>(beta2), t));
    for (std::size_t i = 0; i < params.size(); ++i) {
        Tensor<Real> p = params[i].second;
        auto& slot = state.slots[i];
        if (slot.m.shape() != p.shape()) {
            throw ShapeError("adam_step: slot shape " + shape_str(slot.m.shape()) +
                             " does not match parameter '" + params[i].first + "' " +
                             shape_str(p.shape()));
        }
        auto pv = p.values();
        auto gv = p.grad();
        auto mv = slot.m.values();
        auto vv = slot.v.values();
        for (std::size_t j = 0; j < pv.size(); ++j) {
            const Real g = gv[j];
            mv[j] = beta1 * mv[j] + (Real(1) - beta1) * g;
            vv[j] = beta2 * vv[j] + (Real(1) - beta2) * g * g;
            const Real mhat = mv[j] / bc1;
            const Real vhat = vv[j] / bc2;
            pv[j] -= lr * mhat / (std::sqrt(vhat) + eps);
        }
    }
}

}  // namespace fsel
