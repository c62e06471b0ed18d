#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "fsel/ops.hpp"
#include "fsel/tensor.hpp"

namespace fsel {

template <typename Real>
struct GradCheckEntry {
    std::string name;
    Real rel_error = Real(0);
    bool passed = true;
};

template <typename Real>
struct GradCheckReport {
    std::vector<GradCheckEntry<Real>> entries;
    Real max_rel_error = Real(0);
    bool all_passed = true;
};

// Compares reverse-mode gradients against central finite differences,
// per parameter tensor. The error is the norm ratio
//   |g - fd| / max(|g| + |fd|, tiny)
// which stays meaningful when individual components are near zero.
// `loss_fn` must be a pure function of the current parameter values.
// `grad_mutator`, when set, runs on the reverse-mode gradients before the
// comparison (negative-control hook).
template <typename Real>
GradCheckReport<Real> grad_check(
    const std::function<Tensor<Real>()>& loss_fn,
    const std::vector<std::pair<std::string, Tensor<Real>>>& params, Real h, Real tol,
    const std::function<void(std::vector<std::vector<Real>>&)>& grad_mutator = nullptr) {
    if (h <= Real(0)) throw ConfigError("grad_check: step h must be positive");

    // Reverse-mode gradients.
    for (const auto& [name, p] : params) {
        Tensor<Real> handle = p;
        handle.zero_grad();
    }
    Tensor<Real> loss = loss_fn();
    GradientTape<Real> tape(loss);
    tape.backward();
    std::vector<std::vector<Real>> analytic;
    analytic.reserve(params.size());
    for (const auto& [name, p] : params) {
        auto g = p.grad();
        analytic.emplace_back(g.begin(), g.end());
    }
    if (grad_mutator) grad_mutator(analytic);

    GradCheckReport<Real> report;
    NoGradScope no_grad;  // finite differences only need forward values
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        auto param = params[pi].second;
        auto data = param.values();
        double diff2 = 0.0, ref2g = 0.0, ref2f = 0.0;
        for (std::size_t i = 0; i < data.size(); ++i) {
            const Real saved = data[i];
            const Real xp = saved + h;
            const Real xm = saved - h;
            data[i] = xp;
            const double fp = static_cast<double>(loss_fn().value());
            data[i] = xm;
            const double fm = static_cast<double>(loss_fn().value());
            data[i] = saved;
            const double fd = (fp - fm) / static_cast<double>(xp - xm);
            const double ad = static_cast<double>(analytic[pi][i]);
            diff2 += (ad - fd) * (ad - fd);
            ref2g += ad * ad;
            ref2f += fd * fd;
        }
        const double denom = std::sqrt(ref2g) + std::sqrt(ref2f);
        const double rel = std::sqrt(diff2) / (denom > 1e-12 ? denom : 1e-12);
        GradCheckEntry<Real> entry;
        entry.name = params[pi].first;
        entry.rel_error = static_cast<Real>(rel);
        entry.passed = entry.rel_error < tol;
        report.all_passed = report.all_passed && entry.passed;
        if (entry.rel_error > report.max_rel_error) report.max_rel_error = entry.rel_error;
        report.entries.push_back(std::move(entry));
    }
    return report;
}

}  // namespace fsel
