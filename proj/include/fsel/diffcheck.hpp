#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "fsel/grad_check.hpp"
#include "fsel/gumbel.hpp"
#include "fsel/objective.hpp"
#include "fsel/transformer.hpp"

namespace fsel {

// Differentiability suite over the full training loss on a toy instance.
//
// The finite-difference oracle runs on a float64 twin of the loss (same
// parameter values, same noise): with N(0,0.02) initialization the deep
// attention weights carry gradients around 1e-6, which a float32 loss
// evaluation cannot resolve against its own rounding at any step size.
// The float32 gradients that training actually uses are then required to
// agree with the float64 reverse-mode gradients per tensor.
struct DiffCheckConfig {
    int tokens = 4;
    int width = 8;
    int heads = 2;
    std::uint64_t seed = 7;
    float p = 0.5f;
    float tau = 1.0f;
    double h = 1e-3;
    double tol = 1e-2;        // FD comparison, float64 path
    double cross_tol = 1e-2;  // float32 vs float64 reverse gradients
    bool corrupt_gradient = false;  // negative-control hook
};

struct DiffCheckEntry {
    std::string name;
    double fd_rel_error = 0;     // float64 reverse vs central differences
    double cross_rel_error = 0;  // float32 reverse vs float64 reverse
    bool passed = true;
};

struct DiffCheckResult {
    std::vector<DiffCheckEntry> entries;
    double max_fd_rel_error = 0;
    double max_cross_rel_error = 0;
    bool passed = true;
};

namespace detail {

template <typename Real>
struct ToyLoss {
    SelectorNetwork<Real> selector;
    ReconstructorNetwork<Real> reconstructor;
    Tensor<Real> features;
    Tensor<Real> noise;
    Real p, tau;

    Tensor<Real> operator()() const {
        return total_loss_with_noise<Real>(features, selector, reconstructor, p, tau, noise,
                                           MaskPath::Soft)
            .total;
    }
};

template <typename Real>
ToyLoss<Real> make_toy_loss(const DiffCheckConfig& cfg) {
    ToyLoss<Real> toy;
    auto nets = init_networks<Real>(cfg.width, cfg.tokens, cfg.heads, cfg.seed);
    toy.selector = std::move(nets.first);
    toy.reconstructor = std::move(nets.second);
    Rng fr(cfg.seed, "diffcheck-features");
    std::vector<Real> fd(static_cast<std::size_t>(cfg.tokens) * cfg.width);
    for (auto& v : fd) v = static_cast<Real>(fr.normal());
    toy.features = Tensor<Real>::from_data({cfg.tokens, cfg.width}, std::move(fd));
    Rng nrng(cfg.seed, "diffcheck-noise");
    toy.noise = Tensor<Real>::from_data(
        {cfg.tokens, 2}, sample_gumbel_noise<Real>(static_cast<std::size_t>(cfg.tokens) * 2, nrng));
    toy.p = static_cast<Real>(cfg.p);
    toy.tau = static_cast<Real>(cfg.tau);
    return toy;
}

template <typename Real>
std::vector<std::vector<Real>> reverse_gradients(
    const ToyLoss<Real>& toy, const std::vector<std::pair<std::string, Tensor<Real>>>& params) {
    for (const auto& [name, p] : params) p.zero_grad();
    Tensor<Real> loss = toy();
    GradientTape<Real> tape(loss);
    tape.backward();
    std::vector<std::vector<Real>> grads;
    grads.reserve(params.size());
    for (const auto& [name, p] : params) {
        auto g = p.grad();
        grads.emplace_back(g.begin(), g.end());
    }
    return grads;
}

inline double norm_rel_error(const std::vector<double>& a, const std::vector<double>& b,
                             double floor = 1e-12) {
    double diff2 = 0, na = 0, nb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        diff2 += (a[i] - b[i]) * (a[i] - b[i]);
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    const double denom = std::sqrt(na) + std::sqrt(nb);
    return std::sqrt(diff2) / (denom > floor ? denom : floor);
}

}  // namespace detail

inline DiffCheckResult run_diff_check(const DiffCheckConfig& cfg) {
    // float64 twin: FD oracle plus reference gradients.
    auto toy64 = detail::make_toy_loss<double>(cfg);
    auto params64 = named_parameters(toy64.selector, toy64.reconstructor);
    std::function<Tensor<double>()> loss64 = [&toy64]() { return toy64(); };
    std::function<void(std::vector<std::vector<double>>&)> mutator = nullptr;
    if (cfg.corrupt_gradient) {
        mutator = [](std::vector<std::vector<double>>& grads) {
            if (!grads.empty() && !grads.front().empty()) grads.front()[0] += 1.0;
        };
    }
    auto fd_report = grad_check<double>(loss64, params64, cfg.h, cfg.tol, mutator);

    // float32 instantiation of the same loss.
    auto toy32 = detail::make_toy_loss<float>(cfg);
    auto params32 = named_parameters(toy32.selector, toy32.reconstructor);
    auto grads32 = detail::reverse_gradients<float>(toy32, params32);
    auto grads64 = detail::reverse_gradients<double>(toy64, params64);
    if (cfg.corrupt_gradient && !grads32.empty() && !grads32.front().empty()) {
        grads32.front()[0] += 1.0f;
    }

    // Some parameters have an exactly-zero true gradient (the key bias
    // cancels under softmax shift invariance), leaving only rounding noise
    // in both precisions. Scale the comparison floor to the largest
    // gradient in the problem so those compare absolutely.
    double max_norm64 = 0;
    for (const auto& g : grads64) {
        double n2 = 0;
        for (double v : g) n2 += v * v;
        max_norm64 = std::max(max_norm64, std::sqrt(n2));
    }
    const double cross_floor = std::max(1e-4 * max_norm64, 1e-12);

    DiffCheckResult result;
    for (std::size_t i = 0; i < params64.size(); ++i) {
        DiffCheckEntry e;
        e.name = params64[i].first;
        e.fd_rel_error = static_cast<double>(fd_report.entries[i].rel_error);
        std::vector<double> g32(grads32[i].begin(), grads32[i].end());
        e.cross_rel_error = detail::norm_rel_error(g32, grads64[i], cross_floor);
        e.passed = e.fd_rel_error < cfg.tol && e.cross_rel_error < cfg.cross_tol;
        result.max_fd_rel_error = std::max(result.max_fd_rel_error, e.fd_rel_error);
        result.max_cross_rel_error = std::max(result.max_cross_rel_error, e.cross_rel_error);
        result.passed = result.passed && e.passed;
        result.entries.push_back(std::move(e));
    }
    return result;
}

}  // namespace fsel
