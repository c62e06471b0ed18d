#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <memory>
#include <string>
#include <vector>

#include "fsel/tensor.hpp"

namespace fsel {

namespace detail {

template <typename Real>
bool track_grad(std::initializer_list<const Tensor<Real>*> inputs) {
    if (!autograd_enabled()) return false;
    for (const auto* t : inputs) {
        if (t->requires_grad()) return true;
    }
    return false;
}

template <typename Real>
void require_same_shape(const char* op, const Tensor<Real>& a, const Tensor<Real>& b) {
    if (a.shape() != b.shape()) {
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    }
}

template <typename Real>
void require_rank(const char* op, const Tensor<Real>& t, int rank) {
    if (t.ndim() != rank) {
        throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) +
                         ", got shape " + shape_str(t.shape()));
    }
}

// C[m,n] += A[m,k] * B[k,n]
template <typename Real>
void gemm_nn(int m, int n, int k, const Real* a, const Real* b, Real* c) {
    for (int i = 0; i < m; ++i) {
        const Real* arow = a + static_cast<std::size_t>(i) * k;
        Real* crow = c + static_cast<std::size_t>(i) * n;
        for (int l = 0; l < k; ++l) {
            const Real av = arow[l];
            const Real* brow = b + static_cast<std::size_t>(l) * n;
            for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

// C[m,n] += A[m,k] * B[n,k]^T
template <typename Real>
void gemm_nt(int m, int n, int k, const Real* a, const Real* b, Real* c) {
    for (int i = 0; i < m; ++i) {
        const Real* arow = a + static_cast<std::size_t>(i) * k;
        Real* crow = c + static_cast<std::size_t>(i) * n;
        for (int j = 0; j < n; ++j) {
            const Real* brow = b + static_cast<std::size_t>(j) * k;
            Real acc = Real(0);
            for (int l = 0; l < k; ++l) acc += arow[l] * brow[l];
            crow[j] += acc;
        }
    }
}

// C[k,n] += A[m,k]^T * B[m,n]
template <typename Real>
void gemm_tn(int m, int n, int k, const Real* a, const Real* b, Real* c) {
    for (int i = 0; i < m; ++i) {
        const Real* arow = a + static_cast<std::size_t>(i) * k;
        const Real* brow = b + static_cast<std::size_t>(i) * n;
        for (int l = 0; l < k; ++l) {
            const Real av = arow[l];
            Real* crow = c + static_cast<std::size_t>(l) * n;
            for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

template <typename Real>
std::size_t last_extent(const Tensor<Real>& t, const char* op) {
    if (t.ndim() < 1 || t.extent(t.ndim() - 1) < 1) {
        throw ShapeError(std::string(op) + ": needs a non-empty last axis, got shape " +
                         shape_str(t.shape()));
    }
    return static_cast<std::size_t>(t.extent(t.ndim() - 1));
}

}  // namespace detail

template <typename Real>
Tensor<Real> add(const Tensor<Real>& a, const Tensor<Real>& b) {
    detail::require_same_shape("add", a, b);
    Tensor<Real> out = Tensor<Real>::zeros(a.shape());
    auto av = a.values(), bv = b.values();
    auto ov = out.values();
    for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] + bv[i];
    if (detail::track_grad<Real>({&a, &b})) {
        out.set_node({a, b}, [a, b](const Tensor<Real>& o) mutable {
            auto g = o.grad();
            if (a.requires_grad()) {
                auto ga = a.grad();
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
            }
            if (b.requires_grad()) {
                auto gb = b.grad();
                for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
            }
        });
    }
    return out;
}

template <typename Real>
Tensor<Real> sub(const Tensor<Real>& a, const Tensor<Real>& b) {
    detail::require_same_shape("sub", a, b);
    Tensor<Real> out = Tensor<Real>::zeros(a.shape());
    auto av = a.values(), bv = b.values();
    auto ov = out.values();
    for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] - bv[i];
    if (detail::track_grad<Real>({&a, &b})) {
        out.set_node({a, b}, [a, b](const Tensor<Real>& o) mutable {
            auto g = o.grad();
            if (a.requires_grad()) {
                auto ga = a.grad();
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
            }
            if (b.requires_grad()) {
                auto gb = b.grad();
                for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
            }
        });
    }
    return out;
}

template <typename Real>
Tensor<Real> mul(const Tensor<Real>& a, const Tensor<Real>& b) {
    detail::require_same_shape("mul", a, b);
    Tensor<Real> out = Tensor<Real>::zeros(a.shape());
    auto av = a.values(), bv = b.values();
    auto ov = out.values();
    for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] * bv[i];
    if (detail::track_grad<Real>({&a, &b})) {
        out.set_node({a, b}, [a, b](const Tensor<Real>& o) mutable {
            auto g = o.grad();
            auto av2 = a.values(), bv2 = b.values();
            if (a.requires_grad()) {
                auto ga = a.grad();
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv2[i];
            }
            if (b.requires_grad()) {
                auto gb = b.grad();
                for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av2[i];
            }
        });
    }
    return out;
}

template <typename Real>
Tensor<Real> mul_scalar(const Tensor<Real>& a, Real s) {
    Tensor<Real> out = Tensor<Real>::zeros(a.shape());
    auto av = a.values();
    auto ov = out.values();
    for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] * s;
    if (detail::track_grad<Real>({&a})) {
        out.set_node({a}, [a, s](const Tensor<Real>& o) mutable {
            if (!a.requires_grad()) return;
            auto g = o.grad();
            auto ga = a.grad();
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * s;
        });
    }
    return out;
}

// x[..., C] + b[C], broadcast over leading axes.
template <typename Real>
Tensor<Real> add_rowvec(const Tensor<Real>& x, const Tensor<Real>& b) {
    detail::require_rank("add_rowvec", b, 1);
    const std::size_t c = detail::last_extent(x, "add_rowvec");
    if (c != static_cast<std::size_t>(b.extent(0))) {
        throw ShapeError("add_rowvec: last extent of " + shape_str(x.shape()) +
                         " does not match vector " + shape_str(b.shape()));
    }
    Tensor<Real> out = Tensor<Real>::zeros(x.shape());
    auto xv = x.values(), bv = b.values();
    auto ov = out.values();
    const std::size_t rows = xv.size() / c;
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < c; ++j) ov[r * c + j] = xv[r * c + j] + bv[j];
    if (detail::track_grad<Real>({&x, &b})) {
        out.set_node({x, b}, [x, b, rows, c](const Tensor<Real>& o) mutable {
            auto g = o.grad();
            if (x.requires_grad()) {
                auto gx = x.grad();
                for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
            }
            if (b.requires_grad()) {
                auto gb = b.grad();
                for (std::size_t r = 0; r < rows; ++r)
                    for (std::size_t j = 0; j < c; ++j) gb[j] += g[r * c + j];
            }
        });
    }
    return out;
}

template <typename Real>
Tensor<Real> matmul(const Tensor<Real>& a, const Tensor<Real>& b) {
    detail::require_rank("matmul", a, 2);
    detail::require_rank("matmul", b, 2);
    if (a.extent(1) != b.extent(0)) {
        throw ShapeError("matmul: inner extents differ: " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
    }
    const int m = a.extent(0), k = a.extent(1), n = b.extent(1);
    Tensor<Real> out = Tensor<Real>::zeros({m, n});
    detail::gemm_nn(m, n, k, a.values().data(), b.values().data(), out.values().data());
    if (detail::track_grad<Real>({&a, &b})) {
        out.set_node({a, b}, [a, b, m, n, k](const Tensor<Real>& o) mutable {
            auto g = o.grad();
            if (a.requires_grad()) {
                // dA += dC * B^T
                detail::gemm_nt(m, k, n, g.data(), b.values().data(), a.grad().data());
            }
            if (b.requires_grad()) {
                // dB += A^T * dC
                detail::gemm_tn(m, n, k, a.values().data(), g.data(), b.grad().data());
            }
        });
    }
    return out;
}

template <typename Real>
Tensor<Real> transpose(const Tensor<Real>& x) {
    detail::require_rank("transpose", x, 2);
    const int m = x.extent(0), n = x.extent(1);
    Tensor<Real> out = Tensor<Real>::zeros({n, m});
    auto xv = x.values();
    auto ov = out.values();
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j)
            ov[static_cast<std::size_t>(j) * m + i] = xv[static_cast<std::size_t>(i) * n + j];
    if (detail::track_grad<Real>({&x})) {
        out.set_node({x}, [x, m, n](const Tensor<Real>& o) mutable {
            if (!x.requires_grad()) return;
            auto g = o.grad();
            auto gx = x.grad();
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < n; ++j)
                    gx[static_cast<std::size_t>(i) * n + j] += g[static_cast<std::size_t>(j) * m + i];
        });
    }
    return out;
}

template <typename Real>
Tensor<Real> slice_rows(const Tensor<Real>& x, int r0, int r1) {
    detail::require_rank("slice_rows", x, 2);
    const int m = x.extent(0), n = x.extent(1);
    if (r0 < 0 || r1 > m || r0 >= r1) {
        throw ShapeError("slice_rows: range [" + std::to_string(r0) + "," + std::to_string(r1) +
                         ") invalid for shape " + shape_str(x.shape()));
    }
    Tensor<Real> out = Tensor<Real>::zeros({r1 - r0, n});
    auto xv = x.values();
    auto ov = out.values();
    std::copy(xv.begin() + static_cast<std::ptrdiff_t>(r0) * n,
              xv.begin() + static_cast<std::ptrdiff_t>(r1) * n, ov.begin());
    if (detail::track_grad<Real>({&x})) {
        out.set_node({x}, [x, r0, n](const Tensor<Real>& o) mutable {
            if (!x.requires_grad()) return;
            auto g = o.grad();
            auto gx = x.grad();
            const std::size_t base = static_cast<std::size_t>(r0) * n;
            for (std::size_t i = 0; i < g.size(); ++i) gx[base + i] += g[i];
        });
    }
    return out;
}

template <typename Real>
Tensor<Real> slice_cols(const Tensor<Real>& x, int c0, int c1) {
    detail::require_rank("slice_cols", x, 2);
    const int m = x.extent(0), n = x.extent(1);
    if (c0 < 0 || c1 > n || c0 >= c1) {
        throw ShapeError("slice_cols: range [" + std::to_string(c0) + "," + std::to_string(c1) +
                         ") invalid for shape " + shape_str(x.shape()));
    }
    const int w = c1 - c0;
    Tensor<Real> out = Tensor<Real>::zeros({m, w});
    auto xv = x.values();
    auto ov = out.values();
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < w; ++j)
            ov[static_cast<std::size_t>(i) * w + j] = xv[static_cast<std::size_t>(i) * n + c0 + j];
    if (detail::track_grad<Real>({&x})) {
        out.set_node({x}, [x, m, n, c0, w](const Tensor<Real>& o) mutable {
            if (!x.requires_grad()) return;
            auto g = o.grad();
            auto gx = x.grad();
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < w; ++j)
                    gx[static_cast<std::size_t>(i) * n + c0 + j] +=
                        g[static_cast<std::size_t>(i) * w + j];
        });
    }
    return out;
}

template <typename Real>
Tensor<Real> concat_cols(const std::vector<Tensor<Real>>& parts) {
    if (parts.empty()) throw ShapeError("concat_cols: no inputs");
    const int m = parts[0].extent(0);
    int total = 0;
    for (const auto& p : parts) {
        detail::require_rank("concat_cols", p, 2);
        if (p.extent(0) != m) {
            throw ShapeError("concat_cols: row mismatch " + shape_str(parts[0].shape()) + " vs " +
                             shape_str(p.shape()));
        }
        total += p.extent(1);
    }
    Tensor<Real> out = Tensor<Real>::zeros({m, total});
    auto ov = out.values();
    int off = 0;
    for (const auto& p : parts) {
        const int w = p.extent(1);
        auto pv = p.values();
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < w; ++j)
                ov[static_cast<std::size_t>(i) * total + off + j] =
                    pv[static_cast<std::size_t>(i) * w + j];
        off += w;
    }
    bool any = false;
    for (const auto& p : parts) any = any || p.requires_grad();
    if (autograd_enabled() && any) {
        std::vector<Tensor<Real>> parents = parts;
        out.set_node(parents, [parents, m, total](const Tensor<Real>& o) mutable {
            auto g = o.grad();
            int off2 = 0;
            for (auto& p : parents) {
                const int w = p.extent(1);
                if (p.requires_grad()) {
                    auto gp = p.grad();
                    for (int i = 0; i < m; ++i)
                        for (int j = 0; j < w; ++j)
                            gp[static_cast<std::size_t>(i) * w + j] +=
                                g[static_cast<std::size_t>(i) * total + off2 + j];
                }
                off2 += w;
            }
        });
    }
    return out;
}

template <typename Real>
Tensor<Real> reshape(const Tensor<Real>& x, std::vector<int> shape) {
    Tensor<Real> out = Tensor<Real>::from_data(std::move(shape),
                                               std::vector<Real>(x.values().begin(), x.values().end()));
    if (out.size() != x.size()) {
        throw ShapeError("reshape: element count mismatch " + shape_str(x.shape()) + " -> " +
                         shape_str(out.shape()));
    }
    if (detail::track_grad<Real>({&x})) {
        out.set_node({x}, [x](const Tensor<Real>& o) mutable {
            if (!x.requires_grad()) return;
            auto g = o.grad();
            auto gx = x.grad();
            for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
        });
    }
    return out;
}

// Shift-invariant softmax over the last axis.
template <typename Real>
Tensor<Real> softmax_lastaxis(const Tensor<Real>& x) {
    const std::size_t c = detail::last_extent(x, "softmax_lastaxis");
    Tensor<Real> out = Tensor<Real>::zeros(x.shape());
    auto xv = x.values();
    auto ov = out.values();
    const std::size_t rows = xv.size() / c;
    for (std::size_t r = 0; r < rows; ++r) {
        const Real* row = xv.data() + r * c;
        Real* orow = ov.data() + r * c;
        Real mx = row[0];
        for (std::size_t j = 1; j < c; ++j) mx = row[j] > mx ? row[j] : mx;
        double denom = 0.0;
        for (std::size_t j = 0; j < c; ++j) {
            orow[j] = std::exp(row[j] - mx);
            denom += static_cast<double>(orow[j]);
        }
        const Real inv = static_cast<Real>(1.0 / denom);
        for (std::size_t j = 0; j < c; ++j) orow[j] *= inv;
    }
    if (detail::track_grad<Real>({&x})) {
        out.set_node({x}, [x, rows, c](const Tensor<Real>& o) mutable {
            if (!x.requires_grad()) return;
            auto g = o.grad();
            auto y = o.values();
            auto gx = x.grad();
            for (std::size_t r = 0; r < rows; ++r) {
                const std::size_t base = r * c;
                double dot = 0.0;
                for (std::size_t j = 0; j < c; ++j)
                    dot += static_cast<double>(g[base + j]) * static_cast<double>(y[base + j]);
                for (std::size_t j = 0; j < c; ++j)
                    gx[base + j] += y[base + j] * (g[base + j] - static_cast<Real>(dot));
            }
        });
    }
    return out;
}

// Row-wise normalization over the last axis, then affine. Variance is the
// biased (1/C) estimator.
template <typename Real>
Tensor<Real> layernorm(const Tensor<Real>& x, const Tensor<Real>& gain, const Tensor<Real>& bias,
                       Real eps) {
    if (eps <= Real(0)) throw ConfigError("layernorm: eps must be positive");
    const std::size_t c = detail::last_extent(x, "layernorm");
    detail::require_rank("layernorm", gain, 1);
    detail::require_rank("layernorm", bias, 1);
    if (static_cast<std::size_t>(gain.extent(0)) != c || static_cast<std::size_t>(bias.extent(0)) != c) {
        throw ShapeError("layernorm: gain/bias extents do not match last axis of " +
                         shape_str(x.shape()));
    }
    Tensor<Real> out = Tensor<Real>::zeros(x.shape());
    auto xv = x.values();
    auto gv = gain.values();
    auto bv = bias.values();
    auto ov = out.values();
    const std::size_t rows = xv.size() / c;
    // Saved for backward.
    auto xhat = std::make_shared<std::vector<Real>>(xv.size());
    auto ivar = std::make_shared<std::vector<Real>>(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        const std::size_t base = r * c;
        double mu = 0.0;
        for (std::size_t j = 0; j < c; ++j) mu += static_cast<double>(xv[base + j]);
        mu /= static_cast<double>(c);
        double var = 0.0;
        for (std::size_t j = 0; j < c; ++j) {
            const double d = static_cast<double>(xv[base + j]) - mu;
            var += d * d;
        }
        var /= static_cast<double>(c);
        const Real iv = static_cast<Real>(1.0 / std::sqrt(var + static_cast<double>(eps)));
        (*ivar)[r] = iv;
        for (std::size_t j = 0; j < c; ++j) {
            const Real xh = (xv[base + j] - static_cast<Real>(mu)) * iv;
            (*xhat)[base + j] = xh;
            ov[base + j] = gv[j] * xh + bv[j];
        }
    }
    if (detail::track_grad<Real>({&x, &gain, &bias})) {
        out.set_node({x, gain, bias}, [x, gain, bias, xhat, ivar, rows, c](const Tensor<Real>& o) mutable {
            auto g = o.grad();
            auto gv2 = gain.values();
            if (gain.requires_grad()) {
                auto gg = gain.grad();
                for (std::size_t r = 0; r < rows; ++r)
                    for (std::size_t j = 0; j < c; ++j) gg[j] += g[r * c + j] * (*xhat)[r * c + j];
            }
            if (bias.requires_grad()) {
                auto gb = bias.grad();
                for (std::size_t r = 0; r < rows; ++r)
                    for (std::size_t j = 0; j < c; ++j) gb[j] += g[r * c + j];
            }
            if (x.requires_grad()) {
                auto gx = x.grad();
                for (std::size_t r = 0; r < rows; ++r) {
                    const std::size_t base = r * c;
                    double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
                    for (std::size_t j = 0; j < c; ++j) {
                        const double dxh = static_cast<double>(g[base + j]) * static_cast<double>(gv2[j]);
                        sum_dxhat += dxh;
                        sum_dxhat_xhat += dxh * static_cast<double>((*xhat)[base + j]);
                    }
                    const double invc = 1.0 / static_cast<double>(c);
                    for (std::size_t j = 0; j < c; ++j) {
                        const double dxh = static_cast<double>(g[base + j]) * static_cast<double>(gv2[j]);
                        const double dx = static_cast<double>((*ivar)[r]) *
                                          (dxh - invc * sum_dxhat -
                                           static_cast<double>((*xhat)[base + j]) * invc * sum_dxhat_xhat);
                        gx[base + j] += static_cast<Real>(dx);
                    }
                }
            }
        });
    }
    return out;
}

// GELU, tanh approximation.
template <typename Real>
Tensor<Real> gelu(const Tensor<Real>& x) {
    constexpr double kSqrt2OverPi = 0.7978845608028654;
    constexpr double kCubic = 0.044715;
    Tensor<Real> out = Tensor<Real>::zeros(x.shape());
    auto xv = x.values();
    auto ov = out.values();
    for (std::size_t i = 0; i < ov.size(); ++i) {
        const double v = static_cast<double>(xv[i]);
        const double u = kSqrt2OverPi * (v + kCubic * v * v * v);
        ov[i] = static_cast<Real>(0.5 * v * (1.0 + std::tanh(u)));
    }
    if (detail::track_grad<Real>({&x})) {
        out.set_node({x}, [x](const Tensor<Real>& o) mutable {
            if (!x.requires_grad()) return;
            auto g = o.grad();
            auto xv2 = x.values();
            auto gx = x.grad();
            for (std::size_t i = 0; i < g.size(); ++i) {
                const double v = static_cast<double>(xv2[i]);
                const double u = kSqrt2OverPi * (v + kCubic * v * v * v);
                const double t = std::tanh(u);
                const double du = kSqrt2OverPi * (1.0 + 3.0 * kCubic * v * v);
                const double d = 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * du;
                gx[i] += g[i] * static_cast<Real>(d);
            }
        });
    }
    return out;
}

template <typename Real>
Tensor<Real> sum_all(const Tensor<Real>& x) {
    double acc = 0.0;
    for (Real v : x.values()) acc += static_cast<double>(v);
    Tensor<Real> out = Tensor<Real>::scalar(static_cast<Real>(acc));
    if (detail::track_grad<Real>({&x})) {
        out.set_node({x}, [x](const Tensor<Real>& o) mutable {
            if (!x.requires_grad()) return;
            const Real g = o.grad()[0];
            auto gx = x.grad();
            for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g;
        });
    }
    return out;
}

template <typename Real>
Tensor<Real> mean_all(const Tensor<Real>& x) {
    const std::size_t n = x.size();
    if (n == 0) throw ShapeError("mean_all: empty tensor");
    double acc = 0.0;
    for (Real v : x.values()) acc += static_cast<double>(v);
    Tensor<Real> out = Tensor<Real>::scalar(static_cast<Real>(acc / static_cast<double>(n)));
    if (detail::track_grad<Real>({&x})) {
        out.set_node({x}, [x, n](const Tensor<Real>& o) mutable {
            if (!x.requires_grad()) return;
            const Real g = o.grad()[0] / static_cast<Real>(n);
            auto gx = x.grad();
            for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g;
        });
    }
    return out;
}

// Elementwise sum of same-shape tensors. Keeps batch graphs shallow.
template <typename Real>
Tensor<Real> add_n(const std::vector<Tensor<Real>>& parts) {
    if (parts.empty()) throw ShapeError("add_n: no inputs");
    for (const auto& p : parts) detail::require_same_shape("add_n", parts[0], p);
    Tensor<Real> out = Tensor<Real>::zeros(parts[0].shape());
    auto ov = out.values();
    for (const auto& p : parts) {
        auto pv = p.values();
        for (std::size_t i = 0; i < ov.size(); ++i) ov[i] += pv[i];
    }
    bool any = false;
    for (const auto& p : parts) any = any || p.requires_grad();
    if (autograd_enabled() && any) {
        std::vector<Tensor<Real>> parents = parts;
        out.set_node(parents, [parents](const Tensor<Real>& o) mutable {
            auto g = o.grad();
            for (auto& p : parents) {
                if (!p.requires_grad()) continue;
                auto gp = p.grad();
                for (std::size_t i = 0; i < g.size(); ++i) gp[i] += g[i];
            }
        });
    }
    return out;
}

// sqrt(mean((a-b)^2)) over all elements. Symmetric; zero iff a == b.
// At a == b the subgradient is taken as zero.
template <typename Real>
Tensor<Real> frobenius_rmse(const Tensor<Real>& a, const Tensor<Real>& b) {
    detail::require_same_shape("frobenius_rmse", a, b);
    auto av = a.values(), bv = b.values();
    const std::size_t n = av.size();
    if (n == 0) throw ShapeError("frobenius_rmse: empty tensors");
    double mse = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double d = static_cast<double>(av[i]) - static_cast<double>(bv[i]);
        mse += d * d;
    }
    mse /= static_cast<double>(n);
    const Real rmse = static_cast<Real>(std::sqrt(mse));
    Tensor<Real> out = Tensor<Real>::scalar(rmse);
    if (detail::track_grad<Real>({&a, &b})) {
        out.set_node({a, b}, [a, b, n](const Tensor<Real>& o) mutable {
            const Real r = o.value();
            if (r == Real(0)) return;
            const Real g = o.grad()[0];
            auto av2 = a.values(), bv2 = b.values();
            const Real scale = g / (static_cast<Real>(n) * r);
            if (a.requires_grad()) {
                auto ga = a.grad();
                for (std::size_t i = 0; i < n; ++i) ga[i] += scale * (av2[i] - bv2[i]);
            }
            if (b.requires_grad()) {
                auto gb = b.grad();
                for (std::size_t i = 0; i < n; ++i) gb[i] -= scale * (av2[i] - bv2[i]);
            }
        });
    }
    return out;
}

// Forward: v > threshold ? 1 : 0 (ties fall to 0). Backward: identity, the
// straight-through contract.
template <typename Real>
Tensor<Real> binarize_straight_through(const Tensor<Real>& x, Real threshold = Real(0.5)) {
    Tensor<Real> out = Tensor<Real>::zeros(x.shape());
    auto xv = x.values();
    auto ov = out.values();
    for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = xv[i] > threshold ? Real(1) : Real(0);
    if (detail::track_grad<Real>({&x})) {
        out.set_node({x}, [x](const Tensor<Real>& o) mutable {
            if (!x.requires_grad()) return;
            auto g = o.grad();
            auto gx = x.grad();
            for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
        });
    }
    return out;
}

// Value copy that drops out of the graph.
template <typename Real>
Tensor<Real> stop_gradient(const Tensor<Real>& x) {
    return x.detached();
}

// out_i = m_i * F_i + (1 - m_i) * e, one blend weight per row.
template <typename Real>
Tensor<Real> lerp_rows(const Tensor<Real>& f, const Tensor<Real>& e, const Tensor<Real>& m) {
    detail::require_rank("lerp_rows", f, 2);
    detail::require_rank("lerp_rows", e, 1);
    detail::require_rank("lerp_rows", m, 1);
    const int rows = f.extent(0), c = f.extent(1);
    if (e.extent(0) != c) {
        throw ShapeError("lerp_rows: embedding " + shape_str(e.shape()) + " does not match " +
                         shape_str(f.shape()));
    }
    if (m.extent(0) != rows) {
        throw ShapeError("lerp_rows: mask " + shape_str(m.shape()) + " does not match " +
                         shape_str(f.shape()));
    }
    Tensor<Real> out = Tensor<Real>::zeros(f.shape());
    auto fv = f.values();
    auto ev = e.values();
    auto mv = m.values();
    auto ov = out.values();
    for (int i = 0; i < rows; ++i) {
        const Real w = mv[static_cast<std::size_t>(i)];
        const std::size_t base = static_cast<std::size_t>(i) * c;
        for (int j = 0; j < c; ++j)
            ov[base + j] = w * fv[base + j] + (Real(1) - w) * ev[static_cast<std::size_t>(j)];
    }
    if (detail::track_grad<Real>({&f, &e, &m})) {
        out.set_node({f, e, m}, [f, e, m, rows, c](const Tensor<Real>& o) mutable {
            auto g = o.grad();
            auto fv2 = f.values();
            auto ev2 = e.values();
            auto mv2 = m.values();
            if (f.requires_grad()) {
                auto gf = f.grad();
                for (int i = 0; i < rows; ++i) {
                    const Real w = mv2[static_cast<std::size_t>(i)];
                    const std::size_t base = static_cast<std::size_t>(i) * c;
                    for (int j = 0; j < c; ++j) gf[base + j] += g[base + j] * w;
                }
            }
            if (e.requires_grad()) {
                auto ge = e.grad();
                for (int i = 0; i < rows; ++i) {
                    const Real w = Real(1) - mv2[static_cast<std::size_t>(i)];
                    const std::size_t base = static_cast<std::size_t>(i) * c;
                    for (int j = 0; j < c; ++j) ge[static_cast<std::size_t>(j)] += g[base + j] * w;
                }
            }
            if (m.requires_grad()) {
                auto gm = m.grad();
                for (int i = 0; i < rows; ++i) {
                    const std::size_t base = static_cast<std::size_t>(i) * c;
                    double acc = 0.0;
                    for (int j = 0; j < c; ++j)
                        acc += static_cast<double>(g[base + j]) *
                               (static_cast<double>(fv2[base + j]) -
                                static_cast<double>(ev2[static_cast<std::size_t>(j)]));
                    gm[static_cast<std::size_t>(i)] += static_cast<Real>(acc);
                }
            }
        });
    }
    return out;
}

// max(v, c). At v == c the gradient follows the input branch.
template <typename Real>
Tensor<Real> clamp_min_const(const Tensor<Real>& x, Real c) {
    Tensor<Real> out = Tensor<Real>::zeros(x.shape());
    auto xv = x.values();
    auto ov = out.values();
    for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = xv[i] > c ? xv[i] : c;
    if (detail::track_grad<Real>({&x})) {
        out.set_node({x}, [x, c](const Tensor<Real>& o) mutable {
            if (!x.requires_grad()) return;
            auto g = o.grad();
            auto xv2 = x.values();
            auto gx = x.grad();
            for (std::size_t i = 0; i < g.size(); ++i)
                if (xv2[i] >= c) gx[i] += g[i];
        });
    }
    return out;
}

}  // namespace fsel
