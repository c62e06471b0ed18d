#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "fsel/ops.hpp"
#include "fsel/rng.hpp"
#include "fsel/tensor.hpp"

namespace fsel {

inline constexpr int kStackLayers = 3;
inline constexpr int kMlpExpansion = 4;
inline constexpr double kInitStddev = 0.02;

template <typename Real>
struct LayerNormParams {
    Tensor<Real> gain;  // [C]
    Tensor<Real> bias;  // [C]
};

template <typename Real>
struct AttentionParams {
    Tensor<Real> wq, bq, wk, bk, wv, bv, wo, bo;  // weights [C,C], biases [C]
};

template <typename Real>
struct MlpParams {
    Tensor<Real> w1, b1;  // [C,4C], [4C]
    Tensor<Real> w2, b2;  // [4C,C], [C]
};

template <typename Real>
struct TransformerLayerParams {
    LayerNormParams<Real> ln1;
    AttentionParams<Real> attn;
    LayerNormParams<Real> ln2;
    MlpParams<Real> mlp;
};

// Pre-norm stack of kStackLayers layers plus a learned absolute positional
// table shared by all of them. Width equals the input feature width.
template <typename Real>
struct TransformerStackParams {
    int width = 0;
    int heads = 1;
    int l_max = 0;
    Tensor<Real> pos;  // [l_max, width]
    std::vector<TransformerLayerParams<Real>> layers;
};

template <typename Real>
struct SelectorNetwork {
    TransformerStackParams<Real> stack;
    Tensor<Real> head_w;  // [C,2] keep/drop logits
    Tensor<Real> head_b;  // [2]
    Tensor<Real> masked_embedding;  // [C], substituted for dropped tokens
};

template <typename Real>
struct ReconstructorNetwork {
    TransformerStackParams<Real> stack;
};

namespace detail {

template <typename Real>
Tensor<Real> gaussian_param(std::vector<int> shape, Rng& rng, double stddev) {
    Tensor<Real> t = Tensor<Real>::zeros(std::move(shape));
    for (auto& v : t.values()) v = static_cast<Real>(rng.normal() * stddev);
    t.set_requires_grad(true);
    return t;
}

template <typename Real>
Tensor<Real> const_param(std::vector<int> shape, Real value) {
    Tensor<Real> t = Tensor<Real>::full(std::move(shape), value);
    t.set_requires_grad(true);
    return t;
}

template <typename Real>
TransformerStackParams<Real> init_stack(int c, int l_max, int heads, Rng& rng) {
    TransformerStackParams<Real> s;
    s.width = c;
    s.heads = heads;
    s.l_max = l_max;
    s.pos = gaussian_param<Real>({l_max, c}, rng, kInitStddev);
    s.layers.resize(kStackLayers);
    for (auto& layer : s.layers) {
        layer.ln1.gain = const_param<Real>({c}, Real(1));
        layer.ln1.bias = const_param<Real>({c}, Real(0));
        layer.attn.wq = gaussian_param<Real>({c, c}, rng, kInitStddev);
        layer.attn.bq = const_param<Real>({c}, Real(0));
        layer.attn.wk = gaussian_param<Real>({c, c}, rng, kInitStddev);
        layer.attn.bk = const_param<Real>({c}, Real(0));
        layer.attn.wv = gaussian_param<Real>({c, c}, rng, kInitStddev);
        layer.attn.bv = const_param<Real>({c}, Real(0));
        layer.attn.wo = gaussian_param<Real>({c, c}, rng, kInitStddev);
        layer.attn.bo = const_param<Real>({c}, Real(0));
        layer.ln2.gain = const_param<Real>({c}, Real(1));
        layer.ln2.bias = const_param<Real>({c}, Real(0));
        layer.mlp.w1 = gaussian_param<Real>({c, kMlpExpansion * c}, rng, kInitStddev);
        layer.mlp.b1 = const_param<Real>({kMlpExpansion * c}, Real(0));
        layer.mlp.w2 = gaussian_param<Real>({kMlpExpansion * c, c}, rng, kInitStddev);
        layer.mlp.b2 = const_param<Real>({c}, Real(0));
    }
    return s;
}

}  // namespace detail

// Weights ~ N(0, kInitStddev), biases zero, layernorm gains one. The draw
// order is fixed, so a seed pins every parameter.
template <typename Real = float>
std::pair<SelectorNetwork<Real>, ReconstructorNetwork<Real>> init_networks(int c, int l_max,
                                                                           int heads,
                                                                           std::uint64_t seed) {
    if (c < 1 || l_max < 1 || heads < 1) {
        throw ConfigError("init_networks: extents must be positive");
    }
    if (c % heads != 0) {
        throw ConfigError("init_networks: heads (" + std::to_string(heads) +
                          ") must divide feature width (" + std::to_string(c) + ")");
    }
    Rng rng(seed, "init");
    SelectorNetwork<Real> sel;
    sel.stack = detail::init_stack<Real>(c, l_max, heads, rng);
    sel.head_w = detail::gaussian_param<Real>({c, 2}, rng, kInitStddev);
    sel.head_b = detail::const_param<Real>({2}, Real(0));
    sel.masked_embedding = detail::gaussian_param<Real>({c}, rng, kInitStddev);
    ReconstructorNetwork<Real> rec;
    rec.stack = detail::init_stack<Real>(c, l_max, heads, rng);
    return {std::move(sel), std::move(rec)};
}

namespace detail {

template <typename Real>
void collect_stack_params(const std::string& prefix, const TransformerStackParams<Real>& s,
                          std::vector<std::pair<std::string, Tensor<Real>>>& out) {
    out.emplace_back(prefix + ".pos", s.pos);
    for (std::size_t i = 0; i < s.layers.size(); ++i) {
        const std::string lp = prefix + ".layer" + std::to_string(i);
        const auto& l = s.layers[i];
        out.emplace_back(lp + ".ln1.gain", l.ln1.gain);
        out.emplace_back(lp + ".ln1.bias", l.ln1.bias);
        out.emplace_back(lp + ".attn.wq", l.attn.wq);
        out.emplace_back(lp + ".attn.bq", l.attn.bq);
        out.emplace_back(lp + ".attn.wk", l.attn.wk);
        out.emplace_back(lp + ".attn.bk", l.attn.bk);
        out.emplace_back(lp + ".attn.wv", l.attn.wv);
        out.emplace_back(lp + ".attn.bv", l.attn.bv);
        out.emplace_back(lp + ".attn.wo", l.attn.wo);
        out.emplace_back(lp + ".attn.bo", l.attn.bo);
        out.emplace_back(lp + ".ln2.gain", l.ln2.gain);
        out.emplace_back(lp + ".ln2.bias", l.ln2.bias);
        out.emplace_back(lp + ".mlp.w1", l.mlp.w1);
        out.emplace_back(lp + ".mlp.b1", l.mlp.b1);
        out.emplace_back(lp + ".mlp.w2", l.mlp.w2);
        out.emplace_back(lp + ".mlp.b2", l.mlp.b2);
    }
}

}  // namespace detail

template <typename Real>
std::vector<std::pair<std::string, Tensor<Real>>> named_parameters(const SelectorNetwork<Real>& sel) {
    std::vector<std::pair<std::string, Tensor<Real>>> out;
    detail::collect_stack_params("selector", sel.stack, out);
    out.emplace_back("selector.head.w", sel.head_w);
    out.emplace_back("selector.head.b", sel.head_b);
    out.emplace_back("selector.e_masked", sel.masked_embedding);
    return out;
}

template <typename Real>
std::vector<std::pair<std::string, Tensor<Real>>> named_parameters(const ReconstructorNetwork<Real>& rec) {
    std::vector<std::pair<std::string, Tensor<Real>>> out;
    detail::collect_stack_params("reconstructor", rec.stack, out);
    return out;
}

template <typename Real>
std::vector<std::pair<std::string, Tensor<Real>>> named_parameters(const SelectorNetwork<Real>& sel,
                                                                   const ReconstructorNetwork<Real>& rec) {
    auto out = named_parameters(sel);
    auto r = named_parameters(rec);
    out.insert(out.end(), r.begin(), r.end());
    return out;
}

namespace detail {

template <typename Real>
Tensor<Real> attention(const AttentionParams<Real>& p, const Tensor<Real>& x, int heads,
                       std::vector<Tensor<Real>>* attn_trace) {
    const int l = x.extent(0), c = x.extent(1);
    const int d = c / heads;
    Tensor<Real> q = add_rowvec(matmul(x, p.wq), p.bq);
    Tensor<Real> k = add_rowvec(matmul(x, p.wk), p.bk);
    Tensor<Real> v = add_rowvec(matmul(x, p.wv), p.bv);
    const Real scale = static_cast<Real>(1.0 / std::sqrt(static_cast<double>(d)));
    std::vector<Tensor<Real>> head_outs;
    head_outs.reserve(static_cast<std::size_t>(heads));
    for (int h = 0; h < heads; ++h) {
        Tensor<Real> qh = slice_cols(q, h * d, (h + 1) * d);
        Tensor<Real> kh = slice_cols(k, h * d, (h + 1) * d);
        Tensor<Real> vh = slice_cols(v, h * d, (h + 1) * d);
        Tensor<Real> scores = mul_scalar(matmul(qh, transpose(kh)), scale);  // [L,L]
        Tensor<Real> probs = softmax_lastaxis(scores);
        if (attn_trace) attn_trace->push_back(probs);
        head_outs.push_back(matmul(probs, vh));
    }
    Tensor<Real> merged = heads == 1 ? head_outs[0] : concat_cols(head_outs);
    (void)l;
    return add_rowvec(matmul(merged, p.wo), p.bo);
}

}  // namespace detail

inline constexpr float kLayerNormEps = 1e-5f;

// Positional embedding addition followed by kStackLayers pre-norm blocks.
// Token count is preserved. `attn_trace`, when given, collects the
// post-softmax attention matrices (one per layer per head).
template <typename Real>
Tensor<Real> stack_forward(const TransformerStackParams<Real>& p, const Tensor<Real>& x,
                           std::vector<Tensor<Real>>* attn_trace = nullptr) {
    detail::require_rank("stack_forward", x, 2);
    const int l = x.extent(0), c = x.extent(1);
    if (c != p.width) {
        throw ShapeError("stack_forward: input width " + std::to_string(c) +
                         " does not match network width " + std::to_string(p.width));
    }
    if (l > p.l_max) {
        throw CapacityError("stack_forward: sequence length " + std::to_string(l) +
                            " exceeds positional capacity " + std::to_string(p.l_max));
    }
    Tensor<Real> h = add(x, slice_rows(p.pos, 0, l));
    const Real eps = static_cast<Real>(kLayerNormEps);
    for (const auto& layer : p.layers) {
        Tensor<Real> a = detail::attention(layer.attn, layernorm(h, layer.ln1.gain, layer.ln1.bias, eps),
                                           p.heads, attn_trace);
        h = add(h, a);
        Tensor<Real> m = layernorm(h, layer.ln2.gain, layer.ln2.bias, eps);
        m = add_rowvec(matmul(m, layer.mlp.w1), layer.mlp.b1);
        m = gelu(m);
        m = add_rowvec(matmul(m, layer.mlp.w2), layer.mlp.b2);
        h = add(h, m);
    }
    return h;
}

// Per-token keep/drop logits, shape [L,2].
template <typename Real>
Tensor<Real> selector_logits(const SelectorNetwork<Real>& net, const Tensor<Real>& features,
                             std::vector<Tensor<Real>>* attn_trace = nullptr) {
    Tensor<Real> h = stack_forward(net.stack, features, attn_trace);
    return add_rowvec(matmul(h, net.head_w), net.head_b);
}

// Same-shape reconstruction of a (masked) feature matrix.
template <typename Real>
Tensor<Real> reconstructor_forward(const ReconstructorNetwork<Real>& net,
                                   const Tensor<Real>& pruned_features,
                                   std::vector<Tensor<Real>>* attn_trace = nullptr) {
    return stack_forward(net.stack, pruned_features, attn_trace);
}

}  // namespace fsel
