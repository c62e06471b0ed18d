#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "fsel/data.hpp"
#include "fsel/gumbel.hpp"
#include "fsel/objective.hpp"
#include "fsel/rng.hpp"
#include "fsel/transformer.hpp"

namespace fsel {

// Inference-time pruning outcome: which tokens survive and their rows of F,
// copied bit-exactly.
struct SelectionResult {
    std::vector<int> retained_indices;  // strictly increasing
    std::vector<float> scores;          // keep score per token
    Tensor<float> pruned;               // [k, C]
    float ratio = 0;
};

inline int retained_count(float ratio, int tokens) {
    if (!(ratio > 0.0f && ratio <= 1.0f)) {
        throw ConfigError("retention ratio must be in (0,1], got " + format_real(ratio));
    }
    const int k = static_cast<int>(std::lround(static_cast<double>(ratio) * tokens));
    return k < 1 ? 1 : k;
}

namespace detail {

inline Tensor<float> gather_rows(const Tensor<float>& f, const std::vector<int>& rows) {
    const int c = f.extent(1);
    std::vector<float> data;
    data.reserve(rows.size() * static_cast<std::size_t>(c));
    auto fv = f.values();
    for (int r : rows) {
        const float* src = fv.data() + static_cast<std::size_t>(r) * c;
        data.insert(data.end(), src, src + c);
    }
    return Tensor<float>::from_data({static_cast<int>(rows.size()), c}, std::move(data));
}

inline void require_valid_subset(const std::vector<int>& subset, int tokens) {
    std::vector<char> seen(static_cast<std::size_t>(tokens), 0);
    for (int i : subset) {
        if (i < 0 || i >= tokens) {
            throw ShapeError("subset index " + std::to_string(i) + " out of range [0," +
                             std::to_string(tokens) + ")");
        }
        if (seen[static_cast<std::size_t>(i)]++) {
            throw ShapeError("subset index " + std::to_string(i) + " repeated");
        }
    }
}

}  // namespace detail

// Top-k by keep score, given the scores. Ties break toward the lower index,
// which makes the retained sets nest across ratios.
inline std::vector<int> top_k_indices(const std::vector<float>& scores, float ratio) {
    const int l = static_cast<int>(scores.size());
    const int k = retained_count(ratio, l);
    std::vector<int> order(static_cast<std::size_t>(l));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        return scores[static_cast<std::size_t>(a)] > scores[static_cast<std::size_t>(b)];
    });
    order.resize(static_cast<std::size_t>(k));
    std::sort(order.begin(), order.end());
    return order;
}

// Noise-free inference: rank tokens by keep score, retain the top
// max(1, round(ratio*L)).
inline SelectionResult select_top_k(const SelectorNetwork<float>& selector, const Tensor<float>& f,
                                    float ratio) {
    NoGradScope no_grad;
    SelectionResult res;
    res.ratio = ratio;
    res.scores = keep_scores(selector_logits(selector, f));
    res.retained_indices = top_k_indices(res.scores, ratio);
    res.pruned = detail::gather_rows(f, res.retained_indices);
    return res;
}

// Uniform random k-subset baseline.
inline SelectionResult select_random(const Tensor<float>& f, float ratio, Rng& rng) {
    const int l = f.extent(0);
    const int k = retained_count(ratio, l);
    SelectionResult res;
    res.ratio = ratio;
    res.scores.assign(static_cast<std::size_t>(l), 0.0f);
    res.retained_indices = rng.subset(l, k);
    res.pruned = detail::gather_rows(f, res.retained_indices);
    return res;
}

// Distance side of the subset-comparison criterion: mask dropped rows with
// the shared embedding, reconstruct, and measure RMSE against the original.
inline double reconstruction_distance(const ReconstructorNetwork<float>& reconstructor,
                                      const Tensor<float>& f, const std::vector<int>& kept,
                                      const Tensor<float>& masked_embedding) {
    NoGradScope no_grad;
    const int l = f.extent(0);
    detail::require_valid_subset(kept, l);
    std::vector<float> mask(static_cast<std::size_t>(l), 0.0f);
    for (int i : kept) mask[static_cast<std::size_t>(i)] = 1.0f;
    Tensor<float> pruned = lerp_rows(f, masked_embedding, Tensor<float>::from_data({l}, mask));
    Tensor<float> restored = reconstructor_forward(reconstructor, pruned);
    return static_cast<double>(frobenius_rmse(restored, f).value());
}

enum class SubsetOrder { AFirst, BFirst, Tie };

struct SubsetComparison {
    double dist_a = 0;
    double dist_b = 0;
    SubsetOrder better = SubsetOrder::Tie;
};

// Which subset reconstructs the full feature set more accurately.
inline SubsetComparison compare_subsets(const ReconstructorNetwork<float>& reconstructor,
                                        const Tensor<float>& f, const std::vector<int>& subset_a,
                                        const std::vector<int>& subset_b,
                                        const Tensor<float>& masked_embedding) {
    SubsetComparison cmp;
    cmp.dist_a = reconstruction_distance(reconstructor, f, subset_a, masked_embedding);
    cmp.dist_b = reconstruction_distance(reconstructor, f, subset_b, masked_embedding);
    cmp.better = cmp.dist_a < cmp.dist_b ? SubsetOrder::AFirst
                                         : (cmp.dist_b < cmp.dist_a ? SubsetOrder::BFirst
                                                                    : SubsetOrder::Tie);
    return cmp;
}

// ---------------------------------------------------------------------------
// Least-squares oracle (independent of the trained reconstructor)
// ---------------------------------------------------------------------------

namespace detail {

// Solves G w = rhs for symmetric positive semi-definite G via Cholesky,
// escalating a tiny ridge when the factorization stalls on degenerate
// subsets.
class SpdSolver {
public:
    explicit SpdSolver(std::vector<double> gram, int n) : n_(n) {
        double trace = 0;
        for (int i = 0; i < n; ++i) trace += gram[static_cast<std::size_t>(i) * n + i];
        double ridge = 0.0;
        for (int attempt = 0; attempt < 8; ++attempt) {
            chol_ = gram;
            if (ridge > 0) {
                for (int i = 0; i < n; ++i) chol_[static_cast<std::size_t>(i) * n + i] += ridge;
            }
            if (factor()) return;
            ridge = ridge == 0.0 ? 1e-12 * (trace > 1.0 ? trace : 1.0) : ridge * 100.0;
        }
        throw Error("least-squares solve failed: Gram matrix is numerically singular");
    }

    void solve(const double* rhs, double* w) const {
        // L y = rhs
        for (int i = 0; i < n_; ++i) {
            double acc = rhs[i];
            for (int j = 0; j < i; ++j) acc -= chol_[static_cast<std::size_t>(i) * n_ + j] * w[j];
            w[i] = acc / chol_[static_cast<std::size_t>(i) * n_ + i];
        }
        // L^T w = y
        for (int i = n_ - 1; i >= 0; --i) {
            double acc = w[i];
            for (int j = i + 1; j < n_; ++j) acc -= chol_[static_cast<std::size_t>(j) * n_ + i] * w[j];
            w[i] = acc / chol_[static_cast<std::size_t>(i) * n_ + i];
        }
    }

private:
    bool factor() {
        for (int i = 0; i < n_; ++i) {
            for (int j = 0; j <= i; ++j) {
                double acc = chol_[static_cast<std::size_t>(i) * n_ + j];
                for (int k = 0; k < j; ++k)
                    acc -= chol_[static_cast<std::size_t>(i) * n_ + k] *
                           chol_[static_cast<std::size_t>(j) * n_ + k];
                if (i == j) {
                    if (acc <= 0) return false;
                    chol_[static_cast<std::size_t>(i) * n_ + j] = std::sqrt(acc);
                } else {
                    chol_[static_cast<std::size_t>(i) * n_ + j] =
                        acc / chol_[static_cast<std::size_t>(j) * n_ + j];
                }
            }
        }
        return true;
    }

    std::vector<double> chol_;
    int n_;
};

}  // namespace detail

// RMSE of reconstructing every dropped token as the least-squares linear
// combination of the retained tokens. Retained rows are known exactly, so
// the residual is measured over dropped elements; a subset that spans the
// rest scores ~0.
inline double least_squares_residual(const Tensor<float>& f, const std::vector<int>& kept) {
    const int l = f.extent(0), c = f.extent(1);
    detail::require_valid_subset(kept, l);
    if (kept.empty()) throw ShapeError("least_squares_residual: empty subset");
    const int k = static_cast<int>(kept.size());
    std::vector<char> is_kept(static_cast<std::size_t>(l), 0);
    for (int i : kept) is_kept[static_cast<std::size_t>(i)] = 1;
    if (k == l) return 0.0;

    auto fv = f.values();
    // Gram of retained rows, in double.
    std::vector<double> gram(static_cast<std::size_t>(k) * k, 0.0);
    for (int a = 0; a < k; ++a) {
        const float* ra = fv.data() + static_cast<std::size_t>(kept[static_cast<std::size_t>(a)]) * c;
        for (int b = 0; b <= a; ++b) {
            const float* rb = fv.data() + static_cast<std::size_t>(kept[static_cast<std::size_t>(b)]) * c;
            double acc = 0;
            for (int j = 0; j < c; ++j) acc += static_cast<double>(ra[j]) * static_cast<double>(rb[j]);
            gram[static_cast<std::size_t>(a) * k + b] = acc;
            gram[static_cast<std::size_t>(b) * k + a] = acc;
        }
    }
    detail::SpdSolver solver(std::move(gram), k);

    std::vector<double> rhs(static_cast<std::size_t>(k));
    std::vector<double> w(static_cast<std::size_t>(k));
    double sq = 0.0;
    std::size_t n_dropped_elems = 0;
    for (int t = 0; t < l; ++t) {
        if (is_kept[static_cast<std::size_t>(t)]) continue;
        const float* target = fv.data() + static_cast<std::size_t>(t) * c;
        for (int a = 0; a < k; ++a) {
            const float* ra = fv.data() + static_cast<std::size_t>(kept[static_cast<std::size_t>(a)]) * c;
            double acc = 0;
            for (int j = 0; j < c; ++j) acc += static_cast<double>(ra[j]) * static_cast<double>(target[j]);
            rhs[static_cast<std::size_t>(a)] = acc;
        }
        solver.solve(rhs.data(), w.data());
        for (int j = 0; j < c; ++j) {
            double fit = 0;
            for (int a = 0; a < k; ++a)
                fit += w[static_cast<std::size_t>(a)] *
                       static_cast<double>(
                           fv[static_cast<std::size_t>(kept[static_cast<std::size_t>(a)]) * c + j]);
            const double d = fit - static_cast<double>(target[j]);
            sq += d * d;
        }
        n_dropped_elems += static_cast<std::size_t>(c);
    }
    return std::sqrt(sq / static_cast<double>(n_dropped_elems));
}

inline constexpr int kOracleMaxTokens = 20;

struct OracleResult {
    std::vector<int> indices;
    double residual = 0;
};

// Exhaustive search over all C(L,k) subsets for the one whose least-squares
// reconstruction of the dropped tokens is best. Ground truth for selector
// quality, deliberately independent of the trained reconstructor.
inline OracleResult oracle_best_subset(const Tensor<float>& f, int k) {
    const int l = f.extent(0);
    if (l > kOracleMaxTokens) {
        throw CapacityError("oracle_best_subset: " + std::to_string(l) +
                            " tokens exceed the enumeration bound " +
                            std::to_string(kOracleMaxTokens));
    }
    if (k < 1 || k > l) {
        throw ConfigError("oracle_best_subset: k must be in [1," + std::to_string(l) + "], got " +
                          std::to_string(k));
    }
    std::vector<int> comb(static_cast<std::size_t>(k));
    std::iota(comb.begin(), comb.end(), 0);
    OracleResult best;
    best.residual = -1;
    while (true) {
        const double r = least_squares_residual(f, comb);
        if (best.residual < 0 || r < best.residual) {
            best.residual = r;
            best.indices = comb;
        }
        // next combination, lexicographic
        int i = k - 1;
        while (i >= 0 && comb[static_cast<std::size_t>(i)] == l - k + i) --i;
        if (i < 0) break;
        ++comb[static_cast<std::size_t>(i)];
        for (int j = i + 1; j < k; ++j)
            comb[static_cast<std::size_t>(j)] = comb[static_cast<std::size_t>(j - 1)] + 1;
    }
    return best;
}

// ---------------------------------------------------------------------------
// Policy sweeps
// ---------------------------------------------------------------------------

struct PolicyRow {
    std::string policy;  // "trained" or "random"
    float ratio = 0;
    std::uint64_t seed = 0;  // 0 for the deterministic trained policy
    std::string record_id;
    float distance = 0;
};

struct PolicySummary {
    std::string policy;
    float ratio = 0;
    double mean = 0;
    double stddev = 0;  // over rows, sample std
    std::size_t n = 0;
};

struct PolicyReport {
    std::vector<PolicyRow> rows;
};

// Sweeps (policy x ratio x seed) over the corpus. The trained policy is
// noise-free and gets one row per (ratio, record); the random baseline gets
// one row per (ratio, seed, record).
inline PolicyReport evaluate_policies(const SelectorNetwork<float>& selector,
                                      const ReconstructorNetwork<float>& reconstructor,
                                      const std::vector<FeatureSet>& corpus,
                                      const std::vector<float>& ratios,
                                      const std::vector<std::uint64_t>& seeds) {
    if (corpus.empty()) throw ConfigError("evaluate_policies: empty corpus");
    for (float r : ratios) (void)retained_count(r, 1);  // range check
    PolicyReport report;
    for (std::size_t ri = 0; ri < ratios.size(); ++ri) {
        const float ratio = ratios[ri];
        for (std::size_t ci = 0; ci < corpus.size(); ++ci) {
            const FeatureSet& fs = corpus[ci];
            SelectionResult trained = select_top_k(selector, fs.features, ratio);
            PolicyRow row;
            row.policy = "trained";
            row.ratio = ratio;
            row.seed = 0;
            row.record_id = fs.id;
            row.distance = static_cast<float>(reconstruction_distance(
                reconstructor, fs.features, trained.retained_indices, selector.masked_embedding));
            report.rows.push_back(row);
            for (std::uint64_t seed : seeds) {
                Rng rng(seed, "random-policy", (static_cast<std::uint64_t>(ri) << 32) | ci);
                SelectionResult random = select_random(fs.features, ratio, rng);
                PolicyRow rrow;
                rrow.policy = "random";
                rrow.ratio = ratio;
                rrow.seed = seed;
                rrow.record_id = fs.id;
                rrow.distance = static_cast<float>(reconstruction_distance(
                    reconstructor, fs.features, random.retained_indices, selector.masked_embedding));
                report.rows.push_back(rrow);
            }
        }
    }
    return report;
}

inline std::vector<double> policy_distances(const PolicyReport& report, const std::string& policy,
                                            float ratio) {
    std::vector<double> out;
    for (const auto& r : report.rows) {
        if (r.policy == policy && r.ratio == ratio) out.push_back(static_cast<double>(r.distance));
    }
    return out;
}

// Mean distance per seed (random policy), used for seed-level variability.
inline std::vector<double> per_seed_means(const PolicyReport& report, float ratio,
                                          const std::vector<std::uint64_t>& seeds) {
    std::vector<double> means;
    for (std::uint64_t seed : seeds) {
        double acc = 0;
        std::size_t n = 0;
        for (const auto& r : report.rows) {
            if (r.policy == "random" && r.ratio == ratio && r.seed == seed) {
                acc += static_cast<double>(r.distance);
                ++n;
            }
        }
        if (n) means.push_back(acc / static_cast<double>(n));
    }
    return means;
}

inline double mean_of(const std::vector<double>& v) {
    double acc = 0;
    for (double x : v) acc += x;
    return v.empty() ? 0.0 : acc / static_cast<double>(v.size());
}

inline double stddev_of(const std::vector<double>& v) {
    if (v.size() < 2) return 0.0;
    const double mu = mean_of(v);
    double acc = 0;
    for (double x : v) acc += (x - mu) * (x - mu);
    return std::sqrt(acc / static_cast<double>(v.size() - 1));
}

inline std::vector<PolicySummary> summarize_policies(const PolicyReport& report) {
    std::vector<PolicySummary> out;
    for (const auto& r : report.rows) {
        auto it = std::find_if(out.begin(), out.end(), [&](const PolicySummary& s) {
            return s.policy == r.policy && s.ratio == r.ratio;
        });
        if (it == out.end()) {
            out.push_back({r.policy, r.ratio, 0, 0, 0});
        }
    }
    for (auto& s : out) {
        auto d = policy_distances(report, s.policy, s.ratio);
        s.mean = mean_of(d);
        s.stddev = stddev_of(d);
        s.n = d.size();
    }
    return out;
}

inline std::string policy_csv_header() { return "policy,ratio,seed,record_id,distance"; }

inline std::string encode_policy_csv(const PolicyReport& report) {
    std::string out = policy_csv_header() + "\n";
    for (const auto& r : report.rows) {
        out += r.policy + "," + format_real(r.ratio) + "," + std::to_string(r.seed) + "," +
               r.record_id + "," + format_real(r.distance) + "\n";
    }
    return out;
}

}  // namespace fsel
