#pragma once

#include <cstdint>
#include <functional>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "fsel/adam.hpp"
#include "fsel/checkpoint.hpp"
#include "fsel/data.hpp"
#include "fsel/objective.hpp"
#include "fsel/train_config.hpp"

namespace fsel {

// Batch-mean loss terms for one optimizer step (1-based step index).
// l_pr doubles as the retained fraction: its forward value is the hard-mask
// mean.
struct StepMetrics {
    int step = 0;
    float reconstruction = 0;
    float l_pr = 0;
    float clamped_reg = 0;
    float total = 0;
    std::vector<int> batch_records;  // corpus indices visited this step
};

using StepCallback = std::function<void(const StepMetrics&)>;

namespace detail {

// Records consumed before `step` optimizer steps, under ceil-chunked epochs.
inline std::pair<int, int> epoch_position(int step, int n_records, int batch_size) {
    const int steps_per_epoch = (n_records + batch_size - 1) / batch_size;
    return {step / steps_per_epoch, step % steps_per_epoch};
}

inline std::vector<int> epoch_permutation(std::uint64_t seed, int epoch, int n_records) {
    std::vector<int> order(static_cast<std::size_t>(n_records));
    std::iota(order.begin(), order.end(), 0);
    Rng rng(seed, "shuffle", static_cast<std::uint64_t>(epoch));
    rng.shuffle(order);
    return order;
}

}  // namespace detail

inline void validate_corpus(const std::vector<FeatureSet>& data, int c, int l_max) {
    if (data.empty()) throw DataError("training corpus is empty");
    for (const auto& fs : data) {
        if (fs.width() != c) {
            throw DataError("record '" + fs.id + "': feature width " + std::to_string(fs.width()) +
                            " differs from corpus width " + std::to_string(c));
        }
        if (fs.tokens() > l_max) {
            throw CapacityError("record '" + fs.id + "': " + std::to_string(fs.tokens()) +
                                " tokens exceed capacity " + std::to_string(l_max));
        }
    }
}

// Runs (config.steps - start) optimizer steps over shuffled mini-batches.
// Every record is visited once per epoch (ceil-chunked permutation, the last
// chunk may be short). Deterministic: all noise and shuffling derive from
// (seed, label, step/epoch), so resuming from a checkpoint continues the
// exact trajectory of an uninterrupted run.
inline Checkpoint train(const TrainConfig& config, const std::vector<FeatureSet>& data,
                        const StepCallback& on_step = nullptr,
                        const Checkpoint* resume_from = nullptr,
                        std::vector<StepMetrics>* log = nullptr) {
    require_valid_config(config);
    validate_corpus(data, config.c, config.l_max);

    Checkpoint state;
    if (resume_from) {
        state = *resume_from;
        state.config = config;
    } else {
        state.config = config;
        auto nets = init_networks<float>(config.c, config.l_max, config.heads, config.seed);
        state.selector = std::move(nets.first);
        state.reconstructor = std::move(nets.second);
        state.adam = AdamState<float>::zeros_like(named_parameters(state.selector, state.reconstructor));
        state.step = 0;
    }

    auto params = named_parameters(state.selector, state.reconstructor);
    const int n = static_cast<int>(data.size());
    const int batch = config.batch_size < n ? config.batch_size : n;

    for (int step = static_cast<int>(state.step); step < config.steps; ++step) {
        const auto [epoch, chunk] = detail::epoch_position(step, n, batch);
        const std::vector<int> order = detail::epoch_permutation(config.seed, epoch, n);
        const int lo = chunk * batch;
        const int hi = lo + batch < n ? lo + batch : n;

        const float tau = temperature_at_step(config, step);
        Rng gumbel_rng(config.seed, "gumbel", static_cast<std::uint64_t>(step));

        StepMetrics metrics;
        metrics.step = step + 1;
        std::vector<Tensor<float>> totals;
        totals.reserve(static_cast<std::size_t>(hi - lo));
        for (int b = lo; b < hi; ++b) {
            const int rec = order[static_cast<std::size_t>(b)];
            metrics.batch_records.push_back(rec);
            LossBreakdown<float> loss = total_loss<float>(data[static_cast<std::size_t>(rec)].features,
                                                          state.selector, state.reconstructor,
                                                          config.p, tau, gumbel_rng);
            auto v = loss.values();
            metrics.reconstruction += v.reconstruction;
            metrics.l_pr += v.l_pr;
            metrics.clamped_reg += v.clamped_reg;
            metrics.total += v.total;
            totals.push_back(loss.total);
        }
        const float inv = 1.0f / static_cast<float>(hi - lo);
        metrics.reconstruction *= inv;
        metrics.l_pr *= inv;
        metrics.clamped_reg *= inv;
        metrics.total *= inv;

        Tensor<float> batch_loss = mul_scalar(add_n(totals), inv);
        GradientTape<float> tape(batch_loss);
        tape.backward();
        adam_step(params, state.adam, config.learning_rate, config.beta1, config.beta2,
                  config.eps_adam);
        for (auto& [name, p] : params) p.zero_grad();

        state.step = step + 1;
        if (log) log->push_back(metrics);
        if (on_step) on_step(metrics);
    }
    return state;
}

inline std::string metrics_csv_header() { return "step,reconstruction,l_pr,clamped_reg,total"; }

inline std::string metrics_csv_row(const StepMetrics& m) {
    return std::to_string(m.step) + "," + format_real(m.reconstruction) + "," +
           format_real(m.l_pr) + "," + format_real(m.clamped_reg) + "," + format_real(m.total);
}

}  // namespace fsel
