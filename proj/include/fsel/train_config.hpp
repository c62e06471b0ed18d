#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fsel/common.hpp"

namespace fsel {

// Everything a training run depends on besides the data itself. Temperature
// is constant at tau_start unless tau_anneal_steps > 0, in which case it
// anneals linearly to tau_end over that many steps and stays there.
struct TrainConfig {
    float p = 0.5f;  // retention target in (0,1]
    float tau_start = 1.0f;
    float tau_end = 0.6f;
    int tau_anneal_steps = 2000;
    float learning_rate = 3e-3f;
    float beta1 = 0.9f;
    float beta2 = 0.999f;
    float eps_adam = 1e-8f;
    int batch_size = 32;
    int steps = 2000;
    std::uint64_t seed = 1;
    // Architecture extents.
    int c = 0;
    int l_max = 0;
    int heads = 1;
};

inline float temperature_at_step(const TrainConfig& cfg, int step) {
    if (cfg.tau_anneal_steps <= 0) return cfg.tau_start;
    if (step >= cfg.tau_anneal_steps) return cfg.tau_end;
    const float f = static_cast<float>(step) / static_cast<float>(cfg.tau_anneal_steps);
    return cfg.tau_start + (cfg.tau_end - cfg.tau_start) * f;
}

// All problems at once, so a CLI can report the full list before doing any
// work. Empty result means the config is usable.
inline std::vector<std::string> validate_config(const TrainConfig& cfg) {
    std::vector<std::string> problems;
    if (!(cfg.p > 0.0f && cfg.p <= 1.0f))
        problems.push_back("p: retention target must be in (0,1], got " + format_real(cfg.p));
    if (!(cfg.tau_start > 0.0f))
        problems.push_back("tau: temperature must be positive, got " + format_real(cfg.tau_start));
    if (!(cfg.tau_end > 0.0f))
        problems.push_back("tau_end: temperature floor must be positive, got " +
                           format_real(cfg.tau_end));
    if (cfg.tau_anneal_steps < 0)
        problems.push_back("tau_anneal_steps: must be non-negative, got " +
                           std::to_string(cfg.tau_anneal_steps));
    if (!(cfg.learning_rate > 0.0f))
        problems.push_back("learning_rate: must be positive, got " + format_real(cfg.learning_rate));
    if (!(cfg.beta1 >= 0.0f && cfg.beta1 < 1.0f))
        problems.push_back("beta1: must be in [0,1), got " + format_real(cfg.beta1));
    if (!(cfg.beta2 >= 0.0f && cfg.beta2 < 1.0f))
        problems.push_back("beta2: must be in [0,1), got " + format_real(cfg.beta2));
    if (!(cfg.eps_adam > 0.0f))
        problems.push_back("eps_adam: must be positive, got " + format_real(cfg.eps_adam));
    if (cfg.batch_size < 1)
        problems.push_back("batch_size: must be at least 1, got " + std::to_string(cfg.batch_size));
    if (cfg.steps < 0)
        problems.push_back("steps: must be non-negative, got " + std::to_string(cfg.steps));
    if (cfg.c < 1) problems.push_back("C: feature width must be positive, got " + std::to_string(cfg.c));
    if (cfg.l_max < 1)
        problems.push_back("L_max: token capacity must be positive, got " + std::to_string(cfg.l_max));
    if (cfg.heads < 1)
        problems.push_back("heads: must be positive, got " + std::to_string(cfg.heads));
    if (cfg.heads >= 1 && cfg.c >= 1 && cfg.c % cfg.heads != 0)
        problems.push_back("heads: " + std::to_string(cfg.heads) + " does not divide C=" +
                           std::to_string(cfg.c));
    return problems;
}

inline void require_valid_config(const TrainConfig& cfg) {
    auto problems = validate_config(cfg);
    if (!problems.empty()) {
        std::string msg = "invalid configuration:";
        for (const auto& p : problems) msg += "\n  " + p;
        throw ConfigError(msg);
    }
}

}  // namespace fsel
