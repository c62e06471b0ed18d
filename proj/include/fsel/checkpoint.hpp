#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "fsel/adam.hpp"
#include "fsel/data.hpp"
#include "fsel/train_config.hpp"
#include "fsel/transformer.hpp"

namespace fsel {

// Full training state: enough to resume a run and land bit-exactly where an
// uninterrupted run would. All randomness is derived from (seed, label, step),
// so the rng state is pinned by the seed in the config plus the step counter.
struct Checkpoint {
    TrainConfig config;
    SelectorNetwork<float> selector;
    ReconstructorNetwork<float> reconstructor;
    AdamState<float> adam;
    std::int64_t step = 0;
};

// ---------------------------------------------------------------------------
// FSCK checkpoint file (little-endian):
//   magic "FSCK" (4 bytes)
//   u32 version = 1
//   u32 entry_count
//   per entry:
//     u32 name_len, name bytes
//     u32 ndim, u32 dims[ndim]
//     float32 payload (product of dims values)
//   u32 config_len, config bytes: UTF-8 key=value lines echoing TrainConfig
//   (plus the step counter and rng scheme marker)
// ---------------------------------------------------------------------------

inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

inline void put_tensor_entry(std::string& out, const std::string& name, const Tensor<float>& t) {
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    out.append(name);
    put_u32(out, static_cast<std::uint32_t>(t.ndim()));
    for (int a = 0; a < t.ndim(); ++a) put_u32(out, static_cast<std::uint32_t>(t.extent(a)));
    for (float v : t.values()) put_f32(out, v);
}

}  // namespace detail

inline std::string encode_config_block(const TrainConfig& cfg, std::int64_t step) {
    std::string out;
    out += "p=" + format_real(cfg.p) + "\n";
    out += "tau_start=" + format_real(cfg.tau_start) + "\n";
    out += "tau_end=" + format_real(cfg.tau_end) + "\n";
    out += "tau_anneal_steps=" + std::to_string(cfg.tau_anneal_steps) + "\n";
    out += "learning_rate=" + format_real(cfg.learning_rate) + "\n";
    out += "beta1=" + format_real(cfg.beta1) + "\n";
    out += "beta2=" + format_real(cfg.beta2) + "\n";
    out += "eps_adam=" + format_real(cfg.eps_adam) + "\n";
    out += "batch_size=" + std::to_string(cfg.batch_size) + "\n";
    out += "steps=" + std::to_string(cfg.steps) + "\n";
    out += "seed=" + std::to_string(cfg.seed) + "\n";
    out += "C=" + std::to_string(cfg.c) + "\n";
    out += "L_max=" + std::to_string(cfg.l_max) + "\n";
    out += "heads=" + std::to_string(cfg.heads) + "\n";
    out += "step=" + std::to_string(step) + "\n";
    out += "rng=counter-streams-v1\n";
    return out;
}

inline std::map<std::string, std::string> parse_key_value_lines(const std::string& text) {
    std::map<std::string, std::string> kv;
    std::size_t pos = 0;
    while (pos < text.size()) {
        std::size_t eol = text.find('\n', pos);
        if (eol == std::string::npos) eol = text.size();
        const std::string line = text.substr(pos, eol - pos);
        pos = eol + 1;
        if (line.empty() || line[0] == '#') continue;
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos) {
            throw FormatError("config block: line without '=': '" + line + "'");
        }
        kv[line.substr(0, eq)] = line.substr(eq + 1);
    }
    return kv;
}

inline std::string encode_checkpoint(const Checkpoint& ckpt) {
    auto params = named_parameters(ckpt.selector, ckpt.reconstructor);
    std::string out;
    out.append("FSCK", 4);
    detail::put_u32(out, kCheckpointVersion);
    detail::put_u32(out, static_cast<std::uint32_t>(params.size() * 3));
    for (const auto& [name, t] : params) detail::put_tensor_entry(out, name, t);
    for (std::size_t i = 0; i < params.size(); ++i)
        detail::put_tensor_entry(out, "adam.m." + params[i].first, ckpt.adam.slots[i].m);
    for (std::size_t i = 0; i < params.size(); ++i)
        detail::put_tensor_entry(out, "adam.v." + params[i].first, ckpt.adam.slots[i].v);
    const std::string cfg = encode_config_block(ckpt.config, ckpt.step);
    detail::put_u32(out, static_cast<std::uint32_t>(cfg.size()));
    out.append(cfg);
    return out;
}

inline void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
    detail::write_file_bytes(path, encode_checkpoint(ckpt));
}

struct CheckpointHeader {
    std::uint32_t version = 0;
    std::vector<std::pair<std::string, std::vector<int>>> entries;
    std::string config_text;
};

namespace detail {

template <typename OnTensor>
CheckpointHeader walk_checkpoint(const std::string& bytes, const std::string& what,
                                 OnTensor&& on_tensor) {
    ByteReader rd(bytes, what);
    if (rd.str(4) != "FSCK") {
        throw FormatError(what + ": bad magic at byte 0 (expected 'FSCK')");
    }
    CheckpointHeader hdr;
    hdr.version = rd.u32();
    if (hdr.version != kCheckpointVersion) {
        throw FormatError(what + ": unsupported version " + std::to_string(hdr.version) +
                          " at byte 4");
    }
    const std::uint32_t entry_count = rd.u32();
    for (std::uint32_t e = 0; e < entry_count; ++e) {
        const std::uint32_t name_len = rd.u32();
        const std::string name = rd.str(name_len);
        const std::uint32_t ndim = rd.u32();
        if (ndim > 8) rd.fail("entry '" + name + "' has implausible rank " + std::to_string(ndim));
        std::vector<int> dims(ndim);
        std::size_t numel = 1;
        for (auto& d : dims) {
            d = static_cast<int>(rd.u32());
            numel *= static_cast<std::size_t>(d);
        }
        std::vector<float> payload(numel);
        rd.f32_block(payload.data(), numel);
        hdr.entries.emplace_back(name, dims);
        on_tensor(name, dims, std::move(payload));
    }
    const std::uint32_t cfg_len = rd.u32();
    hdr.config_text = rd.str(cfg_len);
    if (!rd.at_end()) rd.fail("trailing bytes after config block");
    return hdr;
}

}  // namespace detail

// Header-only view (names, shapes, config text) for inspection tools.
inline CheckpointHeader read_checkpoint_header(const std::string& path) {
    const std::string bytes = detail::read_file_bytes(path);
    return detail::walk_checkpoint(bytes, path,
                                   [](const std::string&, const std::vector<int>&, std::vector<float>&&) {});
}

inline Checkpoint decode_checkpoint(const std::string& bytes, const std::string& what) {
    std::map<std::string, std::pair<std::vector<int>, std::vector<float>>> tensors;
    CheckpointHeader hdr = detail::walk_checkpoint(
        bytes, what,
        [&](const std::string& name, const std::vector<int>& dims, std::vector<float>&& payload) {
            if (!tensors.emplace(name, std::make_pair(dims, std::move(payload))).second) {
                throw FormatError(what + ": duplicate entry '" + name + "'");
            }
        });

    auto kv = parse_key_value_lines(hdr.config_text);
    auto want = [&](const char* key) -> const std::string& {
        auto it = kv.find(key);
        if (it == kv.end()) throw FormatError(what + ": config block missing key '" + std::string(key) + "'");
        return it->second;
    };
    Checkpoint ckpt;
    ckpt.config.p = parse_real<float>(want("p"));
    ckpt.config.tau_start = parse_real<float>(want("tau_start"));
    ckpt.config.tau_end = parse_real<float>(want("tau_end"));
    ckpt.config.tau_anneal_steps = parse_int<int>(want("tau_anneal_steps"));
    ckpt.config.learning_rate = parse_real<float>(want("learning_rate"));
    ckpt.config.beta1 = parse_real<float>(want("beta1"));
    ckpt.config.beta2 = parse_real<float>(want("beta2"));
    ckpt.config.eps_adam = parse_real<float>(want("eps_adam"));
    ckpt.config.batch_size = parse_int<int>(want("batch_size"));
    ckpt.config.steps = parse_int<int>(want("steps"));
    ckpt.config.seed = parse_int<std::uint64_t>(want("seed"));
    ckpt.config.c = parse_int<int>(want("C"));
    ckpt.config.l_max = parse_int<int>(want("L_max"));
    ckpt.config.heads = parse_int<int>(want("heads"));
    ckpt.step = parse_int<std::int64_t>(want("step"));

    require_valid_config(ckpt.config);
    auto nets = init_networks<float>(ckpt.config.c, ckpt.config.l_max, ckpt.config.heads,
                                     ckpt.config.seed);
    ckpt.selector = std::move(nets.first);
    ckpt.reconstructor = std::move(nets.second);
    auto params = named_parameters(ckpt.selector, ckpt.reconstructor);
    ckpt.adam = AdamState<float>::zeros_like(params);
    ckpt.adam.step = ckpt.step;

    auto fill = [&](const std::string& name, Tensor<float> dst) {
        auto it = tensors.find(name);
        if (it == tensors.end()) throw FormatError(what + ": missing entry '" + name + "'");
        if (it->second.first != dst.shape()) {
            throw FormatError(what + ": entry '" + name + "' has shape " +
                              shape_str(it->second.first) + ", expected " + shape_str(dst.shape()));
        }
        auto dv = dst.values();
        const auto& src = it->second.second;
        for (std::size_t i = 0; i < dv.size(); ++i) dv[i] = src[i];
        tensors.erase(it);
    };
    for (std::size_t i = 0; i < params.size(); ++i) {
        fill(params[i].first, params[i].second);
        fill("adam.m." + params[i].first, ckpt.adam.slots[i].m);
        fill("adam.v." + params[i].first, ckpt.adam.slots[i].v);
    }
    if (!tensors.empty()) {
        throw FormatError(what + ": unexpected entry '" + tensors.begin()->first + "'");
    }
    return ckpt;
}

inline Checkpoint load_checkpoint(const std::string& path) {
    return decode_checkpoint(detail::read_file_bytes(path), path);
}

}  // namespace fsel
