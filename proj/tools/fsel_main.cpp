// Command-line front-end: corpus generation, training, pruning, evaluation,
// gradient checking, and file inspection over FSEL/FSCK files.

#include <cstdio>
#include <exception>
#include <filesystem>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "fsel/fsel.hpp"
#include "fsel/diffcheck.hpp"

namespace {

namespace fs = std::filesystem;

constexpr int kExitOk = 0;
constexpr int kExitCheckFailed = 1;
constexpr int kExitUsage = 2;
constexpr int kExitIo = 3;

std::string file_digest(const std::string& path) {
    const std::string bytes = fsel::detail::read_file_bytes(path);
    char buf[32];
    std::snprintf(buf, sizeof(buf), "fnv1a64:%016llx",
                  static_cast<unsigned long long>(fsel::fnv1a64(bytes)));
    return buf;
}

// Key=value manifest next to every output; re-running the same tool version
// with these values reproduces the outputs bit-exactly.
struct Manifest {
    std::vector<std::pair<std::string, std::string>> entries;

    void add(const std::string& key, const std::string& value) { entries.emplace_back(key, value); }
    void add_input(const std::string& name, const std::string& path) {
        add("input." + name, path);
        add("digest." + name, file_digest(path));
    }

    void write(const std::string& path) const {
        std::string out;
        for (const auto& [k, v] : entries) out += k + "=" + v + "\n";
        fsel::detail::write_file_bytes(path, out);
    }
};

Manifest base_manifest(const std::string& command, std::uint64_t seed) {
    Manifest m;
    m.add("tool", "fsel");
    m.add("version", fsel::kToolVersion);
    m.add("command", command);
    m.add("seed", std::to_string(seed));
    return m;
}

std::vector<float> parse_ratio_list(const std::string& text) {
    std::vector<float> out;
    std::size_t pos = 0;
    while (pos <= text.size()) {
        std::size_t comma = text.find(',', pos);
        if (comma == std::string::npos) comma = text.size();
        out.push_back(fsel::parse_real<float>(text.substr(pos, comma - pos)));
        pos = comma + 1;
        if (comma == text.size()) break;
    }
    return out;
}

std::vector<std::uint64_t> parse_seed_list(const std::string& text) {
    std::vector<std::uint64_t> out;
    std::size_t pos = 0;
    while (pos <= text.size()) {
        std::size_t comma = text.find(',', pos);
        if (comma == std::string::npos) comma = text.size();
        out.push_back(fsel::parse_int<std::uint64_t>(text.substr(pos, comma - pos)));
        pos = comma + 1;
        if (comma == text.size()) break;
    }
    return out;
}

// ---------------------------------------------------------------------------

struct GenDataArgs {
    int sets = 100, tokens = 16, dim = 32, rank = 8;
    double noise = 0.01;
    std::uint64_t seed = 7;
    std::string out;
};

int cmd_gen_data(const GenDataArgs& a) {
    fsel::PlantedCorpus corpus =
        fsel::generate_planted_redundancy(a.sets, a.tokens, a.dim, a.rank, a.noise, a.seed);
    fsel::save_feature_file(a.out, corpus.records);
    const std::string sidecar = a.out + ".basis.txt";
    fsel::detail::write_file_bytes(sidecar, fsel::encode_basis_sidecar(corpus));

    Manifest m = base_manifest("gen-data", a.seed);
    m.add("sets", std::to_string(a.sets));
    m.add("tokens", std::to_string(a.tokens));
    m.add("dim", std::to_string(a.dim));
    m.add("rank", std::to_string(a.rank));
    m.add("noise", fsel::format_real(a.noise));
    m.add("output.features", a.out);
    m.add("output.basis", sidecar);
    m.write(a.out + ".manifest.txt");
    std::cout << "wrote " << corpus.records.size() << " records to " << a.out << "\n";
    return kExitOk;
}

// ---------------------------------------------------------------------------

struct TrainArgs {
    std::string data;
    std::string out = "run/";
    std::string resume;
    fsel::TrainConfig cfg;
    bool heads_set = false;
    bool l_max_set = false;
};

int cmd_train(TrainArgs& a) {
    std::vector<fsel::FeatureSet> records = fsel::load_feature_file(a.data);
    if (records.empty()) throw fsel::DataError(a.data + ": no records");

    fsel::Checkpoint resume_ckpt;
    const fsel::Checkpoint* resume_ptr = nullptr;
    if (!a.resume.empty()) {
        resume_ckpt = fsel::load_checkpoint(a.resume);
        resume_ptr = &resume_ckpt;
    }

    a.cfg.c = records.front().width();
    if (!a.l_max_set) {
        int l_max = 1;
        for (const auto& r : records) l_max = std::max(l_max, r.tokens());
        a.cfg.l_max = l_max;
    }
    if (!a.heads_set) a.cfg.heads = std::max(1, a.cfg.c / 64);
    if (resume_ptr) {
        // The architecture is pinned by the checkpoint being resumed.
        if (a.cfg.c != resume_ckpt.config.c) {
            throw fsel::ConfigError("resume: data width " + std::to_string(a.cfg.c) +
                                    " does not match checkpoint C=" +
                                    std::to_string(resume_ckpt.config.c));
        }
        a.cfg.l_max = resume_ckpt.config.l_max;
        a.cfg.heads = resume_ckpt.config.heads;
    }

    auto problems = fsel::validate_config(a.cfg);
    if (!problems.empty()) {
        for (const auto& p : problems) std::cerr << "config error: " << p << "\n";
        return kExitUsage;
    }

    fs::create_directories(a.out);
    const std::string ckpt_path = (fs::path(a.out) / "model.fsck").string();
    const std::string metrics_path = (fs::path(a.out) / "metrics.csv").string();

    std::string csv = fsel::metrics_csv_header() + "\n";
    fsel::Checkpoint ckpt = fsel::train(
        a.cfg, records, [&](const fsel::StepMetrics& m) { csv += fsel::metrics_csv_row(m) + "\n"; },
        resume_ptr);
    fsel::save_checkpoint(ckpt, ckpt_path);
    fsel::detail::write_file_bytes(metrics_path, csv);

    Manifest m = base_manifest("train", a.cfg.seed);
    m.add_input("data", a.data);
    if (!a.resume.empty()) m.add_input("resume", a.resume);
    m.add("p", fsel::format_real(a.cfg.p));
    m.add("tau_start", fsel::format_real(a.cfg.tau_start));
    m.add("tau_end", fsel::format_real(a.cfg.tau_end));
    m.add("tau_anneal_steps", std::to_string(a.cfg.tau_anneal_steps));
    m.add("learning_rate", fsel::format_real(a.cfg.learning_rate));
    m.add("beta1", fsel::format_real(a.cfg.beta1));
    m.add("beta2", fsel::format_real(a.cfg.beta2));
    m.add("eps_adam", fsel::format_real(a.cfg.eps_adam));
    m.add("batch_size", std::to_string(a.cfg.batch_size));
    m.add("steps", std::to_string(a.cfg.steps));
    m.add("C", std::to_string(a.cfg.c));
    m.add("L_max", std::to_string(a.cfg.l_max));
    m.add("heads", std::to_string(a.cfg.heads));
    m.add("output.checkpoint", ckpt_path);
    m.add("output.metrics", metrics_path);
    m.write((fs::path(a.out) / "manifest.txt").string());
    std::cout << "trained " << ckpt.step << " steps; checkpoint at " << ckpt_path << "\n";
    return kExitOk;
}

// ---------------------------------------------------------------------------

struct SelectArgs {
    std::string ckpt, data, out, pruned_out;
    float ratio = 0.5f;
};

int cmd_select(const SelectArgs& a) {
    fsel::Checkpoint ckpt = fsel::load_checkpoint(a.ckpt);
    std::vector<fsel::FeatureSet> records = fsel::load_feature_file(a.data);
    if (!(a.ratio > 0.0f && a.ratio <= 1.0f)) {
        throw fsel::ConfigError("ratio: must be in (0,1], got " + fsel::format_real(a.ratio));
    }
    for (const auto& r : records) {
        if (r.width() != ckpt.config.c) {
            throw fsel::ConfigError("record '" + r.id + "': feature width " +
                                    std::to_string(r.width()) + " does not match checkpoint C=" +
                                    std::to_string(ckpt.config.c));
        }
        if (r.tokens() > ckpt.config.l_max) {
            throw fsel::CapacityError("record '" + r.id + "': " + std::to_string(r.tokens()) +
                                      " tokens exceed checkpoint capacity L_max=" +
                                      std::to_string(ckpt.config.l_max));
        }
    }

    std::string csv;
    std::vector<fsel::FeatureSet> pruned_records;
    for (const auto& r : records) {
        fsel::SelectionResult sel = fsel::select_top_k(ckpt.selector, r.features, a.ratio);
        csv += r.id + "," + fsel::format_real(a.ratio);
        for (int idx : sel.retained_indices) csv += "," + std::to_string(idx);
        csv += "\n";
        if (!a.pruned_out.empty()) {
            fsel::FeatureSet pr;
            pr.id = r.id;
            pr.features = sel.pruned;
            // The grid only survives full retention; a pruned row set no
            // longer tiles (H, W).
            if (static_cast<int>(sel.retained_indices.size()) == r.tokens()) {
                pr.grid_h = r.grid_h;
                pr.grid_w = r.grid_w;
            }
            pruned_records.push_back(std::move(pr));
        }
    }
    if (!a.out.empty()) {
        fsel::detail::write_file_bytes(a.out, csv);
    } else {
        std::cout << csv;
    }
    if (!a.pruned_out.empty()) fsel::save_feature_file(a.pruned_out, pruned_records);

    if (!a.out.empty()) {
        Manifest m = base_manifest("select", ckpt.config.seed);
        m.add_input("checkpoint", a.ckpt);
        m.add_input("data", a.data);
        m.add("ratio", fsel::format_real(a.ratio));
        m.add("output.indices", a.out);
        if (!a.pruned_out.empty()) m.add("output.pruned", a.pruned_out);
        m.write(a.out + ".manifest.txt");
    }
    return kExitOk;
}

// ---------------------------------------------------------------------------

struct EvaluateArgs {
    std::string ckpt, data, out = "evaluation.csv";
    std::string ratios = "0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9";
    std::string seeds = "1,2,3,4,5";
};

int cmd_evaluate(const EvaluateArgs& a) {
    fsel::Checkpoint ckpt = fsel::load_checkpoint(a.ckpt);
    std::vector<fsel::FeatureSet> records = fsel::load_feature_file(a.data);
    const std::vector<float> ratios = parse_ratio_list(a.ratios);
    const std::vector<std::uint64_t> seeds = parse_seed_list(a.seeds);
    for (const auto& r : records) {
        if (r.width() != ckpt.config.c) {
            throw fsel::ConfigError("record '" + r.id + "': feature width " +
                                    std::to_string(r.width()) + " does not match checkpoint C=" +
                                    std::to_string(ckpt.config.c));
        }
    }

    fsel::PolicyReport report =
        fsel::evaluate_policies(ckpt.selector, ckpt.reconstructor, records, ratios, seeds);
    fsel::detail::write_file_bytes(a.out, fsel::encode_policy_csv(report));

    std::string summary;
    for (const auto& s : fsel::summarize_policies(report)) {
        summary += "policy=" + s.policy + " ratio=" + fsel::format_real(s.ratio) +
                   " mean=" + fsel::format_real(s.mean) + " std=" + fsel::format_real(s.stddev) +
                   " n=" + std::to_string(s.n) + "\n";
    }
    fsel::detail::write_file_bytes(a.out + ".summary.txt", summary);
    std::cout << summary;

    Manifest m = base_manifest("evaluate", ckpt.config.seed);
    m.add_input("checkpoint", a.ckpt);
    m.add_input("data", a.data);
    m.add("ratios", a.ratios);
    m.add("seeds", a.seeds);
    m.add("output.csv", a.out);
    m.add("output.summary", a.out + ".summary.txt");
    m.write(a.out + ".manifest.txt");
    return kExitOk;
}

// ---------------------------------------------------------------------------

struct GradCheckArgs {
    int tokens = 4, dim = 8, heads = 2;
    std::uint64_t seed = 7;
    double h = 1e-3, tol = 1e-2;
    bool inject_corruption = false;
};

int cmd_grad_check(const GradCheckArgs& a) {
    if (a.tokens > 8 || a.dim > 16) {
        throw fsel::ConfigError("grad-check extents capped at L<=8, C<=16 (got L=" +
                                std::to_string(a.tokens) + ", C=" + std::to_string(a.dim) + ")");
    }
    fsel::DiffCheckConfig cfg;
    cfg.tokens = a.tokens;
    cfg.width = a.dim;
    cfg.heads = a.heads;
    cfg.seed = a.seed;
    cfg.h = a.h;
    cfg.tol = a.tol;
    cfg.corrupt_gradient = a.inject_corruption;
    fsel::DiffCheckResult result = fsel::run_diff_check(cfg);
    std::printf("%-32s %14s %14s\n", "parameter", "fd_rel_err", "f32–f64_rel");
    for (const auto& e : result.entries) {
        std::printf("%-32s %14.3e %14.3e%s\n", e.name.c_str(), e.fd_rel_error, e.cross_rel_error,
                    e.passed ? "" : "  FAIL");
    }
    std::printf("max fd rel error:    %.3e (tol %.1e)\n", result.max_fd_rel_error, cfg.tol);
    std::printf("max cross rel error: %.3e (tol %.1e)\n", result.max_cross_rel_error, cfg.cross_tol);
    std::printf("%s\n", result.passed ? "PASS" : "FAIL");
    return result.passed ? kExitOk : kExitCheckFailed;
}

// ---------------------------------------------------------------------------

int cmd_inspect(const std::string& path) {
    const std::string bytes = fsel::detail::read_file_bytes(path);
    if (bytes.size() >= 4 && bytes.compare(0, 4, "FSEL") == 0) {
        auto records = fsel::decode_feature_file(bytes, path);
        std::cout << "FSEL v" << fsel::kFeatureFileVersion << ", " << records.size()
                  << " record(s)\n";
        for (const auto& r : records) {
            std::cout << "  " << r.id << ": L=" << r.tokens() << " C=" << r.width();
            if (r.has_grid()) std::cout << " grid=" << r.grid_h << "x" << r.grid_w;
            std::cout << "\n";
        }
        return kExitOk;
    }
    if (bytes.size() >= 4 && bytes.compare(0, 4, "FSCK") == 0) {
        fsel::CheckpointHeader hdr = fsel::detail::walk_checkpoint(
            bytes, path, [](const std::string&, const std::vector<int>&, std::vector<float>&&) {});
        std::cout << "FSCK v" << hdr.version << ", " << hdr.entries.size() << " entries\n";
        for (const auto& [name, dims] : hdr.entries) {
            std::cout << "  " << name << " " << fsel::shape_str(dims) << "\n";
        }
        std::cout << "config:\n";
        for (const auto& [k, v] : fsel::parse_key_value_lines(hdr.config_text)) {
            std::cout << "  " << k << "=" << v << "\n";
        }
        return kExitOk;
    }
    throw fsel::FormatError(path + ": unknown magic (expected FSEL or FSCK)");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Visual-token feature selection: train, prune, evaluate"};
    app.require_subcommand(1);
    app.set_config("--config", "", "Read defaults from a key=value file (flags win)");

    GenDataArgs gen;
    auto* gen_cmd = app.add_subcommand("gen-data", "Write a planted-redundancy FSEL corpus");
    gen_cmd->add_option("--sets", gen.sets, "Number of feature sets")->capture_default_str();
    gen_cmd->add_option("--tokens", gen.tokens, "Tokens per set (L)")->capture_default_str();
    gen_cmd->add_option("--dim", gen.dim, "Feature width (C)")->capture_default_str();
    gen_cmd->add_option("--rank", gen.rank, "Planted basis size")->capture_default_str();
    gen_cmd->add_option("--noise", gen.noise, "Noise sigma on derived tokens")->capture_default_str();
    gen_cmd->add_option("--seed", gen.seed, "Seed")->capture_default_str();
    gen_cmd->add_option("--out", gen.out, "Output FSEL path")->required();

    TrainArgs tr;
    auto* train_cmd = app.add_subcommand("train", "Train selector and reconstructor");
    train_cmd->add_option("--data", tr.data, "Training FSEL file")->required();
    train_cmd->add_option("--out", tr.out, "Output directory")->capture_default_str();
    train_cmd->add_option("--resume", tr.resume, "Checkpoint to resume from");
    train_cmd->add_option("--p", tr.cfg.p, "Retention target in (0,1]")->capture_default_str();
    train_cmd->add_option("--tau", tr.cfg.tau_start, "Gumbel temperature")->capture_default_str();
    train_cmd->add_option("--tau-end", tr.cfg.tau_end, "Anneal floor")->capture_default_str();
    train_cmd->add_option("--tau-anneal-steps", tr.cfg.tau_anneal_steps,
                          "Steps to reach the anneal floor (0 = constant)")
        ->capture_default_str();
    train_cmd->add_option("--lr", tr.cfg.learning_rate, "Adam learning rate")->capture_default_str();
    train_cmd->add_option("--beta1", tr.cfg.beta1, "Adam beta1")->capture_default_str();
    train_cmd->add_option("--beta2", tr.cfg.beta2, "Adam beta2")->capture_default_str();
    train_cmd->add_option("--eps", tr.cfg.eps_adam, "Adam epsilon")->capture_default_str();
    train_cmd->add_option("--batch", tr.cfg.batch_size, "Batch size")->capture_default_str();
    train_cmd->add_option("--steps", tr.cfg.steps, "Optimizer steps")->capture_default_str();
    train_cmd->add_option("--seed", tr.cfg.seed, "Seed")->capture_default_str();
    train_cmd->add_option("--heads", tr.cfg.heads, "Attention heads (default max(1, C/64))")
        ->each([&tr](const std::string&) { tr.heads_set = true; });
    train_cmd->add_option("--l-max", tr.cfg.l_max, "Token capacity (default: longest record)")
        ->each([&tr](const std::string&) { tr.l_max_set = true; });

    SelectArgs se;
    auto* select_cmd = app.add_subcommand("select", "Prune features with a trained selector");
    select_cmd->add_option("--ckpt", se.ckpt, "Checkpoint (FSCK)")->required();
    select_cmd->add_option("--data", se.data, "Input FSEL file")->required();
    select_cmd->add_option("--ratio", se.ratio, "Retention ratio in (0,1]")->capture_default_str();
    select_cmd->add_option("--out", se.out, "Indices CSV path (default: stdout)");
    select_cmd->add_option("--pruned-out", se.pruned_out, "Write retained rows as FSEL");

    EvaluateArgs ev;
    auto* eval_cmd = app.add_subcommand("evaluate", "Trained vs random selection sweep");
    eval_cmd->add_option("--ckpt", ev.ckpt, "Checkpoint (FSCK)")->required();
    eval_cmd->add_option("--data", ev.data, "Evaluation FSEL file")->required();
    eval_cmd->add_option("--ratios", ev.ratios, "Comma-separated retention ratios")
        ->capture_default_str();
    eval_cmd->add_option("--seeds", ev.seeds, "Comma-separated seeds for the random policy")
        ->capture_default_str();
    eval_cmd->add_option("--out", ev.out, "Output CSV path")->capture_default_str();

    GradCheckArgs gc;
    auto* gc_cmd = app.add_subcommand("grad-check", "Finite-difference check of the full loss");
    gc_cmd->add_option("--tokens", gc.tokens, "Toy L (max 8)")->capture_default_str();
    gc_cmd->add_option("--dim", gc.dim, "Toy C (max 16)")->capture_default_str();
    gc_cmd->add_option("--heads", gc.heads, "Attention heads")->capture_default_str();
    gc_cmd->add_option("--seed", gc.seed, "Seed")->capture_default_str();
    gc_cmd->add_option("--fd-step", gc.h, "Central-difference step")->capture_default_str();
    gc_cmd->add_option("--tol", gc.tol, "Relative-error tolerance")->capture_default_str();
    gc_cmd->add_flag("--inject-corruption", gc.inject_corruption,
                     "Corrupt one gradient entry (negative-control hook)");

    std::string inspect_path;
    auto* inspect_cmd = app.add_subcommand("inspect", "Dump FSEL/FSCK headers");
    inspect_cmd->add_option("file", inspect_path, "File to inspect")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);  // --help
        app.exit(e);
        return kExitUsage;
    }

    try {
        if (*gen_cmd) return cmd_gen_data(gen);
        if (*train_cmd) return cmd_train(tr);
        if (*select_cmd) return cmd_select(se);
        if (*eval_cmd) return cmd_evaluate(ev);
        if (*gc_cmd) return cmd_grad_check(gc);
        if (*inspect_cmd) return cmd_inspect(inspect_path);
    } catch (const fsel::ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const fsel::FormatError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitIo;
    } catch (const fsel::DataError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitIo;
    } catch (const fsel::IoError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitIo;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitCheckFailed;
    }
    return kExitUsage;
}
