#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "fsel/rng.hpp"
#include "fsel/tensor.hpp"

namespace fsel {

// One image's encoder output: an (L, C) matrix of token embeddings, an
// optional (H, W) grid with H*W == L, and a label.
struct FeatureSet {
    Tensor<float> features;  // [L, C]
    std::string id;
    int grid_h = 0;  // 0 means absent
    int grid_w = 0;

    int tokens() const { return features.extent(0); }
    int width() const { return features.extent(1); }
    bool has_grid() const { return grid_h > 0 || grid_w > 0; }
};

inline void validate_feature_set(const FeatureSet& fs) {
    if (fs.features.ndim() != 2) {
        throw DataError("record '" + fs.id + "': features must be rank 2, got shape " +
                        shape_str(fs.features.shape()));
    }
    if (fs.has_grid() && fs.grid_h * fs.grid_w != fs.tokens()) {
        throw DataError("record '" + fs.id + "': grid " + std::to_string(fs.grid_h) + "x" +
                        std::to_string(fs.grid_w) + " does not cover " + std::to_string(fs.tokens()) +
                        " tokens");
    }
    for (float v : fs.features.values()) {
        if (!std::isfinite(v)) {
            throw DataError("record '" + fs.id + "': non-finite feature value");
        }
    }
}

// ---------------------------------------------------------------------------
// FSEL feature file (little-endian):
//   magic "FSEL" (4 bytes)
//   u32 version = 1
//   u32 record_count
//   per record:
//     u32 id_len, id bytes (UTF-8)
//     u32 L, u32 C, u32 H, u32 W   (H = W = 0 when the grid is absent)
//     L*C float32, row-major
// ---------------------------------------------------------------------------

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
    char b[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                 static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
    out.append(b, 4);
}

inline void put_f32(std::string& out, float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    put_u32(out, bits);
}

// Cursor over an in-memory file image; every decode error carries the byte
// offset it happened at.
class ByteReader {
public:
    ByteReader(const std::string& bytes, std::string what)
        : bytes_(bytes), what_(std::move(what)) {}

    std::uint32_t u32() {
        need(4, "u32");
        std::uint32_t v = 0;
        for (int i = 3; i >= 0; --i)
            v = (v << 8) | static_cast<unsigned char>(bytes_[pos_ + static_cast<std::size_t>(i)]);
        pos_ += 4;
        return v;
    }

    float f32() {
        std::uint32_t bits = u32();
        float v;
        std::memcpy(&v, &bits, 4);
        return v;
    }

    std::string str(std::size_t n) {
        need(n, "string");
        std::string s = bytes_.substr(pos_, n);
        pos_ += n;
        return s;
    }

    void f32_block(float* dst, std::size_t count) {
        need(count * 4, "float payload");
        // Little-endian on-disk layout; decode bytewise so the reader does
        // not depend on host endianness.
        for (std::size_t i = 0; i < count; ++i) {
            std::uint32_t v = 0;
            const std::size_t base = pos_ + i * 4;
            for (int b = 3; b >= 0; --b)
                v = (v << 8) | static_cast<unsigned char>(bytes_[base + static_cast<std::size_t>(b)]);
            std::memcpy(dst + i, &v, 4);
        }
        pos_ += count * 4;
    }

    std::size_t offset() const { return pos_; }
    bool at_end() const { return pos_ == bytes_.size(); }

    [[noreturn]] void fail(const std::string& msg) const {
        throw FormatError(what_ + ": " + msg + " at byte " + std::to_string(pos_));
    }

private:
    void need(std::size_t n, const char* field) const {
        if (pos_ + n > bytes_.size()) {
            throw FormatError(what_ + ": truncated while reading " + std::string(field) +
                              " at byte " + std::to_string(pos_) + " (file has " +
                              std::to_string(bytes_.size()) + " bytes)");
        }
    }

    const std::string& bytes_;
    std::string what_;
    std::size_t pos_ = 0;
};

inline std::string read_file_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path + "' for reading");
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (in.bad()) throw IoError("read failure on '" + path + "'");
    return bytes;
}

inline void write_file_bytes(const std::string& path, const std::string& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + path + "' for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failure on '" + path + "'");
}

}  // namespace detail

inline constexpr std::uint32_t kFeatureFileVersion = 1;

inline std::string encode_feature_file(const std::vector<FeatureSet>& records) {
    std::string out;
    out.append("FSEL", 4);
    detail::put_u32(out, kFeatureFileVersion);
    detail::put_u32(out, static_cast<std::uint32_t>(records.size()));
    for (const auto& r : records) {
        detail::put_u32(out, static_cast<std::uint32_t>(r.id.size()));
        out.append(r.id);
        detail::put_u32(out, static_cast<std::uint32_t>(r.tokens()));
        detail::put_u32(out, static_cast<std::uint32_t>(r.width()));
        detail::put_u32(out, static_cast<std::uint32_t>(r.grid_h));
        detail::put_u32(out, static_cast<std::uint32_t>(r.grid_w));
        for (float v : r.features.values()) detail::put_f32(out, v);
    }
    return out;
}

inline void save_feature_file(const std::string& path, const std::vector<FeatureSet>& records) {
    for (const auto& r : records) validate_feature_set(r);
    detail::write_file_bytes(path, encode_feature_file(records));
}

inline std::vector<FeatureSet> decode_feature_file(const std::string& bytes,
                                                   const std::string& what) {
    detail::ByteReader rd(bytes, what);
    if (rd.str(4) != "FSEL") {
        throw FormatError(what + ": bad magic at byte 0 (expected 'FSEL')");
    }
    const std::uint32_t version = rd.u32();
    if (version != kFeatureFileVersion) {
        throw FormatError(what + ": unsupported version " + std::to_string(version) + " at byte 4");
    }
    const std::uint32_t count = rd.u32();
    std::vector<FeatureSet> records;
    records.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        FeatureSet fs;
        const std::uint32_t id_len = rd.u32();
        fs.id = rd.str(id_len);
        const std::uint32_t l = rd.u32();
        const std::uint32_t c = rd.u32();
        fs.grid_h = static_cast<int>(rd.u32());
        fs.grid_w = static_cast<int>(rd.u32());
        if (l == 0 || c == 0) rd.fail("record '" + fs.id + "' has empty extents");
        std::vector<float> data(static_cast<std::size_t>(l) * c);
        rd.f32_block(data.data(), data.size());
        fs.features = Tensor<float>::from_data({static_cast<int>(l), static_cast<int>(c)},
                                               std::move(data));
        validate_feature_set(fs);
        records.push_back(std::move(fs));
    }
    if (!rd.at_end()) rd.fail("trailing bytes after last record");
    return records;
}

// Reads and validates a whole FSEL file; a bad file yields an exception and
// no partial result. Record order is preserved.
inline std::vector<FeatureSet> load_feature_file(const std::string& path) {
    return decode_feature_file(detail::read_file_bytes(path), path);
}

// ---------------------------------------------------------------------------
// Planted-redundancy corpus
// ---------------------------------------------------------------------------

struct PlantedCorpus {
    std::vector<FeatureSet> records;
    // Basis token positions, fixed for the whole corpus (drawn once from the
    // seed) and the ground truth for "informative token" tests.
    std::vector<int> basis_positions;
};

// Each record plants `rank` i.i.d. N(0,1)^C basis tokens at the corpus'
// basis positions; every other token is a convex combination of 2..4 basis
// tokens plus N(0, noise_sigma^2) noise. The mixing recipe (support and
// weights per derived position) is drawn once per corpus, so the redundancy
// pattern is a fixed position-indexed linear map with fresh basis content
// per record — ground truth a trained selector can actually discover.
inline PlantedCorpus generate_planted_redundancy(int n_sets, int tokens, int width, int rank,
                                                 double noise_sigma, std::uint64_t seed) {
    if (n_sets < 1 || tokens < 1 || width < 1 || rank < 1) {
        throw ConfigError("generate_planted_redundancy: extents must be positive");
    }
    if (rank > tokens) {
        throw ConfigError("generate_planted_redundancy: rank " + std::to_string(rank) +
                          " exceeds token count " + std::to_string(tokens));
    }
    if (noise_sigma < 0) {
        throw ConfigError("generate_planted_redundancy: noise_sigma must be non-negative");
    }
    PlantedCorpus corpus;
    Rng pos_rng(seed, "planted-positions");
    corpus.basis_positions = pos_rng.subset(tokens, rank);
    std::vector<char> is_basis(static_cast<std::size_t>(tokens), 0);
    for (int p : corpus.basis_positions) is_basis[static_cast<std::size_t>(p)] = 1;

    // Corpus-level mixing recipe: two sources per derived token.
    struct Mix {
        std::vector<int> sources;   // basis positions
        std::vector<double> weights;  // convex, sum 1
    };
    Rng mix_rng(seed, "planted-mixture");
    const int m = rank < 2 ? rank : 2;
    std::vector<Mix> recipe(static_cast<std::size_t>(tokens));
    for (int t = 0; t < tokens; ++t) {
        if (is_basis[static_cast<std::size_t>(t)]) continue;
        std::vector<int> sources(corpus.basis_positions);
        mix_rng.shuffle(sources);
        sources.resize(static_cast<std::size_t>(m));
        // Dirichlet(1) weights: normalized exponentials.
        std::vector<double> w(static_cast<std::size_t>(m));
        double total = 0.0;
        for (auto& wi : w) {
            wi = -std::log(mix_rng.uniform01());
            total += wi;
        }
        for (auto& wi : w) wi /= total;
        recipe[static_cast<std::size_t>(t)] = {std::move(sources), std::move(w)};
    }

    Rng rng(seed, "planted-content");
    corpus.records.reserve(static_cast<std::size_t>(n_sets));
    for (int s = 0; s < n_sets; ++s) {
        std::vector<float> data(static_cast<std::size_t>(tokens) * width);
        // Basis rows first so derived rows can read them.
        for (int p : corpus.basis_positions) {
            float* row = data.data() + static_cast<std::size_t>(p) * width;
            for (int j = 0; j < width; ++j) row[j] = static_cast<float>(rng.normal());
        }
        for (int t = 0; t < tokens; ++t) {
            if (is_basis[static_cast<std::size_t>(t)]) continue;
            const Mix& mix = recipe[static_cast<std::size_t>(t)];
            float* row = data.data() + static_cast<std::size_t>(t) * width;
            for (int j = 0; j < width; ++j) {
                double acc = 0.0;
                for (std::size_t k = 0; k < mix.sources.size(); ++k) {
                    const float* basis_row =
                        data.data() + static_cast<std::size_t>(mix.sources[k]) * width;
                    acc += mix.weights[k] * static_cast<double>(basis_row[j]);
                }
                if (noise_sigma > 0) acc += noise_sigma * rng.normal();
                row[j] = static_cast<float>(acc);
            }
        }
        FeatureSet fs;
        char id[32];
        std::snprintf(id, sizeof(id), "rec%05d", s);
        fs.id = id;
        fs.features = Tensor<float>::from_data({tokens, width}, std::move(data));
        corpus.records.push_back(std::move(fs));
    }
    return corpus;
}

// Sidecar next to a generated FSEL file: one line per record with the basis
// positions that reconstruct everything else.
inline std::string encode_basis_sidecar(const PlantedCorpus& corpus) {
    std::string out;
    for (const auto& r : corpus.records) {
        out += r.id;
        out += ',';
        for (std::size_t i = 0; i < corpus.basis_positions.size(); ++i) {
            if (i) out += ' ';
            out += std::to_string(corpus.basis_positions[i]);
        }
        out += '\n';
    }
    return out;
}

}  // namespace fsel
