#pragma once

// Binary containers for traces ("RAST"), LM-head bundles ("RASB") and
// prototype sets ("RASP"), plus the JSON risk-parameter file.
//
// Container layout (all integers little-endian, floats IEEE-754 binary32):
//
//   magic[4]  u32 version (=1)
//   repeated: tag[4]  u32 payload_length  payload[payload_length]
//
// Readers skip chunks with unknown tags. Required chunks:
//
//   RAST / "TRCE": u32 d, u32 token_count, u8 role, str model_id, str query_id,
//                  per token: u32 position, f32*d, u8 has_per_layer [u32 L, L*(f32*d)],
//                  u8 has_token_id [u32 id]
//   RAST / "ATTN": (optional) u32 L, u32 H, u32 |T|, u32 |Vis|, u32*|T| text positions,
//                  u32*|Vis| visual positions, f32 weights in (l, h, j, t) order
//   RASB / "BNDL": u32 d, u32 V, f32*(V*d) row-major, u8 has_bias [f32*V],
//                  u32 refusal_count, u32*refusal_count
//   RASB / "META": (optional) str model_id
//   RASP / "PROT": u32 d, u32 N, str model_id, u32 source_query_count, N*(f32*d)
//
// where str is u32 byte length followed by UTF-8 bytes. Values are widened to
// double on load; writers narrow to binary32.

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "ras/error.hpp"
#include "ras/types.hpp"

namespace ras::io {

inline constexpr std::uint32_t kFormatVersion = 1;
inline constexpr std::array<char, 4> kTraceMagic{'R', 'A', 'S', 'T'};
inline constexpr std::array<char, 4> kBundleMagic{'R', 'A', 'S', 'B'};
inline constexpr std::array<char, 4> kPrototypeMagic{'R', 'A', 'S', 'P'};

using Bytes = std::vector<std::uint8_t>;

/// Round a value to the nearest binary32, as it would be stored on disk.
inline double to_f32(double v) { return static_cast<double>(static_cast<float>(v)); }

class ByteWriter {
public:
    void u8(std::uint8_t v) { out_.push_back(v); }

    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }

    void f32(double v) { u32(std::bit_cast<std::uint32_t>(static_cast<float>(v))); }

    void f32s(std::span<const double> vs) {
        for (double v : vs) f32(v);
    }

    void str(std::string_view s) {
        u32(static_cast<std::uint32_t>(s.size()));
        out_.insert(out_.end(), s.begin(), s.end());
    }

    void raw(std::span<const char> s) { out_.insert(out_.end(), s.begin(), s.end()); }

    /// Appends tag + length + payload.
    void chunk(std::array<char, 4> tag, const Bytes& payload) {
        raw(tag);
        u32(static_cast<std::uint32_t>(payload.size()));
        out_.insert(out_.end(), payload.begin(), payload.end());
    }

    Bytes take() { return std::move(out_); }

private:
    Bytes out_;
};

/// Bounds-checked cursor over a byte range. `base` is the absolute offset of
/// the range within the file, used in error messages.
class ByteReader {
public:
    ByteReader(std::span<const std::uint8_t> data, std::size_t base = 0) : data_(data), base_(base) {}

    std::size_t offset() const { return base_ + pos_; }
    std::size_t remaining() const { return data_.size() - pos_; }
    bool done() const { return pos_ == data_.size(); }

    void need(std::size_t n, const char* what) const {
        if (n > remaining()) {
            throw FormatError(FormatErrorKind::Truncated, offset(),
                              std::string(what) + ": need " + std::to_string(n) + " bytes, " +
                                  std::to_string(remaining()) + " left");
        }
    }

    /// Rejects a declared element count before anything is allocated for it.
    void need_elements(std::uint64_t count, std::uint64_t element_size, const char* what) const {
        if (element_size != 0 && count > remaining() / element_size) {
            throw FormatError(FormatErrorKind::Truncated, offset(),
                              std::string(what) + ": declared " + std::to_string(count) +
                                  " elements exceed the remaining payload");
        }
    }

    std::uint8_t u8(const char* what) {
        need(1, what);
        return data_[pos_++];
    }

    std::uint32_t u32(const char* what) {
        need(4, what);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(data_[pos_ + i]) << (8 * i);
        pos_ += 4;
        return v;
    }

    double f32(const char* what) { return static_cast<double>(std::bit_cast<float>(u32(what))); }

    Vector f32s(std::size_t n, const char* what) {
        need_elements(n, 4, what);
        Vector v(n);
        for (auto& x : v) x = f32(what);
        return v;
    }

    std::string str(const char* what) {
        const std::uint32_t n = u32(what);
        need(n, what);
        std::string s(reinterpret_cast<const char*>(data_.data() + pos_), n);
        pos_ += n;
        return s;
    }

    std::array<char, 4> tag(const char* what) {
        need(4, what);
        std::array<char, 4> t{};
        std::memcpy(t.data(), data_.data() + pos_, 4);
        pos_ += 4;
        return t;
    }

    std::span<const std::uint8_t> take(std::size_t n, const char* what) {
        need(n, what);
        auto s = data_.subspan(pos_, n);
        pos_ += n;
        return s;
    }

    bool flag(const char* what) {
        const std::size_t at = offset();
        const std::uint8_t v = u8(what);
        if (v > 1) throw FormatError(FormatErrorKind::Malformed, at, std::string(what) + ": flag must be 0 or 1");
        return v == 1;
    }

private:
    std::span<const std::uint8_t> data_;
    std::size_t base_;
    std::size_t pos_ = 0;
};

struct Chunk {
    std::array<char, 4> tag;
    std::size_t offset;  // absolute offset of the payload
    std::span<const std::uint8_t> payload;
};

namespace detail {

inline std::string tag_string(std::array<char, 4> t) { return std::string(t.begin(), t.end()); }

inline std::vector<Chunk> open_container(std::span<const std::uint8_t> data, std::array<char, 4> magic) {
    ByteReader r(data);
    if (data.size() < 4 || std::memcmp(data.data(), magic.data(), 4) != 0) {
        throw FormatError(FormatErrorKind::MagicMismatch, 0, "expected magic " + tag_string(magic));
    }
    r.tag("magic");
    const std::size_t version_at = r.offset();
    const std::uint32_t version = r.u32("version");
    if (version != kFormatVersion) {
        throw FormatError(FormatErrorKind::UnsupportedVersion, version_at,
                          "version " + std::to_string(version) + " is not supported");
    }
    std::vector<Chunk> chunks;
    while (!r.done()) {
        const auto tag = r.tag("chunk tag");
        const std::uint32_t length = r.u32("chunk length");
        const std::size_t at = r.offset();
        chunks.push_back({tag, at, r.take(length, "chunk payload")});
    }
    return chunks;
}

/// Exactly one chunk with this tag must exist; returns it.
inline const Chunk& required_chunk(const std::vector<Chunk>& chunks, std::array<char, 4> tag) {
    const Chunk* found = nullptr;
    for (const auto& c : chunks) {
        if (c.tag != tag) continue;
        if (found) throw FormatError(FormatErrorKind::Malformed, c.offset, "duplicate chunk " + tag_string(tag));
        found = &c;
    }
    if (!found) {
        throw FormatError(FormatErrorKind::Malformed, chunks.empty() ? 8 : chunks.back().offset,
                          "missing required chunk " + tag_string(tag));
    }
    return *found;
}

inline const Chunk* optional_chunk(const std::vector<Chunk>& chunks, std::array<char, 4> tag) {
    const Chunk* found = nullptr;
    for (const auto& c : chunks) {
        if (c.tag != tag) continue;
        if (found) throw FormatError(FormatErrorKind::Malformed, c.offset, "duplicate chunk " + tag_string(tag));
        found = &c;
    }
    return found;
}

inline void expect_consumed(const ByteReader& r, const char* what) {
    if (!r.done()) {
        throw FormatError(FormatErrorKind::Malformed, r.offset(), std::string(what) + ": trailing bytes in chunk");
    }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Traces

inline constexpr std::array<char, 4> kTraceChunk{'T', 'R', 'C', 'E'};
inline constexpr std::array<char, 4> kAttentionChunk{'A', 'T', 'T', 'N'};

inline Bytes encode_trace(const ActivationTrace& t) {
    t.validate();
    ByteWriter w;
    w.u32(t.dim);
    w.u32(static_cast<std::uint32_t>(t.tokens.size()));
    w.u8(static_cast<std::uint8_t>(t.role));
    w.str(t.model_id);
    w.str(t.query_id);
    for (const auto& tok : t.tokens) {
        w.u32(tok.position);
        w.f32s(tok.last_layer);
        w.u8(tok.per_layer ? 1 : 0);
        if (tok.per_layer) {
            w.u32(static_cast<std::uint32_t>(tok.per_layer->size()));
            for (const auto& layer : *tok.per_layer) w.f32s(layer);
        }
        w.u8(tok.token_id ? 1 : 0);
        if (tok.token_id) w.u32(*tok.token_id);
    }
    Bytes body = w.take();

    Bytes attn;
    if (t.attention) {
        const auto& a = *t.attention;
        ByteWriter aw;
        aw.u32(a.layers);
        aw.u32(a.heads);
        aw.u32(static_cast<std::uint32_t>(a.text_indices.size()));
        aw.u32(static_cast<std::uint32_t>(a.visual_indices.size()));
        for (auto i : a.text_indices) aw.u32(i);
        for (auto i : a.visual_indices) aw.u32(i);
        aw.f32s(a.weights);
        attn = aw.take();
    }

    ByteWriter out;
    out.raw(kTraceMagic);
    out.u32(kFormatVersion);
    out.chunk(kTraceChunk, body);
    if (t.attention) out.chunk(kAttentionChunk, attn);
    return out.take();
}

inline AttentionTensor decode_attention(const Chunk& c) {
    ByteReader r(c.payload, c.offset);
    AttentionTensor a;
    a.layers = r.u32("attention L");
    a.heads = r.u32("attention H");
    const std::uint32_t n_text = r.u32("attention |T|");
    const std::uint32_t n_vis = r.u32("attention |Vis|");
    r.need_elements(static_cast<std::uint64_t>(n_text) + n_vis, 4, "attention indices");
    a.text_indices.resize(n_text);
    for (auto& i : a.text_indices) i = r.u32("attention text index");
    a.visual_indices.resize(n_vis);
    for (auto& i : a.visual_indices) i = r.u32("attention visual index");
    const std::uint64_t count = static_cast<std::uint64_t>(a.layers) * a.heads * n_text * n_vis;
    const std::size_t weights_at = r.offset();
    if (count != r.remaining() / 4 || r.remaining() % 4 != 0) {
        throw FormatError(FormatErrorKind::DimensionMismatch, weights_at,
                          "attention weight payload does not match L*H*|T|*|Vis|");
    }
    a.weights = r.f32s(static_cast<std::size_t>(count), "attention weights");
    for (double w : a.weights) {
        if (!(w >= 0.0 && w <= 1.0)) throw FormatError(FormatErrorKind::Malformed, weights_at, "attention weight outside [0,1]");
    }
    return a;
}

inline ActivationTrace decode_trace(std::span<const std::uint8_t> data) {
    const auto chunks = detail::open_container(data, kTraceMagic);
    const Chunk& body = detail::required_chunk(chunks, kTraceChunk);
    ByteReader r(body.payload, body.offset);

    ActivationTrace t;
    const std::size_t dim_at = r.offset();
    t.dim = r.u32("d");
    if (t.dim == 0) throw FormatError(FormatErrorKind::DimensionMismatch, dim_at, "d must be positive");
    const std::uint32_t count = r.u32("token count");
    const std::size_t role_at = r.offset();
    const std::uint8_t role = r.u8("role");
    if (role > 1) throw FormatError(FormatErrorKind::Malformed, role_at, "role must be 0 or 1");
    t.role = static_cast<TraceRole>(role);
    t.model_id = r.str("model_id");
    t.query_id = r.str("query_id");

    // Each token occupies at least 4 + 4d + 2 bytes.
    r.need_elements(count, 4ULL + 4ULL * t.dim + 2ULL, "tokens");
    t.tokens.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        TokenRecord tok;
        const std::size_t pos_at = r.offset();
        tok.position = r.u32("position");
        if (tok.position != i + 1) {
            throw FormatError(FormatErrorKind::Malformed, pos_at, "token positions must be contiguous from 1");
        }
        tok.last_layer = r.f32s(t.dim, "last-layer activation");
        if (r.flag("has_per_layer")) {
            const std::size_t l_at = r.offset();
            const std::uint32_t layers = r.u32("layer count");
            if (layers == 0) throw FormatError(FormatErrorKind::Malformed, l_at, "layer count must be positive");
            r.need_elements(layers, 4ULL * t.dim, "per-layer activations");
            std::vector<Vector> per_layer(layers);
            for (auto& v : per_layer) v = r.f32s(t.dim, "per-layer activation");
            if (per_layer.back() != tok.last_layer) {
                throw FormatError(FormatErrorKind::Malformed, l_at, "last per-layer activation differs from last-layer");
            }
            tok.per_layer = std::move(per_layer);
        }
        if (r.flag("has_token_id")) tok.token_id = r.u32("token id");
        t.tokens.push_back(std::move(tok));
    }
    detail::expect_consumed(r, "trace");
    if (const Chunk* attn = detail::optional_chunk(chunks, kAttentionChunk)) t.attention = decode_attention(*attn);
    return t;
}

// ---------------------------------------------------------------------------
// Bundles

inline constexpr std::array<char, 4> kBundleChunk{'B', 'N', 'D', 'L'};
inline constexpr std::array<char, 4> kMetaChunk{'M', 'E', 'T', 'A'};

inline Bytes encode_bundle(const ModelBundle& b) {
    b.validate();
    ByteWriter w;
    w.u32(b.dim);
    w.u32(b.vocab);
    w.f32s(b.weights.data);
    w.u8(b.bias ? 1 : 0);
    if (b.bias) w.f32s(*b.bias);
    w.u32(static_cast<std::uint32_t>(b.refusal_token_ids.size()));
    for (auto id : b.refusal_token_ids) w.u32(id);

    ByteWriter out;
    out.raw(kBundleMagic);
    out.u32(kFormatVersion);
    out.chunk(kBundleChunk, w.take());
    if (!b.model_id.empty()) {
        ByteWriter meta;
        meta.str(b.model_id);
        out.chunk(kMetaChunk, meta.take());
    }
    return out.take();
}

inline ModelBundle decode_bundle(std::span<const std::uint8_t> data) {
    const auto chunks = detail::open_container(data, kBundleMagic);
    const Chunk& body = detail::required_chunk(chunks, kBundleChunk);
    ByteReader r(body.payload, body.offset);
    ModelBundle b;
    const std::size_t dim_at = r.offset();
    b.dim = r.u32("d");
    b.vocab = r.u32("V");
    if (b.dim == 0 || b.vocab == 0) throw FormatError(FormatErrorKind::DimensionMismatch, dim_at, "d and V must be positive");
    const std::uint64_t count = static_cast<std::uint64_t>(b.dim) * b.vocab;
    r.need_elements(count, 4, "lm head weights");
    b.weights = Matrix(b.vocab, b.dim);
    b.weights.data = r.f32s(static_cast<std::size_t>(count), "lm head weights");
    if (r.flag("has_bias")) b.bias = r.f32s(b.vocab, "bias");
    const std::uint32_t n_refusal = r.u32("refusal count");
    r.need_elements(n_refusal, 4, "refusal ids");
    b.refusal_token_ids.resize(n_refusal);
    for (auto& id : b.refusal_token_ids) {
        const std::size_t at = r.offset();
        id = r.u32("refusal id");
        if (id >= b.vocab) throw FormatError(FormatErrorKind::Malformed, at, "refusal id outside vocabulary");
    }
    detail::expect_consumed(r, "bundle");
    if (const Chunk* meta = detail::optional_chunk(chunks, kMetaChunk)) {
        ByteReader mr(meta->payload, meta->offset);
        b.model_id = mr.str("model_id");
        detail::expect_consumed(mr, "bundle meta");
    }
    return b;
}

// ---------------------------------------------------------------------------
// Prototype sets

inline constexpr std::array<char, 4> kPrototypeChunk{'P', 'R', 'O', 'T'};

inline Bytes encode_prototypes(const PrototypeSet& p) {
    p.validate();
    ByteWriter w;
    w.u32(p.dim);
    w.u32(static_cast<std::uint32_t>(p.mu.size()));
    w.str(p.model_id);
    w.u32(p.source_query_count);
    for (const auto& v : p.mu) w.f32s(v);
    ByteWriter out;
    out.raw(kPrototypeMagic);
    out.u32(kFormatVersion);
    out.chunk(kPrototypeChunk, w.take());
    return out.take();
}

/// `expected_dim` (when nonzero) is the d of the reading pipeline; a file
/// declaring a different d is rejected.
inline PrototypeSet decode_prototypes(std::span<const std::uint8_t> data, std::uint32_t expected_dim = 0) {
    const auto chunks = detail::open_container(data, kPrototypeMagic);
    const Chunk& body = detail::required_chunk(chunks, kPrototypeChunk);
    ByteReader r(body.payload, body.offset);
    PrototypeSet p;
    const std::size_t dim_at = r.offset();
    p.dim = r.u32("d");
    if (p.dim == 0) throw FormatError(FormatErrorKind::DimensionMismatch, dim_at, "d must be positive");
    if (expected_dim != 0 && p.dim != expected_dim) {
        throw FormatError(FormatErrorKind::DimensionMismatch, dim_at,
                          "prototype d=" + std::to_string(p.dim) + " but pipeline expects d=" +
                              std::to_string(expected_dim));
    }
    const std::size_t n_at = r.offset();
    const std::uint32_t n = r.u32("N");
    if (n == 0) throw FormatError(FormatErrorKind::Malformed, n_at, "N must be >= 1");
    p.model_id = r.str("model_id");
    const std::size_t src_at = r.offset();
    p.source_query_count = r.u32("source query count");
    if (p.source_query_count == 0) throw FormatError(FormatErrorKind::Malformed, src_at, "source query count must be >= 1");
    r.need_elements(n, 4ULL * p.dim, "prototype vectors");
    p.mu.resize(n);
    for (auto& v : p.mu) v = r.f32s(p.dim, "prototype vector");
    detail::expect_consumed(r, "prototypes");
    return p;
}

// ---------------------------------------------------------------------------
// Risk parameters (JSON)

inline std::string encode_params(const RiskParams& p) {
    p.validate();
    nlohmann::ordered_json j;
    j["gamma"] = p.gamma;
    j["n_tokens"] = p.n_tokens;
    j["s_base"] = p.s_base;
    j["alpha"] = p.alpha;
    j["r_target"] = p.r_target;
    return j.dump(2) + "\n";
}

inline RiskParams decode_params(std::string_view text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw FormatError(FormatErrorKind::Malformed, e.byte, std::string("params JSON: ") + e.what());
    }
    if (!j.is_object()) throw FormatError(FormatErrorKind::Malformed, 0, "params JSON: expected an object");
    auto number = [&](const char* key) {
        if (!j.contains(key) || !j[key].is_number()) {
            throw FormatError(FormatErrorKind::Malformed, 0, std::string("params JSON: missing numeric field ") + key);
        }
        return j[key].get<double>();
    };
    RiskParams p;
    p.gamma = number("gamma");
    if (!j.contains("n_tokens") || !j["n_tokens"].is_number_unsigned()) {
        throw FormatError(FormatErrorKind::Malformed, 0, "params JSON: n_tokens must be a non-negative integer");
    }
    p.n_tokens = j["n_tokens"].get<std::uint32_t>();
    p.s_base = number("s_base");
    p.alpha = number("alpha");
    p.r_target = number("r_target");
    p.validate();
    return p;
}

// ---------------------------------------------------------------------------
// File helpers

inline Bytes read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorKind::Io, "cannot open " + path.string());
    return Bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

inline std::size_t write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorKind::Io, "cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) fail(ErrorKind::Io, "write failed for " + path.string());
    return bytes.size();
}

inline std::size_t write_text(const std::filesystem::path& path, std::string_view text) {
    return write_file(path, {reinterpret_cast<const std::uint8_t*>(text.data()), text.size()});
}

inline std::string read_text(const std::filesystem::path& path) {
    const Bytes b = read_file(path);
    return std::string(b.begin(), b.end());
}

inline std::size_t write_trace(const ActivationTrace& t, const std::filesystem::path& path) {
    return write_file(path, encode_trace(t));
}
inline ActivationTrace read_trace(const std::filesystem::path& path) { return decode_trace(read_file(path)); }

inline std::size_t write_bundle(const ModelBundle& b, const std::filesystem::path& path) {
    return write_file(path, encode_bundle(b));
}
inline ModelBundle read_bundle(const std::filesystem::path& path) { return decode_bundle(read_file(path)); }

inline std::size_t write_prototypes(const PrototypeSet& p, const std::filesystem::path& path) {
    return write_file(path, encode_prototypes(p));
}
inline PrototypeSet read_prototypes(const std::filesystem::path& path, std::uint32_t expected_dim = 0) {
    return decode_prototypes(read_file(path), expected_dim);
}

inline std::size_t write_params(const RiskParams& p, const std::filesystem::path& path) {
    return write_text(path, encode_params(p));
}
inline RiskParams read_params(const std::filesystem::path& path) { return decode_params(read_text(path)); }

/// All regular files in `dir` with the given extension, sorted by name.
inline std::vector<std::filesystem::path> list_files(const std::filesystem::path& dir, std::string_view extension) {
    if (!std::filesystem::is_directory(dir)) fail(ErrorKind::Io, dir.string() + " is not a directory");
    std::vector<std::filesystem::path> files;
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
        if (entry.is_regular_file() && entry.path().extension() == extension) files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    return files;
}

inline std::vector<ActivationTrace> read_trace_dir(const std::filesystem::path& dir) {
    std::vector<ActivationTrace> traces;
    for (const auto& f : list_files(dir, ".rast")) traces.push_back(read_trace(f));
    return traces;
}

}  // namespace ras::io
