#include <gtest/gtest.h>

#include <cstring>

#include "generators.hpp"
#include "ras/trace_io.hpp"
#include "support.hpp"

using namespace ras;
using namespace ras::io;
using ras::testing::Gen;

namespace {

FormatErrorKind format_error_of(auto&& fn, std::size_t* offset = nullptr) {
    try {
        fn();
    } catch (const FormatError& e) {
        if (offset) *offset = e.offset();
        return e.format_kind();
    }
    ADD_FAILURE() << "expected a format error";
    return FormatErrorKind::Malformed;
}

void put_u32(Bytes& b, std::size_t at, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) b[at + i] = static_cast<std::uint8_t>(v >> (8 * i));
}

ActivationTrace per_layer_trace() {
    Gen g(5);
    ActivationTrace t;
    t.model_id = "toy-0";
    t.query_id = "q-17";
    t.role = TraceRole::Reformulated;
    t.dim = 8;
    for (std::uint32_t n = 1; n <= 3; ++n) {
        TokenRecord tok;
        tok.position = n;
        std::vector<Vector> layers{ras::testing::f32_vector(g, 8), ras::testing::f32_vector(g, 8)};
        tok.last_layer = layers.back();
        tok.per_layer = layers;
        tok.token_id = 100 + n;
        t.tokens.push_back(tok);
    }
    return t;
}

}  // namespace

// --- traces ----------------------------------------------------------------

TEST(TraceFormat, EmptyTokenTraceRoundTrips) {
    ActivationTrace t;
    t.model_id = "m";
    t.query_id = "empty";
    t.dim = 4;
    const auto back = decode_trace(encode_trace(t));
    EXPECT_EQ(back, t);
    EXPECT_TRUE(back.tokens.empty());
}

TEST(TraceFormat, PerLayerTraceRoundTripsBitwise) {
    const auto t = per_layer_trace();
    const auto bytes = encode_trace(t);
    const auto back = decode_trace(bytes);
    EXPECT_EQ(back, t);
    EXPECT_EQ(encode_trace(back), bytes);
}

TEST(TraceFormat, HeaderLayoutIsLittleEndian) {
    const auto bytes = encode_trace(per_layer_trace());
    EXPECT_EQ(std::memcmp(bytes.data(), "RAST", 4), 0);
    EXPECT_EQ(bytes[4], 1);  // version 1, little endian
    EXPECT_EQ(bytes[5] | bytes[6] | bytes[7], 0);
    EXPECT_EQ(std::memcmp(bytes.data() + 8, "TRCE", 4), 0);
    EXPECT_EQ(bytes[16], 8);  // d
    EXPECT_EQ(bytes[20], 3);  // token count
    EXPECT_EQ(bytes[24], 1);  // role reformulated
}

TEST(TraceFormat, FileHelpersRoundTrip) {
    const auto dir = ras::testing::temp_dir("trace_files");
    const auto t = per_layer_trace();
    const auto n = write_trace(t, dir / "a.rast");
    EXPECT_EQ(n, encode_trace(t).size());
    EXPECT_EQ(read_trace(dir / "a.rast"), t);
    write_trace(t, dir / "b.rast");
    write_text(dir / "ignored.txt", "x");
    EXPECT_EQ(read_trace_dir(dir).size(), 2u);
}

TEST(TraceFormat, MagicMismatchAtOffsetZero) {
    auto bytes = encode_trace(per_layer_trace());
    std::memcpy(bytes.data(), "XXXX", 4);
    std::size_t offset = 99;
    EXPECT_EQ(format_error_of([&] { decode_trace(bytes); }, &offset), FormatErrorKind::MagicMismatch);
    EXPECT_EQ(offset, 0u);
    // A prototype file is not a trace.
    Gen g(1);
    const auto proto_bytes = encode_prototypes(ras::testing::random_prototypes(g));
    EXPECT_EQ(format_error_of([&] { decode_trace(proto_bytes); }), FormatErrorKind::MagicMismatch);
}

TEST(TraceFormat, UnsupportedVersionAtOffsetFour) {
    auto bytes = encode_trace(per_layer_trace());
    put_u32(bytes, 4, 2);
    std::size_t offset = 0;
    EXPECT_EQ(format_error_of([&] { decode_trace(bytes); }, &offset), FormatErrorKind::UnsupportedVersion);
    EXPECT_EQ(offset, 4u);
}

TEST(TraceFormat, TruncationAnywhereIsRejected) {
    const auto bytes = encode_trace(per_layer_trace());
    for (std::size_t len = 0; len < bytes.size(); ++len) {
        const Bytes cut(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(len));
        try {
            decode_trace(cut);
            FAIL() << "prefix of length " << len << " accepted";
        } catch (const FormatError& e) {
            EXPECT_LE(e.offset(), bytes.size());
        }
    }
}

TEST(TraceFormat, OversizedTokenCountRejectedBeforeAllocation) {
    auto bytes = encode_trace(per_layer_trace());
    put_u32(bytes, 20, 0xFFFFFFFFu);
    std::size_t offset = 0;
    EXPECT_EQ(format_error_of([&] { decode_trace(bytes); }, &offset), FormatErrorKind::Truncated);
    EXPECT_GT(offset, 20u);
}

TEST(TraceFormat, InconsistentContentsAreMalformed) {
    const auto t = per_layer_trace();
    {
        auto bytes = encode_trace(t);
        bytes[24] = 7;  // role
        EXPECT_EQ(format_error_of([&] { decode_trace(bytes); }), FormatErrorKind::Malformed);
    }
    {
        // Token position 1 lives right after the two strings.
        auto bytes = encode_trace(t);
        const std::size_t first_pos = 25 + 4 + t.model_id.size() + 4 + t.query_id.size();
        put_u32(bytes, first_pos, 2);
        EXPECT_EQ(format_error_of([&] { decode_trace(bytes); }), FormatErrorKind::Malformed);
    }
    {
        auto bytes = encode_trace(t);
        put_u32(bytes, 16, 0);  // d = 0
        EXPECT_EQ(format_error_of([&] { decode_trace(bytes); }), FormatErrorKind::DimensionMismatch);
    }
}

TEST(TraceFormat, UnknownChunksAreSkipped) {
    const auto t = per_layer_trace();
    auto bytes = encode_trace(t);
    const Bytes extra{'F', 'U', 'T', 'R', 3, 0, 0, 0, 'a', 'b', 'c'};
    Bytes with_extra(bytes.begin(), bytes.begin() + 8);
    auto append = [&](auto first, auto last) {
        for (auto it = first; it != last; ++it) with_extra.push_back(*it);
    };
    append(extra.begin(), extra.end());
    append(bytes.begin() + 8, bytes.end());
    append(extra.begin(), extra.end());
    EXPECT_EQ(decode_trace(with_extra), t);
}

TEST(TraceFormat, MissingOrDuplicateBodyChunk) {
    Bytes header{'R', 'A', 'S', 'T', 1, 0, 0, 0};
    EXPECT_EQ(format_error_of([&] { decode_trace(header); }), FormatErrorKind::Malformed);
    const auto bytes = encode_trace(per_layer_trace());
    Bytes doubled = bytes;
    doubled.insert(doubled.end(), bytes.begin() + 8, bytes.end());
    EXPECT_EQ(format_error_of([&] { decode_trace(doubled); }), FormatErrorKind::Malformed);
}

TEST(TraceFormat, AttentionChunkRoundTripsAndIsValidated) {
    Gen g(11);
    auto t = per_layer_trace();
    t.attention = ras::testing::random_attention(g, 2, 3, 4, 5);
    const auto bytes = encode_trace(t);
    EXPECT_EQ(decode_trace(bytes), t);
    EXPECT_EQ(encode_trace(decode_trace(bytes)), bytes);

    // Shrink the declared |Vis| so the weight payload no longer matches.
    const std::size_t attn_payload = bytes.size() - (16 + 4 * (4 + 5) + 4 * 2 * 3 * 4 * 5);
    auto bad = bytes;
    put_u32(bad, attn_payload + 12, 4);
    EXPECT_THROW(decode_trace(bad), FormatError);

    auto invalid = t;
    invalid.attention->weights[0] = 1.5;
    EXPECT_THROW(encode_trace(invalid), Error);
}

TEST(TraceFormat, WriterRejectsInvalidTraces) {
    auto t = per_layer_trace();
    t.tokens[1].position = 5;
    EXPECT_THROW(encode_trace(t), Error);
    t = per_layer_trace();
    t.tokens[0].per_layer->back()[0] += 1.0;
    EXPECT_THROW(encode_trace(t), Error);
    t = per_layer_trace();
    t.tokens[2].last_layer.pop_back();
    EXPECT_THROW(encode_trace(t), Error);
}

TEST(TraceFormat, RandomizedRoundTrips) {
    Gen g(21);
    for (int i = 0; i < 1000; ++i) {
        const auto t = ras::testing::random_trace(g);
        const auto bytes = encode_trace(t);
        const auto back = decode_trace(bytes);
        ASSERT_EQ(back, t) << "case " << i;
        ASSERT_EQ(encode_trace(back), bytes) << "case " << i;
    }
}

TEST(TraceFormat, RandomCorruptionNeverCrashes) {
    Gen g(22);
    for (int i = 0; i < 2000; ++i) {
        auto bytes = encode_trace(ras::testing::random_trace(g));
        const std::size_t flips = 1 + g.index(4);
        for (std::size_t k = 0; k < flips; ++k) bytes[g.index(bytes.size())] ^= static_cast<std::uint8_t>(1 + g.index(255));
        try {
            // Flipped float bits may decode to NaN, so compare encodings.
            const auto again = encode_trace(decode_trace(bytes));
            EXPECT_EQ(encode_trace(decode_trace(again)), again);
        } catch (const Error&) {
            // rejected with a typed error: fine
        }
    }
}

// --- bundles ---------------------------------------------------------------

TEST(BundleFormat, LargeBundleWithoutBias) {
    Gen g(31);
    ModelBundle b;
    b.model_id = "toy";
    b.dim = 64;
    b.vocab = 256;
    b.weights = Matrix(256, 64);
    b.weights.data = ras::testing::f32_vector(g, 256 * 64);
    for (std::uint32_t i = 248; i < 256; ++i) b.refusal_token_ids.push_back(i);
    const auto back = decode_bundle(encode_bundle(b));
    EXPECT_EQ(back, b);
    EXPECT_FALSE(back.bias.has_value());
}

TEST(BundleFormat, RandomizedRoundTripsAndByteIdentity) {
    Gen g(32);
    for (int i = 0; i < 1000; ++i) {
        const auto b = ras::testing::random_bundle(g);
        const auto bytes = encode_bundle(b);
        ASSERT_EQ(decode_bundle(bytes), b);
        ASSERT_EQ(encode_bundle(decode_bundle(bytes)), bytes);
    }
}

TEST(BundleFormat, RejectsBadHeadersAndIds) {
    Gen g(33);
    auto b = ras::testing::random_bundle(g);
    b.refusal_token_ids = {0};
    auto bytes = encode_bundle(b);
    std::size_t offset = 1;
    auto bad_magic = bytes;
    bad_magic[0] = 'Z';
    EXPECT_EQ(format_error_of([&] { decode_bundle(bad_magic); }, &offset), FormatErrorKind::MagicMismatch);
    EXPECT_EQ(offset, 0u);
    auto bad_version = bytes;
    put_u32(bad_version, 4, 0);
    EXPECT_EQ(format_error_of([&] { decode_bundle(bad_version); }), FormatErrorKind::UnsupportedVersion);
    auto huge = bytes;
    put_u32(huge, 16, 0x7FFFFFFF);  // d
    EXPECT_EQ(format_error_of([&] { decode_bundle(huge); }), FormatErrorKind::Truncated);

    b.refusal_token_ids = {b.vocab};
    EXPECT_THROW(encode_bundle(b), Error);
}

// --- prototypes --------------------------------------------------------------

TEST(PrototypeFormat, RandomizedRoundTrips) {
    Gen g(41);
    for (int i = 0; i < 1000; ++i) {
        const auto p = ras::testing::random_prototypes(g);
        const auto bytes = encode_prototypes(p);
        ASSERT_EQ(decode_prototypes(bytes), p);
        ASSERT_EQ(encode_prototypes(decode_prototypes(bytes)), bytes);
    }
}

TEST(PrototypeFormat, PipelineDimensionMismatch) {
    Gen g(42);
    auto p = ras::testing::random_prototypes(g);
    p.dim = 16;
    for (auto& v : p.mu) v = ras::testing::f32_vector(g, 16);
    const auto bytes = encode_prototypes(p);
    EXPECT_EQ(decode_prototypes(bytes, 16), p);
    std::size_t offset = 0;
    EXPECT_EQ(format_error_of([&] { decode_prototypes(bytes, 32); }, &offset), FormatErrorKind::DimensionMismatch);
    EXPECT_EQ(offset, 16u);
}

TEST(PrototypeFormat, ZeroPositionsOrSourcesAreMalformed) {
    Gen g(43);
    const auto p = ras::testing::random_prototypes(g);
    auto bytes = encode_prototypes(p);
    put_u32(bytes, 20, 0);  // N
    EXPECT_EQ(format_error_of([&] { decode_prototypes(bytes); }), FormatErrorKind::Malformed);
}

// --- params --------------------------------------------------------------------

TEST(ParamsFormat, PublishedParametersRoundTripExactly) {
    const RiskParams p{0.3, 3, 0.711, 15.901, 0.99};
    const auto text = encode_params(p);
    EXPECT_EQ(decode_params(text), p);
    EXPECT_NE(text.find("\"gamma\""), std::string::npos);
    EXPECT_NE(text.find("\"n_tokens\""), std::string::npos);
    EXPECT_NE(text.find("\"s_base\""), std::string::npos);
    EXPECT_NE(text.find("\"alpha\""), std::string::npos);
    EXPECT_NE(text.find("\"r_target\""), std::string::npos);
}

TEST(ParamsFormat, RandomizedRoundTrips) {
    Gen g(51);
    for (int i = 0; i < 1000; ++i) {
        const auto p = ras::testing::random_params(g);
        const auto text = encode_params(p);
        ASSERT_EQ(decode_params(text), p);
        ASSERT_EQ(encode_params(decode_params(text)), text);
    }
}

TEST(ParamsFormat, RejectsMalformedJson) {
    EXPECT_EQ(format_error_of([] { decode_params("{"); }), FormatErrorKind::Malformed);
    EXPECT_EQ(format_error_of([] { decode_params("[1,2]"); }), FormatErrorKind::Malformed);
    EXPECT_EQ(format_error_of([] { decode_params(R"({"gamma":0.3,"n_tokens":3,"s_base":0.5,"alpha":"x","r_target":0.99})"); }),
              FormatErrorKind::Malformed);
    EXPECT_EQ(format_error_of([] { decode_params(R"({"gamma":0.3,"n_tokens":-3,"s_base":0.5,"alpha":1,"r_target":0.99})"); }),
              FormatErrorKind::Malformed);
    try {
        decode_params(R"({"gamma":1.3,"n_tokens":3,"s_base":0.5,"alpha":1,"r_target":0.99})");
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::InvalidConfig);
    }
}

TEST(FileHelpers, MissingFileIsIoError) {
    try {
        read_trace("/nonexistent/path.rast");
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::Io);
    }
    EXPECT_THROW(list_files("/nonexistent/dir", ".rast"), Error);
}
