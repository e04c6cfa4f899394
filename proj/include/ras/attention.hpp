#pragma once

// Cross-modal attention scoring: how strongly text queries attend to each
// visual token, per head, and averaged over the strongest heads.

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "ras/error.hpp"
#include "ras/trace_io.hpp"
#include "ras/types.hpp"

namespace ras::attention {

struct HeadScore {
    std::uint32_t layer = 0;
    std::uint32_t head = 0;
    double strength = 0.0;

    bool operator==(const HeadScore&) const = default;
};

struct EffectiveAttentionMap {
    std::vector<double> weights;  // a*_j per visual token, in visual_indices order
    std::vector<HeadScore> heads;
};

inline constexpr std::size_t kDefaultTopHeads = 3;

/// Indices (into att.text_indices) that make up the query text set T.
/// Empty optional selects every stored text token.
using TextSet = std::optional<std::vector<std::size_t>>;

namespace detail {

inline std::vector<std::size_t> resolve_text_set(const AttentionTensor& att, const TextSet& text) {
    std::vector<std::size_t> idx;
    if (text) {
        idx = *text;
    } else {
        for (std::size_t t = 0; t < att.text_indices.size(); ++t) idx.push_back(t);
    }
    if (idx.empty()) fail(ErrorKind::InvalidInput, "attention: text set T is empty");
    for (auto t : idx) {
        if (t >= att.text_indices.size()) fail(ErrorKind::OutOfRange, "attention: text index out of range");
    }
    return idx;
}

inline void require_visual(const AttentionTensor& att) {
    if (att.visual_indices.empty()) fail(ErrorKind::InvalidInput, "attention: tensor has no visual tokens");
    if (att.layers == 0 || att.heads == 0) fail(ErrorKind::InvalidInput, "attention: tensor has no heads");
}

inline double max_over_text(const AttentionTensor& att, std::size_t l, std::size_t h, std::size_t j,
                            const std::vector<std::size_t>& text) {
    double best = 0.0;
    for (auto t : text) best = std::max(best, att.at(l, h, j, t));
    return best;
}

}  // namespace detail

/// a^{(l,h)}_j = max over t in T of the attention from text token t to visual token j.
inline double head_token_attention(const AttentionTensor& att, std::size_t l, std::size_t h, std::size_t j,
                                   const TextSet& text = std::nullopt) {
    detail::require_visual(att);
    if (l >= att.layers || h >= att.heads || j >= att.visual_indices.size()) {
        fail(ErrorKind::OutOfRange, "head_token_attention: (layer, head, visual) index out of range");
    }
    return detail::max_over_text(att, l, h, j, detail::resolve_text_set(att, text));
}

/// Heads ordered by strength = max_j a^{(l,h)}_j (descending), ties by (layer, head).
inline std::vector<HeadScore> rank_heads(const AttentionTensor& att, const TextSet& text, std::size_t n) {
    detail::require_visual(att);
    const std::size_t total = static_cast<std::size_t>(att.layers) * att.heads;
    if (n == 0 || n > total) {
        fail(ErrorKind::OutOfRange,
             "rank_heads: n=" + std::to_string(n) + " must lie in [1, L*H=" + std::to_string(total) + "]");
    }
    const auto idx = detail::resolve_text_set(att, text);
    std::vector<HeadScore> scores;
    scores.reserve(total);
    for (std::uint32_t l = 0; l < att.layers; ++l) {
        for (std::uint32_t h = 0; h < att.heads; ++h) {
            double strength = 0.0;
            for (std::size_t j = 0; j < att.visual_indices.size(); ++j) {
                strength = std::max(strength, detail::max_over_text(att, l, h, j, idx));
            }
            scores.push_back({l, h, strength});
        }
    }
    std::stable_sort(scores.begin(), scores.end(), [](const HeadScore& a, const HeadScore& b) {
        if (a.strength != b.strength) return a.strength > b.strength;
        return a.layer != b.layer ? a.layer < b.layer : a.head < b.head;
    });
    scores.resize(n);
    return scores;
}

/// a*_j: mean of a^{(l,h)}_j over the top-n heads.
inline EffectiveAttentionMap effective_attention(const AttentionTensor& att, const TextSet& text = std::nullopt,
                                                 std::size_t n = kDefaultTopHeads) {
    EffectiveAttentionMap map;
    map.heads = rank_heads(att, text, n);
    const auto idx = detail::resolve_text_set(att, text);
    map.weights.resize(att.visual_indices.size());
    for (std::size_t j = 0; j < att.visual_indices.size(); ++j) {
        double acc = 0.0;
        for (const auto& hs : map.heads) acc += detail::max_over_text(att, hs.layer, hs.head, j, idx);
        map.weights[j] = acc / static_cast<double>(map.heads.size());
    }
    return map;
}

struct Layout {
    std::size_t rows = 0;
    std::size_t cols = 0;
};

/// Parses "RxC".
inline Layout parse_layout(const std::string& text) {
    const auto x = text.find_first_of("xX");
    Layout layout;
    auto parse = [&](std::string_view s, std::size_t& out) {
        auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
        return ec == std::errc() && ptr == s.data() + s.size() && out > 0;
    };
    if (x == std::string::npos || !parse(std::string_view(text).substr(0, x), layout.rows) ||
        !parse(std::string_view(text).substr(x + 1), layout.cols)) {
        fail(ErrorKind::Usage, "layout must look like RxC, got '" + text + "'");
    }
    return layout;
}

/// Shortest decimal that round-trips the value at binary32 precision.
inline std::string format_f32(double v) {
    char buf[32];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), static_cast<float>(v));
    (void)ec;
    return std::string(buf, ptr);
}

/// Row-major CSV, one grid row per line, no trailing newline.
inline std::string heatmap_csv(const EffectiveAttentionMap& map, Layout layout) {
    if (layout.rows * layout.cols != map.weights.size()) {
        fail(ErrorKind::InvalidInput, "heatmap: layout " + std::to_string(layout.rows) + "x" +
                                          std::to_string(layout.cols) + " does not cover " +
                                          std::to_string(map.weights.size()) + " visual tokens");
    }
    std::string out;
    for (std::size_t r = 0; r < layout.rows; ++r) {
        if (r) out += '\n';
        for (std::size_t c = 0; c < layout.cols; ++c) {
            if (c) out += ',';
            out += format_f32(map.weights[r * layout.cols + c]);
        }
    }
    return out;
}

/// Cells are binary32 values, widened on load like the binary formats.
inline std::vector<double> parse_heatmap_csv(const std::string& csv) {
    std::vector<double> values;
    std::string cell;
    std::istringstream in(csv);
    std::string line;
    while (std::getline(in, line)) {
        std::istringstream row(line);
        while (std::getline(row, cell, ',')) {
            float v = 0.0f;
            auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
            if (ec != std::errc() || ptr != cell.data() + cell.size()) {
                fail(ErrorKind::Format, "heatmap csv: bad cell '" + cell + "'");
            }
            values.push_back(static_cast<double>(v));
        }
    }
    return values;
}

/// SVG grid; linear grayscale from min (white) to max (black). A constant map
/// renders every cell white.
inline std::string heatmap_svg(const EffectiveAttentionMap& map, Layout layout, int cell_px = 20) {
    if (layout.rows * layout.cols != map.weights.size()) {
        fail(ErrorKind::InvalidInput, "heatmap: layout does not match visual token count");
    }
    const auto [lo_it, hi_it] = std::minmax_element(map.weights.begin(), map.weights.end());
    const double lo = map.weights.empty() ? 0.0 : *lo_it;
    const double hi = map.weights.empty() ? 0.0 : *hi_it;
    std::ostringstream svg;
    svg << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
        << "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"" << layout.cols * cell_px
        << "\" height=\"" << layout.rows * cell_px << "\">\n";
    for (std::size_t r = 0; r < layout.rows; ++r) {
        for (std::size_t c = 0; c < layout.cols; ++c) {
            const double v = map.weights[r * layout.cols + c];
            const double t = hi > lo ? (v - lo) / (hi - lo) : 0.0;
            const int gray = static_cast<int>(std::lround(255.0 * (1.0 - t)));
            svg << "  <rect x=\"" << c * cell_px << "\" y=\"" << r * cell_px << "\" width=\"" << cell_px
                << "\" height=\"" << cell_px << "\" fill=\"rgb(" << gray << "," << gray << "," << gray << ")\"/>\n";
        }
    }
    svg << "</svg>\n";
    return svg.str();
}

/// Writes <prefix>.csv and <prefix>.svg.
inline void export_heatmap(const EffectiveAttentionMap& map, Layout layout, const std::filesystem::path& prefix) {
    const std::string csv = heatmap_csv(map, layout);
    const std::string svg = heatmap_svg(map, layout);
    io::write_text(std::filesystem::path(prefix.string() + ".csv"), csv);
    io::write_text(std::filesystem::path(prefix.string() + ".svg"), svg);
}

}  // namespace ras::attention
