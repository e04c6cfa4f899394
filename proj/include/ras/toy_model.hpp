#pragma once

// Seeded tiny decoder-only transformer over a [visual tokens][text tokens]
// layout. It has no trained behavior; it exists so the whole pipeline can be
// exercised end to end with real activations, attention maps and decoding.
//
// Architecture (pre-norm):
//   h0 = E[token] + P[position] + S[segment]
//   per layer: h += Wo * MHA(rms(h)),  h += W2 * gelu(W1 * rms(h))
//   logits = W_lm * h_L
// The residual stream after layer L is the "last-layer activation" x; the LM
// head is purely linear, so ModelBundle reproduces the logits exactly.
//
// Weights come from CounterRng(seed); tensor k uses stream k and entries are
// normal(stream, flat_index) * scale. See rng.hpp for the generator.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ras/error.hpp"
#include "ras/numerics.hpp"
#include "ras/rng.hpp"
#include "ras/types.hpp"

namespace ras::toy {

struct ToyModelConfig {
    std::uint32_t dim = 64;
    std::uint32_t layers = 4;
    std::uint32_t heads = 4;
    std::uint32_t vocab = 256;
    std::uint32_t max_sequence = 2048;
    std::uint64_t seed = 0;
    std::vector<std::uint32_t> refusal_token_ids{248, 249, 250, 251, 252, 253, 254, 255};

    void validate() const {
        require(dim > 0 && layers > 0 && heads > 0, ErrorKind::InvalidConfig, "toy config: d, L, H must be positive");
        require(dim % heads == 0, ErrorKind::InvalidConfig,
                "toy config: d=" + std::to_string(dim) + " is not divisible by H=" + std::to_string(heads));
        require(vocab >= 2, ErrorKind::InvalidConfig, "toy config: vocabulary too small");
        require(max_sequence >= 1, ErrorKind::InvalidConfig, "toy config: max_sequence must be >= 1");
        for (auto id : refusal_token_ids) {
            require(id < vocab, ErrorKind::InvalidConfig, "toy config: refusal id " + std::to_string(id) + " >= V");
        }
    }
};

enum class Segment : std::uint8_t { Visual = 0, Text = 1 };

/// Called with the hidden state at the position that emits response token n.
class DecodeHook {
public:
    virtual ~DecodeHook() = default;
    /// Number of leading response positions the hook applies to.
    virtual std::size_t positions() const = 0;
    /// Zero-based layer whose output is intercepted; nullopt means the last layer.
    virtual std::optional<std::size_t> layer() const { return std::nullopt; }
    /// For intermediate layers: whether the steered state is also written to the KV cache.
    virtual bool steer_cache() const { return true; }
    virtual std::size_t dim() const = 0;
    virtual Vector apply(std::size_t n, std::span<const double> x) const = 0;
    /// Intervention strength recorded in the result (r of the steering rule).
    virtual double strength() const = 0;
};

struct DecodeOptions {
    bool record_activations = true;
    bool record_logits = false;
};

struct GenerationResult {
    std::string query_id;
    std::vector<std::uint32_t> tokens;
    std::vector<bool> steered;
    std::vector<double> applied_r;
    std::vector<Vector> activations;  // unsteered last-layer x^n, n = 1..len
    std::vector<Vector> logits;       // logits used for emission (when recorded)
    double similarity = 0.0;
    double risk = 0.0;
    std::vector<double> token_us;
    double probe_us = 0.0;
    double decode_us = 0.0;

    /// Equality ignoring wall-clock timings.
    bool same_outputs(const GenerationResult& o) const {
        return query_id == o.query_id && tokens == o.tokens && steered == o.steered && applied_r == o.applied_r &&
               activations == o.activations && logits == o.logits && similarity == o.similarity && risk == o.risk;
    }
};

struct ForwardResult {
    std::uint32_t layers = 0;
    std::uint32_t heads = 0;
    std::size_t n_visual = 0;
    std::vector<std::uint32_t> tokens;
    std::vector<std::vector<Vector>> per_layer;  // [position][layer]
    std::vector<Matrix> attention;               // [layer * heads + head], row = query, col = key
    Vector final_activation;
    Vector logits;

    std::size_t length() const { return tokens.size(); }

    const Matrix& attention_matrix(std::size_t l, std::size_t h) const { return attention[l * heads + h]; }

    /// Text-to-visual attention. `text_positions` defaults to every text position.
    AttentionTensor attention_tensor(std::optional<std::vector<std::uint32_t>> text_positions = std::nullopt) const {
        AttentionTensor a;
        a.layers = layers;
        a.heads = heads;
        for (std::size_t j = 0; j < n_visual; ++j) a.visual_indices.push_back(static_cast<std::uint32_t>(j));
        if (text_positions) {
            for (auto t : *text_positions) {
                require(t >= n_visual && t < length(), ErrorKind::OutOfRange,
                        "attention tensor: position " + std::to_string(t) + " is not a text position");
            }
            a.text_indices = *text_positions;
        } else {
            for (std::size_t t = n_visual; t < length(); ++t) a.text_indices.push_back(static_cast<std::uint32_t>(t));
        }
        a.weights.assign(a.expected_size(), 0.0);
        for (std::size_t l = 0; l < layers; ++l)
            for (std::size_t h = 0; h < heads; ++h)
                for (std::size_t j = 0; j < a.visual_indices.size(); ++j)
                    for (std::size_t t = 0; t < a.text_indices.size(); ++t)
                        a.at(l, h, j, t) = attention_matrix(l, h)(a.text_indices[t], a.visual_indices[j]);
        return a;
    }

    ActivationTrace to_trace(std::string model_id, std::string query_id, TraceRole role, bool include_per_layer = true,
                             bool include_attention = false) const {
        ActivationTrace t;
        t.model_id = std::move(model_id);
        t.query_id = std::move(query_id);
        t.role = role;
        t.dim = static_cast<std::uint32_t>(final_activation.size());
        for (std::size_t p = 0; p < length(); ++p) {
            TokenRecord tok;
            tok.position = static_cast<std::uint32_t>(p + 1);
            tok.last_layer = per_layer[p].back();
            if (include_per_layer) tok.per_layer = per_layer[p];
            tok.token_id = tokens[p];
            t.tokens.push_back(std::move(tok));
        }
        if (include_attention) t.attention = attention_tensor();
        return t;
    }
};

/// Byte-level tokenizer: every UTF-8 byte is one token id.
inline std::vector<std::uint32_t> encode_text(std::string_view text) {
    std::vector<std::uint32_t> ids;
    ids.reserve(text.size());
    for (unsigned char c : text) ids.push_back(c);
    return ids;
}

/// Deterministic stand-in for a model-generated image summary: keyed by the
/// most frequent visual token (ties to the lowest id).
inline std::string caption_stub(std::span<const std::uint32_t> visual_tokens) {
    static constexpr std::string_view kCaptions[] = {
        "The image shows a small object on a table.",
        "The image shows a person holding a tool.",
        "The image shows a room with furniture.",
        "The image shows a diagram with labels.",
        "The image shows a container filled with liquid.",
        "The image shows an outdoor street scene.",
        "The image shows a screen displaying text.",
        "The image shows a pile of mechanical parts.",
    };
    if (visual_tokens.empty()) fail(ErrorKind::InvalidInput, "caption stub: no visual tokens");
    std::vector<std::uint32_t> sorted(visual_tokens.begin(), visual_tokens.end());
    std::sort(sorted.begin(), sorted.end());
    std::uint32_t best = sorted.front();
    std::size_t best_count = 0;
    for (std::size_t i = 0; i < sorted.size();) {
        std::size_t j = i;
        while (j < sorted.size() && sorted[j] == sorted[i]) ++j;
        if (j - i > best_count) {
            best_count = j - i;
            best = sorted[i];
        }
        i = j;
    }
    return std::string(kCaptions[best % std::size(kCaptions)]);
}

class ToyModel {
public:
    static ToyModel build(const ToyModelConfig& config) {
        config.validate();
        return ToyModel(config);
    }

    const ToyModelConfig& config() const { return config_; }
    std::string model_id() const { return "toy-" + std::to_string(config_.seed); }

    ModelBundle bundle() const {
        ModelBundle b;
        b.model_id = model_id();
        b.dim = config_.dim;
        b.vocab = config_.vocab;
        b.weights = lm_head_;
        b.refusal_token_ids = config_.refusal_token_ids;
        return b;
    }

    Vector logits(std::span<const double> x) const { return matvec(lm_head_, x); }

    ForwardResult forward(std::span<const std::uint32_t> visual, std::span<const std::uint32_t> text) const {
        const std::size_t length = visual.size() + text.size();
        check_prompt(visual, text, length);
        ForwardResult out;
        out.layers = config_.layers;
        out.heads = config_.heads;
        out.n_visual = visual.size();
        out.tokens.assign(visual.begin(), visual.end());
        out.tokens.insert(out.tokens.end(), text.begin(), text.end());
        out.attention.assign(static_cast<std::size_t>(config_.layers) * config_.heads, Matrix(length, length));
        out.per_layer.resize(length);

        State state(config_);
        for (std::size_t p = 0; p < length; ++p) {
            const Segment seg = p < visual.size() ? Segment::Visual : Segment::Text;
            step(state, out.tokens[p], seg, p, &out.per_layer[p], &out.attention, nullptr, 0);
        }
        if (length > 0) {
            out.final_activation = out.per_layer.back().back();
            out.logits = logits(out.final_activation);
        }
        return out;
    }

    GenerationResult greedy_decode(std::span<const std::uint32_t> visual, std::span<const std::uint32_t> text,
                                   std::size_t max_new, const DecodeHook* hook = nullptr,
                                   DecodeOptions options = {}) const {
        using Clock = std::chrono::steady_clock;
        require(max_new >= 1, ErrorKind::InvalidConfig, "greedy_decode: max_new must be >= 1");
        const std::size_t prompt = visual.size() + text.size();
        require(prompt >= 1, ErrorKind::InvalidInput, "greedy_decode: empty prompt");
        check_prompt(visual, text, prompt + max_new - 1);
        if (hook) {
            require(hook->dim() == config_.dim, ErrorKind::DimensionMismatch,
                    "greedy_decode: hook dimension " + std::to_string(hook->dim()) + " differs from model d=" +
                        std::to_string(config_.dim));
            if (hook->layer()) {
                require(*hook->layer() < config_.layers, ErrorKind::OutOfRange, "greedy_decode: hook layer out of range");
            }
        }
        const bool intermediate = hook && hook->layer() && *hook->layer() + 1 < config_.layers;

        GenerationResult result;
        const auto t0 = Clock::now();
        State state(config_);
        Vector h;
        for (std::size_t p = 0; p < prompt; ++p) {
            const Segment seg = p < visual.size() ? Segment::Visual : Segment::Text;
            const std::uint32_t tok = p < visual.size() ? visual[p] : text[p - visual.size()];
            // The final prompt position emits token 1 and may be steered at an intermediate layer.
            const DecodeHook* layer_hook = (p + 1 == prompt && intermediate) ? hook : nullptr;
            h = step(state, tok, seg, p, nullptr, nullptr, layer_hook, 1);
        }
        auto last = Clock::now();
        result.token_us.reserve(max_new);

        for (std::size_t n = 1; n <= max_new; ++n) {
            const bool active = hook && n <= hook->positions();
            Vector emitted_from;
            if (active && !intermediate) {
                emitted_from = hook->apply(n, h);
                check_same_size(emitted_from.size(), config_.dim, "steering hook output");
            }
            const Vector& x = (active && !intermediate) ? emitted_from : h;
            Vector z = logits(x);
            const auto token = static_cast<std::uint32_t>(std::max_element(z.begin(), z.end()) - z.begin());

            result.tokens.push_back(token);
            result.steered.push_back(active);
            result.applied_r.push_back(active ? hook->strength() : 0.0);
            if (options.record_activations) result.activations.push_back(h);
            if (options.record_logits) result.logits.push_back(std::move(z));

            if (n < max_new) {
                const DecodeHook* layer_hook = (intermediate && n + 1 <= hook->positions()) ? hook : nullptr;
                h = step(state, token, Segment::Text, prompt + n - 1, nullptr, nullptr, layer_hook, n + 1);
            }
            const auto now = Clock::now();
            result.token_us.push_back(std::chrono::duration<double, std::micro>(now - last).count());
            last = now;
        }
        result.decode_us = std::chrono::duration<double, std::micro>(Clock::now() - t0).count();
        return result;
    }

private:
    struct LayerWeights {
        Matrix wq, wk, wv, wo, w1, w2;
    };

    struct State {
        explicit State(const ToyModelConfig& c) : keys(c.layers), values(c.layers) {}
        std::vector<std::vector<Vector>> keys;    // [layer][position]
        std::vector<std::vector<Vector>> values;  // [layer][position]
    };

    explicit ToyModel(const ToyModelConfig& config) : config_(config) {
        const CounterRng rng(config.seed);
        const std::size_t d = config.dim;
        const std::size_t hidden = 4 * d;
        std::uint64_t stream = 0;
        auto fill = [&](std::size_t rows, std::size_t cols, double scale) {
            Matrix m(rows, cols);
            const std::uint64_t s = stream++;
            for (std::size_t i = 0; i < m.data.size(); ++i) m.data[i] = rng.normal(s, i) * scale;
            return m;
        };
        embed_ = fill(config.vocab, d, 1.0);
        position_ = fill(config.max_sequence, d, 0.5);
        segment_ = fill(2, d, 0.5);
        const double proj = 1.0 / std::sqrt(static_cast<double>(d));
        for (std::uint32_t l = 0; l < config.layers; ++l) {
            LayerWeights w;
            w.wq = fill(d, d, proj);
            w.wk = fill(d, d, proj);
            w.wv = fill(d, d, proj);
            w.wo = fill(d, d, proj);
            w.w1 = fill(hidden, d, proj);
            w.w2 = fill(d, hidden, 1.0 / std::sqrt(static_cast<double>(hidden)));
            layers_.push_back(std::move(w));
        }
        lm_head_ = fill(config.vocab, d, proj);
    }

    void check_prompt(std::span<const std::uint32_t> visual, std::span<const std::uint32_t> text,
                      std::size_t total) const {
        if (total > config_.max_sequence) {
            fail(ErrorKind::OutOfRange, "toy model: sequence length " + std::to_string(total) + " exceeds max_sequence " +
                                            std::to_string(config_.max_sequence));
        }
        for (auto span : {visual, text}) {
            for (auto id : span) {
                if (id >= config_.vocab) fail(ErrorKind::OutOfRange, "toy model: token id " + std::to_string(id) + " >= V");
            }
        }
    }

    static Vector rms_norm(std::span<const double> h) {
        const double ms = dot(h, h) / static_cast<double>(h.size());
        const double inv = 1.0 / std::sqrt(ms + 1e-6);
        Vector out(h.size());
        for (std::size_t i = 0; i < h.size(); ++i) out[i] = h[i] * inv;
        return out;
    }

    static double gelu(double x) {
        constexpr double k = 0.7978845608028654;  // sqrt(2/pi)
        return 0.5 * x * (1.0 + std::tanh(k * (x + 0.044715 * x * x * x)));
    }

    /// Runs one layer for position p. Appends this position's K/V to the cache
    /// unless `cache` is false.
    Vector layer_forward(const LayerWeights& w, std::size_t l, State& state, Vector h, std::size_t p,
                         std::vector<Matrix>* attention, bool cache) const {
        const std::size_t d = config_.dim;
        const std::size_t hd = d / config_.heads;
        const Vector x = rms_norm(h);
        const Vector q = matvec(w.wq, x);
        Vector k = matvec(w.wk, x);
        Vector v = matvec(w.wv, x);

        auto& keys = state.keys[l];
        auto& values = state.values[l];
        const std::size_t cached = keys.size();
        // Keys visible from position p are the cached prefix plus p itself.
        auto key_at = [&](std::size_t j) -> const Vector& { return j < cached ? keys[j] : k; };
        auto value_at = [&](std::size_t j) -> const Vector& { return j < cached ? values[j] : v; };
        const std::size_t visible = std::min(cached, p) + 1;

        Vector mixed(d, 0.0);
        const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
        Vector scores(visible);
        for (std::size_t head = 0; head < config_.heads; ++head) {
            const std::span<const double> qh(q.data() + head * hd, hd);
            for (std::size_t j = 0; j < visible; ++j) {
                const std::span<const double> kh(key_at(j).data() + head * hd, hd);
                scores[j] = dot(qh, kh) * scale;
            }
            const Vector probs = softmax(scores);
            if (attention) {
                Matrix& m = (*attention)[l * config_.heads + head];
                for (std::size_t j = 0; j < visible; ++j) m(p, j) = probs[j];
            }
            for (std::size_t c = 0; c < hd; ++c) {
                mixed[head * hd + c] =
                    pairwise_reduce(0, visible, [&](std::size_t j) { return probs[j] * value_at(j)[head * hd + c]; });
            }
        }
        if (cache) {
            keys.push_back(std::move(k));
            values.push_back(std::move(v));
        }
        const Vector attn_out = matvec(w.wo, mixed);
        for (std::size_t i = 0; i < d; ++i) h[i] += attn_out[i];

        Vector up = matvec(w.w1, rms_norm(h));
        for (double& u : up) u = gelu(u);
        const Vector down = matvec(w.w2, up);
        for (std::size_t i = 0; i < d; ++i) h[i] += down[i];
        return h;
    }

    /// Processes one token at position p and returns the last-layer state.
    /// An intermediate-layer hook (applied as response position n) replaces
    /// the residual after its layer before the remaining layers run.
    Vector step(State& state, std::uint32_t token, Segment seg, std::size_t p, std::vector<Vector>* per_layer,
                std::vector<Matrix>* attention, const DecodeHook* layer_hook, std::size_t n) const {
        const std::size_t d = config_.dim;
        Vector h(d);
        const auto e = embed_.row(token);
        const auto pe = position_.row(p);
        const auto se = segment_.row(static_cast<std::size_t>(seg));
        for (std::size_t i = 0; i < d; ++i) h[i] = e[i] + pe[i] + se[i];
        if (per_layer) per_layer->clear();

        const std::size_t hook_layer = layer_hook ? *layer_hook->layer() : config_.layers;
        for (std::size_t l = 0; l < config_.layers; ++l) {
            h = layer_forward(layers_[l], l, state, std::move(h), p, attention, true);
            if (per_layer) per_layer->push_back(h);
            if (l == hook_layer) {
                Vector steered = layer_hook->apply(n, h);
                check_same_size(steered.size(), d, "steering hook output");
                if (layer_hook->steer_cache()) {
                    h = std::move(steered);
                } else {
                    // Steered state reaches the output only; the cache keeps unsteered K/V.
                    // The steered pass runs first so it attends to its own K/V at p.
                    Vector out = std::move(steered);
                    Vector plain = h;
                    for (std::size_t m = l + 1; m < config_.layers; ++m) {
                        out = layer_forward(layers_[m], m, state, std::move(out), p, nullptr, false);
                        plain = layer_forward(layers_[m], m, state, std::move(plain), p, nullptr, true);
                    }
                    return out;
                }
            }
        }
        return h;
    }

    ToyModelConfig config_;
    Matrix embed_;
    Matrix position_;
    Matrix segment_;
    std::vector<LayerWeights> layers_;
    Matrix lm_head_;
};

}  // namespace ras::toy
