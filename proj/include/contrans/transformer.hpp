#pragma once

// GPT-NeoX decoder inference: rotary attention (optionally partial), exact
// GELU MLP, sequential or parallel residual branches, residual-stream
// steering and last-token state capture.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "contrans/error.hpp"
#include "contrans/model_config.hpp"
#include "contrans/model_weights.hpp"
#include "contrans/steering.hpp"
#include "contrans/tokenizer.hpp"

namespace contrans {

struct HiddenStateRecord {
    std::size_t layer = 0;  // 1-based
    std::size_t position = 0;
    Vector vector;
};

/// What a forward pass should keep besides logits.
struct CaptureSpec {
    std::vector<std::size_t> layers;  // 1-based; last-token states
    bool all_layers = false;
    bool full_states = false;  // every position of every layer
    bool all_logits = true;    // false: only the last position's logits

    static CaptureSpec none() { return {}; }
    static CaptureSpec last_token_all_layers() {
        CaptureSpec c;
        c.all_layers = true;
        c.all_logits = false;
        return c;
    }
    static CaptureSpec last_logits() {
        CaptureSpec c;
        c.all_logits = false;
        return c;
    }

    bool wants(std::size_t layer) const {
        return all_layers || std::find(layers.begin(), layers.end(), layer) != layers.end();
    }
};

struct ForwardResult {
    RowMatrix logits;  // [t, |V|], or [1, |V|] when only the last row was requested
    std::vector<HiddenStateRecord> captured;
    std::vector<RowMatrix> layer_states;  // [t, d] per layer when full_states

    Vector last_logits() const { return logits.row(logits.rows() - 1).transpose(); }

    const Vector& state(std::size_t layer) const {
        for (const auto& r : captured)
            if (r.layer == layer) return r.vector;
        throw ValidationError("layer " + std::to_string(layer) + " was not captured");
    }
};

struct DecodeConfig {
    bool greedy = true;
    float temperature = 1.0f;
    std::size_t max_new_tokens = 16;
    std::uint64_t seed = 0;
    std::optional<TokenId> stop_token;
};

/// log-softmax of one logits row, accumulated in double.
inline std::vector<double> log_softmax(const Eigen::Ref<const Vector>& row) {
    const double m = static_cast<double>(row.maxCoeff());
    double sum = 0.0;
    for (Eigen::Index i = 0; i < row.size(); ++i) sum += std::exp(static_cast<double>(row[i]) - m);
    const double lse = m + std::log(sum);
    std::vector<double> out(static_cast<std::size_t>(row.size()));
    for (Eigen::Index i = 0; i < row.size(); ++i) out[static_cast<std::size_t>(i)] = static_cast<double>(row[i]) - lse;
    return out;
}

namespace detail {

inline TokenId pick_next(const Vector& logits, const DecodeConfig& cfg, std::mt19937_64& rng) {
    Eigen::Index best = 0;
    if (cfg.greedy || cfg.temperature <= 0.0f) {
        logits.maxCoeff(&best);  // first maximum on ties
        return static_cast<TokenId>(best);
    }
    const Vector scaled = logits / cfg.temperature;
    const auto lp = log_softmax(scaled);
    const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
    double acc = 0.0;
    for (std::size_t i = 0; i < lp.size(); ++i) {
        acc += std::exp(lp[i]);
        if (u < acc) return static_cast<TokenId>(i);
    }
    return static_cast<TokenId>(lp.size() - 1);
}

}  // namespace detail

/// Anything that maps tokens to next-token logits and exposes residual
/// states. The evaluation harness works against this interface so tests can
/// substitute analytic stub models.
class LanguageModel {
public:
    virtual ~LanguageModel() = default;

    virtual const ModelConfig& config() const = 0;
    virtual const Tokenizer& tokenizer() const = 0;
    virtual const std::string& id() const = 0;

    virtual ForwardResult forward(const TokenSequence& tokens, const SteeringPlan* steering,
                                  const CaptureSpec& capture) const = 0;

    /// Final layernorm, unembedding: the logits a residual state would produce.
    virtual Vector project_to_logits(const Vector& state) const = 0;

    /// Autoregressive continuation (new tokens only). The default recomputes
    /// the full prefix each step.
    virtual TokenSequence generate(const TokenSequence& prompt, const DecodeConfig& cfg,
                                   const SteeringPlan* steering) const {
        check_generation(prompt, cfg);
        std::mt19937_64 rng(cfg.seed);
        TokenSequence seq = prompt;
        TokenSequence out;
        for (std::size_t step = 0; step < cfg.max_new_tokens; ++step) {
            const auto r = forward(seq, steering, CaptureSpec::last_logits());
            const TokenId next = detail::pick_next(r.last_logits(), cfg, rng);
            out.push_back(next);
            if (cfg.stop_token && next == *cfg.stop_token) break;
            seq.push_back(next);
        }
        return out;
    }

    TokenSequence encode(std::string_view text) const { return tokenizer().encode(text); }

protected:
    void check_tokens(const TokenSequence& tokens) const {
        if (tokens.empty()) throw ValidationError("forward pass needs at least one token");
        if (tokens.size() > config().max_seq_len) throw ContextOverflowError(tokens.size(), config().max_seq_len);
        for (TokenId t : tokens)
            if (t < 0 || static_cast<std::size_t>(t) >= config().vocab_size)
                throw ValidationError("token id " + std::to_string(t) + " outside vocabulary of size " +
                                      std::to_string(config().vocab_size));
    }

    void check_generation(const TokenSequence& prompt, const DecodeConfig& cfg) const {
        if (prompt.empty()) throw ValidationError("generation needs a non-empty prompt");
        if (cfg.max_new_tokens < 1) throw ValidationError("max_new_tokens must be at least 1");
        if (prompt.size() + cfg.max_new_tokens > config().max_seq_len)
            throw ContextOverflowError(prompt.size() + cfg.max_new_tokens, config().max_seq_len);
        check_tokens(prompt);
    }
};

/// Per-layer rotated keys and values of every processed position.
struct KVCache {
    std::vector<RowMatrix> keys;    // [capacity, d], head h in columns [h*hd, (h+1)*hd)
    std::vector<RowMatrix> values;  // same layout
    std::size_t length = 0;

    KVCache(std::size_t n_layers, std::size_t d, std::size_t capacity)
        : keys(n_layers, RowMatrix(static_cast<Eigen::Index>(capacity), static_cast<Eigen::Index>(d))),
          values(n_layers, RowMatrix(static_cast<Eigen::Index>(capacity), static_cast<Eigen::Index>(d))) {}

    std::size_t capacity() const { return keys.empty() ? 0 : static_cast<std::size_t>(keys[0].rows()); }
};

class Transformer final : public LanguageModel {
public:
    Transformer(ModelConfig config, std::shared_ptr<const ModelWeights> weights,
                std::shared_ptr<const Tokenizer> tokenizer, std::string id)
        : config_(std::move(config)), weights_(std::move(weights)), tokenizer_(std::move(tokenizer)), id_(std::move(id)) {
        config_.validate();
        if (!weights_) throw ValidationError("model weights are null");
        if (weights_->layers.size() != config_.n_layers)
            throw CheckpointError(CheckpointError::Kind::shape_mismatch, "layer count disagrees with config");
        const std::size_t rot = config_.rotary_dims();
        inv_freq_.resize(rot / 2);
        for (std::size_t i = 0; i < rot / 2; ++i)
            inv_freq_[i] = static_cast<float>(
                1.0 / std::pow(config_.rotary_base, static_cast<double>(static_cast<float>(2 * i) / static_cast<float>(rot))));
    }

    const ModelConfig& config() const override { return config_; }
    const Tokenizer& tokenizer() const override {
        if (!tokenizer_) throw ValidationError("model '" + id_ + "' has no tokenizer");
        return *tokenizer_;
    }
    const std::string& id() const override { return id_; }
    const ModelWeights& weights() const { return *weights_; }
    std::shared_ptr<const Tokenizer> tokenizer_ptr() const { return tokenizer_; }

    ForwardResult forward(const TokenSequence& tokens, const SteeringPlan* steering,
                          const CaptureSpec& capture) const override {
        check_tokens(tokens);
        if (steering) steering->validate(config_);
        KVCache cache(config_.n_layers, config_.hidden_dim, tokens.size());
        return run(tokens, cache, steering, capture);
    }

    Vector project_to_logits(const Vector& state) const override {
        if (static_cast<std::size_t>(state.size()) != config_.hidden_dim)
            throw ValidationError("state of dimension " + std::to_string(state.size()) + " does not match model width " +
                                  std::to_string(config_.hidden_dim));
        RowMatrix x = state.transpose();
        return logits_of(layer_norm(x, weights_->final_norm)).transpose();
    }

    /// Incremental decoding: one prefill pass, then one position per step
    /// against the cached keys and values.
    TokenSequence generate(const TokenSequence& prompt, const DecodeConfig& cfg,
                           const SteeringPlan* steering) const override {
        check_generation(prompt, cfg);
        if (steering) steering->validate(config_);
        std::mt19937_64 rng(cfg.seed);
        KVCache cache(config_.n_layers, config_.hidden_dim, prompt.size() + cfg.max_new_tokens);
        auto r = run(prompt, cache, steering, CaptureSpec::last_logits());
        TokenSequence out;
        for (std::size_t step = 0; step < cfg.max_new_tokens; ++step) {
            const TokenId next = detail::pick_next(r.last_logits(), cfg, rng);
            out.push_back(next);
            if (cfg.stop_token && next == *cfg.stop_token) break;
            if (step + 1 == cfg.max_new_tokens) break;
            r = run(TokenSequence{next}, cache, steering, CaptureSpec::last_logits());
        }
        return out;
    }

    /// Logits of every step of an incremental decode of `tokens` (one prefill
    /// of `prefill` tokens, then one token at a time). Used to check cache
    /// equivalence against full recomputation.
    std::vector<Vector> incremental_logits(const TokenSequence& tokens, std::size_t prefill,
                                           const SteeringPlan* steering = nullptr) const {
        check_tokens(tokens);
        if (prefill < 1 || prefill > tokens.size()) throw ValidationError("prefill length out of range");
        KVCache cache(config_.n_layers, config_.hidden_dim, tokens.size());
        std::vector<Vector> out;
        out.push_back(run(TokenSequence(tokens.begin(), tokens.begin() + static_cast<std::ptrdiff_t>(prefill)), cache,
                          steering, CaptureSpec::last_logits())
                          .last_logits());
        for (std::size_t i = prefill; i < tokens.size(); ++i)
            out.push_back(run(TokenSequence{tokens[i]}, cache, steering, CaptureSpec::last_logits()).last_logits());
        return out;
    }

    /// Runs `tokens` as positions [cache.length, cache.length + n) and appends
    /// their keys and values to `cache`.
    ForwardResult run(const TokenSequence& tokens, KVCache& cache, const SteeringPlan* steering,
                      const CaptureSpec& capture) const {
        const std::size_t n = tokens.size();
        const std::size_t start = cache.length;
        if (start + n > cache.capacity()) throw ContextOverflowError(start + n, cache.capacity());
        const auto d = static_cast<Eigen::Index>(config_.hidden_dim);
        const auto& w = *weights_;

        RowMatrix x(static_cast<Eigen::Index>(n), d);
        for (std::size_t i = 0; i < n; ++i) x.row(static_cast<Eigen::Index>(i)) = w.token_embedding.row(tokens[i]);

        ForwardResult result;
        for (std::size_t l = 0; l < config_.n_layers; ++l) {
            const std::size_t layer = l + 1;
            x = block(x, w.layers[l], cache.keys[l], cache.values[l], start);
            if (steering)
                if (auto delta = steering->delta(layer)) x.rowwise() += delta->transpose();
            if (!x.allFinite())
                throw NumericalError("non-finite hidden state at layer " + std::to_string(layer) + " of '" + id_ + "'");
            if (capture.wants(layer))
                result.captured.push_back({layer, start + n - 1, x.row(static_cast<Eigen::Index>(n) - 1).transpose()});
            if (capture.full_states) result.layer_states.push_back(x);
        }
        cache.length = start + n;

        const RowMatrix normed = layer_norm(capture.all_logits ? x : RowMatrix(x.bottomRows(1)), w.final_norm);
        result.logits = logits_of(normed);
        return result;
    }

private:
    RowMatrix layer_norm(const RowMatrix& x, const LayerNormParams& p) const {
        const float eps = static_cast<float>(config_.layernorm_eps);
        RowMatrix out(x.rows(), x.cols());
        const float inv_n = 1.0f / static_cast<float>(x.cols());
        for (Eigen::Index r = 0; r < x.rows(); ++r) {
            const auto row = x.row(r);
            const float mean = row.sum() * inv_n;
            const auto centered = (row.array() - mean).eval();
            const float var = centered.square().sum() * inv_n;
            const float inv_std = 1.0f / std::sqrt(var + eps);
            out.row(r) = (centered * inv_std * p.scale.transpose().array() + p.shift.transpose().array()).matrix();
        }
        return out;
    }

    RowMatrix logits_of(const RowMatrix& normed) const { return normed * weights_->unembedding.transpose(); }

    static RowMatrix linear(const RowMatrix& x, const RowMatrix& weight, const Vector& bias) {
        RowMatrix y = x * weight.transpose();
        y.rowwise() += bias.transpose();
        return y;
    }

    void rotate(Eigen::Ref<RowMatrix> m, std::size_t start) const {
        const std::size_t half = inv_freq_.size();
        if (half == 0) return;
        for (Eigen::Index r = 0; r < m.rows(); ++r) {
            const float pos = static_cast<float>(start + static_cast<std::size_t>(r));
            for (std::size_t i = 0; i < half; ++i) {
                const float angle = pos * inv_freq_[i];
                const float c = std::cos(angle), s = std::sin(angle);
                const auto a = static_cast<Eigen::Index>(i), b = static_cast<Eigen::Index>(i + half);
                const float x1 = m(r, a), x2 = m(r, b);
                m(r, a) = x1 * c - x2 * s;
                m(r, b) = x2 * c + x1 * s;
            }
        }
    }

    RowMatrix attention(const RowMatrix& h, const LayerWeights& lw, RowMatrix& kcache, RowMatrix& vcache,
                        std::size_t start) const {
        const auto n = h.rows();
        const auto hd = static_cast<Eigen::Index>(config_.head_dim);
        const auto total = static_cast<Eigen::Index>(start) + n;
        const float scale = 1.0f / std::sqrt(static_cast<float>(config_.head_dim));
        const RowMatrix qkv = linear(h, lw.qkv, lw.qkv_bias);

        RowMatrix ctx(n, static_cast<Eigen::Index>(config_.hidden_dim));
        for (Eigen::Index head = 0; head < static_cast<Eigen::Index>(config_.n_heads); ++head) {
            const Eigen::Index base = head * 3 * hd;
            RowMatrix q = qkv.block(0, base, n, hd);
            RowMatrix k = qkv.block(0, base + hd, n, hd);
            rotate(q, start);
            rotate(k, start);
            kcache.block(static_cast<Eigen::Index>(start), head * hd, n, hd) = k;
            vcache.block(static_cast<Eigen::Index>(start), head * hd, n, hd) = qkv.block(0, base + 2 * hd, n, hd);

            const auto keys = kcache.block(0, head * hd, total, hd);
            const auto vals = vcache.block(0, head * hd, total, hd);
            RowMatrix scores = (q * keys.transpose()) * scale;
            for (Eigen::Index i = 0; i < n; ++i) {
                const Eigen::Index visible = static_cast<Eigen::Index>(start) + i + 1;
                auto row = scores.row(i);
                const float m = row.head(visible).maxCoeff();
                float sum = 0.0f;
                for (Eigen::Index j = 0; j < visible; ++j) {
                    row(j) = std::exp(row(j) - m);
                    sum += row(j);
                }
                row.head(visible) /= sum;
                if (visible < total) row.tail(total - visible).setZero();
            }
            ctx.block(0, head * hd, n, hd) = scores * vals;
        }
        return linear(ctx, lw.attn_out, lw.attn_out_bias);
    }

    static RowMatrix mlp(const RowMatrix& h, const LayerWeights& lw) {
        RowMatrix a = linear(h, lw.mlp_in, lw.mlp_in_bias);
        a = a.unaryExpr([](float v) { return 0.5f * v * (1.0f + std::erf(v * static_cast<float>(M_SQRT1_2))); });
        return linear(a, lw.mlp_out, lw.mlp_out_bias);
    }

    RowMatrix block(const RowMatrix& x, const LayerWeights& lw, RowMatrix& kcache, RowMatrix& vcache,
                    std::size_t start) const {
        const RowMatrix attn = attention(layer_norm(x, lw.input_norm), lw, kcache, vcache, start);
        if (config_.parallel_residual) {
            const RowMatrix m = mlp(layer_norm(x, lw.post_attention_norm), lw);
            return (m + attn) + x;
        }
        const RowMatrix h = attn + x;
        return mlp(layer_norm(h, lw.post_attention_norm), lw) + h;
    }

    ModelConfig config_;
    std::shared_ptr<const ModelWeights> weights_;
    std::shared_ptr<const Tokenizer> tokenizer_;
    std::string id_;
    std::vector<float> inv_freq_;
};

/// Loads a checkpoint directory (config.json, model.safetensors,
/// tokenizer.json). The model id is the directory name.
inline std::shared_ptr<Transformer> load_model(const std::filesystem::path& dir,
                                               std::shared_ptr<const Tokenizer> tokenizer = nullptr) {
    Checkpoint ckpt = load_checkpoint(dir);
    if (!tokenizer) {
        if (!std::filesystem::exists(dir / "tokenizer.json"))
            throw CheckpointError(CheckpointError::Kind::io, "no tokenizer.json in " + dir.string());
        tokenizer = std::make_shared<const Tokenizer>(Tokenizer::from_file(dir / "tokenizer.json"));
    }
    auto name = std::filesystem::weakly_canonical(dir).filename().string();
    if (name.empty()) name = dir.string();
    return std::make_shared<Transformer>(ckpt.config, ckpt.weights, std::move(tokenizer), std::move(name));
}

}  // namespace contrans
