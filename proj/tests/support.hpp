#pragma once

#include <atomic>
#include <filesystem>
#include <functional>
#include <memory>
#include <random>
#include <string>
#include <unistd.h>

#include "contrans/contrans.hpp"

#ifndef CONTRANS_SOURCE_DIR
#define CONTRANS_SOURCE_DIR "."
#endif

namespace testing_support {

using namespace contrans;

inline std::filesystem::path source_dir() { return CONTRANS_SOURCE_DIR; }
inline std::filesystem::path data_dir() { return source_dir() / "data"; }
inline std::filesystem::path fixture_dir() { return source_dir() / "tests" / "fixtures" / "pythia70m_synthetic"; }
inline std::filesystem::path tokenizer_path() { return data_dir() / "tokenizer" / "tokenizer.json"; }

class TempDir {
public:
    TempDir() {
        static std::atomic<int> counter{0};
        path_ = std::filesystem::temp_directory_path() /
                ("contrans-test-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& rel) const { return path_ / rel; }

private:
    std::filesystem::path path_;
};

inline std::shared_ptr<const Tokenizer> shared_tokenizer() {
    static const auto tok = std::make_shared<const Tokenizer>(Tokenizer::from_file(tokenizer_path()));
    return tok;
}

/// The 70M-architecture model with hash-generated weights used by the golden fixtures.
inline std::shared_ptr<const Transformer> reference_model() {
    static const auto model = [] {
        const auto cfg = synthetic::pythia70m_config();
        auto w = std::make_shared<const ModelWeights>(synthetic::make_weights(cfg));
        return std::make_shared<const Transformer>(cfg, w, shared_tokenizer(), "pythia70m-synthetic");
    }();
    return model;
}

inline std::shared_ptr<const Transformer> tiny_model(const std::string& salt = "", std::size_t layers = 4, std::size_t d = 32,
                                                     std::size_t heads = 4, std::string id = {}) {
    auto cfg = synthetic::tiny_config(shared_tokenizer()->vocab_size(), layers, d, heads);
    auto w = std::make_shared<const ModelWeights>(synthetic::make_weights(cfg, salt));
    if (id.empty()) id = "tiny-" + (salt.empty() ? std::string("ref") : salt) + "-" + std::to_string(layers) + "x" + std::to_string(d);
    return std::make_shared<const Transformer>(cfg, w, shared_tokenizer(), id);
}

/// A language model whose next-token logits are a function of the prefix.
/// States are zero; steering has no effect.
class StubModel final : public LanguageModel {
public:
    using LogitFn = std::function<Vector(const TokenSequence& prefix)>;

    StubModel(LogitFn fn, std::string id = "stub", std::shared_ptr<const Tokenizer> tok = shared_tokenizer())
        : fn_(std::move(fn)), tok_(std::move(tok)), id_(std::move(id)) {
        config_.n_layers = 1;
        config_.hidden_dim = 4;
        config_.n_heads = 1;
        config_.head_dim = 4;
        config_.intermediate_dim = 16;
        config_.vocab_size = tok_->vocab_size();
        config_.max_seq_len = 4096;
    }

    const ModelConfig& config() const override { return config_; }
    const Tokenizer& tokenizer() const override { return *tok_; }
    const std::string& id() const override { return id_; }

    ForwardResult forward(const TokenSequence& tokens, const SteeringPlan*, const CaptureSpec& capture) const override {
        check_tokens(tokens);
        ForwardResult r;
        const auto V = static_cast<Eigen::Index>(config_.vocab_size);
        const std::size_t first = capture.all_logits ? 0 : tokens.size() - 1;
        r.logits.resize(static_cast<Eigen::Index>(tokens.size() - first), V);
        for (std::size_t p = first; p < tokens.size(); ++p) {
            const TokenSequence prefix(tokens.begin(), tokens.begin() + static_cast<std::ptrdiff_t>(p + 1));
            r.logits.row(static_cast<Eigen::Index>(p - first)) = fn_(prefix).transpose();
        }
        if (capture.wants(1)) r.captured.push_back({1, tokens.size() - 1, Vector::Zero(static_cast<Eigen::Index>(config_.hidden_dim))});
        return r;
    }

    Vector project_to_logits(const Vector&) const override { return Vector::Zero(static_cast<Eigen::Index>(config_.vocab_size)); }

private:
    LogitFn fn_;
    std::shared_ptr<const Tokenizer> tok_;
    std::string id_;
    ModelConfig config_;
};

inline Vector one_hot_logits(std::size_t V, TokenId hot, float high = 10.0f) {
    Vector v = Vector::Zero(static_cast<Eigen::Index>(V));
    v[hot] = high;
    return v;
}

inline RowMatrix random_matrix(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng, float scale = 1.0f) {
    std::normal_distribution<float> n(0.0f, scale);
    RowMatrix m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
    return m;
}

inline Vector random_vector(Eigen::Index n, std::mt19937_64& rng, float scale = 1.0f) {
    std::normal_distribution<float> d(0.0f, scale);
    Vector v(n);
    for (Eigen::Index i = 0; i < n; ++i) v[i] = d(rng);
    return v;
}

inline float max_abs_diff(const Vector& a, const Vector& b) { return (a - b).cwiseAbs().maxCoeff(); }

inline bool bitwise_equal(const Vector& a, const Vector& b) {
    return a.size() == b.size() && std::memcmp(a.data(), b.data(), sizeof(float) * static_cast<std::size_t>(a.size())) == 0;
}

inline bool bitwise_equal(const RowMatrix& a, const RowMatrix& b) {
    return a.rows() == b.rows() && a.cols() == b.cols() &&
           std::memcmp(a.data(), b.data(), sizeof(float) * static_cast<std::size_t>(a.size())) == 0;
}

/// Token with the largest unembedding row, and a direction whose limit through
/// the final layernorm reproduces that row (scale undone, mean removed).
struct PlantedToken {
    TokenId token = 0;
    Vector direction;
};

inline PlantedToken planted_token(const Transformer& model) {
    const auto& w = model.weights();
    Eigen::Index t = 0;
    w.unembedding.rowwise().norm().maxCoeff(&t);
    Vector u = w.unembedding.row(t).transpose().cwiseQuotient(w.final_norm.scale);
    u.array() -= u.mean();
    return {static_cast<TokenId>(t), u.normalized()};
}

}  // namespace testing_support
