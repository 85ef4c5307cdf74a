#pragma once

#include <cmath>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <string>

#include <json.hpp>

#include "contrans/error.hpp"

namespace contrans {

/// Architecture hyperparameters of a GPT-NeoX style decoder.
struct ModelConfig {
    std::size_t n_layers = 0;
    std::size_t hidden_dim = 0;
    std::size_t n_heads = 0;
    std::size_t head_dim = 0;
    std::size_t intermediate_dim = 0;
    std::size_t vocab_size = 0;
    std::size_t max_seq_len = 0;
    double rotary_pct = 1.0;
    double rotary_base = 10000.0;
    double layernorm_eps = 1e-5;
    bool parallel_residual = true;
    bool tie_embeddings = false;

    std::size_t rotary_dims() const { return static_cast<std::size_t>(static_cast<double>(head_dim) * rotary_pct); }

    void validate() const {
        auto fail = [](const std::string& m) { throw CheckpointError(CheckpointError::Kind::bad_config, m); };
        if (n_layers < 1) fail("config: n_layers must be at least 1");
        if (n_heads < 1 || head_dim < 1) fail("config: n_heads and head_dim must be positive");
        if (hidden_dim != n_heads * head_dim) fail("config: hidden_dim must equal n_heads * head_dim");
        if (vocab_size < 2) fail("config: vocab_size must be at least 2");
        if (intermediate_dim < 1) fail("config: intermediate_dim must be positive");
        if (max_seq_len < 1) fail("config: max_seq_len must be positive");
        if (!(rotary_pct >= 0.0 && rotary_pct <= 1.0)) fail("config: rotary_pct must lie in [0, 1]");
        if (rotary_dims() % 2 != 0) fail("config: rotary dimension count must be even");
        if (!(layernorm_eps > 0.0)) fail("config: layernorm_eps must be positive");
    }
};

namespace detail {

template <typename T>
T pick(const nlohmann::json& j, std::initializer_list<const char*> keys, T fallback) {
    for (const char* k : keys)
        if (j.contains(k) && !j.at(k).is_null()) return j.at(k).get<T>();
    return fallback;
}

template <typename T>
T require(const nlohmann::json& j, std::initializer_list<const char*> keys) {
    for (const char* k : keys)
        if (j.contains(k) && !j.at(k).is_null()) return j.at(k).get<T>();
    throw CheckpointError(CheckpointError::Kind::bad_config, std::string("config is missing '") + *keys.begin() + "'");
}

}  // namespace detail

/// Accepts both the checkpoint family's own config.json keys
/// (hidden_size, num_hidden_layers, ...) and the field names used here.
inline ModelConfig config_from_json(const nlohmann::json& j) {
    using detail::pick;
    using detail::require;
    ModelConfig c;
    try {
        c.n_layers = require<std::size_t>(j, {"num_hidden_layers", "n_layers"});
        c.hidden_dim = require<std::size_t>(j, {"hidden_size", "hidden_dim"});
        c.n_heads = require<std::size_t>(j, {"num_attention_heads", "n_heads"});
        c.head_dim = pick<std::size_t>(j, {"head_dim"}, c.n_heads ? c.hidden_dim / c.n_heads : 0);
        c.intermediate_dim = pick<std::size_t>(j, {"intermediate_size", "intermediate_dim"}, 4 * c.hidden_dim);
        c.vocab_size = require<std::size_t>(j, {"vocab_size"});
        c.max_seq_len = pick<std::size_t>(j, {"max_position_embeddings", "max_seq_len"}, 2048);
        c.layernorm_eps = pick<double>(j, {"layer_norm_eps", "layernorm_eps"}, 1e-5);
        c.parallel_residual = pick<bool>(j, {"use_parallel_residual", "parallel_residual"}, true);
        c.tie_embeddings = pick<bool>(j, {"tie_word_embeddings", "tie_embeddings"}, false);
        c.rotary_pct = pick<double>(j, {"rotary_pct"}, 1.0);
        c.rotary_base = pick<double>(j, {"rotary_emb_base", "rotary_base"}, 10000.0);
        if (j.contains("rope_parameters") && j.at("rope_parameters").is_object()) {
            const auto& rp = j.at("rope_parameters");
            c.rotary_pct = pick<double>(rp, {"partial_rotary_factor"}, c.rotary_pct);
            c.rotary_base = pick<double>(rp, {"rope_theta"}, c.rotary_base);
        }
        if (j.contains("hidden_act")) {
            const auto act = j.at("hidden_act").get<std::string>();
            if (act != "gelu")
                throw CheckpointError(CheckpointError::Kind::bad_config, "unsupported activation '" + act + "'");
        }
    } catch (const nlohmann::json::exception& e) {
        throw CheckpointError(CheckpointError::Kind::bad_config, std::string("malformed config: ") + e.what());
    }
    c.validate();
    return c;
}

inline nlohmann::json config_to_json(const ModelConfig& c) {
    return {
        {"model_type", "gpt_neox"},
        {"hidden_act", "gelu"},
        {"num_hidden_layers", c.n_layers},
        {"hidden_size", c.hidden_dim},
        {"num_attention_heads", c.n_heads},
        {"intermediate_size", c.intermediate_dim},
        {"vocab_size", c.vocab_size},
        {"max_position_embeddings", c.max_seq_len},
        {"rotary_pct", c.rotary_pct},
        {"rotary_emb_base", c.rotary_base},
        {"layer_norm_eps", c.layernorm_eps},
        {"use_parallel_residual", c.parallel_residual},
        {"tie_word_embeddings", c.tie_embeddings},
    };
}

inline ModelConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw CheckpointError(CheckpointError::Kind::io, "cannot open config " + path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw CheckpointError(CheckpointError::Kind::bad_config, "config " + path.string() + " is not valid JSON");
    }
    return config_from_json(j);
}

}  // namespace contrans
