#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "contrans/error.hpp"
#include "contrans/model_config.hpp"
#include "contrans/tensor_file.hpp"

namespace contrans {

using RowMatrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXf;

struct LayerNormParams {
    Vector scale;
    Vector shift;
};

struct LayerWeights {
    LayerNormParams input_norm;
    LayerNormParams post_attention_norm;
    RowMatrix qkv;  // [3d, d], per head the rows are [q | k | v]
    Vector qkv_bias;
    RowMatrix attn_out;  // [d, d]
    Vector attn_out_bias;
    RowMatrix mlp_in;  // [ff, d]
    Vector mlp_in_bias;
    RowMatrix mlp_out;  // [d, ff]
    Vector mlp_out_bias;
};

/// All parameters of one decoder, in 32-bit floats. Linear weights keep the
/// [out, in] layout of the checkpoint. `unembedding` holds one row per token
/// ([|V|, d]); the logits of a state h are `unembedding * h`.
struct ModelWeights {
    RowMatrix token_embedding;  // [|V|, d]
    std::vector<LayerWeights> layers;
    LayerNormParams final_norm;
    RowMatrix unembedding;  // [|V|, d]
};

struct RawTensor {
    std::vector<std::size_t> shape;
    std::vector<float> values;
};

namespace detail {

inline std::string shape_str(const std::vector<std::size_t>& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) out += (i ? ", " : "") + std::to_string(s[i]);
    return out + "]";
}

inline void check_finite(const std::string& name, const std::vector<float>& v) {
    for (float x : v)
        if (!std::isfinite(x)) throw NumericalError("tensor '" + name + "' contains non-finite values");
}

}  // namespace detail

/// Builds ModelWeights from any tensor source. `fetch(name)` returns a
/// RawTensor or throws CheckpointError(missing_tensor); `has(name)` reports
/// presence. Every shape is validated against `config`.
template <typename Fetch, typename Has>
ModelWeights assemble_weights(const ModelConfig& config, Fetch&& fetch, Has&& has) {
    const std::size_t d = config.hidden_dim;
    const std::size_t ff = config.intermediate_dim;
    const std::size_t V = config.vocab_size;

    auto matrix = [&](const std::string& name, std::size_t rows, std::size_t cols) {
        RawTensor t = fetch(name);
        if (t.shape != std::vector<std::size_t>{rows, cols})
            throw CheckpointError(CheckpointError::Kind::shape_mismatch,
                                  "tensor '" + name + "' has shape " + detail::shape_str(t.shape) + ", config implies " +
                                      detail::shape_str({rows, cols}));
        detail::check_finite(name, t.values);
        return RowMatrix(Eigen::Map<const RowMatrix>(t.values.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols)));
    };
    auto vector = [&](const std::string& name, std::size_t n) {
        RawTensor t = fetch(name);
        if (t.shape != std::vector<std::size_t>{n})
            throw CheckpointError(CheckpointError::Kind::shape_mismatch,
                                  "tensor '" + name + "' has shape " + detail::shape_str(t.shape) + ", config implies " +
                                      detail::shape_str({n}));
        detail::check_finite(name, t.values);
        return Vector(Eigen::Map<const Vector>(t.values.data(), static_cast<Eigen::Index>(n)));
    };
    auto norm = [&](const std::string& prefix) {
        return LayerNormParams{vector(prefix + ".weight", d), vector(prefix + ".bias", d)};
    };

    ModelWeights w;
    w.token_embedding = matrix("gpt_neox.embed_in.weight", V, d);
    w.layers.reserve(config.n_layers);
    for (std::size_t i = 0; i < config.n_layers; ++i) {
        const std::string p = "gpt_neox.layers." + std::to_string(i) + ".";
        LayerWeights lw;
        lw.input_norm = norm(p + "input_layernorm");
        lw.post_attention_norm = norm(p + "post_attention_layernorm");
        lw.qkv = matrix(p + "attention.query_key_value.weight", 3 * d, d);
        lw.qkv_bias = vector(p + "attention.query_key_value.bias", 3 * d);
        lw.attn_out = matrix(p + "attention.dense.weight", d, d);
        lw.attn_out_bias = vector(p + "attention.dense.bias", d);
        lw.mlp_in = matrix(p + "mlp.dense_h_to_4h.weight", ff, d);
        lw.mlp_in_bias = vector(p + "mlp.dense_h_to_4h.bias", ff);
        lw.mlp_out = matrix(p + "mlp.dense_4h_to_h.weight", d, ff);
        lw.mlp_out_bias = vector(p + "mlp.dense_4h_to_h.bias", d);
        w.layers.push_back(std::move(lw));
    }
    w.final_norm = norm("gpt_neox.final_layer_norm");
    if (config.tie_embeddings && !has("embed_out.weight"))
        w.unembedding = w.token_embedding;
    else
        w.unembedding = matrix("embed_out.weight", V, d);
    return w;
}

struct Checkpoint {
    ModelConfig config;
    std::shared_ptr<const ModelWeights> weights;
};

/// Loads `config.json` plus `model.safetensors` (or a sharded
/// `model.safetensors.index.json`) from a checkpoint directory.
inline Checkpoint load_checkpoint(const std::filesystem::path& dir) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(dir)) throw CheckpointError(CheckpointError::Kind::io, "checkpoint directory not found: " + dir.string());
    ModelConfig config = load_config(dir / "config.json");

    std::map<std::string, std::shared_ptr<TensorFile>> files;  // tensor name -> container
    if (fs::exists(dir / "model.safetensors")) {
        auto tf = std::make_shared<TensorFile>(TensorFile::open(dir / "model.safetensors"));
        for (const auto& n : tf->names()) files[n] = tf;
    } else if (fs::exists(dir / "model.safetensors.index.json")) {
        std::ifstream in(dir / "model.safetensors.index.json");
        nlohmann::json idx;
        try {
            in >> idx;
        } catch (const nlohmann::json::exception&) {
            throw CheckpointError(CheckpointError::Kind::corrupt_header, "shard index is not valid JSON");
        }
        std::map<std::string, std::shared_ptr<TensorFile>> shards;
        for (const auto& [name, shard] : idx.at("weight_map").items()) {
            const auto s = shard.get<std::string>();
            if (!shards.count(s)) shards[s] = std::make_shared<TensorFile>(TensorFile::open(dir / s));
            files[name] = shards[s];
        }
    } else {
        throw CheckpointError(CheckpointError::Kind::io, "no model.safetensors in " + dir.string());
    }

    auto has = [&](const std::string& name) { return files.count(name) != 0; };
    auto fetch = [&](const std::string& name) {
        auto it = files.find(name);
        if (it == files.end()) throw CheckpointError(CheckpointError::Kind::missing_tensor, "missing tensor '" + name + "'");
        RawTensor t;
        t.shape = it->second->info(name).shape;
        t.values = it->second->read_f32(name);
        return t;
    };
    auto weights = std::make_shared<const ModelWeights>(assemble_weights(config, fetch, has));
    return {config, std::move(weights)};
}

}  // namespace contrans
