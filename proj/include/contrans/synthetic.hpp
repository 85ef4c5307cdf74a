#pragma once

// Deterministic hash-generated checkpoints. Every tensor element is a pure
// function of (tensor name, flat index), so a model of any size can be
// rebuilt bit-for-bit without storing its weights. The Python fixture
// exporter implements the same formula.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <memory>
#include <string>
#include <vector>

#include "contrans/model_config.hpp"
#include "contrans/model_weights.hpp"
#include "contrans/tensor_file.hpp"

namespace contrans::synthetic {

inline std::uint64_t fnv1a64(std::string_view s) {
    std::uint64_t h = 0xCBF29CE484222325ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001B3ull;
    }
    return h;
}

/// offset + (u * 2^-24 - 0.5) * 2a, with u the top 24 bits of a splitmix64
/// hash of (name, index). All arithmetic in 32-bit floats.
inline std::vector<float> hash_uniform(const std::string& name, std::size_t count, float amplitude, float offset) {
    const std::uint64_t seed = fnv1a64(name);
    const float span = 2.0f * amplitude;
    std::vector<float> out(count);
    for (std::size_t i = 0; i < count; ++i) {
        std::uint64_t z = seed + (static_cast<std::uint64_t>(i) + 1) * 0x9E3779B97F4A7C15ull;
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
        z ^= z >> 31;
        const float u = static_cast<float>(z >> 40);
        float v = (u * 0x1.0p-24f - 0.5f) * span;
        if (offset != 0.0f) v += offset;
        out[i] = v;
    }
    return out;
}

inline float linear_amplitude(std::size_t fan_in) { return static_cast<float>(std::sqrt(3.0 / static_cast<double>(fan_in))); }

/// Shape, amplitude and offset of each named tensor of a GPT-NeoX layout.
struct TensorSpec {
    std::string name;
    std::vector<std::size_t> shape;
    float amplitude;
    float offset;
};

inline std::vector<TensorSpec> tensor_specs(const ModelConfig& c) {
    const std::size_t d = c.hidden_dim, ff = c.intermediate_dim, V = c.vocab_size;
    std::vector<TensorSpec> specs{{"gpt_neox.embed_in.weight", {V, d}, 1.0f, 0.0f}};
    for (std::size_t i = 0; i < c.n_layers; ++i) {
        const std::string p = "gpt_neox.layers." + std::to_string(i) + ".";
        for (const char* ln : {"input_layernorm", "post_attention_layernorm"}) {
            specs.push_back({p + ln + ".weight", {d}, 0.1f, 1.0f});
            specs.push_back({p + ln + ".bias", {d}, 0.05f, 0.0f});
        }
        specs.push_back({p + "attention.query_key_value.weight", {3 * d, d}, linear_amplitude(d), 0.0f});
        specs.push_back({p + "attention.query_key_value.bias", {3 * d}, 0.02f, 0.0f});
        specs.push_back({p + "attention.dense.weight", {d, d}, linear_amplitude(d), 0.0f});
        specs.push_back({p + "attention.dense.bias", {d}, 0.02f, 0.0f});
        specs.push_back({p + "mlp.dense_h_to_4h.weight", {ff, d}, linear_amplitude(d), 0.0f});
        specs.push_back({p + "mlp.dense_h_to_4h.bias", {ff}, 0.02f, 0.0f});
        specs.push_back({p + "mlp.dense_4h_to_h.weight", {d, ff}, linear_amplitude(ff), 0.0f});
        specs.push_back({p + "mlp.dense_4h_to_h.bias", {d}, 0.02f, 0.0f});
    }
    specs.push_back({"gpt_neox.final_layer_norm.weight", {d}, 0.1f, 1.0f});
    specs.push_back({"gpt_neox.final_layer_norm.bias", {d}, 0.05f, 0.0f});
    if (!c.tie_embeddings) specs.push_back({"embed_out.weight", {V, d}, linear_amplitude(d), 0.0f});
    return specs;
}

/// A non-empty `salt` is prepended to the tensor name before hashing, giving
/// an independent model of the same shape.
inline RawTensor make_tensor(const TensorSpec& s, const std::string& salt = {}) {
    std::size_t n = 1;
    for (auto x : s.shape) n *= x;
    return {s.shape, hash_uniform(salt + s.name, n, s.amplitude, s.offset)};
}

inline ModelWeights make_weights(const ModelConfig& config, const std::string& salt = {}) {
    config.validate();
    const auto specs = tensor_specs(config);
    auto find = [&](const std::string& name) -> const TensorSpec* {
        for (const auto& s : specs)
            if (s.name == name) return &s;
        return nullptr;
    };
    auto has = [&](const std::string& name) { return find(name) != nullptr; };
    auto fetch = [&](const std::string& name) {
        const TensorSpec* s = find(name);
        if (!s) throw CheckpointError(CheckpointError::Kind::missing_tensor, "missing tensor '" + name + "'");
        return make_tensor(*s, salt);
    };
    return assemble_weights(config, fetch, has);
}

/// The published Pythia-70M architecture.
inline ModelConfig pythia70m_config() {
    ModelConfig c;
    c.n_layers = 6;
    c.hidden_dim = 512;
    c.n_heads = 8;
    c.head_dim = 64;
    c.intermediate_dim = 2048;
    c.vocab_size = 50304;
    c.max_seq_len = 2048;
    c.rotary_pct = 0.25;
    c.rotary_base = 10000.0;
    c.layernorm_eps = 1e-5;
    c.parallel_residual = true;
    c.tie_embeddings = false;
    return c;
}

/// A small config for fast tests.
inline ModelConfig tiny_config(std::size_t vocab, std::size_t n_layers = 4, std::size_t d = 32, std::size_t heads = 4) {
    ModelConfig c;
    c.n_layers = n_layers;
    c.hidden_dim = d;
    c.n_heads = heads;
    c.head_dim = d / heads;
    c.intermediate_dim = 4 * d;
    c.vocab_size = vocab;
    c.max_seq_len = 256;
    c.rotary_pct = 0.5;
    c.rotary_base = 10000.0;
    c.layernorm_eps = 1e-5;
    c.parallel_residual = true;
    c.tie_embeddings = false;
    return c;
}

/// Writes config.json and model.safetensors for `config` into `dir`, plus a
/// copy of `tokenizer_json` when given.
inline void write_checkpoint(const std::filesystem::path& dir, const ModelConfig& config,
                             const std::filesystem::path& tokenizer_json = {}, const std::string& salt = {}) {
    std::filesystem::create_directories(dir);
    TensorWriter writer;
    for (const auto& s : tensor_specs(config)) {
        const RawTensor t = make_tensor(s, salt);
        writer.add_f32(s.name, t.shape, t.values);
    }
    writer.write(dir / "model.safetensors");
    std::ofstream(dir / "config.json") << config_to_json(config).dump(2) << "\n";
    if (!tokenizer_json.empty())
        std::filesystem::copy_file(tokenizer_json, dir / "tokenizer.json", std::filesystem::copy_options::overwrite_existing);
}

}  // namespace contrans::synthetic
