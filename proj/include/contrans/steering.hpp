#pragma once

#include <cstddef>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "contrans/error.hpp"
#include "contrans/model_config.hpp"
#include "contrans/model_weights.hpp"

namespace contrans {

struct SteeringEntry {
    std::size_t layer = 0;  // 1-based block index
    Vector vector;
    std::optional<float> alpha;
    std::string source;  // label of the vector this entry came from
};

/// Residual-stream additions: at the output of block k every entry for k
/// adds alpha * vector to the state of every position.
class SteeringPlan {
public:
    SteeringPlan() = default;
    explicit SteeringPlan(float default_alpha) : default_alpha_(default_alpha) {}

    float default_alpha() const { return default_alpha_; }
    void set_default_alpha(float a) { default_alpha_ = a; }

    void add(std::size_t layer, Vector v, std::optional<float> alpha = std::nullopt, std::string source = {}) {
        for (const auto& e : entries_)
            if (e.layer == layer && e.source == source)
                throw ValidationError("steering plan already has layer " + std::to_string(layer) + " for '" + source + "'");
        entries_.push_back({layer, std::move(v), alpha, std::move(source)});
    }

    const std::vector<SteeringEntry>& entries() const { return entries_; }
    bool empty() const { return entries_.empty(); }

    float alpha_of(const SteeringEntry& e) const { return e.alpha.value_or(default_alpha_); }

    /// Throws ValidationError unless every entry fits a model with `config`.
    void validate(const ModelConfig& config) const {
        for (const auto& e : entries_) {
            if (e.layer < 1 || e.layer > config.n_layers)
                throw ValidationError("steering layer " + std::to_string(e.layer) + " outside [1, " +
                                      std::to_string(config.n_layers) + "]");
            if (static_cast<std::size_t>(e.vector.size()) != config.hidden_dim)
                throw ValidationError("steering vector for layer " + std::to_string(e.layer) + " has dimension " +
                                      std::to_string(e.vector.size()) + ", model width is " +
                                      std::to_string(config.hidden_dim));
            if (!e.vector.allFinite()) throw NumericalError("steering vector contains non-finite values");
        }
    }

    /// The summed addition for `layer`, or nullopt when nothing applies.
    /// Entries with alpha == 0 contribute nothing, so an all-zero plan leaves
    /// every state untouched.
    std::optional<Vector> delta(std::size_t layer) const {
        std::optional<Vector> out;
        for (const auto& e : entries_) {
            const float a = alpha_of(e);
            if (e.layer != layer || a == 0.0f) continue;
            Vector scaled = a * e.vector;
            if (out)
                *out += scaled;
            else
                out = std::move(scaled);
        }
        return out;
    }

    std::set<std::size_t> layers() const {
        std::set<std::size_t> s;
        for (const auto& e : entries_) s.insert(e.layer);
        return s;
    }

private:
    std::vector<SteeringEntry> entries_;
    float default_alpha_ = 1.0f;
};

}  // namespace contrans
