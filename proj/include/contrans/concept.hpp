#pragma once

// Concept vectors: the per-layer mean difference of last-token residual
// states between positive and negative prompts.

#include <algorithm>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "contrans/error.hpp"
#include "contrans/model_weights.hpp"
#include "contrans/transformer.hpp"

namespace contrans {

struct ExamplePair {
    std::string positive;
    std::string negative;
};

struct ExamplePairSet {
    std::string concept_name;
    std::string template_id;
    std::vector<ExamplePair> pairs;

    std::size_t size() const { return pairs.size(); }

    /// The first `n` pairs.
    ExamplePairSet head(std::size_t n) const {
        ExamplePairSet out{concept_name, template_id, {}};
        out.pairs.assign(pairs.begin(), pairs.begin() + static_cast<std::ptrdiff_t>(std::min(n, pairs.size())));
        return out;
    }

    /// Positive and negative roles exchanged.
    ExamplePairSet swapped() const {
        ExamplePairSet out{concept_name, template_id, {}};
        for (const auto& p : pairs) out.pairs.push_back({p.negative, p.positive});
        return out;
    }
};

namespace detail {

inline std::vector<nlohmann::json> read_jsonl(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw UsageError("cannot open " + path.string());
    std::vector<nlohmann::json> rows;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            rows.push_back(nlohmann::json::parse(line));
        } catch (const nlohmann::json::exception&) {
            throw ValidationError(path.string() + ":" + std::to_string(lineno) + ": not valid JSON");
        }
    }
    return rows;
}

inline void replace_all(std::string& s, std::string_view key, std::string_view value) {
    for (std::size_t pos = s.find(key); pos != std::string::npos; pos = s.find(key, pos + value.size()))
        s.replace(pos, key.size(), value);
}

}  // namespace detail

/// JSON lines of {"positive": ..., "negative": ...}.
inline ExamplePairSet load_pairs(const std::filesystem::path& path, std::string concept_name, std::string template_id) {
    ExamplePairSet set{std::move(concept_name), std::move(template_id), {}};
    for (const auto& row : detail::read_jsonl(path)) {
        if (!row.contains("positive") || !row.contains("negative") || !row["positive"].is_string() ||
            !row["negative"].is_string())
            throw ValidationError(path.string() + ": every line needs string fields 'positive' and 'negative'");
        set.pairs.push_back({row["positive"].get<std::string>(), row["negative"].get<std::string>()});
    }
    return set;
}

/// A prompt pair with an `{input}` placeholder. Templates without a negative
/// side use the positive text for both.
struct PromptTemplate {
    std::string id;
    std::string positive;
    std::optional<std::string> negative;

    std::string render(std::string_view input, bool positive_side = true,
                       const std::map<std::string, std::string>& vars = {}) const {
        std::string s = positive_side || !negative ? positive : *negative;
        for (const auto& [k, v] : vars) detail::replace_all(s, "{" + k + "}", v);
        detail::replace_all(s, "{input}", input);
        return s;
    }
};

class TemplateLibrary {
public:
    static TemplateLibrary load(const std::filesystem::path& path) {
        std::ifstream in(path);
        if (!in) throw UsageError("cannot open template file " + path.string());
        nlohmann::json j;
        try {
            in >> j;
        } catch (const nlohmann::json::exception&) {
            throw ValidationError("template file " + path.string() + " is not valid JSON");
        }
        return from_json(j);
    }

    static TemplateLibrary from_json(const nlohmann::json& j) {
        TemplateLibrary lib;
        if (!j.is_object()) throw ValidationError("template file must hold an object of templates");
        for (const auto& [id, t] : j.items()) {
            if (!t.contains("positive") || !t["positive"].is_string())
                throw ValidationError("template '" + id + "' needs a string 'positive' entry");
            PromptTemplate pt{id, t["positive"].get<std::string>(), std::nullopt};
            if (t.contains("negative")) pt.negative = t["negative"].get<std::string>();
            lib.templates_.emplace(id, std::move(pt));
        }
        return lib;
    }

    const PromptTemplate& get(const std::string& id) const {
        auto it = templates_.find(id);
        if (it == templates_.end()) throw UsageError("unknown template id '" + id + "'");
        return it->second;
    }

    bool contains(const std::string& id) const { return templates_.count(id) != 0; }

private:
    std::map<std::string, PromptTemplate> templates_;
};

/// Per-layer directions keyed by 1-based layer index.
struct ConceptVector {
    std::string concept_name;
    std::string source_model;
    std::string template_id;
    std::size_t n_pairs = 0;
    std::map<std::size_t, Vector> layers;
    std::string created;
    nlohmann::json extra = nlohmann::json::object();  // provenance beyond the core fields

    std::size_t dim() const { return layers.empty() ? 0 : static_cast<std::size_t>(layers.begin()->second.size()); }

    const Vector& layer(std::size_t k) const {
        auto it = layers.find(k);
        if (it == layers.end()) throw ValidationError("concept vector '" + concept_name + "' has no layer " + std::to_string(k));
        return it->second;
    }

    void validate() const {
        if (concept_name.empty()) throw ValidationError("concept vector has no concept label");
        if (layers.empty()) throw ValidationError("concept vector '" + concept_name + "' has no layers");
        for (const auto& [k, v] : layers) {
            if (k < 1) throw ValidationError("layer indices are 1-based");
            if (static_cast<std::size_t>(v.size()) != dim())
                throw ValidationError("concept vector '" + concept_name + "' mixes dimensions across layers");
            if (!v.allFinite()) throw NumericalError("concept vector '" + concept_name + "' layer " + std::to_string(k) + " is not finite");
        }
    }

    ConceptVector scaled(float c) const {
        ConceptVector out = *this;
        for (auto& [k, v] : out.layers) v *= c;
        return out;
    }

    /// Steering entries for `selected` layers (all when empty).
    void add_to_plan(SteeringPlan& plan, std::optional<float> alpha, const std::vector<std::size_t>& selected = {}) const {
        for (const auto& [k, v] : layers)
            if (selected.empty() || std::find(selected.begin(), selected.end(), k) != selected.end())
                plan.add(k, v, alpha, concept_name);
    }
};

/// Last-token post-block states of every layer for one prompt.
inline std::vector<Vector> last_token_states(const LanguageModel& model, const std::string& text) {
    const TokenSequence ids = model.encode(text);
    if (ids.empty()) throw ValidationError("example tokenizes to zero tokens: '" + text + "'");
    auto r = model.forward(ids, nullptr, CaptureSpec::last_token_all_layers());
    std::vector<Vector> out;
    out.reserve(r.captured.size());
    for (auto& rec : r.captured) out.push_back(std::move(rec.vector));
    return out;
}

/// v^k = (1/N) sum_i (h_pos(i)^k - h_neg(i)^k): differences are summed in
/// pair order and divided once at the end.
inline ConceptVector refine_concept(const LanguageModel& model, const ExamplePairSet& set, const PromptTemplate& tmpl) {
    if (set.pairs.empty()) throw ValidationError("pair set for '" + set.concept_name + "' is empty");
    const std::size_t L = model.config().n_layers;
    std::vector<Vector> sum;
    for (const auto& pair : set.pairs) {
        const auto pos = last_token_states(model, tmpl.render(pair.positive, true));
        const auto neg = last_token_states(model, tmpl.render(pair.negative, false));
        if (sum.empty()) {
            for (std::size_t k = 0; k < L; ++k) sum.push_back(pos[k] - neg[k]);
        } else {
            for (std::size_t k = 0; k < L; ++k) sum[k] += pos[k] - neg[k];
        }
    }
    ConceptVector cv;
    cv.concept_name = set.concept_name;
    cv.source_model = model.id();
    cv.template_id = tmpl.id;
    cv.n_pairs = set.pairs.size();
    const float n = static_cast<float>(set.pairs.size());
    for (std::size_t k = 0; k < L; ++k) cv.layers.emplace(k + 1, sum[k] / n);
    cv.validate();
    return cv;
}

/// Cosine similarity per shared layer.
inline std::map<std::size_t, double> layer_cosines(const ConceptVector& a, const ConceptVector& b) {
    std::map<std::size_t, double> out;
    for (const auto& [k, v] : a.layers) {
        auto it = b.layers.find(k);
        if (it == b.layers.end() || it->second.size() != v.size()) continue;
        const Eigen::VectorXd x = v.cast<double>(), y = it->second.cast<double>();
        const double denom = x.norm() * y.norm();
        out[k] = denom > 0.0 ? x.dot(y) / denom : 0.0;
    }
    return out;
}

}  // namespace contrans
