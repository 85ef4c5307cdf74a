#pragma once

// Cross-model linear maps: paired last-token activations from a source and a
// target model on the same texts, one least-squares map per target layer,
// and reformulation of source concept_name vectors into the target space.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "contrans/concept.hpp"
#include "contrans/error.hpp"
#include "contrans/least_squares.hpp"
#include "contrans/model_weights.hpp"
#include "contrans/transformer.hpp"

namespace contrans {

/// Target layer -> source layer pairs, both 1-based.
struct LayerCorrespondence {
    std::vector<std::pair<std::size_t, std::size_t>> pairs;  // (k_tgt, k_src)

    /// Relative-depth matching on 0-based indices:
    /// i_src = round(i_tgt * (L_src - 1) / (L_tgt - 1)).
    static LayerCorrespondence proportional(std::size_t L_src, std::size_t L_tgt,
                                            const std::vector<std::size_t>& target_layers = {}) {
        if (L_src < 1 || L_tgt < 1) throw ValidationError("layer counts must be positive");
        LayerCorrespondence c;
        auto map_one = [&](std::size_t k_tgt) {
            if (k_tgt < 1 || k_tgt > L_tgt) throw ValidationError("target layer " + std::to_string(k_tgt) + " out of range");
            std::size_t i_src = L_src - 1;
            if (L_tgt > 1)
                i_src = static_cast<std::size_t>(std::lround(static_cast<double>(k_tgt - 1) * static_cast<double>(L_src - 1) /
                                                             static_cast<double>(L_tgt - 1)));
            c.pairs.emplace_back(k_tgt, i_src + 1);
        };
        if (target_layers.empty())
            for (std::size_t k = 1; k <= L_tgt; ++k) map_one(k);
        else
            for (std::size_t k : target_layers) map_one(k);
        return c;
    }

    static LayerCorrespondence identity(std::size_t L, const std::vector<std::size_t>& layers = {}) {
        LayerCorrespondence c;
        if (layers.empty())
            for (std::size_t k = 1; k <= L; ++k) c.pairs.emplace_back(k, k);
        else
            for (std::size_t k : layers) c.pairs.emplace_back(k, k);
        return c;
    }

    std::size_t source_of(std::size_t k_tgt) const {
        for (const auto& [t, s] : pairs)
            if (t == k_tgt) return s;
        throw ValidationError("no correspondence for target layer " + std::to_string(k_tgt));
    }

    void validate(std::size_t L_src, std::size_t L_tgt) const {
        if (pairs.empty()) throw ValidationError("layer correspondence is empty");
        std::set<std::size_t> seen;
        for (const auto& [t, s] : pairs) {
            if (t < 1 || t > L_tgt || s < 1 || s > L_src)
                throw ValidationError("correspondence " + std::to_string(s) + " -> " + std::to_string(t) + " is out of range");
            if (!seen.insert(t).second) throw ValidationError("target layer " + std::to_string(t) + " mapped twice");
        }
    }

    nlohmann::json to_json() const {
        nlohmann::json j = nlohmann::json::object();
        for (const auto& [t, s] : pairs) j[std::to_string(t)] = s;
        return j;
    }

    static LayerCorrespondence from_json(const nlohmann::json& j) {
        LayerCorrespondence c;
        for (const auto& [t, s] : j.items()) c.pairs.emplace_back(std::stoul(t), s.get<std::size_t>());
        std::sort(c.pairs.begin(), c.pairs.end());
        return c;
    }
};

struct ActivationCorpus {
    std::string corpus_id;
    std::string source_model;
    std::string target_model;
    LayerCorrespondence correspondence;
    std::map<std::size_t, RowMatrix> X;  // source layer -> [n, d1]
    std::map<std::size_t, RowMatrix> Y;  // target layer -> [n, d2]
    std::size_t n = 0;
};

/// Runs every text through both models and stacks the last-token states of
/// the corresponding layers row by row.
inline ActivationCorpus collect_paired_activations(const LanguageModel& src, const LanguageModel& tgt,
                                                   const std::vector<std::string>& corpus,
                                                   const LayerCorrespondence& correspondence,
                                                   std::string corpus_id = "corpus") {
    if (corpus.empty()) throw ValidationError("activation corpus is empty");
    correspondence.validate(src.config().n_layers, tgt.config().n_layers);

    ActivationCorpus out;
    out.corpus_id = std::move(corpus_id);
    out.source_model = src.id();
    out.target_model = tgt.id();
    out.correspondence = correspondence;
    out.n = corpus.size();

    CaptureSpec src_cap = CaptureSpec::last_logits(), tgt_cap = CaptureSpec::last_logits();
    for (const auto& [t, s] : correspondence.pairs) {
        if (!out.X.count(s)) {
            out.X.emplace(s, RowMatrix(static_cast<Eigen::Index>(out.n), static_cast<Eigen::Index>(src.config().hidden_dim)));
            src_cap.layers.push_back(s);
        }
        out.Y.emplace(t, RowMatrix(static_cast<Eigen::Index>(out.n), static_cast<Eigen::Index>(tgt.config().hidden_dim)));
        tgt_cap.layers.push_back(t);
    }

    for (std::size_t i = 0; i < corpus.size(); ++i) {
        const auto row = static_cast<Eigen::Index>(i);
        const TokenSequence a = src.encode(corpus[i]);
        const TokenSequence b = tgt.encode(corpus[i]);
        if (a.empty() || b.empty()) throw ValidationError("corpus text " + std::to_string(i) + " tokenizes to zero tokens");
        const auto rs = src.forward(a, nullptr, src_cap);
        for (auto& [k, m] : out.X) m.row(row) = rs.state(k).transpose();
        const auto rt = tgt.forward(b, nullptr, tgt_cap);
        for (auto& [k, m] : out.Y) m.row(row) = rt.state(k).transpose();
    }
    return out;
}

struct LinearMapSet {
    std::string source_model;
    std::string target_model;
    std::size_t source_dim = 0;
    std::size_t target_dim = 0;
    LayerCorrespondence correspondence;
    std::map<std::size_t, RowMatrix> maps;  // target layer -> F [d1, d2]
    std::map<std::size_t, double> residuals;
    double cutoff = 1e-6;
    std::string corpus_id;
    std::size_t n_samples = 0;
    std::string created;
    nlohmann::json extra = nlohmann::json::object();

    const RowMatrix& map(std::size_t k_tgt) const {
        auto it = maps.find(k_tgt);
        if (it == maps.end()) throw ValidationError("no map for target layer " + std::to_string(k_tgt));
        return it->second;
    }

    void validate() const {
        if (maps.empty()) throw ValidationError("linear map set is empty");
        for (const auto& [k, F] : maps) {
            if (static_cast<std::size_t>(F.rows()) != source_dim || static_cast<std::size_t>(F.cols()) != target_dim)
                throw ValidationError("map for layer " + std::to_string(k) + " has the wrong shape");
            if (!F.allFinite()) throw NumericalError("map for layer " + std::to_string(k) + " is not finite");
            correspondence.source_of(k);
        }
    }
};

/// One least-squares map per target layer of the corpus correspondence.
inline LinearMapSet fit_linear_map(const ActivationCorpus& corpus, double cutoff = 1e-6) {
    if (corpus.n < 1) throw ValidationError("activation corpus has no samples");
    LinearMapSet out;
    out.source_model = corpus.source_model;
    out.target_model = corpus.target_model;
    out.correspondence = corpus.correspondence;
    out.cutoff = cutoff;
    out.corpus_id = corpus.corpus_id;
    out.n_samples = corpus.n;
    for (const auto& [t, s] : corpus.correspondence.pairs) {
        const RowMatrix& X = corpus.X.at(s);
        const RowMatrix& Y = corpus.Y.at(t);
        auto sol = solve_least_squares(X, Y, cutoff);
        out.source_dim = static_cast<std::size_t>(X.cols());
        out.target_dim = static_cast<std::size_t>(Y.cols());
        out.residuals[t] = sol.residual;
        out.maps.emplace(t, std::move(sol.F));
    }
    return out;
}

/// v_hat^{k_tgt} = v^{k_src} F^{k_tgt}.
inline ConceptVector reformulate(const ConceptVector& vec, const LinearMapSet& maps) {
    if (vec.source_model != maps.source_model)
        throw ValidationError("vector comes from '" + vec.source_model + "' but the maps were fitted from '" +
                              maps.source_model + "'");
    if (vec.dim() != maps.source_dim)
        throw ValidationError("vector dimension " + std::to_string(vec.dim()) + " does not match map input dimension " +
                              std::to_string(maps.source_dim));
    ConceptVector out;
    out.concept_name = vec.concept_name;
    out.source_model = maps.target_model;
    out.template_id = vec.template_id;
    out.n_pairs = vec.n_pairs;
    out.created = vec.created;
    out.extra = vec.extra;
    out.extra["reformulated_from"] = vec.source_model;
    for (const auto& [k_tgt, F] : maps.maps) {
        const std::size_t k_src = maps.correspondence.source_of(k_tgt);
        const Vector& v = vec.layer(k_src);
        out.layers.emplace(k_tgt, (v.transpose() * F).transpose());
    }
    return out;
}

}  // namespace contrans
