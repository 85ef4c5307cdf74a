#pragma once

// Diagnostics: PCA displacement of residual states under steering, and the
// shift in next-token probabilities a state change causes through the final
// layernorm and unembedding.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/SVD>
#include <json.hpp>

#include "contrans/error.hpp"
#include "contrans/model_weights.hpp"
#include "contrans/transformer.hpp"

namespace contrans {

enum class PCAFit { joint, before, after };

struct PCAProjection {
    Eigen::MatrixXd components;  // [d, m], orthonormal columns
    Eigen::VectorXd explained_variance_ratio;
    Eigen::VectorXd mean;
    Eigen::MatrixXd points_before;  // [N, m]
    Eigen::MatrixXd points_after;   // [N, m]
    Eigen::MatrixXd arrows;         // after - before, [N, m]
    std::vector<std::string> labels;

    /// Coordinates of a direction (no mean shift) in component space.
    Eigen::VectorXd project_direction(const Vector& v) const { return components.transpose() * v.cast<double>(); }

    nlohmann::json to_json() const {
        auto rows = [](const Eigen::MatrixXd& m) {
            nlohmann::json out = nlohmann::json::array();
            for (Eigen::Index r = 0; r < m.rows(); ++r) {
                std::vector<double> row(static_cast<std::size_t>(m.cols()));
                for (Eigen::Index c = 0; c < m.cols(); ++c) row[static_cast<std::size_t>(c)] = m(r, c);
                out.push_back(row);
            }
            return out;
        };
        std::vector<double> ratios(explained_variance_ratio.data(),
                                   explained_variance_ratio.data() + explained_variance_ratio.size());
        nlohmann::json points = nlohmann::json::array();
        for (Eigen::Index i = 0; i < points_before.rows(); ++i) {
            std::vector<double> b(static_cast<std::size_t>(points_before.cols())), a(b.size()), d(b.size());
            for (Eigen::Index c = 0; c < points_before.cols(); ++c) {
                b[static_cast<std::size_t>(c)] = points_before(i, c);
                a[static_cast<std::size_t>(c)] = points_after(i, c);
                d[static_cast<std::size_t>(c)] = arrows(i, c);
            }
            points.push_back({{"label", labels[static_cast<std::size_t>(i)]}, {"before", b}, {"after", a}, {"arrow", d}});
        }
        return {{"explained_variance_ratio", ratios},
                {"components", rows(components.transpose())},
                {"points", points},
                {"n_components", components.cols()}};
    }
};

namespace detail {

inline Eigen::MatrixXd stack_rows(const std::vector<Vector>& rows) {
    Eigen::MatrixXd m(static_cast<Eigen::Index>(rows.size()), rows.empty() ? 0 : rows[0].size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i].size() != m.cols()) throw ValidationError("state vectors have inconsistent dimensions");
        m.row(static_cast<Eigen::Index>(i)) = rows[i].cast<double>().transpose();
    }
    return m;
}

}  // namespace detail

/// Principal components of the before/after populations (jointly by
/// default); both sets are projected and arrows are after - before.
inline PCAProjection pca_displacement(const std::vector<Vector>& before, const std::vector<Vector>& after,
                                      const std::vector<std::string>& labels, std::size_t m,
                                      PCAFit fit = PCAFit::joint) {
    if (before.empty()) throw ValidationError("PCA needs at least one state");
    if (before.size() != after.size()) throw ValidationError("before and after state lists differ in length");
    if (!labels.empty() && labels.size() != before.size()) throw ValidationError("one label per state is required");
    if (m < 1) throw ValidationError("PCA needs at least one component");
    const Eigen::MatrixXd B = detail::stack_rows(before);
    const Eigen::MatrixXd A = detail::stack_rows(after);
    if (A.cols() != B.cols()) throw ValidationError("before and after states differ in dimension");
    if (m > static_cast<std::size_t>(B.cols())) throw ValidationError("more components requested than dimensions");

    Eigen::MatrixXd data;
    if (fit == PCAFit::joint) {
        data.resize(B.rows() + A.rows(), B.cols());
        data << B, A;
    } else {
        data = fit == PCAFit::before ? B : A;
    }
    PCAProjection out;
    out.mean = data.colwise().mean().transpose();
    const Eigen::MatrixXd centered = data.rowwise() - out.mean.transpose();

    Eigen::BDCSVD<Eigen::MatrixXd> svd(centered, Eigen::ComputeThinV);
    const Eigen::VectorXd& s = svd.singularValues();
    const double smax = s.size() ? s[0] : 0.0;
    // States are float32; singular values below float rounding noise do not count.
    const double tol = smax * static_cast<double>(std::max(centered.rows(), centered.cols())) *
                       static_cast<double>(std::numeric_limits<float>::epsilon());
    std::size_t rank = 0;
    for (Eigen::Index i = 0; i < s.size(); ++i)
        if (s[i] > tol && s[i] > 0.0) ++rank;
    if (m > rank)
        throw NumericalError("requested " + std::to_string(m) + " components but the data has rank " + std::to_string(rank));

    const Eigen::VectorXd var = s.array().square();
    const double total = var.sum();
    out.components = svd.matrixV().leftCols(static_cast<Eigen::Index>(m));
    for (Eigen::Index c = 0; c < out.components.cols(); ++c) {
        Eigen::Index idx = 0;
        out.components.col(c).cwiseAbs().maxCoeff(&idx);
        if (out.components(idx, c) < 0) out.components.col(c) *= -1.0;  // deterministic sign
    }
    out.explained_variance_ratio = var.head(static_cast<Eigen::Index>(m)) / total;
    out.points_before = (B.rowwise() - out.mean.transpose()) * out.components;
    out.points_after = (A.rowwise() - out.mean.transpose()) * out.components;
    out.arrows = out.points_after - out.points_before;
    out.labels = labels.empty() ? std::vector<std::string>(before.size()) : labels;
    return out;
}

/// Mean squared distance between the fitted data and its rank-m
/// reconstruction.
inline double pca_reconstruction_error(const std::vector<Vector>& before, const std::vector<Vector>& after,
                                       std::size_t m) {
    const auto p = pca_displacement(before, after, {}, m);
    Eigen::MatrixXd data(static_cast<Eigen::Index>(before.size() * 2), p.mean.size());
    data << detail::stack_rows(before), detail::stack_rows(after);
    const Eigen::MatrixXd c = data.rowwise() - p.mean.transpose();
    const Eigen::MatrixXd recon = c * p.components * p.components.transpose();
    return (c - recon).squaredNorm() / static_cast<double>(data.rows());
}

struct CentroidShift {
    std::string label;
    double distance_before = 0.0;  // to the target centroid of the unsteered states
    double distance_after = 0.0;
};

/// For every non-target label, the distance of its centroid to the target
/// label's unsteered centroid, before and after steering.
inline std::vector<CentroidShift> centroid_shift(const std::vector<Vector>& before, const std::vector<Vector>& after,
                                                 const std::vector<std::string>& labels, const std::string& target) {
    if (before.size() != after.size() || before.size() != labels.size())
        throw ValidationError("states and labels must be aligned");
    auto centroid = [&](const std::vector<Vector>& states, const std::string& label) {
        Eigen::VectorXd c;
        std::size_t n = 0;
        for (std::size_t i = 0; i < states.size(); ++i) {
            if (labels[i] != label) continue;
            if (n++ == 0)
                c = states[i].cast<double>();
            else
                c += states[i].cast<double>();
        }
        if (n == 0) throw ValidationError("no states labelled '" + label + "'");
        return Eigen::VectorXd(c / static_cast<double>(n));
    };
    const Eigen::VectorXd anchor = centroid(before, target);
    std::vector<std::string> order;
    for (const auto& l : labels)
        if (l != target && std::find(order.begin(), order.end(), l) == order.end()) order.push_back(l);
    std::vector<CentroidShift> out;
    for (const auto& l : order)
        out.push_back({l, (centroid(before, l) - anchor).norm(), (centroid(after, l) - anchor).norm()});
    return out;
}

/// Mean cosine between each projected arrow and a projected direction.
inline double mean_arrow_cosine(const PCAProjection& p, const Eigen::VectorXd& direction) {
    const double dn = direction.norm();
    if (dn == 0.0 || p.arrows.rows() == 0) return 0.0;
    double sum = 0.0;
    for (Eigen::Index i = 0; i < p.arrows.rows(); ++i) {
        const double an = p.arrows.row(i).norm();
        sum += an > 0.0 ? p.arrows.row(i).dot(direction) / (an * dn) : 0.0;
    }
    return sum / static_cast<double>(p.arrows.rows());
}

struct TokenDelta {
    TokenId token = 0;
    double delta = 0.0;
};

struct TokenShiftReport {
    std::vector<std::vector<TokenDelta>> increased;  // per sentence, largest first
    std::vector<std::vector<TokenDelta>> decreased;  // per sentence, most negative first
    std::vector<std::pair<TokenId, std::size_t>> increased_counts;  // (token, sentences)
    std::vector<std::pair<TokenId, std::size_t>> decreased_counts;
    std::size_t n_sentences = 0;
    std::size_t k = 0;

    nlohmann::json to_json(const Tokenizer* tok = nullptr) const {
        auto text = [&](TokenId id) -> std::string {
            if (!tok || static_cast<std::size_t>(id) >= tok->vocab_size()) return "<" + std::to_string(id) + ">";
            try {
                return tok->decode(id);
            } catch (const Error&) {
                return "<" + std::to_string(id) + ">";
            }
        };
        auto lists = [&](const std::vector<std::vector<TokenDelta>>& all) {
            nlohmann::json out = nlohmann::json::array();
            for (const auto& sentence : all) {
                nlohmann::json s = nlohmann::json::array();
                for (const auto& d : sentence) s.push_back({{"token", d.token}, {"text", text(d.token)}, {"delta", d.delta}});
                out.push_back(s);
            }
            return out;
        };
        auto counts = [&](const std::vector<std::pair<TokenId, std::size_t>>& c) {
            nlohmann::json out = nlohmann::json::array();
            for (const auto& [t, n] : c) out.push_back({{"token", t}, {"text", text(t)}, {"sentences", n}});
            return out;
        };
        return {{"k", k},
                {"n_sentences", n_sentences},
                {"increased", lists(increased)},
                {"decreased", lists(decreased)},
                {"increased_counts", counts(increased_counts)},
                {"decreased_counts", counts(decreased_counts)}};
    }
};

inline constexpr double kZeroDelta = 1e-9;

inline std::vector<double> state_probabilities(const LanguageModel& model, const Vector& state) {
    auto lp = log_softmax(model.project_to_logits(state));
    for (double& v : lp) v = std::exp(v);
    return lp;
}

/// Per sentence, the K tokens whose probability rose most and the K whose
/// probability fell most; |delta| < 1e-9 never enters either list.
inline TokenShiftReport token_shift(const LanguageModel& model, const std::vector<Vector>& before,
                                    const std::vector<Vector>& after, std::size_t K) {
    if (K < 1) throw ValidationError("token shift needs K >= 1");
    if (before.size() != after.size()) throw ValidationError("before and after state lists differ in length");
    TokenShiftReport rep;
    rep.k = K;
    rep.n_sentences = before.size();
    std::map<TokenId, std::size_t> up, down;
    for (std::size_t i = 0; i < before.size(); ++i) {
        const auto pb = state_probabilities(model, before[i]);
        const auto pa = state_probabilities(model, after[i]);
        std::vector<TokenDelta> pos, neg;
        for (std::size_t t = 0; t < pb.size(); ++t) {
            const double d = pa[t] - pb[t];
            if (d >= kZeroDelta) pos.push_back({static_cast<TokenId>(t), d});
            if (d <= -kZeroDelta) neg.push_back({static_cast<TokenId>(t), d});
        }
        auto top = [K](std::vector<TokenDelta>& v, auto cmp) {
            const std::size_t n = std::min(K, v.size());
            std::partial_sort(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(n), v.end(), cmp);
            v.resize(n);
        };
        top(pos, [](const TokenDelta& a, const TokenDelta& b) { return a.delta > b.delta || (a.delta == b.delta && a.token < b.token); });
        top(neg, [](const TokenDelta& a, const TokenDelta& b) { return a.delta < b.delta || (a.delta == b.delta && a.token < b.token); });
        for (const auto& d : pos) ++up[d.token];
        for (const auto& d : neg) ++down[d.token];
        rep.increased.push_back(std::move(pos));
        rep.decreased.push_back(std::move(neg));
    }
    auto ranked = [](const std::map<TokenId, std::size_t>& m) {
        std::vector<std::pair<TokenId, std::size_t>> v(m.begin(), m.end());
        std::stable_sort(v.begin(), v.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
        return v;
    };
    rep.increased_counts = ranked(up);
    rep.decreased_counts = ranked(down);
    return rep;
}

}  // namespace contrans
