#include <gtest/gtest.h>

#include <fstream>

#include "support.hpp"

using namespace contrans;
using namespace testing_support;

namespace {

const PromptTemplate kTemplate{"emotion", "Scenario: {input}\nThe emotion of the above scenario is", std::nullopt};

ExamplePairSet fear_pairs(std::size_t n) {
    return load_pairs(data_dir() / "emotion" / "pairs_fear.jsonl", "fear", "emotion").head(n);
}

double rel_fro(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) { return (a - b).norm() / b.norm(); }

std::vector<std::string> corpus_lines(std::size_t n) {
    std::ifstream in(data_dir() / "fitting_corpus.txt");
    std::vector<std::string> out;
    std::string line;
    while (out.size() < n && std::getline(in, line))
        if (!line.empty()) out.push_back(line);
    return out;
}

}  // namespace

// ---------------------------------------------------------------- refine

TEST(Refine, IdenticalSidesGiveZero) {
    const auto model = tiny_model("r", 3, 32, 4);
    ExamplePairSet set{"same", "emotion", {{"You open a door.", "You open a door."}, {"Rain falls.", "Rain falls."}}};
    const auto cv = refine_concept(*model, set, kTemplate);
    for (const auto& [k, v] : cv.layers) EXPECT_TRUE(v.isZero(0.0f)) << "layer " << k;
}

TEST(Refine, SinglePairIsTheDifference) {
    const auto model = tiny_model("r", 3, 32, 4);
    const auto set = fear_pairs(1);
    const auto cv = refine_concept(*model, set, kTemplate);
    const auto pos = last_token_states(*model, kTemplate.render(set.pairs[0].positive));
    const auto neg = last_token_states(*model, kTemplate.render(set.pairs[0].negative, false));
    ASSERT_EQ(cv.layers.size(), 3u);
    for (std::size_t k = 1; k <= 3; ++k) EXPECT_TRUE(bitwise_equal(cv.layer(k), Vector(pos[k - 1] - neg[k - 1])));
}

TEST(Refine, MatchesDoublePrecisionMeanOfDifferences) {
    const auto model = tiny_model("r", 3, 32, 4);
    const auto set = fear_pairs(4);
    const auto cv = refine_concept(*model, set, kTemplate);
    for (std::size_t k = 1; k <= 3; ++k) {
        Eigen::VectorXd acc = Eigen::VectorXd::Zero(32);
        for (const auto& p : set.pairs) {
            const auto r_pos = model->forward(model->encode(kTemplate.render(p.positive)), nullptr, CaptureSpec::last_token_all_layers());
            const auto r_neg = model->forward(model->encode(kTemplate.render(p.negative)), nullptr, CaptureSpec::last_token_all_layers());
            acc += r_pos.state(k).cast<double>() - r_neg.state(k).cast<double>();
        }
        acc /= 4.0;
        EXPECT_LE((cv.layer(k).cast<double>() - acc).cwiseAbs().maxCoeff(), 1e-5) << "layer " << k;
    }
}

TEST(Refine, SwappingSidesNegatesExactly) {
    const auto model = tiny_model("r", 3, 32, 4);
    const auto set = fear_pairs(6);
    const auto a = refine_concept(*model, set, kTemplate);
    const auto b = refine_concept(*model, set.swapped(), kTemplate);
    for (const auto& [k, v] : a.layers) EXPECT_TRUE(bitwise_equal(Vector(-v), b.layer(k))) << "layer " << k;
}

TEST(Refine, EmptyPairSetIsRejected) {
    const auto model = tiny_model();
    EXPECT_THROW(refine_concept(*model, ExamplePairSet{"x", "emotion", {}}, kTemplate), ValidationError);
}

TEST(Refine, MissingPairFileIsUsageError) {
    EXPECT_THROW(load_pairs("/nonexistent/pairs.jsonl", "x", "t"), UsageError);
}

TEST(Templates, LibraryLoadsAndRenders) {
    const auto lib = TemplateLibrary::load(data_dir() / "templates.json");
    const auto& t = lib.get("emotion");
    EXPECT_NE(t.render("X").find("Scenario: X"), std::string::npos);
    EXPECT_THROW(lib.get("no-such-template"), UsageError);
    const auto& fs = lib.get("emotion_fewshot_item");
    EXPECT_NE(fs.render("S", true, {{"label", "fear"}}).find("fear"), std::string::npos);
}

// ---------------------------------------------------------------- least squares

TEST(LeastSquares, IdentityIsRecovered) {
    std::mt19937_64 rng(11);
    const RowMatrix X = random_matrix(100, 16, rng);
    const auto sol = solve_least_squares(X, X);
    EXPECT_LE((sol.F - RowMatrix::Identity(16, 16)).cwiseAbs().maxCoeff(), 1e-5f);
    EXPECT_EQ(sol.rank, 16u);
}

TEST(LeastSquares, ZeroTargetGivesZeroMap) {
    std::mt19937_64 rng(12);
    const RowMatrix X = random_matrix(50, 8, rng);
    const auto sol = solve_least_squares(X, RowMatrix::Zero(50, 5));
    EXPECT_TRUE(sol.F.isZero(0.0f));
    EXPECT_EQ(sol.residual, 0.0);
}

TEST(LeastSquares, PlantedMapIsRecovered) {
    std::mt19937_64 rng(13);
    const RowMatrix X = random_matrix(512, 64, rng);
    const RowMatrix Fstar = random_matrix(64, 128, rng);
    const RowMatrix Y = X * Fstar;
    const auto sol = solve_least_squares(X, Y);
    EXPECT_LE(rel_fro(sol.F.cast<double>(), Fstar.cast<double>()), 1e-4);

    // Independent route: normal equations through a Cholesky factorisation.
    const Eigen::MatrixXd Xd = X.cast<double>();
    const Eigen::MatrixXd Fne = (Xd.transpose() * Xd).ldlt().solve(Xd.transpose() * Y.cast<double>());
    EXPECT_LE(rel_fro(sol.F.cast<double>(), Fne), 1e-4);
}

TEST(LeastSquares, NormalEquationsHoldOnRandomInstances) {
    std::mt19937_64 rng(14);
    std::uniform_int_distribution<int> dim(2, 40);
    for (int trial = 0; trial < 20; ++trial) {
        const int n = dim(rng) + 10, d1 = dim(rng), d2 = dim(rng);
        Eigen::MatrixXd X = random_matrix(n, d1, rng).cast<double>();
        if (trial % 4 == 3 && d1 > 2) X.col(d1 - 1) = X.col(0) + X.col(1);  // rank deficient
        const Eigen::MatrixXd Y = random_matrix(n, d2, rng).cast<double>();
        const auto sol = solve_least_squares(X, Y);
        const Eigen::MatrixXd R = X * sol.F - Y;
        const double smax = sol.sigma_max;
        const double bound = 1e-10 * smax * (smax * sol.F.norm() + Y.norm());
        EXPECT_LE((X.transpose() * R).norm(), bound) << "trial " << trial << " (" << n << "x" << d1 << "->" << d2 << ")";
        EXPECT_NEAR(sol.residual, R.norm(), 1e-9 * (1.0 + R.norm()));
    }
}

TEST(LeastSquares, PerturbationsNeverLowerTheResidual) {
    std::mt19937_64 rng(15);
    const Eigen::MatrixXd X = random_matrix(60, 12, rng).cast<double>();
    const Eigen::MatrixXd Y = random_matrix(60, 7, rng).cast<double>();
    const auto sol = solve_least_squares(X, Y);
    for (int i = 0; i < 100; ++i) {
        const Eigen::MatrixXd E = random_matrix(12, 7, rng, 1e-3f).cast<double>();
        EXPECT_GE((X * (sol.F + E) - Y).norm(), sol.residual - 1e-12);
    }
}

TEST(LeastSquares, RefittingTheFitIsIdempotent) {
    std::mt19937_64 rng(16);
    const RowMatrix X = random_matrix(80, 10, rng);
    const RowMatrix Y = random_matrix(80, 6, rng);
    const auto first = solve_least_squares(X, Y);
    const RowMatrix Yhat = X * first.F;
    const auto second = solve_least_squares(X, Yhat);
    EXPECT_LE((second.F - first.F).cwiseAbs().maxCoeff(), 1e-6f * std::max(1.0f, first.F.cwiseAbs().maxCoeff()));
}

TEST(LeastSquares, RankDeficientGivesMinimumNorm) {
    std::mt19937_64 rng(17);
    Eigen::MatrixXd X = random_matrix(30, 6, rng).cast<double>();
    X.col(5) = X.col(2);
    const Eigen::MatrixXd Y = random_matrix(30, 3, rng).cast<double>();
    const auto sol = solve_least_squares(X, Y);
    EXPECT_EQ(sol.rank, 5u);
    const Eigen::MatrixXd pinv = X.completeOrthogonalDecomposition().pseudoInverse();
    EXPECT_LE((sol.F - pinv * Y).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(LeastSquares, DegenerateInputsAreRejected) {
    EXPECT_THROW(solve_least_squares(RowMatrix::Zero(10, 4), RowMatrix::Ones(10, 2)), NumericalError);
    EXPECT_THROW(solve_least_squares(RowMatrix::Ones(10, 4), RowMatrix::Ones(9, 2)), ValidationError);
}

// ---------------------------------------------------------------- correspondence

TEST(Correspondence, ProportionalEndpointsAndRounding) {
    const auto c = LayerCorrespondence::proportional(6, 24);
    EXPECT_EQ(c.source_of(1), 1u);
    EXPECT_EQ(c.source_of(24), 6u);
    for (std::size_t t = 1; t <= 24; ++t) {
        const double exact = static_cast<double>(t - 1) * 5.0 / 23.0;
        EXPECT_EQ(c.source_of(t), static_cast<std::size_t>(std::lround(exact)) + 1);
    }
    EXPECT_EQ(LayerCorrespondence::proportional(24, 1).source_of(1), 24u);
    EXPECT_EQ(LayerCorrespondence::proportional(5, 5).pairs, LayerCorrespondence::identity(5).pairs);
}

// ---------------------------------------------------------------- maps

TEST(Maps, CollectedShapesAndIdentity) {
    const auto model = tiny_model("m", 2, 32, 4);
    const auto texts = corpus_lines(20);
    const auto corpus = collect_paired_activations(*model, *model, texts, LayerCorrespondence::identity(2));
    ASSERT_EQ(corpus.X.size(), 2u);
    for (std::size_t k = 1; k <= 2; ++k) {
        EXPECT_EQ(corpus.X.at(k).rows(), 20);
        EXPECT_EQ(corpus.X.at(k).cols(), 32);
        EXPECT_TRUE(bitwise_equal(corpus.X.at(k), corpus.Y.at(k)));
    }
}

TEST(Maps, SelfMapIsNearIdentity) {
    const auto model = tiny_model("m", 2, 32, 4);
    const auto corpus = collect_paired_activations(*model, *model, corpus_lines(200), LayerCorrespondence::identity(2));
    const auto maps = fit_linear_map(corpus);
    for (const auto& [k, F] : maps.maps) EXPECT_LE((F - RowMatrix::Identity(32, 32)).cwiseAbs().maxCoeff(), 1e-3f);
}

TEST(Maps, CrossWidthShapes) {
    const auto src = tiny_model("a", 2, 16, 2);
    const auto tgt = tiny_model("b", 3, 32, 4);
    const auto corpus = collect_paired_activations(*src, *tgt, corpus_lines(40), LayerCorrespondence::proportional(2, 3));
    const auto maps = fit_linear_map(corpus);
    EXPECT_EQ(maps.maps.size(), 3u);
    for (const auto& [k, F] : maps.maps) {
        EXPECT_EQ(F.rows(), 16);
        EXPECT_EQ(F.cols(), 32);
        EXPECT_GE(maps.residuals.at(k), 0.0);
    }
    EXPECT_THROW(collect_paired_activations(*src, *tgt, {}, LayerCorrespondence::proportional(2, 3)), ValidationError);
}

namespace {

LinearMapSet random_maps(std::size_t d1, std::size_t d2, std::size_t L, std::mt19937_64& rng) {
    LinearMapSet m;
    m.source_model = "src";
    m.target_model = "tgt";
    m.source_dim = d1;
    m.target_dim = d2;
    m.correspondence = LayerCorrespondence::identity(L);
    for (std::size_t k = 1; k <= L; ++k)
        m.maps.emplace(k, random_matrix(static_cast<Eigen::Index>(d1), static_cast<Eigen::Index>(d2), rng));
    return m;
}

ConceptVector random_concept(std::size_t d, std::size_t L, std::mt19937_64& rng, std::string model = "src") {
    ConceptVector cv;
    cv.concept_name = "c";
    cv.source_model = std::move(model);
    for (std::size_t k = 1; k <= L; ++k) cv.layers.emplace(k, random_vector(static_cast<Eigen::Index>(d), rng));
    return cv;
}

}  // namespace

TEST(Reformulate, IdentityMapsPreserveVector) {
    std::mt19937_64 rng(21);
    auto maps = random_maps(8, 8, 2, rng);
    for (auto& [k, F] : maps.maps) F = RowMatrix::Identity(8, 8);
    const auto cv = random_concept(8, 2, rng);
    const auto out = reformulate(cv, maps);
    EXPECT_EQ(out.source_model, "tgt");
    for (const auto& [k, v] : cv.layers) EXPECT_TRUE(bitwise_equal(out.layer(k), v));
}

TEST(Reformulate, MatchesTripleLoop) {
    std::mt19937_64 rng(22);
    const auto maps = random_maps(64, 128, 3, rng);
    const auto cv = random_concept(64, 3, rng);
    const auto out = reformulate(cv, maps);
    for (std::size_t k = 1; k <= 3; ++k) {
        const auto& F = maps.map(k);
        const auto& v = cv.layer(k);
        for (int j = 0; j < 128; ++j) {
            double acc = 0.0;
            for (int i = 0; i < 64; ++i) acc += static_cast<double>(v[i]) * static_cast<double>(F(i, j));
            EXPECT_NEAR(out.layer(k)[j], acc, 1e-4 * (1.0 + std::abs(acc)));
        }
    }
}

TEST(Reformulate, IsLinear) {
    std::mt19937_64 rng(23);
    const auto maps = random_maps(16, 24, 2, rng);
    const auto u = random_concept(16, 2, rng), v = random_concept(16, 2, rng);
    ConceptVector mix = u;
    for (auto& [k, x] : mix.layers) x = 2.0f * u.layer(k) - 0.5f * v.layer(k);
    const auto ru = reformulate(u, maps), rv = reformulate(v, maps), rm = reformulate(mix, maps);
    for (std::size_t k = 1; k <= 2; ++k)
        EXPECT_LE(max_abs_diff(rm.layer(k), Vector(2.0f * ru.layer(k) - 0.5f * rv.layer(k))), 1e-4f);
}

TEST(Reformulate, MismatchesAreRejected) {
    std::mt19937_64 rng(24);
    const auto maps = random_maps(16, 24, 2, rng);
    EXPECT_THROW(reformulate(random_concept(16, 2, rng, "other"), maps), ValidationError);
    EXPECT_THROW(reformulate(random_concept(12, 2, rng), maps), ValidationError);
}
