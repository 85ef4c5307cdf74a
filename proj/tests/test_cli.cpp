#include <gtest/gtest.h>

#include <fstream>
#include <sstream>
#include <sys/wait.h>

#include "support.hpp"

#ifndef CONTRANS_CLI_PATH
#define CONTRANS_CLI_PATH "contrans"
#endif

using namespace contrans;
using namespace testing_support;

namespace {

struct RunResult {
    int code = -1;
    std::string out;
    std::string err;
};

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::string quote(const std::string& s) {
    std::string q = "'";
    for (char c : s) q += c == '\'' ? std::string("'\\''") : std::string(1, c);
    return q + "'";
}

std::string trim(std::string s) {
    while (!s.empty() && (s.back() == '\n' || s.back() == ' ')) s.pop_back();
    return s;
}

class CliTest : public ::testing::Test {
protected:
    static void SetUpTestSuite() {
        dir_ = new TempDir;
        auto small = synthetic::tiny_config(shared_tokenizer()->vocab_size(), 4, 32, 4);
        synthetic::write_checkpoint(*dir_ / "small", small, tokenizer_path(), "cli-a");
        auto wide = synthetic::tiny_config(shared_tokenizer()->vocab_size(), 2, 48, 4);
        synthetic::write_checkpoint(*dir_ / "wide", wide, tokenizer_path(), "cli-b");
        std::ofstream(*dir_ / "empty.txt");
    }
    static void TearDownTestSuite() {
        delete dir_;
        dir_ = nullptr;
    }

    static std::string path(const std::string& rel) { return (*dir_ / rel).string(); }

    static RunResult run(const std::vector<std::string>& args) {
        static int n = 0;
        const auto out = *dir_ / ("stdout-" + std::to_string(n));
        const auto err = *dir_ / ("stderr-" + std::to_string(n++));
        std::string cmd = "cd " + quote(source_dir().string()) + " && " + quote(CONTRANS_CLI_PATH);
        for (const auto& a : args) cmd += " " + quote(a);
        cmd += " >" + quote(out.string()) + " 2>" + quote(err.string());
        const int status = std::system(cmd.c_str());
        RunResult r;
        r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
        r.out = slurp(out);
        r.err = slurp(err);
        return r;
    }

    static std::string refine(const std::string& model, const std::string& out) {
        const auto r = run({"refine", "--src-model", path(model), "--pairs", "data/emotion/pairs_fear.jsonl", "--n-pairs", "6",
                            "--out", path(out)});
        EXPECT_EQ(r.code, 0) << r.err;
        return trim(r.out);
    }

    static TempDir* dir_;
};

TempDir* CliTest::dir_ = nullptr;

}  // namespace

TEST_F(CliTest, ExitCodes) {
    EXPECT_EQ(run({"--help"}).code, 0);
    EXPECT_EQ(run({}).code, 2);
    EXPECT_EQ(run({"frobnicate"}).code, 2);
    EXPECT_EQ(run({"refine", "--pairs", "data/emotion/pairs_fear.jsonl"}).code, 2);
    EXPECT_EQ(run({"refine", "--src-model", path("missing"), "--pairs", "data/emotion/pairs_fear.jsonl"}).code, 2);
    EXPECT_EQ(run({"refine", "--src-model", path("small"), "--pairs", path("nope.jsonl")}).code, 2);
    EXPECT_EQ(run({"transplant", "--tgt-model", path("small"), "--vector", path("nope.safetensors"), "--prompt", "x"}).code, 2);
    EXPECT_EQ(run({"fit-map", "--src-model", path("small"), "--tgt-model", path("small"), "--correspondence", "odd"}).code, 2);
}

TEST_F(CliTest, ConfigFileAndFlagPrecedence) {
    std::ofstream(path("bad.json")) << "{\"src_model\": ";
    EXPECT_EQ(run({"refine", "--config", path("bad.json")}).code, 2);
    std::ofstream(path("wrong-key.json")) << R"({"prompt": "hi"})";
    EXPECT_EQ(run({"refine", "--config", path("wrong-key.json"), "--src-model", path("small"), "--pairs",
                   "data/emotion/pairs_fear.jsonl"})
                  .code,
              2);
    std::ofstream(path("cfg.json")) << nlohmann::json{{"src_model", path("missing")},
                                                      {"pairs", "data/emotion/pairs_fear.jsonl"},
                                                      {"n_pairs", 4},
                                                      {"out", path("cfg-out")}}
                                           .dump();
    EXPECT_EQ(run({"refine", "--config", path("cfg.json")}).code, 2);
    const auto r = run({"refine", "--config", path("cfg.json"), "--src-model", path("small")});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_EQ(load_vector(trim(r.out)).n_pairs, 4u);
}

TEST_F(CliTest, RefineRerunIsByteIdentical) {
    const auto first = refine("small", "refine-out");
    ASSERT_TRUE(std::filesystem::exists(first));
    const auto payload = slurp(first);
    const auto second = refine("small", "refine-out");
    EXPECT_EQ(first, second);
    EXPECT_EQ(payload, slurp(second));
    const auto cv = load_vector(first);
    EXPECT_EQ(cv.concept_name, "fear");
    EXPECT_EQ(cv.n_pairs, 6u);
    EXPECT_EQ(cv.layers.size(), 4u);
}

TEST_F(CliTest, CrossModelVectorWithoutMapIsRejected) {
    const auto vec = refine("small", "cross-out");
    const auto r = run({"transplant", "--tgt-model", path("wide"), "--vector", vec, "--alpha", "2", "--prompt", "Hello"});
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.err.find("fit-map"), std::string::npos) << r.err;
    EXPECT_NE(r.err.find("--map"), std::string::npos) << r.err;
}

TEST_F(CliTest, SelfMapIsNearIdentity) {
    const auto r = run({"fit-map", "--src-model", path("small"), "--tgt-model", path("small"), "--n-samples", "400", "--out",
                        path("map-out")});
    ASSERT_EQ(r.code, 0) << r.err;
    const auto j = nlohmann::json::parse(r.out);
    const auto maps = load_maps(j["path"].get<std::string>());
    ASSERT_EQ(maps.maps.size(), 4u);
    for (const auto& [k, F] : maps.maps) {
        const RowMatrix I = RowMatrix::Identity(32, 32);
        EXPECT_LE((F - I).cwiseAbs().maxCoeff(), 1e-3f) << "layer " << k;
    }
}

TEST_F(CliTest, CrossModelTransplantThroughMap) {
    const auto vec = refine("small", "xfer-out");
    const auto fit = run({"fit-map", "--src-model", path("small"), "--tgt-model", path("wide"), "--n-samples", "200", "--out",
                          path("xfer-out")});
    ASSERT_EQ(fit.code, 0) << fit.err;
    const auto map = nlohmann::json::parse(fit.out)["path"].get<std::string>();
    const auto r = run({"transplant", "--tgt-model", path("wide"), "--vector", vec, "--map", map, "--alpha", "3", "--prompt",
                        "The night was", "--max-new-tokens", "4"});
    EXPECT_EQ(r.code, 0) << r.err;
    EXPECT_FALSE(trim(r.out).empty());
}

TEST_F(CliTest, EmptyCorpusFails) {
    const auto r = run({"fit-map", "--src-model", path("small"), "--tgt-model", path("small"), "--corpus", path("empty.txt"),
                        "--out", path("empty-out")});
    EXPECT_EQ(r.code, 3);
    EXPECT_NE(r.err.find("no sentences"), std::string::npos) << r.err;
}

TEST_F(CliTest, ZeroAlphaTransplantMatchesUnsteered) {
    const auto vec = refine("small", "zero-out");
    const std::string prompt = "She opened the door and";
    const auto r = run({"transplant", "--tgt-model", path("small"), "--vector", vec, "--alpha", "0", "--prompt", prompt,
                        "--max-new-tokens", "8"});
    ASSERT_EQ(r.code, 0) << r.err;
    const auto model = load_model(path("small"));
    DecodeConfig dc;
    dc.max_new_tokens = 8;
    const auto ids = model->generate(model->encode(prompt), dc, nullptr);
    EXPECT_EQ(r.out, model->tokenizer().decode(ids) + "\n");
}

TEST_F(CliTest, EvalRerunGivesIdenticalReport) {
    const auto vec = refine("small", "eval-out");
    const std::vector<std::string> args = {"eval", "--tgt-model", path("small"), "--vector", vec, "--task", "emotion",
                                           "--target", "fear", "--alpha-grid", "0:2:1", "--n-items", "6",
                                           "--max-new-tokens", "1", "--out", path("eval-out")};
    const auto a = run(args);
    ASSERT_EQ(a.code, 0) << a.err;
    const auto ja = nlohmann::json::parse(a.out);
    auto doc_a = nlohmann::json::parse(slurp(ja["path"].get<std::string>()));
    const auto b = run(args);
    ASSERT_EQ(b.code, 0) << b.err;
    const auto jb = nlohmann::json::parse(b.out);
    auto doc_b = nlohmann::json::parse(slurp(jb["path"].get<std::string>()));
    EXPECT_EQ(ja["path"], jb["path"]);
    ASSERT_TRUE(doc_a.contains("created"));
    doc_a.erase("created");
    doc_b.erase("created");
    EXPECT_EQ(doc_a, doc_b);
    EXPECT_TRUE(doc_a.contains("config"));
    EXPECT_TRUE(doc_a.contains("input_hashes"));
    EXPECT_TRUE(doc_a.contains("alpha_search"));
    EXPECT_EQ(doc_a["config"]["command"], "eval");
}

TEST_F(CliTest, AnalyzeWritesPlotData) {
    const auto vec = refine("small", "analyze-out");
    for (const std::string kind : {"pca", "token-shift"}) {
        const auto r = run({"analyze", "--tgt-model", path("small"), "--vector", vec, "--alpha", "4", "--layers", "2",
                            "--kind", kind, "--n-items", "12", "--out", path("analyze-out")});
        ASSERT_EQ(r.code, 0) << r.err;
        const auto doc = nlohmann::json::parse(slurp(trim(r.out)));
        if (kind == "pca") {
            EXPECT_EQ(doc["analysis_layer"], 2);
            EXPECT_GT(doc["mean_arrow_cosine"].get<double>(), 0.99);
            EXPECT_EQ(doc["pca"]["points"].size(), 12u);
        } else {
            EXPECT_EQ(doc["token_shift"]["n_sentences"], 12);
        }
    }
}
