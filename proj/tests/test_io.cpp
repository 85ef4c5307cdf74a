#include <gtest/gtest.h>

#include <fstream>

#include "support.hpp"

using namespace contrans;
using namespace testing_support;

namespace {

std::vector<char> raw_container(const std::string& header, std::size_t payload_bytes = 0) {
    std::vector<char> out(8 + header.size() + payload_bytes, '\0');
    const std::uint64_t n = header.size();
    std::memcpy(out.data(), &n, 8);
    std::copy(header.begin(), header.end(), out.begin() + 8);
    return out;
}

CheckpointError::Kind kind_of(const std::function<void()>& f) {
    try {
        f();
    } catch (const CheckpointError& e) {
        return e.kind();
    }
    ADD_FAILURE() << "expected CheckpointError";
    return CheckpointError::Kind::io;
}

}  // namespace

// ---------------------------------------------------------------- tokenizer

TEST(Tokenizer, MatchesReferenceCases) {
    std::ifstream in(fixture_dir() / "tokenizer_cases.json");
    nlohmann::json cases;
    in >> cases;
    ASSERT_GE(cases.size(), 20u);
    const auto& tok = *shared_tokenizer();
    for (const auto& c : cases) {
        const auto text = c["text"].get<std::string>();
        const auto expected = c["ids"].get<std::vector<TokenId>>();
        EXPECT_EQ(tok.encode(text), expected) << "text: " << text;
    }
}

TEST(Tokenizer, RoundTripsText) {
    const auto& tok = *shared_tokenizer();
    for (const std::string s : {"The quick brown fox.", "  leading spaces\nand\ttabs", "naïve café 東京 🙂", "x=1;y=22"})
        EXPECT_EQ(tok.decode(tok.encode(s)), s);
}

TEST(Tokenizer, EmptyStringGivesNoTokens) { EXPECT_TRUE(shared_tokenizer()->encode("").empty()); }

TEST(Tokenizer, EmptyFileIsRejected) {
    TempDir dir;
    std::ofstream(dir / "tokenizer.json").close();
    EXPECT_THROW(Tokenizer::from_file(dir / "tokenizer.json"), ValidationError);
}

TEST(Tokenizer, MergesApplyByRank) {
    const auto tok = Tokenizer::from_json(nlohmann::json::parse(R"({
        "model": {"type": "BPE", "vocab": {"a": 0, "b": 1, "c": 2, "ab": 3, "bc": 4, "abc": 5},
                  "merges": ["b c", "a b", "a bc"]},
        "pre_tokenizer": {"type": "ByteLevel", "add_prefix_space": false}
    })"));
    EXPECT_EQ(tok.encode("abc"), (TokenSequence{5}));
    EXPECT_EQ(tok.encode("ab"), (TokenSequence{3}));
    EXPECT_EQ(tok.encode("cab"), (TokenSequence{2, 3}));
}

// ---------------------------------------------------------------- tensor file

TEST(TensorFile, WriterRoundTrip) {
    TensorWriter w;
    const std::vector<float> a = {1.0f, -2.5f, 3.25f, 0.0f, 1e-7f, 6.0f};
    const std::vector<std::int32_t> b = {7, -8, 9};
    w.add_f32("a", {2, 3}, a);
    w.add_i32("b", {3}, b);
    w.set_metadata("format", "pt");
    const auto tf = TensorFile::from_bytes(w.serialize());
    EXPECT_EQ(tf.read_f32("a"), a);
    EXPECT_EQ(tf.read_i64("b"), (std::vector<std::int64_t>{7, -8, 9}));
    EXPECT_EQ(tf.info("a").shape, (std::vector<std::size_t>{2, 3}));
    EXPECT_EQ(tf.metadata().at("format"), "pt");
    EXPECT_EQ(w.serialize(), w.serialize());
}

TEST(TensorFile, CorruptHeaderLength) {
    auto bytes = raw_container("{}");
    const std::uint64_t huge = 1ull << 40;
    std::memcpy(bytes.data(), &huge, 8);
    EXPECT_EQ(kind_of([&] { TensorFile::from_bytes(bytes); }), CheckpointError::Kind::corrupt_header);
    EXPECT_EQ(kind_of([&] { TensorFile::from_bytes(std::vector<char>(5)); }), CheckpointError::Kind::corrupt_header);
}

TEST(TensorFile, HeaderIsNotJson) {
    EXPECT_EQ(kind_of([] { TensorFile::from_bytes(raw_container("{not json")); }), CheckpointError::Kind::corrupt_header);
}

TEST(TensorFile, ByteLengthDisagreesWithShape) {
    const auto bytes = raw_container(R"({"w": {"dtype": "F32", "shape": [2, 3], "data_offsets": [0, 20]}})", 20);
    EXPECT_EQ(kind_of([&] { TensorFile::from_bytes(bytes); }), CheckpointError::Kind::corrupt_header);
}

TEST(TensorFile, OffsetsPastEnd) {
    const auto bytes = raw_container(R"({"w": {"dtype": "F32", "shape": [4], "data_offsets": [0, 16]}})", 8);
    EXPECT_EQ(kind_of([&] { TensorFile::from_bytes(bytes); }), CheckpointError::Kind::corrupt_header);
}

TEST(TensorFile, MissingTensor) {
    TensorWriter w;
    const std::vector<float> v = {1.0f};
    w.add_f32("present", {1}, v);
    const auto tf = TensorFile::from_bytes(w.serialize());
    EXPECT_EQ(kind_of([&] { tf.read_f32("absent"); }), CheckpointError::Kind::missing_tensor);
}

TEST(TensorFile, UnsupportedDtype) {
    const auto bytes = raw_container(R"({"w": {"dtype": "C64", "shape": [2], "data_offsets": [0, 16]}})", 16);
    const auto tf = TensorFile::from_bytes(bytes);
    EXPECT_EQ(kind_of([&] { tf.read_f32("w"); }), CheckpointError::Kind::unsupported_dtype);
    const auto ints = raw_container(R"({"i": {"dtype": "I32", "shape": [2], "data_offsets": [0, 8]}})", 8);
    EXPECT_EQ(kind_of([&] { TensorFile::from_bytes(ints).read_f32("i"); }), CheckpointError::Kind::unsupported_dtype);
}

TEST(TensorFile, HalfPrecisionUpcasts) {
    // 1.0, -2.0, 0.5 as IEEE half and bfloat16.
    const std::uint16_t half[] = {0x3C00, 0xC000, 0x3800};
    const std::uint16_t bf[] = {0x3F80, 0xC000, 0x3F00};
    auto bytes = raw_container(
        R"({"b": {"dtype": "BF16", "shape": [3], "data_offsets": [6, 12]}, "h": {"dtype": "F16", "shape": [3], "data_offsets": [0, 6]}})");
    const std::size_t base = bytes.size();
    bytes.resize(base + 12);
    std::memcpy(bytes.data() + base, half, 6);
    std::memcpy(bytes.data() + base + 6, bf, 6);
    const auto tf = TensorFile::from_bytes(bytes);
    EXPECT_EQ(tf.read_f32("h"), (std::vector<float>{1.0f, -2.0f, 0.5f}));
    EXPECT_EQ(tf.read_f32("b"), (std::vector<float>{1.0f, -2.0f, 0.5f}));
}

// ---------------------------------------------------------------- checkpoints

TEST(Checkpoint, SyntheticRoundTrip) {
    TempDir dir;
    const auto cfg = synthetic::tiny_config(shared_tokenizer()->vocab_size(), 2, 16, 2);
    synthetic::write_checkpoint(dir.path(), cfg, tokenizer_path());
    const auto model = load_model(dir.path());
    EXPECT_EQ(model->config().n_layers, 2u);
    EXPECT_EQ(model->config().hidden_dim, 16u);
    const auto direct = synthetic::make_weights(cfg);
    const auto loaded = load_checkpoint(dir.path());
    EXPECT_TRUE(bitwise_equal(loaded.weights->layers[1].mlp_out, direct.layers[1].mlp_out));
}

TEST(Checkpoint, ConfigShapeMismatch) {
    TempDir dir;
    auto cfg = synthetic::tiny_config(shared_tokenizer()->vocab_size(), 2, 16, 2);
    synthetic::write_checkpoint(dir.path(), cfg, tokenizer_path());
    cfg.intermediate_dim = 48;
    std::ofstream(dir / "config.json") << config_to_json(cfg).dump();
    EXPECT_EQ(kind_of([&] { load_checkpoint(dir.path()); }), CheckpointError::Kind::shape_mismatch);
}

TEST(Checkpoint, MissingWeightFile) {
    TempDir dir;
    const auto cfg = synthetic::tiny_config(shared_tokenizer()->vocab_size(), 2, 16, 2);
    synthetic::write_checkpoint(dir.path(), cfg, tokenizer_path());
    std::filesystem::remove(dir / "model.safetensors");
    EXPECT_EQ(kind_of([&] { load_checkpoint(dir.path()); }), CheckpointError::Kind::io);
}

TEST(Checkpoint, HuggingFaceConfigKeys) {
    const auto cfg = config_from_json(nlohmann::json::parse(R"({
        "hidden_size": 512, "intermediate_size": 2048, "num_attention_heads": 8, "num_hidden_layers": 6,
        "vocab_size": 50304, "max_position_embeddings": 2048, "rotary_pct": 0.25, "rotary_emb_base": 10000,
        "layer_norm_eps": 1e-5, "use_parallel_residual": true, "tie_word_embeddings": false})"));
    EXPECT_EQ(cfg.head_dim, 64u);
    EXPECT_EQ(cfg.rotary_dims(), 16u);
    EXPECT_TRUE(cfg.parallel_residual);
}

// ---------------------------------------------------------------- artifacts

namespace {

ConceptVector sample_vector() {
    std::mt19937_64 rng(3);
    ConceptVector cv;
    cv.concept_name = "fear";
    cv.source_model = "m";
    cv.template_id = "emotion";
    cv.n_pairs = 4;
    cv.created = "2026-01-01T00:00:00Z";
    for (std::size_t k = 1; k <= 3; ++k) cv.layers.emplace(k, random_vector(8, rng));
    return cv;
}

}  // namespace

TEST(Artifacts, VectorRoundTripIsBitwise) {
    TempDir dir;
    auto cv = sample_vector();
    cv.extra["config"] = {{"seed", 0}};
    save_vector(dir / "v.safetensors", cv);
    const auto back = load_vector(dir / "v.safetensors");
    EXPECT_EQ(back.concept_name, cv.concept_name);
    EXPECT_EQ(back.n_pairs, cv.n_pairs);
    EXPECT_EQ(back.extra["config"]["seed"], 0);
    for (const auto& [k, v] : cv.layers) EXPECT_TRUE(bitwise_equal(back.layer(k), v));
}

TEST(Artifacts, MapRoundTripIsBitwise) {
    TempDir dir;
    std::mt19937_64 rng(5);
    LinearMapSet m;
    m.source_model = "a";
    m.target_model = "b";
    m.source_dim = 4;
    m.target_dim = 6;
    m.correspondence = LayerCorrespondence::proportional(2, 3);
    for (const auto& [t, s] : m.correspondence.pairs) {
        m.maps.emplace(t, random_matrix(4, 6, rng));
        m.residuals[t] = 0.5 * static_cast<double>(t);
    }
    save_maps(dir / "m.safetensors", m);
    const auto back = load_maps(dir / "m.safetensors");
    EXPECT_EQ(back.correspondence.pairs, m.correspondence.pairs);
    for (const auto& [k, F] : m.maps) EXPECT_TRUE(bitwise_equal(back.map(k), F));
    EXPECT_EQ(back.residuals, m.residuals);
}

TEST(Artifacts, MissingConceptFieldIsRejected) {
    TempDir dir;
    save_vector(dir / "v.safetensors", sample_vector());
    nlohmann::json side;
    std::ifstream(dir / "v.safetensors.json") >> side;
    side.erase("concept");
    std::ofstream(dir / "v.safetensors.json") << side.dump();
    EXPECT_THROW(load_vector(dir / "v.safetensors"), ValidationError);
}

TEST(Artifacts, VersionMismatchIsRejected) {
    TempDir dir;
    save_vector(dir / "v.safetensors", sample_vector());
    nlohmann::json side;
    std::ifstream(dir / "v.safetensors.json") >> side;
    side["format_version"] = kArtifactFormatVersion + 1;
    std::ofstream(dir / "v.safetensors.json") << side.dump();
    EXPECT_THROW(load_vector(dir / "v.safetensors"), ValidationError);
}

TEST(Artifacts, CorruptPayloadIsRejected) {
    TempDir dir;
    save_vector(dir / "v.safetensors", sample_vector());
    {
        std::fstream f(dir / "v.safetensors", std::ios::in | std::ios::out | std::ios::binary);
        f.seekp(-3, std::ios::end);
        f.put('\x7f');
    }
    EXPECT_THROW(load_vector(dir / "v.safetensors"), ValidationError);
}

TEST(Artifacts, ContentHashIsGitBlobHash) {
    // `printf 'hello\n' | git hash-object --stdin`
    EXPECT_EQ(content_hash("hello\n"), "ce013625030ba8dba906f756967f9e9ca394464a");
    EXPECT_EQ(content_hash(""), "e69de29bb2d1d6434b8b29ae775ad8c2e48c5391");
}
