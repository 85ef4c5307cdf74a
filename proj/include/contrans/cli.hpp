#pragma once

// Command-line driver: refine, fit-map, transplant, eval, analyze.
// Options resolve as built-in defaults < --config JSON file < flags. Every
// written artifact embeds the resolved config and the content hashes of its
// inputs, and is named by the hash of its own timestamp-free content.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "contrans/analysis.hpp"
#include "contrans/artifact_io.hpp"
#include "contrans/classifier.hpp"
#include "contrans/concept.hpp"
#include "contrans/error.hpp"
#include "contrans/eval.hpp"
#include "contrans/linear_map.hpp"
#include "contrans/steering.hpp"
#include "contrans/transformer.hpp"

namespace contrans::cli {

enum ExitCode : int { kSuccess = 0, kUsage = 2, kRuntime = 3, kExternal = 4 };

/// Parses "all", "5", "3-7" or comma-separated mixes into sorted 1-based
/// layer indices within [1, L].
inline std::vector<std::size_t> parse_layers(const std::string& spec, std::size_t L) {
    std::vector<std::size_t> out;
    if (spec.empty() || spec == "all") {
        for (std::size_t k = 1; k <= L; ++k) out.push_back(k);
        return out;
    }
    std::set<std::size_t> chosen;
    std::stringstream ss(spec);
    std::string part;
    auto number = [&](const std::string& s) -> std::size_t {
        try {
            std::size_t used = 0;
            const long v = std::stol(s, &used);
            if (used != s.size() || v < 1) throw std::invalid_argument(s);
            return static_cast<std::size_t>(v);
        } catch (const std::exception&) {
            throw UsageError("bad layer selection '" + spec + "'");
        }
    };
    while (std::getline(ss, part, ',')) {
        const auto dash = part.find('-');
        std::size_t a, b;
        if (dash == std::string::npos) {
            a = b = number(part);
        } else {
            a = number(part.substr(0, dash));
            b = number(part.substr(dash + 1));
        }
        if (a > b) throw UsageError("bad layer range '" + part + "'");
        for (std::size_t k = a; k <= b; ++k) {
            if (k > L) throw UsageError("layer " + std::to_string(k) + " exceeds the model's " + std::to_string(L) + " layers");
            chosen.insert(k);
        }
    }
    if (chosen.empty()) throw UsageError("empty layer selection");
    return {chosen.begin(), chosen.end()};
}

/// Every option the commands understand, with its default.
inline nlohmann::json default_config() {
    return {
        {"src-model", ""},
        {"tgt-model", ""},
        {"templates", "data/templates.json"},
        {"template", "emotion"},
        {"pairs", ""},
        {"concept", ""},
        {"n-pairs", 0},
        {"corpus", "data/fitting_corpus.txt"},
        {"n-samples", 2000},
        {"correspondence", "proportional"},
        {"cutoff", 1e-6},
        {"vector", nlohmann::json::array()},
        {"map", nlohmann::json::array()},
        {"alpha", nlohmann::json::array()},
        {"alpha-grid", ""},
        {"layers", "all"},
        {"prompt", ""},
        {"max-new-tokens", 16},
        {"temperature", 0.0},
        {"task", "emotion"},
        {"data", ""},
        {"validation-data", ""},
        {"target", ""},
        {"eval-template", ""},
        {"fewshot-template", "emotion_fewshot_item"},
        {"scoring", "mean"},
        {"n-items", 0},
        {"classifier-url", ""},
        {"classifier-timeout", 10.0},
        {"classifier-retries", 2},
        {"lexicon", "data/toxic_lexicon.txt"},
        {"kind", "pca"},
        {"components", 2},
        {"top-k", 10},
        {"analysis-layer", 0},
        {"out", "artifacts"},
        {"seed", 0},
    };
}

/// Resolved options of one command invocation.
class RunConfig {
public:
    explicit RunConfig(nlohmann::json values) : v_(std::move(values)) {}

    const nlohmann::json& json() const { return v_; }

    std::string str(const std::string& key) const { return get<std::string>(key); }
    double num(const std::string& key) const { return get<double>(key); }
    std::size_t count(const std::string& key) const {
        const double d = get<double>(key);
        if (d < 0 || d != static_cast<double>(static_cast<std::size_t>(d)))
            throw UsageError("option '" + key + "' must be a non-negative integer");
        return static_cast<std::size_t>(d);
    }
    std::vector<std::string> list(const std::string& key) const {
        const auto& x = at(key);
        if (x.is_string()) return x.get<std::string>().empty() ? std::vector<std::string>{} : std::vector<std::string>{x.get<std::string>()};
        return get<std::vector<std::string>>(key);
    }
    std::vector<float> floats(const std::string& key) const {
        const auto& x = at(key);
        if (x.is_number()) return {x.get<float>()};
        std::vector<float> out;
        for (const auto& e : x) {
            if (e.is_number())
                out.push_back(e.get<float>());
            else
                out.push_back(parse_float(key, e.get<std::string>()));
        }
        return out;
    }

    /// A path option that must name an existing file.
    std::filesystem::path existing(const std::string& key) const {
        const std::string p = str(key);
        if (p.empty()) throw UsageError("--" + key + " is required");
        if (!std::filesystem::exists(p)) throw UsageError("--" + key + ": '" + p + "' does not exist");
        return p;
    }

private:
    static float parse_float(const std::string& key, const std::string& s) {
        try {
            std::size_t used = 0;
            const float f = std::stof(s, &used);
            if (used != s.size()) throw std::invalid_argument(s);
            return f;
        } catch (const std::exception&) {
            throw UsageError("option '" + key + "' expects numbers (got '" + s + "')");
        }
    }

    const nlohmann::json& at(const std::string& key) const {
        if (!v_.contains(key)) throw UsageError("unknown option '" + key + "'");
        return v_.at(key);
    }

    template <typename T>
    T get(const std::string& key) const {
        const auto& x = at(key);
        try {
            if constexpr (std::is_same_v<T, double>) {
                if (x.is_string()) return std::stod(x.get<std::string>());
            }
            return x.get<T>();
        } catch (const std::exception&) {
            throw UsageError("option '" + key + "' has the wrong type");
        }
    }

    nlohmann::json v_;
};

namespace detail {

/// Serializes with invalid UTF-8 (partial byte-level tokens) replaced.
inline std::string dump(const nlohmann::json& j, int indent = -1) {
    return j.dump(indent, ' ', false, nlohmann::json::error_handler_t::replace);
}

inline std::string short_hash(const std::string& h) { return h.substr(0, 12); }

/// Hashes the checkpoint files of a model directory.
inline nlohmann::json model_hashes(const std::filesystem::path& dir) {
    nlohmann::json j = nlohmann::json::object();
    for (const char* f : {"config.json", "model.safetensors", "tokenizer.json"})
        if (std::filesystem::exists(dir / f)) j[f] = file_hash(dir / f);
    return j;
}

inline std::string safe_name(std::string s) {
    for (char& c : s)
        if (!std::isalnum(static_cast<unsigned char>(c)) && c != '-' && c != '_' && c != '.') c = '_';
    return s;
}

/// Writes `doc` (with "created" set) to dir/<prefix>-<hash>.json, the hash
/// taken over the document without its timestamp.
inline std::filesystem::path write_json_artifact(const std::filesystem::path& dir, const std::string& prefix,
                                                 nlohmann::json doc) {
    std::filesystem::create_directories(dir);
    doc.erase("created");
    const std::string h = content_hash(dump(doc));
    doc["content_hash"] = h;
    doc["created"] = utc_timestamp();
    const auto path = dir / (safe_name(prefix) + "-" + short_hash(h) + ".json");
    std::ofstream(path) << dump(doc, 2) << "\n";
    return path;
}

inline std::vector<std::string> read_lines(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw UsageError("cannot open " + path.string());
    std::vector<std::string> out;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.find_first_not_of(" \t") != std::string::npos) out.push_back(line);
    }
    return out;
}

template <typename T>
std::vector<T> take(std::vector<T> v, std::size_t n) {
    if (n > 0 && v.size() > n) v.resize(n);
    return v;
}

}  // namespace detail

/// Shared state of one command: resolved config, loaded models and the
/// provenance accumulated while reading inputs.
class Session {
public:
    explicit Session(RunConfig cfg) : cfg_(std::move(cfg)) {}

    const RunConfig& cfg() const { return cfg_; }

    const Transformer& model(const std::string& key) {
        auto it = models_.find(key);
        if (it != models_.end()) return *it->second;
        const auto dir = cfg_.str(key);
        if (dir.empty()) throw UsageError("--" + key + " is required");
        if (!std::filesystem::is_directory(dir)) throw UsageError("--" + key + ": '" + dir + "' is not a directory");
        auto m = load_model(dir);
        inputs_[key] = detail::model_hashes(dir);
        return *models_.emplace(key, std::move(m)).first->second;
    }

    std::filesystem::path input(const std::string& key) {
        auto p = cfg_.existing(key);
        inputs_[key] = file_hash(p);
        return p;
    }

    void record_input(const std::string& key, const std::filesystem::path& p) { inputs_[key] = file_hash(p); }

    const TemplateLibrary& templates() {
        if (!templates_) templates_ = TemplateLibrary::load(input("templates"));
        return *templates_;
    }

    nlohmann::json provenance() const { return {{"config", cfg_.json()}, {"input_hashes", inputs_}}; }

    std::filesystem::path out_dir(const std::string& sub) const { return std::filesystem::path(cfg_.str("out")) / sub; }

    /// Concept vectors expressed in `target`'s space: vectors from another
    /// model go through the matching --map file.
    std::vector<ConceptVector> vectors_for(const LanguageModel& target) {
        std::vector<LinearMapSet> maps;
        const auto map_paths = cfg_.list("map");
        for (std::size_t i = 0; i < map_paths.size(); ++i) {
            if (!std::filesystem::exists(map_paths[i])) throw UsageError("--map: '" + map_paths[i] + "' does not exist");
            record_input("map." + std::to_string(i), map_paths[i]);
            maps.push_back(load_maps(map_paths[i]));
        }
        std::vector<ConceptVector> out;
        const auto vec_paths = cfg_.list("vector");
        for (std::size_t i = 0; i < vec_paths.size(); ++i) {
            if (!std::filesystem::exists(vec_paths[i])) throw UsageError("--vector: '" + vec_paths[i] + "' does not exist");
            record_input("vector." + std::to_string(i), vec_paths[i]);
            ConceptVector cv = load_vector(vec_paths[i]);
            if (cv.source_model != target.id()) {
                const LinearMapSet* chosen = nullptr;
                for (const auto& m : maps)
                    if (m.source_model == cv.source_model && m.target_model == target.id()) chosen = &m;
                if (!chosen)
                    throw UsageError("vector '" + cv.concept_name + "' comes from model '" + cv.source_model +
                                     "' but no map to '" + target.id() + "' was given; run `contrans fit-map --src-model <" +
                                     cv.source_model + "> --tgt-model <" + target.id() + ">` and pass the result with --map");
                cv = reformulate(cv, *chosen);
            }
            if (cv.dim() != target.config().hidden_dim)
                throw ValidationError("vector '" + cv.concept_name + "' has dimension " + std::to_string(cv.dim()) +
                                      ", model '" + target.id() + "' has width " + std::to_string(target.config().hidden_dim));
            out.push_back(std::move(cv));
        }
        return out;
    }

    /// Builds the plan from --vector/--map/--alpha/--layers. One --alpha
    /// applies to every vector; otherwise one per vector.
    std::optional<SteeringPlan> plan_for(const LanguageModel& target, std::optional<float> alpha_override = std::nullopt) {
        const auto vectors = vectors_for(target);
        if (vectors.empty()) return std::nullopt;
        const auto alphas = cfg_.floats("alpha");
        if (alphas.size() > 1 && alphas.size() != vectors.size())
            throw UsageError("give one --alpha, or one per --vector (" + std::to_string(vectors.size()) + ")");
        const auto layers = parse_layers(cfg_.str("layers"), target.config().n_layers);
        SteeringPlan plan(alphas.empty() ? 1.0f : alphas[0]);
        for (std::size_t i = 0; i < vectors.size(); ++i) {
            std::optional<float> a;
            if (alpha_override)
                a = *alpha_override;
            else if (alphas.size() > 1)
                a = alphas[i];
            vectors[i].add_to_plan(plan, a, layers);
        }
        plan.validate(target.config());
        return plan;
    }

private:
    RunConfig cfg_;
    std::map<std::string, std::shared_ptr<Transformer>> models_;
    std::optional<TemplateLibrary> templates_;
    nlohmann::json inputs_ = nlohmann::json::object();
};

// ------------------------------------------------------------------ commands

inline int cmd_refine(Session& s, std::ostream& out) {
    const auto& cfg = s.cfg();
    const auto& model = s.model("src-model");
    const auto pairs_path = s.input("pairs");
    std::string concept_name = cfg.str("concept");
    if (concept_name.empty()) {
        concept_name = pairs_path.stem().string();
        if (concept_name.rfind("pairs_", 0) == 0) concept_name = concept_name.substr(6);
    }
    const auto& tmpl = s.templates().get(cfg.str("template"));
    auto pairs = load_pairs(pairs_path, concept_name, tmpl.id);
    if (cfg.count("n-pairs") > 0) pairs = pairs.head(cfg.count("n-pairs"));

    ConceptVector cv = refine_concept(model, pairs, tmpl);
    cv.created = utc_timestamp();
    cv.extra = s.provenance();

    const auto dir = s.out_dir("vectors");
    std::filesystem::create_directories(dir);
    const auto tmp = dir / ".pending.safetensors";
    const std::string h = save_vector(tmp, cv);
    const auto path = dir / (detail::safe_name(concept_name + "-" + model.id()) + "-" + detail::short_hash(h) + ".safetensors");
    std::filesystem::rename(tmp, path);
    std::filesystem::rename(sidecar_path(tmp), sidecar_path(path));
    out << path.string() << "\n";
    return kSuccess;
}

inline int cmd_fit_map(Session& s, std::ostream& out) {
    const auto& cfg = s.cfg();
    const auto& src = s.model("src-model");
    const auto& tgt = s.model("tgt-model");
    const auto corpus_path = s.input("corpus");
    const auto texts = detail::take(detail::read_lines(corpus_path), cfg.count("n-samples"));
    if (texts.empty()) throw ValidationError("fitting corpus " + corpus_path.string() + " has no sentences");

    const auto layers = parse_layers(cfg.str("layers"), tgt.config().n_layers);
    LayerCorrespondence corr;
    const auto kind = cfg.str("correspondence");
    if (kind == "proportional") {
        corr = LayerCorrespondence::proportional(src.config().n_layers, tgt.config().n_layers, layers);
    } else if (kind == "identity") {
        if (src.config().n_layers != tgt.config().n_layers)
            throw UsageError("identity correspondence needs models of equal depth");
        corr = LayerCorrespondence::identity(tgt.config().n_layers, layers);
    } else {
        throw UsageError("--correspondence must be 'proportional' or 'identity'");
    }

    const auto corpus = collect_paired_activations(src, tgt, texts, corr, corpus_path.filename().string());
    LinearMapSet maps = fit_linear_map(corpus, cfg.num("cutoff"));
    maps.created = utc_timestamp();
    maps.extra = s.provenance();

    const auto dir = s.out_dir("maps");
    std::filesystem::create_directories(dir);
    const auto tmp = dir / ".pending.safetensors";
    const std::string h = save_maps(tmp, maps);
    const auto path = dir / (detail::safe_name(src.id() + "-to-" + tgt.id()) + "-" + detail::short_hash(h) + ".safetensors");
    std::filesystem::rename(tmp, path);
    std::filesystem::rename(sidecar_path(tmp), sidecar_path(path));

    nlohmann::json residuals = nlohmann::json::object();
    for (const auto& [k, r] : maps.residuals) residuals[std::to_string(k)] = r;
    out << nlohmann::json{{"path", path.string()}, {"n_samples", maps.n_samples}, {"residuals", residuals},
                          {"correspondence", maps.correspondence.to_json()}}
               .dump(2)
        << "\n";
    return kSuccess;
}

inline int cmd_transplant(Session& s, std::ostream& out) {
    const auto& cfg = s.cfg();
    const auto& model = s.model("tgt-model");
    const std::string prompt = cfg.str("prompt");
    if (prompt.empty()) throw UsageError("--prompt is required");
    if (cfg.list("vector").empty()) throw UsageError("--vector is required");
    const auto plan = s.plan_for(model);

    DecodeConfig dc;
    dc.max_new_tokens = cfg.count("max-new-tokens");
    dc.temperature = static_cast<float>(cfg.num("temperature"));
    dc.greedy = dc.temperature <= 0.0f;
    dc.seed = static_cast<std::uint64_t>(cfg.count("seed"));
    const auto ids = model.generate(model.encode(prompt), dc, plan ? &*plan : nullptr);
    out << model.tokenizer().decode(ids) << "\n";
    return kSuccess;
}

namespace detail {

struct TaskRunner {
    std::function<EvalReport(const SteeringPlan*, bool validation)> run;
    std::string metric;
    Direction direction;
};

inline TaskRunner make_task(Session& s, const LanguageModel& model) {
    const auto& cfg = s.cfg();
    const std::string task = cfg.str("task");
    const std::size_t n_items = cfg.count("n-items");
    auto data_or = [&](const char* fallback) {
        if (cfg.str("data").empty()) return std::filesystem::path(fallback);
        return s.input("data");
    };
    auto validation_path = [&]() -> std::optional<std::filesystem::path> {
        if (cfg.str("validation-data").empty()) return std::nullopt;
        return s.input("validation-data");
    };

    if (task == "emotion") {
        const std::string target = cfg.str("target");
        if (target.empty()) throw UsageError("--target (an emotion label) is required for the emotion task");
        const auto path = data_or("data/emotion/scenarios.jsonl");
        s.record_input("data", path);
        const auto ds = load_emotion_dataset(path);
        auto task_for = [&, ds](const std::vector<EmotionItem>& items) {
            EmotionTask t;
            t.items = items;
            const std::string eval_tmpl = cfg.str("eval-template").empty() ? "emotion_eval" : cfg.str("eval-template");
            t.prompt = s.templates().get(eval_tmpl);
            t.few_shot_prefix = build_few_shot(ds.fewshot, t.labels, s.templates().get(cfg.str("fewshot-template")));
            t.assign_tokens(model.tokenizer());
            return t;
        };
        // Negative scenarios only; a subset keeps every non-target label.
        auto pick = [&](const std::vector<EmotionItem>& pool) {
            std::vector<EmotionItem> v;
            for (const auto& it : pool)
                if (it.label != target) v.push_back(it);
            if (n_items == 0 || v.size() <= n_items) return v;
            std::vector<EmotionItem> out;
            for (std::size_t i = 0; out.size() < n_items; ++i) out.push_back(v[(i * v.size()) / n_items]);
            return out;
        };
        EmotionTask main = task_for(pick(ds.eval));
        std::optional<EmotionTask> val;
        if (auto vp = validation_path()) val = task_for(pick(load_emotion_dataset(*vp).eval));
        return {[&model, main, val, target](const SteeringPlan* p, bool validation) {
                    return emotion_eval(model, validation && val ? *val : main, target, p);
                },
                "token_acc", Direction::maximize};
    }
    if (task == "mc") {
        const auto path = data_or("data/mc_sample.jsonl");
        s.record_input("data", path);
        MCTask t;
        t.items = take(load_mc_items(path), n_items);
        t.prompt = s.templates().get(cfg.str("eval-template").empty() ? "tqa_plain" : cfg.str("eval-template"));
        std::optional<MCTask> val;
        if (auto vp = validation_path()) {
            val = t;
            val->items = load_mc_items(*vp);
        }
        const auto scoring = cfg.str("scoring") == "sum" ? ChoiceScoring::sum : ChoiceScoring::mean;
        if (cfg.str("scoring") != "sum" && cfg.str("scoring") != "mean") throw UsageError("--scoring must be mean or sum");
        return {[&model, t, val, scoring](const SteeringPlan* p, bool validation) {
                    return mc_eval(model, validation && val ? *val : t, p, scoring);
                },
                "accuracy", Direction::maximize};
    }
    if (task == "ppl") {
        const auto path = data_or("data/ppl_corpus.txt");
        s.record_input("data", path);
        const auto texts = take(read_lines(path), n_items);
        std::optional<std::vector<std::string>> val;
        if (auto vp = validation_path()) val = read_lines(*vp);
        return {[&model, texts, val](const SteeringPlan* p, bool validation) {
                    return perplexity(model, validation && val ? *val : texts, p);
                },
                "perplexity", Direction::minimize};
    }
    if (task == "completion") {
        const auto path = data_or("data/provocation_prompts.jsonl");
        s.record_input("data", path);
        const auto prompts = take(load_completion_items(path), n_items);
        std::optional<std::vector<CompletionItem>> val;
        if (auto vp = validation_path()) val = load_completion_items(*vp);
        std::shared_ptr<ToxicityClassifier> clf;
        if (!cfg.str("classifier-url").empty()) {
            HttpClassifier::Options o;
            o.timeout_seconds = cfg.num("classifier-timeout");
            o.retries = static_cast<int>(cfg.count("classifier-retries"));
            clf = std::make_shared<HttpClassifier>(cfg.str("classifier-url"), o);
        } else {
            clf = std::make_shared<LexiconClassifier>(LexiconClassifier::from_file(s.input("lexicon")));
        }
        CompletionOptions opts;
        opts.decode.max_new_tokens = cfg.count("max-new-tokens");
        opts.decode.temperature = static_cast<float>(cfg.num("temperature"));
        opts.decode.greedy = opts.decode.temperature <= 0.0f;
        opts.decode.seed = static_cast<std::uint64_t>(cfg.count("seed"));
        if (!cfg.str("eval-template").empty()) opts.prompt = s.templates().get(cfg.str("eval-template"));
        return {[&model, prompts, val, clf, opts](const SteeringPlan* p, bool validation) {
                    return completion_eval(model, validation && val ? *val : prompts, p, *clf, opts);
                },
                "toxic_fraction", Direction::minimize};
    }
    throw UsageError("--task must be one of emotion, mc, ppl, completion");
}

}  // namespace detail

inline int cmd_eval(Session& s, std::ostream& out) {
    const auto& cfg = s.cfg();
    const auto& model = s.model("tgt-model");
    const auto runner = detail::make_task(s, model);

    nlohmann::json grid_json = nullptr;
    std::optional<SteeringPlan> plan;
    std::optional<double> alpha;
    if (!cfg.str("alpha-grid").empty()) {
        if (cfg.list("vector").empty()) throw UsageError("--alpha-grid needs at least one --vector");
        const auto grid = AlphaGrid::parse(cfg.str("alpha-grid"));
        const auto res = alpha_grid_search(
            grid,
            [&](float a) {
                const auto p = s.plan_for(model, a);
                const auto rep = runner.run(&*p, true);
                return rep.metrics.at(runner.metric);
            },
            runner.direction);
        grid_json = {{"grid", {grid.lo, grid.hi, grid.step}}, {"objective", runner.metric},
                     {"direction", runner.direction == Direction::maximize ? "maximize" : "minimize"},
                     {"best_alpha", res.best_alpha}, {"best_value", res.best_value}, {"evaluations", res.evaluations}};
        plan = s.plan_for(model, res.best_alpha);
        alpha = res.best_alpha;
    } else {
        plan = s.plan_for(model);
        if (plan) alpha = plan->entries().empty() ? 0.0 : plan->alpha_of(plan->entries().front());
    }

    EvalReport report = runner.run(plan ? &*plan : nullptr, false);
    report.alpha = alpha;
    report.config = s.provenance()["config"];
    nlohmann::json doc = report.to_json();
    doc["input_hashes"] = s.provenance()["input_hashes"];
    doc["alpha_search"] = grid_json;
    const auto path = detail::write_json_artifact(s.out_dir("reports"), cfg.str("task") + "-" + model.id(), doc);
    out << nlohmann::json{{"path", path.string()}, {"metrics", report.metrics}, {"alpha", doc["alpha"]}}.dump(2) << "\n";
    return kSuccess;
}

inline int cmd_analyze(Session& s, std::ostream& out) {
    const auto& cfg = s.cfg();
    const auto& model = s.model("tgt-model");
    if (cfg.list("vector").empty()) throw UsageError("--vector is required");
    const auto plan = s.plan_for(model);
    if (!plan || plan->empty()) throw UsageError("the selected layers leave nothing to inject");

    const auto data = cfg.str("data").empty() ? std::filesystem::path("data/emotion/scenarios.jsonl") : s.input("data");
    s.record_input("data", data);
    const auto ds = load_emotion_dataset(data);
    auto items = ds.eval;
    if (cfg.count("n-items") > 0 && items.size() > cfg.count("n-items")) {
        std::vector<EmotionItem> sub;
        for (std::size_t i = 0; i < cfg.count("n-items"); ++i) sub.push_back(items[(i * items.size()) / cfg.count("n-items")]);
        items = sub;
    }
    const auto& tmpl = s.templates().get(cfg.str("template"));
    const std::string kind = cfg.str("kind");
    const std::size_t L = model.config().n_layers;
    std::size_t layer = cfg.count("analysis-layer");
    if (kind == "token-shift") layer = L;
    if (layer == 0) layer = *plan->layers().begin();
    if (layer > L) throw UsageError("--analysis-layer exceeds the model depth");

    std::vector<Vector> before, after, final_before, final_after;
    std::vector<std::string> labels;
    CaptureSpec cap = CaptureSpec::last_logits();
    cap.layers = {layer, L};
    for (const auto& it : items) {
        const auto ids = model.encode(tmpl.render(it.scenario));
        const auto b = model.forward(ids, nullptr, cap);
        const auto a = model.forward(ids, &*plan, cap);
        before.push_back(b.state(layer));
        after.push_back(a.state(layer));
        final_before.push_back(b.state(L));
        final_after.push_back(a.state(L));
        labels.push_back(it.label);
    }

    nlohmann::json doc = s.provenance();
    doc["kind"] = kind;
    doc["analysis_layer"] = layer;
    doc["steering"] = describe_plan(&*plan);
    if (kind == "pca") {
        const auto p = pca_displacement(before, after, labels, cfg.count("components"));
        doc["pca"] = p.to_json();
        if (auto delta = plan->delta(layer)) {
            const auto dir = p.project_direction(*delta);
            doc["projected_direction"] = std::vector<double>(dir.data(), dir.data() + dir.size());
            doc["mean_arrow_cosine"] = mean_arrow_cosine(p, dir);
        }
        // Cluster movement is measured at the final layer.
        const std::string concept_name = plan->entries().front().source;
        if (std::find(labels.begin(), labels.end(), concept_name) != labels.end()) {
            nlohmann::json shifts = nlohmann::json::array();
            for (const auto& c : centroid_shift(final_before, final_after, labels, concept_name))
                shifts.push_back({{"label", c.label}, {"distance_before", c.distance_before}, {"distance_after", c.distance_after}});
            doc["centroid_shift"] = {{"layer", L}, {"target", concept_name}, {"labels", shifts}};
        }
    } else if (kind == "token-shift") {
        doc["token_shift"] = token_shift(model, before, after, cfg.count("top-k")).to_json(&model.tokenizer());
    } else {
        throw UsageError("--kind must be pca or token-shift");
    }
    const auto path = detail::write_json_artifact(s.out_dir("analysis"), kind + "-" + model.id(), doc);
    out << path.string() << "\n";
    return kSuccess;
}

// ---------------------------------------------------------------- dispatch

namespace detail {

struct OptionSpec {
    const char* name;
    const char* help;
    bool multi;
};

inline const std::vector<OptionSpec>& option_specs() {
    static const std::vector<OptionSpec> specs = {
        {"src-model", "source checkpoint directory", false},
        {"tgt-model", "target checkpoint directory", false},
        {"templates", "prompt template file (JSON)", false},
        {"template", "template id for refinement or analysis prompts", false},
        {"pairs", "JSON-lines file of {positive, negative} pairs", false},
        {"concept", "concept label (default: from the pairs file name)", false},
        {"n-pairs", "use only the first N pairs (0 = all)", false},
        {"corpus", "fitting corpus, one sentence per line", false},
        {"n-samples", "use only the first N corpus sentences", false},
        {"correspondence", "layer correspondence: proportional or identity", false},
        {"cutoff", "relative singular-value cutoff", false},
        {"vector", "concept vector file (repeatable)", true},
        {"map", "linear map file (repeatable)", true},
        {"alpha", "steering strength (one, or one per --vector)", true},
        {"alpha-grid", "grid search lo:hi:step", false},
        {"layers", "layer selection: all, k, a-b or a comma list", false},
        {"prompt", "prompt text", false},
        {"max-new-tokens", "tokens to generate", false},
        {"temperature", "sampling temperature (0 = greedy)", false},
        {"task", "emotion, mc, ppl or completion", false},
        {"data", "task data file", false},
        {"validation-data", "data used for the alpha grid search", false},
        {"target", "target emotion label", false},
        {"eval-template", "template id for evaluation prompts", false},
        {"fewshot-template", "template id for few-shot items", false},
        {"scoring", "MC choice scoring: mean or sum", false},
        {"n-items", "evaluate at most N items (0 = all)", false},
        {"classifier-url", "HTTP toxicity classifier endpoint", false},
        {"classifier-timeout", "classifier timeout in seconds", false},
        {"classifier-retries", "classifier retries", false},
        {"lexicon", "word list for the lexicon classifier", false},
        {"kind", "analysis kind: pca or token-shift", false},
        {"components", "PCA components", false},
        {"top-k", "tokens per direction for token-shift", false},
        {"analysis-layer", "layer whose states are analysed (0 = first steered)", false},
        {"out", "artifact directory", false},
        {"seed", "random seed", false},
    };
    return specs;
}

inline const std::map<std::string, std::vector<std::string>>& command_options() {
    static const std::map<std::string, std::vector<std::string>> m = {
        {"refine", {"src-model", "templates", "template", "pairs", "concept", "n-pairs", "out", "seed"}},
        {"fit-map", {"src-model", "tgt-model", "corpus", "n-samples", "correspondence", "cutoff", "layers", "out", "seed"}},
        {"transplant", {"tgt-model", "vector", "map", "alpha", "layers", "prompt", "max-new-tokens", "temperature", "seed"}},
        {"eval", {"tgt-model", "templates", "vector", "map", "alpha", "alpha-grid", "layers", "task", "data", "validation-data",
                  "target", "eval-template", "fewshot-template", "scoring", "n-items", "max-new-tokens", "temperature",
                  "classifier-url", "classifier-timeout", "classifier-retries", "lexicon", "out", "seed"}},
        {"analyze", {"tgt-model", "templates", "template", "vector", "map", "alpha", "layers", "kind", "data", "n-items",
                     "components", "top-k", "analysis-layer", "out", "seed"}},
    };
    return m;
}

inline nlohmann::json load_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw UsageError("cannot open config file " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception&) {
        throw UsageError("config file " + path + " is not valid JSON");
    }
    if (!j.is_object()) throw UsageError("config file must hold a JSON object");
    nlohmann::json norm = nlohmann::json::object();
    for (const auto& [k, v] : j.items()) {
        std::string key = k;
        std::replace(key.begin(), key.end(), '_', '-');
        norm[key] = v;
    }
    return norm;
}

}  // namespace detail

/// Runs one command; returns the process exit code.
inline int run_cli(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    CLI::App app{"Concept transplantation between decoder-only language models", "contrans"};
    app.require_subcommand(1);
    std::string config_path;
    app.add_option("--config", config_path, "JSON config file; flags override its values");

    std::map<std::string, std::map<std::string, std::string>> single;
    std::map<std::string, std::map<std::string, std::vector<std::string>>> multi;
    std::map<std::string, CLI::App*> subs;
    const std::map<std::string, std::string> descriptions = {
        {"refine", "refine a concept vector from paired examples"},
        {"fit-map", "fit per-layer linear maps between two models"},
        {"transplant", "generate from the target model with transplanted concept vectors"},
        {"eval", "run an evaluation protocol and write a report"},
        {"analyze", "PCA displacement or token-shift analysis"},
    };
    for (const auto& [cmd, names] : detail::command_options()) {
        CLI::App* sub = app.add_subcommand(cmd, descriptions.at(cmd));
        sub->add_option("--config", config_path, "JSON config file; flags override its values");
        for (const auto& name : names) {
            const auto& spec = *std::find_if(detail::option_specs().begin(), detail::option_specs().end(),
                                             [&](const auto& s) { return name == s.name; });
            if (spec.multi)
                sub->add_option("--" + name, multi[cmd][name], spec.help);
            else
                sub->add_option("--" + name, single[cmd][name], spec.help);
        }
        subs[cmd] = sub;
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kSuccess : kUsage;
    }

    try {
        std::string cmd;
        for (const auto& [name, sub] : subs)
            if (sub->parsed()) cmd = name;

        nlohmann::json resolved = nlohmann::json::object();
        const auto defaults = default_config();
        for (const auto& name : detail::command_options().at(cmd)) resolved[name] = defaults.at(name);
        if (!config_path.empty()) {
            const auto file = detail::load_config_file(config_path);
            for (const auto& [k, v] : file.items()) {
                if (!resolved.contains(k)) throw UsageError("config key '" + k + "' does not apply to " + cmd);
                resolved[k] = v;
            }
        }
        for (const auto& name : detail::command_options().at(cmd)) {
            if (subs[cmd]->count("--" + name) == 0) continue;
            if (multi[cmd].count(name)) {
                resolved[name] = multi[cmd][name];
                continue;
            }
            const std::string& raw = single[cmd][name];
            if (defaults.at(name).is_number()) {
                try {
                    std::size_t used = 0;
                    const double d = std::stod(raw, &used);
                    if (used != raw.size()) throw std::invalid_argument(raw);
                    resolved[name] = d;
                } catch (const std::exception&) {
                    throw UsageError("--" + name + " expects a number (got '" + raw + "')");
                }
            } else {
                resolved[name] = raw;
            }
        }
        resolved["command"] = cmd;

        Session session{RunConfig(resolved)};
        if (cmd == "refine") return cmd_refine(session, out);
        if (cmd == "fit-map") return cmd_fit_map(session, out);
        if (cmd == "transplant") return cmd_transplant(session, out);
        if (cmd == "eval") return cmd_eval(session, out);
        return cmd_analyze(session, out);
    } catch (const Error& e) {
        err << "error: " << e.what() << "\n";
        switch (e.category()) {
            case ErrorCategory::usage: return kUsage;
            case ErrorCategory::runtime: return kRuntime;
            case ErrorCategory::external: return kExternal;
        }
        return kRuntime;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kRuntime;
    }
}

}  // namespace contrans::cli
