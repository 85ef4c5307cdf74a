#pragma once

// Measurement protocols: emotion Token/Logit accuracy, multiple-choice
// likelihood accuracy, perplexity, classifier-scored completions and alpha
// grid search. Every evaluation returns an EvalReport whose aggregate
// metrics can be recomputed from its per-item records.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <future>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "contrans/classifier.hpp"
#include "contrans/concept.hpp"
#include "contrans/error.hpp"
#include "contrans/steering.hpp"
#include "contrans/transformer.hpp"

namespace contrans {

inline const std::vector<std::string>& emotion_labels() {
    static const std::vector<std::string> labels = {"happiness", "sadness", "anger", "fear", "surprise", "disgust"};
    return labels;
}

struct EvalReport {
    std::string task;
    std::map<std::string, double> metrics;
    nlohmann::json items = nlohmann::json::array();
    nlohmann::json steering = nullptr;
    std::vector<std::string> model_ids;
    std::optional<double> alpha;
    nlohmann::json config = nlohmann::json::object();

    nlohmann::json to_json() const {
        nlohmann::json j = {{"task", task}, {"metrics", metrics}, {"items", items}, {"steering", steering},
                            {"model_ids", model_ids}, {"config", config}};
        j["alpha"] = alpha ? nlohmann::json(*alpha) : nlohmann::json(nullptr);
        return j;
    }

    static EvalReport from_json(const nlohmann::json& j) {
        EvalReport r;
        r.task = j.at("task").get<std::string>();
        r.metrics = j.at("metrics").get<std::map<std::string, double>>();
        r.items = j.at("items");
        r.steering = j.value("steering", nlohmann::json(nullptr));
        r.model_ids = j.value("model_ids", std::vector<std::string>{});
        if (j.contains("alpha") && !j["alpha"].is_null()) r.alpha = j["alpha"].get<double>();
        r.config = j.value("config", nlohmann::json::object());
        return r;
    }
};

/// Summary of a plan for reports: one record per entry.
inline nlohmann::json describe_plan(const SteeringPlan* plan) {
    if (!plan) return nullptr;
    nlohmann::json out = nlohmann::json::array();
    for (const auto& e : plan->entries())
        out.push_back({{"layer", e.layer}, {"source", e.source}, {"alpha", plan->alpha_of(e)},
                       {"norm", static_cast<double>(e.vector.norm())}});
    return out;
}

namespace detail {

inline double fraction(std::size_t hits, std::size_t total) {
    return total ? static_cast<double>(hits) / static_cast<double>(total) : 0.0;
}

}  // namespace detail

/// Aggregates implied by the per-item records of `report`.
inline std::map<std::string, double> recompute_metrics(const EvalReport& report) {
    std::map<std::string, double> m;
    const auto& items = report.items;
    auto count = [&](const char* key) {
        std::size_t n = 0;
        for (const auto& it : items)
            if (it.value(key, false)) ++n;
        return n;
    };
    if (report.task == "emotion") {
        m["token_acc"] = detail::fraction(count("token_hit"), items.size());
        m["logit_acc"] = detail::fraction(count("logit_hit"), items.size());
        m["n_items"] = static_cast<double>(items.size());
    } else if (report.task == "mc") {
        m["accuracy"] = detail::fraction(count("correct"), items.size());
        m["n_items"] = static_cast<double>(items.size());
    } else if (report.task == "perplexity") {
        double nll = 0.0;
        std::size_t n = 0;
        for (const auto& it : items) {
            nll += it.at("nll_sum").get<double>();
            n += it.at("n_predicted").get<std::size_t>();
        }
        m["perplexity"] = std::exp(nll / static_cast<double>(n));
        m["mean_nll"] = nll / static_cast<double>(n);
        m["n_tokens"] = static_cast<double>(n);
    } else if (report.task == "completion") {
        std::size_t scored = 0, toxic = 0, omitted = 0;
        for (const auto& it : items) {
            if (it.at("omitted").get<bool>()) {
                ++omitted;
                continue;
            }
            ++scored;
            if (it.at("toxic").get<bool>()) ++toxic;
        }
        m["toxic_fraction"] = detail::fraction(toxic, scored);
        m["n_scored"] = static_cast<double>(scored);
        m["n_omitted"] = static_cast<double>(omitted);
    } else {
        throw ValidationError("no recomputation rule for task '" + report.task + "'");
    }
    return m;
}

// ---------------------------------------------------------------- emotion

struct EmotionItem {
    std::string scenario;
    std::string label;
};

struct EmotionTask {
    std::vector<std::string> labels = emotion_labels();
    std::vector<EmotionItem> items;
    std::string few_shot_prefix;
    PromptTemplate prompt;  // needs {input}; may use {few_shot}
    std::map<std::string, TokenId> canonical;
    std::map<std::string, std::vector<TokenId>> aliases;

    std::string render(const std::string& scenario) const {
        return prompt.render(scenario, true, {{"few_shot", few_shot_prefix}});
    }

    bool matches(const std::string& label, TokenId id) const {
        if (canonical.at(label) == id) return true;
        auto it = aliases.find(label);
        return it != aliases.end() && std::find(it->second.begin(), it->second.end(), id) != it->second.end();
    }

    /// Alias sets (canonical ids included) must not overlap across labels.
    void validate() const {
        std::map<TokenId, std::string> owner;
        for (const auto& l : labels) {
            if (!canonical.count(l)) throw ValidationError("emotion '" + l + "' has no canonical token");
            std::vector<TokenId> ids = {canonical.at(l)};
            if (aliases.count(l)) ids.insert(ids.end(), aliases.at(l).begin(), aliases.at(l).end());
            for (TokenId id : ids) {
                auto [it, fresh] = owner.emplace(id, l);
                if (!fresh && it->second != l)
                    throw ValidationError("token " + std::to_string(id) + " is claimed by both '" + it->second + "' and '" + l + "'");
            }
        }
        for (const auto& it : items)
            if (std::find(labels.begin(), labels.end(), it.label) == labels.end())
                throw ValidationError("scenario has unknown label '" + it.label + "'");
    }

    /// Canonical id: first token of " label". Aliases: first tokens of
    /// "label", " Label" and "Label" when they differ.
    void assign_tokens(const Tokenizer& tok) {
        canonical.clear();
        aliases.clear();
        for (const auto& l : labels) {
            const auto ids = tok.encode(" " + l);
            if (ids.empty()) throw ValidationError("label '" + l + "' tokenizes to nothing");
            canonical[l] = ids.front();
            std::string cap = l;
            cap[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(cap[0])));
            for (const auto& variant : {l, " " + cap, cap}) {
                const auto v = tok.encode(variant);
                if (!v.empty() && v.front() != ids.front() &&
                    std::find(aliases[l].begin(), aliases[l].end(), v.front()) == aliases[l].end())
                    aliases[l].push_back(v.front());
            }
        }
        // Drop aliases shared between labels (short prefixes such as "s").
        std::map<TokenId, int> uses;
        for (const auto& l : labels) {
            ++uses[canonical[l]];
            for (TokenId id : aliases[l]) ++uses[id];
        }
        for (auto& [l, ids] : aliases)
            ids.erase(std::remove_if(ids.begin(), ids.end(), [&](TokenId id) { return uses[id] > 1; }), ids.end());
    }
};

struct EmotionDataset {
    std::vector<EmotionItem> refine, eval, fewshot;
};

/// JSON lines of {"scenario", "label", "split"}; rows without a split count
/// as evaluation items.
inline EmotionDataset load_emotion_dataset(const std::filesystem::path& path) {
    EmotionDataset ds;
    for (const auto& row : detail::read_jsonl(path)) {
        if (!row.contains("scenario") || !row.contains("label"))
            throw ValidationError(path.string() + ": every line needs 'scenario' and 'label'");
        EmotionItem it{row["scenario"].get<std::string>(), row["label"].get<std::string>()};
        const std::string split = row.value("split", "eval");
        if (split == "refine")
            ds.refine.push_back(std::move(it));
        else if (split == "fewshot")
            ds.fewshot.push_back(std::move(it));
        else
            ds.eval.push_back(std::move(it));
    }
    return ds;
}

/// One rendered example per label, in label order.
inline std::string build_few_shot(const std::vector<EmotionItem>& pool, const std::vector<std::string>& labels,
                                  const PromptTemplate& item_template) {
    std::string out;
    for (const auto& l : labels)
        for (const auto& it : pool)
            if (it.label == l) {
                out += item_template.render(it.scenario, true, {{"label", l}});
                break;
            }
    return out;
}

inline bool is_blank(const std::string& s) {
    return std::all_of(s.begin(), s.end(), [](char c) { return std::isspace(static_cast<unsigned char>(c)); });
}

struct EmotionEvalOptions {
    std::size_t max_new_tokens = 4;  // budget for skipping whitespace tokens
};

/// Token/Logit accuracy for `target` over the scenarios of the other labels.
inline EvalReport emotion_eval(const LanguageModel& model, const EmotionTask& task, const std::string& target,
                               const SteeringPlan* steering, const EmotionEvalOptions& opts = {}) {
    task.validate();
    if (!task.canonical.count(target)) throw ValidationError("unknown target emotion '" + target + "'");
    EvalReport report;
    report.task = "emotion";
    report.model_ids = {model.id()};
    report.steering = describe_plan(steering);
    report.config = {{"target", target}, {"max_new_tokens", opts.max_new_tokens}};

    std::vector<TokenId> six;
    for (const auto& l : task.labels) six.push_back(task.canonical.at(l));

    for (const auto& item : task.items) {
        if (item.label == target) continue;
        const TokenSequence prompt = model.encode(task.render(item.scenario));
        const auto r = model.forward(prompt, steering, CaptureSpec::last_logits());
        const Vector logits = r.last_logits();

        std::size_t best = 0;
        for (std::size_t i = 1; i < six.size(); ++i)
            if (logits[six[i]] > logits[six[best]]) best = i;

        // Greedy decoding starts with the argmax of these logits; only a
        // whitespace first token needs further decoding.
        Eigen::Index argmax = 0;
        logits.maxCoeff(&argmax);
        TokenId first = static_cast<TokenId>(argmax);
        std::string first_text = model.tokenizer().decode(first);
        if (is_blank(first_text) && opts.max_new_tokens > 1) {
            DecodeConfig dc;
            dc.max_new_tokens = opts.max_new_tokens;
            for (TokenId t : model.generate(prompt, dc, steering)) {
                first = t;
                first_text = model.tokenizer().decode(t);
                if (!is_blank(first_text)) break;
            }
        }
        const bool token_hit = !is_blank(first_text) && task.matches(target, first);
        report.items.push_back({{"scenario", item.scenario},
                                {"label", item.label},
                                {"first_token", first},
                                {"first_token_text", first_text},
                                {"token_hit", token_hit},
                                {"logit_prediction", task.labels[best]},
                                {"logit_hit", task.labels[best] == target}});
    }
    if (report.items.empty()) throw ValidationError("no negative scenarios for target '" + target + "'");
    report.metrics = recompute_metrics(report);
    return report;
}

// --------------------------------------------------------------------- mc

struct MCItem {
    std::string question;
    std::vector<std::string> choices;
    std::size_t correct = 0;
};

struct MCTask {
    std::vector<MCItem> items;
    PromptTemplate prompt{"tqa_plain", "Q: {input}\nA:", std::nullopt};

    void validate() const {
        for (const auto& it : items) {
            if (it.choices.size() < 2) throw ValidationError("MC item '" + it.question + "' has fewer than two choices");
            if (it.correct >= it.choices.size()) throw ValidationError("MC item '" + it.question + "' has an invalid correct index");
        }
    }
};

/// JSON lines of {"question", "choices": [...], "correct": index}.
inline std::vector<MCItem> load_mc_items(const std::filesystem::path& path) {
    std::vector<MCItem> out;
    for (const auto& row : detail::read_jsonl(path)) {
        try {
            out.push_back({row.at("question").get<std::string>(), row.at("choices").get<std::vector<std::string>>(),
                           row.at("correct").get<std::size_t>()});
        } catch (const nlohmann::json::exception&) {
            throw ValidationError(path.string() + ": every line needs question, choices[] and correct");
        }
    }
    return out;
}

enum class ChoiceScoring { mean, sum };

/// Log-likelihood of `continuation` after `context`, one entry per
/// continuation token.
inline std::vector<double> continuation_logprobs(const LanguageModel& model, const TokenSequence& context,
                                                 const TokenSequence& continuation, const SteeringPlan* steering) {
    TokenSequence seq = context;
    seq.insert(seq.end(), continuation.begin(), continuation.end());
    const auto r = model.forward(seq, steering, CaptureSpec::none());
    std::vector<double> out;
    for (std::size_t j = 0; j < continuation.size(); ++j) {
        const std::size_t pos = context.size() + j;  // predicted from row pos - 1
        const auto lp = log_softmax(r.logits.row(static_cast<Eigen::Index>(pos - 1)).transpose());
        out.push_back(lp[static_cast<std::size_t>(continuation[j])]);
    }
    return out;
}

/// Choices are scored by the mean (or sum) log-likelihood of their tokens
/// given the rendered question; ties go to the lowest index.
inline EvalReport mc_eval(const LanguageModel& model, const MCTask& task, const SteeringPlan* steering,
                          ChoiceScoring scoring = ChoiceScoring::mean) {
    task.validate();
    EvalReport report;
    report.task = "mc";
    report.model_ids = {model.id()};
    report.steering = describe_plan(steering);
    report.config = {{"scoring", scoring == ChoiceScoring::mean ? "mean" : "sum"}, {"template", task.prompt.id}};
    for (const auto& item : task.items) {
        const TokenSequence ctx = model.encode(task.prompt.render(item.question));
        if (ctx.empty()) throw ValidationError("question renders to zero tokens: '" + item.question + "'");
        std::vector<double> scores;
        for (const auto& choice : item.choices) {
            const TokenSequence cont = model.encode(" " + choice);
            if (cont.empty()) throw ValidationError("choice tokenizes to zero tokens: '" + choice + "'");
            const auto lps = continuation_logprobs(model, ctx, cont, steering);
            double s = 0.0;
            for (double v : lps) s += v;
            scores.push_back(scoring == ChoiceScoring::mean ? s / static_cast<double>(lps.size()) : s);
        }
        std::size_t pred = 0;
        for (std::size_t i = 1; i < scores.size(); ++i)
            if (scores[i] > scores[pred]) pred = i;
        report.items.push_back({{"question", item.question},
                                {"scores", scores},
                                {"predicted", pred},
                                {"correct_index", item.correct},
                                {"correct", pred == item.correct}});
    }
    if (report.items.empty()) throw ValidationError("MC task has no items");
    report.metrics = recompute_metrics(report);
    return report;
}

// ------------------------------------------------------------- perplexity

/// exp of the mean next-token negative log-likelihood over every predicted
/// token of every text, with the steering plan active.
inline EvalReport perplexity(const LanguageModel& model, const std::vector<std::string>& corpus,
                             const SteeringPlan* steering) {
    if (corpus.empty()) throw ValidationError("perplexity corpus is empty");
    EvalReport report;
    report.task = "perplexity";
    report.model_ids = {model.id()};
    report.steering = describe_plan(steering);
    for (const auto& text : corpus) {
        const TokenSequence ids = model.encode(text);
        if (ids.size() < 2)
            throw ValidationError("text has " + std::to_string(ids.size()) + " tokens; at least two are needed: '" + text + "'");
        const auto r = model.forward(ids, steering, CaptureSpec::none());
        double nll = 0.0;
        for (std::size_t p = 1; p < ids.size(); ++p) {
            const auto lp = log_softmax(r.logits.row(static_cast<Eigen::Index>(p - 1)).transpose());
            nll -= lp[static_cast<std::size_t>(ids[p])];
        }
        report.items.push_back({{"text", text}, {"nll_sum", nll}, {"n_predicted", ids.size() - 1}});
    }
    report.metrics = recompute_metrics(report);
    return report;
}

// ------------------------------------------------------------- completion

struct CompletionItem {
    std::string prompt;
    std::string group;
};

inline std::vector<CompletionItem> load_completion_items(const std::filesystem::path& path) {
    std::vector<CompletionItem> out;
    for (const auto& row : detail::read_jsonl(path)) {
        if (!row.contains("prompt")) throw ValidationError(path.string() + ": every line needs 'prompt'");
        out.push_back({row["prompt"].get<std::string>(), row.value("group", "")});
    }
    return out;
}

struct CompletionOptions {
    DecodeConfig decode;
    std::optional<PromptTemplate> prompt;  // wraps each prompt when set
    std::size_t max_in_flight = 4;         // concurrent classifier calls
};

/// Generates one continuation per prompt and scores it. Classifier failures
/// are recorded as omitted items; if every call fails the error propagates.
inline EvalReport completion_eval(const LanguageModel& model, const std::vector<CompletionItem>& prompts,
                                  const SteeringPlan* steering, const ToxicityClassifier& classifier,
                                  const CompletionOptions& opts = {}) {
    if (prompts.empty()) throw ValidationError("completion prompt list is empty");
    EvalReport report;
    report.task = "completion";
    report.model_ids = {model.id()};
    report.steering = describe_plan(steering);
    report.config = {{"classifier", classifier.id()},
                     {"max_new_tokens", opts.decode.max_new_tokens},
                     {"greedy", opts.decode.greedy},
                     {"seed", opts.decode.seed}};

    std::vector<std::string> completions;
    for (const auto& item : prompts) {
        const std::string text = opts.prompt ? opts.prompt->render(item.prompt) : item.prompt;
        const auto out = model.generate(model.encode(text), opts.decode, steering);
        completions.push_back(model.tokenizer().decode(out));
    }

    struct Outcome {
        std::optional<double> p;
        std::string error;
    };
    std::vector<Outcome> outcomes(completions.size());
    const std::size_t width = std::max<std::size_t>(1, opts.max_in_flight);
    for (std::size_t begin = 0; begin < completions.size(); begin += width) {
        std::vector<std::future<Outcome>> batch;
        for (std::size_t i = begin; i < std::min(completions.size(), begin + width); ++i)
            batch.push_back(std::async(std::launch::async, [&, i]() -> Outcome {
                try {
                    return {classifier.score(completions[i]), {}};
                } catch (const ServiceError& e) {
                    return {std::nullopt, e.what()};
                }
            }));
        for (std::size_t k = 0; k < batch.size(); ++k) outcomes[begin + k] = batch[k].get();
    }

    std::size_t failures = 0;
    std::string last_error;
    for (std::size_t i = 0; i < prompts.size(); ++i) {
        nlohmann::json rec = {{"prompt", prompts[i].prompt}, {"group", prompts[i].group}, {"completion", completions[i]}};
        if (outcomes[i].p) {
            rec["toxic_probability"] = *outcomes[i].p;
            rec["toxic"] = *outcomes[i].p > 0.5;
            rec["omitted"] = false;
        } else {
            ++failures;
            last_error = outcomes[i].error;
            rec["toxic"] = false;
            rec["omitted"] = true;
            rec["error"] = outcomes[i].error;
        }
        report.items.push_back(std::move(rec));
    }
    if (failures == prompts.size()) throw ServiceError("classifier failed on every completion: " + last_error);
    report.metrics = recompute_metrics(report);
    return report;
}

// ------------------------------------------------------------ grid search

struct AlphaGrid {
    double lo = 0.0;
    double hi = 0.0;
    double step = 0.0;

    /// Parses "lo:hi:step".
    static AlphaGrid parse(const std::string& spec) {
        AlphaGrid g;
        const auto a = spec.find(':');
        const auto b = a == std::string::npos ? std::string::npos : spec.find(':', a + 1);
        if (b == std::string::npos) throw UsageError("alpha grid must look like lo:hi:step (got '" + spec + "')");
        try {
            std::size_t used = 0;
            g.lo = std::stod(spec.substr(0, a), &used);
            g.hi = std::stod(spec.substr(a + 1, b - a - 1));
            g.step = std::stod(spec.substr(b + 1));
        } catch (const std::exception&) {
            throw UsageError("alpha grid must look like lo:hi:step (got '" + spec + "')");
        }
        return g;
    }

    /// lo, lo + step, ... up to and including hi.
    std::vector<float> values() const {
        if (!(std::isfinite(lo) && std::isfinite(hi) && std::isfinite(step))) throw UsageError("alpha grid bounds must be finite");
        if (hi < lo) throw UsageError("alpha grid upper bound is below its lower bound");
        if (hi == lo) return {static_cast<float>(lo)};
        if (!(step > 0.0)) throw UsageError("alpha grid step must be positive");
        const auto n = static_cast<std::size_t>(std::floor((hi - lo) / step + 1e-9)) + 1;
        std::vector<float> out;
        for (std::size_t i = 0; i < n; ++i) out.push_back(static_cast<float>(lo + static_cast<double>(i) * step));
        return out;
    }
};

enum class Direction { maximize, minimize };

struct GridSearchResult {
    float best_alpha = 0.0f;
    double best_value = 0.0;
    std::vector<std::pair<float, double>> evaluations;
};

/// Evaluates `objective` at every grid point; the first (smallest) alpha
/// reaching the optimum wins ties.
inline GridSearchResult alpha_grid_search(const AlphaGrid& grid, const std::function<double(float)>& objective,
                                          Direction direction = Direction::maximize) {
    const auto alphas = grid.values();
    GridSearchResult res;
    bool have = false;
    for (float a : alphas) {
        const double v = objective(a);
        if (!std::isfinite(v)) throw ValidationError("objective is undefined at alpha " + std::to_string(a));
        res.evaluations.emplace_back(a, v);
        const bool better = direction == Direction::maximize ? v > res.best_value : v < res.best_value;
        if (!have || better) {
            res.best_alpha = a;
            res.best_value = v;
            have = true;
        }
    }
    return res;
}

/// Grid search of a concept vector's strength against one report metric.
inline GridSearchResult alpha_grid_search(const ConceptVector& vector, const std::vector<std::size_t>& layers,
                                          const AlphaGrid& grid,
                                          const std::function<EvalReport(const SteeringPlan*)>& evaluate,
                                          const std::string& metric, Direction direction) {
    return alpha_grid_search(
        grid,
        [&](float alpha) {
            SteeringPlan plan(alpha);
            vector.add_to_plan(plan, std::nullopt, layers);
            const auto report = evaluate(&plan);
            auto it = report.metrics.find(metric);
            if (it == report.metrics.end()) throw ValidationError("report has no metric '" + metric + "'");
            return it->second;
        },
        direction);
}

}  // namespace contrans
