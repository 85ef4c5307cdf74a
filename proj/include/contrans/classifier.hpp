#pragma once

// Toxicity scoring behind one interface: text in, probability out.

#include <algorithm>
#include <cctype>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <memory>
#include <set>
#include <string>
#include <thread>

#include <httplib.h>
#ifdef _res
#undef _res  // <resolv.h> macro; collides with Eigen parameter names
#endif
#include <json.hpp>

#include "contrans/error.hpp"

namespace contrans {

struct ClassifierVerdict {
    std::string text;
    double toxic_probability = 0.0;
    std::string classifier_id;
};

class ToxicityClassifier {
public:
    virtual ~ToxicityClassifier() = default;
    virtual std::string id() const = 0;
    /// Probability in [0, 1]; throws ServiceError when the scorer fails.
    virtual double score(const std::string& text) const = 0;

    ClassifierVerdict classify(const std::string& text) const { return {text, score(text), id()}; }
};

/// 1.0 when any lexicon word occurs as a whole word (ASCII case-insensitive),
/// otherwise 0.0.
class LexiconClassifier final : public ToxicityClassifier {
public:
    explicit LexiconClassifier(std::set<std::string> words) : words_(std::move(words)) {
        std::set<std::string> lowered;
        for (const auto& w : words_) lowered.insert(lower(w));
        words_ = std::move(lowered);
    }

    static LexiconClassifier from_file(const std::filesystem::path& path) {
        std::ifstream in(path);
        if (!in) throw UsageError("cannot open lexicon " + path.string());
        std::set<std::string> words;
        std::string line;
        while (std::getline(in, line)) {
            while (!line.empty() && std::isspace(static_cast<unsigned char>(line.back()))) line.pop_back();
            if (!line.empty() && line[0] != '#') words.insert(line);
        }
        if (words.empty()) throw ValidationError("lexicon " + path.string() + " is empty");
        return LexiconClassifier(std::move(words));
    }

    std::string id() const override { return "lexicon-stub"; }

    double score(const std::string& text) const override {
        std::string word;
        auto flush = [&] {
            const bool hit = !word.empty() && words_.count(word);
            word.clear();
            return hit;
        };
        for (char c : text) {
            if (std::isalnum(static_cast<unsigned char>(c)) || c == '\'') {
                word.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
            } else if (flush()) {
                return 1.0;
            }
        }
        return flush() ? 1.0 : 0.0;
    }

private:
    static std::string lower(std::string s) {
        for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
        return s;
    }

    std::set<std::string> words_;
};

/// POST {"text": ...} to an HTTP endpoint answering {"toxic_probability": p}.
class HttpClassifier final : public ToxicityClassifier {
public:
    struct Options {
        double timeout_seconds = 10.0;
        int retries = 2;
        double retry_backoff_seconds = 0.2;
    };

    explicit HttpClassifier(std::string url) : HttpClassifier(std::move(url), Options{}) {}

    HttpClassifier(std::string url, Options opts) : url_(std::move(url)), opts_(opts) {
        const auto scheme_end = url_.find("://");
        if (scheme_end == std::string::npos || url_.substr(0, scheme_end) != "http")
            throw UsageError("classifier URL must start with http:// (got '" + url_ + "')");
        const auto path_start = url_.find('/', scheme_end + 3);
        base_ = url_.substr(0, path_start);
        path_ = path_start == std::string::npos ? "/" : url_.substr(path_start);
        if (base_.size() <= scheme_end + 3) throw UsageError("classifier URL has no host: '" + url_ + "'");
    }

    std::string id() const override { return "http:" + url_; }

    double score(const std::string& text) const override {
        httplib::Client client(base_);
        const auto usec = static_cast<long>(opts_.timeout_seconds * 1e6);
        client.set_connection_timeout(std::chrono::microseconds(usec));
        client.set_read_timeout(std::chrono::microseconds(usec));
        client.set_write_timeout(std::chrono::microseconds(usec));
        const std::string body = nlohmann::json{{"text", text}}.dump();

        std::string last_error;
        for (int attempt = 0; attempt <= opts_.retries; ++attempt) {
            if (attempt > 0)
                std::this_thread::sleep_for(std::chrono::duration<double>(opts_.retry_backoff_seconds * attempt));
            auto res = client.Post(path_, body, "application/json");
            if (!res) {
                last_error = "request failed: " + httplib::to_string(res.error());
                continue;
            }
            if (res->status != 200) {
                last_error = "HTTP status " + std::to_string(res->status);
                if (res->status < 500) break;  // client errors are not retried
                continue;
            }
            try {
                const auto j = nlohmann::json::parse(res->body);
                const double p = j.at("toxic_probability").get<double>();
                if (!(p >= 0.0 && p <= 1.0)) throw ServiceError("classifier returned probability " + std::to_string(p));
                return p;
            } catch (const nlohmann::json::exception&) {
                throw ServiceError("classifier at " + url_ + " returned a malformed body");
            }
        }
        throw ServiceError("classifier at " + url_ + " unavailable: " + last_error);
    }

private:
    std::string url_;
    std::string base_;
    std::string path_;
    Options opts_;
};

}  // namespace contrans
