#pragma once

// Byte-level BPE tokenizer driven by a standard tokenizer definition file
// (tokenizer.json): added tokens are split out first, the remaining text is
// NFC-normalised, pre-tokenised with the GPT-2 split rules, mapped to the
// printable byte alphabet and merged by rank.

#include <algorithm>
#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include <json.hpp>

#include "contrans/error.hpp"
#include "contrans/unicode.hpp"

namespace contrans {

using TokenId = std::int32_t;
using TokenSequence = std::vector<TokenId>;

namespace detail {

/// The GPT-2 byte <-> printable code point table.
struct ByteAlphabet {
    std::array<char32_t, 256> to_char{};
    std::unordered_map<char32_t, unsigned char> to_byte;

    ByteAlphabet() {
        std::array<bool, 256> direct{};
        auto mark = [&](int lo, int hi) {
            for (int b = lo; b <= hi; ++b) direct[static_cast<std::size_t>(b)] = true;
        };
        mark('!', '~');
        mark(0xA1, 0xAC);
        mark(0xAE, 0xFF);
        char32_t next = 256;
        for (int b = 0; b < 256; ++b) {
            to_char[static_cast<std::size_t>(b)] = direct[static_cast<std::size_t>(b)] ? static_cast<char32_t>(b) : next++;
            to_byte[to_char[static_cast<std::size_t>(b)]] = static_cast<unsigned char>(b);
        }
    }

    static const ByteAlphabet& get() {
        static const ByteAlphabet table;
        return table;
    }
};

/// Splits text the way the GPT-2 pattern
///   's|'t|'re|'ve|'m|'ll|'d| ?\p{L}+| ?\p{N}+| ?[^\s\p{L}\p{N}]+|\s+(?!\S)|\s+
/// does, returning code point spans.
inline std::vector<std::pair<std::size_t, std::size_t>> split_gpt2(const std::vector<char32_t>& cps) {
    using unicode::is_letter;
    using unicode::is_number;
    using unicode::is_whitespace;
    auto is_other = [](char32_t c) { return !is_whitespace(c) && !is_letter(c) && !is_number(c); };

    std::vector<std::pair<std::size_t, std::size_t>> out;
    const std::size_t n = cps.size();
    std::size_t i = 0;
    while (i < n) {
        const char32_t c = cps[i];
        std::size_t j = i;
        if (c == U'\'' && i + 1 < n) {
            const char32_t a = cps[i + 1];
            if (a == U's' || a == U't' || a == U'm' || a == U'd') {
                out.emplace_back(i, i + 2);
                i += 2;
                continue;
            }
            if (i + 2 < n) {
                const char32_t b = cps[i + 2];
                if ((a == U'r' && b == U'e') || (a == U'v' && b == U'e') || (a == U'l' && b == U'l')) {
                    out.emplace_back(i, i + 3);
                    i += 3;
                    continue;
                }
            }
        }
        const bool lead_space = c == U' ' && i + 1 < n;
        const char32_t body = lead_space ? cps[i + 1] : c;
        const std::size_t body_start = (c == U' ' && lead_space) ? i + 1 : i;
        if (is_letter(c) || (lead_space && is_letter(body))) {
            j = body_start;
            while (j < n && is_letter(cps[j])) ++j;
        } else if (is_number(c) || (lead_space && is_number(body))) {
            j = body_start;
            while (j < n && is_number(cps[j])) ++j;
        } else if (is_other(c) || (lead_space && is_other(body))) {
            j = body_start;
            while (j < n && is_other(cps[j])) ++j;
        } else {
            std::size_t r = i;
            while (r < n && is_whitespace(cps[r])) ++r;
            if (r == n || r - i == 1)
                j = r;
            else
                j = r - 1;  // leave the last space to prefix the next word
        }
        out.emplace_back(i, j);
        i = j;
    }
    return out;
}

}  // namespace detail

class Tokenizer {
public:
    struct AddedToken {
        std::string content;
        TokenId id;
        bool special;
    };

    static Tokenizer from_file(const std::filesystem::path& path) {
        std::ifstream in(path);
        if (!in) throw ValidationError("cannot open tokenizer file " + path.string());
        if (in.peek() == std::ifstream::traits_type::eof()) throw ValidationError("tokenizer file " + path.string() + " is empty");
        nlohmann::json j;
        try {
            in >> j;
        } catch (const nlohmann::json::exception& e) {
            throw ValidationError("tokenizer file " + path.string() + " is not valid JSON");
        }
        return from_json(j);
    }

    static Tokenizer from_json(const nlohmann::json& j) {
        Tokenizer t;
        try {
            const auto& model = j.at("model");
            if (model.contains("type") && model.at("type") != "BPE")
                throw ValidationError("only BPE tokenizer models are supported");
            t.ignore_merges_ = model.value("ignore_merges", false);
            for (const auto& [piece, id] : model.at("vocab").items()) t.add_vocab(piece, id.get<TokenId>());
            if (t.vocab_.empty()) throw ValidationError("tokenizer vocabulary is empty");

            int rank = 0;
            for (const auto& m : model.at("merges")) {
                std::string left, right;
                if (m.is_string()) {
                    const auto s = m.get<std::string>();
                    const auto sp = s.find(' ');
                    if (sp == std::string::npos) throw ValidationError("malformed merge '" + s + "'");
                    left = s.substr(0, sp);
                    right = s.substr(sp + 1);
                } else {
                    left = m.at(0).get<std::string>();
                    right = m.at(1).get<std::string>();
                }
                const auto a = t.vocab_.find(left), b = t.vocab_.find(right), c = t.vocab_.find(left + right);
                if (a == t.vocab_.end() || b == t.vocab_.end() || c == t.vocab_.end())
                    throw ValidationError("merge '" + left + " " + right + "' references unknown tokens");
                t.merges_.emplace(pair_key(a->second, b->second), MergeRule{rank++, c->second});
            }

            if (j.contains("added_tokens"))
                for (const auto& a : j.at("added_tokens")) {
                    AddedToken tok{a.at("content").get<std::string>(), a.at("id").get<TokenId>(), a.value("special", false)};
                    if (tok.content.empty()) continue;
                    t.add_vocab(tok.content, tok.id, /*overwrite_text=*/false);
                    t.added_.push_back(std::move(tok));
                }
            std::sort(t.added_.begin(), t.added_.end(),
                      [](const AddedToken& x, const AddedToken& y) { return x.content.size() > y.content.size(); });

            if (j.contains("normalizer") && !j.at("normalizer").is_null()) {
                const auto type = j.at("normalizer").at("type").get<std::string>();
                if (type != "NFC") throw ValidationError("unsupported normalizer '" + type + "'");
                t.nfc_ = true;
            }
            if (j.contains("pre_tokenizer") && !j.at("pre_tokenizer").is_null()) {
                const auto& pt = j.at("pre_tokenizer");
                if (pt.at("type") != "ByteLevel") throw ValidationError("only the ByteLevel pre-tokenizer is supported");
                t.add_prefix_space_ = pt.value("add_prefix_space", false);
                t.use_regex_ = pt.value("use_regex", true);
            }
        } catch (const nlohmann::json::exception& e) {
            throw ValidationError(std::string("malformed tokenizer definition: ") + e.what());
        }

        const auto& alphabet = detail::ByteAlphabet::get();
        for (int b = 0; b < 256; ++b) {
            std::string s;
            unicode::append_utf8(s, alphabet.to_char[static_cast<std::size_t>(b)]);
            auto it = t.vocab_.find(s);
            t.byte_token_[static_cast<std::size_t>(b)] = it == t.vocab_.end() ? -1 : it->second;
        }
        return t;
    }

    std::size_t vocab_size() const { return id_to_piece_.size(); }

    /// Encodes UTF-8 text. The input is NFC-normalised when the definition
    /// asks for it, so the round trip is exact for NFC text.
    TokenSequence encode(std::string_view text) const {
        TokenSequence out;
        std::size_t pos = 0;
        std::size_t seg_start = 0;
        while (pos < text.size()) {
            const AddedToken* hit = nullptr;
            for (const auto& a : added_)
                if (text.compare(pos, a.content.size(), a.content) == 0) {
                    hit = &a;
                    break;
                }
            if (!hit) {
                ++pos;
                continue;
            }
            encode_plain(text.substr(seg_start, pos - seg_start), out);
            out.push_back(hit->id);
            pos += hit->content.size();
            seg_start = pos;
        }
        encode_plain(text.substr(seg_start), out);
        return out;
    }

    std::string decode(std::span<const TokenId> ids) const {
        const auto& alphabet = detail::ByteAlphabet::get();
        std::string out;
        for (TokenId id : ids) {
            if (id < 0 || static_cast<std::size_t>(id) >= id_to_piece_.size() || !has_piece_[static_cast<std::size_t>(id)])
                throw ValidationError("token id " + std::to_string(id) + " is not in the vocabulary");
            const auto& piece = id_to_piece_[static_cast<std::size_t>(id)];
            if (is_added(id)) {
                out += piece;
                continue;
            }
            for (char32_t cp : unicode::decode_utf8(piece)) {
                auto it = alphabet.to_byte.find(cp);
                if (it == alphabet.to_byte.end()) {
                    unicode::append_utf8(out, cp);  // pieces outside the byte alphabet decode literally
                } else {
                    out.push_back(static_cast<char>(it->second));
                }
            }
        }
        return out;
    }

    std::string decode(TokenId id) const { return decode(std::span<const TokenId>(&id, 1)); }

    /// Raw vocabulary lookup by piece (byte-alphabet string, e.g. "Ġfear").
    std::optional<TokenId> piece_id(std::string_view piece) const {
        auto it = vocab_.find(std::string(piece));
        if (it == vocab_.end()) return std::nullopt;
        return it->second;
    }

    const std::vector<AddedToken>& added_tokens() const { return added_; }

private:
    struct MergeRule {
        int rank;
        TokenId result;
    };

    static std::uint64_t pair_key(TokenId a, TokenId b) {
        return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(a)) << 32) | static_cast<std::uint32_t>(b);
    }

    void add_vocab(const std::string& piece, TokenId id, bool overwrite_text = true) {
        if (id < 0) throw ValidationError("negative token id for '" + piece + "'");
        const auto idx = static_cast<std::size_t>(id);
        if (idx >= id_to_piece_.size()) {
            id_to_piece_.resize(idx + 1);
            has_piece_.resize(idx + 1, false);
        }
        if (overwrite_text || !has_piece_[idx]) id_to_piece_[idx] = piece;
        has_piece_[idx] = true;
        vocab_.emplace(piece, id);
    }

    bool is_added(TokenId id) const {
        for (const auto& a : added_)
            if (a.id == id) return true;
        return false;
    }

    void encode_plain(std::string_view text, TokenSequence& out) const {
        if (text.empty()) return;
        std::string normalized = nfc_ ? unicode::nfc(text) : std::string(text);
        auto cps = unicode::decode_utf8(normalized);
        if (add_prefix_space_ && !cps.empty() && !unicode::is_whitespace(cps.front())) cps.insert(cps.begin(), U' ');

        std::vector<std::pair<std::size_t, std::size_t>> words;
        if (use_regex_)
            words = detail::split_gpt2(cps);
        else
            words.emplace_back(0, cps.size());
        for (const auto& [b, e] : words) {
            const std::string bytes = unicode::encode_utf8(std::vector<char32_t>(cps.begin() + static_cast<std::ptrdiff_t>(b),
                                                                                 cps.begin() + static_cast<std::ptrdiff_t>(e)));
            bpe_word(bytes, out);
        }
    }

    void bpe_word(const std::string& bytes, TokenSequence& out) const {
        if (ignore_merges_) {
            std::string piece;
            for (unsigned char ch : bytes) unicode::append_utf8(piece, detail::ByteAlphabet::get().to_char[ch]);
            if (auto it = vocab_.find(piece); it != vocab_.end()) {
                out.push_back(it->second);
                return;
            }
        }
        std::vector<TokenId> symbols;
        symbols.reserve(bytes.size());
        for (unsigned char ch : bytes) {
            const TokenId id = byte_token_[ch];
            // every byte has a token in a byte-level vocabulary
            if (id < 0) throw std::logic_error("byte " + std::to_string(ch) + " has no token in the vocabulary");
            symbols.push_back(id);
        }
        while (symbols.size() > 1) {
            int best_rank = std::numeric_limits<int>::max();
            std::size_t best_at = 0;
            TokenId best_result = -1;
            for (std::size_t k = 0; k + 1 < symbols.size(); ++k) {
                auto it = merges_.find(pair_key(symbols[k], symbols[k + 1]));
                if (it != merges_.end() && it->second.rank < best_rank) {
                    best_rank = it->second.rank;
                    best_at = k;
                    best_result = it->second.result;
                }
            }
            if (best_result < 0) break;
            symbols[best_at] = best_result;
            symbols.erase(symbols.begin() + static_cast<std::ptrdiff_t>(best_at) + 1);
        }
        out.insert(out.end(), symbols.begin(), symbols.end());
    }

    std::unordered_map<std::string, TokenId> vocab_;
    std::vector<std::string> id_to_piece_;
    std::vector<bool> has_piece_;
    std::unordered_map<std::uint64_t, MergeRule> merges_;
    std::vector<AddedToken> added_;
    std::array<TokenId, 256> byte_token_{};
    bool nfc_ = false;
    bool add_prefix_space_ = false;
    bool use_regex_ = true;
    bool ignore_merges_ = false;
};

}  // namespace contrans
