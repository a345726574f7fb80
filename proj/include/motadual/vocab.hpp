// Word-level closed vocabulary and tokenizer.
#pragma once

#include <algorithm>
#include <cctype>
#include <fstream>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "motadual/common.hpp"

namespace motadual {

inline constexpr const char* kPadToken = "[PAD]";
inline constexpr const char* kSosToken = "[SOS]";
inline constexpr const char* kEosToken = "[EOS]";
inline constexpr const char* kUnkToken = "[UNK]";
inline constexpr const char* kPseudoToken = "<s*>";

class Vocabulary {
public:
    static Vocabulary from_tokens(std::vector<std::string> tokens) {
        Vocabulary v;
        v.tokens_ = std::move(tokens);
        for (std::size_t i = 0; i < v.tokens_.size(); ++i) {
            if (!v.ids_.emplace(v.tokens_[i], static_cast<int>(i)).second)
                throw ContractError("vocabulary: duplicate token '" +
                                    v.tokens_[i] + "'");
        }
        for (const char* req :
             {kPadToken, kSosToken, kEosToken, kUnkToken, kPseudoToken})
            if (v.ids_.find(req) == v.ids_.end())
                throw ContractError(std::string("vocabulary: missing reserved token ") +
                                    req);
        if (v.id(kPadToken) != 0)
            throw ContractError("vocabulary: [PAD] must have id 0");
        return v;
    }

    // The closed lexicon of words used by this vocabulary, in id order.
    static std::vector<std::string> reserved_prefix() {
        return {kPadToken, kSosToken, kEosToken, kUnkToken, kPseudoToken};
    }

    int size() const { return static_cast<int>(tokens_.size()); }
    const std::vector<std::string>& tokens() const { return tokens_; }

    int id(const std::string& token) const {
        auto it = ids_.find(token);
        if (it == ids_.end())
            throw ContractError("vocabulary: unknown token '" + token + "'");
        return it->second;
    }

    std::optional<int> lookup(const std::string& token) const {
        auto it = ids_.find(token);
        if (it == ids_.end()) return std::nullopt;
        return it->second;
    }

    int pad_id() const { return 0; }
    int sos_id() const { return id(kSosToken); }
    int eos_id() const { return id(kEosToken); }
    int unk_id() const { return id(kUnkToken); }
    int pseudo_id() const { return id(kPseudoToken); }

    void save(const std::string& path) const {
        std::ofstream out(path);
        if (!out) throw IngestionError("cannot write vocabulary file " + path);
        out << nlohmann::json(tokens_).dump(2) << "\n";
    }

    static Vocabulary load(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw IngestionError("cannot read vocabulary file " + path);
        nlohmann::json j;
        try {
            in >> j;
        } catch (const nlohmann::json::exception& e) {
            throw IngestionError("vocabulary file " + path + ": " + e.what());
        }
        if (!j.is_array())
            throw IngestionError("vocabulary file must be a JSON array of tokens");
        return from_tokens(j.get<std::vector<std::string>>());
    }

private:
    std::vector<std::string> tokens_;
    std::unordered_map<std::string, int> ids_;
};

struct TokenSequence {
    std::vector<int> ids;  // fixed length max_len
    int eos_position = 0;
    std::optional<int> pseudo_slot;

    int content_length() const { return eos_position + 1; }
};

namespace detail {

inline std::vector<std::string> split_words(const std::string& text) {
    std::vector<std::string> words;
    std::string cur;
    for (char ch : text) {
        if (std::isspace(static_cast<unsigned char>(ch))) {
            if (!cur.empty()) words.push_back(std::move(cur));
            cur.clear();
        } else {
            cur.push_back(static_cast<char>(
                std::tolower(static_cast<unsigned char>(ch))));
        }
    }
    if (!cur.empty()) words.push_back(std::move(cur));
    return words;
}

inline std::string strip_punctuation(const std::string& word) {
    std::string out;
    for (char ch : word)
        if (std::isalnum(static_cast<unsigned char>(ch))) out.push_back(ch);
    return out;
}

}  // namespace detail

// Lowercases, strips punctuation, splits on whitespace, and maps words to
// ids ([UNK] for out-of-vocabulary). Content is truncated so that [SOS],
// the words, and [EOS] fit into max_len. The literal token "<s*>" marks the
// pseudo slot and survives punctuation stripping.
inline TokenSequence tokenize(const std::string& text, const Vocabulary& vocab,
                              int max_len) {
    if (max_len < 3) throw ContractError("tokenize: max_len must be >= 3");
    std::vector<int> word_ids;
    std::optional<int> pseudo_index;
    for (const auto& raw : detail::split_words(text)) {
        if (raw == kPseudoToken) {
            if (pseudo_index.has_value())
                throw ContractError("tokenize: more than one <s*> token");
            pseudo_index = static_cast<int>(word_ids.size());
            word_ids.push_back(vocab.pseudo_id());
            continue;
        }
        const std::string word = detail::strip_punctuation(raw);
        if (word.empty()) continue;
        const auto id = vocab.lookup(word);
        word_ids.push_back(id.value_or(vocab.unk_id()));
    }
    if (word_ids.empty())
        throw ContractError("tokenize: empty text after normalization");

    const int max_words = max_len - 2;
    if (static_cast<int>(word_ids.size()) > max_words)
        word_ids.resize(max_words);

    TokenSequence seq;
    seq.ids.assign(max_len, vocab.pad_id());
    seq.ids[0] = vocab.sos_id();
    for (std::size_t i = 0; i < word_ids.size(); ++i)
        seq.ids[i + 1] = word_ids[i];
    seq.eos_position = static_cast<int>(word_ids.size()) + 1;
    seq.ids[seq.eos_position] = vocab.eos_id();
    if (pseudo_index.has_value() && *pseudo_index < max_words)
        seq.pseudo_slot = *pseudo_index + 1;
    return seq;
}

}  // namespace motadual
