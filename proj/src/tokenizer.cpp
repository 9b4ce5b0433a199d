#include "topa/tokenizer.hpp"

#include <algorithm>
#include <cctype>
#include <map>

namespace topa {

namespace {
const std::string kUnk = "<unk>";
const std::string kEos = "<eos>";

bool word_char(char c) {
    return std::isalnum(static_cast<unsigned char>(c)) || c == '\'' || c == '-';
}
}  // namespace

Tokenizer::Tokenizer(std::vector<std::string> vocabulary) : vocabulary_(std::move(vocabulary)) {
    for (std::size_t i = 0; i < vocabulary_.size(); ++i) {
        ids_[vocabulary_[i]] = static_cast<int>(i);
    }
}

std::vector<std::string> Tokenizer::split(const std::string& text) {
    std::vector<std::string> out;
    std::string word;
    auto flush = [&] {
        if (!word.empty()) {
            out.push_back(word);
            word.clear();
        }
    };
    for (char c : text) {
        if (word_char(c)) {
            word.push_back(c);
        } else {
            flush();
            if (!std::isspace(static_cast<unsigned char>(c))) {
                out.push_back(std::string(1, c));
            }
        }
    }
    flush();
    return out;
}

Tokenizer Tokenizer::build(const std::vector<std::string>& texts, std::size_t max_vocab) {
    std::map<std::string, std::size_t> counts;
    for (const auto& text : texts) {
        for (const auto& token : split(text)) counts[token] += 1;
    }
    std::vector<std::pair<std::string, std::size_t>> ranked(counts.begin(), counts.end());
    std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });
    std::size_t keep = max_vocab > 2 ? max_vocab - 2 : 0;
    if (ranked.size() > keep) ranked.resize(keep);

    std::vector<std::string> vocabulary{kUnk, kEos};
    std::vector<std::string> tokens;
    tokens.reserve(ranked.size());
    for (auto& [token, count] : ranked) tokens.push_back(token);
    std::sort(tokens.begin(), tokens.end());
    vocabulary.insert(vocabulary.end(), tokens.begin(), tokens.end());
    return Tokenizer(std::move(vocabulary));
}

std::vector<int> Tokenizer::encode(const std::string& text) const {
    std::vector<int> out;
    for (const auto& token : split(text)) {
        auto it = ids_.find(token);
        out.push_back(it == ids_.end() ? kUnkId : it->second);
    }
    return out;
}

std::string Tokenizer::decode(const std::vector<int>& ids) const {
    std::string out;
    for (int id : ids) {
        if (id == kEosId) break;
        const std::string& tok = token(id);
        bool attach = tok.size() == 1 && !word_char(tok[0]) && tok[0] != '(';
        bool after_open = !out.empty() && out.back() == '(';
        if (!out.empty() && !attach && !after_open) out.push_back(' ');
        out += tok;
    }
    return out;
}

int Tokenizer::token_id(const std::string& token) const {
    auto it = ids_.find(token);
    return it == ids_.end() ? kUnkId : it->second;
}

const std::string& Tokenizer::token(int id) const {
    if (id < 0 || id >= static_cast<int>(vocabulary_.size())) return vocabulary_[kUnkId];
    return vocabulary_[static_cast<std::size_t>(id)];
}

}  // namespace topa
