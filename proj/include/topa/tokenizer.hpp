#pragma once

#include <string>
#include <unordered_map>
#include <vector>

namespace topa {

/// Word-level tokenizer with single-character punctuation tokens. Id 0 is
/// <unk>, id 1 is <eos>; everything else comes from the build corpus in
/// deterministic order.
class Tokenizer {
public:
    static constexpr int kUnkId = 0;
    static constexpr int kEosId = 1;

    Tokenizer() = default;
    explicit Tokenizer(std::vector<std::string> vocabulary);

    /// Splits into words (letters, digits, ', -) and punctuation singletons.
    static std::vector<std::string> split(const std::string& text);

    /// Collects the token set of `texts`; caps at max_vocab most frequent
    /// (ties by token text), final ids assigned in sorted token order.
    static Tokenizer build(const std::vector<std::string>& texts, std::size_t max_vocab = 4096);

    std::vector<int> encode(const std::string& text) const;
    std::string decode(const std::vector<int>& ids) const;
    int token_id(const std::string& token) const;  // kUnkId when absent
    const std::string& token(int id) const;

    std::size_t vocab_size() const { return vocabulary_.size(); }
    const std::vector<std::string>& vocabulary() const { return vocabulary_; }

private:
    std::vector<std::string> vocabulary_;
    std::unordered_map<std::string, int> ids_;
};

}  // namespace topa
