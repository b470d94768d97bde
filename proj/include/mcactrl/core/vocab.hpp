#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace mcactrl {

using TokenSeq = std::vector<int>;

/// Fixed toy vocabulary: palette colors, shapes, textures, background kinds and
/// a couple of connectives. Token 0 is the null token used for padding and for
/// the unconditional branch of classifier-free guidance.
class Vocabulary {
public:
    static constexpr int kNull = 0;
    static constexpr int kMaxTokens = 16;

    static const Vocabulary& instance();

    int size() const { return static_cast<int>(words_.size()); }
    int id(std::string_view word) const;
    bool contains(std::string_view word) const;
    const std::string& word(int id) const;

    /// Whitespace-separated caption -> token ids. Throws on unknown words or
    /// captions longer than kMaxTokens.
    TokenSeq encode(std::string_view caption) const;
    std::string decode(const TokenSeq& tokens) const;

    /// Pads (with the null token) to kMaxTokens after validating every id.
    TokenSeq padded(const TokenSeq& tokens) const;

private:
    Vocabulary();
    std::vector<std::string> words_;
};

}  // namespace mcactrl
