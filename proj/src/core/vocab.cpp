#include "mcactrl/core/vocab.hpp"

#include <algorithm>
#include <sstream>
#include <stdexcept>

namespace mcactrl {

Vocabulary::Vocabulary()
    : words_{"<null>", "white",  "yellow",  "orange",  "red",     "magenta", "blue",     "cyan",    "green",
             "circle", "square", "triangle", "striped", "dotted", "on",      "and",      "gradient", "checker"} {}

const Vocabulary& Vocabulary::instance() {
    static const Vocabulary vocab;
    return vocab;
}

int Vocabulary::id(std::string_view word) const {
    const auto it = std::find(words_.begin(), words_.end(), word);
    if (it == words_.end()) throw std::invalid_argument("unknown token '" + std::string(word) + "'");
    return static_cast<int>(it - words_.begin());
}

bool Vocabulary::contains(std::string_view word) const {
    return std::find(words_.begin(), words_.end(), word) != words_.end();
}

const std::string& Vocabulary::word(int id) const {
    if (id < 0 || id >= size()) throw std::invalid_argument("token id " + std::to_string(id) + " out of range");
    return words_[static_cast<size_t>(id)];
}

TokenSeq Vocabulary::encode(std::string_view caption) const {
    std::istringstream in{std::string(caption)};
    TokenSeq out;
    for (std::string w; in >> w;) out.push_back(id(w));
    if (static_cast<int>(out.size()) > kMaxTokens) {
        throw std::invalid_argument("caption longer than " + std::to_string(kMaxTokens) + " tokens");
    }
    return out;
}

std::string Vocabulary::decode(const TokenSeq& tokens) const {
    std::string out;
    for (int t : tokens) {
        if (t == kNull) continue;
        if (!out.empty()) out += ' ';
        out += word(t);
    }
    return out;
}

TokenSeq Vocabulary::padded(const TokenSeq& tokens) const {
    if (static_cast<int>(tokens.size()) > kMaxTokens) throw std::invalid_argument("token sequence too long");
    TokenSeq out(tokens);
    for (int t : out) (void)word(t);
    out.resize(kMaxTokens, kNull);
    return out;
}

}  // namespace mcactrl
