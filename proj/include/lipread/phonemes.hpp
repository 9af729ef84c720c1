#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "lipread/error.hpp"

namespace lipread {

enum class PhonemeKind { vowel, consonant, silence };

inline std::string_view to_string(PhonemeKind kind) {
    switch (kind) {
    case PhonemeKind::vowel: return "vowel";
    case PhonemeKind::consonant: return "consonant";
    case PhonemeKind::silence: return "silence";
    }
    return "?";
}

inline PhonemeKind parse_kind(std::string_view text) {
    if (text == "vowel") return PhonemeKind::vowel;
    if (text == "consonant") return PhonemeKind::consonant;
    if (text == "silence") return PhonemeKind::silence;
    throw DataError("unknown phoneme kind '" + std::string(text) + "'");
}

struct PhonemeClass {
    std::string symbol;
    PhonemeKind kind = PhonemeKind::consonant;

    friend bool operator==(const PhonemeClass&, const PhonemeClass&) = default;
};

/// Ordered phoneme inventory. Exactly one class is silence; symbols are unique.
class PhonemeSet {
public:
    PhonemeSet() = default;

    explicit PhonemeSet(std::vector<PhonemeClass> classes) : classes_(std::move(classes)) {
        std::optional<std::size_t> silence;
        for (std::size_t i = 0; i < classes_.size(); ++i) {
            const auto& c = classes_[i];
            if (c.symbol.empty()) throw DataError("phoneme symbol may not be empty");
            if (!index_.emplace(c.symbol, i).second)
                throw DataError("duplicate phoneme symbol '" + c.symbol + "'");
            if (c.kind == PhonemeKind::silence) {
                if (silence) throw DataError("phoneme set has more than one silence class");
                silence = i;
            }
        }
        if (!silence) throw DataError("phoneme set has no silence class");
        silence_ = *silence;
    }

    std::size_t size() const { return classes_.size(); }
    const PhonemeClass& operator[](std::size_t i) const { return classes_.at(i); }
    const std::vector<PhonemeClass>& classes() const { return classes_; }
    const std::string& symbol(std::size_t i) const { return classes_.at(i).symbol; }
    PhonemeKind kind(std::size_t i) const { return classes_.at(i).kind; }
    std::size_t silence_index() const { return silence_; }

    std::optional<std::size_t> find(std::string_view symbol) const {
        auto it = index_.find(std::string(symbol));
        if (it == index_.end()) return std::nullopt;
        return it->second;
    }

    std::size_t index_of(std::string_view symbol) const {
        if (auto i = find(symbol)) return *i;
        throw DataError("unknown phoneme symbol '" + std::string(symbol) + "'");
    }

    friend bool operator==(const PhonemeSet& a, const PhonemeSet& b) { return a.classes_ == b.classes_; }

private:
    std::vector<PhonemeClass> classes_;
    std::unordered_map<std::string, std::size_t> index_;
    std::size_t silence_ = 0;
};

/// Spanish SAMPA inventory without /jj/ and /G/, plus silence at index 0: 28 classes.
/// The glides /j/ and /w/ are tagged as vowels so that {o,u,w} stays kind-pure.
inline const PhonemeSet& spanish_sampa() {
    static const PhonemeSet set = [] {
        using K = PhonemeKind;
        std::vector<PhonemeClass> v{{"sil", K::silence}};
        for (const char* s : {"p", "b", "t", "d", "k", "g", "tS", "f", "B", "T", "D", "s", "x", "m", "n", "J",
                              "l", "L", "r", "rr"})
            v.push_back({s, K::consonant});
        for (const char* s : {"j", "w", "a", "e", "i", "o", "u"}) v.push_back({s, K::vowel});
        return PhonemeSet(std::move(v));
    }();
    return set;
}

} // namespace lipread
