#pragma once

#include <algorithm>
#include <cstdio>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "lipread/corpus.hpp"
#include "lipread/error.hpp"
#include "lipread/vocabulary.hpp"

namespace lipread {

enum class EditOp { hit, substitution, deletion, insertion };

struct AlignmentResult {
    int hits = 0;
    int substitutions = 0;
    int deletions = 0;
    int insertions = 0;
    int ref_length = 0;
    std::vector<EditOp> ops;

    int errors() const { return substitutions + deletions + insertions; }
};

/// Minimal Levenshtein alignment with unit costs. On equal cost the backtrace prefers a
/// hit, then a substitution, then a deletion, then an insertion.
template <class T>
AlignmentResult align(std::span<const T> ref, std::span<const T> hyp) {
    const std::size_t n = ref.size(), m = hyp.size();
    std::vector<int> d((n + 1) * (m + 1));
    auto at = [&](std::size_t i, std::size_t j) -> int& { return d[i * (m + 1) + j]; };
    for (std::size_t i = 0; i <= n; ++i) at(i, 0) = static_cast<int>(i);
    for (std::size_t j = 0; j <= m; ++j) at(0, j) = static_cast<int>(j);
    for (std::size_t i = 1; i <= n; ++i)
        for (std::size_t j = 1; j <= m; ++j)
            at(i, j) = std::min({at(i - 1, j - 1) + (ref[i - 1] == hyp[j - 1] ? 0 : 1), at(i - 1, j) + 1, at(i, j - 1) + 1});

    AlignmentResult r;
    r.ref_length = static_cast<int>(n);
    std::size_t i = n, j = m;
    while (i > 0 || j > 0) {
        if (i > 0 && j > 0 && ref[i - 1] == hyp[j - 1] && at(i, j) == at(i - 1, j - 1)) {
            r.ops.push_back(EditOp::hit);
            ++r.hits;
            --i, --j;
        } else if (i > 0 && j > 0 && at(i, j) == at(i - 1, j - 1) + 1) {
            r.ops.push_back(EditOp::substitution);
            ++r.substitutions;
            --i, --j;
        } else if (i > 0 && at(i, j) == at(i - 1, j) + 1) {
            r.ops.push_back(EditOp::deletion);
            ++r.deletions;
            --i;
        } else {
            r.ops.push_back(EditOp::insertion);
            ++r.insertions;
            --j;
        }
    }
    std::reverse(r.ops.begin(), r.ops.end());
    return r;
}

template <class T>
AlignmentResult align(const std::vector<T>& ref, const std::vector<T>& hyp) {
    return align(std::span<const T>(ref), std::span<const T>(hyp));
}

/// Token accuracy (H - I) / N; can be negative.
inline double accuracy(const AlignmentResult& a) {
    if (a.ref_length <= 0) throw Error("accuracy: empty reference");
    return static_cast<double>(a.hits - a.insertions) / static_cast<double>(a.ref_length);
}

/// Collapses runs of identical consecutive labels into single tokens.
inline std::vector<int> collapse_runs(std::span<const int> frames) {
    std::vector<int> out;
    for (int v : frames)
        if (out.empty() || out.back() != v) out.push_back(v);
    return out;
}

/// Fraction of frames labelled correctly.
inline double frame_accuracy(std::span<const int> ref, std::span<const int> hyp) {
    if (ref.size() != hyp.size()) throw Error("frame_accuracy: tracks differ in length");
    if (ref.empty()) throw Error("frame_accuracy: empty reference");
    std::size_t ok = 0;
    for (std::size_t i = 0; i < ref.size(); ++i) ok += ref[i] == hyp[i] ? 1 : 0;
    return static_cast<double>(ok) / static_cast<double>(ref.size());
}

struct ClassStats {
    std::int64_t support = 0; // reference occurrences (row sum)
    std::int64_t predicted = 0;
    std::int64_t true_positives = 0;
    std::int64_t false_positives = 0;
    std::int64_t false_negatives = 0;
    std::optional<double> precision; // absent when nothing was predicted
    std::optional<double> recall;    // absent when the class never occurs
};

using ClassReport = std::vector<ClassStats>;

inline ClassReport precision_recall(const ConfusionMatrix& cm) {
    ClassReport rep(static_cast<std::size_t>(cm.size()));
    for (int c = 0; c < cm.size(); ++c) {
        auto& s = rep[static_cast<std::size_t>(c)];
        s.support = cm.row_sum(c);
        s.predicted = cm.col_sum(c);
        s.true_positives = cm(c, c);
        s.false_negatives = s.support - s.true_positives;
        s.false_positives = s.predicted - s.true_positives;
        if (s.predicted > 0) s.precision = static_cast<double>(s.true_positives) / static_cast<double>(s.predicted);
        if (s.support > 0) s.recall = static_cast<double>(s.true_positives) / static_cast<double>(s.support);
    }
    return rep;
}

// ---------------------------------------------------------------------------
// Lexicon-based word decoding

struct WordDecodeOptions {
    double word_penalty = 0.5;
    int silence = -1; // phoneme index treated as an optional boundary; -1 = none
};

namespace detail {

/// Edit distances between `pron` and every prefix seq[start .. start+len) for len in [0, max_len].
inline std::vector<int> prefix_edit_distances(std::span<const int> seq, std::size_t start, std::size_t max_len,
                                              std::span<const int> pron) {
    const std::size_t p = pron.size();
    // prev[j]: distance between pron[0..j) and current prefix
    std::vector<int> col(p + 1), out(max_len + 1);
    for (std::size_t j = 0; j <= p; ++j) col[j] = static_cast<int>(j);
    out[0] = static_cast<int>(p);
    for (std::size_t k = 1; k <= max_len; ++k) {
        const int tok = seq[start + k - 1];
        int diag = col[0];
        col[0] = static_cast<int>(k);
        for (std::size_t j = 1; j <= p; ++j) {
            const int up = col[j];
            col[j] = std::min({col[j] + 1, col[j - 1] + 1, diag + (pron[j - 1] == tok ? 0 : 1)});
            diag = up;
        }
        out[k] = col[p];
    }
    return out;
}

} // namespace detail

/// Segments a phoneme token sequence into lexicon words, minimizing the summed edit distance
/// between segments and pronunciations plus a per-word penalty. Silence tokens are dropped
/// before segmentation, so they may sit between or inside words at no cost. Ties prefer the
/// lexicographically first word (then its first pronunciation).
inline std::vector<std::string> word_decode(std::span<const int> phonemes, const PronunciationDictionary& lexicon,
                                            const WordDecodeOptions& opt = {}) {
    if (lexicon.empty()) throw Error("word_decode: empty lexicon");
    std::vector<int> seq;
    for (int p : phonemes)
        if (p != opt.silence) seq.push_back(p);
    const std::size_t n = seq.size();

    struct Entry {
        const std::string* word;
        const Pronunciation* pron;
    };
    std::vector<Entry> entries;
    for (const auto& [w, prons] : lexicon.entries)
        for (const auto& p : prons) entries.push_back({&w, &p});

    const double inf = std::numeric_limits<double>::infinity();
    std::vector<double> best(n + 1, inf);
    std::vector<std::size_t> from(n + 1, 0), which(n + 1, 0);
    best[0] = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        if (best[i] == inf) continue;
        for (std::size_t e = 0; e < entries.size(); ++e) {
            const auto& pron = *entries[e].pron;
            const std::size_t max_len = std::min(n - i, 2 * pron.size() + 2);
            const auto dist = detail::prefix_edit_distances(seq, i, max_len, pron);
            for (std::size_t len = 1; len <= max_len; ++len) {
                const double cost = best[i] + dist[len] + opt.word_penalty;
                if (cost < best[i + len]) {
                    best[i + len] = cost;
                    from[i + len] = i;
                    which[i + len] = e;
                }
            }
        }
    }
    std::vector<std::string> words;
    for (std::size_t k = n; k > 0; k = from[k]) words.push_back(*entries[which[k]].word);
    std::reverse(words.begin(), words.end());
    return words;
}

} // namespace lipread
