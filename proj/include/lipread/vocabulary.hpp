#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "lipread/corpus.hpp"
#include "lipread/dataset.hpp"
#include "lipread/ensemble.hpp"
#include "lipread/error.hpp"
#include "lipread/hashing.hpp"
#include "lipread/phonemes.hpp"

namespace lipread {

/// Square count matrix; rows are ground truth, columns predictions.
class ConfusionMatrix {
public:
    ConfusionMatrix() = default;
    explicit ConfusionMatrix(int n) : n_(n), counts_(static_cast<std::size_t>(n) * static_cast<std::size_t>(n), 0) {}

    int size() const { return n_; }
    std::int64_t& operator()(int truth, int pred) { return counts_.at(index(truth, pred)); }
    std::int64_t operator()(int truth, int pred) const { return counts_.at(index(truth, pred)); }

    std::int64_t row_sum(int i) const {
        std::int64_t s = 0;
        for (int j = 0; j < n_; ++j) s += (*this)(i, j);
        return s;
    }
    std::int64_t col_sum(int j) const {
        std::int64_t s = 0;
        for (int i = 0; i < n_; ++i) s += (*this)(i, j);
        return s;
    }
    std::int64_t total() const { return std::accumulate(counts_.begin(), counts_.end(), std::int64_t{0}); }

    friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;

private:
    std::size_t index(int i, int j) const {
        if (i < 0 || j < 0 || i >= n_ || j >= n_) throw Error("confusion matrix index out of range");
        return static_cast<std::size_t>(i) * static_cast<std::size_t>(n_) + static_cast<std::size_t>(j);
    }
    int n_ = 0;
    std::vector<std::int64_t> counts_;
};

inline ConfusionMatrix confusion_matrix(std::span<const int> truth, std::span<const int> predicted, int n_classes) {
    if (truth.size() != predicted.size()) throw Error("confusion_matrix: label streams differ in length");
    ConfusionMatrix cm(n_classes);
    for (std::size_t i = 0; i < truth.size(); ++i) {
        if (truth[i] < 0 || truth[i] >= n_classes || predicted[i] < 0 || predicted[i] >= n_classes)
            throw Error("confusion_matrix: label out of range");
        ++cm(truth[i], predicted[i]);
    }
    return cm;
}

/// Symmetric row-normalized confusion between classes i and j. Empty rows contribute 0.
inline double ambiguity(const ConfusionMatrix& cm, int i, int j) {
    auto part = [&](int a, int b) {
        const auto rs = cm.row_sum(a);
        return rs > 0 ? static_cast<double>(cm(a, b)) / static_cast<double>(rs) : 0.0;
    };
    return part(i, j) + part(j, i);
}

struct VisemeGroup {
    std::vector<int> members; // sorted phoneme indices
    PhonemeKind kind = PhonemeKind::consonant;
    friend bool operator==(const VisemeGroup&, const VisemeGroup&) = default;
};

struct MergeRecord {
    int step = 0;
    int first = 0;  // group indices in the vocabulary the merge was applied to, first < second
    int second = 0;
    double ambiguity = 0.0;
    friend bool operator==(const MergeRecord&, const MergeRecord&) = default;
};

/// Partition of a phoneme set into viseme groups, ordered by smallest member.
class VisemeVocabulary {
public:
    VisemeVocabulary() = default;

    static VisemeVocabulary identity(const PhonemeSet& phonemes) {
        std::vector<std::vector<int>> groups;
        for (std::size_t i = 0; i < phonemes.size(); ++i) groups.push_back({static_cast<int>(i)});
        return VisemeVocabulary(phonemes, std::move(groups));
    }

    /// Builds and validates a vocabulary from explicit member lists.
    VisemeVocabulary(PhonemeSet phonemes, std::vector<std::vector<int>> groups, std::vector<MergeRecord> history = {})
        : phonemes_(std::move(phonemes)), history_(std::move(history)) {
        for (auto& g : groups) {
            std::sort(g.begin(), g.end());
            if (g.empty()) throw DataError("viseme vocabulary: empty group");
            groups_.push_back({std::move(g), PhonemeKind::consonant});
        }
        std::sort(groups_.begin(), groups_.end(),
                  [](const VisemeGroup& a, const VisemeGroup& b) { return a.members.front() < b.members.front(); });
        rebuild();
    }

    const PhonemeSet& phonemes() const { return phonemes_; }
    const std::vector<VisemeGroup>& groups() const { return groups_; }
    const VisemeGroup& group(int g) const { return groups_.at(static_cast<std::size_t>(g)); }
    const std::vector<MergeRecord>& history() const { return history_; }
    int size() const { return static_cast<int>(groups_.size()); }
    int group_of(int phoneme) const { return group_of_.at(static_cast<std::size_t>(phoneme)); }
    const std::vector<int>& mapping() const { return group_of_; }

    bool is_identity() const { return groups_.size() == phonemes_.size(); }

    std::string group_name(int g) const {
        std::string s;
        for (int m : group(g).members) s += (s.empty() ? "" : "+") + phonemes_.symbol(static_cast<std::size_t>(m));
        return s;
    }
    std::vector<std::string> group_names() const {
        std::vector<std::string> out;
        for (int g = 0; g < size(); ++g) out.push_back(group_name(g));
        return out;
    }

    /// Groups i and j eligible for merging: distinct, same kind, neither is silence.
    bool mergeable(int i, int j) const {
        if (i == j) return false;
        const auto& a = group(i);
        const auto& b = group(j);
        return a.kind == b.kind && a.kind != PhonemeKind::silence;
    }

    /// Merges groups i and j (any order) and records the step.
    VisemeVocabulary merged(int i, int j, double score) const {
        if (i > j) std::swap(i, j);
        if (!mergeable(i, j)) throw Error("merge: groups are not mergeable");
        VisemeVocabulary v = *this;
        auto& dst = v.groups_[static_cast<std::size_t>(i)].members;
        const auto& src = groups_[static_cast<std::size_t>(j)].members;
        dst.insert(dst.end(), src.begin(), src.end());
        std::sort(dst.begin(), dst.end());
        v.groups_.erase(v.groups_.begin() + j);
        v.history_.push_back({static_cast<int>(history_.size()) + 1, i, j, score});
        v.rebuild();
        return v;
    }

    friend bool operator==(const VisemeVocabulary& a, const VisemeVocabulary& b) {
        return a.phonemes_ == b.phonemes_ && a.groups_ == b.groups_ && a.history_ == b.history_;
    }

private:
    void rebuild() {
        group_of_.assign(phonemes_.size(), -1);
        for (std::size_t g = 0; g < groups_.size(); ++g) {
            auto& grp = groups_[g];
            for (int m : grp.members) {
                if (m < 0 || static_cast<std::size_t>(m) >= phonemes_.size())
                    throw DataError("viseme vocabulary: phoneme index out of range");
                if (group_of_[static_cast<std::size_t>(m)] != -1)
                    throw DataError("viseme vocabulary: phoneme '" + phonemes_.symbol(static_cast<std::size_t>(m)) +
                                    "' appears in two groups");
                group_of_[static_cast<std::size_t>(m)] = static_cast<int>(g);
            }
            grp.kind = phonemes_.kind(static_cast<std::size_t>(grp.members.front()));
            for (int m : grp.members)
                if (phonemes_.kind(static_cast<std::size_t>(m)) != grp.kind)
                    throw DataError("viseme vocabulary: group '" + group_name(static_cast<int>(g)) + "' mixes kinds");
            if (grp.kind == PhonemeKind::silence && grp.members.size() != 1)
                throw DataError("viseme vocabulary: silence must be a singleton group");
        }
        for (std::size_t p = 0; p < group_of_.size(); ++p)
            if (group_of_[p] == -1)
                throw DataError("viseme vocabulary: phoneme '" + phonemes_.symbol(p) + "' is not in any group");
    }

    PhonemeSet phonemes_;
    std::vector<VisemeGroup> groups_;
    std::vector<MergeRecord> history_;
    std::vector<int> group_of_;
};

/// Sums member rows and columns of a phoneme-level matrix into viseme groups.
inline ConfusionMatrix collapse(const ConfusionMatrix& cm, const VisemeVocabulary& vocab) {
    if (cm.size() != static_cast<int>(vocab.phonemes().size())) throw Error("collapse: matrix/vocabulary size mismatch");
    ConfusionMatrix out(vocab.size());
    for (int i = 0; i < cm.size(); ++i)
        for (int j = 0; j < cm.size(); ++j) out(vocab.group_of(i), vocab.group_of(j)) += cm(i, j);
    return out;
}

inline std::vector<int> map_sequence(const VisemeVocabulary& vocab, std::span<const int> phonemes) {
    std::vector<int> out;
    out.reserve(phonemes.size());
    for (int p : phonemes) out.push_back(vocab.group_of(p));
    return out;
}

struct MergeResult {
    VisemeVocabulary vocabulary;
    int first = 0;
    int second = 0;
    double ambiguity = 0.0;
};

/// Merges the eligible group pair of highest ambiguity. `cm` may be phoneme-level (it is
/// collapsed first) or already group-level. Ties go to the lexicographically smallest pair.
inline MergeResult merge_step(const VisemeVocabulary& vocab, const ConfusionMatrix& cm) {
    const ConfusionMatrix g = cm.size() == vocab.size() ? cm : collapse(cm, vocab);
    std::optional<std::pair<int, int>> best;
    double best_score = -1.0;
    for (int i = 0; i < g.size(); ++i)
        for (int j = i + 1; j < g.size(); ++j) {
            if (!vocab.mergeable(i, j)) continue;
            const double s = ambiguity(g, i, j);
            if (s > best_score) {
                best_score = s;
                best = {i, j};
            }
        }
    if (!best) throw Error("merge_step: no eligible pair of groups left");
    return {vocab.merged(best->first, best->second, best_score), best->first, best->second, best_score};
}

/// Applies a recorded merge history to a starting vocabulary.
inline VisemeVocabulary replay_history(const VisemeVocabulary& start, std::span<const MergeRecord> history) {
    VisemeVocabulary v = start;
    for (const auto& m : history) v = v.merged(m.first, m.second, m.ambiguity);
    return v;
}

// ---------------------------------------------------------------------------
// Construction from training data

struct VocabularyOptions {
    BaggingOptions bagging;
    bool retrain_each_step = false;
};

struct VocabularyBuild {
    VisemeVocabulary vocabulary;
    ConfusionMatrix phoneme_confusion;
    LdaEnsemble viseme_ensemble; // retrained on the final groups
    bool reached_target = true;
};

inline ConfusionMatrix training_confusion(const FrameDataset& data, const LdaEnsemble& ens, std::span<const int> truth) {
    return confusion_matrix(truth, classify_rows(ensemble_likelihoods(data.x, ens)), ens.classes());
}

inline LdaEnsemble train_on_groups(const FrameDataset& data, const VisemeVocabulary& vocab, const BaggingOptions& opt) {
    const auto labels = map_sequence(vocab, data.labels);
    return bagging_train(data.x, labels, vocab.size(), opt, vocab.group_names(), data.utterance_of_frame);
}

/// Greedy vocabulary construction: one group per phoneme, training-set confusion of the phoneme
/// classifier, then repeated collapse + merge_step until `target` groups remain. Classifiers are
/// retrained on the final groups. An unreachable target stops early with reached_target = false.
inline VocabularyBuild build_vocabulary(const FrameDataset& data, const PhonemeSet& phonemes, int target,
                                        const VocabularyOptions& opt, const LdaEnsemble* phoneme_ensemble = nullptr) {
    const int C = static_cast<int>(phonemes.size());
    if (target < 1 || target > C) throw Error("build_vocabulary: target length must lie in [1, " + std::to_string(C) + "]");
    VocabularyBuild out;
    out.vocabulary = VisemeVocabulary::identity(phonemes);
    std::optional<LdaEnsemble> trained;
    if (!phoneme_ensemble) {
        trained = train_on_groups(data, out.vocabulary, opt.bagging);
        phoneme_ensemble = &*trained;
    }
    if (phoneme_ensemble->classes() != C) throw Error("build_vocabulary: phoneme classifier has the wrong class count");
    out.phoneme_confusion = training_confusion(data, *phoneme_ensemble, data.labels);

    while (out.vocabulary.size() > target) {
        ConfusionMatrix cm;
        if (opt.retrain_each_step && !out.vocabulary.is_identity()) {
            auto ens = train_on_groups(data, out.vocabulary, opt.bagging);
            cm = training_confusion(data, ens, map_sequence(out.vocabulary, data.labels));
        } else {
            cm = collapse(out.phoneme_confusion, out.vocabulary);
        }
        try {
            out.vocabulary = merge_step(out.vocabulary, cm).vocabulary;
        } catch (const Error&) {
            out.reached_target = false;
            break;
        }
    }
    out.viseme_ensemble = out.vocabulary.is_identity() ? *phoneme_ensemble : train_on_groups(data, out.vocabulary, opt.bagging);
    if (out.vocabulary.is_identity()) out.viseme_ensemble.class_names = out.vocabulary.group_names();
    return out;
}

// ---------------------------------------------------------------------------
// JSON file

inline nlohmann::json vocabulary_to_json(const VisemeVocabulary& v) {
    nlohmann::json doc;
    doc["phoneme_set"] = phoneme_set_to_json(v.phonemes());
    auto groups = nlohmann::json::array();
    for (const auto& g : v.groups()) {
        auto syms = nlohmann::json::array();
        for (int m : g.members) syms.push_back(v.phonemes().symbol(static_cast<std::size_t>(m)));
        groups.push_back(syms);
    }
    doc["groups"] = groups;
    auto hist = nlohmann::json::array();
    for (const auto& h : v.history())
        hist.push_back({{"step", h.step}, {"merged", {h.first, h.second}}, {"ambiguity", h.ambiguity}});
    doc["merge_history"] = hist;
    return doc;
}

inline VisemeVocabulary vocabulary_from_json(const nlohmann::json& doc) {
    try {
        PhonemeSet phonemes = doc.contains("phoneme_set") ? phoneme_set_from_json(doc.at("phoneme_set")) : spanish_sampa();
        std::vector<std::vector<int>> groups;
        for (const auto& g : doc.at("groups")) {
            std::vector<int> members;
            for (const auto& s : g) members.push_back(static_cast<int>(phonemes.index_of(s.get<std::string>())));
            groups.push_back(std::move(members));
        }
        std::vector<MergeRecord> history;
        if (doc.contains("merge_history"))
            for (const auto& h : doc.at("merge_history"))
                history.push_back({h.at("step").get<int>(), h.at("merged").at(0).get<int>(),
                                   h.at("merged").at(1).get<int>(), h.at("ambiguity").get<double>()});
        return VisemeVocabulary(std::move(phonemes), std::move(groups), std::move(history));
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("vocabulary file: ") + e.what());
    }
}

inline VisemeVocabulary load_vocabulary(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open vocabulary " + path.string());
    try {
        return vocabulary_from_json(nlohmann::json::parse(in));
    } catch (const nlohmann::json::exception& e) {
        throw DataError(path.string() + ": " + e.what());
    }
}

inline void save_vocabulary(const std::filesystem::path& path, const VisemeVocabulary& v,
                            const nlohmann::json& provenance = nullptr) {
    auto doc = vocabulary_to_json(v);
    if (!provenance.is_null()) doc["provenance"] = provenance;
    write_file_text(path, doc.dump(1) + "\n");
}

} // namespace lipread
