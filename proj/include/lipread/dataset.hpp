#pragma once

#include <vector>

#include <Eigen/Dense>

#include "lipread/corpus.hpp"
#include "lipread/error.hpp"
#include "lipread/features.hpp"

namespace lipread {

/// All frames of a set of utterances stacked into one matrix.
struct FrameDataset {
    Eigen::MatrixXd x;
    std::vector<int> labels;
    std::vector<std::size_t> utterance_of_frame;
    std::vector<std::size_t> offsets; // first row of each utterance, plus a final end marker

    std::size_t utterances() const { return offsets.empty() ? 0 : offsets.size() - 1; }
    Eigen::Index rows(std::size_t u) const { return static_cast<Eigen::Index>(offsets[u + 1] - offsets[u]); }
    auto utterance_rows(const Eigen::MatrixXd& m, std::size_t u) const {
        return m.middleRows(static_cast<Eigen::Index>(offsets[u]), rows(u));
    }
    std::vector<int> utterance_labels(std::size_t u) const {
        return {labels.begin() + static_cast<std::ptrdiff_t>(offsets[u]),
                labels.begin() + static_cast<std::ptrdiff_t>(offsets[u + 1])};
    }
};

inline FrameDataset stack_features(const std::vector<FeatureSequence>& feats, const std::vector<LabelSeq>& labels) {
    if (feats.size() != labels.size()) throw Error("stack_features: feature/label utterance count mismatch");
    FrameDataset ds;
    std::size_t total = 0;
    Eigen::Index dim = -1;
    for (std::size_t u = 0; u < feats.size(); ++u) {
        if (static_cast<std::size_t>(feats[u].frames()) != labels[u].size())
            throw Error("stack_features: utterance " + std::to_string(u) + " has mismatched frames and labels");
        if (feats[u].frames() > 0) {
            if (dim >= 0 && feats[u].dim() != dim) throw Error("stack_features: inconsistent feature dimension");
            dim = feats[u].dim();
        }
        total += labels[u].size();
    }
    ds.x.resize(static_cast<Eigen::Index>(total), std::max<Eigen::Index>(dim, 0));
    ds.offsets.push_back(0);
    std::size_t row = 0;
    for (std::size_t u = 0; u < feats.size(); ++u) {
        if (feats[u].frames() > 0) ds.x.middleRows(static_cast<Eigen::Index>(row), feats[u].frames()) = feats[u].values;
        for (int l : labels[u]) {
            ds.labels.push_back(l);
            ds.utterance_of_frame.push_back(u);
        }
        row += labels[u].size();
        ds.offsets.push_back(row);
    }
    return ds;
}

inline FrameDataset stack_features(const std::vector<FeatureSequence>& feats, const Corpus& corpus) {
    std::vector<LabelSeq> labels;
    for (const auto& u : corpus.utterances) labels.push_back(u.labels);
    return stack_features(feats, labels);
}

} // namespace lipread
