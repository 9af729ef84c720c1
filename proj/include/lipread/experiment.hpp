#pragma once

// In-memory experiment building blocks shared by the CLI stages and the tests: decoder
// assembly from training data, per-utterance decoding and corpus-level scoring.

#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "lipread/corpus.hpp"
#include "lipread/dataset.hpp"
#include "lipread/ensemble.hpp"
#include "lipread/eval.hpp"
#include "lipread/hmm.hpp"
#include "lipread/vocabulary.hpp"

namespace lipread {

/// Splits frame-aligned data into per-utterance sequences.
inline std::vector<std::vector<int>> split_by_utterance(const FrameDataset& data, std::span<const int> frames) {
    std::vector<std::vector<int>> out;
    for (std::size_t u = 0; u < data.utterances(); ++u)
        out.emplace_back(frames.begin() + static_cast<std::ptrdiff_t>(data.offsets[u]),
                         frames.begin() + static_cast<std::ptrdiff_t>(data.offsets[u + 1]));
    return out;
}

/// HMM over `names` states and symbols: A and pi from the true label sequences, B from what the
/// classifier predicted on the same (training) frames.
inline HmmModel fit_label_hmm(const FrameDataset& data, std::span<const int> truth, std::span<const int> predicted,
                              const std::vector<std::string>& names, double relative_smoothing) {
    const auto t = split_by_utterance(data, truth);
    const auto o = split_by_utterance(data, predicted);
    HmmFitOptions opt;
    opt.relative_smoothing = relative_smoothing;
    const int n = static_cast<int>(names.size());
    auto m = hmm_fit(t, o, n, n, opt);
    m.states = names;
    m.observations = names;
    return m;
}

/// Phoneme bigram model used to map visemes back to phonemes.
inline HmmModel phoneme_transition_hmm(const FrameDataset& train, const PhonemeSet& phonemes, double relative_smoothing) {
    std::vector<std::string> names;
    for (std::size_t i = 0; i < phonemes.size(); ++i) names.push_back(phonemes.symbol(i));
    return fit_label_hmm(train, train.labels, train.labels, names, relative_smoothing);
}

/// Everything needed to decode one vocabulary.
struct DecoderSystem {
    VisemeVocabulary vocab;
    LdaEnsemble ensemble;  // one class per viseme group
    HmmModel viseme_hmm;   // viseme states emitting viseme symbols
    HmmModel phoneme_hmm;  // phoneme states emitting viseme symbols (constrained)
};

inline DecoderSystem make_decoder(const FrameDataset& train, VisemeVocabulary vocab, LdaEnsemble ensemble,
                                  const HmmModel& phoneme_transitions, double relative_smoothing) {
    if (ensemble.classes() != vocab.size()) throw Error("make_decoder: classifier does not match the vocabulary");
    DecoderSystem sys;
    const auto truth = map_sequence(vocab, train.labels);
    const auto predicted = classify_rows(ensemble_likelihoods(train.x, ensemble));
    sys.viseme_hmm = fit_label_hmm(train, truth, predicted, vocab.group_names(), relative_smoothing);
    sys.phoneme_hmm = constrained_phoneme_hmm(phoneme_transitions, vocab);
    sys.vocab = std::move(vocab);
    sys.ensemble = std::move(ensemble);
    return sys;
}

/// rank 0 is the baseline: standard Viterbi on the argmax observations, no likelihood weighting.
struct DecodeMode {
    int rank = 0;

    bool baseline() const { return rank == 0; }
    std::string label() const { return baseline() ? "baseline" : "rank" + std::to_string(rank); }
};

struct UtteranceDecode {
    std::vector<int> visemes;  // per frame
    std::vector<int> phonemes; // per frame
    std::vector<std::string> words;
    double log_prob = 0.0;
    bool impossible = false;
};

inline UtteranceDecode decode_likelihoods(const DecoderSystem& sys, const Eigen::MatrixXd& likelihoods, DecodeMode mode,
                                          const PronunciationDictionary* lexicon = nullptr, double word_penalty = 0.5) {
    UtteranceDecode out;
    if (likelihoods.rows() == 0) return out;
    const auto path = mode.baseline() ? viterbi_baseline(sys.viseme_hmm, likelihoods)
                                      : viterbi_soft(sys.viseme_hmm, likelihoods, std::min(mode.rank, sys.vocab.size()));
    out.visemes = path.states;
    out.log_prob = path.log_prob;
    out.impossible = path.impossible;
    out.phonemes = viseme_to_phoneme(sys.phoneme_hmm, out.visemes, sys.vocab);
    if (lexicon) {
        WordDecodeOptions wo;
        wo.word_penalty = word_penalty;
        wo.silence = static_cast<int>(sys.vocab.phonemes().silence_index());
        out.words = word_decode(collapse_runs(out.phonemes), *lexicon, wo);
    }
    return out;
}

inline UtteranceDecode decode_features(const DecoderSystem& sys, const Eigen::MatrixXd& features, DecodeMode mode,
                                       const PronunciationDictionary* lexicon = nullptr, double word_penalty = 0.5) {
    return decode_likelihoods(sys, ensemble_likelihoods(features, sys.ensemble), mode, lexicon, word_penalty);
}

// ---------------------------------------------------------------------------
// Scoring

/// Pooled alignment counts; accuracy is (H - I) / N over the whole set.
struct Tally {
    std::int64_t hits = 0, substitutions = 0, deletions = 0, insertions = 0, ref_length = 0;

    void add(const AlignmentResult& a) {
        hits += a.hits;
        substitutions += a.substitutions;
        deletions += a.deletions;
        insertions += a.insertions;
        ref_length += a.ref_length;
    }
    std::optional<double> accuracy() const {
        if (ref_length == 0) return std::nullopt;
        return static_cast<double>(hits - insertions) / static_cast<double>(ref_length);
    }
    std::optional<double> correct() const {
        if (ref_length == 0) return std::nullopt;
        return static_cast<double>(hits) / static_cast<double>(ref_length);
    }
};

struct UtteranceScore {
    std::string id;
    AlignmentResult viseme, phoneme;
    std::optional<AlignmentResult> word;
    double viseme_frame_accuracy = 0.0, phoneme_frame_accuracy = 0.0;
};

struct SetScore {
    Tally viseme, phoneme, word;
    std::int64_t frames = 0, viseme_frames_correct = 0, phoneme_frames_correct = 0;
    std::vector<UtteranceScore> utterances;
    ConfusionMatrix viseme_confusion; // frame level, truth x decoded

    std::optional<double> viseme_frame_accuracy() const {
        if (frames == 0) return std::nullopt;
        return static_cast<double>(viseme_frames_correct) / static_cast<double>(frames);
    }
    std::optional<double> phoneme_frame_accuracy() const {
        if (frames == 0) return std::nullopt;
        return static_cast<double>(phoneme_frames_correct) / static_cast<double>(frames);
    }
};

/// Token accuracies come from run-collapsed tracks; words are scored only when the utterance has
/// a reference word sequence and decoding produced words (a lexicon was given).
inline SetScore score_decodes(const VisemeVocabulary& vocab, const Corpus& test, const std::vector<UtteranceDecode>& decodes,
                              bool score_words) {
    if (decodes.size() != test.utterances.size()) throw Error("score_decodes: decode count does not match the corpus");
    SetScore s;
    s.viseme_confusion = ConfusionMatrix(vocab.size());
    for (std::size_t u = 0; u < decodes.size(); ++u) {
        const auto& utt = test.utterances[u];
        const auto& d = decodes[u];
        if (d.visemes.size() != utt.labels.size() || d.phonemes.size() != utt.labels.size())
            throw Error("score_decodes: utterance " + utt.id + " has a track of the wrong length");
        const auto truth_v = map_sequence(vocab, utt.labels);
        UtteranceScore us;
        us.id = utt.id;
        us.viseme = align(collapse_runs(truth_v), collapse_runs(d.visemes));
        us.phoneme = align(collapse_runs(utt.labels), collapse_runs(d.phonemes));
        std::int64_t vc = 0, pc = 0;
        for (std::size_t t = 0; t < utt.labels.size(); ++t) {
            vc += truth_v[t] == d.visemes[t];
            pc += utt.labels[t] == d.phonemes[t];
            s.viseme_confusion(truth_v[t], d.visemes[t]) += 1;
        }
        const auto n = static_cast<double>(std::max<std::size_t>(utt.labels.size(), 1));
        us.viseme_frame_accuracy = static_cast<double>(vc) / n;
        us.phoneme_frame_accuracy = static_cast<double>(pc) / n;
        s.frames += static_cast<std::int64_t>(utt.labels.size());
        s.viseme_frames_correct += vc;
        s.phoneme_frames_correct += pc;
        s.viseme.add(us.viseme);
        s.phoneme.add(us.phoneme);
        if (score_words && !utt.words.empty()) {
            us.word = align(utt.words, d.words);
            s.word.add(*us.word);
        }
        s.utterances.push_back(std::move(us));
    }
    return s;
}

} // namespace lipread
