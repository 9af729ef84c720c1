#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <random>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "lipread/corpus.hpp"
#include "lipread/dct.hpp"
#include "lipread/error.hpp"

namespace lipread {

/// Recipe for a synthetic corpus with known ground truth.
///
/// Each class owns an image template built from `feature_dim` low-frequency DCT components;
/// planted pairs share one template, so their frames differ only by noise. Without a lexicon,
/// frame labels follow a known frame-level Markov chain; with a lexicon, utterances are word
/// sequences with geometric phoneme durations.
struct SyntheticSpec {
    int n_classes = 12;  // including silence (index 0)
    int n_vowels = -1;   // -1: a third of the non-silence classes
    std::vector<std::pair<int, int>> confusable_pairs;
    int feature_dim = 16;
    double class_separation = 4.0; // expected template distance in DCT space
    double noise = 0.05;           // per-pixel Gaussian noise std
    double frames_per_state = 4.0; // mean dwell
    int n_utterances = 200;
    int frames_per_utterance = 30; // chain mode
    int n_speakers = 10;
    double label_noise = 0.0;      // probability that a segment boundary frame shows its neighbour
    std::uint64_t seed = 0;

    PronunciationDictionary lexicon; // non-empty: word mode
    int words_per_utterance = 3;
    double pause_probability = 0.3;  // silence between consecutive words
};

inline int synthetic_vowel_count(const SyntheticSpec& s) {
    return s.n_vowels >= 0 ? s.n_vowels : (s.n_classes - 1) / 3;
}

/// Class 0 is silence ("sil"), then vowels v1..vK, then consonants c1..
inline PhonemeSet synthetic_phoneme_set(int n_classes, int n_vowels) {
    if (n_classes < 2) throw Error("synthetic phoneme set needs at least 2 classes");
    if (n_vowels < 0 || n_vowels > n_classes - 1) throw Error("synthetic phoneme set: bad vowel count");
    std::vector<PhonemeClass> v{{"sil", PhonemeKind::silence}};
    for (int i = 1; i <= n_vowels; ++i) v.push_back({"v" + std::to_string(i), PhonemeKind::vowel});
    for (int i = 1; i < n_classes - n_vowels; ++i) v.push_back({"c" + std::to_string(i), PhonemeKind::consonant});
    return PhonemeSet(std::move(v));
}

inline PhonemeSet synthetic_phoneme_set(const SyntheticSpec& s) {
    return synthetic_phoneme_set(s.n_classes, synthetic_vowel_count(s));
}

inline void validate(const SyntheticSpec& s) {
    const auto set = synthetic_phoneme_set(s);
    for (auto [i, j] : s.confusable_pairs) {
        if (i == j || i < 0 || j < 0 || i >= s.n_classes || j >= s.n_classes)
            throw Error("synthetic spec: invalid planted pair");
        if (set.kind(static_cast<std::size_t>(i)) != set.kind(static_cast<std::size_t>(j)) ||
            set.kind(static_cast<std::size_t>(i)) == PhonemeKind::silence)
            throw Error("synthetic spec: planted pairs must join two vowels or two consonants");
    }
    if (!(s.class_separation > 0.0)) throw Error("synthetic spec: class_separation must be > 0");
    if (s.feature_dim < 1 || s.feature_dim >= kRoiPixels) throw Error("synthetic spec: bad feature_dim");
    if (!(s.noise >= 0.0)) throw Error("synthetic spec: noise must be >= 0");
    if (!(s.frames_per_state >= 1.0)) throw Error("synthetic spec: frames_per_state must be >= 1");
    if (s.n_utterances < 1 || s.frames_per_utterance < 1 || s.n_speakers < 1)
        throw Error("synthetic spec: counts must be positive");
    if (!(s.label_noise >= 0.0 && s.label_noise <= 1.0)) throw Error("synthetic spec: label_noise must lie in [0,1]");
}

/// Generating parameters, exposed for oracles.
struct SyntheticTruth {
    PhonemeSet phonemes;
    Eigen::MatrixXd successor;        // token-level, zero diagonal
    Eigen::MatrixXd frame_transition; // frame-level chain used in chain mode
    std::vector<Grid> templates;
};

inline SyntheticTruth synthetic_truth(const SyntheticSpec& s) {
    validate(s);
    SyntheticTruth truth;
    truth.phonemes = synthetic_phoneme_set(s);
    const int C = s.n_classes;
    std::mt19937_64 rng(s.seed ^ 0x9e3779b97f4a7c15ull);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::normal_distribution<double> gauss(0.0, 1.0);

    truth.successor = Eigen::MatrixXd::Zero(C, C);
    for (int i = 0; i < C; ++i) {
        for (int j = 0; j < C; ++j)
            if (j != i) truth.successor(i, j) = 0.02 + std::pow(unit(rng), 4.0);
        truth.successor.row(i) /= truth.successor.row(i).sum();
    }
    const double stay = 1.0 - 1.0 / s.frames_per_state;
    truth.frame_transition = truth.successor * (1.0 - stay);
    truth.frame_transition.diagonal().array() += stay;

    const double scale = s.class_separation / std::sqrt(2.0 * s.feature_dim);
    const auto& order = roi_zigzag();
    std::vector<Eigen::VectorXd> latent(static_cast<std::size_t>(C));
    for (int c = 0; c < C; ++c) {
        latent[static_cast<std::size_t>(c)].resize(s.feature_dim);
        for (int k = 0; k < s.feature_dim; ++k) latent[static_cast<std::size_t>(c)][k] = scale * gauss(rng);
    }
    for (auto [i, j] : s.confusable_pairs) latent[static_cast<std::size_t>(j)] = latent[static_cast<std::size_t>(i)];
    for (int c = 0; c < C; ++c) {
        Grid coeffs = Grid::Zero(kRoiHeight, kRoiWidth);
        for (int k = 0; k < s.feature_dim; ++k)
            coeffs(order[static_cast<std::size_t>(k + 1)].first, order[static_cast<std::size_t>(k + 1)].second) =
                latent[static_cast<std::size_t>(c)][k];
        truth.templates.push_back((idct2(coeffs).array() + 0.5).matrix());
    }
    return truth;
}

inline std::string synthetic_utterance_id(int i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "utt%05d", i);
    return buf;
}

/// Generates the corpus. Identical specs give bit-identical corpora; frames are quantized to
/// 8-bit levels so that writing and reloading them is lossless.
inline Corpus generate_synthetic_corpus(const SyntheticSpec& s) {
    const auto truth = synthetic_truth(s);
    const int C = s.n_classes;
    Corpus corpus;
    corpus.phonemes = truth.phonemes;
    const int sil = static_cast<int>(truth.phonemes.silence_index());
    std::mt19937_64 rng(s.seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::geometric_distribution<int> extra_frames(1.0 / s.frames_per_state);

    std::vector<std::pair<std::string, const Pronunciation*>> vocab;
    for (const auto& [w, prons] : s.lexicon.entries)
        for (const auto& p : prons) {
            for (int ph : p)
                if (ph < 0 || ph >= C || ph == sil) throw Error("synthetic spec: lexicon uses an invalid phoneme");
            vocab.emplace_back(w, &p);
        }

    for (int u = 0; u < s.n_utterances; ++u) {
        Utterance utt;
        utt.id = synthetic_utterance_id(u);
        char spk[32];
        std::snprintf(spk, sizeof spk, "spk%02d", u % s.n_speakers);
        utt.speaker = spk;

        if (vocab.empty()) {
            int state = sil;
            for (int t = 0; t < s.frames_per_utterance; ++t) {
                if (t > 0) {
                    const double r = unit(rng);
                    double acc = 0.0;
                    int next = C - 1;
                    for (int j = 0; j < C; ++j) {
                        acc += truth.frame_transition(state, j);
                        if (r < acc) {
                            next = j;
                            break;
                        }
                    }
                    state = next;
                }
                utt.labels.push_back(state);
            }
        } else {
            std::vector<int> tokens{sil};
            std::uniform_int_distribution<std::size_t> pick(0, vocab.size() - 1);
            for (int w = 0; w < s.words_per_utterance; ++w) {
                if (w > 0 && unit(rng) < s.pause_probability) tokens.push_back(sil);
                const auto& entry = vocab[pick(rng)];
                utt.words.push_back(entry.first);
                tokens.insert(tokens.end(), entry.second->begin(), entry.second->end());
            }
            tokens.push_back(sil);
            for (int tok : tokens) {
                const int dwell = 1 + extra_frames(rng);
                utt.labels.insert(utt.labels.end(), static_cast<std::size_t>(dwell), tok);
            }
        }

        // appearance class per frame: label, except boundary frames swapped under label noise
        std::vector<int> shown = utt.labels;
        for (std::size_t t = 1; t < utt.labels.size(); ++t) {
            if (utt.labels[t] == utt.labels[t - 1]) continue;
            if (unit(rng) < s.label_noise) {
                if (unit(rng) < 0.5) shown[t - 1] = utt.labels[t];
                else shown[t] = utt.labels[t - 1];
            }
        }
        for (int cls : shown) {
            Grid g = truth.templates[static_cast<std::size_t>(cls)];
            for (Eigen::Index i = 0; i < g.size(); ++i) {
                double v = g.data()[i] + s.noise * gauss(rng);
                g.data()[i] = static_cast<double>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)) / 255.0;
            }
            utt.frames.push_back(RoiFrame::from_pixels(std::move(g)));
        }
        corpus.utterances.push_back(std::move(utt));
    }
    return corpus;
}

/// Random lexicon over the non-silence classes: alternating consonant/vowel words of 3-5
/// phonemes, named w01, w02, ...; no two words share a pronunciation.
inline PronunciationDictionary synthetic_lexicon(const PhonemeSet& phonemes, int n_words, std::uint64_t seed) {
    std::vector<int> vowels, consonants;
    for (std::size_t i = 0; i < phonemes.size(); ++i) {
        if (phonemes.kind(i) == PhonemeKind::vowel) vowels.push_back(static_cast<int>(i));
        if (phonemes.kind(i) == PhonemeKind::consonant) consonants.push_back(static_cast<int>(i));
    }
    if (vowels.empty() || consonants.empty()) throw Error("synthetic_lexicon: need vowels and consonants");
    std::mt19937_64 rng(seed ^ 0x243f6a8885a308d3ull);
    std::uniform_int_distribution<int> len(3, 5);
    PronunciationDictionary dict;
    std::set<Pronunciation> used;
    for (int w = 0; w < n_words;) {
        Pronunciation p;
        const int n = len(rng);
        const bool start_vowel = rng() % 2 == 0;
        for (int k = 0; k < n; ++k) {
            const auto& pool = ((k % 2 == 0) == start_vowel) ? vowels : consonants;
            p.push_back(pool[rng() % pool.size()]);
        }
        if (!used.insert(p).second) continue;
        char name[16];
        std::snprintf(name, sizeof name, "w%02d", w + 1);
        dict.add(name, std::move(p));
        ++w;
    }
    return dict;
}

} // namespace lipread
