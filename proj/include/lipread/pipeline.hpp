#pragma once

// File-backed experiment stages. Layout under the configured output directory:
//
//   features/feature_models.bin     fitted PCA bases and z-score statistics
//   features/{train,test}/<id>.lrfc per-utterance feature caches
//   models/phoneme_ensemble.lrld    bagged LDA over phonemes
//   models/phoneme_hmm.json         phoneme HMM (transitions from truth, emissions from predictions)
//   vocab/vocab_<L>.json            viseme vocabulary with L groups
//   models/viseme_<L>.lrld          classifier retrained on the L groups
//   models/viseme_<L>_hmm.json      viseme HMM
//   decode/L<L>_<mode>/<id>.json    per-utterance viseme/phoneme/word tracks
//   reports/*.csv                   evaluation tables
//
// Every artifact carries the config hash and seed, so reruns with one config are byte-identical.

#include <algorithm>
#include <filesystem>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "lipread/binary_io.hpp"
#include "lipread/config.hpp"
#include "lipread/corpus.hpp"
#include "lipread/dataset.hpp"
#include "lipread/ensemble.hpp"
#include "lipread/eval.hpp"
#include "lipread/experiment.hpp"
#include "lipread/feature_cache.hpp"
#include "lipread/features.hpp"
#include "lipread/hashing.hpp"
#include "lipread/hmm.hpp"
#include "lipread/report.hpp"
#include "lipread/vocabulary.hpp"

namespace lipread {

namespace fs = std::filesystem;

/// Hash of what feature extraction reads from an utterance (id and pixels).
inline Digest utterance_content_hash(const Utterance& u) {
    Sha256 h;
    h.update(u.id.data(), u.id.size());
    h.update_value(static_cast<std::uint64_t>(u.frames.size()));
    for (const auto& f : u.frames) h.update(f.pixels().data(), static_cast<std::size_t>(f.pixels().size()) * sizeof(double));
    return h.finish();
}

// ---------------------------------------------------------------------------
// Feature model file: "LRFM", version, source hash, metadata, models, SHA-256 trailer.

inline constexpr std::uint32_t kFeatureModelVersion = 1;

struct FeatureModelFile {
    FeatureModels models;
    Digest source_hash{};
    std::string metadata;
};

inline std::vector<unsigned char> encode_feature_models(const FeatureModelFile& f) {
    ByteWriter w;
    w.raw("LRFM");
    w.put<std::uint32_t>(kFeatureModelVersion);
    w.raw(std::string(f.source_hash.begin(), f.source_hash.end()));
    w.str(f.metadata);
    write_feature_models(w, f.models);
    const auto sum = sha256(w.bytes().data(), w.bytes().size());
    w.raw(std::string(sum.begin(), sum.end()));
    return w.bytes();
}

inline FeatureModelFile decode_feature_models(const std::vector<unsigned char>& bytes, const std::string& what) {
    if (bytes.size() < 4 + 32) throw DataError(what + ": truncated feature model file");
    const auto body = bytes.size() - 32;
    const auto sum = sha256(bytes.data(), body);
    if (!std::equal(sum.begin(), sum.end(), bytes.begin() + static_cast<std::ptrdiff_t>(body)))
        throw DataError(what + ": feature model checksum mismatch");
    ByteReader r(bytes.data(), body, what);
    if (r.raw(4) != "LRFM") throw DataError(what + ": not a feature model file");
    if (r.get<std::uint32_t>() != kFeatureModelVersion) throw DataError(what + ": unsupported feature model version");
    FeatureModelFile f;
    const auto h = r.raw(32);
    std::copy(h.begin(), h.end(), f.source_hash.begin());
    f.metadata = r.str();
    f.models = read_feature_models(r);
    if (r.remaining() != 0) throw DataError(what + ": trailing bytes in feature model file");
    return f;
}

// ---------------------------------------------------------------------------

struct SplitCorpus {
    Corpus train, test;
};

/// Fold index per utterance: round-robin over the id-sorted list, so folds are disjoint and
/// sizes differ by at most one.
inline std::vector<int> fold_assignment(std::size_t n_utterances, int folds) {
    if (folds < 2) throw Error("fold_assignment: need at least 2 folds");
    if (n_utterances < static_cast<std::size_t>(folds)) throw Error("fold_assignment: fewer utterances than folds");
    std::vector<int> out(n_utterances);
    for (std::size_t i = 0; i < n_utterances; ++i) out[i] = static_cast<int>(i % static_cast<std::size_t>(folds));
    return out;
}

struct ExtractStats {
    std::size_t computed = 0, skipped = 0, repaired = 0;
    bool models_refit = false;
};

struct VocabSummary {
    int length = 0;
    VisemeVocabulary vocabulary;
    double training_frame_accuracy = 0.0;
};

struct CrossValidationRow {
    std::string feature_set;
    int fold = 0;
    std::size_t n_train = 0, n_test = 0;
    SetScore score;
};

class Pipeline {
public:
    explicit Pipeline(ExperimentConfig cfg, std::ostream* log = nullptr) : cfg_(std::move(cfg)), log_(log) {
        cfg_.features.seed = cfg_.seed;
        cfg_.bagging.seed = cfg_.seed;
        cfg_.validate();
        hash_ = cfg_.hash();
    }

    const ExperimentConfig& config() const { return cfg_; }
    const std::string& config_hash() const { return hash_; }
    nlohmann::json provenance() const { return {{"config_hash", hash_}, {"seed", cfg_.seed}}; }
    std::string metadata() const { return provenance().dump(); }
    std::string csv_provenance() const { return "config_hash=" + hash_ + ",seed=" + std::to_string(cfg_.seed); }

    fs::path out() const { return cfg_.out(); }
    fs::path feature_models_path() const { return out() / "features" / "feature_models.bin"; }
    fs::path cache_path(const std::string& split, const std::string& id) const {
        return out() / "features" / split / (id + ".lrfc");
    }
    fs::path phoneme_ensemble_path() const { return out() / "models" / "phoneme_ensemble.lrld"; }
    fs::path phoneme_hmm_path() const { return out() / "models" / "phoneme_hmm.json"; }
    fs::path vocab_path(int L) const { return out() / "vocab" / ("vocab_" + std::to_string(L) + ".json"); }
    fs::path viseme_ensemble_path(int L) const { return out() / "models" / ("viseme_" + std::to_string(L) + ".lrld"); }
    fs::path viseme_hmm_path(int L) const { return out() / "models" / ("viseme_" + std::to_string(L) + "_hmm.json"); }
    fs::path decode_dir(int L, DecodeMode m) const {
        return out() / "decode" / ("L" + std::to_string(L) + "_" + m.label());
    }
    fs::path report_path(const std::string& name) const { return out() / "reports" / name; }

    const SplitCorpus& data() {
        if (!data_) {
            SplitCorpus d;
            if (!cfg_.test_manifest.empty()) {
                d.train = load_manifest(cfg_.resolve(cfg_.manifest));
                d.test = load_manifest(cfg_.resolve(cfg_.test_manifest));
                if (d.train.phonemes != d.test.phonemes) throw DataError("train and test manifests use different phoneme sets");
            } else {
                auto all = load_manifest(cfg_.resolve(cfg_.manifest));
                auto [tr, te] = split_per_speaker(all, static_cast<std::size_t>(cfg_.train_per_speaker));
                d.train = std::move(tr);
                d.test = std::move(te);
            }
            if (d.train.utterances.empty()) throw DataError("training set is empty");
            if (d.test.utterances.empty()) throw DataError("test set is empty");
            data_ = std::move(d);
        }
        return *data_;
    }

    const PhonemeSet& phonemes() { return data().train.phonemes; }
    int n_phonemes() { return static_cast<int>(phonemes().size()); }

    const PronunciationDictionary* lexicon() {
        if (cfg_.lexicon.empty()) return nullptr;
        if (!lexicon_) {
            lexicon_ = load_lexicon(cfg_.resolve(cfg_.lexicon), phonemes());
            if (lexicon_->empty()) throw DataError("lexicon " + cfg_.lexicon + " has no entries");
        }
        return &*lexicon_;
    }

    std::vector<int> lengths() {
        if (cfg_.vocab_lengths.empty()) return {n_phonemes()};
        return cfg_.vocab_lengths;
    }
    int decode_length() { return cfg_.decode_length > 0 ? cfg_.decode_length : lengths().front(); }
    DecodeMode default_mode(int L) const {
        if (cfg_.baseline) return {0};
        return {cfg_.rank == 0 ? L : std::min(cfg_.rank, L)};
    }

    // -----------------------------------------------------------------------
    // extract

    ExtractStats extract() {
        const auto& d = data();
        ExtractStats st;
        Sha256 src;
        const auto fc = feature_config_text();
        src.update(fc.data(), fc.size());
        for (const auto& u : d.train.utterances) {
            const auto h = utterance_content_hash(u);
            src.update(h.data(), h.size());
        }
        const Digest models_src = src.finish();

        bool refit = true;
        if (fs::exists(feature_models_path())) {
            try {
                const auto f = decode_feature_models(read_file_bytes(feature_models_path()), feature_models_path().string());
                refit = f.source_hash != models_src;
            } catch (const DataError& e) {
                note(std::string("recomputing feature models: ") + e.what());
            }
        }
        if (refit) {
            note("fitting feature models on " + std::to_string(d.train.utterances.size()) + " utterances");
            FeatureModelFile f{fit_feature_models(d.train, cfg_.features), models_src, metadata()};
            write_file_bytes(feature_models_path(), encode_feature_models(f));
            st.models_refit = true;
        }
        const auto model_bytes = read_file_bytes(feature_models_path());
        const auto models = decode_feature_models(model_bytes, feature_models_path().string()).models;
        const auto models_digest = sha256(model_bytes.data(), model_bytes.size());

        for (const auto& [split, corpus] : {std::pair{"train", &d.train}, std::pair{"test", &d.test}}) {
            for (const auto& u : corpus->utterances) {
                const auto want = cache_source(models_digest, u);
                const auto path = cache_path(split, u.id);
                if (fs::exists(path)) {
                    try {
                        if (read_feature_cache(path).source_hash == want) {
                            ++st.skipped;
                            continue;
                        }
                    } catch (const DataError& e) {
                        note(std::string("recomputing ") + e.what());
                        ++st.repaired;
                    }
                }
                write_feature_cache(path, FeatureCache{extract_features(u, models), want, metadata()});
                ++st.computed;
            }
        }
        note("extract: " + std::to_string(st.computed) + " computed, " + std::to_string(st.skipped) + " up to date");
        return st;
    }

    /// Loads cached features of one split; missing or stale caches are errors.
    std::vector<FeatureSequence> load_features(const std::string& split) {
        const auto& corpus = split == "train" ? data().train : data().test;
        if (!fs::exists(feature_models_path())) throw IoError("missing " + feature_models_path().string() + ": run extract");
        const auto model_bytes = read_file_bytes(feature_models_path());
        const auto models_digest = sha256(model_bytes.data(), model_bytes.size());
        std::vector<FeatureSequence> out;
        for (const auto& u : corpus.utterances) {
            const auto path = cache_path(split, u.id);
            if (!fs::exists(path)) throw IoError("missing feature cache " + path.string() + ": run extract");
            auto c = read_feature_cache(path);
            if (c.source_hash != cache_source(models_digest, u))
                throw DataError("stale feature cache " + path.string() + ": run extract");
            out.push_back(std::move(c.features));
        }
        return out;
    }

    FrameDataset dataset(const std::string& split) {
        return stack_features(load_features(split), split == "train" ? data().train : data().test);
    }

    // -----------------------------------------------------------------------
    // train

    void train() {
        const auto ds = dataset("train");
        const auto names = symbols();
        note("training " + std::to_string(cfg_.bagging.n_bags) + " bagged LDA models on " + std::to_string(ds.x.rows()) +
             " frames");
        const auto ens = bagging_train(ds.x, ds.labels, n_phonemes(), cfg_.bagging, names, ds.utterance_of_frame);
        save_ensemble(phoneme_ensemble_path(), ens, metadata());
        const auto predicted = classify_rows(ensemble_likelihoods(ds.x, ens));
        save_hmm(phoneme_hmm_path(), fit_label_hmm(ds, ds.labels, predicted, names, cfg_.hmm_smoothing), provenance());
    }

    /// K-fold cross-validation over the training utterances for every configured feature set,
    /// decoding with the identity vocabulary. Writes reports/cross_validation.csv.
    std::vector<CrossValidationRow> cross_validate(int folds) {
        const auto& tr = data().train;
        const auto fold = fold_assignment(tr.utterances.size(), folds);
        std::vector<CrossValidationRow> rows;
        for (const auto& streams : feature_sets()) {
            for (int k = 0; k < folds; ++k) {
                Corpus a{tr.phonemes, {}}, b{tr.phonemes, {}};
                for (std::size_t i = 0; i < tr.utterances.size(); ++i)
                    (fold[i] == k ? b : a).utterances.push_back(tr.utterances[i]);
                note("cross-validation " + stream_list_name(streams) + " fold " + std::to_string(k + 1) + "/" +
                     std::to_string(folds));
                CrossValidationRow row{stream_list_name(streams), k, a.utterances.size(), b.utterances.size(),
                                       run_feature_set(a, b, streams)};
                rows.push_back(std::move(row));
            }
        }
        CsvTable t({"feature_set", "fold", "n_train", "n_test", "phoneme_token_acc", "phoneme_frame_acc"}, csv_provenance());
        for (const auto& r : rows)
            t.row({r.feature_set, std::to_string(r.fold), std::to_string(r.n_train), std::to_string(r.n_test),
                   format_number(require(r.score.phoneme.accuracy(), "cross-validation phoneme accuracy")),
                   format_number(require(r.score.phoneme_frame_accuracy(), "cross-validation frame accuracy"))});
        t.write(report_path("cross_validation.csv"));
        return rows;
    }

    // -----------------------------------------------------------------------
    // build-vocab / sweep-vocab

    VocabSummary build_vocab(int L) {
        const int C = n_phonemes();
        if (L < 1 || L > C) throw Error("vocabulary length " + std::to_string(L) + " outside [1, " + std::to_string(C) + "]");
        const auto ds = dataset("train");
        const auto ens = load_checked_ensemble(phoneme_ensemble_path(), "train");
        if (ens.classes() != C) throw DataError(phoneme_ensemble_path().string() + ": class count does not match the corpus");
        VocabularyOptions opt{cfg_.bagging, cfg_.retrain_each_step};
        note("building vocabulary of length " + std::to_string(L));
        auto b = build_vocabulary(ds, phonemes(), L, opt, &ens);
        if (!b.reached_target)
            throw Error("vocabulary length " + std::to_string(L) + " is unreachable under the merge constraints (stopped at " +
                        std::to_string(b.vocabulary.size()) + " groups)");
        const auto phoneme_hmm = load_hmm(phoneme_hmm_path());
        auto sys = make_decoder(ds, b.vocabulary, b.viseme_ensemble, phoneme_hmm, cfg_.hmm_smoothing);
        save_vocabulary(vocab_path(L), b.vocabulary, provenance());
        save_ensemble(viseme_ensemble_path(L), b.viseme_ensemble, metadata());
        save_hmm(viseme_hmm_path(L), sys.viseme_hmm, provenance());

        const auto truth = map_sequence(b.vocabulary, ds.labels);
        const auto pred = classify_rows(ensemble_likelihoods(ds.x, b.viseme_ensemble));
        std::size_t ok = 0;
        for (std::size_t i = 0; i < truth.size(); ++i) ok += truth[i] == pred[i];
        return {L, b.vocabulary, static_cast<double>(ok) / static_cast<double>(std::max<std::size_t>(truth.size(), 1))};
    }

    std::vector<VocabSummary> sweep_vocab() {
        std::vector<VocabSummary> out;
        CsvTable t({"length", "groups", "merges", "training_frame_acc", "vocabulary"}, csv_provenance());
        for (int L : lengths()) {
            auto s = build_vocab(L);
            std::string names;
            for (const auto& n : s.vocabulary.group_names()) names += (names.empty() ? "" : " ") + n;
            t.row({std::to_string(L), std::to_string(s.vocabulary.size()), std::to_string(s.vocabulary.history().size()),
                   format_number(s.training_frame_accuracy), names});
            out.push_back(std::move(s));
        }
        t.write(report_path("vocab_lengths.csv"));
        return out;
    }

    // -----------------------------------------------------------------------
    // decode / evaluate

    DecoderSystem load_decoder(int L) {
        DecoderSystem sys;
        if (!fs::exists(vocab_path(L))) throw IoError("missing " + vocab_path(L).string() + ": run build-vocab");
        sys.vocab = load_vocabulary(vocab_path(L));
        if (sys.vocab.phonemes() != phonemes()) throw DataError(vocab_path(L).string() + ": phoneme set differs from the corpus");
        sys.ensemble = load_checked_ensemble(viseme_ensemble_path(L), "build-vocab");
        if (!fs::exists(viseme_hmm_path(L))) throw IoError("missing " + viseme_hmm_path(L).string() + ": run build-vocab");
        sys.viseme_hmm = load_hmm(viseme_hmm_path(L));
        if (!fs::exists(phoneme_hmm_path())) throw IoError("missing " + phoneme_hmm_path().string() + ": run train");
        sys.phoneme_hmm = constrained_phoneme_hmm(load_hmm(phoneme_hmm_path()), sys.vocab);
        if (sys.ensemble.classes() != sys.vocab.size() || sys.viseme_hmm.n_states() != sys.vocab.size())
            throw DataError("models for length " + std::to_string(L) + " do not match the vocabulary");
        return sys;
    }

    std::vector<Eigen::MatrixXd> test_likelihoods(const DecoderSystem& sys) {
        std::vector<Eigen::MatrixXd> out;
        for (const auto& f : load_features("test")) out.push_back(ensemble_likelihoods(f.values, sys.ensemble));
        return out;
    }

    /// Decodes the test split and writes one track file per utterance.
    std::vector<UtteranceDecode> decode(int L, DecodeMode mode) {
        const auto sys = load_decoder(L);
        return decode_all(sys, L, test_likelihoods(sys), mode);
    }

    std::vector<UtteranceDecode> decode_all(const DecoderSystem& sys, int L, const std::vector<Eigen::MatrixXd>& lik,
                                            DecodeMode mode) {
        if (!mode.baseline() && mode.rank > sys.vocab.size())
            throw Error("rank " + std::to_string(mode.rank) + " exceeds the " + std::to_string(sys.vocab.size()) + " symbols");
        const auto& test = data().test;
        std::vector<UtteranceDecode> out;
        for (std::size_t u = 0; u < test.utterances.size(); ++u) {
            out.push_back(decode_likelihoods(sys, lik[u], mode, lexicon(), cfg_.word_penalty));
            write_track(sys, L, mode, test.utterances[u].id, out.back());
        }
        return out;
    }

    /// Runs every evaluation the config asks for and writes the report CSVs. Throws MetricError
    /// when a requested metric is undefined.
    void evaluate() {
        const auto& test = data().test;
        const bool words = lexicon() != nullptr;
        CsvTable sweep({"length", "utterance", "viseme_token_acc", "phoneme_token_acc", "viseme_frame_acc", "phoneme_frame_acc"},
                       csv_provenance());
        CsvTable summary({"length", "mode", "viseme_token_acc", "phoneme_token_acc", "viseme_frame_acc", "phoneme_frame_acc"},
                         csv_provenance());
        CsvTable word_rates({"length", "mode", "word_acc", "word_correct", "n_words"}, csv_provenance());

        const int DL = decode_length();
        std::optional<DecoderSystem> dl_sys;
        std::vector<Eigen::MatrixXd> dl_lik;
        std::optional<SetScore> dl_score;
        for (int L : lengths()) {
            auto sys = load_decoder(L);
            auto lik = test_likelihoods(sys);
            const auto mode = default_mode(L);
            const auto score = score_decodes(sys.vocab, test, decode_all(sys, L, lik, mode), words);
            const auto tag = "length " + std::to_string(L);
            for (const auto& u : score.utterances) {
                if (u.viseme.ref_length == 0) throw MetricError("metric undefined: empty reference in " + u.id);
                sweep.row({std::to_string(L), u.id, format_number(accuracy(u.viseme)), format_number(accuracy(u.phoneme)),
                           format_number(u.viseme_frame_accuracy), format_number(u.phoneme_frame_accuracy)});
            }
            summary.row({std::to_string(L), mode.label(), format_number(require(score.viseme.accuracy(), tag + " viseme accuracy")),
                         format_number(require(score.phoneme.accuracy(), tag + " phoneme accuracy")),
                         format_number(require(score.viseme_frame_accuracy(), tag + " frame accuracy")),
                         format_number(require(score.phoneme_frame_accuracy(), tag + " frame accuracy"))});
            if (words)
                word_rates.row({std::to_string(L), mode.label(), format_number(require(score.word.accuracy(), tag + " word accuracy")),
                                format_number(require(score.word.correct(), tag + " word correct")),
                                std::to_string(score.word.ref_length)});
            if (L == DL) {
                dl_score = score;
                dl_lik = std::move(lik);
                dl_sys = std::move(sys);
            }
        }
        if (!dl_sys) {
            dl_sys = load_decoder(DL);
            dl_lik = test_likelihoods(*dl_sys);
            dl_score = score_decodes(dl_sys->vocab, test, decode_all(*dl_sys, DL, dl_lik, default_mode(DL)), words);
        }
        sweep.write(report_path("vocab_sweep.csv"));
        summary.write(report_path("vocab_summary.csv"));
        if (words) word_rates.write(report_path("word_rates.csv"));

        // rank sweep; rank 0 is the baseline
        CsvTable ranks({"length", "rank", "mode", "viseme_token_acc", "phoneme_token_acc", "phoneme_frame_acc", "mean_log_score"},
                       csv_provenance());
        std::vector<int> rs{0};
        if (cfg_.ranks.empty())
            for (int r = 1; r <= dl_sys->vocab.size(); ++r) rs.push_back(r);
        else
            for (int r : cfg_.ranks) rs.push_back(std::min(r, dl_sys->vocab.size()));
        for (int r : rs) {
            const DecodeMode m{r};
            const auto dec = decode_all(*dl_sys, DL, dl_lik, m);
            const auto s = score_decodes(dl_sys->vocab, test, dec, false);
            double log_sum = 0.0;
            std::size_t frames = 0;
            for (const auto& d : dec) {
                log_sum += d.log_prob;
                frames += d.visemes.size();
            }
            const auto tag = "rank " + std::to_string(r);
            ranks.row({std::to_string(DL), std::to_string(r), m.label(),
                       format_number(require(s.viseme.accuracy(), tag + " viseme accuracy")),
                       format_number(require(s.phoneme.accuracy(), tag + " phoneme accuracy")),
                       format_number(require(s.phoneme_frame_accuracy(), tag + " frame accuracy")),
                       format_number(log_sum / static_cast<double>(std::max<std::size_t>(frames, 1)))});
        }
        ranks.write(report_path("rank_sweep.csv"));

        // per-class frame statistics for the decode vocabulary
        CsvTable cls({"class", "support", "predicted", "true_positives", "false_positives", "false_negatives", "precision", "recall"},
                     csv_provenance());
        const auto rep = precision_recall(dl_score->viseme_confusion);
        for (std::size_t c = 0; c < rep.size(); ++c) {
            const auto& r = rep[c];
            cls.row({dl_sys->vocab.group_name(static_cast<int>(c)), std::to_string(r.support), std::to_string(r.predicted),
                     std::to_string(r.true_positives), std::to_string(r.false_positives), std::to_string(r.false_negatives),
                     format_number(r.precision), format_number(r.recall)});
        }
        cls.write(report_path("class_report.csv"));

        if (!cfg_.feature_sets.empty()) {
            CsvTable feat({"feature_set", "dim", "phoneme_token_acc", "phoneme_frame_acc"}, csv_provenance());
            for (const auto& streams : cfg_.feature_sets) {
                note("feature comparison: " + stream_list_name(streams));
                int dim = 0;
                const auto s = run_feature_set(data().train, test, streams, &dim);
                const auto tag = "feature set " + stream_list_name(streams);
                feat.row({stream_list_name(streams), std::to_string(dim),
                          format_number(require(s.phoneme.accuracy(), tag + " phoneme accuracy")),
                          format_number(require(s.phoneme_frame_accuracy(), tag + " frame accuracy"))});
            }
            feat.write(report_path("feature_comparison.csv"));
        }
    }

    /// Fits features and a phoneme classifier on `train` with the given streams (in memory) and
    /// scores identity-vocabulary decoding of `test`.
    SetScore run_feature_set(const Corpus& train, const Corpus& test, const std::vector<Stream>& streams, int* dim = nullptr) {
        auto fc = cfg_.features;
        fc.streams = streams;
        const auto models = fit_feature_models(train, fc);
        if (dim) *dim = models.dim();
        std::vector<FeatureSequence> ftr, fte;
        for (const auto& u : train.utterances) ftr.push_back(lipread::extract(u, models));
        for (const auto& u : test.utterances) fte.push_back(lipread::extract(u, models));
        const auto ds = stack_features(ftr, train);
        const auto names = symbols(train.phonemes);
        const int C = static_cast<int>(train.phonemes.size());
        auto ens = bagging_train(ds.x, ds.labels, C, cfg_.bagging, names, ds.utterance_of_frame);
        const auto predicted = classify_rows(ensemble_likelihoods(ds.x, ens));
        const auto phon = fit_label_hmm(ds, ds.labels, predicted, names, cfg_.hmm_smoothing);
        const auto sys = make_decoder(ds, VisemeVocabulary::identity(train.phonemes), std::move(ens), phon, cfg_.hmm_smoothing);
        std::vector<UtteranceDecode> dec;
        for (const auto& f : fte) dec.push_back(decode_features(sys, f.values, default_mode(C)));
        return score_decodes(sys.vocab, test, dec, false);
    }

private:
    void note(const std::string& msg) const {
        if (log_) *log_ << msg << '\n';
    }

    std::string feature_config_text() const {
        const auto c = cfg_.canonical();
        nlohmann::json f;
        for (const char* k : {"streams", "dct_coeffs", "pca_variance", "sift_grid_step", "pa_permutations", "pa_percentile",
                              "fit_max_samples", "pa_max_samples", "seed"})
            f[k] = c.at(k);
        return f.dump();
    }

    static Digest cache_source(const Digest& models_digest, const Utterance& u) {
        const auto h = utterance_content_hash(u);
        return Sha256().update(models_digest.data(), models_digest.size()).update(h.data(), h.size()).finish();
    }

    FeatureSequence extract_features(const Utterance& u, const FeatureModels& models) const { return lipread::extract(u, models); }

    std::vector<std::vector<Stream>> feature_sets() const {
        if (cfg_.feature_sets.empty()) return {cfg_.features.streams};
        return cfg_.feature_sets;
    }

    static std::string stream_list_name(const std::vector<Stream>& s) {
        std::string out;
        for (auto x : s) out += (out.empty() ? "" : "+") + std::string(to_string(x));
        return out;
    }

    static std::vector<std::string> symbols(const PhonemeSet& p) {
        std::vector<std::string> names;
        for (std::size_t i = 0; i < p.size(); ++i) names.push_back(p.symbol(i));
        return names;
    }
    std::vector<std::string> symbols() { return symbols(phonemes()); }

    LdaEnsemble load_checked_ensemble(const fs::path& path, const std::string& stage) {
        if (!fs::exists(path)) throw IoError("missing " + path.string() + ": run " + stage);
        auto loaded = load_ensemble(path);
        if (loaded.metadata != metadata())
            throw DataError(path.string() + " was produced by a different config or seed: rerun " + stage);
        return std::move(loaded.ensemble);
    }

    void write_track(const DecoderSystem& sys, int L, DecodeMode mode, const std::string& id, const UtteranceDecode& d) const {
        nlohmann::json doc;
        doc["utterance"] = id;
        doc["vocabulary_length"] = L;
        doc["mode"] = mode.label();
        std::vector<std::string> v, p;
        for (int x : d.visemes) v.push_back(sys.vocab.group_name(x));
        for (int x : d.phonemes) p.push_back(sys.vocab.phonemes().symbol(static_cast<std::size_t>(x)));
        doc["visemes"] = v;
        doc["phonemes"] = p;
        doc["words"] = d.words;
        doc["log_prob"] = d.impossible ? nlohmann::json(nullptr) : nlohmann::json(d.log_prob);
        doc["impossible"] = d.impossible;
        doc["provenance"] = provenance();
        write_file_text(decode_dir(L, mode) / (id + ".json"), doc.dump(1) + "\n");
    }

    ExperimentConfig cfg_;
    std::ostream* log_ = nullptr;
    std::string hash_;
    std::optional<SplitCorpus> data_;
    std::optional<PronunciationDictionary> lexicon_;
};

} // namespace lipread
