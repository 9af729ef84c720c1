#include <fstream>
#include <random>

#include <gtest/gtest.h>

#include "lipread/corpus.hpp"
#include "lipread/synthetic.hpp"
#include "oracles.hpp"

using namespace lipread;
namespace fs = std::filesystem;

TEST(PhonemeSet, SpanishDefaultHas28Classes) {
    const auto& p = spanish_sampa();
    EXPECT_EQ(p.size(), 28u);
    EXPECT_EQ(p.kind(p.silence_index()), PhonemeKind::silence);
    EXPECT_FALSE(p.find("jj").has_value());
    EXPECT_FALSE(p.find("G").has_value());
    int vowels = 0, consonants = 0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        vowels += p.kind(i) == PhonemeKind::vowel;
        consonants += p.kind(i) == PhonemeKind::consonant;
    }
    EXPECT_EQ(vowels + consonants, 27);
}

TEST(PhonemeSet, RejectsDuplicatesAndMissingSilence) {
    EXPECT_THROW(PhonemeSet({{"a", PhonemeKind::vowel}, {"a", PhonemeKind::vowel}, {"sil", PhonemeKind::silence}}), Error);
    EXPECT_THROW(PhonemeSet({{"a", PhonemeKind::vowel}}), Error);
    EXPECT_THROW(PhonemeSet({{"s1", PhonemeKind::silence}, {"s2", PhonemeKind::silence}}), Error);
}

TEST(NormalizeRoi, ConstantImageStaysConstant) {
    for (auto [rows, cols] : {std::pair{10, 13}, std::pair{48, 64}, std::pair{200, 120}}) {
        const auto f = normalize_roi(Grid::Constant(rows, cols, 0.37));
        EXPECT_EQ(f.pixels().rows(), kRoiHeight);
        EXPECT_EQ(f.pixels().cols(), kRoiWidth);
        EXPECT_NEAR(f.pixels().minCoeff(), 0.37, 1e-15);
        EXPECT_NEAR(f.pixels().maxCoeff(), 0.37, 1e-15);
    }
}

TEST(NormalizeRoi, IdentityOnNormalizedInput) {
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Grid g(kRoiHeight, kRoiWidth);
    for (Eigen::Index i = 0; i < g.size(); ++i) g.data()[i] = u(rng);
    const auto f = normalize_roi(g);
    EXPECT_EQ(f.pixels(), g);
    // idempotent
    EXPECT_EQ(normalize_roi(f.pixels()), f);
}

TEST(NormalizeRoi, CheckerboardMeanPreserved) {
    Grid g(96, 128);
    for (int r = 0; r < 96; ++r)
        for (int c = 0; c < 128; ++c) g(r, c) = (r + c) % 2;
    const auto f = normalize_roi(g);
    EXPECT_NEAR(f.pixels().mean(), g.mean(), 1e-6);
}

TEST(NormalizeRoi, EightBitRangeScaled) {
    const auto f = normalize_roi(Grid::Constant(20, 20, 51.0));
    EXPECT_NEAR(f(0, 0), 0.2, 1e-15);
}

TEST(NormalizeRoi, RejectsBadInput) {
    EXPECT_THROW(normalize_roi(Grid(1, 5)), DataError);
    Grid g = Grid::Zero(4, 4);
    g(1, 1) = std::nan("");
    EXPECT_THROW(normalize_roi(g), DataError);
}

TEST(ImageFiles, PgmRoundTripIsExactOnEightBitLevels) {
    const auto dir = oracle::scratch_dir("pgm");
    Grid g(kRoiHeight, kRoiWidth);
    for (Eigen::Index i = 0; i < g.size(); ++i) g.data()[i] = static_cast<double>(i % 256) / 255.0;
    write_pgm(dir / "x.pgm", g);
    EXPECT_EQ(normalize_roi(read_gray_image(dir / "x.pgm")).pixels(), g);
    fs::remove_all(dir);
}

namespace {

Corpus small_corpus(std::uint64_t seed = 7) {
    SyntheticSpec s;
    s.n_classes = 6;
    s.n_utterances = 2;
    s.frames_per_utterance = 10;
    s.seed = seed;
    return generate_synthetic_corpus(s);
}

} // namespace

TEST(Manifest, RoundTripReproducesCorpus) {
    const auto dir = oracle::scratch_dir("manifest");
    const auto c = small_corpus();
    const auto path = save_manifest(c, dir);
    const auto back = load_manifest(path);
    EXPECT_EQ(back.utterances.size(), 2u);
    EXPECT_EQ(back.frame_count(), 20u);
    EXPECT_TRUE(back == c);
    fs::remove_all(dir);
}

TEST(Manifest, LengthMismatchNamesUtterance) {
    const auto dir = oracle::scratch_dir("mismatch");
    save_manifest(small_corpus(), dir);
    std::ifstream in(dir / "manifest.json");
    auto doc = nlohmann::json::parse(in);
    in.close();
    doc["utterances"][1]["labels"].erase(0);
    std::ofstream(dir / "manifest.json") << doc.dump();
    try {
        load_manifest(dir / "manifest.json");
        FAIL() << "expected an error";
    } catch (const DataError& e) {
        EXPECT_NE(std::string(e.what()).find("utt00001"), std::string::npos) << e.what();
        EXPECT_NE(std::string(e.what()).find("9 labels for 10 frames"), std::string::npos) << e.what();
    }
    fs::remove_all(dir);
}

TEST(Manifest, MissingFrameNamesUtterance) {
    const auto dir = oracle::scratch_dir("missing");
    save_manifest(small_corpus(), dir);
    fs::remove(dir / "frames" / "utt00000" / "00003.pgm");
    try {
        load_manifest(dir / "manifest.json");
        FAIL() << "expected an error";
    } catch (const IoError& e) {
        EXPECT_NE(std::string(e.what()).find("utt00000"), std::string::npos);
    }
    fs::remove_all(dir);
}

TEST(Manifest, UnknownLabelNamesUtterance) {
    const auto dir = oracle::scratch_dir("badlabel");
    save_manifest(small_corpus(), dir);
    std::ifstream in(dir / "manifest.json");
    auto doc = nlohmann::json::parse(in);
    in.close();
    doc["utterances"][0]["labels"][2] = 99;
    std::ofstream(dir / "manifest.json") << doc.dump();
    try {
        load_manifest(dir / "manifest.json");
        FAIL() << "expected an error";
    } catch (const DataError& e) {
        EXPECT_NE(std::string(e.what()).find("utt00000"), std::string::npos) << e.what();
    }
    fs::remove_all(dir);
}

TEST(Manifest, OrderedById) {
    const auto dir = oracle::scratch_dir("order");
    auto c = small_corpus();
    std::swap(c.utterances[0], c.utterances[1]);
    save_manifest(c, dir);
    const auto back = load_manifest(dir / "manifest.json");
    EXPECT_EQ(back.utterances[0].id, "utt00000");
    EXPECT_EQ(back.utterances[1].id, "utt00001");
    fs::remove_all(dir);
}

TEST(Split, NineteenSpeakersTwentyFive) {
    SyntheticSpec s;
    s.n_classes = 4;
    s.n_utterances = 19 * 25;
    s.n_speakers = 19;
    s.frames_per_utterance = 1;
    const auto c = generate_synthetic_corpus(s);
    const auto [train, test] = split_per_speaker(c, 20);
    EXPECT_EQ(train.utterances.size(), 380u);
    EXPECT_EQ(test.utterances.size(), 95u);
}

// ---------------------------------------------------------------------------

TEST(Lexicon, ThreeWords) {
    std::istringstream in("# comment\nhola\to l a\ncasa\tk a s a\nperro\tp e rr o\n");
    const auto d = parse_lexicon(in, spanish_sampa());
    EXPECT_EQ(d.entries.size(), 3u);
}

TEST(Lexicon, RemovedPhonemeRejectedWithWordNamed) {
    std::istringstream in("yate\tjj a t e\n");
    try {
        parse_lexicon(in, spanish_sampa());
        FAIL() << "expected an error";
    } catch (const DataError& e) {
        EXPECT_NE(std::string(e.what()).find("yate"), std::string::npos);
        EXPECT_NE(std::string(e.what()).find("jj"), std::string::npos);
    }
}

TEST(Lexicon, DuplicateWordKeepsVariants) {
    std::istringstream in("de\td e\nde\tD e\n");
    const auto d = parse_lexicon(in, spanish_sampa());
    ASSERT_EQ(d.entries.size(), 1u);
    EXPECT_EQ(d.entries.at("de").size(), 2u);
}

TEST(Lexicon, EmptyPronunciationRejected) {
    std::istringstream in("nada\t\n");
    EXPECT_THROW(parse_lexicon(in, spanish_sampa()), DataError);
}

TEST(Lexicon, SaveLoadRoundTrip) {
    const auto dir = oracle::scratch_dir("lexicon");
    std::istringstream in("hola\to l a\nde\td e\nde\tD e\n");
    const auto d = parse_lexicon(in, spanish_sampa());
    save_lexicon(d, spanish_sampa(), dir / "lex.txt");
    EXPECT_EQ(load_lexicon(dir / "lex.txt", spanish_sampa()).entries, d.entries);
    fs::remove_all(dir);
}

// ---------------------------------------------------------------------------

TEST(Synthetic, SameSeedGivesIdenticalCorpus) {
    SyntheticSpec s;
    s.n_utterances = 5;
    s.confusable_pairs = {{1, 2}};
    s.seed = 7;
    EXPECT_TRUE(generate_synthetic_corpus(s) == generate_synthetic_corpus(s));
    auto t = s;
    t.seed = 8;
    EXPECT_FALSE(generate_synthetic_corpus(s) == generate_synthetic_corpus(t));
}

TEST(Synthetic, PlantedPairsShareTemplates) {
    SyntheticSpec s;
    s.confusable_pairs = {{1, 2}, {5, 6}};
    const auto truth = synthetic_truth(s);
    EXPECT_EQ(truth.templates[1], truth.templates[2]);
    EXPECT_EQ(truth.templates[5], truth.templates[6]);
    EXPECT_NE(truth.templates[1], truth.templates[3]);
}

TEST(Synthetic, SpecValidation) {
    SyntheticSpec s;
    s.confusable_pairs = {{0, 1}}; // silence
    EXPECT_THROW(validate(s), Error);
    s.confusable_pairs = {{1, 5}}; // vowel with consonant (3 vowels by default)
    EXPECT_THROW(validate(s), Error);
    s.confusable_pairs = {};
    s.class_separation = 0.0;
    EXPECT_THROW(validate(s), Error);
}

TEST(Synthetic, TransitionFrequenciesWithinThreeSigma) {
    SyntheticSpec s;
    s.n_classes = 6;
    s.n_utterances = 400;
    s.frames_per_utterance = 40;
    s.frames_per_state = 3.0;
    s.feature_dim = 4;
    s.seed = 99;
    const auto truth = synthetic_truth(s);
    const auto c = generate_synthetic_corpus(s);
    Eigen::MatrixXd counts = Eigen::MatrixXd::Zero(6, 6);
    for (const auto& u : c.utterances)
        for (std::size_t t = 1; t < u.labels.size(); ++t) counts(u.labels[t - 1], u.labels[t]) += 1.0;
    ASSERT_GE(counts.sum(), 1e4);
    for (int i = 0; i < 6; ++i) {
        const double n = counts.row(i).sum();
        ASSERT_GT(n, 0.0);
        for (int j = 0; j < 6; ++j) {
            const double p = truth.frame_transition(i, j);
            const double sigma = std::sqrt(p * (1.0 - p) / n);
            EXPECT_LE(std::abs(counts(i, j) / n - p), 3.0 * sigma + 1e-12) << i << "->" << j;
        }
    }
}

TEST(Synthetic, WordModeUsesLexiconPronunciations) {
    SyntheticSpec s;
    s.n_utterances = 10;
    const auto set = synthetic_phoneme_set(s);
    s.lexicon = synthetic_lexicon(set, 3, 1);
    const auto c = generate_synthetic_corpus(s);
    for (const auto& u : c.utterances) {
        EXPECT_EQ(u.words.size(), 3u);
        EXPECT_EQ(u.labels.front(), 0);
        EXPECT_EQ(u.labels.back(), 0);
    }
}

TEST(Synthetic, LexiconHasNoHomophones) {
    const auto set = synthetic_phoneme_set(12, 3);
    const auto d = synthetic_lexicon(set, 20, 4);
    std::set<Pronunciation> seen;
    for (const auto& [w, prons] : d.entries)
        for (const auto& p : prons) EXPECT_TRUE(seen.insert(p).second);
    EXPECT_EQ(d.entries.size(), 20u);
}
