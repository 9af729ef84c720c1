#pragma once

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "lipread/error.hpp"
#include "lipread/image.hpp"
#include "lipread/phonemes.hpp"

namespace lipread {

using LabelSeq = std::vector<int>;

struct Utterance {
    std::string id;
    std::string speaker;
    std::vector<RoiFrame> frames;
    LabelSeq labels; // per-frame phoneme class index
    std::vector<std::string> words;

    std::size_t size() const { return frames.size(); }
    friend bool operator==(const Utterance&, const Utterance&) = default;
};

struct Corpus {
    PhonemeSet phonemes;
    std::vector<Utterance> utterances; // sorted by id

    std::size_t frame_count() const {
        std::size_t n = 0;
        for (const auto& u : utterances) n += u.size();
        return n;
    }
    friend bool operator==(const Corpus& a, const Corpus& b) {
        return a.phonemes == b.phonemes && a.utterances == b.utterances;
    }
};

/// Checks the utterance invariants against a phoneme set; errors name the utterance.
inline void validate(const Utterance& u, const PhonemeSet& phonemes) {
    if (u.id.empty()) throw DataError("utterance with empty id");
    if (u.labels.size() != u.frames.size())
        throw DataError("utterance '" + u.id + "': " + std::to_string(u.labels.size()) + " labels for " +
                        std::to_string(u.frames.size()) + " frames");
    for (int l : u.labels)
        if (l < 0 || static_cast<std::size_t>(l) >= phonemes.size())
            throw DataError("utterance '" + u.id + "': label " + std::to_string(l) + " is not a phoneme class");
}

inline void sort_and_check_ids(Corpus& corpus) {
    std::sort(corpus.utterances.begin(), corpus.utterances.end(),
              [](const Utterance& a, const Utterance& b) { return a.id < b.id; });
    for (std::size_t i = 1; i < corpus.utterances.size(); ++i)
        if (corpus.utterances[i].id == corpus.utterances[i - 1].id)
            throw DataError("duplicate utterance id '" + corpus.utterances[i].id + "'");
}

// ---------------------------------------------------------------------------
// Manifest

inline nlohmann::json phoneme_set_to_json(const PhonemeSet& set) {
    auto arr = nlohmann::json::array();
    for (const auto& c : set.classes()) arr.push_back({{"symbol", c.symbol}, {"kind", std::string(to_string(c.kind))}});
    return arr;
}

inline PhonemeSet phoneme_set_from_json(const nlohmann::json& arr) {
    std::vector<PhonemeClass> classes;
    for (const auto& e : arr)
        classes.push_back({e.at("symbol").get<std::string>(), parse_kind(e.at("kind").get<std::string>())});
    return PhonemeSet(std::move(classes));
}

/// Loads a JSON manifest; frame paths are resolved relative to the manifest's directory.
inline Corpus load_manifest(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open manifest " + path.string());
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw DataError("manifest " + path.string() + ": " + e.what());
    }
    const auto base = path.parent_path();
    Corpus corpus;
    try {
        corpus.phonemes = doc.contains("phoneme_set") ? phoneme_set_from_json(doc.at("phoneme_set")) : spanish_sampa();
        for (const auto& ju : doc.at("utterances")) {
            Utterance u;
            u.id = ju.at("id").get<std::string>();
            u.speaker = ju.value("speaker", std::string{});
            u.labels = ju.at("labels").get<LabelSeq>();
            if (ju.contains("words")) u.words = ju.at("words").get<std::vector<std::string>>();
            const auto frame_paths = ju.at("frames").get<std::vector<std::string>>();
            if (frame_paths.size() != u.labels.size())
                throw DataError("utterance '" + u.id + "': " + std::to_string(u.labels.size()) + " labels for " +
                                std::to_string(frame_paths.size()) + " frames");
            u.frames.reserve(frame_paths.size());
            for (const auto& fp : frame_paths) {
                auto full = base / fp;
                if (!std::filesystem::exists(full))
                    throw IoError("utterance '" + u.id + "': missing frame file " + full.string());
                u.frames.push_back(normalize_roi(read_gray_image(full)));
            }
            validate(u, corpus.phonemes);
            corpus.utterances.push_back(std::move(u));
        }
    } catch (const nlohmann::json::exception& e) {
        throw DataError("manifest " + path.string() + ": " + e.what());
    }
    sort_and_check_ids(corpus);
    return corpus;
}

/// Writes `dir/manifest.json` plus one 8-bit PGM per frame under `dir/frames/<id>/`.
inline std::filesystem::path save_manifest(const Corpus& corpus, const std::filesystem::path& dir) {
    namespace fs = std::filesystem;
    fs::create_directories(dir / "frames");
    nlohmann::json doc;
    doc["phoneme_set"] = phoneme_set_to_json(corpus.phonemes);
    doc["utterances"] = nlohmann::json::array();
    for (const auto& u : corpus.utterances) {
        fs::create_directories(dir / "frames" / u.id);
        std::vector<std::string> paths;
        for (std::size_t t = 0; t < u.frames.size(); ++t) {
            char name[32];
            std::snprintf(name, sizeof name, "%05zu.pgm", t);
            auto rel = (fs::path("frames") / u.id / name).generic_string();
            write_pgm(dir / rel, u.frames[t].pixels());
            paths.push_back(rel);
        }
        doc["utterances"].push_back(
            {{"id", u.id}, {"speaker", u.speaker}, {"frames", paths}, {"labels", u.labels}, {"words", u.words}});
    }
    auto path = dir / "manifest.json";
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    out << doc.dump(1) << "\n";
    return path;
}

/// Per-speaker split: the first `train_per_speaker` utterances (by id) of each speaker go to
/// training, the rest to test.
inline std::pair<Corpus, Corpus> split_per_speaker(const Corpus& corpus, std::size_t train_per_speaker) {
    Corpus train{corpus.phonemes, {}}, test{corpus.phonemes, {}};
    std::map<std::string, std::size_t> seen;
    for (const auto& u : corpus.utterances) {
        if (seen[u.speaker]++ < train_per_speaker)
            train.utterances.push_back(u);
        else
            test.utterances.push_back(u);
    }
    return {std::move(train), std::move(test)};
}

// ---------------------------------------------------------------------------
// Pronunciation lexicon

using Pronunciation = std::vector<int>;

/// Word -> pronunciation variants, each a non-empty sequence of phoneme indices.
struct PronunciationDictionary {
    std::map<std::string, std::vector<Pronunciation>> entries;

    std::size_t size() const { return entries.size(); }
    bool empty() const { return entries.empty(); }

    void add(const std::string& word, Pronunciation pron) {
        if (pron.empty()) throw DataError("empty pronunciation for word '" + word + "'");
        entries[word].push_back(std::move(pron));
    }
};

/// Parses `word TAB phoneme phoneme ...` lines. Blank lines and lines starting with '#' are skipped.
inline PronunciationDictionary parse_lexicon(std::istream& in, const PhonemeSet& phonemes) {
    PronunciationDictionary dict;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        auto tab = line.find('\t');
        if (tab == std::string::npos)
            throw DataError("lexicon line " + std::to_string(lineno) + ": expected 'word<TAB>phonemes'");
        std::string word = line.substr(0, tab);
        std::istringstream ps(line.substr(tab + 1));
        Pronunciation pron;
        for (std::string sym; ps >> sym;) {
            auto idx = phonemes.find(sym);
            if (!idx) throw DataError("lexicon word '" + word + "': unknown phoneme symbol '" + sym + "'");
            pron.push_back(static_cast<int>(*idx));
        }
        if (pron.empty()) throw DataError("lexicon word '" + word + "': empty pronunciation");
        dict.add(word, std::move(pron));
    }
    return dict;
}

inline PronunciationDictionary load_lexicon(const std::filesystem::path& path, const PhonemeSet& phonemes) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open lexicon " + path.string());
    return parse_lexicon(in, phonemes);
}

inline void save_lexicon(const PronunciationDictionary& dict, const PhonemeSet& phonemes,
                         const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    for (const auto& [word, prons] : dict.entries)
        for (const auto& p : prons) {
            out << word << '\t';
            for (std::size_t i = 0; i < p.size(); ++i) out << (i ? " " : "") << phonemes.symbol(p[i]);
            out << '\n';
        }
}

} // namespace lipread
