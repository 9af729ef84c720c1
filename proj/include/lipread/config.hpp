#pragma once

#include <cctype>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "lipread/ensemble.hpp"
#include "lipread/error.hpp"
#include "lipread/features.hpp"
#include "lipread/hashing.hpp"

namespace lipread {

// ---------------------------------------------------------------------------
// TOML-style key/value reader. Supports `key = value` lines with strings, numbers, booleans
// and (possibly nested, possibly multi-line) arrays; `#` starts a comment outside strings.
// Tables and dotted keys are not supported.

namespace detail {

class ValueParser {
public:
    ValueParser(std::string_view text, std::string where) : s_(text), where_(std::move(where)) {}

    nlohmann::json parse() {
        auto v = value();
        skip_ws();
        if (pos_ != s_.size()) fail("trailing characters");
        return v;
    }

private:
    [[noreturn]] void fail(const std::string& msg) const { throw Error(where_ + ": " + msg); }

    void skip_ws() {
        while (pos_ < s_.size() && std::isspace(static_cast<unsigned char>(s_[pos_]))) ++pos_;
    }

    nlohmann::json value() {
        skip_ws();
        if (pos_ >= s_.size()) fail("missing value");
        const char c = s_[pos_];
        if (c == '"') return string();
        if (c == '[') return array();
        std::size_t end = pos_;
        while (end < s_.size() && s_[end] != ',' && s_[end] != ']' && !std::isspace(static_cast<unsigned char>(s_[end])))
            ++end;
        const std::string tok(s_.substr(pos_, end - pos_));
        pos_ = end;
        if (tok == "true") return true;
        if (tok == "false") return false;
        std::string clean;
        for (char ch : tok)
            if (ch != '_') clean += ch;
        try {
            std::size_t used = 0;
            if (clean.find_first_of(".eE") == std::string::npos && clean.find("inf") == std::string::npos &&
                clean.find("nan") == std::string::npos) {
                const long long i = std::stoll(clean, &used);
                if (used == clean.size()) return i;
            } else {
                const double d = std::stod(clean, &used);
                if (used == clean.size()) return d;
            }
        } catch (const std::exception&) {
        }
        fail("cannot parse value '" + tok + "'");
    }

    nlohmann::json string() {
        ++pos_;
        std::string out;
        while (pos_ < s_.size() && s_[pos_] != '"') {
            char c = s_[pos_++];
            if (c == '\\') {
                if (pos_ >= s_.size()) break;
                const char e = s_[pos_++];
                switch (e) {
                case 'n': out += '\n'; break;
                case 't': out += '\t'; break;
                case '"': out += '"'; break;
                case '\\': out += '\\'; break;
                default: fail(std::string("unsupported escape \\") + e);
                }
            } else {
                out += c;
            }
        }
        if (pos_ >= s_.size()) fail("unterminated string");
        ++pos_;
        return out;
    }

    nlohmann::json array() {
        ++pos_;
        auto arr = nlohmann::json::array();
        skip_ws();
        if (pos_ < s_.size() && s_[pos_] == ']') {
            ++pos_;
            return arr;
        }
        while (true) {
            arr.push_back(value());
            skip_ws();
            if (pos_ >= s_.size()) fail("unterminated array");
            if (s_[pos_] == ',') {
                ++pos_;
                skip_ws();
                if (pos_ < s_.size() && s_[pos_] == ']') {
                    ++pos_;
                    return arr;
                }
                continue;
            }
            if (s_[pos_] == ']') {
                ++pos_;
                return arr;
            }
            fail("expected ',' or ']' in array");
        }
    }

    std::string_view s_;
    std::string where_;
    std::size_t pos_ = 0;
};

inline std::string strip_comment(const std::string& line) {
    bool in_str = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        if (line[i] == '\\' && in_str) {
            ++i;
            continue;
        }
        if (line[i] == '"') in_str = !in_str;
        if (line[i] == '#' && !in_str) return line.substr(0, i);
    }
    return line;
}

inline int bracket_balance(const std::string& s) {
    int depth = 0;
    bool in_str = false;
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (s[i] == '\\' && in_str) {
            ++i;
            continue;
        }
        if (s[i] == '"') in_str = !in_str;
        if (!in_str && s[i] == '[') ++depth;
        if (!in_str && s[i] == ']') --depth;
    }
    return depth;
}

} // namespace detail

/// Parses key/value text into a JSON object. Duplicate keys are an error.
inline nlohmann::json parse_kv_config(std::istream& in, const std::string& name) {
    auto obj = nlohmann::json::object();
    std::string line, pending;
    int lineno = 0, start_line = 0;
    while (std::getline(in, line)) {
        ++lineno;
        line = detail::strip_comment(line);
        if (pending.empty()) {
            if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
            start_line = lineno;
        }
        pending += line + "\n";
        if (detail::bracket_balance(pending) > 0) continue;
        const auto where = name + ":" + std::to_string(start_line);
        const auto eq = pending.find('=');
        if (eq == std::string::npos) throw Error(where + ": expected 'key = value'");
        std::string key = pending.substr(0, eq);
        key.erase(0, key.find_first_not_of(" \t"));
        key.erase(key.find_last_not_of(" \t") + 1);
        if (key.empty()) throw Error(where + ": empty key");
        for (char c : key)
            if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-'))
                throw Error(where + ": invalid key '" + key + "'");
        if (obj.contains(key)) throw Error(where + ": duplicate key '" + key + "'");
        obj[key] = detail::ValueParser(std::string_view(pending).substr(eq + 1), where).parse();
        pending.clear();
    }
    if (!pending.empty()) throw Error(name + ":" + std::to_string(start_line) + ": unterminated array");
    return obj;
}

// ---------------------------------------------------------------------------

struct ExperimentConfig {
    std::filesystem::path base_dir; // relative paths resolve against this (the config file's directory)

    std::string manifest;            // training corpus (or the whole corpus when no test manifest)
    std::string test_manifest;       // optional held-out corpus
    int train_per_speaker = 0;       // with no test manifest: first N utterances per speaker train, rest test
    std::string lexicon;             // optional; enables word metrics
    std::string output_dir = "out";

    FeatureConfig features;
    BaggingOptions bagging;
    std::vector<int> vocab_lengths;  // empty: the identity length only
    std::vector<int> ranks;          // empty: 1..M
    int decode_length = 0;           // vocabulary used by decode/rank sweep/class report; 0: first of vocab_lengths
    int rank = 0;                    // soft decoding rank; 0: all symbols
    bool baseline = false;
    bool retrain_each_step = false;
    double hmm_smoothing = 1e-6;     // relative to each count matrix total
    double word_penalty = 0.5;
    int folds = 4;
    std::vector<std::vector<Stream>> feature_sets;
    std::uint64_t seed = 0;

    std::filesystem::path resolve(const std::string& p) const {
        std::filesystem::path path(p);
        return path.is_absolute() ? path : base_dir / path;
    }
    std::filesystem::path out() const { return resolve(output_dir); }

    void validate() const {
        if (manifest.empty()) throw Error("config: 'manifest' is required");
        features.validate();
        if (bagging.n_bags < 1) throw Error("config: n_bags must be >= 1");
        if (!test_manifest.empty() && train_per_speaker != 0)
            throw Error("config: use either test_manifest or train_per_speaker, not both");
        if (test_manifest.empty() && train_per_speaker < 1)
            throw Error("config: without test_manifest, train_per_speaker must be >= 1");
        for (int l : vocab_lengths)
            if (l < 1) throw Error("config: vocab_lengths entries must be >= 1");
        for (int r : ranks)
            if (r < 1) throw Error("config: ranks entries must be >= 1 (use baseline for standard Viterbi)");
        if (rank < 0) throw Error("config: rank must be >= 0");
        if (decode_length < 0) throw Error("config: decode_length must be >= 0");
        if (!(hmm_smoothing >= 0.0)) throw Error("config: hmm_smoothing must be >= 0");
        if (!(word_penalty >= 0.0)) throw Error("config: word_penalty must be >= 0");
        if (folds < 2) throw Error("config: folds must be >= 2");
    }

    /// Canonical form; its SHA-256 is the config hash embedded in every artifact. `rank` and
    /// `baseline` only pick which decode to run and are kept out, so models stay valid when the
    /// decode mode is switched on the command line. Decode outputs are named by mode instead.
    nlohmann::json canonical() const {
        nlohmann::json j;
        j["manifest"] = manifest;
        j["test_manifest"] = test_manifest;
        j["train_per_speaker"] = train_per_speaker;
        j["lexicon"] = lexicon;
        j["output_dir"] = output_dir;
        auto streams = nlohmann::json::array();
        for (auto s : features.streams) streams.push_back(std::string(to_string(s)));
        j["streams"] = streams;
        j["dct_coeffs"] = features.dct_coeffs;
        j["pca_variance"] = features.pca_variance;
        j["sift_grid_step"] = features.sift_grid_step;
        j["pa_permutations"] = features.pa_permutations;
        j["pa_percentile"] = features.pa_percentile;
        j["fit_max_samples"] = features.fit_max_samples;
        j["pa_max_samples"] = features.pa_max_samples;
        j["n_bags"] = bagging.n_bags;
        j["bootstrap_unit"] = bagging.unit == BootstrapUnit::frame ? "frame" : "utterance";
        j["covariance"] = bagging.lda.mode == CovarianceMode::pooled ? "pooled" : "per_class";
        j["lda_shrinkage"] = bagging.lda.shrinkage;
        j["vocab_lengths"] = vocab_lengths;
        j["ranks"] = ranks;
        j["decode_length"] = decode_length;
        j["retrain_each_step"] = retrain_each_step;
        j["hmm_smoothing"] = hmm_smoothing;
        j["word_penalty"] = word_penalty;
        j["folds"] = folds;
        auto sets = nlohmann::json::array();
        for (const auto& fs : feature_sets) {
            auto a = nlohmann::json::array();
            for (auto s : fs) a.push_back(std::string(to_string(s)));
            sets.push_back(a);
        }
        j["feature_sets"] = sets;
        j["seed"] = seed;
        return j;
    }

    std::string hash() const { return to_hex(sha256(canonical().dump())); }
};

namespace detail {

inline std::vector<Stream> parse_stream_list(const nlohmann::json& v, const std::string& key) {
    if (!v.is_array()) throw Error("config: '" + key + "' must be an array of stream names");
    std::vector<Stream> out;
    for (const auto& s : v) {
        if (!s.is_string()) throw Error("config: '" + key + "' must contain stream names");
        out.push_back(parse_stream(s.get<std::string>()));
    }
    return out;
}

} // namespace detail

inline ExperimentConfig config_from_json(const nlohmann::json& obj, const std::filesystem::path& base_dir) {
    ExperimentConfig c;
    c.base_dir = base_dir;
    for (const auto& [key, v] : obj.items()) {
        auto num = [&](auto& dst) {
            if (!v.is_number()) throw Error("config: '" + key + "' must be a number");
            using T = std::decay_t<decltype(dst)>;
            if constexpr (std::is_integral_v<T>) {
                if (!v.is_number_integer()) throw Error("config: '" + key + "' must be an integer");
                if constexpr (std::is_unsigned_v<T>)
                    if (v.get<long long>() < 0) throw Error("config: '" + key + "' must be >= 0");
            }
            dst = v.get<T>();
        };
        auto str = [&](std::string& dst) {
            if (!v.is_string()) throw Error("config: '" + key + "' must be a string");
            dst = v.get<std::string>();
        };
        auto flag = [&](bool& dst) {
            if (!v.is_boolean()) throw Error("config: '" + key + "' must be true or false");
            dst = v.get<bool>();
        };
        auto ints = [&](std::vector<int>& dst) {
            if (!v.is_array()) throw Error("config: '" + key + "' must be an array of integers");
            dst.clear();
            for (const auto& e : v) {
                if (!e.is_number_integer()) throw Error("config: '" + key + "' must be an array of integers");
                dst.push_back(e.get<int>());
            }
        };
        if (key == "manifest" || key == "train_manifest") str(c.manifest);
        else if (key == "test_manifest") str(c.test_manifest);
        else if (key == "train_per_speaker") num(c.train_per_speaker);
        else if (key == "lexicon") str(c.lexicon);
        else if (key == "output_dir") str(c.output_dir);
        else if (key == "streams") c.features.streams = detail::parse_stream_list(v, key);
        else if (key == "dct_coeffs") num(c.features.dct_coeffs);
        else if (key == "pca_variance") num(c.features.pca_variance);
        else if (key == "sift_grid_step") num(c.features.sift_grid_step);
        else if (key == "pa_permutations") num(c.features.pa_permutations);
        else if (key == "pa_percentile") num(c.features.pa_percentile);
        else if (key == "fit_max_samples") num(c.features.fit_max_samples);
        else if (key == "pa_max_samples") num(c.features.pa_max_samples);
        else if (key == "n_bags") num(c.bagging.n_bags);
        else if (key == "bootstrap_unit") {
            std::string s;
            str(s);
            if (s == "frame") c.bagging.unit = BootstrapUnit::frame;
            else if (s == "utterance") c.bagging.unit = BootstrapUnit::utterance;
            else throw Error("config: bootstrap_unit must be 'frame' or 'utterance'");
        } else if (key == "covariance") {
            std::string s;
            str(s);
            if (s == "pooled") c.bagging.lda.mode = CovarianceMode::pooled;
            else if (s == "per_class") c.bagging.lda.mode = CovarianceMode::per_class;
            else throw Error("config: covariance must be 'pooled' or 'per_class'");
        } else if (key == "lda_shrinkage") num(c.bagging.lda.shrinkage);
        else if (key == "vocab_lengths") ints(c.vocab_lengths);
        else if (key == "ranks") ints(c.ranks);
        else if (key == "decode_length") num(c.decode_length);
        else if (key == "rank") num(c.rank);
        else if (key == "baseline") flag(c.baseline);
        else if (key == "retrain_each_step") flag(c.retrain_each_step);
        else if (key == "hmm_smoothing") num(c.hmm_smoothing);
        else if (key == "word_penalty") num(c.word_penalty);
        else if (key == "folds") num(c.folds);
        else if (key == "feature_sets") {
            if (!v.is_array()) throw Error("config: 'feature_sets' must be an array of stream arrays");
            c.feature_sets.clear();
            for (const auto& fs : v) c.feature_sets.push_back(detail::parse_stream_list(fs, key));
        } else if (key == "seed") num(c.seed);
        else throw Error("config: unknown key '" + key + "'");
    }
    return c;
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config " + path.string());
    auto c = config_from_json(parse_kv_config(in, path.string()), path.parent_path());
    c.validate();
    return c;
}

} // namespace lipread
