// lipread: command-line driver for the experiment stages.
//
//   lipread --config exp.toml extract
//   lipread --config exp.toml train [--folds 4]
//   lipread --config exp.toml build-vocab --length 20
//   lipread --config exp.toml sweep-vocab
//   lipread --config exp.toml decode [--length L] [--rank R | --baseline]
//   lipread --config exp.toml evaluate
//   lipread synth --out DIR [...]
//   lipread model inspect FILE

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "lipread/ensemble.hpp"
#include "lipread/feature_cache.hpp"
#include "lipread/hmm.hpp"
#include "lipread/pipeline.hpp"
#include "lipread/synthetic.hpp"
#include "lipread/vocabulary.hpp"

using namespace lipread;

namespace {

std::vector<std::pair<int, int>> parse_pairs(const std::string& text) {
    std::vector<std::pair<int, int>> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (item.empty()) continue;
        const auto colon = item.find(':');
        if (colon == std::string::npos) throw Error("--pairs expects i:j items separated by commas");
        out.emplace_back(std::stoi(item.substr(0, colon)), std::stoi(item.substr(colon + 1)));
    }
    return out;
}

std::string file_magic(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    char m[4] = {};
    in.read(m, 4);
    return std::string(m, static_cast<std::size_t>(in.gcount()));
}

void inspect(const std::string& path) {
    const auto magic = file_magic(path);
    if (magic == "LRLD") {
        const auto l = load_ensemble(path);
        std::cout << "bagged LDA ensemble\n  metadata: " << l.metadata << "\n  bags: " << l.ensemble.n_bags()
                  << "\n  classes: " << l.ensemble.classes() << "\n  dim: " << l.ensemble.dim() << "\n  class names:";
        for (const auto& n : l.ensemble.class_names) std::cout << ' ' << n;
        std::cout << "\n  per-class projection statistics (mean over bags):\n"
                  << "  class        in_mean     in_std   out_mean    out_std  borrowed\n";
        const auto& ens = l.ensemble;
        for (int c = 0; c < ens.classes(); ++c) {
            ProjectionStats avg{0, 0, 0, 0, false};
            int borrowed = 0;
            for (const auto& m : ens.members) {
                const auto& s = m[c].stats;
                avg.in_mean += s.in_mean;
                avg.in_std += s.in_std;
                avg.out_mean += s.out_mean;
                avg.out_std += s.out_std;
                borrowed += (s.borrowed || m[c].mean_borrowed) ? 1 : 0;
            }
            const double n = ens.n_bags();
            std::printf("  %-8s %10.4f %10.4f %10.4f %10.4f  %d/%d\n", ens.class_names[static_cast<std::size_t>(c)].c_str(),
                        avg.in_mean / n, avg.in_std / n, avg.out_mean / n, avg.out_std / n, borrowed, ens.n_bags());
        }
        std::fflush(stdout);
    } else if (magic == "LRFC") {
        const auto c = read_feature_cache(path);
        std::cout << "feature cache\n  metadata: " << c.metadata << "\n  frames: " << c.features.frames()
                  << "\n  dim: " << c.features.dim() << "\n  source: " << to_hex(c.source_hash) << "\n  layout:";
        for (const auto& s : c.features.layout) std::cout << ' ' << s.name << '[' << s.offset << '+' << s.length << ']';
        std::cout << '\n';
    } else if (magic == "LRFM") {
        const auto f = decode_feature_models(read_file_bytes(path), path);
        std::cout << "feature models\n  metadata: " << f.metadata << "\n  dim: " << f.models.dim() << "\n  streams:";
        for (const auto& s : f.models.streams) {
            std::cout << ' ' << to_string(s.stream) << '(' << s.dim();
            if (s.pca) std::cout << ", pca" << (s.pca->degenerate ? " degenerate" : "");
            std::cout << ')';
        }
        std::cout << '\n';
    } else {
        std::ifstream in(path);
        nlohmann::json doc;
        try {
            doc = nlohmann::json::parse(in);
        } catch (const nlohmann::json::exception&) {
            throw DataError(path + ": unrecognised file type");
        }
        if (doc.contains("groups")) {
            const auto v = vocabulary_from_json(doc);
            std::cout << "viseme vocabulary\n  groups: " << v.size() << "\n  merges: " << v.history().size() << '\n';
            for (int g = 0; g < v.size(); ++g)
                std::cout << "  " << g << ": " << v.group_name(g) << " (" << to_string(v.groups()[static_cast<std::size_t>(g)].kind)
                          << ")\n";
        } else if (doc.contains("A")) {
            const auto m = hmm_from_json(doc);
            std::cout << "HMM\n  states: " << m.n_states() << "\n  observations: " << m.n_observations() << '\n';
        } else {
            throw DataError(path + ": unrecognised file type");
        }
        if (doc.contains("provenance")) std::cout << "  provenance: " << doc["provenance"].dump() << '\n';
    }
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Visual speech recognition experiments: features, bagged LDA, viseme vocabularies, HMM decoding"};
    app.require_subcommand(1);
    app.fallthrough();

    std::string config_path;
    std::optional<std::uint64_t> seed;
    app.add_option("--config", config_path, "experiment config (key = value file)");
    app.add_option("--seed", seed, "override the config seed");

    auto* extract = app.add_subcommand("extract", "fit feature models and write per-utterance caches");

    int folds = 0;
    auto* train = app.add_subcommand("train", "train the phoneme classifier ensemble and HMM");
    train->add_option("--folds", folds, "also run K-fold cross-validation over the training utterances");

    int length = 0;
    bool retrain = false;
    auto* build = app.add_subcommand("build-vocab", "build one viseme vocabulary");
    build->add_option("--length", length, "number of viseme groups (default: decode_length)");
    build->add_flag("--retrain-each-step", retrain, "retrain the classifier after every merge");
    auto* sweep = app.add_subcommand("sweep-vocab", "build every configured vocabulary length");
    sweep->add_flag("--retrain-each-step", retrain, "retrain the classifier after every merge");

    std::optional<int> rank;
    bool baseline = false;
    auto* decode = app.add_subcommand("decode", "decode the test split");
    decode->add_option("--length", length, "vocabulary length (default: decode_length)");
    decode->add_option("--rank", rank, "soft decoding rank (default: all symbols)");
    decode->add_flag("--baseline", baseline, "standard Viterbi on argmax observations");
    auto* evaluate = app.add_subcommand("evaluate", "decode and write the report CSVs");
    evaluate->add_option("--rank", rank, "soft decoding rank (default: all symbols)");
    evaluate->add_flag("--baseline", baseline, "standard Viterbi on argmax observations");

    SyntheticSpec spec;
    std::string out_dir, pairs;
    int n_words = 0;
    auto* synth = app.add_subcommand("synth", "generate a synthetic corpus with planted confusable pairs");
    synth->add_option("--out", out_dir, "output directory")->required();
    synth->add_option("--classes", spec.n_classes, "classes including silence");
    synth->add_option("--vowels", spec.n_vowels, "vowel classes (default: a third)");
    synth->add_option("--pairs", pairs, "planted pairs, e.g. 1:2,5:6");
    synth->add_option("--utterances", spec.n_utterances);
    synth->add_option("--frames", spec.frames_per_utterance, "frames per utterance (no lexicon)");
    synth->add_option("--speakers", spec.n_speakers);
    synth->add_option("--noise", spec.noise, "pixel noise std");
    synth->add_option("--separation", spec.class_separation, "template separation");
    synth->add_option("--feature-dim", spec.feature_dim, "DCT components carrying class information");
    synth->add_option("--label-noise", spec.label_noise, "boundary frame swap probability");
    synth->add_option("--dwell", spec.frames_per_state, "mean frames per phoneme");
    synth->add_option("--words", n_words, "generate a lexicon of this many words and word utterances");
    synth->add_option("--words-per-utterance", spec.words_per_utterance);

    auto* model = app.add_subcommand("model", "inspect artifacts");
    model->require_subcommand(1);
    std::string model_path;
    auto* model_inspect = model->add_subcommand("inspect", "print a summary of a model, cache or vocabulary file");
    model_inspect->add_option("file", model_path)->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (synth->parsed()) {
            if (seed) spec.seed = *seed;
            spec.confusable_pairs = parse_pairs(pairs);
            const auto set = synthetic_phoneme_set(spec);
            if (n_words > 0) spec.lexicon = synthetic_lexicon(set, n_words, spec.seed);
            const auto corpus = generate_synthetic_corpus(spec);
            save_manifest(corpus, out_dir);
            if (n_words > 0) save_lexicon(spec.lexicon, set, std::filesystem::path(out_dir) / "lexicon.txt");
            std::cout << "wrote " << corpus.utterances.size() << " utterances (" << corpus.frame_count() << " frames) to "
                      << out_dir << '\n';
            return 0;
        }
        if (model_inspect->parsed()) {
            inspect(model_path);
            return 0;
        }

        if (config_path.empty()) throw Error("--config is required for this command");
        auto cfg = load_config(config_path);
        if (seed) cfg.seed = *seed;
        if (rank) cfg.rank = *rank;
        if (baseline) cfg.baseline = true;
        if (retrain) cfg.retrain_each_step = true;
        Pipeline p(cfg, &std::cerr);

        if (extract->parsed()) {
            const auto st = p.extract();
            std::cout << "caches: " << st.computed << " computed, " << st.skipped << " up to date, " << st.repaired
                      << " repaired\n";
        } else if (train->parsed()) {
            if (folds > 0) {
                const auto rows = p.cross_validate(folds);
                for (const auto& r : rows)
                    std::cout << r.feature_set << " fold " << r.fold << ": phoneme accuracy "
                              << format_number(r.score.phoneme.accuracy()) << '\n';
            }
            p.train();
        } else if (build->parsed()) {
            const auto s = p.build_vocab(length > 0 ? length : p.decode_length());
            std::cout << "vocabulary of " << s.vocabulary.size() << " groups, training frame accuracy "
                      << format_number(s.training_frame_accuracy) << '\n';
        } else if (sweep->parsed()) {
            for (const auto& s : p.sweep_vocab())
                std::cout << "length " << s.length << ": training frame accuracy " << format_number(s.training_frame_accuracy)
                          << '\n';
        } else if (decode->parsed()) {
            const int L = length > 0 ? length : p.decode_length();
            if (rank && *rank > L)
                throw Error("--rank " + std::to_string(*rank) + " exceeds the " + std::to_string(L) + " viseme symbols");
            const auto mode = p.default_mode(L);
            const auto d = p.decode(L, mode);
            std::cout << "decoded " << d.size() << " utterances into " << p.decode_dir(L, mode).string() << '\n';
        } else if (evaluate->parsed()) {
            p.evaluate();
            std::cout << "reports written to " << (p.out() / "reports").string() << '\n';
        }
    } catch (const MetricError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
