#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "lipread/binary_io.hpp"
#include "lipread/hashing.hpp"
#include "lipread/lda.hpp"

namespace lipread {

enum class BootstrapUnit { frame, utterance };

struct BaggingOptions {
    int n_bags = 100;
    std::uint64_t seed = 0;
    bool bootstrap = true; // false: every bag sees the full training set (test hook)
    BootstrapUnit unit = BootstrapUnit::frame;
    LdaOptions lda;
};

/// Bagged LDA models sharing one class set.
struct LdaEnsemble {
    std::vector<std::string> class_names;
    std::vector<LdaModel> members;
    std::vector<std::uint64_t> bag_seeds;

    int classes() const { return static_cast<int>(class_names.size()); }
    int dim() const { return members.empty() ? 0 : members[0].dim(); }
    int n_bags() const { return static_cast<int>(members.size()); }
};

/// Seed of bag `index` derived from the run seed.
inline std::uint64_t bag_seed(std::uint64_t seed, int index) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(index), 0x5bd1e995u};
    std::array<std::uint32_t, 2> out{};
    seq.generate(out.begin(), out.end());
    return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
}

/// Trains `n_bags` LDA models on bootstrap resamples (size = training size, with replacement).
///
/// `utterance_of_frame` is only needed for utterance-level resampling. Classes that a bag misses
/// take their mean and projection statistics from the full training set and are flagged.
inline LdaEnsemble bagging_train(const Eigen::MatrixXd& x, std::span<const int> labels, int n_classes,
                                 const BaggingOptions& opt, std::vector<std::string> class_names = {},
                                 std::span<const std::size_t> utterance_of_frame = {}) {
    if (opt.n_bags < 1) throw Error("bagging_train: n_bags must be >= 1");
    if (static_cast<std::size_t>(x.rows()) != labels.size()) throw Error("bagging_train: label count mismatch");
    if (class_names.empty())
        for (int c = 0; c < n_classes; ++c) class_names.push_back(std::to_string(c));
    if (static_cast<int>(class_names.size()) != n_classes) throw Error("bagging_train: class name count mismatch");
    {
        std::vector<std::size_t> counts(static_cast<std::size_t>(n_classes), 0);
        for (int l : labels) {
            if (l < 0 || l >= n_classes) throw Error("bagging_train: label out of range");
            ++counts[static_cast<std::size_t>(l)];
        }
        for (int c = 0; c < n_classes; ++c)
            if (counts[static_cast<std::size_t>(c)] == 0)
                throw Error("bagging_train: class '" + class_names[static_cast<std::size_t>(c)] + "' has no training frames");
    }
    if (opt.unit == BootstrapUnit::utterance && utterance_of_frame.size() != labels.size())
        throw Error("bagging_train: utterance-level bootstrap needs a frame->utterance map");

    LdaEnsemble ens;
    ens.class_names = std::move(class_names);
    const LdaModel full = fit_lda(x, labels, n_classes, opt.lda);
    const auto n = static_cast<std::size_t>(x.rows());

    std::vector<std::vector<std::size_t>> utt_frames;
    if (opt.unit == BootstrapUnit::utterance) {
        for (std::size_t i = 0; i < n; ++i) {
            auto u = utterance_of_frame[i];
            if (u >= utt_frames.size()) utt_frames.resize(u + 1);
            utt_frames[u].push_back(i);
        }
        std::erase_if(utt_frames, [](const auto& v) { return v.empty(); });
    }

    for (int b = 0; b < opt.n_bags; ++b) {
        const auto s = bag_seed(opt.seed, b);
        ens.bag_seeds.push_back(s);
        if (!opt.bootstrap) {
            ens.members.push_back(full);
            continue;
        }
        std::mt19937_64 rng(s);
        std::vector<std::size_t> idx;
        idx.reserve(n);
        if (opt.unit == BootstrapUnit::frame) {
            std::uniform_int_distribution<std::size_t> pick(0, n - 1);
            for (std::size_t i = 0; i < n; ++i) idx.push_back(pick(rng));
        } else {
            std::uniform_int_distribution<std::size_t> pick(0, utt_frames.size() - 1);
            for (std::size_t i = 0; i < utt_frames.size(); ++i) {
                const auto& fr = utt_frames[pick(rng)];
                idx.insert(idx.end(), fr.begin(), fr.end());
            }
        }
        Eigen::MatrixXd bx(static_cast<Eigen::Index>(idx.size()), x.cols());
        std::vector<int> by(idx.size());
        for (std::size_t i = 0; i < idx.size(); ++i) {
            bx.row(static_cast<Eigen::Index>(i)) = x.row(static_cast<Eigen::Index>(idx[i]));
            by[i] = labels[idx[i]];
        }
        auto model = fit_lda_geometry(bx, by, n_classes, opt.lda, &full);
        fit_projection_stats(model, bx, by, &x, labels);
        ens.members.push_back(std::move(model));
    }
    return ens;
}

/// Mean of the member likelihood vectors for every row of X: n x C.
inline Eigen::MatrixXd ensemble_likelihoods(const Eigen::MatrixXd& x, const LdaEnsemble& ens) {
    if (ens.members.empty()) throw Error("ensemble_likelihood: empty ensemble");
    Eigen::MatrixXd acc = Eigen::MatrixXd::Zero(x.rows(), ens.classes());
    for (const auto& m : ens.members) acc += m.likelihoods(x);
    return acc / static_cast<double>(ens.members.size());
}

inline Eigen::VectorXd ensemble_likelihood(const Eigen::VectorXd& x, const LdaEnsemble& ens) {
    return ensemble_likelihoods(x.transpose(), ens).row(0).transpose();
}

/// Index of the largest entry; ties go to the lowest index.
inline int argmax_lowest(const Eigen::VectorXd& v) {
    int best = 0;
    for (Eigen::Index i = 1; i < v.size(); ++i)
        if (v[i] > v[best]) best = static_cast<int>(i);
    return best;
}

inline int classify(const Eigen::VectorXd& x, const LdaEnsemble& ens) {
    return argmax_lowest(ensemble_likelihood(x, ens));
}

inline std::vector<int> classify_rows(const Eigen::MatrixXd& likelihoods) {
    std::vector<int> out(static_cast<std::size_t>(likelihoods.rows()));
    for (Eigen::Index i = 0; i < likelihoods.rows(); ++i)
        out[static_cast<std::size_t>(i)] = argmax_lowest(likelihoods.row(i).transpose());
    return out;
}

// ---------------------------------------------------------------------------
// Model file: "LRLD", version u32, metadata string, class names, mode, bags.

inline constexpr std::uint32_t kModelVersion = 1;

inline std::vector<unsigned char> encode_ensemble(const LdaEnsemble& ens, const std::string& metadata) {
    ByteWriter w;
    w.raw("LRLD");
    w.put<std::uint32_t>(kModelVersion);
    w.str(metadata);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(ens.classes()));
    for (const auto& n : ens.class_names) w.str(n);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(ens.dim()));
    const auto mode = ens.members.empty() ? CovarianceMode::pooled : ens.members[0].mode();
    w.put<std::uint8_t>(mode == CovarianceMode::pooled ? 0 : 1);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(ens.n_bags()));
    for (std::size_t b = 0; b < ens.members.size(); ++b) {
        const auto& m = ens.members[b];
        w.put<std::uint64_t>(ens.bag_seeds[b]);
        for (const auto& c : m.class_models()) {
            w.vec(c.mean);
            w.put(c.stats.in_mean);
            w.put(c.stats.in_std);
            w.put(c.stats.out_mean);
            w.put(c.stats.out_std);
            w.put<std::uint8_t>((c.stats.borrowed ? 1 : 0) | (c.mean_borrowed ? 2 : 0));
        }
        const int ncov = mode == CovarianceMode::pooled ? 1 : m.classes();
        for (int k = 0; k < ncov; ++k) {
            const auto& cov = m.covariance(k);
            for (Eigen::Index i = 0; i < cov.rows(); ++i)
                for (Eigen::Index j = 0; j <= i; ++j) w.put(cov(i, j));
        }
    }
    const auto sum = sha256(w.bytes().data(), w.bytes().size());
    w.raw(std::string(sum.begin(), sum.end()));
    return w.bytes();
}

struct LoadedEnsemble {
    LdaEnsemble ensemble;
    std::string metadata;
};

inline LoadedEnsemble decode_ensemble(const std::vector<unsigned char>& bytes, const std::string& what) {
    if (bytes.size() < 36) throw DataError(what + ": truncated model file");
    const auto body = bytes.size() - 32;
    const auto sum = sha256(bytes.data(), body);
    if (!std::equal(sum.begin(), sum.end(), bytes.begin() + static_cast<std::ptrdiff_t>(body)))
        throw DataError(what + ": model checksum mismatch");
    ByteReader r(bytes.data(), body, what);
    if (r.raw(4) != "LRLD") throw DataError(what + ": not a model file");
    if (r.get<std::uint32_t>() != kModelVersion) throw DataError(what + ": unsupported model version");
    LoadedEnsemble out;
    out.metadata = r.str();
    auto& ens = out.ensemble;
    const auto C = r.get<std::uint32_t>();
    for (std::uint32_t c = 0; c < C; ++c) ens.class_names.push_back(r.str());
    const auto d = static_cast<Eigen::Index>(r.get<std::uint32_t>());
    const auto mode = r.get<std::uint8_t>() == 0 ? CovarianceMode::pooled : CovarianceMode::per_class;
    const auto bags = r.get<std::uint32_t>();
    for (std::uint32_t b = 0; b < bags; ++b) {
        ens.bag_seeds.push_back(r.get<std::uint64_t>());
        std::vector<LdaClassModel> classes(C);
        for (auto& c : classes) {
            c.mean = r.vec();
            c.stats.in_mean = r.get<double>();
            c.stats.in_std = r.get<double>();
            c.stats.out_mean = r.get<double>();
            c.stats.out_std = r.get<double>();
            const auto flags = r.get<std::uint8_t>();
            c.stats.borrowed = flags & 1;
            c.mean_borrowed = flags & 2;
        }
        const std::uint32_t ncov = mode == CovarianceMode::pooled ? 1 : C;
        std::vector<Eigen::MatrixXd> covs;
        for (std::uint32_t k = 0; k < ncov; ++k) {
            Eigen::MatrixXd cov(d, d);
            for (Eigen::Index i = 0; i < d; ++i)
                for (Eigen::Index j = 0; j <= i; ++j) cov(i, j) = cov(j, i) = r.get<double>();
            covs.push_back(std::move(cov));
        }
        ens.members.push_back(LdaModel::assemble(mode, std::move(classes), std::move(covs)));
    }
    if (r.remaining() != 0) throw DataError(what + ": trailing bytes in model file");
    return out;
}

inline void save_ensemble(const std::filesystem::path& path, const LdaEnsemble& ens, const std::string& metadata) {
    write_file_bytes(path, encode_ensemble(ens, metadata));
}

inline LoadedEnsemble load_ensemble(const std::filesystem::path& path) {
    return decode_ensemble(read_file_bytes(path), path.string());
}

} // namespace lipread
