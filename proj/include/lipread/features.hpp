#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "lipread/binary_io.hpp"
#include "lipread/corpus.hpp"
#include "lipread/dct.hpp"
#include "lipread/error.hpp"
#include "lipread/pca.hpp"
#include "lipread/sift.hpp"

namespace lipread {

enum class Stream { dct_spatial, dct_temporal, pca_spatial, pca_temporal, sift_spatial, sift_temporal };

inline constexpr std::array kAllStreams{Stream::dct_spatial,  Stream::dct_temporal,  Stream::pca_spatial,
                                        Stream::pca_temporal, Stream::sift_spatial, Stream::sift_temporal};

inline std::string_view to_string(Stream s) {
    switch (s) {
    case Stream::dct_spatial: return "dct_spatial";
    case Stream::dct_temporal: return "dct_temporal";
    case Stream::pca_spatial: return "pca_spatial";
    case Stream::pca_temporal: return "pca_temporal";
    case Stream::sift_spatial: return "sift_spatial";
    case Stream::sift_temporal: return "sift_temporal";
    }
    return "?";
}

inline Stream parse_stream(std::string_view name) {
    for (auto s : kAllStreams)
        if (to_string(s) == name) return s;
    throw Error("unknown feature stream '" + std::string(name) + "'");
}

inline bool is_temporal(Stream s) {
    return s == Stream::dct_temporal || s == Stream::pca_temporal || s == Stream::sift_temporal;
}

struct FeatureConfig {
    std::vector<Stream> streams{Stream::dct_spatial, Stream::dct_temporal};
    int dct_coeffs = 121;
    double pca_variance = 0.90;
    int sift_grid_step = 8;
    int pa_permutations = 100;
    double pa_percentile = 0.95;
    std::size_t fit_max_samples = 2000; // frames used to fit PCA bases
    std::size_t pa_max_samples = 300;   // frames used by Parallel Analysis
    std::uint64_t seed = 0;

    void validate() const {
        if (streams.empty()) throw Error("feature config: no streams selected");
        if (dct_coeffs < 1 || dct_coeffs > kRoiPixels) throw Error("feature config: dct_coeffs must be in [1, 3072]");
        if (!(pca_variance > 0.0 && pca_variance <= 1.0)) throw Error("feature config: pca_variance must be in (0,1]");
        if (sift_grid_step < 1) throw Error("feature config: sift_grid_step must be >= 1");
        if (pa_permutations < 1) throw Error("feature config: pa_permutations must be >= 1");
        if (!(pa_percentile > 0.0 && pa_percentile < 1.0)) throw Error("feature config: pa_percentile must be in (0,1)");
    }
};

/// Centred temporal gradient (f[t+1] - f[t-1]) / 2 with replicated boundary frames.
inline Grid temporal_frame(const std::vector<RoiFrame>& seq, std::size_t t) {
    if (seq.empty()) throw Error("temporal_frame: empty sequence");
    if (t >= seq.size()) throw Error("temporal_frame: index out of range");
    const auto& next = seq[std::min(t + 1, seq.size() - 1)].pixels();
    const auto& prev = seq[t == 0 ? 0 : t - 1].pixels();
    return (next - prev) * 0.5;
}

struct LayoutSpan {
    std::string name;
    int offset = 0;
    int length = 0;
    friend bool operator==(const LayoutSpan&, const LayoutSpan&) = default;
};

using FeatureLayout = std::vector<LayoutSpan>;

/// Per-frame fused descriptors of one utterance; row t is the feature vector of frame t.
struct FeatureSequence {
    Eigen::MatrixXd values;
    FeatureLayout layout;

    Eigen::Index frames() const { return values.rows(); }
    Eigen::Index dim() const { return values.cols(); }
};

/// Everything fitted on training data that extraction needs.
struct StreamModel {
    Stream stream = Stream::dct_spatial;
    std::optional<PcaModel> pca; // pca_* and sift_* streams
    Eigen::VectorXd mean;        // z-score statistics of the stream output
    Eigen::VectorXd stddev;

    int dim() const { return static_cast<int>(mean.size()); }
};

struct FeatureModels {
    FeatureConfig config;
    std::vector<StreamModel> streams;

    FeatureLayout layout() const {
        FeatureLayout out;
        int off = 0;
        for (const auto& s : streams) {
            out.push_back({std::string(to_string(s.stream)), off, s.dim()});
            off += s.dim();
        }
        return out;
    }
    int dim() const {
        int d = 0;
        for (const auto& s : streams) d += s.dim();
        return d;
    }
};

namespace detail {

/// Stream output before PCA and z-scoring.
inline Eigen::VectorXd raw_stream(Stream s, const FeatureConfig& cfg, const std::vector<RoiFrame>& seq, std::size_t t) {
    const Grid source = is_temporal(s) ? temporal_frame(seq, t) : seq[t].pixels();
    switch (s) {
    case Stream::dct_spatial:
    case Stream::dct_temporal: return dct_features(source, cfg.dct_coeffs);
    case Stream::pca_spatial:
    case Stream::pca_temporal: return Eigen::Map<const Eigen::VectorXd>(source.data(), source.size());
    case Stream::sift_spatial:
    case Stream::sift_temporal: return dense_sift(source, cfg.sift_grid_step);
    }
    return {};
}

inline Eigen::VectorXd reduce_stream(const StreamModel& m, Eigen::VectorXd raw) {
    if (m.pca) return m.pca->project(raw);
    return raw;
}

inline std::vector<std::pair<std::size_t, std::size_t>> strided_frames(const Corpus& corpus, std::size_t cap) {
    std::vector<std::pair<std::size_t, std::size_t>> all;
    for (std::size_t u = 0; u < corpus.utterances.size(); ++u)
        for (std::size_t t = 0; t < corpus.utterances[u].size(); ++t) all.emplace_back(u, t);
    if (cap == 0 || all.size() <= cap) return all;
    std::vector<std::pair<std::size_t, std::size_t>> picked;
    picked.reserve(cap);
    for (std::size_t i = 0; i < cap; ++i) picked.push_back(all[i * all.size() / cap]);
    return picked;
}

} // namespace detail

/// Fits PCA bases (variance-retention for pca_*, Parallel Analysis for sift_*) and per-stream
/// z-score statistics on the training corpus.
inline FeatureModels fit_feature_models(const Corpus& train, const FeatureConfig& config) {
    config.validate();
    if (train.frame_count() < 2) throw Error("fit_feature_models: need at least 2 training frames");
    FeatureModels models{config, {}};
    for (auto s : config.streams) {
        StreamModel sm{s, std::nullopt, {}, {}};
        const bool uses_pca = s == Stream::pca_spatial || s == Stream::pca_temporal || s == Stream::sift_spatial ||
                              s == Stream::sift_temporal;
        if (uses_pca) {
            const auto picks = detail::strided_frames(train, config.fit_max_samples);
            Eigen::MatrixXd sample;
            for (std::size_t i = 0; i < picks.size(); ++i) {
                const auto& u = train.utterances[picks[i].first];
                auto v = detail::raw_stream(s, config, u.frames, picks[i].second);
                if (i == 0) sample.resize(static_cast<Eigen::Index>(picks.size()), v.size());
                sample.row(static_cast<Eigen::Index>(i)) = v.transpose();
            }
            if (s == Stream::pca_spatial || s == Stream::pca_temporal) {
                sm.pca = pca_fit(sample, config.pca_variance);
            } else {
                const auto pa_picks = std::min<std::size_t>(config.pa_max_samples, picks.size());
                Eigen::MatrixXd pa_sample(static_cast<Eigen::Index>(pa_picks), sample.cols());
                for (std::size_t i = 0; i < pa_picks; ++i)
                    pa_sample.row(static_cast<Eigen::Index>(i)) = sample.row(static_cast<Eigen::Index>(i * picks.size() / pa_picks));
                int k = pa_picks >= 2 ? parallel_analysis(pa_sample, config.pa_permutations, config.pa_percentile,
                                                          config.seed)
                                      : 1;
                sm.pca = pca_fit_components(sample, std::max(k, 1));
            }
        }
        // z-score statistics over every training frame (population variance)
        Eigen::VectorXd sum, sumsq;
        std::size_t n = 0;
        for (const auto& u : train.utterances) {
            for (std::size_t t = 0; t < u.size(); ++t) {
                Eigen::VectorXd v = detail::reduce_stream(sm, detail::raw_stream(s, config, u.frames, t));
                if (n == 0) {
                    sum = Eigen::VectorXd::Zero(v.size());
                    sumsq = Eigen::VectorXd::Zero(v.size());
                }
                sum += v;
                ++n;
            }
        }
        sm.mean = sum / static_cast<double>(n);
        for (const auto& u : train.utterances) {
            for (std::size_t t = 0; t < u.size(); ++t) {
                Eigen::VectorXd v = detail::reduce_stream(sm, detail::raw_stream(s, config, u.frames, t)) - sm.mean;
                sumsq += v.cwiseProduct(v);
            }
        }
        sm.stddev = (sumsq / static_cast<double>(n)).cwiseSqrt();
        for (Eigen::Index i = 0; i < sm.stddev.size(); ++i)
            if (!(sm.stddev[i] > 1e-12)) sm.stddev[i] = 1.0;
        models.streams.push_back(std::move(sm));
    }
    return models;
}

/// Per-frame early fusion of the configured streams, each z-scored with training statistics.
inline FeatureSequence extract(const Utterance& utt, const FeatureConfig& config, const FeatureModels& models) {
    if (config.streams.size() != models.streams.size())
        throw Error("extract: configured streams do not match the fitted models");
    for (std::size_t i = 0; i < config.streams.size(); ++i)
        if (config.streams[i] != models.streams[i].stream)
            throw Error("extract: stream '" + std::string(to_string(config.streams[i])) +
                        "' has no fitted model in this position");
    FeatureSequence seq;
    seq.layout = models.layout();
    seq.values.resize(static_cast<Eigen::Index>(utt.size()), models.dim());
    for (std::size_t t = 0; t < utt.size(); ++t) {
        Eigen::Index off = 0;
        for (const auto& sm : models.streams) {
            Eigen::VectorXd v = detail::reduce_stream(sm, detail::raw_stream(sm.stream, models.config, utt.frames, t));
            if (v.size() != sm.dim()) throw Error("extract: stream dimension changed since fitting");
            seq.values.row(static_cast<Eigen::Index>(t)).segment(off, v.size()) =
                ((v - sm.mean).array() / sm.stddev.array()).matrix().transpose();
            off += v.size();
        }
    }
    return seq;
}

inline FeatureSequence extract(const Utterance& utt, const FeatureModels& models) {
    return extract(utt, models.config, models);
}

// ---------------------------------------------------------------------------
// Serialization of fitted models

inline void write_feature_models(ByteWriter& w, const FeatureModels& m) {
    w.put<std::uint32_t>(static_cast<std::uint32_t>(m.config.streams.size()));
    for (auto s : m.config.streams) w.str(to_string(s));
    w.put<std::int32_t>(m.config.dct_coeffs);
    w.put(m.config.pca_variance);
    w.put<std::int32_t>(m.config.sift_grid_step);
    w.put<std::int32_t>(m.config.pa_permutations);
    w.put(m.config.pa_percentile);
    w.put<std::uint64_t>(m.config.fit_max_samples);
    w.put<std::uint64_t>(m.config.pa_max_samples);
    w.put<std::uint64_t>(m.config.seed);
    for (const auto& sm : m.streams) {
        w.put<std::uint8_t>(sm.pca ? 1 : 0);
        if (sm.pca) {
            w.vec(sm.pca->mean);
            w.mat(sm.pca->basis);
            w.vec(sm.pca->eigenvalues);
            w.put<std::int32_t>(sm.pca->n_retained);
            w.put<std::uint8_t>(sm.pca->degenerate ? 1 : 0);
        }
        w.vec(sm.mean);
        w.vec(sm.stddev);
    }
}

inline FeatureModels read_feature_models(ByteReader& r) {
    FeatureModels m;
    auto n = r.get<std::uint32_t>();
    m.config.streams.clear();
    for (std::uint32_t i = 0; i < n; ++i) m.config.streams.push_back(parse_stream(r.str()));
    m.config.dct_coeffs = r.get<std::int32_t>();
    m.config.pca_variance = r.get<double>();
    m.config.sift_grid_step = r.get<std::int32_t>();
    m.config.pa_permutations = r.get<std::int32_t>();
    m.config.pa_percentile = r.get<double>();
    m.config.fit_max_samples = r.get<std::uint64_t>();
    m.config.pa_max_samples = r.get<std::uint64_t>();
    m.config.seed = r.get<std::uint64_t>();
    for (auto s : m.config.streams) {
        StreamModel sm{s, std::nullopt, {}, {}};
        if (r.get<std::uint8_t>()) {
            PcaModel p;
            p.mean = r.vec();
            p.basis = r.mat();
            p.eigenvalues = r.vec();
            p.n_retained = r.get<std::int32_t>();
            p.degenerate = r.get<std::uint8_t>() != 0;
            sm.pca = std::move(p);
        }
        sm.mean = r.vec();
        sm.stddev = r.vec();
        m.streams.push_back(std::move(sm));
    }
    return m;
}

} // namespace lipread
