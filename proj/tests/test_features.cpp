#include <numbers>
#include <random>

#include <gtest/gtest.h>

#include "lipread/feature_cache.hpp"
#include "lipread/features.hpp"
#include "lipread/synthetic.hpp"
#include "oracles.hpp"

using namespace lipread;

namespace {

Grid random_frame(std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Grid g(kRoiHeight, kRoiWidth);
    for (Eigen::Index i = 0; i < g.size(); ++i) g.data()[i] = u(rng);
    return g;
}

// Low-frequency blobs, roughly what a mouth ROI looks like after smoothing.
Grid smooth_frame(std::mt19937_64& rng) {
    std::normal_distribution<double> n(0.0, 1.0);
    Grid g(kRoiHeight, kRoiWidth);
    const double a = n(rng), b = n(rng), c = n(rng);
    for (int r = 0; r < kRoiHeight; ++r)
        for (int col = 0; col < kRoiWidth; ++col)
            g(r, col) = 0.5 + 0.2 * a * std::cos(r / 9.0) + 0.15 * b * std::sin(col / 11.0) +
                        0.1 * c * std::cos((r + col) / 5.0);
    return g;
}

} // namespace

TEST(Dct, ConstantFrameHasOnlyDc) {
    const Grid c = dct2(Grid::Constant(kRoiHeight, kRoiWidth, 0.3));
    EXPECT_NEAR(c(0, 0), 0.3 * std::sqrt(double(kRoiPixels)), 1e-12);
    Grid rest = c;
    rest(0, 0) = 0.0;
    EXPECT_LT(rest.cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Dct, ImpulseMatchesClosedForm) {
    Grid g = Grid::Zero(kRoiHeight, kRoiWidth);
    g(0, 0) = 1.0;
    const Grid c = dct2(g);
    for (int k = 0; k < kRoiHeight; ++k) {
        for (int l = 0; l < kRoiWidth; ++l) {
            const double sk = std::sqrt((k == 0 ? 1.0 : 2.0) / kRoiHeight);
            const double sl = std::sqrt((l == 0 ? 1.0 : 2.0) / kRoiWidth);
            const double want = sk * std::cos(std::numbers::pi * k / (2.0 * kRoiHeight)) * sl *
                                std::cos(std::numbers::pi * l / (2.0 * kRoiWidth));
            ASSERT_NEAR(c(k, l), want, 1e-14) << k << "," << l;
        }
    }
}

TEST(Dct, ParsevalAndInverse) {
    std::mt19937_64 rng(3);
    for (int rep = 0; rep < 20; ++rep) {
        const Grid f = random_frame(rng);
        const Grid c = dct2(f);
        EXPECT_NEAR(f.squaredNorm(), c.squaredNorm(), 1e-9);
        EXPECT_LT((idct2(c) - f).cwiseAbs().maxCoeff(), 1e-9);
    }
}

TEST(Dct, ZigzagIsJpegOrderOn8x8) {
    const std::vector<std::pair<int, int>> head{{0, 0}, {0, 1}, {1, 0}, {2, 0}, {1, 1}, {0, 2}, {0, 3}, {1, 2}, {2, 1}, {3, 0}};
    const auto z = zigzag_order(8, 8);
    ASSERT_EQ(z.size(), 64u);
    for (std::size_t i = 0; i < head.size(); ++i) EXPECT_EQ(z[i], head[i]) << i;
    EXPECT_EQ(z.back(), (std::pair{7, 7}));
}

TEST(Dct, ZigzagVisitsEveryRoiCellOnce) {
    const auto& z = roi_zigzag();
    ASSERT_EQ(z.size(), std::size_t(kRoiPixels));
    std::set<std::pair<int, int>> seen(z.begin(), z.end());
    EXPECT_EQ(seen.size(), z.size());
    for (std::size_t i = 1; i < z.size(); ++i)
        EXPECT_LE(z[i - 1].first + z[i - 1].second, z[i].first + z[i].second);
}

TEST(Dct, FeaturesFollowZigzagOfFullTransform) {
    std::mt19937_64 rng(4);
    const Grid f = random_frame(rng);
    const Grid c = dct2(f);
    const auto v = dct_features(f, 121);
    ASSERT_EQ(v.size(), 121);
    for (int i = 0; i < 121; ++i) EXPECT_NEAR(v[i], c(roi_zigzag()[i].first, roi_zigzag()[i].second), 1e-12);
    const auto dc = dct_features(Grid::Constant(kRoiHeight, kRoiWidth, 0.7), 1);
    EXPECT_NEAR(dc[0], 0.7 * std::sqrt(double(kRoiPixels)), 1e-12);
}

TEST(Dct, FullCountReconstructsExactly) {
    std::mt19937_64 rng(5);
    const Grid f = random_frame(rng);
    EXPECT_LT((dct_reconstruct(dct_features(f, kRoiPixels)) - f).cwiseAbs().maxCoeff(), 1e-9);
    EXPECT_THROW(dct_features(f, 0), Error);
    EXPECT_THROW(dct_features(f, kRoiPixels + 1), Error);
}

TEST(Dct, SelectCountTrivialCases) {
    std::mt19937_64 rng(6);
    std::vector<Grid> frames{random_frame(rng), random_frame(rng)};
    EXPECT_EQ(select_dct_count(frames, 1.0), 1);
    std::vector<Grid> flat{Grid::Constant(kRoiHeight, kRoiWidth, 0.2), Grid::Constant(kRoiHeight, kRoiWidth, 0.9)};
    EXPECT_EQ(select_dct_count(flat, 0.001), 1);
    EXPECT_THROW(select_dct_count({}, 0.1), Error);
}

TEST(Dct, SelectCountIsMinimalByExhaustiveScan) {
    std::mt19937_64 rng(7);
    std::vector<Grid> frames;
    for (int i = 0; i < 6; ++i) frames.push_back(smooth_frame(rng));
    auto mean_error = [&](int n) {
        double e = 0.0;
        for (const auto& f : frames) e += (dct_reconstruct(dct_features(f, n)) - f).norm() / f.norm();
        return e / static_cast<double>(frames.size());
    };
    for (double target : {0.2, 0.05, 0.01}) {
        const int n = select_dct_count(frames, target);
        EXPECT_LE(mean_error(n), target + 1e-12);
        for (int m = 1; m < n; ++m) ASSERT_GT(mean_error(m), target) << "target " << target << " count " << m;
    }
}

TEST(Dct, SelectCountMonotoneInTarget) {
    std::mt19937_64 rng(8);
    std::vector<Grid> frames;
    for (int i = 0; i < 4; ++i) frames.push_back(smooth_frame(rng) + 0.05 * random_frame(rng));
    int prev = kRoiPixels + 1;
    for (double t = 0.005; t < 1.0; t *= 1.7) {
        const int n = select_dct_count(frames, t);
        EXPECT_LE(n, prev);
        prev = n;
    }
}

// ---------------------------------------------------------------------------

TEST(Pca, NineToOneVarianceKeepsOneComponent) {
    Eigen::MatrixXd x(4, 2);
    // variances 9 and 1 along the axes (sample variance with n-1)
    const double a = std::sqrt(9.0 * 3.0 / 2.0), b = std::sqrt(3.0 / 2.0);
    x << a, 0, -a, 0, 0, b, 0, -b;
    const auto m = pca_fit(x, 0.90);
    EXPECT_EQ(m.n_retained, 1);
    EXPECT_NEAR(m.eigenvalues[0], 9.0, 1e-9);
    EXPECT_NEAR(m.eigenvalues[1], 1.0, 1e-9);
}

TEST(Pca, IsotropicFullVarianceKeepsAll) {
    const int d = 5;
    Eigen::MatrixXd x(2 * d, d);
    x.setZero();
    for (int i = 0; i < d; ++i) {
        x(2 * i, i) = 1.0;
        x(2 * i + 1, i) = -1.0;
    }
    EXPECT_EQ(pca_fit(x, 1.0).n_retained, d);
}

TEST(Pca, BoundaryMatchesFullDecomposition) {
    std::mt19937_64 rng(9);
    std::normal_distribution<double> n(0.0, 1.0);
    for (int rows : {30, 200}) { // Gram path and covariance path
        Eigen::MatrixXd x(rows, 50);
        for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = n(rng);
        for (int j = 0; j < 50; ++j) x.col(j) *= 1.0 + 0.1 * j;
        const auto m = pca_fit(x, 0.90);
        const Eigen::VectorXd ev = oracle::svd_variances(x);
        const double total = ev.sum();
        const int k = m.n_retained;
        EXPECT_GE(ev.head(k).sum() / total, 0.90 - 1e-12);
        EXPECT_LT(ev.head(k - 1).sum() / total, 0.90);
        const Eigen::MatrixXd gram = m.basis.transpose() * m.basis;
        EXPECT_LT((gram - Eigen::MatrixXd::Identity(k, k)).cwiseAbs().maxCoeff(), 1e-8);
        for (Eigen::Index i = 1; i < m.eigenvalues.size(); ++i) EXPECT_LE(m.eigenvalues[i], m.eigenvalues[i - 1] + 1e-12);
        EXPECT_LE(k, std::min(rows - 1, 50));
    }
}

TEST(Pca, ReconstructionErrorMonotoneInComponents) {
    std::mt19937_64 rng(10);
    std::normal_distribution<double> n(0.0, 1.0);
    Eigen::MatrixXd x(40, 12);
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = n(rng);
    const Eigen::VectorXd probe = x.row(3).transpose();
    double prev = std::numeric_limits<double>::infinity();
    for (int k = 1; k <= 12; ++k) {
        const auto m = pca_fit_components(x, k);
        const double err = (m.reconstruct(m.project(probe)) - probe).norm();
        EXPECT_LE(err, prev + 1e-12);
        prev = err;
    }
    EXPECT_LT(prev, 1e-9);
}

TEST(Pca, DegenerateSampleFlagged) {
    const auto m = pca_fit(Eigen::MatrixXd::Constant(5, 3, 2.0), 0.9);
    EXPECT_TRUE(m.degenerate);
    EXPECT_EQ(m.n_retained, 1);
    EXPECT_THROW(pca_fit(Eigen::MatrixXd::Ones(1, 3), 0.9), Error);
    EXPECT_THROW(pca_fit(Eigen::MatrixXd::Ones(4, 3), 0.0), Error);
}

TEST(ParallelAnalysis, NoiseGivesAtMostOne) {
    std::mt19937_64 rng(11);
    std::normal_distribution<double> n(0.0, 1.0);
    for (int rep = 0; rep < 3; ++rep) {
        Eigen::MatrixXd x(150, 12);
        for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = n(rng);
        EXPECT_LE(parallel_analysis(x, 100, 0.95, rep), 1);
    }
}

TEST(ParallelAnalysis, RankOneSignalGivesOneAndMatchesOracle) {
    std::mt19937_64 rng(12);
    std::normal_distribution<double> n(0.0, 1.0);
    Eigen::MatrixXd x(120, 10);
    Eigen::VectorXd loading(10);
    for (auto& l : loading) l = 1.0 + n(rng) * 0.3;
    for (int i = 0; i < 120; ++i) {
        const double f = n(rng);
        for (int j = 0; j < 10; ++j) x(i, j) = f * loading[j] + 1e-3 * n(rng);
    }
    EXPECT_EQ(parallel_analysis(x, 100, 0.95, 1), 1);
    EXPECT_EQ(oracle::parallel_analysis(x, 100, 0.95, 77), 1);
}

TEST(ParallelAnalysis, PlantedFactorsAgreeWithOracle) {
    std::mt19937_64 rng(13);
    std::normal_distribution<double> n(0.0, 1.0);
    Eigen::MatrixXd x(200, 15);
    for (int i = 0; i < 200; ++i) {
        const double f1 = n(rng), f2 = n(rng), f3 = n(rng);
        for (int j = 0; j < 15; ++j) x(i, j) = (j < 5 ? f1 : j < 10 ? f2 : f3) + 0.3 * n(rng);
    }
    EXPECT_EQ(parallel_analysis(x, 100, 0.95, 2), 3);
    EXPECT_EQ(oracle::parallel_analysis(x, 100, 0.95, 5), 3);
}

// ---------------------------------------------------------------------------

TEST(Sift, GridIsFiveBySevenOnRoi) {
    EXPECT_EQ(sift_grid(kRoiHeight, kRoiWidth, 8).size(), 35u);
    EXPECT_EQ(dense_sift(Grid::Zero(kRoiHeight, kRoiWidth)).size(), 35 * 128);
}

TEST(Sift, ConstantFrameGivesZeros) {
    EXPECT_EQ(dense_sift(Grid::Constant(kRoiHeight, kRoiWidth, 0.4)).cwiseAbs().maxCoeff(), 0.0);
}

TEST(Sift, DescriptorsAreUnitAndClipped) {
    std::mt19937_64 rng(14);
    const auto d = dense_sift(random_frame(rng));
    for (int k = 0; k < 35; ++k) {
        const auto seg = d.segment(k * 128, 128);
        EXPECT_NEAR(seg.norm(), 1.0, 1e-12);
        EXPECT_GE(seg.minCoeff(), 0.0);
    }
}

TEST(Sift, AffineIntensityInvariance) {
    std::mt19937_64 rng(15);
    const Grid f = smooth_frame(rng);
    const auto d = dense_sift(f);
    for (auto [a, b] : {std::pair{0.5, 0.0}, std::pair{2.0, -0.3}, std::pair{0.1, 0.8}})
        EXPECT_LT((dense_sift(a * f.array() + b) - d).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(Sift, VerticalEdgeUsesHorizontalGradientBins) {
    Grid g = Grid::Zero(kRoiHeight, kRoiWidth);
    g.rightCols(kRoiWidth / 2).setOnes();
    Grid rev = Grid::Ones(kRoiHeight, kRoiWidth) - g;
    for (const auto& img : {g, rev}) {
        const auto d = dense_sift(img);
        double on = 0.0, off = 0.0;
        for (Eigen::Index i = 0; i < d.size(); ++i) (i % 8 == 0 || i % 8 == 4 ? on : off) += d[i];
        EXPECT_GT(on, 0.0);
        EXPECT_EQ(off, 0.0);
    }
}

// ---------------------------------------------------------------------------

TEST(Temporal, StaticSequenceIsZero) {
    std::vector<RoiFrame> seq(4, RoiFrame::from_pixels(Grid::Constant(kRoiHeight, kRoiWidth, 0.3)));
    for (std::size_t t = 0; t < 4; ++t) EXPECT_EQ(temporal_frame(seq, t).cwiseAbs().maxCoeff(), 0.0);
}

TEST(Temporal, BoundaryReplicationAndRamp) {
    std::vector<RoiFrame> seq;
    for (int t = 0; t < 5; ++t) seq.push_back(RoiFrame::from_pixels(Grid::Constant(kRoiHeight, kRoiWidth, 0.1 + 0.05 * t)));
    EXPECT_NEAR(temporal_frame(seq, 0)(0, 0), 0.025, 1e-15); // (f1 - f0) / 2
    for (std::size_t t = 1; t < 4; ++t) EXPECT_NEAR(temporal_frame(seq, t).maxCoeff(), 0.05, 1e-15);
    EXPECT_NEAR(temporal_frame(seq, 4)(0, 0), 0.025, 1e-15);
    const std::vector<RoiFrame> one(1, seq[0]);
    EXPECT_EQ(temporal_frame(one, 0).cwiseAbs().maxCoeff(), 0.0);
}

// ---------------------------------------------------------------------------

namespace {

Corpus feature_corpus() {
    SyntheticSpec s;
    s.n_classes = 6;
    s.n_utterances = 12;
    s.frames_per_utterance = 15;
    s.noise = 0.05;
    s.seed = 21;
    return generate_synthetic_corpus(s);
}

} // namespace

TEST(Extract, LayoutOfDctStreams) {
    const auto c = feature_corpus();
    FeatureConfig cfg;
    cfg.streams = {Stream::dct_spatial};
    auto m = fit_feature_models(c, cfg);
    EXPECT_EQ(extract(c.utterances[0], m).dim(), 121);
    cfg.streams = {Stream::dct_spatial, Stream::dct_temporal};
    m = fit_feature_models(c, cfg);
    const auto seq = extract(c.utterances[0], m);
    EXPECT_EQ(seq.dim(), 242);
    ASSERT_EQ(seq.layout.size(), 2u);
    EXPECT_EQ(seq.layout[0], (LayoutSpan{"dct_spatial", 0, 121}));
    EXPECT_EQ(seq.layout[1], (LayoutSpan{"dct_temporal", 121, 121}));
}

TEST(Extract, TrainingStreamsAreZScored) {
    const auto c = feature_corpus();
    FeatureConfig cfg;
    cfg.streams = {Stream::dct_spatial, Stream::pca_temporal, Stream::sift_spatial};
    cfg.dct_coeffs = 40;
    cfg.pa_permutations = 20;
    const auto m = fit_feature_models(c, cfg);
    Eigen::MatrixXd all(c.frame_count(), m.dim());
    Eigen::Index row = 0;
    for (const auto& u : c.utterances) {
        const auto seq = extract(u, m);
        all.middleRows(row, seq.frames()) = seq.values;
        row += seq.frames();
        ASSERT_TRUE(seq.values.allFinite());
    }
    const Eigen::RowVectorXd mean = all.colwise().mean();
    const Eigen::RowVectorXd var = (all.rowwise() - mean).colwise().squaredNorm() / double(all.rows());
    EXPECT_LT(mean.cwiseAbs().maxCoeff(), 1e-9);
    EXPECT_LT((var.array() - 1.0).abs().maxCoeff(), 1e-6);
}

TEST(Extract, DeterministicAndStreamMismatchRejected) {
    const auto c = feature_corpus();
    FeatureConfig cfg;
    cfg.streams = {Stream::dct_spatial, Stream::sift_temporal};
    cfg.pa_permutations = 10;
    const auto m1 = fit_feature_models(c, cfg);
    const auto m2 = fit_feature_models(c, cfg);
    EXPECT_EQ(extract(c.utterances[1], m1).values, extract(c.utterances[1], m2).values);
    auto other = cfg;
    other.streams = {Stream::sift_temporal, Stream::dct_spatial};
    EXPECT_THROW(extract(c.utterances[0], other, m1), Error);
}

TEST(Extract, ConfigValidation) {
    FeatureConfig cfg;
    cfg.dct_coeffs = 0;
    EXPECT_THROW(cfg.validate(), Error);
    cfg = {};
    cfg.pca_variance = 1.5;
    EXPECT_THROW(cfg.validate(), Error);
    cfg = {};
    cfg.sift_grid_step = 0;
    EXPECT_THROW(cfg.validate(), Error);
    cfg = {};
    cfg.streams.clear();
    EXPECT_THROW(cfg.validate(), Error);
}

TEST(FeatureModelsIo, RoundTrip) {
    const auto c = feature_corpus();
    FeatureConfig cfg;
    cfg.streams = {Stream::pca_spatial, Stream::dct_temporal};
    const auto m = fit_feature_models(c, cfg);
    ByteWriter w;
    write_feature_models(w, m);
    ByteReader r(w.bytes().data(), w.bytes().size(), "models");
    const auto back = read_feature_models(r);
    EXPECT_EQ(extract(c.utterances[2], back).values, extract(c.utterances[2], m).values);
}

TEST(FeatureCacheIo, RoundTripAndCorruption) {
    const auto c = feature_corpus();
    FeatureConfig cfg;
    const auto m = fit_feature_models(c, cfg);
    FeatureCache cache{extract(c.utterances[0], m), sha256("source"), "{\"seed\":0}"};
    const auto bytes = encode_feature_cache(cache);
    const auto back = decode_feature_cache(bytes, "mem");
    EXPECT_EQ(back.features.values, cache.features.values);
    EXPECT_EQ(back.features.layout, cache.features.layout);
    EXPECT_EQ(back.source_hash, cache.source_hash);
    EXPECT_EQ(back.metadata, cache.metadata);

    auto flipped = bytes;
    flipped[bytes.size() / 2] ^= 0x01;
    EXPECT_THROW(decode_feature_cache(flipped, "mem"), DataError);
    auto truncated = bytes;
    truncated.resize(bytes.size() - 9);
    EXPECT_THROW(decode_feature_cache(truncated, "mem"), DataError);
}
