#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "lipread/error.hpp"

namespace lipread {

enum class CovarianceMode { pooled, per_class };

/// Gaussian summary of the Mahalanobis projections d_c(x) of in-class and out-of-class samples.
struct ProjectionStats {
    double in_mean = 0.0;
    double in_std = 1.0;
    double out_mean = 0.0;
    double out_std = 1.0;
    bool borrowed = false; // computed from the full training set instead of the bag
};

struct LdaClassModel {
    Eigen::VectorXd mean;
    ProjectionStats stats;
    bool mean_borrowed = false; // class absent from the bag
};

struct LdaOptions {
    CovarianceMode mode = CovarianceMode::pooled;
    double shrinkage = 1e-6; // gamma = shrinkage * trace(cov) / dim
};

/// Denominator floor for the out-of-class CDF.
inline constexpr double kOutCdfFloor = 1e-12;

/// Standard normal CDF.
inline double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }

/// log(1 - Phi(z)), accurate far into the upper tail.
inline double log_normal_upper_tail(double z) {
    if (z < 35.0) return std::log(0.5 * std::erfc(z / std::numbers::sqrt2));
    // Asymptotic expansion of the Mills ratio
    const double z2 = z * z;
    double term = 1.0, series = 1.0;
    for (int k = 1; k <= 6; ++k) {
        term *= -(2.0 * k - 1.0) / z2;
        series += term;
    }
    return -0.5 * z2 - std::log(z) - 0.5 * std::log(2.0 * std::numbers::pi) + std::log(series);
}

/// log F(c|x): in-class upper tail over the floored out-of-class CDF.
inline double log_class_score(double d, const ProjectionStats& s) {
    const double num = log_normal_upper_tail((d - s.in_mean) / s.in_std);
    const double den = std::log(std::max(normal_cdf((d - s.out_mean) / s.out_std), kOutCdfFloor));
    return num - den;
}

/// Normalizes per-class scores given in log space so they sum to one.
inline Eigen::VectorXd normalize_log_scores(const Eigen::VectorXd& log_f) {
    const double top = log_f.maxCoeff();
    Eigen::VectorXd l = (log_f.array() - top).exp().matrix();
    return l / l.sum();
}

/// Likelihood vector from class distances and projection statistics.
inline Eigen::VectorXd class_likelihood(const Eigen::VectorXd& distances, std::span<const ProjectionStats> stats) {
    if (static_cast<std::size_t>(distances.size()) != stats.size())
        throw Error("class_likelihood: distance/stat count mismatch");
    Eigen::VectorXd log_f(distances.size());
    for (Eigen::Index c = 0; c < distances.size(); ++c) log_f[c] = log_class_score(distances[c], stats[c]);
    return normalize_log_scores(log_f);
}

/// sqrt((x - mean)^T Sigma^-1 (x - mean)) with Sigma given by its Cholesky factor.
inline double mahalanobis(const Eigen::VectorXd& x, const Eigen::VectorXd& mean, const Eigen::LLT<Eigen::MatrixXd>& cov) {
    if (x.size() != mean.size() || x.size() != cov.matrixLLT().rows())
        throw Error("mahalanobis: dimension mismatch");
    Eigen::VectorXd z = cov.matrixL().solve(x - mean);
    return z.norm();
}

inline double mahalanobis(const Eigen::VectorXd& x, const Eigen::VectorXd& mean, const Eigen::MatrixXd& covariance) {
    Eigen::LLT<Eigen::MatrixXd> llt(covariance);
    if (llt.info() != Eigen::Success) throw Error("mahalanobis: covariance is not positive definite");
    return mahalanobis(x, mean, llt);
}

/// One multi-class LDA model: class means, regularized covariance(s), projection stats.
class LdaModel {
public:
    LdaModel() = default;

    int classes() const { return static_cast<int>(classes_.size()); }
    int dim() const { return classes_.empty() ? 0 : static_cast<int>(classes_[0].mean.size()); }
    CovarianceMode mode() const { return mode_; }
    const LdaClassModel& operator[](int c) const { return classes_.at(static_cast<std::size_t>(c)); }
    LdaClassModel& operator[](int c) { return classes_.at(static_cast<std::size_t>(c)); }
    const std::vector<LdaClassModel>& class_models() const { return classes_; }

    /// Regularized covariance used for class c (shared in pooled mode).
    const Eigen::MatrixXd& covariance(int c = 0) const {
        return covariances_.at(mode_ == CovarianceMode::pooled ? 0 : static_cast<std::size_t>(c));
    }

    std::vector<ProjectionStats> stats() const {
        std::vector<ProjectionStats> s;
        for (const auto& c : classes_) s.push_back(c.stats);
        return s;
    }

    /// Assembles a model from means and already-regularized covariance(s).
    static LdaModel assemble(CovarianceMode mode, std::vector<LdaClassModel> classes,
                             std::vector<Eigen::MatrixXd> covariances) {
        LdaModel m;
        m.mode_ = mode;
        m.classes_ = std::move(classes);
        m.covariances_ = std::move(covariances);
        const std::size_t expect = mode == CovarianceMode::pooled ? 1 : m.classes_.size();
        if (m.covariances_.size() != expect) throw Error("LdaModel: wrong number of covariance matrices");
        for (const auto& cov : m.covariances_) {
            m.factors_.emplace_back(cov);
            if (m.factors_.back().info() != Eigen::Success)
                throw Error("LdaModel: covariance is not positive definite");
        }
        return m;
    }

    double distance(const Eigen::VectorXd& x, int c) const {
        const auto& f = factors_.at(mode_ == CovarianceMode::pooled ? 0 : static_cast<std::size_t>(c));
        return mahalanobis(x, classes_.at(static_cast<std::size_t>(c)).mean, f);
    }

    /// Distances of every row of X to every class: n x C.
    Eigen::MatrixXd distances(const Eigen::MatrixXd& x) const {
        if (x.cols() != dim()) throw Error("LdaModel: feature dimension mismatch");
        const auto n = x.rows();
        const auto C = classes();
        Eigen::MatrixXd out(n, C);
        if (mode_ == CovarianceMode::pooled) {
            const auto L = factors_[0].matrixL();
            Eigen::MatrixXd z = L.solve(x.transpose()); // d x n
            for (int c = 0; c < C; ++c) {
                Eigen::VectorXd w = L.solve(classes_[static_cast<std::size_t>(c)].mean);
                out.col(c) = (z.colwise() - w).colwise().norm().transpose();
            }
        } else {
            for (int c = 0; c < C; ++c) {
                const auto L = factors_[static_cast<std::size_t>(c)].matrixL();
                Eigen::MatrixXd z = L.solve((x.rowwise() - classes_[static_cast<std::size_t>(c)].mean.transpose()).transpose());
                out.col(c) = z.colwise().norm().transpose();
            }
        }
        return out;
    }

    /// Normalized class likelihoods of every row of X: n x C.
    Eigen::MatrixXd likelihoods(const Eigen::MatrixXd& x) const {
        const Eigen::MatrixXd d = distances(x);
        const auto s = stats();
        Eigen::MatrixXd out(d.rows(), d.cols());
        for (Eigen::Index i = 0; i < d.rows(); ++i) out.row(i) = class_likelihood(d.row(i).transpose(), s).transpose();
        return out;
    }

    Eigen::VectorXd likelihood(const Eigen::VectorXd& x) const {
        Eigen::VectorXd d(classes());
        for (int c = 0; c < classes(); ++c) d[c] = distance(x, c);
        return class_likelihood(d, stats());
    }

private:
    CovarianceMode mode_ = CovarianceMode::pooled;
    std::vector<LdaClassModel> classes_;
    std::vector<Eigen::MatrixXd> covariances_;
    std::vector<Eigen::LLT<Eigen::MatrixXd>> factors_;
};

namespace detail {

inline void mean_std(const std::vector<double>& v, double& mean, double& sd) {
    double s = 0.0;
    for (double x : v) s += x;
    mean = s / static_cast<double>(v.size());
    double ss = 0.0;
    for (double x : v) ss += (x - mean) * (x - mean);
    sd = v.size() > 1 ? std::sqrt(ss / static_cast<double>(v.size() - 1)) : 0.0;
}

inline Eigen::MatrixXd regularize(Eigen::MatrixXd cov, double shrinkage) {
    const double d = static_cast<double>(cov.rows());
    double gamma = shrinkage * cov.trace() / d;
    if (!(gamma > 0.0)) gamma = shrinkage;
    cov.diagonal().array() += gamma;
    return cov;
}

inline constexpr double kMinProjectionStd = 1e-12;

} // namespace detail

/// Fits in-class / out-of-class projection statistics of `model` from the given samples.
/// Classes with fewer than two in-class (or out-of-class) samples get statistics from
/// `fallback_x`/`fallback_labels` when provided and are flagged as borrowed.
inline void fit_projection_stats(LdaModel& model, const Eigen::MatrixXd& x, std::span<const int> labels,
                                 const Eigen::MatrixXd* fallback_x = nullptr,
                                 std::span<const int> fallback_labels = {}) {
    const int C = model.classes();
    if (static_cast<std::size_t>(x.rows()) != labels.size()) throw Error("fit_projection_stats: label count mismatch");
    const Eigen::MatrixXd d = model.distances(x);
    Eigen::MatrixXd fallback_d;
    for (int c = 0; c < C; ++c) {
        std::vector<double> in, out;
        for (Eigen::Index i = 0; i < d.rows(); ++i) (labels[static_cast<std::size_t>(i)] == c ? in : out).push_back(d(i, c));
        bool borrowed = false;
        if ((in.size() < 2 || out.size() < 2) && fallback_x) {
            if (fallback_d.size() == 0) fallback_d = model.distances(*fallback_x);
            std::vector<double> fin, fout;
            for (Eigen::Index i = 0; i < fallback_d.rows(); ++i)
                (fallback_labels[static_cast<std::size_t>(i)] == c ? fin : fout).push_back(fallback_d(i, c));
            if (in.size() < 2) in = std::move(fin);
            if (out.size() < 2) out = std::move(fout);
            borrowed = true;
        }
        if (in.empty() || out.empty()) throw Error("fit_projection_stats: class " + std::to_string(c) + " has no samples");
        ProjectionStats s;
        detail::mean_std(in, s.in_mean, s.in_std);
        detail::mean_std(out, s.out_mean, s.out_std);
        if (in.size() < 2) {
            s.in_std = s.out_std;
            borrowed = true;
        }
        s.in_std = std::max(s.in_std, detail::kMinProjectionStd);
        s.out_std = std::max(s.out_std, detail::kMinProjectionStd);
        s.borrowed = borrowed;
        model[c].stats = s;
    }
}

/// Fits class means and the regularized covariance(s) without projection statistics.
/// Classes absent from the sample take their mean (and per-class covariance) from `fallback`.
inline LdaModel fit_lda_geometry(const Eigen::MatrixXd& x, std::span<const int> labels, int n_classes,
                                 const LdaOptions& opt, const LdaModel* fallback = nullptr) {
    if (static_cast<std::size_t>(x.rows()) != labels.size()) throw Error("fit_lda: label count mismatch");
    const auto d = x.cols();
    std::vector<Eigen::VectorXd> sums(static_cast<std::size_t>(n_classes), Eigen::VectorXd::Zero(d));
    std::vector<std::size_t> counts(static_cast<std::size_t>(n_classes), 0);
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        const int c = labels[static_cast<std::size_t>(i)];
        if (c < 0 || c >= n_classes) throw Error("fit_lda: label out of range");
        sums[static_cast<std::size_t>(c)] += x.row(i).transpose();
        ++counts[static_cast<std::size_t>(c)];
    }
    std::vector<LdaClassModel> classes(static_cast<std::size_t>(n_classes));
    for (int c = 0; c < n_classes; ++c) {
        auto& cm = classes[static_cast<std::size_t>(c)];
        if (counts[static_cast<std::size_t>(c)] > 0) {
            cm.mean = sums[static_cast<std::size_t>(c)] / static_cast<double>(counts[static_cast<std::size_t>(c)]);
        } else if (fallback) {
            cm.mean = (*fallback)[c].mean;
            cm.mean_borrowed = true;
        } else {
            throw Error("fit_lda: class " + std::to_string(c) + " has no training samples");
        }
    }
    Eigen::MatrixXd centred(x.rows(), d);
    for (Eigen::Index i = 0; i < x.rows(); ++i)
        centred.row(i) = x.row(i) - classes[static_cast<std::size_t>(labels[static_cast<std::size_t>(i)])].mean.transpose();

    std::vector<Eigen::MatrixXd> covs;
    if (opt.mode == CovarianceMode::pooled) {
        std::size_t present = 0;
        for (auto n : counts) present += n > 0 ? 1 : 0;
        const auto n = static_cast<std::size_t>(x.rows());
        const double denom = n > present ? static_cast<double>(n - present) : static_cast<double>(std::max<std::size_t>(n, 1));
        Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(d, d);
        cov.selfadjointView<Eigen::Lower>().rankUpdate(centred.transpose());
        cov = cov.selfadjointView<Eigen::Lower>();
        covs.push_back(detail::regularize(cov / denom, opt.shrinkage));
    } else {
        for (int c = 0; c < n_classes; ++c) {
            const auto nc = counts[static_cast<std::size_t>(c)];
            if (nc < 2 && fallback) {
                covs.push_back(fallback->covariance(c));
                continue;
            }
            Eigen::MatrixXd rows(static_cast<Eigen::Index>(nc), d);
            Eigen::Index k = 0;
            for (Eigen::Index i = 0; i < x.rows(); ++i)
                if (labels[static_cast<std::size_t>(i)] == c) rows.row(k++) = centred.row(i);
            Eigen::MatrixXd cov = nc > 1 ? Eigen::MatrixXd(rows.transpose() * rows / static_cast<double>(nc - 1))
                                         : Eigen::MatrixXd::Zero(d, d);
            covs.push_back(detail::regularize(cov, opt.shrinkage));
        }
    }
    return LdaModel::assemble(opt.mode, std::move(classes), std::move(covs));
}

/// Complete LDA fit: geometry plus projection statistics on the same samples.
inline LdaModel fit_lda(const Eigen::MatrixXd& x, std::span<const int> labels, int n_classes, const LdaOptions& opt = {}) {
    auto model = fit_lda_geometry(x, labels, n_classes, opt);
    fit_projection_stats(model, x, labels);
    return model;
}

} // namespace lipread
