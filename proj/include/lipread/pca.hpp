#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <vector>

#include <Eigen/Dense>

#include "lipread/error.hpp"

namespace lipread {

/// Principal components of a sample set, stored up to the retained count.
struct PcaModel {
    Eigen::VectorXd mean;
    Eigen::MatrixXd basis;        // dim x n_retained, orthonormal columns
    Eigen::VectorXd eigenvalues;  // all non-negative variances, non-increasing
    int n_retained = 0;
    bool degenerate = false;      // zero total variance

    Eigen::VectorXd project(const Eigen::VectorXd& x) const { return basis.transpose() * (x - mean); }
    Eigen::VectorXd reconstruct(const Eigen::VectorXd& coords) const {
        return mean + basis.leftCols(coords.size()) * coords;
    }
};

namespace detail {

/// Eigen-pairs of XᵀX/(n-1) for a centred n x d matrix, descending. Uses the n x n Gram
/// matrix when that is smaller. Near-zero eigenvalues are clipped to 0 and dropped from the
/// returned vectors.
struct EigenPairs {
    Eigen::VectorXd values;  // all, descending, clipped at 0
    Eigen::MatrixXd vectors; // d x rank
};

inline void fix_signs(Eigen::MatrixXd& v) {
    for (Eigen::Index j = 0; j < v.cols(); ++j) {
        Eigen::Index arg = 0;
        v.col(j).cwiseAbs().maxCoeff(&arg);
        if (v(arg, j) < 0) v.col(j) = -v.col(j);
    }
}

inline EigenPairs covariance_eigen(const Eigen::MatrixXd& centred, bool want_vectors) {
    const auto n = centred.rows();
    const auto d = centred.cols();
    const double denom = static_cast<double>(std::max<Eigen::Index>(n - 1, 1));
    const bool gram = n < d;
    Eigen::MatrixXd m = gram ? Eigen::MatrixXd(centred * centred.transpose() / denom)
                             : Eigen::MatrixXd(centred.transpose() * centred / denom);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(
        m, want_vectors ? Eigen::ComputeEigenvectors : Eigen::EigenvaluesOnly);
    if (es.info() != Eigen::Success) throw Error("eigendecomposition failed");
    const auto k = es.eigenvalues().size();
    EigenPairs out;
    out.values.resize(k);
    for (Eigen::Index i = 0; i < k; ++i) out.values[i] = es.eigenvalues()[k - 1 - i];
    const double top = std::max(out.values.size() ? out.values[0] : 0.0, 0.0);
    const double tol = top * 1e-12 * static_cast<double>(std::max(n, d));
    Eigen::Index rank = 0;
    for (Eigen::Index i = 0; i < k; ++i) {
        if (out.values[i] <= tol) out.values[i] = 0.0;
        else ++rank;
    }
    if (!want_vectors) return out;
    out.vectors.resize(d, rank);
    for (Eigen::Index i = 0; i < rank; ++i) {
        Eigen::VectorXd u = es.eigenvectors().col(k - 1 - i);
        if (gram) {
            Eigen::VectorXd v = centred.transpose() * u;
            out.vectors.col(i) = v / v.norm();
        } else {
            out.vectors.col(i) = u;
        }
    }
    fix_signs(out.vectors);
    return out;
}

} // namespace detail

/// Fits PCA on the rows of `samples`, keeping the smallest k whose leading eigenvalues explain
/// at least `variance` of the total.
inline PcaModel pca_fit(const Eigen::MatrixXd& samples, double variance) {
    if (samples.rows() < 2) throw Error("pca_fit: need at least 2 samples");
    if (!(variance > 0.0 && variance <= 1.0)) throw Error("pca_fit: variance fraction must lie in (0,1]");
    PcaModel model;
    model.mean = samples.colwise().mean().transpose();
    const Eigen::MatrixXd centred = samples.rowwise() - model.mean.transpose();
    auto pairs = detail::covariance_eigen(centred, true);
    model.eigenvalues = pairs.values;
    const double total = pairs.values.sum();
    if (!(total > 0.0) || pairs.vectors.cols() == 0) {
        model.degenerate = true;
        model.n_retained = 1;
        model.basis = Eigen::MatrixXd::Zero(samples.cols(), 1);
        model.basis(0, 0) = 1.0;
        if (model.eigenvalues.size() == 0) model.eigenvalues = Eigen::VectorXd::Zero(1);
        return model;
    }
    const double goal = variance * total * (1.0 - 1e-12);
    double cum = 0.0;
    int k = 0;
    while (k < pairs.vectors.cols()) {
        cum += pairs.values[k++];
        if (cum >= goal) break;
    }
    model.n_retained = k;
    model.basis = pairs.vectors.leftCols(k);
    return model;
}

/// PCA keeping exactly k components (clipped to the data rank).
inline PcaModel pca_fit_components(const Eigen::MatrixXd& samples, int k) {
    if (samples.rows() < 2) throw Error("pca_fit: need at least 2 samples");
    PcaModel model;
    model.mean = samples.colwise().mean().transpose();
    const Eigen::MatrixXd centred = samples.rowwise() - model.mean.transpose();
    auto pairs = detail::covariance_eigen(centred, true);
    model.eigenvalues = pairs.values;
    if (pairs.vectors.cols() == 0) {
        model.degenerate = true;
        model.n_retained = 1;
        model.basis = Eigen::MatrixXd::Zero(samples.cols(), 1);
        model.basis(0, 0) = 1.0;
        return model;
    }
    k = std::clamp<int>(k, 1, static_cast<int>(pairs.vectors.cols()));
    model.basis = pairs.vectors.leftCols(k);
    model.n_retained = k;
    return model;
}

namespace detail {

inline Eigen::MatrixXd standardize_columns(const Eigen::MatrixXd& x) {
    Eigen::MatrixXd z = x.rowwise() - x.colwise().mean();
    const double denom = static_cast<double>(std::max<Eigen::Index>(x.rows() - 1, 1));
    for (Eigen::Index j = 0; j < z.cols(); ++j) {
        double sd = std::sqrt(z.col(j).squaredNorm() / denom);
        if (sd > 0.0) z.col(j) /= sd;
        else z.col(j).setZero();
    }
    return z;
}

} // namespace detail

/// Horn's Parallel Analysis on the correlation matrix: counts the leading eigenvalues that exceed
/// the `percentile` quantile of the same-rank eigenvalue over `n_perm` column-permuted copies.
inline int parallel_analysis(const Eigen::MatrixXd& samples, int n_perm, double percentile, std::uint64_t seed = 0) {
    if (n_perm < 1) throw Error("parallel_analysis: need at least one permutation");
    if (!(percentile > 0.0 && percentile < 1.0)) throw Error("parallel_analysis: percentile must lie in (0,1)");
    if (samples.rows() < 2) throw Error("parallel_analysis: need at least 2 samples");
    const Eigen::MatrixXd z = detail::standardize_columns(samples);
    const Eigen::VectorXd observed = detail::covariance_eigen(z, false).values;
    const auto k = observed.size();

    std::mt19937_64 rng(seed);
    Eigen::MatrixXd perm_values(n_perm, k);
    Eigen::MatrixXd shuffled = z;
    std::vector<Eigen::Index> idx(static_cast<std::size_t>(z.rows()));
    for (int p = 0; p < n_perm; ++p) {
        for (Eigen::Index j = 0; j < z.cols(); ++j) {
            std::iota(idx.begin(), idx.end(), Eigen::Index{0});
            std::shuffle(idx.begin(), idx.end(), rng);
            for (Eigen::Index i = 0; i < z.rows(); ++i) shuffled(i, j) = z(idx[static_cast<std::size_t>(i)], j);
        }
        perm_values.row(p) = detail::covariance_eigen(shuffled, false).values.transpose();
    }

    const auto q_index = static_cast<std::size_t>(
        std::clamp<double>(std::ceil(percentile * n_perm) - 1.0, 0.0, static_cast<double>(n_perm - 1)));
    int count = 0;
    std::vector<double> column(static_cast<std::size_t>(n_perm));
    for (Eigen::Index i = 0; i < k; ++i) {
        for (int p = 0; p < n_perm; ++p) column[static_cast<std::size_t>(p)] = perm_values(p, i);
        std::nth_element(column.begin(), column.begin() + static_cast<std::ptrdiff_t>(q_index), column.end());
        if (observed[i] > column[q_index]) ++count;
        else break;
    }
    return count;
}

} // namespace lipread
