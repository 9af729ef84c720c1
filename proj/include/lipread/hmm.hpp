#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "lipread/error.hpp"
#include "lipread/hashing.hpp"
#include "lipread/vocabulary.hpp"

namespace lipread {

/// One state per class: transition matrix A (N x N), emissions B (N x M), initial vector pi.
struct HmmModel {
    std::vector<std::string> states;
    std::vector<std::string> observations;
    Eigen::MatrixXd A;
    Eigen::MatrixXd B;
    Eigen::VectorXd pi;

    int n_states() const { return static_cast<int>(A.rows()); }
    int n_observations() const { return static_cast<int>(B.cols()); }

    void validate() const {
        const auto N = A.rows();
        if (A.cols() != N || B.rows() != N || pi.size() != N || N == 0) throw DataError("HMM: inconsistent dimensions");
        if (static_cast<Eigen::Index>(states.size()) != N || static_cast<Eigen::Index>(observations.size()) != B.cols())
            throw DataError("HMM: label count does not match dimensions");
        auto check_rows = [](const Eigen::MatrixXd& m, const char* what) {
            if ((m.array() < 0.0).any() || !m.allFinite()) throw DataError(std::string("HMM: negative entry in ") + what);
            for (Eigen::Index r = 0; r < m.rows(); ++r)
                if (std::abs(m.row(r).sum() - 1.0) > 1e-9)
                    throw DataError(std::string("HMM: row ") + std::to_string(r) + " of " + what + " does not sum to 1");
        };
        check_rows(A, "A");
        check_rows(B, "B");
        check_rows(pi.transpose(), "pi");
    }
};

struct DecodedPath {
    std::vector<int> states;
    double log_prob = 0.0;
    bool impossible = false;
    std::vector<int> observations; // symbol chosen per step (soft decoding only)
};

/// Floor applied to positive probabilities before taking logs; exact zeros map to -inf.
inline constexpr double kProbFloor = 1e-300;

/// Log scores this close (relative to their magnitude) count as ties, so paths that tie in exact
/// arithmetic still resolve to the lowest index after rounding.
inline constexpr double kTieTolerance = 1e-12;

inline bool log_greater(double v, double best) {
    if (!std::isfinite(best)) return v > best;
    return v > best + kTieTolerance * std::max(1.0, std::abs(best));
}

inline double safe_log(double p) {
    return p > 0.0 ? std::log(std::max(p, kProbFloor)) : -std::numeric_limits<double>::infinity();
}

inline Eigen::MatrixXd log_matrix(const Eigen::MatrixXd& m) { return m.unaryExpr([](double p) { return safe_log(p); }); }

struct HmmFitOptions {
    /// Additive count smoothing; when unset each matrix uses `relative_smoothing` times its total count.
    std::optional<double> smoothing;
    double relative_smoothing = 1e-6;
};

namespace detail {

inline void normalize_counts(Eigen::MatrixXd& counts, const HmmFitOptions& opt) {
    const double eps = opt.smoothing ? *opt.smoothing : opt.relative_smoothing * counts.sum();
    counts.array() += eps;
    for (Eigen::Index r = 0; r < counts.rows(); ++r) {
        const double s = counts.row(r).sum();
        if (s > 0.0) counts.row(r) /= s;
        else counts.row(r).setConstant(1.0 / static_cast<double>(counts.cols()));
    }
}

} // namespace detail

/// Count-based estimation: A from frame bigrams and pi from first frames of the ground-truth
/// sequences; B from (true state, observed symbol) co-occurrences. Counts are smoothed then
/// row-normalized; rows with no mass become uniform.
inline HmmModel hmm_fit(std::span<const std::vector<int>> truth, std::span<const std::vector<int>> observed, int n_states,
                        int n_observations, const HmmFitOptions& opt = {}) {
    if (truth.empty()) throw Error("hmm_fit: no sequences");
    if (observed.size() != truth.size()) throw Error("hmm_fit: truth/observation sequence count mismatch");
    Eigen::MatrixXd a = Eigen::MatrixXd::Zero(n_states, n_states);
    Eigen::MatrixXd b = Eigen::MatrixXd::Zero(n_states, n_observations);
    Eigen::MatrixXd p = Eigen::MatrixXd::Zero(1, n_states);
    for (std::size_t s = 0; s < truth.size(); ++s) {
        const auto& q = truth[s];
        const auto& o = observed[s];
        if (q.size() != o.size()) throw Error("hmm_fit: sequence " + std::to_string(s) + " has mismatched lengths");
        for (std::size_t t = 0; t < q.size(); ++t) {
            if (q[t] < 0 || q[t] >= n_states || o[t] < 0 || o[t] >= n_observations)
                throw Error("hmm_fit: label out of range");
            if (t == 0) p(0, q[t]) += 1.0;
            else a(q[t - 1], q[t]) += 1.0;
            b(q[t], o[t]) += 1.0;
        }
    }
    detail::normalize_counts(a, opt);
    detail::normalize_counts(b, opt);
    detail::normalize_counts(p, opt);
    HmmModel m;
    for (int i = 0; i < n_states; ++i) m.states.push_back(std::to_string(i));
    for (int i = 0; i < n_observations; ++i) m.observations.push_back(std::to_string(i));
    m.A = std::move(a);
    m.B = std::move(b);
    m.pi = p.row(0).transpose();
    return m;
}

namespace detail {

/// Shared max-product recursion. `emit(t, j)` returns the log emission score of state j at t.
template <class Emit>
DecodedPath viterbi_core(const HmmModel& model, std::size_t T, Emit&& emit) {
    DecodedPath out;
    if (T == 0) return out;
    const int N = model.n_states();
    const Eigen::MatrixXd logA = log_matrix(model.A);
    const double ninf = -std::numeric_limits<double>::infinity();
    std::vector<double> delta(static_cast<std::size_t>(N)), next(static_cast<std::size_t>(N));
    std::vector<int> back(T * static_cast<std::size_t>(N), 0);
    for (int j = 0; j < N; ++j) delta[static_cast<std::size_t>(j)] = safe_log(model.pi[j]) + emit(0, j);
    for (std::size_t t = 1; t < T; ++t) {
        for (int j = 0; j < N; ++j) {
            double best = ninf;
            int arg = 0;
            for (int i = 0; i < N; ++i) {
                const double v = delta[static_cast<std::size_t>(i)] + logA(i, j);
                if (log_greater(v, best)) {
                    best = v;
                    arg = i;
                }
            }
            next[static_cast<std::size_t>(j)] = best + emit(t, j);
            back[t * static_cast<std::size_t>(N) + static_cast<std::size_t>(j)] = arg;
        }
        std::swap(delta, next);
    }
    int last = 0;
    for (int j = 1; j < N; ++j)
        if (log_greater(delta[static_cast<std::size_t>(j)], delta[static_cast<std::size_t>(last)])) last = j;
    out.log_prob = delta[static_cast<std::size_t>(last)];
    out.impossible = !std::isfinite(out.log_prob);
    out.states.assign(T, 0);
    out.states[T - 1] = last;
    for (std::size_t t = T - 1; t > 0; --t)
        out.states[t - 1] = back[t * static_cast<std::size_t>(N) + static_cast<std::size_t>(out.states[t])];
    return out;
}

} // namespace detail

/// Most probable state path for hard observations (log-space max-product with backpointers).
/// Ties (see kTieTolerance) go to the lower state index.
inline DecodedPath viterbi(const HmmModel& model, std::span<const int> obs) {
    const int M = model.n_observations();
    for (int o : obs)
        if (o < 0 || o >= M) throw Error("viterbi: observation index out of range");
    const Eigen::MatrixXd logB = log_matrix(model.B);
    return detail::viterbi_core(model, obs.size(), [&](std::size_t t, int j) { return logB(j, obs[t]); });
}

/// Indices of the R largest entries of a likelihood row, ties to the lower index.
inline std::vector<int> top_candidates(const Eigen::VectorXd& row, int rank) {
    std::vector<int> idx(static_cast<std::size_t>(row.size()));
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) { return row[a] > row[b]; });
    idx.resize(static_cast<std::size_t>(rank));
    std::sort(idx.begin(), idx.end());
    return idx;
}

/// Likelihood-augmented Viterbi: at each step the observation is chosen jointly with the path
/// among the R symbols of highest classifier likelihood, each emission weighted by b_j(o) * L(o).
inline DecodedPath viterbi_soft(const HmmModel& model, const Eigen::MatrixXd& likelihoods, int rank) {
    const int N = model.n_states();
    const int M = model.n_observations();
    if (likelihoods.cols() != M) throw Error("viterbi_soft: likelihood width does not match the observation count");
    if (rank < 1 || rank > M) throw Error("viterbi_soft: rank must lie in [1, M]");
    const auto T = static_cast<std::size_t>(likelihoods.rows());
    for (std::size_t t = 0; t < T; ++t) {
        const auto row = likelihoods.row(static_cast<Eigen::Index>(t));
        if ((row.array() < 0.0).any() || std::abs(row.sum() - 1.0) > 1e-9)
            throw Error("viterbi_soft: likelihood row " + std::to_string(t) + " is not a distribution");
    }
    const Eigen::MatrixXd logB = log_matrix(model.B);
    Eigen::MatrixXd emit(static_cast<Eigen::Index>(T), N);
    std::vector<int> choice(T * static_cast<std::size_t>(N), 0);
    for (std::size_t t = 0; t < T; ++t) {
        const Eigen::VectorXd row = likelihoods.row(static_cast<Eigen::Index>(t)).transpose();
        const auto cand = top_candidates(row, rank);
        for (int j = 0; j < N; ++j) {
            double best = -std::numeric_limits<double>::infinity();
            int arg = cand.front();
            for (int o : cand) {
                const double v = logB(j, o) + safe_log(row[o]);
                if (log_greater(v, best)) {
                    best = v;
                    arg = o;
                }
            }
            emit(static_cast<Eigen::Index>(t), j) = best;
            choice[t * static_cast<std::size_t>(N) + static_cast<std::size_t>(j)] = arg;
        }
    }
    auto out = detail::viterbi_core(model, T, [&](std::size_t t, int j) { return emit(static_cast<Eigen::Index>(t), j); });
    out.observations.resize(T);
    for (std::size_t t = 0; t < T; ++t)
        out.observations[t] = choice[t * static_cast<std::size_t>(N) + static_cast<std::size_t>(out.states[t])];
    return out;
}

/// Standard Viterbi on the per-step argmax of the likelihood rows (no likelihood weighting).
inline DecodedPath viterbi_baseline(const HmmModel& model, const Eigen::MatrixXd& likelihoods) {
    std::vector<int> obs(static_cast<std::size_t>(likelihoods.rows()));
    for (Eigen::Index t = 0; t < likelihoods.rows(); ++t) {
        Eigen::Index arg = 0;
        for (Eigen::Index m = 1; m < likelihoods.cols(); ++m)
            if (likelihoods(t, m) > likelihoods(t, arg)) arg = m;
        obs[static_cast<std::size_t>(t)] = static_cast<int>(arg);
    }
    auto out = viterbi(model, obs);
    out.observations = std::move(obs);
    return out;
}

/// Phoneme-state HMM emitting viseme symbols: transitions and pi are taken from `transitions`;
/// b_j(v) is 1 when phoneme j belongs to group v, plus `epsilon`, row-normalized.
inline HmmModel constrained_phoneme_hmm(const HmmModel& transitions, const VisemeVocabulary& vocab, double epsilon = 1e-6) {
    const int N = transitions.n_states();
    if (N != static_cast<int>(vocab.phonemes().size()))
        throw Error("constrained_phoneme_hmm: HMM state count does not match the phoneme set");
    HmmModel m;
    m.states = transitions.states;
    m.observations = vocab.group_names();
    m.A = transitions.A;
    m.pi = transitions.pi;
    m.B = Eigen::MatrixXd::Constant(N, vocab.size(), epsilon);
    for (int j = 0; j < N; ++j) m.B(j, vocab.group_of(j)) += 1.0;
    for (int j = 0; j < N; ++j) m.B.row(j) /= m.B.row(j).sum();
    return m;
}

/// Maps a viseme sequence to phonemes with standard Viterbi over phoneme states.
inline std::vector<int> viseme_to_phoneme(const HmmModel& phoneme_hmm, std::span<const int> visemes,
                                          const VisemeVocabulary& vocab) {
    if (phoneme_hmm.n_states() != static_cast<int>(vocab.phonemes().size()) || phoneme_hmm.n_observations() != vocab.size())
        throw Error("viseme_to_phoneme: HMM does not match the vocabulary");
    return viterbi(phoneme_hmm, visemes).states;
}

// ---------------------------------------------------------------------------
// JSON file

inline nlohmann::json hmm_to_json(const HmmModel& m) {
    nlohmann::json doc;
    doc["states"] = m.states;
    doc["observations"] = m.observations;
    doc["pi"] = std::vector<double>(m.pi.data(), m.pi.data() + m.pi.size());
    auto rows = [](const Eigen::MatrixXd& mat, const std::vector<std::string>& labels) {
        auto arr = nlohmann::json::array();
        for (Eigen::Index r = 0; r < mat.rows(); ++r) {
            std::vector<double> row(static_cast<std::size_t>(mat.cols()));
            for (Eigen::Index c = 0; c < mat.cols(); ++c) row[static_cast<std::size_t>(c)] = mat(r, c);
            arr.push_back({{"state", labels[static_cast<std::size_t>(r)]}, {"row", row}});
        }
        return arr;
    };
    doc["A"] = rows(m.A, m.states);
    doc["B"] = rows(m.B, m.states);
    return doc;
}

inline HmmModel hmm_from_json(const nlohmann::json& doc) {
    try {
        HmmModel m;
        m.states = doc.at("states").get<std::vector<std::string>>();
        m.observations = doc.at("observations").get<std::vector<std::string>>();
        const auto N = static_cast<Eigen::Index>(m.states.size());
        const auto M = static_cast<Eigen::Index>(m.observations.size());
        const auto pi = doc.at("pi").get<std::vector<double>>();
        m.pi = Eigen::Map<const Eigen::VectorXd>(pi.data(), static_cast<Eigen::Index>(pi.size()));
        auto read = [&](const nlohmann::json& arr, Eigen::Index cols) {
            Eigen::MatrixXd mat(N, cols);
            if (static_cast<Eigen::Index>(arr.size()) != N) throw DataError("HMM file: wrong row count");
            for (Eigen::Index r = 0; r < N; ++r) {
                const auto& e = arr.at(static_cast<std::size_t>(r));
                if (e.at("state").get<std::string>() != m.states[static_cast<std::size_t>(r)])
                    throw DataError("HMM file: row labels out of order");
                const auto row = e.at("row").get<std::vector<double>>();
                if (static_cast<Eigen::Index>(row.size()) != cols) throw DataError("HMM file: wrong row width");
                for (Eigen::Index c = 0; c < cols; ++c) mat(r, c) = row[static_cast<std::size_t>(c)];
            }
            return mat;
        };
        m.A = read(doc.at("A"), N);
        m.B = read(doc.at("B"), M);
        m.validate();
        return m;
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("HMM file: ") + e.what());
    }
}

inline void save_hmm(const std::filesystem::path& path, const HmmModel& m, const nlohmann::json& provenance = nullptr) {
    auto doc = hmm_to_json(m);
    if (!provenance.is_null()) doc["provenance"] = provenance;
    write_file_text(path, doc.dump(1) + "\n");
}

inline HmmModel load_hmm(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open HMM file " + path.string());
    try {
        return hmm_from_json(nlohmann::json::parse(in));
    } catch (const nlohmann::json::exception& e) {
        throw DataError(path.string() + ": " + e.what());
    }
}

} // namespace lipread
