#pragma once

#include "tlrda/hyper.hpp"
#include "tlrda/sample.hpp"

#include <cmath>
#include <cstdint>
#include <optional>
#include <vector>

// Synthetic data: correlated classification weights across populations,
// structured covariances, Gaussian mixture samples, and target test sets.
// All draws run on counter-derived substreams of the config seed, so
// populations can be generated in any order with identical output.

namespace tlrda {

enum class CovType { identity, ar1_toeplitz, custom_eigs };

struct CovKind {
    CovType type = CovType::identity;
    double t = 0.5;  // AR(1) coefficient
    VectorXd eigs;   // custom spectrum (diagonal covariance)
};

struct SimConfig {
    int p = 0;
    std::vector<int> n;
    std::vector<double> alpha_sq;
    MatrixXd rho;
    CovKind cov_kind;
    std::optional<std::vector<CovKind>> heterogeneous_cov;
    std::vector<double> class_balance; // P(label = +1) per population
    bool stratified = false;
    double mu_bar_scale = 0.0;
    int n_test = 2000;
    std::uint64_t seed = 1;

    int populations() const { return static_cast<int>(n.size()); }

    const CovKind& kind_of(int k) const {
        return heterogeneous_cov ? (*heterogeneous_cov)[static_cast<std::size_t>(k)] : cov_kind;
    }

    void validate() const {
        const int K = populations();
        if (p <= 0 || K == 0 || n_test < 0)
            throw contract_error("SimConfig: p and n must be positive, n_test nonnegative");
        for (int nk : n)
            if (nk < 3) throw contract_error("SimConfig: every n_k must be at least 3");
        if (static_cast<int>(alpha_sq.size()) != K ||
            static_cast<int>(class_balance.size()) != K || rho.rows() != K || rho.cols() != K)
            throw contract_error("SimConfig: per-population field lengths must match");
        for (double pi : class_balance)
            if (!(pi > 0.0 && pi < 1.0))
                throw contract_error("SimConfig: class balance must lie strictly in (0, 1)");
        if (mu_bar_scale < 0.0) throw contract_error("SimConfig: mu_bar_scale must be nonnegative");
        // Assumption-1 style cap: the shared mean must stay o(p^{1/2})
        if (mu_bar_scale > std::pow(static_cast<double>(p), 0.45))
            throw contract_error("SimConfig: mu_bar_scale exceeds the p^{0.45} growth cap");
        if (heterogeneous_cov && static_cast<int>(heterogeneous_cov->size()) != K)
            throw contract_error("SimConfig: heterogeneous_cov must list one kind per population");
        for (int k = 0; k < K; ++k) {
            const CovKind& ck = kind_of(k);
            if (ck.type == CovType::ar1_toeplitz && !(std::abs(ck.t) < 1.0))
                throw contract_error("SimConfig: AR(1) coefficient must satisfy |t| < 1");
            if (ck.type == CovType::custom_eigs) {
                if (ck.eigs.size() != p)
                    throw contract_error("SimConfig: custom spectrum must have length p");
                if (ck.eigs.minCoeff() <= 0.0)
                    throw contract_error("SimConfig: custom spectrum must be positive");
            }
        }
        HyperParams h;
        h.alpha_sq = alpha_sq;
        h.rho = rho;
        h.provenance = Provenance::user_supplied;
        h.validate(); // unit diagonal, bounds, PSD signal matrix
    }
};

inline MatrixXd covariance_of(const CovKind& kind, int p) {
    switch (kind.type) {
    case CovType::identity: return MatrixXd::Identity(p, p);
    case CovType::ar1_toeplitz: {
        MatrixXd s(p, p);
        for (int i = 0; i < p; ++i)
            for (int j = 0; j < p; ++j) s(i, j) = std::pow(kind.t, std::abs(i - j));
        return s;
    }
    case CovType::custom_eigs: return kind.eigs.asDiagonal();
    }
    return MatrixXd::Identity(p, p);
}

// factor F with F F' = Sigma; identity is signalled by an empty matrix
inline MatrixXd covariance_sqrt(const CovKind& kind, int p) {
    switch (kind.type) {
    case CovType::identity: return MatrixXd();
    case CovType::ar1_toeplitz: {
        Eigen::LLT<MatrixXd> llt(covariance_of(kind, p));
        if (llt.info() != Eigen::Success)
            throw numerical_error("covariance_sqrt: AR(1) factorization failed");
        return llt.matrixL();
    }
    case CovType::custom_eigs: return kind.eigs.cwiseSqrt().asDiagonal();
    }
    return MatrixXd();
}

namespace detail {

// substream purposes
constexpr std::uint64_t kStreamDeltas = 1;
constexpr std::uint64_t kStreamSample = 2;
constexpr std::uint64_t kStreamTest = 3;
constexpr std::uint64_t kStreamMuBar = 4;

inline std::vector<int> draw_labels(GaussianRng& rng, int n, double pi_plus, bool stratified) {
    std::vector<int> labels(static_cast<std::size_t>(n));
    if (!stratified) {
        for (auto& l : labels) l = rng.uniform() <= pi_plus ? 1 : -1;
        return labels;
    }
    int n_plus = static_cast<int>(std::lround(pi_plus * n));
    n_plus = std::max(1, std::min(n - 1, n_plus));
    for (int i = 0; i < n; ++i) labels[static_cast<std::size_t>(i)] = i < n_plus ? 1 : -1;
    for (int i = n - 1; i > 0; --i) { // Fisher-Yates on the label slots
        int j = std::min(i, static_cast<int>(rng.uniform() * (i + 1)));
        std::swap(labels[static_cast<std::size_t>(i)], labels[static_cast<std::size_t>(j)]);
    }
    return labels;
}

// f is a factor with f f' = Sigma; empty means identity
inline PopulationSample draw_rows_factor(GaussianRng& rng, int n, int p, double pi_plus,
                                         bool stratified, const VectorXd& mu_bar,
                                         const VectorXd& delta, const MatrixXd& f,
                                         int population_id) {
    PopulationSample out;
    out.population_id = population_id;
    out.labels = draw_labels(rng, n, pi_plus, stratified);
    MatrixXd z = rng.normal_matrix(n, p);
    if (f.size())
        out.features = z * f.transpose();
    else
        out.features = std::move(z);
    for (int i = 0; i < n; ++i) {
        double y = static_cast<double>(out.labels[static_cast<std::size_t>(i)]);
        out.features.row(i) += (mu_bar + y * delta).transpose();
    }
    return out;
}

inline PopulationSample draw_rows(GaussianRng& rng, int n, int p, double pi_plus, bool stratified,
                                  const VectorXd& mu_bar, const VectorXd& delta,
                                  const CovKind& kind, int population_id) {
    return draw_rows_factor(rng, n, p, pi_plus, stratified, mu_bar, delta,
                            covariance_sqrt(kind, p), population_id);
}

} // namespace detail

// delta_1..delta_K stacked coordinatewise as iid K-variate normals with
// cross-covariance [rho alpha alpha'] / p. Eigen-factor rather than Cholesky
// so rank-deficient signal matrices (rho = 1) are exact.
inline std::vector<VectorXd> draw_deltas(const SimConfig& cfg) {
    cfg.validate();
    const int K = cfg.populations();
    HyperParams h;
    h.alpha_sq = cfg.alpha_sq;
    h.rho = cfg.rho;
    h.provenance = Provenance::user_supplied;
    MatrixXd signal = h.signal_matrix();
    SymEig e = sym_eig(signal, true);
    MatrixXd f = e.vectors;
    double top = std::max(e.values[K - 1], 0.0);
    for (int j = 0; j < K; ++j) {
        // clip numerically-zero eigenvalues so rank-deficient signals are exact
        double v = e.values[j] < 1e-12 * top ? 0.0 : e.values[j];
        f.col(j) *= std::sqrt(v / static_cast<double>(cfg.p));
    }

    GaussianRng rng(derive_stream(cfg.seed, 0, 0, detail::kStreamDeltas));
    MatrixXd d = rng.normal_matrix(cfg.p, K) * f.transpose();
    std::vector<VectorXd> out;
    out.reserve(static_cast<std::size_t>(K));
    for (int k = 0; k < K; ++k) out.push_back(d.col(k));
    return out;
}

// Deterministic per-(seed, k) shared mean; the same vector is reused by the
// training draw and the target test draw.
inline VectorXd mu_bar_of(const SimConfig& cfg, int k) {
    if (cfg.mu_bar_scale == 0.0) return VectorXd::Zero(cfg.p);
    GaussianRng rng(derive_stream(cfg.seed, static_cast<std::uint64_t>(k) + 1, 0,
                                  detail::kStreamMuBar));
    return rng.normal_vector(cfg.p) * (cfg.mu_bar_scale / std::sqrt(static_cast<double>(cfg.p)));
}

inline PopulationSample draw_population(const SimConfig& cfg, int k,
                                        const std::vector<VectorXd>& deltas) {
    cfg.validate();
    const int K = cfg.populations();
    if (k < 0 || k >= K) throw contract_error("draw_population: population index out of range");
    if (static_cast<int>(deltas.size()) != K ||
        deltas[static_cast<std::size_t>(k)].size() != cfg.p)
        throw contract_error("draw_population: deltas do not match the config");
    GaussianRng rng(derive_stream(cfg.seed, static_cast<std::uint64_t>(k) + 1, 0,
                                  detail::kStreamSample));
    auto s = detail::draw_rows(rng, cfg.n[static_cast<std::size_t>(k)], cfg.p,
                               cfg.class_balance[static_cast<std::size_t>(k)], cfg.stratified,
                               mu_bar_of(cfg, k), deltas[static_cast<std::size_t>(k)],
                               cfg.kind_of(k), k);
    s.validate();
    return s;
}

// Held-out test set for the target population K.
inline PopulationSample draw_test(const SimConfig& cfg, const std::vector<VectorXd>& deltas) {
    cfg.validate();
    if (cfg.n_test == 0) throw contract_error("draw_test: config has no test set (n_test = 0)");
    const int K = cfg.populations();
    if (static_cast<int>(deltas.size()) != K)
        throw contract_error("draw_test: deltas do not match the config");
    GaussianRng rng(derive_stream(cfg.seed, static_cast<std::uint64_t>(K), 0,
                                  detail::kStreamTest));
    auto s = detail::draw_rows(rng, cfg.n_test, cfg.p,
                               cfg.class_balance[static_cast<std::size_t>(K - 1)],
                               cfg.stratified, mu_bar_of(cfg, K - 1),
                               deltas[static_cast<std::size_t>(K - 1)], cfg.kind_of(K - 1),
                               K - 1);
    s.validate();
    return s;
}

} // namespace tlrda
