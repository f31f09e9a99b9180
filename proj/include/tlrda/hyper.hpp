#pragma once

#include "tlrda/sample.hpp"

#include <vector>

// Random-effect hyperparameters: per-population signal strengths alpha_k^2
// and the cross-population correlation matrix rho.

namespace tlrda {

enum class Provenance { estimated, user_supplied };

struct HyperParams {
    std::vector<double> alpha_sq;
    MatrixXd rho; // K x K, symmetric, unit diagonal
    Provenance provenance = Provenance::estimated;

    int populations() const { return static_cast<int>(alpha_sq.size()); }

    // [rho_kk' alpha_k alpha_k'], the limiting Gram matrix of the deltas
    MatrixXd signal_matrix() const {
        const int K = populations();
        MatrixXd s(K, K);
        for (int i = 0; i < K; ++i)
            for (int j = 0; j < K; ++j)
                s(i, j) = rho(i, j) * std::sqrt(alpha_sq[static_cast<std::size_t>(i)] *
                                                alpha_sq[static_cast<std::size_t>(j)]);
        return s;
    }

    void validate() const {
        const int K = populations();
        if (K == 0 || rho.rows() != K || rho.cols() != K)
            throw contract_error("HyperParams: rho must be K x K");
        for (double a : alpha_sq)
            if (!(a >= 0.0))
                throw contract_error("HyperParams: alpha_sq must be non-negative");
        for (int i = 0; i < K; ++i) {
            if (std::abs(rho(i, i) - 1.0) > 1e-12)
                throw contract_error("HyperParams: rho diagonal must be 1");
            for (int j = 0; j < K; ++j) {
                if (std::abs(rho(i, j) - rho(j, i)) > 1e-12)
                    throw contract_error("HyperParams: rho must be symmetric");
                if (std::abs(rho(i, j)) > 1.0 + 1e-12)
                    throw contract_error("HyperParams: correlations must lie in [-1, 1]");
            }
        }
        SymEig e = sym_eig(signal_matrix(), false);
        double scale = std::max(1.0, e.values.cwiseAbs().maxCoeff());
        if (e.values[0] < -1e-8 * scale)
            throw contract_error("HyperParams: signal matrix is not PSD; run project_psd");
    }
};

// Exact variance of delta_hat under imbalance, p (1/(4 n_+) + 1/(4 n_-));
// reduces to gamma_k = p/n_k when balanced.
inline double gamma_effective(const PopulationMoments& m) {
    double p = static_cast<double>(m.delta_hat.size());
    return p * (0.25 / m.n_plus + 0.25 / m.n_minus);
}

// ||delta_hat||^2 estimates alpha^2 + gamma_effective; debias and clamp.
inline double estimate_alpha_sq(const PopulationMoments& m) {
    if (m.n_plus <= 0 || m.n_minus <= 0)
        throw contract_error("estimate_alpha_sq: moments missing class counts");
    return std::max(0.0, m.delta_hat.squaredNorm() - gamma_effective(m));
}

// clip(delta_k' delta_k' / sqrt(alpha_k^2 alpha_k'^2), -1, 1). The cross
// moment is left un-debiased: the two noise vectors are independent, so it
// is already centered on rho alpha_k alpha_k'.
inline double estimate_rho(const PopulationMoments& mk, const PopulationMoments& mk2,
                           double alpha_sq_k, double alpha_sq_k2) {
    if (mk.delta_hat.size() != mk2.delta_hat.size())
        throw contract_error("estimate_rho: dimension mismatch");
    if (!(alpha_sq_k > 0.0) || !(alpha_sq_k2 > 0.0))
        throw data_error("estimate_rho: undefined correlation, a signal strength estimate is zero");
    double r = mk.delta_hat.dot(mk2.delta_hat) / std::sqrt(alpha_sq_k * alpha_sq_k2);
    return std::clamp(r, -1.0, 1.0);
}

inline HyperParams estimate_hyper(const std::vector<PopulationMoments>& moments) {
    const int K = static_cast<int>(moments.size());
    if (K == 0)
        throw contract_error("estimate_hyper: need at least one population");
    HyperParams h;
    h.provenance = Provenance::estimated;
    h.alpha_sq.reserve(static_cast<std::size_t>(K));
    for (const auto& m : moments)
        h.alpha_sq.push_back(estimate_alpha_sq(m));
    h.rho = MatrixXd::Identity(K, K);
    for (int i = 0; i < K; ++i)
        for (int j = i + 1; j < K; ++j) {
            double r = estimate_rho(moments[static_cast<std::size_t>(i)],
                                    moments[static_cast<std::size_t>(j)],
                                    h.alpha_sq[static_cast<std::size_t>(i)],
                                    h.alpha_sq[static_cast<std::size_t>(j)]);
            h.rho(i, j) = h.rho(j, i) = r;
        }
    return h;
}

// Eigenvalue-clip the signal matrix [rho alpha alpha'] to PSD and read the
// correlations back off its unit-diagonal rescaling; alpha is unchanged.
// Off-diagonals stay in [-1, 1] by Cauchy-Schwarz, and the map is
// idempotent because the rebuilt signal matrix is a congruence of the
// clipped one.
inline HyperParams project_psd(const HyperParams& hyper) {
    const int K = hyper.populations();
    if (hyper.rho.rows() != K || hyper.rho.cols() != K)
        throw contract_error("project_psd: rho must be K x K");
    if ((hyper.rho - hyper.rho.transpose()).cwiseAbs().maxCoeff() > 1e-10)
        throw contract_error("project_psd: rho must be symmetric");

    MatrixXd s = hyper.signal_matrix();
    SymEig e = sym_eig(s, true);
    VectorXd clipped = e.values.cwiseMax(0.0);
    MatrixXd sp = e.vectors * clipped.asDiagonal() * e.vectors.transpose();

    HyperParams out = hyper;
    out.rho = MatrixXd::Identity(K, K);
    for (int i = 0; i < K; ++i) {
        for (int j = i + 1; j < K; ++j) {
            double denom = std::sqrt(sp(i, i) * sp(j, j));
            double r = denom > 0.0 ? sp(i, j) / denom : 0.0;
            out.rho(i, j) = out.rho(j, i) = std::clamp(r, -1.0, 1.0);
        }
    }
    return out;
}

} // namespace tlrda
