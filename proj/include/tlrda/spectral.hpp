#pragma once

#include "tlrda/common.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>

// Random-matrix engine: Stieltjes / companion transforms evaluated on the
// negative real axis (z = -lambda), their Marchenko-Pastur closed forms,
// the deterministic-equivalent fixed point for a general population
// spectrum, and the cross-population resolvent trace limits.

namespace tlrda {

// Eigenvalue list of a (sample or population) covariance matrix together
// with the aspect ratio p/n it was formed at. aspect_gamma == 0 marks a
// population matrix.
struct EigenSpectrum {
    VectorXd eigenvalues; // sorted non-increasing
    int dim_p = 0;
    double aspect_gamma = 0.0;

    void validate() const {
        if (dim_p <= 0 || eigenvalues.size() != dim_p)
            throw contract_error("EigenSpectrum: dim_p must match eigenvalue count");
        if (aspect_gamma < 0.0)
            throw contract_error("EigenSpectrum: aspect_gamma must be >= 0");
        for (int i = 0; i < dim_p; ++i) {
            if (eigenvalues[i] < 0.0)
                throw contract_error("EigenSpectrum: eigenvalues must be non-negative");
            if (i > 0 && eigenvalues[i] > eigenvalues[i - 1] + 1e-12)
                throw contract_error("EigenSpectrum: eigenvalues must be sorted non-increasing");
        }
    }
};

// Build a spectrum from a symmetric PSD matrix. Small negative eigenvalues
// from roundoff are clipped to zero.
inline EigenSpectrum spectrum_of(const MatrixXd& mat, double aspect_gamma) {
    SymEig eig = sym_eig(mat, false);
    EigenSpectrum s;
    s.dim_p = static_cast<int>(mat.rows());
    s.aspect_gamma = aspect_gamma;
    s.eigenvalues = eig.values.reverse();
    for (int i = 0; i < s.dim_p; ++i) {
        if (s.eigenvalues[i] < 0.0) {
            if (s.eigenvalues[i] < -1e-8 * std::max(1.0, std::abs(s.eigenvalues[0])))
                throw numerical_error("spectrum_of: matrix has a significantly negative eigenvalue");
            s.eigenvalues[i] = 0.0;
        }
    }
    return s;
}

// m, m' are the Stieltjes transform of the spectrum and its derivative at
// z = -lambda; v, v' are the companion transforms obtained through
//   gamma [ m(z) + 1/z ] = v(z) + 1/z,   v' = gamma (m' - 1/z^2) + 1/z^2,
// which at z = -lambda read v = gamma m + (1-gamma)/lambda.
struct SpectralSummary {
    double lambda = 0.0;
    double gamma = 0.0;
    double m = 0.0;
    double v = 0.0;
    double m_prime = 0.0;
    double v_prime = 0.0;
};

inline double companion_v(double gamma, double lambda, double m) {
    return gamma * m + (1.0 - gamma) / lambda;
}

inline double companion_v_prime(double gamma, double lambda, double m_prime) {
    double il2 = 1.0 / (lambda * lambda);
    return gamma * (m_prime - il2) + il2;
}

inline void validate_summary(const SpectralSummary& s) {
    if (!(s.lambda > 0.0) || !(s.gamma > 0.0))
        throw contract_error("SpectralSummary: lambda and gamma must be positive");
    if (!(s.m > 0.0) || !(s.m_prime > 0.0))
        throw contract_error("SpectralSummary: m and m_prime must be positive");
    double scale = std::max(1.0, std::abs(s.v));
    if (std::abs(s.v - companion_v(s.gamma, s.lambda, s.m)) > 1e-12 * scale)
        throw contract_error("SpectralSummary: companion relation for v violated");
    double scale2 = std::max(1.0, std::abs(s.v_prime));
    if (std::abs(s.v_prime - companion_v_prime(s.gamma, s.lambda, s.m_prime)) > 1e-12 * scale2)
        throw contract_error("SpectralSummary: companion relation for v_prime violated");
}

// Plain spectral averages of a sample spectrum at -lambda.
inline SpectralSummary stieltjes_from_eigs(const EigenSpectrum& spec, double lambda) {
    if (!(lambda > 0.0))
        throw domain_error("stieltjes_from_eigs: lambda must be positive");
    spec.validate();
    if (spec.dim_p == 0)
        throw contract_error("stieltjes_from_eigs: empty spectrum");
    if (spec.aspect_gamma <= 0.0)
        throw contract_error("stieltjes_from_eigs: companion transform needs aspect_gamma > 0; "
                             "population spectra go through theory_summary_from_H");
    SpectralSummary s;
    s.lambda = lambda;
    s.gamma = spec.aspect_gamma;
    s.m = (1.0 / (spec.eigenvalues.array() + lambda)).mean();
    s.m_prime = (1.0 / (spec.eigenvalues.array() + lambda).square()).mean();
    s.v = companion_v(s.gamma, lambda, s.m);
    s.v_prime = companion_v_prime(s.gamma, lambda, s.m_prime);
    return s;
}

// Closed-form m_{F_gamma}(-lambda) for Sigma = I, written as
// 2 / (b + sqrt(b^2 + 4 gamma lambda)) with b = 1 - gamma + lambda to avoid
// cancellation; equal to the positive root of
// gamma lambda m^2 + (1 - gamma + lambda) m - 1 = 0.
inline double mp_identity_m(double gamma, double lambda) {
    if (!(gamma > 0.0) || !(lambda > 0.0))
        throw domain_error("mp_identity_m: gamma and lambda must be positive");
    double b = 1.0 - gamma + lambda;
    return 2.0 / (b + std::sqrt(b * b + 4.0 * gamma * lambda));
}

inline double mp_identity_m_prime(double gamma, double lambda) {
    double m = mp_identity_m(gamma, lambda);
    return m * m * (1.0 + gamma * m) / (1.0 + gamma * lambda * m * m);
}

// Full Sigma = I summary from the closed forms.
inline SpectralSummary mp_identity_summary(double gamma, double lambda) {
    SpectralSummary s;
    s.lambda = lambda;
    s.gamma = gamma;
    s.m = mp_identity_m(gamma, lambda);
    s.m_prime = mp_identity_m_prime(gamma, lambda);
    s.v = companion_v(gamma, lambda, s.m);
    s.v_prime = companion_v_prime(gamma, lambda, s.m_prime);
    return s;
}

// Solve 1 - x = gamma [ 1 - lambda * mean_t 1/(x t + lambda) ] for x in (0, 1],
// the deterministic-equivalent scaling (Sigma_hat + lambda I)^{-1} ~
// (x Sigma + lambda I)^{-1}. The map is monotone, so plain bisection.
inline double fixed_point_x(const EigenSpectrum& spec, double gamma, double lambda) {
    if (!(gamma > 0.0) || !(lambda > 0.0))
        throw domain_error("fixed_point_x: gamma and lambda must be positive");
    spec.validate();
    for (int i = 0; i < spec.dim_p; ++i)
        if (!(spec.eigenvalues[i] > 0.0))
            throw contract_error("fixed_point_x: population eigenvalues must be strictly positive");

    auto f = [&](double x) {
        double acc = (lambda / (x * spec.eigenvalues.array() + lambda)).mean();
        return x - 1.0 + gamma * (1.0 - acc);
    };
    double lo = 1e-12, hi = 1.0;
    double flo = f(lo), fhi = f(hi);
    if (flo > 0.0 || fhi < 0.0)
        throw numerical_error("fixed_point_x: root not bracketed in (0, 1]");
    const int cap = 10000;
    double mid = 0.5;
    for (int it = 0; it < cap; ++it) {
        mid = 0.5 * (lo + hi);
        double fm = f(mid);
        if (fm >= 0.0) hi = mid; else lo = mid;
        if (hi - lo < 1e-15) break;
    }
    mid = 0.5 * (lo + hi);
    double res = std::abs(f(mid));
    if (res > 1e-10)
        throw numerical_error("fixed_point_x: not converged, residual " + std::to_string(res));
    return mid;
}

// Limiting summary of F_gamma when the population spectrum H is known:
// m = mean_t 1/(x t + lambda) at the fixed point, and
// m' = (gamma m T1 + J) / (1 + gamma lambda T1) with
// T1 = mean_t t/(x t + lambda)^2, J = mean_t 1/(x t + lambda)^2
// (implicit differentiation of the fixed-point equation in lambda).
inline SpectralSummary theory_summary_from_H(const EigenSpectrum& pop, double gamma, double lambda) {
    double x = fixed_point_x(pop, gamma, lambda);
    auto denom = (x * pop.eigenvalues.array() + lambda).eval();
    double m = (1.0 / denom).mean();
    double J = (1.0 / denom.square()).mean();
    double T1 = (pop.eigenvalues.array() / denom.square()).mean();
    SpectralSummary s;
    s.lambda = lambda;
    s.gamma = gamma;
    s.m = m;
    s.m_prime = (gamma * m * T1 + J) / (1.0 + gamma * lambda * T1);
    s.v = companion_v(gamma, lambda, m);
    s.v_prime = companion_v_prime(gamma, lambda, s.m_prime);
    return s;
}

enum class CrossTraceKind { E, M, U, Y };

// Exact finite-p trace (1/p) tr[(S_k + l_k I)^{-1} (S_k' + l_k' I)^{-1} W],
// W = I for kinds E and U, W = the supplied weight matrix for M and Y.
inline double cross_trace(CrossTraceKind kind,
                          const MatrixXd& sample_cov_k, double lambda_k,
                          const MatrixXd& sample_cov_k2, double lambda_k2,
                          const MatrixXd* weight = nullptr) {
    const auto p = sample_cov_k.rows();
    if (sample_cov_k.cols() != p || sample_cov_k2.rows() != p || sample_cov_k2.cols() != p)
        throw contract_error("cross_trace: dimension mismatch");
    if (!(lambda_k > 0.0) || !(lambda_k2 > 0.0))
        throw domain_error("cross_trace: regularizers must be positive");
    bool weighted = (kind == CrossTraceKind::M || kind == CrossTraceKind::Y);
    if (weighted && weight == nullptr)
        throw contract_error("cross_trace: kinds M and Y require a weight matrix");
    if (!weighted && weight != nullptr)
        throw contract_error("cross_trace: kinds E and U take no weight matrix");
    if (weighted && (weight->rows() != p || weight->cols() != p))
        throw contract_error("cross_trace: weight dimension mismatch");

    MatrixXd a = sample_cov_k2;
    a.diagonal().array() += lambda_k2;
    Eigen::LDLT<MatrixXd> ldlt2(a);
    if (ldlt2.info() != Eigen::Success)
        throw numerical_error("cross_trace: factorization failed");
    MatrixXd inner = weighted ? MatrixXd(ldlt2.solve(*weight))
                              : MatrixXd(ldlt2.solve(MatrixXd::Identity(p, p)));

    MatrixXd b = sample_cov_k;
    b.diagonal().array() += lambda_k;
    Eigen::LDLT<MatrixXd> ldlt1(b);
    if (ldlt1.info() != Eigen::Success)
        throw numerical_error("cross_trace: factorization failed");
    return ldlt1.solve(inner).trace() / static_cast<double>(p);
}

enum class CrossCase { equal, identity, anisotropic };

namespace detail {

inline void check_equal_case(const SpectralSummary& a, const SpectralSummary& b) {
    double tol = 1e-9;
    if (std::abs(a.gamma - b.gamma) > tol * std::max(a.gamma, b.gamma) ||
        std::abs(a.lambda - b.lambda) > tol * std::max(a.lambda, b.lambda))
        throw contract_error("closed_form: equal case needs matching (gamma, lambda)");
}

inline bool v_degenerate(const SpectralSummary& a, const SpectralSummary& b) {
    return std::abs(a.v - b.v) <= 1e-8 * std::max(std::abs(a.v), std::abs(b.v));
}

inline bool params_equal(const SpectralSummary& a, const SpectralSummary& b) {
    return std::abs(a.gamma - b.gamma) <= 1e-9 * std::max(a.gamma, b.gamma) &&
           std::abs(a.lambda - b.lambda) <= 1e-9 * std::max(a.lambda, b.lambda);
}

} // namespace detail

// Limit of (1/p) tr[R_k R_k' Sigma^2] for independent samples sharing Sigma.
//
// equal       same (gamma, lambda) on both sides, any shared Sigma:
//             [(1-g) m' + 2 g l m m' - g m^2] / (1 - g + g l^2 m')
// identity    Sigma = I, any (gamma_k, lambda_k): m_k m_k'
// anisotropic general Sigma, distinct parameters, via partial fractions of
//             the deterministic equivalents R_k ~ [l_k (I + v_k Sigma)]^{-1}:
//             (l_k v_k m_k - l_k' v_k' m_k') / (l_k l_k' (v_k - v_k'))
// The anisotropic form is continuous into the equal branch and collapses to
// m_k m_k' on Sigma = I.
inline double closed_form_E(CrossCase cc, const SpectralSummary& sk, const SpectralSummary& sk2) {
    switch (cc) {
    case CrossCase::equal: {
        detail::check_equal_case(sk, sk2);
        double g = sk.gamma, l = sk.lambda, m = sk.m, mp = sk.m_prime;
        return ((1.0 - g) * mp + 2.0 * g * l * m * mp - g * m * m) / (1.0 - g + g * l * l * mp);
    }
    case CrossCase::identity:
        return sk.m * sk2.m;
    case CrossCase::anisotropic: {
        if (detail::v_degenerate(sk, sk2)) {
            if (detail::params_equal(sk, sk2))
                return closed_form_E(CrossCase::equal, sk, sk2);
            throw numerical_error("closed_form_E: companion transforms coincide; "
                                  "use the equal-parameter branch");
        }
        double num = sk.lambda * sk.v * sk.m - sk2.lambda * sk2.v * sk2.m;
        return num / (sk.lambda * sk2.lambda * (sk.v - sk2.v));
    }
    }
    throw contract_error("closed_form_E: unknown case");
}

// Limit of (1/p) tr[R_k R_k' Sigma], same three cases:
// equal (m - l m') / (1 - g + g l^2 m'); identity m_k m_k';
// anisotropic (l_k m_k - l_k' m_k') / (l_k l_k' (v_k' - v_k)).
inline double closed_form_M(CrossCase cc, const SpectralSummary& sk, const SpectralSummary& sk2) {
    switch (cc) {
    case CrossCase::equal: {
        detail::check_equal_case(sk, sk2);
        double g = sk.gamma, l = sk.lambda, m = sk.m, mp = sk.m_prime;
        return (m - l * mp) / (1.0 - g + g * l * l * mp);
    }
    case CrossCase::identity:
        return sk.m * sk2.m;
    case CrossCase::anisotropic: {
        if (detail::v_degenerate(sk, sk2)) {
            if (detail::params_equal(sk, sk2))
                return closed_form_M(CrossCase::equal, sk, sk2);
            throw numerical_error("closed_form_M: companion transforms coincide; "
                                  "use the equal-parameter branch");
        }
        double num = sk.lambda * sk.m - sk2.lambda * sk2.m;
        return num / (sk.lambda * sk2.lambda * (sk2.v - sk.v));
    }
    }
    throw contract_error("closed_form_M: unknown case");
}

// (1 - gamma) tr(S^{-1})/p estimates E(T^{-1}) when gamma < 1; gamma == 0
// means a population matrix and no correction. Above gamma = 1 the sample
// covariance is singular and the pooled covariance must be used instead.
inline double est_mean_inv_T(const EigenSpectrum& spec, double gamma) {
    spec.validate();
    if (gamma < 0.0)
        throw domain_error("est_mean_inv_T: gamma must be >= 0");
    if (gamma >= 1.0)
        throw contract_error("est_mean_inv_T: unsupported regime gamma >= 1; "
                             "pool populations so that the aggregate aspect ratio is below 1");
    for (int i = 0; i < spec.dim_p; ++i)
        if (!(spec.eigenvalues[i] > 0.0))
            throw contract_error("est_mean_inv_T: eigenvalues must be strictly positive");
    return (1.0 - gamma) * (1.0 / spec.eigenvalues.array()).mean();
}

// Plug-in for tr(Sigma_K^{-1} R_k)/p: (1 - gamma_K) tr(S_K^{-1} R_k)/p.
inline double est_trace_SigmaKinv_resolvent(const MatrixXd& sigma_hat_K, double gamma_K,
                                            const MatrixXd& resolvent_k) {
    const auto p = sigma_hat_K.rows();
    if (sigma_hat_K.cols() != p || resolvent_k.rows() != p || resolvent_k.cols() != p)
        throw contract_error("est_trace_SigmaKinv_resolvent: dimension mismatch");
    if (!(gamma_K > 0.0) || gamma_K >= 1.0)
        throw contract_error("est_trace_SigmaKinv_resolvent: needs 0 < gamma_K < 1");
    Eigen::LLT<MatrixXd> llt(sigma_hat_K);
    if (llt.info() != Eigen::Success)
        throw numerical_error("est_trace_SigmaKinv_resolvent: target sample covariance is "
                              "singular; fall back to the pooled covariance");
    return (1.0 - gamma_K) * llt.solve(resolvent_k).trace() / static_cast<double>(p);
}

// Target-side estimator of the K-row mixed traces (identical formula for the
// M and Y kinds): (1/(p x)) tr[R_k'] - (lambda_K/(p x)) tr[R_K R_k'].
inline double est_Y_or_M_targetside(const MatrixXd& resolvent_k2,
                                    const MatrixXd& sigma_hat_K, double lambda_K,
                                    double x_p) {
    const auto p = sigma_hat_K.rows();
    if (sigma_hat_K.cols() != p || resolvent_k2.rows() != p || resolvent_k2.cols() != p)
        throw contract_error("est_Y_or_M_targetside: dimension mismatch");
    if (!(x_p > 0.0))
        throw contract_error("est_Y_or_M_targetside: x_p must be positive");
    if (!(lambda_K > 0.0))
        throw domain_error("est_Y_or_M_targetside: lambda_K must be positive");
    MatrixXd a = sigma_hat_K;
    a.diagonal().array() += lambda_K;
    Eigen::LDLT<MatrixXd> ldlt(a);
    if (ldlt.info() != Eigen::Success)
        throw numerical_error("est_Y_or_M_targetside: factorization failed");
    double t1 = resolvent_k2.trace();
    double t2 = ldlt.solve(resolvent_k2).trace();
    return (t1 - lambda_K * t2) / (static_cast<double>(p) * x_p);
}

} // namespace tlrda
