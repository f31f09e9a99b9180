#pragma once

#include "tlrda/spectral.hpp"

#include <vector>

// Data model for one population and the plug-in moment estimators: class
// means, half mean-difference delta_hat, within-class covariance with the
// n_k - 2 divisor, the pooled covariance, and ridge discriminant directions.

namespace tlrda {

struct PopulationSample {
    MatrixXd features;       // n_k x p
    std::vector<int> labels; // +1 / -1
    int population_id = 0;   // 1..K, K = target

    void validate() const {
        const auto n = features.rows();
        if (static_cast<std::size_t>(n) != labels.size())
            throw contract_error("PopulationSample: label count does not match feature rows");
        if (n < 3)
            throw data_error("PopulationSample: need at least 3 observations");
        int plus = 0, minus = 0;
        for (int y : labels) {
            if (y == 1) ++plus;
            else if (y == -1) ++minus;
            else throw data_error("PopulationSample: labels must be +1 or -1");
        }
        if (plus == 0 || minus == 0)
            throw data_error("PopulationSample: both classes must be present");
        if (!features.allFinite())
            throw data_error("PopulationSample: non-finite feature value");
    }
};

struct PopulationMoments {
    VectorXd mu_plus;
    VectorXd mu_minus;
    VectorXd delta_hat; // (mu_plus - mu_minus)/2
    MatrixXd sigma_hat; // within-class scatter / (n_k - 2)
    int n_plus = 0;
    int n_minus = 0;
    int n_k = 0;
    double gamma_k = 0.0;

    VectorXd mu_bar() const { return 0.5 * (mu_plus + mu_minus); }
};

// The paper normalizes class sums by 2/n_k, which equals the per-class mean
// only under exact balance; per-class means are used throughout so the
// unbalanced extension stays correct.
inline PopulationMoments compute_moments(const PopulationSample& sample) {
    sample.validate();
    const auto n = sample.features.rows();
    const auto p = sample.features.cols();

    PopulationMoments m;
    m.n_k = static_cast<int>(n);
    m.gamma_k = static_cast<double>(p) / static_cast<double>(n);
    m.mu_plus = VectorXd::Zero(p);
    m.mu_minus = VectorXd::Zero(p);
    for (Eigen::Index i = 0; i < n; ++i) {
        if (sample.labels[static_cast<std::size_t>(i)] == 1) {
            m.mu_plus += sample.features.row(i).transpose();
            ++m.n_plus;
        } else {
            m.mu_minus += sample.features.row(i).transpose();
            ++m.n_minus;
        }
    }
    m.mu_plus /= m.n_plus;
    m.mu_minus /= m.n_minus;
    m.delta_hat = 0.5 * (m.mu_plus - m.mu_minus);

    MatrixXd scatter = MatrixXd::Zero(p, p);
    for (Eigen::Index i = 0; i < n; ++i) {
        const VectorXd& mu = sample.labels[static_cast<std::size_t>(i)] == 1 ? m.mu_plus : m.mu_minus;
        VectorXd c = sample.features.row(i).transpose() - mu;
        scatter.selfadjointView<Eigen::Lower>().rankUpdate(c);
    }
    m.sigma_hat = MatrixXd(scatter.selfadjointView<Eigen::Lower>()) / static_cast<double>(n - 2);
    return m;
}

// Sigma_hat_P: all within-class scatters combined, divided by sum(n_k - 2).
// Equivalently the (n_k - 2)-weighted average of the per-population
// sigma_hats, which is how it is computed here.
inline MatrixXd pooled_covariance(const std::vector<PopulationMoments>& moments) {
    if (moments.empty())
        throw contract_error("pooled_covariance: need at least one population");
    const auto p = moments.front().sigma_hat.rows();
    MatrixXd acc = MatrixXd::Zero(p, p);
    double denom = 0.0;
    for (const auto& m : moments) {
        if (m.sigma_hat.rows() != p || m.sigma_hat.cols() != p)
            throw contract_error("pooled_covariance: dimension mismatch across populations");
        double w = static_cast<double>(m.n_k - 2);
        acc += w * m.sigma_hat;
        denom += w;
    }
    return acc / denom;
}

inline MatrixXd pooled_covariance(const std::vector<PopulationMoments>& moments,
                                  const std::vector<PopulationSample>& samples) {
    if (moments.size() != samples.size())
        throw contract_error("pooled_covariance: moments/samples count mismatch");
    for (std::size_t k = 0; k < samples.size(); ++k)
        if (samples[k].features.cols() != moments[k].sigma_hat.rows())
            throw contract_error("pooled_covariance: dimension mismatch");
    return pooled_covariance(moments);
}

struct DiscriminantDirection {
    VectorXd direction;
    double intercept = 0.0;
    double lambda = 0.0;
    bool pooled = false;
};

namespace detail {

inline DiscriminantDirection make_direction(const PopulationMoments& m, double lambda, bool pooled,
                                            VectorXd&& dir, const MatrixXd& cov) {
    if (!dir.allFinite())
        throw numerical_error("discriminant_direction: solve produced non-finite values");
    MatrixXd shifted = cov;
    shifted.diagonal().array() += lambda;
    if (relative_residual(shifted, dir, m.delta_hat) > 1e-8)
        throw numerical_error("discriminant_direction: residual above tolerance");
    DiscriminantDirection d;
    d.intercept = -dir.dot(m.mu_bar());
    d.direction = std::move(dir);
    d.lambda = lambda;
    d.pooled = pooled;
    return d;
}

} // namespace detail

// d = (cov + lambda I)^{-1} delta_hat, b = -d' (mu_minus + mu_plus)/2
// (the intercept reuses the same resolvent by symmetry).
inline DiscriminantDirection discriminant_direction(const PopulationMoments& m, const MatrixXd& cov,
                                                    double lambda, bool pooled) {
    if (!(lambda > 0.0))
        throw domain_error("discriminant_direction: lambda must be positive");
    if (cov.rows() != m.delta_hat.size() || cov.cols() != m.delta_hat.size())
        throw contract_error("discriminant_direction: dimension mismatch");
    VectorXd dir = shifted_solve(cov, lambda, m.delta_hat);
    return detail::make_direction(m, lambda, pooled, std::move(dir), cov);
}

// One symmetric eigendecomposition of a covariance, reused for every lambda
// on a grid. Dominates the cross-validation sweep cost otherwise.
struct EigenCache {
    VectorXd evals; // ascending
    MatrixXd evecs;

    explicit EigenCache(const MatrixXd& cov) {
        SymEig e = sym_eig(cov, true);
        evals = std::move(e.values);
        evecs = std::move(e.vectors);
    }

    int dim() const { return static_cast<int>(evals.size()); }

    VectorXd resolvent_apply(double lambda, const VectorXd& x) const {
        VectorXd t = evecs.transpose() * x;
        t.array() /= (evals.array() + lambda);
        return evecs * t;
    }

    MatrixXd resolvent(double lambda) const {
        return evecs * (1.0 / (evals.array() + lambda)).matrix().asDiagonal() * evecs.transpose();
    }

    double trace_resolvent(double lambda) const {
        return (1.0 / (evals.array() + lambda)).sum();
    }

    double trace_resolvent_sq(double lambda) const {
        return (1.0 / (evals.array() + lambda).square()).sum();
    }

    EigenSpectrum spectrum(double aspect_gamma) const {
        EigenSpectrum s;
        s.dim_p = dim();
        s.aspect_gamma = aspect_gamma;
        s.eigenvalues = evals.reverse();
        for (int i = 0; i < s.dim_p; ++i)
            if (s.eigenvalues[i] < 0.0) s.eigenvalues[i] = 0.0;
        return s;
    }
};

inline DiscriminantDirection discriminant_direction(const PopulationMoments& m, const EigenCache& cache,
                                                    double lambda, bool pooled) {
    if (!(lambda > 0.0))
        throw domain_error("discriminant_direction: lambda must be positive");
    if (cache.dim() != m.delta_hat.size())
        throw contract_error("discriminant_direction: dimension mismatch");
    VectorXd dir = cache.resolvent_apply(lambda, m.delta_hat);
    if (!dir.allFinite())
        throw numerical_error("discriminant_direction: solve produced non-finite values");
    VectorXd t = cache.evecs.transpose() * dir;
    t.array() *= (cache.evals.array() + lambda);
    double nb = m.delta_hat.norm();
    if (nb > 0.0 && (cache.evecs * t - m.delta_hat).norm() / nb > 1e-8)
        throw numerical_error("discriminant_direction: residual above tolerance");
    DiscriminantDirection d;
    d.intercept = -dir.dot(m.mu_bar());
    d.direction = std::move(dir);
    d.lambda = lambda;
    d.pooled = pooled;
    return d;
}

} // namespace tlrda
