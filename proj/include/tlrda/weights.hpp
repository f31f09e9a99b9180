#pragma once

#include "tlrda/hyper.hpp"
#include "tlrda/spectral.hpp"

#include <cmath>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

// Optimal combination weights. Six variants: {estimation, prediction} x
// {individual, pooled, heterogeneous}. Each builds a (u, A, R) triple with
// A + R positive definite and solves (A + R) w = u.

namespace tlrda {

enum class WeightVariant { E_ind, P_ind, E_pool, P_pool, E_het, P_het };

inline const char* variant_name(WeightVariant v) {
    switch (v) {
    case WeightVariant::E_ind: return "E_ind";
    case WeightVariant::P_ind: return "P_ind";
    case WeightVariant::E_pool: return "E_pool";
    case WeightVariant::P_pool: return "P_pool";
    case WeightVariant::E_het: return "E_het";
    case WeightVariant::P_het: return "P_het";
    }
    return "?";
}

inline bool is_estimation_variant(WeightVariant v) {
    return v == WeightVariant::E_ind || v == WeightVariant::E_pool || v == WeightVariant::E_het;
}
inline bool is_pooled_variant(WeightVariant v) {
    return v == WeightVariant::E_pool || v == WeightVariant::P_pool;
}
inline bool is_het_variant(WeightVariant v) {
    return v == WeightVariant::E_het || v == WeightVariant::P_het;
}

// Scalar building blocks shared by the weight matrices and the limiting
// error. On Sigma = I they collapse to m' (signal) and gamma m' (noise).
inline double est_noise_diag(const SpectralSummary& s) {
    double lv = s.lambda * s.v;
    return (s.v - s.lambda * s.v_prime) / (lv * lv);
}
inline double pred_signal_diag(const SpectralSummary& s) {
    double lv = s.lambda * s.v;
    return (s.v - s.lambda * s.v_prime) / (s.gamma * lv * lv);
}
inline double pred_noise_diag(const SpectralSummary& s) {
    double v2 = s.v * s.v;
    return (s.v_prime - v2) / (s.lambda * s.lambda * v2 * v2);
}
inline double est_u_bracket(const SpectralSummary& s, double mean_inv_T) {
    return mean_inv_T / s.lambda - s.v * s.m;
}

// Everything spectral a builder may need; which pieces are required depends
// on the variant. `cross` carries the limiting (or exact finite-p) values of
// the off-diagonal traces: E/U kinds for estimation variants, M/Y kinds for
// prediction variants; for P_het its source diagonal entries are read too.
struct SpectralInputs {
    std::vector<SpectralSummary> summaries;
    SpectralSummary pooled{};
    bool has_pooled = false;
    MatrixXd cross;
    VectorXd target_inv_traces; // E_het: estimates of tr(Sigma_K^{-1} R_k)/p
    double mean_inv_T = std::numeric_limits<double>::quiet_NaN();
};

struct WeightProblem {
    WeightVariant variant = WeightVariant::P_ind;
    VectorXd u;
    MatrixXd A;
    MatrixXd R; // diagonal
    std::string inputs_digest;
};

namespace detail {

inline double gamma_bar_of(const std::vector<SpectralSummary>& ss) {
    double inv = 0.0;
    for (const auto& s : ss) inv += 1.0 / s.gamma;
    return 1.0 / inv;
}

inline std::string digest_of(WeightVariant variant, const HyperParams& hyper,
                             const SpectralInputs& in) {
    std::ostringstream os;
    os.precision(12);
    os << "variant=" << variant_name(variant) << " K=" << hyper.populations();
    os << " gamma=[";
    for (const auto& s : in.summaries) os << s.gamma << ",";
    os << "] lambda=[";
    for (const auto& s : in.summaries) os << s.lambda << ",";
    os << "] alpha_sq=[";
    for (double a : hyper.alpha_sq) os << a << ",";
    os << "] rho=[";
    for (int i = 0; i < hyper.rho.rows(); ++i)
        for (int j = i + 1; j < hyper.rho.cols(); ++j) os << hyper.rho(i, j) << ",";
    os << "] m=[";
    for (const auto& s : in.summaries) os << s.m << ",";
    os << "]";
    if (std::isfinite(in.mean_inv_T)) os << " mean_inv_T=" << in.mean_inv_T;
    if (in.has_pooled) os << " pooled_m=" << in.pooled.m;
    if (in.cross.size() > 0) {
        os << " cross=[";
        for (int i = 0; i < in.cross.rows(); ++i)
            for (int j = i; j < in.cross.cols(); ++j) os << in.cross(i, j) << ",";
        os << "]";
    }
    return os.str();
}

inline void check_problem_psd(WeightProblem& prob) {
    MatrixXd total = prob.A + prob.R;
    SymEig e = sym_eig(total, false);
    if (!(e.values[0] > 0.0))
        throw numerical_error(std::string("build_problem: A + R is not positive definite "
                                          "(min eigenvalue ") +
                              std::to_string(e.values[0]) + "); inputs are inconsistent");
}

} // namespace detail

inline WeightProblem build_problem(WeightVariant variant, const HyperParams& hyper,
                                   const SpectralInputs& in) {
    hyper.validate();
    const int K = hyper.populations();
    if (static_cast<int>(in.summaries.size()) != K)
        throw contract_error("build_problem: need one spectral summary per population");
    for (const auto& s : in.summaries) validate_summary(s);

    const bool est = is_estimation_variant(variant);
    if (est != std::isfinite(in.mean_inv_T))
        throw contract_error(est ? "build_problem: estimation variants require mean_inv_T"
                                 : "build_problem: prediction variants take no mean_inv_T");

    if (est) {
        double g = variant == WeightVariant::E_het ? in.summaries.back().gamma
                                                   : detail::gamma_bar_of(in.summaries);
        if (g >= 1.0)
            throw contract_error("build_problem: E(T^-1) is inestimable at aspect ratio >= 1; "
                                 "use the prediction (P) variant instead");
    }

    if (is_pooled_variant(variant)) {
        if (!in.has_pooled)
            throw contract_error("build_problem: pooled variants require the pooled summary");
        validate_summary(in.pooled);
        for (const auto& s : in.summaries)
            if (std::abs(s.lambda - in.pooled.lambda) > 1e-9 * in.pooled.lambda)
                throw contract_error("build_problem: pooled variants require a common lambda");
    }

    const bool needs_cross = !is_pooled_variant(variant) && K > 1;
    if (needs_cross) {
        if (in.cross.rows() != K || in.cross.cols() != K)
            throw contract_error("build_problem: cross-trace matrix must be K x K");
        if ((in.cross - in.cross.transpose()).cwiseAbs().maxCoeff() >
            1e-8 * std::max(1.0, in.cross.cwiseAbs().maxCoeff()))
            throw contract_error("build_problem: cross-trace matrix must be symmetric");
    }
    if (variant == WeightVariant::E_het && in.target_inv_traces.size() != K)
        throw contract_error("build_problem: E_het requires target_inv_traces");

    auto alpha = [&](int k) { return std::sqrt(hyper.alpha_sq[static_cast<std::size_t>(k)]); };
    auto cross_sym = [&](int i, int j) { return 0.5 * (in.cross(i, j) + in.cross(j, i)); };

    WeightProblem prob;
    prob.variant = variant;
    prob.u.resize(K);
    prob.A = MatrixXd::Zero(K, K);
    prob.R = MatrixXd::Zero(K, K);
    const int tgt = K - 1;

    switch (variant) {
    case WeightVariant::E_ind: {
        for (int k = 0; k < K; ++k) {
            const auto& s = in.summaries[static_cast<std::size_t>(k)];
            prob.u[k] = hyper.rho(k, tgt) * alpha(k) * alpha(tgt) * est_u_bracket(s, in.mean_inv_T);
            prob.A(k, k) = hyper.alpha_sq[static_cast<std::size_t>(k)] * s.m_prime;
            prob.R(k, k) = est_noise_diag(s);
            for (int j = k + 1; j < K; ++j)
                prob.A(k, j) = prob.A(j, k) = hyper.rho(k, j) * alpha(k) * alpha(j) * cross_sym(k, j);
        }
        break;
    }
    case WeightVariant::P_ind: {
        for (int k = 0; k < K; ++k) {
            const auto& s = in.summaries[static_cast<std::size_t>(k)];
            prob.u[k] = hyper.rho(k, tgt) * alpha(k) * alpha(tgt) * s.m;
            prob.A(k, k) = hyper.alpha_sq[static_cast<std::size_t>(k)] * pred_signal_diag(s);
            prob.R(k, k) = pred_noise_diag(s);
            for (int j = k + 1; j < K; ++j)
                prob.A(k, j) = prob.A(j, k) = hyper.rho(k, j) * alpha(k) * alpha(j) * cross_sym(k, j);
        }
        break;
    }
    case WeightVariant::E_pool: {
        double bracket = est_u_bracket(in.pooled, in.mean_inv_T);
        for (int k = 0; k < K; ++k) {
            const auto& s = in.summaries[static_cast<std::size_t>(k)];
            prob.u[k] = hyper.rho(k, tgt) * alpha(k) * alpha(tgt) * bracket;
            prob.R(k, k) = (s.gamma / in.pooled.gamma) * est_noise_diag(in.pooled);
            for (int j = 0; j < K; ++j)
                prob.A(k, j) = hyper.rho(k, j) * alpha(k) * alpha(j) * in.pooled.m_prime;
        }
        break;
    }
    case WeightVariant::P_pool: {
        double shared = pred_signal_diag(in.pooled);
        for (int k = 0; k < K; ++k) {
            const auto& s = in.summaries[static_cast<std::size_t>(k)];
            prob.u[k] = hyper.rho(k, tgt) * alpha(k) * alpha(tgt) * in.pooled.m;
            prob.R(k, k) = (s.gamma / in.pooled.gamma) * pred_noise_diag(in.pooled);
            for (int j = 0; j < K; ++j)
                prob.A(k, j) = hyper.rho(k, j) * alpha(k) * alpha(j) * shared;
        }
        break;
    }
    case WeightVariant::E_het: {
        for (int k = 0; k < K; ++k) {
            const auto& s = in.summaries[static_cast<std::size_t>(k)];
            prob.u[k] = k == tgt
                            ? hyper.alpha_sq[static_cast<std::size_t>(tgt)] *
                                  est_u_bracket(s, in.mean_inv_T)
                            : hyper.rho(k, tgt) * alpha(k) * alpha(tgt) * in.target_inv_traces[k];
            prob.A(k, k) = hyper.alpha_sq[static_cast<std::size_t>(k)] * s.m_prime;
            prob.R(k, k) = est_noise_diag(s);
            for (int j = k + 1; j < K; ++j)
                prob.A(k, j) = prob.A(j, k) = hyper.rho(k, j) * alpha(k) * alpha(j) * cross_sym(k, j);
        }
        break;
    }
    case WeightVariant::P_het: {
        for (int k = 0; k < K; ++k) {
            const auto& s = in.summaries[static_cast<std::size_t>(k)];
            prob.u[k] = hyper.rho(k, tgt) * alpha(k) * alpha(tgt) * s.m;
            prob.R(k, k) = pred_noise_diag(s);
            for (int j = k; j < K; ++j) {
                double a;
                if (k == tgt && j == tgt)
                    a = hyper.alpha_sq[static_cast<std::size_t>(tgt)] * pred_signal_diag(s);
                else
                    a = hyper.rho(k, j) * alpha(k) * alpha(j) * cross_sym(k, j);
                prob.A(k, j) = prob.A(j, k) = a;
            }
        }
        break;
    }
    }

    prob.inputs_digest = detail::digest_of(variant, hyper, in);
    detail::check_problem_psd(prob);
    return prob;
}

struct TransferWeights {
    VectorXd w;
    WeightVariant variant = WeightVariant::P_ind;
    double solver_residual = 0.0;
    double condition_estimate = 0.0;
};

inline TransferWeights solve_weights(const WeightProblem& prob) {
    const int K = static_cast<int>(prob.u.size());
    if (prob.A.rows() != K || prob.R.rows() != K)
        throw contract_error("solve_weights: inconsistent problem dimensions");
    MatrixXd total = prob.A + prob.R;
    SymEig e = sym_eig(total, false);
    if (!(e.values[0] > 0.0))
        throw numerical_error("solve_weights: A + R is not positive definite");

    TransferWeights out;
    out.variant = prob.variant;
    out.condition_estimate = e.values[K - 1] / e.values[0];
    out.w = Eigen::LDLT<MatrixXd>(total).solve(prob.u);
    if (!out.w.allFinite())
        throw numerical_error("solve_weights: non-finite solution, condition estimate " +
                              std::to_string(out.condition_estimate));
    out.solver_residual = (total * out.w - prob.u).norm();
    if (out.solver_residual > 1e-10 * std::max(prob.u.norm(), 1e-300))
        throw numerical_error("solve_weights: residual " + std::to_string(out.solver_residual) +
                              " above tolerance, condition estimate " +
                              std::to_string(out.condition_estimate));
    return out;
}

// Homogeneous-source closed form (equal gamma, lambda, equicorrelation rho):
// with d_k = (t - rho e) alpha_k^2 + t_v, S0 = sum alpha_j^2/d_j,
// S1 = sum {rho + (1-rho) I(j=K)} alpha_j^2/d_j, xi = rho e S1/(1 + rho e S0),
//   w_k = c alpha_K {rho - xi + (1-rho) I(k=K)} alpha_k / d_k,
// where for the E variant (t, t_v, e, c) = (m', est_noise, cross E value,
// E(T^-1)/lambda - v m) and for the P variant (pred_signal, pred_noise,
// cross M value, m). This is the rank-one (Sherman-Morrison) solution of the
// general system and doubles as its independent cross-check.
inline TransferWeights homogeneous_closed_form(WeightVariant variant, int K, double rho,
                                               const std::vector<double>& alpha_sq,
                                               double cross_value, const SpectralSummary& s,
                                               double mean_inv_T =
                                                   std::numeric_limits<double>::quiet_NaN()) {
    if (variant != WeightVariant::E_ind && variant != WeightVariant::P_ind)
        throw contract_error("homogeneous_closed_form: only the E/P individual variants");
    if (static_cast<int>(alpha_sq.size()) != K || K < 1)
        throw contract_error("homogeneous_closed_form: alpha_sq must have K entries");
    if (rho < -1.0 || rho > 1.0)
        throw domain_error("homogeneous_closed_form: rho outside [-1, 1]");
    validate_summary(s);

    const bool est = variant == WeightVariant::E_ind;
    if (est && !std::isfinite(mean_inv_T))
        throw contract_error("homogeneous_closed_form: E variant requires mean_inv_T");
    double t = est ? s.m_prime : pred_signal_diag(s);
    double tv = est ? est_noise_diag(s) : pred_noise_diag(s);
    double c = est ? est_u_bracket(s, mean_inv_T) : s.m;

    double s0 = 0.0, s1 = 0.0;
    std::vector<double> d(static_cast<std::size_t>(K));
    for (int k = 0; k < K; ++k) {
        double a2 = alpha_sq[static_cast<std::size_t>(k)];
        d[static_cast<std::size_t>(k)] = (t - rho * cross_value) * a2 + tv;
        if (!(d[static_cast<std::size_t>(k)] > 0.0))
            throw numerical_error("homogeneous_closed_form: non-positive denominator");
        double tilde = (k == K - 1) ? 1.0 : rho;
        s0 += a2 / d[static_cast<std::size_t>(k)];
        s1 += tilde * a2 / d[static_cast<std::size_t>(k)];
    }
    double xi = rho * cross_value * s1 / (1.0 + rho * cross_value * s0);

    TransferWeights out;
    out.variant = variant;
    out.w.resize(K);
    double aK = std::sqrt(alpha_sq.back());
    for (int k = 0; k < K; ++k) {
        double coef = rho - xi + ((k == K - 1) ? 1.0 - rho : 0.0);
        out.w[k] = c * aK * coef * std::sqrt(alpha_sq[static_cast<std::size_t>(k)]) /
                   d[static_cast<std::size_t>(k)];
    }
    out.solver_residual = 0.0;
    out.condition_estimate = 1.0;
    return out;
}

// Finite-sample analogue of the weight systems, with the true deltas and
// Sigma plugged in; a simulation-only oracle for the convergence tests.
// E: u_k = delta_K' Sigma^{-1} R_k dh_k, A_kk' = d_k' R_k R_k' d_k',
//    Rhat_kk' = (dh_k - d_k)' R_k R_k' (dh_k' - d_k').
// P: the same with Sigma inserted between the resolvents and
//    u_k = delta_K' R_k dh_k.
inline VectorXd finite_sample_oracle_weights(WeightVariant variant,
                                             const std::vector<VectorXd>& true_deltas,
                                             const MatrixXd& true_sigma,
                                             const std::vector<VectorXd>& delta_hats,
                                             const std::vector<MatrixXd>& resolvents) {
    if (variant != WeightVariant::E_ind && variant != WeightVariant::P_ind)
        throw contract_error("finite_sample_oracle_weights: only the E/P individual variants");
    const int K = static_cast<int>(true_deltas.size());
    if (K == 0 || static_cast<int>(delta_hats.size()) != K ||
        static_cast<int>(resolvents.size()) != K)
        throw contract_error("finite_sample_oracle_weights: need K of each oracle input");
    const auto p = true_sigma.rows();
    for (int k = 0; k < K; ++k)
        if (true_deltas[static_cast<std::size_t>(k)].size() != p ||
            delta_hats[static_cast<std::size_t>(k)].size() != p ||
            resolvents[static_cast<std::size_t>(k)].rows() != p)
            throw contract_error("finite_sample_oracle_weights: dimension mismatch");

    const bool est = variant == WeightVariant::E_ind;
    std::vector<VectorXd> rd(static_cast<std::size_t>(K)), re(static_cast<std::size_t>(K)),
        rh(static_cast<std::size_t>(K));
    for (int k = 0; k < K; ++k) {
        const auto& R = resolvents[static_cast<std::size_t>(k)];
        rd[static_cast<std::size_t>(k)] = R * true_deltas[static_cast<std::size_t>(k)];
        re[static_cast<std::size_t>(k)] =
            R * (delta_hats[static_cast<std::size_t>(k)] - true_deltas[static_cast<std::size_t>(k)]);
        rh[static_cast<std::size_t>(k)] = R * delta_hats[static_cast<std::size_t>(k)];
    }

    VectorXd u(K);
    MatrixXd total = MatrixXd::Zero(K, K);
    VectorXd target_lhs;
    if (est)
        target_lhs = Eigen::LLT<MatrixXd>(true_sigma).solve(true_deltas.back());
    for (int k = 0; k < K; ++k) {
        u[k] = est ? target_lhs.dot(rh[static_cast<std::size_t>(k)])
                   : true_deltas.back().dot(rh[static_cast<std::size_t>(k)]);
        for (int j = k; j < K; ++j) {
            double a, r;
            if (est) {
                a = rd[static_cast<std::size_t>(k)].dot(rd[static_cast<std::size_t>(j)]);
                r = re[static_cast<std::size_t>(k)].dot(re[static_cast<std::size_t>(j)]);
            } else {
                a = rd[static_cast<std::size_t>(k)].dot(true_sigma * rd[static_cast<std::size_t>(j)]);
                r = re[static_cast<std::size_t>(k)].dot(true_sigma * re[static_cast<std::size_t>(j)]);
            }
            total(k, j) = total(j, k) = a + r;
        }
    }
    VectorXd w = Eigen::LDLT<MatrixXd>(total).solve(u);
    if (!w.allFinite())
        throw numerical_error("finite_sample_oracle_weights: solve failed");
    return w;
}

} // namespace tlrda
