#pragma once

#include "tlrda/sample.hpp"
#include "tlrda/weights.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <vector>

// Limiting and empirical classification error, Bayes benchmarks, the
// unbalanced-class extension, a derivative-free weight search, and the
// pooled-vs-individual crossover analyzer.

namespace tlrda {

inline double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

// Inverse normal CDF: rational initial guess refined with one Halley step.
inline double normal_quantile(double prob) {
    if (!(prob > 0.0 && prob < 1.0))
        throw domain_error("normal_quantile: probability must lie strictly in (0, 1)");
    // Acklam's rational approximation
    static const double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                               -2.759285104469687e+02, 1.383577518672690e+02,
                               -3.066479806614716e+01, 2.506628277459239e+00};
    static const double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                               -1.556989798598866e+02, 6.680131188771972e+01,
                               -1.328068155288572e+01};
    static const double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                               -2.400758277161838e+00, -2.549732539343734e+00,
                               4.374664141464968e+00,  2.938163982698783e+00};
    static const double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                               2.445134137142996e+00, 3.754408661907416e+00};
    const double plow = 0.02425;
    double x;
    if (prob < plow) {
        double q = std::sqrt(-2.0 * std::log(prob));
        x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
            ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
    } else if (prob <= 1.0 - plow) {
        double q = prob - 0.5, r = q * q;
        x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
            (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
    } else {
        double q = std::sqrt(-2.0 * std::log1p(-prob));
        x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
            ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
    }
    // Halley refinement against the forward CDF
    for (int it = 0; it < 2; ++it) {
        double e = normal_cdf(x) - prob;
        double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * M_PI);
        if (pdf == 0.0) break;
        double un = e / pdf;
        x -= un / (1.0 + 0.5 * x * un);
    }
    return x;
}

struct RiskReport {
    double limiting_error = 0.5;
    double bayes_error = 0.5;
    double theta_w = 0.0;
    double theta_bayes = 0.0;
    double cos_theta = 0.0;
    std::optional<double> empirical_error;
    std::optional<double> auc;
};

// Theorem-1 form. The argument is canonicalized to u'w >= 0; the classifier
// is sign-invariant, so the flip loses nothing.
inline double limiting_error(const VectorXd& w, const VectorXd& u, const MatrixXd& a_err) {
    if (w.size() != u.size() || a_err.rows() != w.size() || a_err.cols() != w.size())
        throw contract_error("limiting_error: dimension mismatch");
    if (w.cwiseAbs().maxCoeff() == 0.0)
        throw domain_error("limiting_error: zero weight vector has no error ratio");
    double quad = w.dot(a_err * w);
    if (!(quad > 0.0))
        throw domain_error("limiting_error: w' A w must be positive");
    double num = std::abs(u.dot(w));
    return normal_cdf(-num / std::sqrt(quad));
}

inline double optimal_limiting_error(const WeightProblem& prob) {
    TransferWeights tw = solve_weights(prob);
    double q = prob.u.dot(tw.w);
    if (q < 0.0) throw numerical_error("optimal_limiting_error: negative Rayleigh quotient");
    return normal_cdf(-std::sqrt(q));
}

inline double bayes_error(double alpha_K_sq, double mean_inv_T = 1.0) {
    if (alpha_K_sq < 0.0) throw domain_error("bayes_error: alpha_K^2 must be nonnegative");
    if (!(mean_inv_T > 0.0) || !std::isfinite(mean_inv_T))
        throw domain_error("bayes_error: E(T^-1) must be positive and finite");
    return normal_cdf(-std::sqrt(alpha_K_sq * mean_inv_T));
}

struct EmpiricalMetrics {
    double error = 0.0;
    std::optional<double> auc; // undefined on a single-class test set
};

inline EmpiricalMetrics empirical_error_and_auc(const VectorXd& direction, double intercept,
                                                const PopulationSample& test) {
    const auto n = test.features.rows();
    if (n == 0) throw data_error("empirical_error_and_auc: empty test set");
    if (test.features.cols() != direction.size())
        throw contract_error("empirical_error_and_auc: dimension mismatch");
    if (static_cast<Eigen::Index>(test.labels.size()) != n)
        throw contract_error("empirical_error_and_auc: label count mismatch");

    VectorXd scores = test.features * direction;
    EmpiricalMetrics out;
    Eigen::Index wrong = 0, n_pos = 0;
    for (Eigen::Index i = 0; i < n; ++i) {
        int pred = scores[i] + intercept >= 0.0 ? 1 : -1;
        if (pred != test.labels[static_cast<std::size_t>(i)]) ++wrong;
        if (test.labels[static_cast<std::size_t>(i)] == 1) ++n_pos;
    }
    out.error = static_cast<double>(wrong) / static_cast<double>(n);

    Eigen::Index n_neg = n - n_pos;
    if (n_pos == 0 || n_neg == 0) return out; // AUC undefined

    // Mann-Whitney with midranks for ties
    std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
    std::sort(order.begin(), order.end(),
              [&](Eigen::Index i, Eigen::Index j) { return scores[i] < scores[j]; });
    double rank_sum_pos = 0.0;
    Eigen::Index i = 0;
    while (i < n) {
        Eigen::Index j = i;
        while (j + 1 < n && scores[order[static_cast<std::size_t>(j + 1)]] ==
                                scores[order[static_cast<std::size_t>(i)]])
            ++j;
        double midrank = 0.5 * static_cast<double>(i + j) + 1.0;
        for (Eigen::Index t = i; t <= j; ++t)
            if (test.labels[static_cast<std::size_t>(order[static_cast<std::size_t>(t)])] == 1)
                rank_sum_pos += midrank;
        i = j + 1;
    }
    double auc = (rank_sum_pos - 0.5 * static_cast<double>(n_pos) *
                                     static_cast<double>(n_pos + 1)) /
                 (static_cast<double>(n_pos) * static_cast<double>(n_neg));
    out.auc = auc;
    return out;
}

inline RiskReport make_risk_report(const VectorXd& w, const VectorXd& u, const MatrixXd& a_err,
                                   double alpha_K_sq, double mean_inv_T = 1.0) {
    RiskReport rep;
    rep.limiting_error = limiting_error(w, u, a_err);
    rep.bayes_error = bayes_error(alpha_K_sq, mean_inv_T);
    rep.theta_w = -normal_quantile(rep.limiting_error);
    rep.theta_bayes = std::sqrt(alpha_K_sq * mean_inv_T);
    if (rep.theta_bayes > 0.0) {
        rep.cos_theta = normal_quantile(rep.limiting_error) / normal_quantile(rep.bayes_error);
        rep.cos_theta = std::clamp(rep.cos_theta, -1.0, 1.0);
    }
    return rep;
}

// Class-conditional aspect ratios gamma_{k,-} and gamma_{k,+}; the harmonic
// relation 1/gamma_k = 1/gamma_{k,+} + 1/gamma_{k,-} ties them to the
// population aspect ratio.
struct ClassAspects {
    double minus = 0.0;
    double plus = 0.0;
};

inline double unbalanced_intercept_limit(const SpectralSummary& target, const ClassAspects& g) {
    double gk = 1.0 / (1.0 / g.minus + 1.0 / g.plus);
    return (g.minus - g.plus) / (4.0 * gk) * (1.0 / (target.lambda * target.v) - 1.0);
}

// Appendix-C style error with the surviving intercept limit and the class-sum
// noise rescale. The diagonal noise carries (gamma_{k,-}+gamma_{k,+})/(4 gamma_k)
// so that the balanced case collapses exactly onto A_err.
inline double unbalanced_limiting_error(const VectorXd& w,
                                        const std::vector<ClassAspects>& class_aspects,
                                        double pi_minus, double pi_plus,
                                        const std::vector<SpectralSummary>& summaries,
                                        const VectorXd& u, const MatrixXd& a_err) {
    const int K = static_cast<int>(summaries.size());
    if (w.size() != K || u.size() != K || a_err.rows() != K ||
        static_cast<int>(class_aspects.size()) != K)
        throw contract_error("unbalanced_limiting_error: dimension mismatch");
    if (std::abs(pi_minus + pi_plus - 1.0) > 1e-12 || pi_minus < 0.0 || pi_plus < 0.0)
        throw contract_error("unbalanced_limiting_error: class probabilities must sum to 1");
    if (w.cwiseAbs().maxCoeff() == 0.0)
        throw domain_error("unbalanced_limiting_error: zero weight vector");

    MatrixXd s_mat = a_err;
    for (int k = 0; k < K; ++k) {
        const auto& s = summaries[static_cast<std::size_t>(k)];
        const auto& g = class_aspects[static_cast<std::size_t>(k)];
        if (!(g.minus > 0.0) || !(g.plus > 0.0))
            throw contract_error("unbalanced_limiting_error: class aspect ratios must be positive");
        double gk = 1.0 / (1.0 / g.minus + 1.0 / g.plus);
        if (std::abs(gk - s.gamma) > 1e-6 * s.gamma)
            throw contract_error("unbalanced_limiting_error: class aspects inconsistent with the "
                                 "population aspect ratio");
        double scale = (g.minus + g.plus) / (4.0 * s.gamma);
        s_mat(k, k) += (scale - 1.0) * pred_noise_diag(s);
    }

    double b_inf = unbalanced_intercept_limit(summaries.back(), class_aspects.back());
    double margin = u.dot(w);
    VectorXd wc = w;
    if (margin < 0.0) {
        wc = -w;
        margin = -margin;
    }
    double denom = std::sqrt(wc.dot(s_mat * wc));
    if (!(denom > 0.0))
        throw domain_error("unbalanced_limiting_error: degenerate variance");
    return pi_minus * normal_cdf((-margin + b_inf) / denom) +
           pi_plus * normal_cdf(-(margin + b_inf) / denom);
}

struct SearchResult {
    VectorXd w;
    double objective = 0.0;
    std::vector<double> trace; // best objective after each accepted move
};

// Coordinate-wise pattern search with shrinking steps; three deterministic
// restarts, ten-thousand-evaluation budget.
inline SearchResult numeric_weight_search_unbalanced(
    const std::function<double(const VectorXd&)>& objective, int K, const VectorXd& init) {
    if (K < 1 || K > 8)
        throw contract_error("numeric_weight_search_unbalanced: K must be in [1, 8]");
    if (init.size() != K)
        throw contract_error("numeric_weight_search_unbalanced: init has wrong length");

    int budget = 10000;
    SearchResult best;
    best.objective = std::numeric_limits<double>::infinity();

    VectorXd target_only = VectorXd::Zero(K);
    target_only[K - 1] = std::max(init.norm(), 1.0);
    std::array<VectorXd, 3> starts = {init, target_only,
                                      VectorXd(0.5 * (init + target_only))};

    for (const auto& start : starts) {
        if (budget <= 0) break;
        VectorXd x = start;
        double fx = objective(x);
        --budget;
        if (fx < best.objective) {
            best.objective = fx;
            best.w = x;
            best.trace.push_back(fx);
        }
        double scale = std::max(1.0, x.cwiseAbs().maxCoeff());
        for (double h = 0.5 * scale; h > 1e-9 * scale && budget > 0;) {
            bool improved = false;
            for (int k = 0; k < K && budget > 0; ++k) {
                for (double sgn : {1.0, -1.0}) {
                    VectorXd cand = x;
                    cand[k] += sgn * h;
                    double fc = objective(cand);
                    --budget;
                    if (fc < fx) {
                        x = cand;
                        fx = fc;
                        improved = true;
                        if (fx < best.objective) {
                            best.objective = fx;
                            best.w = x;
                            best.trace.push_back(fx);
                        }
                        break;
                    }
                    if (budget <= 0) break;
                }
            }
            if (!improved) h *= 0.5;
        }
    }
    return best;
}

struct CrossoverPoint {
    double gamma = 0.0;
    double lambda_ind = 0.0;
    double lambda_pool = 0.0;
    bool exact_condition = false;  // derived at the matched-ridge lambda pair
    bool paper_condition = false;  // displayed inequality
    bool direct_pooled_wins = false;
    double err_ind = 0.5;
    double err_pool = 0.5;
};

struct CrossoverAnalysis {
    std::vector<CrossoverPoint> points;
    std::optional<double> gamma_star;       // smallest grid gamma with the exact condition
    std::optional<double> paper_gamma_star; // analytic threshold of the displayed inequality
};

// Optimal limiting errors of the individual and pooled classifiers for
// Sigma = I, K populations at the same aspect ratio, equicorrelated rho.
// Works for any rho the signal matrix admits, not just the closed-form cases.
inline std::pair<double, double> crossover_direct_errors(int K, double gamma, double lambda_ind,
                                                         double lambda_pool, double rho,
                                                         const std::vector<double>& alpha_sq) {
    if (K < 1) throw contract_error("crossover_direct_errors: K must be positive");
    if (static_cast<int>(alpha_sq.size()) != K)
        throw contract_error("crossover_direct_errors: alpha_sq must have K entries");
    HyperParams h;
    h.alpha_sq = alpha_sq;
    h.rho = MatrixXd::Constant(K, K, rho);
    h.rho.diagonal().setOnes();
    h.provenance = Provenance::user_supplied;

    auto s_ind = mp_identity_summary(gamma, lambda_ind);
    SpectralInputs in_ind;
    in_ind.summaries.assign(static_cast<std::size_t>(K), s_ind);
    if (K > 1) in_ind.cross = MatrixXd::Constant(K, K, s_ind.m * s_ind.m);
    double err_ind = optimal_limiting_error(build_problem(WeightVariant::P_ind, h, in_ind));

    auto s_each = mp_identity_summary(gamma, lambda_pool);
    SpectralInputs in_pool;
    in_pool.summaries.assign(static_cast<std::size_t>(K), s_each);
    in_pool.pooled = mp_identity_summary(gamma / K, lambda_pool);
    in_pool.has_pooled = true;
    double err_pool = optimal_limiting_error(build_problem(WeightVariant::P_pool, h, in_pool));
    return {err_ind, err_pool};
}

// Identity-covariance crossover between the individual and pooled classifiers
// at the matched ridge pair lambda = r (gamma - 1/(r+1)),
// lambda' = r' (gamma/K - 1/(r'+1)); rho restricted to {0, 1}.
inline CrossoverAnalysis crossover_analysis(int K, const VectorXd& gamma_grid, double r,
                                            double r_prime, double rho,
                                            const std::vector<double>& alpha_sq) {
    if (K < 1) throw contract_error("crossover_analysis: K must be positive");
    if (static_cast<int>(alpha_sq.size()) != K)
        throw contract_error("crossover_analysis: alpha_sq must have K entries");
    if (rho != 0.0 && rho != 1.0)
        throw contract_error("crossover_analysis: closed-form conditions cover rho in {0, 1}");
    if (gamma_grid.size() == 0) throw contract_error("crossover_analysis: empty gamma grid");
    double a0 = alpha_sq[0];
    if (rho == 1.0)
        for (double a : alpha_sq)
            if (std::abs(a - a0) > 1e-12 * std::max(1.0, a0))
                throw contract_error("crossover_analysis: the rho = 1 exact condition assumes "
                                     "equal alpha^2 across populations");
    double sum_alpha = 0.0;
    for (double a : alpha_sq) sum_alpha += a;

    CrossoverAnalysis out;
    for (Eigen::Index gi = 0; gi < gamma_grid.size(); ++gi) {
        double gamma = gamma_grid[gi];
        if (!(gamma > 0.0)) throw contract_error("crossover_analysis: gamma must be positive");
        CrossoverPoint pt;
        pt.gamma = gamma;
        pt.lambda_ind = r * (gamma - 1.0 / (r + 1.0));
        pt.lambda_pool = r_prime * (gamma / K - 1.0 / (r_prime + 1.0));
        if (!(pt.lambda_ind > 0.0))
            throw contract_error("crossover_analysis: r must exceed (1 - gamma)+ / gamma");
        if (!(pt.lambda_pool > 0.0))
            throw contract_error("crossover_analysis: r' must exceed (K - gamma)+ / gamma");

        double onep_r = (1.0 + r) * (1.0 + r);
        double onep_rp = (1.0 + r_prime) * (1.0 + r_prime);
        if (rho == 0.0) {
            pt.exact_condition = onep_rp >= K * onep_r;
            pt.paper_condition = gamma * (onep_rp - onep_r) >= static_cast<double>(K - 1);
        } else {
            double big_g = gamma * onep_r;
            double big_gp = gamma * onep_rp;
            double kd = static_cast<double>(K);
            pt.exact_condition =
                gamma * (big_gp - kd * big_g) >= a0 * (kd * kd * big_g - kd * kd + kd - big_gp);
            pt.paper_condition =
                gamma * gamma * (onep_rp - kd * onep_r) >= kd * (big_g - 1.0) * sum_alpha;
        }

        auto errs = crossover_direct_errors(K, gamma, pt.lambda_ind, pt.lambda_pool, rho,
                                            alpha_sq);
        pt.err_ind = errs.first;
        pt.err_pool = errs.second;
        pt.direct_pooled_wins = pt.err_pool <= pt.err_ind;
        if (pt.exact_condition && !out.gamma_star) out.gamma_star = gamma;
        out.points.push_back(pt);
    }

    // Analytic threshold of the displayed inequality, when one exists.
    double onep_r = (1.0 + r) * (1.0 + r);
    double onep_rp = (1.0 + r_prime) * (1.0 + r_prime);
    if (rho == 0.0) {
        double diff = onep_rp - onep_r;
        if (diff > 0.0) out.paper_gamma_star = static_cast<double>(K - 1) / diff;
    } else {
        double kd = static_cast<double>(K);
        double qa = onep_rp - kd * onep_r;
        double qb = kd * onep_r * sum_alpha;
        double qc = kd * sum_alpha;
        if (qa > 0.0) {
            double disc = qb * qb - 4.0 * qa * qc;
            if (disc <= 0.0)
                out.paper_gamma_star = 0.0;
            else
                out.paper_gamma_star = (qb + std::sqrt(disc)) / (2.0 * qa);
        }
    }
    return out;
}

} // namespace tlrda
