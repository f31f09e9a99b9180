#pragma once

#include "tlrda/risk.hpp"
#include "tlrda/simgen.hpp"

#include <array>
#include <cmath>
#include <limits>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

// End-to-end drivers shared by the CLI and the validation experiments:
// fitted per-population state with cached eigensystems, plug-in weight
// problems, limiting (theory) counterparts, theory-vs-Monte-Carlo validation
// and the covariance-shift robustness protocol.

namespace tlrda {

struct ExperimentRow {
    double lambda = 0.0;
    std::string method;
    double error_theory = std::numeric_limits<double>::quiet_NaN();
    double error_mc_mean = std::numeric_limits<double>::quiet_NaN();
    double error_mc_sd = std::numeric_limits<double>::quiet_NaN();
    int n_reps = 0;
    std::uint64_t seed0 = 0;
};

inline void write_experiment_csv(std::ostream& os, const std::vector<ExperimentRow>& rows) {
    os << "lambda,method,error_theory,error_mc_mean,error_mc_sd,n_reps,seed0\n";
    os.precision(12);
    for (const auto& r : rows)
        os << r.lambda << ',' << r.method << ',' << r.error_theory << ',' << r.error_mc_mean
           << ',' << r.error_mc_sd << ',' << r.n_reps << ',' << r.seed0 << '\n';
}

// Everything fitted once per dataset and reused across the lambda grid.
struct FitState {
    std::vector<PopulationMoments> moments;
    std::vector<EigenCache> caches;        // per-population sample covariances
    std::vector<EigenSpectrum> spectra;    // with aspect gamma_k attached
    std::optional<EigenCache> pooled_cache;
    std::optional<EigenSpectrum> pooled_spectrum;
    std::vector<double> gamma;
    double gamma_bar = 0.0;
    int p = 0;
    MatrixXd sigma_hat_target;
    // pair caches for cross traces, triangular index k < j
    std::vector<MatrixXd> pair_sq;     // (U_k' U_j) squared elementwise
    std::vector<MatrixXd> pair_mixed;  // (U_k' U_j) .* (U_k' S_K U_j), source pairs only
    std::vector<VectorXd> target_diag; // diag(U_k' S_K U_k) per source k

    int populations() const { return static_cast<int>(moments.size()); }
    int pair_index(int k, int j) const {
        const int K = populations();
        return k * K + j;
    }
};

inline FitState fit_state(const std::vector<PopulationSample>& samples, bool with_pooled = true,
                          bool with_pairs = true) {
    if (samples.empty()) throw contract_error("fit_state: no populations");
    FitState st;
    const int K = static_cast<int>(samples.size());
    st.p = static_cast<int>(samples.front().features.cols());
    double inv_sum = 0.0;
    for (const auto& s : samples) {
        s.validate();
        if (s.features.cols() != st.p)
            throw contract_error("fit_state: populations disagree on dimension");
        st.moments.push_back(compute_moments(s));
        st.caches.emplace_back(st.moments.back().sigma_hat);
        st.gamma.push_back(st.moments.back().gamma_k);
        st.spectra.push_back(st.caches.back().spectrum(st.moments.back().gamma_k));
        inv_sum += 1.0 / st.moments.back().gamma_k;
    }
    st.gamma_bar = 1.0 / inv_sum;
    st.sigma_hat_target = st.moments.back().sigma_hat;
    if (with_pooled) {
        MatrixXd pooled = pooled_covariance(st.moments);
        st.pooled_cache.emplace(pooled);
        st.pooled_spectrum = st.pooled_cache->spectrum(st.gamma_bar);
    }
    if (with_pairs && K > 1) {
        st.pair_sq.assign(static_cast<std::size_t>(K * K), MatrixXd());
        st.pair_mixed.assign(static_cast<std::size_t>(K * K), MatrixXd());
        for (int k = 0; k < K; ++k) {
            for (int j = k + 1; j < K; ++j) {
                MatrixXd b = st.caches[static_cast<std::size_t>(k)].evecs.transpose() *
                             st.caches[static_cast<std::size_t>(j)].evecs;
                auto& sq = st.pair_sq[static_cast<std::size_t>(st.pair_index(k, j))];
                sq = b.array().square();
                if (j < K - 1) { // source-source pairs also need the target-weighted trace
                    MatrixXd c = st.caches[static_cast<std::size_t>(k)].evecs.transpose() *
                                 st.sigma_hat_target *
                                 st.caches[static_cast<std::size_t>(j)].evecs;
                    st.pair_mixed[static_cast<std::size_t>(st.pair_index(k, j))] =
                        b.array() * c.array();
                }
            }
            if (k < K - 1) {
                MatrixXd sc = st.sigma_hat_target * st.caches[static_cast<std::size_t>(k)].evecs;
                VectorXd d(st.p);
                for (int i = 0; i < st.p; ++i)
                    d[i] = st.caches[static_cast<std::size_t>(k)].evecs.col(i).dot(sc.col(i));
                st.target_diag.push_back(std::move(d));
            }
        }
    }
    return st;
}

namespace detail {

inline VectorXd resolvent_diag(const EigenCache& c, double lambda) {
    return (1.0 / (c.evals.array() + lambda)).matrix();
}

// tr[R_k R_j]/p and tr[R_k S_K R_j]/p from the cached pair products
inline double pair_trace(const MatrixXd& weighted, const VectorXd& rk, const VectorXd& rj,
                         int p) {
    return rk.dot(weighted * rj) / static_cast<double>(p);
}

} // namespace detail

// Plug-in weight problem from fitted sample quantities: sample Stieltjes
// summaries, exact pair traces for the cross terms, and the target-side
// trace identities for entries involving the target index. lambdas may vary
// per population except for pooled variants.
inline WeightProblem plugin_problem(WeightVariant variant, const HyperParams& hyper,
                                    const FitState& st, const VectorXd& lambdas) {
    const int K = st.populations();
    if (lambdas.size() != K)
        throw contract_error("plugin_problem: need one lambda per population");
    SpectralInputs in;
    for (int k = 0; k < K; ++k)
        in.summaries.push_back(
            stieltjes_from_eigs(st.spectra[static_cast<std::size_t>(k)], lambdas[k]));

    const bool est = is_estimation_variant(variant);
    if (est) {
        // E(T^-1) comes from the pooled spectrum, except E_het where only the
        // target spectrum speaks for the target covariance.
        if (variant == WeightVariant::E_het) {
            if (st.gamma.back() >= 1.0)
                throw contract_error("plugin_problem: E(T^-1) is inestimable at aspect ratio "
                                     ">= 1; use the prediction (P) variant instead");
            in.mean_inv_T = est_mean_inv_T(st.spectra.back(), st.gamma.back());
        } else {
            if (st.gamma_bar >= 1.0)
                throw contract_error("plugin_problem: E(T^-1) is inestimable at aspect ratio "
                                     ">= 1; use the prediction (P) variant instead");
            if (!st.pooled_spectrum)
                throw contract_error("plugin_problem: estimation variants need the pooled "
                                     "spectrum");
            in.mean_inv_T = est_mean_inv_T(*st.pooled_spectrum, st.gamma_bar);
        }
    }
    if (is_pooled_variant(variant)) {
        if ((lambdas.array() != lambdas[0]).any())
            throw contract_error("plugin_problem: pooled variants require a common lambda, but "
                                 "per-population lambdas differ");
        if (!st.pooled_spectrum)
            throw contract_error("plugin_problem: pooled variants need the pooled covariance");
        in.pooled = stieltjes_from_eigs(*st.pooled_spectrum, lambdas[0]);
        in.has_pooled = true;
    } else if (K > 1) {
        if (st.pair_sq.empty())
            throw contract_error("plugin_problem: fit_state was built without pair caches");
        std::vector<VectorXd> rd;
        for (int k = 0; k < K; ++k)
            rd.push_back(
                detail::resolvent_diag(st.caches[static_cast<std::size_t>(k)], lambdas[k]));
        in.cross = MatrixXd::Zero(K, K);
        const double lambda_t = lambdas[K - 1];
        double x_hat = lambda_t * in.summaries.back().v; // plug-in lambda_K v_K
        for (int k = 0; k < K; ++k)
            for (int j = k + 1; j < K; ++j) {
                const auto& sq = st.pair_sq[static_cast<std::size_t>(st.pair_index(k, j))];
                double tr_rr = detail::pair_trace(sq, rd[static_cast<std::size_t>(k)],
                                                  rd[static_cast<std::size_t>(j)], st.p);
                double value;
                if (est) {
                    value = tr_rr;
                } else if (j == K - 1) {
                    // target-involved prediction entry via the trace identity
                    value =
                        (in.summaries[static_cast<std::size_t>(k)].m - lambda_t * tr_rr) / x_hat;
                } else {
                    value = detail::pair_trace(
                        st.pair_mixed[static_cast<std::size_t>(st.pair_index(k, j))],
                        rd[static_cast<std::size_t>(k)], rd[static_cast<std::size_t>(j)], st.p);
                }
                in.cross(k, j) = in.cross(j, k) = value;
            }
        if (variant == WeightVariant::P_het)
            for (int k = 0; k < K - 1; ++k)
                in.cross(k, k) = rd[static_cast<std::size_t>(k)]
                                     .cwiseAbs2()
                                     .dot(st.target_diag[static_cast<std::size_t>(k)]) /
                                 static_cast<double>(st.p);
        if (variant == WeightVariant::E_het) {
            in.target_inv_traces = VectorXd::Zero(K);
            for (int k = 0; k < K - 1; ++k)
                in.target_inv_traces[k] = est_trace_SigmaKinv_resolvent(
                    st.sigma_hat_target, st.gamma.back(),
                    st.caches[static_cast<std::size_t>(k)].resolvent(lambdas[k]));
        }
    }
    return build_problem(variant, hyper, in);
}

inline WeightProblem plugin_problem(WeightVariant variant, const HyperParams& hyper,
                                    const FitState& st, double lambda) {
    return plugin_problem(variant, hyper, st,
                          VectorXd::Constant(st.populations(), lambda));
}

// Limiting model for a homogeneous covariance: population spectrum plus the
// per-population aspect ratios.
struct TheoryModel {
    EigenSpectrum pop_spectrum;
    double mean_inv_T = 1.0;
    std::vector<double> gamma;
    double gamma_bar = 0.0;
    HyperParams hyper;
};

inline TheoryModel theory_model(const MatrixXd& sigma, const std::vector<double>& gamma,
                                const HyperParams& hyper) {
    TheoryModel tm;
    tm.pop_spectrum = spectrum_of(sigma, 0.0);
    tm.mean_inv_T = tm.pop_spectrum.eigenvalues.cwiseInverse().mean();
    tm.gamma = gamma;
    double inv = 0.0;
    for (double g : gamma) inv += 1.0 / g;
    tm.gamma_bar = 1.0 / inv;
    tm.hyper = hyper;
    return tm;
}

inline WeightProblem theory_problem(WeightVariant variant, const TheoryModel& tm, double lambda) {
    const int K = static_cast<int>(tm.gamma.size());
    SpectralInputs in;
    for (double g : tm.gamma)
        in.summaries.push_back(theory_summary_from_H(tm.pop_spectrum, g, lambda));
    if (is_estimation_variant(variant)) in.mean_inv_T = tm.mean_inv_T;
    if (is_pooled_variant(variant)) {
        in.pooled = theory_summary_from_H(tm.pop_spectrum, tm.gamma_bar, lambda);
        in.has_pooled = true;
    } else if (K > 1) {
        in.cross = MatrixXd::Zero(K, K);
        const bool est = is_estimation_variant(variant);
        for (int k = 0; k < K; ++k)
            for (int j = k + 1; j < K; ++j) {
                const auto& sk = in.summaries[static_cast<std::size_t>(k)];
                const auto& sj = in.summaries[static_cast<std::size_t>(j)];
                double v = est ? closed_form_E(CrossCase::anisotropic, sk, sj)
                               : closed_form_M(CrossCase::anisotropic, sk, sj);
                in.cross(k, j) = in.cross(j, k) = v;
            }
        if (variant == WeightVariant::P_het || variant == WeightVariant::E_het)
            throw contract_error("theory_problem: heterogeneous variants need per-population "
                                 "covariances; homogeneous model only");
    }
    return build_problem(variant, tm.hyper, in);
}

struct CombinedClassifier {
    VectorXd direction;
    double intercept = 0.0;
};

// direction = sum_k w_k d_k with the target-population intercept; pooled
// variants run every delta through the pooled resolvent instead.
inline CombinedClassifier combine(const FitState& st, const VectorXd& w, const VectorXd& lambdas,
                                  bool pooled) {
    const int K = st.populations();
    if (w.size() != K) throw contract_error("combine: weight length mismatch");
    if (lambdas.size() != K) throw contract_error("combine: need one lambda per population");
    CombinedClassifier out;
    out.direction = VectorXd::Zero(st.p);
    const EigenCache* pooled_cache = nullptr;
    if (pooled) {
        if ((lambdas.array() != lambdas[0]).any())
            throw contract_error("combine: pooled classifiers use a common lambda");
        if (!st.pooled_cache) throw contract_error("combine: pooled cache missing");
        pooled_cache = &*st.pooled_cache;
    }
    for (int k = 0; k < K; ++k) {
        const auto& cache = pooled ? *pooled_cache : st.caches[static_cast<std::size_t>(k)];
        auto d = discriminant_direction(st.moments[static_cast<std::size_t>(k)], cache,
                                        lambdas[k], pooled);
        out.direction += w[k] * d.direction;
        if (k == K - 1) out.intercept = d.intercept; // target-population intercept
    }
    return out;
}

inline CombinedClassifier combine(const FitState& st, const VectorXd& w, double lambda,
                                  bool pooled) {
    return combine(st, w, VectorXd::Constant(st.populations(), lambda), pooled);
}

struct ValidationConfig {
    SimConfig sim;
    VectorXd lambda_grid;
    int reps = 50;
    bool use_true_hyper = true;
    std::vector<WeightVariant> variants = {WeightVariant::P_ind, WeightVariant::E_ind,
                                           WeightVariant::P_pool, WeightVariant::E_pool};
};

inline VectorXd default_lambda_grid(double lo = 0.3, double hi = 10.0, int n = 30) {
    VectorXd g(n);
    for (int i = 0; i < n; ++i)
        g[i] = std::exp(std::log(lo) + (std::log(hi) - std::log(lo)) * i /
                        std::max(1, n - 1));
    return g;
}

inline HyperParams config_hyper(const SimConfig& sim) {
    HyperParams h;
    h.alpha_sq = sim.alpha_sq;
    h.rho = sim.rho;
    h.provenance = Provenance::user_supplied;
    return h;
}

// Theory limiting error against held-out Monte Carlo error for each variant
// across the lambda grid. The Monte Carlo side re-estimates everything
// spectral from each replicate's samples; hyperparameters are taken from the
// config (or re-estimated when use_true_hyper is false).
inline std::vector<ExperimentRow> validate_experiment(const ValidationConfig& cfg) {
    cfg.sim.validate();
    if (cfg.sim.n_test < 1)
        throw contract_error("validate_experiment: Monte Carlo needs a test set");
    if (cfg.lambda_grid.size() == 0) throw contract_error("validate_experiment: empty grid");
    if (cfg.reps < 1) throw contract_error("validate_experiment: reps must be positive");
    const int K = cfg.sim.populations();
    const int L = static_cast<int>(cfg.lambda_grid.size());
    const int V = static_cast<int>(cfg.variants.size());
    if (cfg.sim.heterogeneous_cov)
        throw contract_error("validate_experiment: homogeneous covariance only");

    HyperParams true_hyper = config_hyper(cfg.sim);
    MatrixXd sigma = covariance_of(cfg.sim.cov_kind, cfg.sim.p);
    std::vector<double> gamma;
    for (int nk : cfg.sim.n)
        gamma.push_back(static_cast<double>(cfg.sim.p) / static_cast<double>(nk));
    TheoryModel tm = theory_model(sigma, gamma, true_hyper);

    // limiting errors once per (lambda, variant)
    std::vector<std::vector<double>> theory(static_cast<std::size_t>(L),
                                            std::vector<double>(static_cast<std::size_t>(V)));
    for (int li = 0; li < L; ++li) {
        double lambda = cfg.lambda_grid[li];
        WeightProblem err_ind = theory_problem(WeightVariant::P_ind, tm, lambda);
        WeightProblem err_pool = theory_problem(WeightVariant::P_pool, tm, lambda);
        for (int vi = 0; vi < V; ++vi) {
            WeightVariant v = cfg.variants[static_cast<std::size_t>(vi)];
            VectorXd w = solve_weights(theory_problem(v, tm, lambda)).w;
            const WeightProblem& err = is_pooled_variant(v) ? err_pool : err_ind;
            theory[static_cast<std::size_t>(li)][static_cast<std::size_t>(vi)] =
                limiting_error(w, err.u, err.A + err.R);
        }
    }

    // Monte Carlo replicates on derived seeds
    std::vector<std::vector<double>> sum(static_cast<std::size_t>(L),
                                         std::vector<double>(static_cast<std::size_t>(V), 0.0));
    auto sumsq = sum;
    for (int rep = 0; rep < cfg.reps; ++rep) {
        SimConfig sim = cfg.sim;
        sim.seed = derive_stream(cfg.sim.seed, static_cast<std::uint64_t>(rep) + 1, 0, 9);
        auto deltas = draw_deltas(sim);
        std::vector<PopulationSample> samples;
        for (int k = 0; k < K; ++k) samples.push_back(draw_population(sim, k, deltas));
        PopulationSample test = draw_test(sim, deltas);

        bool need_pairs = false;
        for (WeightVariant v : cfg.variants)
            if (!is_pooled_variant(v)) need_pairs = true;
        FitState st = fit_state(samples, true, need_pairs);
        HyperParams hyper =
            cfg.use_true_hyper ? true_hyper : project_psd(estimate_hyper(st.moments));

        for (int li = 0; li < L; ++li) {
            double lambda = cfg.lambda_grid[li];
            for (int vi = 0; vi < V; ++vi) {
                WeightVariant v = cfg.variants[static_cast<std::size_t>(vi)];
                VectorXd w = solve_weights(plugin_problem(v, hyper, st, lambda)).w;
                auto clf = combine(st, w, lambda, is_pooled_variant(v));
                double err = empirical_error_and_auc(clf.direction, clf.intercept, test).error;
                sum[static_cast<std::size_t>(li)][static_cast<std::size_t>(vi)] += err;
                sumsq[static_cast<std::size_t>(li)][static_cast<std::size_t>(vi)] += err * err;
            }
        }
    }

    std::vector<ExperimentRow> rows;
    for (int li = 0; li < L; ++li)
        for (int vi = 0; vi < V; ++vi) {
            ExperimentRow r;
            r.lambda = cfg.lambda_grid[li];
            r.method = variant_name(cfg.variants[static_cast<std::size_t>(vi)]);
            r.error_theory = theory[static_cast<std::size_t>(li)][static_cast<std::size_t>(vi)];
            double mean = sum[static_cast<std::size_t>(li)][static_cast<std::size_t>(vi)] /
                          cfg.reps;
            double var =
                sumsq[static_cast<std::size_t>(li)][static_cast<std::size_t>(vi)] / cfg.reps -
                mean * mean;
            r.error_mc_mean = mean;
            // a single replicate has no spread estimate; mark it rather than report 0
            r.error_mc_sd = cfg.reps > 1 ? std::sqrt(std::max(0.0, var))
                                         : std::numeric_limits<double>::quiet_NaN();
            r.n_reps = cfg.reps;
            r.seed0 = cfg.sim.seed;
            rows.push_back(r);
        }
    return rows;
}

struct RobustnessConfig {
    int p = 150;
    std::vector<int> n = {250, 232, 214, 196, 178, 160};
    double alpha_sq = 0.5;
    double rho = 0.5;
    VectorXd lambda_grid = default_lambda_grid();
    int n_test = 2000;
    int reps = 1;
    std::uint64_t seed = 1;
};

// Covariance-shift protocol: train populations share train_sigma, the target
// test set is drawn from test_sigma, and naive RDA (target only) competes
// with the estimation- and prediction-optimal combinations. The theory
// column records the unshifted prediction for reference.
inline std::vector<ExperimentRow> robustness_experiment(const MatrixXd& train_sigma,
                                                        const MatrixXd& test_sigma,
                                                        const RobustnessConfig& cfg) {
    const int K = static_cast<int>(cfg.n.size());
    const int p = cfg.p;
    if (train_sigma.rows() != p || test_sigma.rows() != p)
        throw contract_error("robustness_experiment: covariance dimension mismatch");
    if (cfg.reps < 1) throw contract_error("robustness_experiment: reps must be positive");

    SimConfig delta_cfg;
    delta_cfg.p = p;
    delta_cfg.n = cfg.n;
    delta_cfg.alpha_sq.assign(static_cast<std::size_t>(K), cfg.alpha_sq);
    delta_cfg.rho = MatrixXd::Constant(K, K, cfg.rho);
    delta_cfg.rho.diagonal().setOnes();
    delta_cfg.class_balance.assign(static_cast<std::size_t>(K), 0.5);
    delta_cfg.n_test = cfg.n_test;
    delta_cfg.stratified = true;

    HyperParams hyper = config_hyper(delta_cfg);
    std::vector<double> gamma;
    for (int nk : cfg.n) gamma.push_back(static_cast<double>(p) / nk);
    TheoryModel tm = theory_model(train_sigma, gamma, hyper);

    Eigen::LLT<MatrixXd> llt_train(train_sigma), llt_test(test_sigma);
    if (llt_train.info() != Eigen::Success || llt_test.info() != Eigen::Success)
        throw numerical_error("robustness_experiment: covariance factorization failed");
    MatrixXd f_train = llt_train.matrixL();
    MatrixXd f_test = llt_test.matrixL();

    const int L = static_cast<int>(cfg.lambda_grid.size());
    const std::vector<std::string> methods = {"naive", "E_ind", "P_ind"};
    std::vector<std::vector<double>> sum(static_cast<std::size_t>(L),
                                         std::vector<double>(3, 0.0));
    auto sumsq = sum;

    for (int rep = 0; rep < cfg.reps; ++rep) {
        SimConfig sim = delta_cfg;
        sim.seed = derive_stream(cfg.seed, static_cast<std::uint64_t>(rep) + 1, 0, 9);
        auto deltas = draw_deltas(sim);

        const VectorXd zero_mu = VectorXd::Zero(p);
        std::vector<PopulationSample> samples;
        for (int k = 0; k < K; ++k) {
            GaussianRng rng(derive_stream(sim.seed, static_cast<std::uint64_t>(k) + 1, 0, 21));
            samples.push_back(detail::draw_rows_factor(rng, cfg.n[static_cast<std::size_t>(k)],
                                                       p, 0.5, true, zero_mu,
                                                       deltas[static_cast<std::size_t>(k)],
                                                       f_train, k));
        }
        GaussianRng rng_test(derive_stream(sim.seed, static_cast<std::uint64_t>(K), 0, 22));
        PopulationSample test = detail::draw_rows_factor(rng_test, cfg.n_test, p, 0.5, true,
                                                         zero_mu, deltas.back(), f_test, K - 1);

        FitState st = fit_state(samples, true, true);
        for (int li = 0; li < L; ++li) {
            double lambda = cfg.lambda_grid[li];
            VectorXd w_naive = VectorXd::Zero(K);
            w_naive[K - 1] = 1.0;
            VectorXd w_e =
                solve_weights(plugin_problem(WeightVariant::E_ind, hyper, st, lambda)).w;
            VectorXd w_p =
                solve_weights(plugin_problem(WeightVariant::P_ind, hyper, st, lambda)).w;
            const std::array<const VectorXd*, 3> ws = {&w_naive, &w_e, &w_p};
            for (int mi = 0; mi < 3; ++mi) {
                auto clf = combine(st, *ws[static_cast<std::size_t>(mi)], lambda, false);
                double err = empirical_error_and_auc(clf.direction, clf.intercept, test).error;
                sum[static_cast<std::size_t>(li)][static_cast<std::size_t>(mi)] += err;
                sumsq[static_cast<std::size_t>(li)][static_cast<std::size_t>(mi)] += err * err;
            }
        }
    }

    std::vector<ExperimentRow> rows;
    for (int li = 0; li < L; ++li) {
        double lambda = cfg.lambda_grid[li];
        WeightProblem err_prob = theory_problem(WeightVariant::P_ind, tm, lambda);
        for (int mi = 0; mi < 3; ++mi) {
            ExperimentRow r;
            r.lambda = lambda;
            r.method = methods[static_cast<std::size_t>(mi)];
            VectorXd w;
            if (mi == 0) {
                w = VectorXd::Zero(K);
                w[K - 1] = 1.0;
            } else if (mi == 1) {
                w = solve_weights(theory_problem(WeightVariant::E_ind, tm, lambda)).w;
            } else {
                w = solve_weights(err_prob).w;
            }
            r.error_theory = limiting_error(w, err_prob.u, err_prob.A + err_prob.R);
            double mean = sum[static_cast<std::size_t>(li)][static_cast<std::size_t>(mi)] /
                          cfg.reps;
            double var =
                sumsq[static_cast<std::size_t>(li)][static_cast<std::size_t>(mi)] / cfg.reps -
                mean * mean;
            r.error_mc_mean = mean;
            r.error_mc_sd = cfg.reps > 1 ? std::sqrt(std::max(0.0, var))
                                         : std::numeric_limits<double>::quiet_NaN();
            r.n_reps = cfg.reps;
            r.seed0 = cfg.seed;
            rows.push_back(r);
        }
    }
    return rows;
}

// Shifted test covariance for the robustness protocol: eigenvalues cubed and
// renormalized to trace p, so the spectrum decays much faster than the input's,
// then paired with the eigenvectors in opposite order. The heavy test
// directions are the ones the training covariance weights least, which is the
// shift regime the estimation weights' conservative criterion guards against.
inline MatrixXd sharpen_spectrum(const MatrixXd& sigma) {
    SymEig e = sym_eig(sigma, true);
    VectorXd cubed = e.values.array().max(0.0).cube();
    cubed *= static_cast<double>(sigma.rows()) / cubed.sum();
    return e.vectors * cubed.reverse().asDiagonal() * e.vectors.transpose();
}

} // namespace tlrda
