#include <doctest.h>

#include "test_util.hpp"
#include "tlrda/experiments.hpp"

#include <algorithm>
#include <map>
#include <sstream>

using namespace tlrda;

namespace {

SimConfig small_config(int p, std::vector<int> n, double alpha_sq, double rho,
                       std::uint64_t seed) {
    SimConfig cfg;
    cfg.p = p;
    cfg.n = std::move(n);
    const int K = static_cast<int>(cfg.n.size());
    cfg.alpha_sq.assign(static_cast<std::size_t>(K), alpha_sq);
    cfg.rho = MatrixXd::Constant(K, K, rho);
    cfg.rho.diagonal().setOnes();
    cfg.class_balance.assign(static_cast<std::size_t>(K), 0.5);
    cfg.stratified = true;
    cfg.n_test = 1000;
    cfg.seed = seed;
    return cfg;
}

std::vector<PopulationSample> draw_all(const SimConfig& cfg) {
    auto deltas = draw_deltas(cfg);
    std::vector<PopulationSample> samples;
    for (int k = 0; k < cfg.populations(); ++k)
        samples.push_back(draw_population(cfg, k, deltas));
    return samples;
}

} // namespace

TEST_SUITE("experiments") {

TEST_CASE("experiment csv writer emits the schema header and all fields") {
    std::vector<ExperimentRow> rows(2);
    rows[0] = {0.5, "P_ind", 0.1, 0.11, 0.01, 8, 7};
    rows[1] = {1.5, "naive", 0.3, 0.29, 0.02, 8, 7};
    std::ostringstream os;
    write_experiment_csv(os, rows);
    std::istringstream is(os.str());
    std::string line;
    REQUIRE(std::getline(is, line));
    CHECK(line == "lambda,method,error_theory,error_mc_mean,error_mc_sd,n_reps,seed0");
    int count = 0;
    while (std::getline(is, line)) {
        ++count;
        CHECK(std::count(line.begin(), line.end(), ',') == 6);
    }
    CHECK(count == 2);
    CHECK(os.str().find("P_ind") != std::string::npos);
    CHECK(os.str().find("naive") != std::string::npos);
}

TEST_CASE("fit_state aggregates moments, spectra and the pooled view") {
    auto cfg = small_config(40, {90, 80, 70}, 0.8, 0.5, 11);
    auto samples = draw_all(cfg);
    FitState st = fit_state(samples);
    REQUIRE(st.populations() == 3);
    CHECK(st.p == 40);
    double inv = 0.0;
    for (double g : st.gamma) inv += 1.0 / g;
    CHECK(st.gamma_bar == doctest::Approx(1.0 / inv).epsilon(1e-12));
    CHECK(st.gamma[0] == doctest::Approx(40.0 / 90.0));
    REQUIRE(st.pooled_spectrum.has_value());
    CHECK(st.pooled_spectrum->aspect_gamma == doctest::Approx(st.gamma_bar));
    CHECK(st.spectra[2].eigenvalues[0] >= st.spectra[2].eigenvalues[39]);
    // pair caches exist for the upper triangle
    CHECK(st.pair_sq[static_cast<std::size_t>(st.pair_index(0, 1))].rows() == 40);
    CHECK(st.pair_mixed[static_cast<std::size_t>(st.pair_index(0, 1))].rows() == 40);
    CHECK(st.target_diag.size() == 2);
}

TEST_CASE("cached plug-in problems match dense resolvent computations") {
    const int p = 50;
    auto cfg = small_config(p, {140, 120, 100}, 0.7, 0.4, 29);
    auto samples = draw_all(cfg);
    FitState st = fit_state(samples);
    HyperParams hyper = config_hyper(cfg);
    const double lambda = 0.9;

    std::vector<MatrixXd> res;
    for (const auto& c : st.caches) res.push_back(c.resolvent(lambda));
    const MatrixXd& sig_k = st.sigma_hat_target;
    auto s_target = stieltjes_from_eigs(st.spectra[2], lambda);
    double x_hat = lambda * s_target.v;

    SpectralInputs dense;
    for (int k = 0; k < 3; ++k)
        dense.summaries.push_back(stieltjes_from_eigs(st.spectra[static_cast<std::size_t>(k)],
                                                      lambda));
    dense.cross = MatrixXd::Zero(3, 3);

    SUBCASE("estimation cross entries are plain resolvent traces") {
        for (int k = 0; k < 3; ++k)
            for (int j = k + 1; j < 3; ++j)
                dense.cross(k, j) = dense.cross(j, k) =
                    (res[static_cast<std::size_t>(k)] * res[static_cast<std::size_t>(j)])
                        .trace() / p;
        dense.mean_inv_T = est_mean_inv_T(*st.pooled_spectrum, st.gamma_bar);
        WeightProblem want = build_problem(WeightVariant::E_ind, hyper, dense);
        WeightProblem got = plugin_problem(WeightVariant::E_ind, hyper, st, lambda);
        CHECK((want.u - got.u).cwiseAbs().maxCoeff() < 1e-9);
        CHECK((want.A - got.A).cwiseAbs().maxCoeff() < 1e-9);
        CHECK((want.R - got.R).cwiseAbs().maxCoeff() < 1e-9);
    }

    SUBCASE("prediction cross entries mix the dense target-side estimator") {
        dense.cross(0, 1) = dense.cross(1, 0) = (res[0] * sig_k * res[1]).trace() / p;
        for (int k = 0; k < 2; ++k)
            dense.cross(k, 2) = dense.cross(2, k) =
                est_Y_or_M_targetside(res[static_cast<std::size_t>(k)], sig_k, lambda, x_hat);
        WeightProblem want = build_problem(WeightVariant::P_ind, hyper, dense);
        WeightProblem got = plugin_problem(WeightVariant::P_ind, hyper, st, lambda);
        CHECK((want.u - got.u).cwiseAbs().maxCoeff() < 1e-9);
        CHECK((want.A - got.A).cwiseAbs().maxCoeff() < 1e-9);
        CHECK((want.R - got.R).cwiseAbs().maxCoeff() < 1e-9);
    }

    SUBCASE("P_het source diagonals are cached target-weighted traces") {
        WeightProblem got = plugin_problem(WeightVariant::P_het, hyper, st, lambda);
        for (int k = 0; k < 2; ++k) {
            double y_kk = (res[static_cast<std::size_t>(k)] * sig_k *
                           res[static_cast<std::size_t>(k)])
                              .trace() / p;
            CHECK(got.A(k, k) ==
                  doctest::Approx(hyper.alpha_sq[static_cast<std::size_t>(k)] * y_kk)
                      .epsilon(1e-9));
        }
    }

    SUBCASE("E_het uses the target-inverse trace plug-in") {
        WeightProblem got = plugin_problem(WeightVariant::E_het, hyper, st, lambda);
        double t0 = est_trace_SigmaKinv_resolvent(sig_k, st.gamma.back(), res[0]);
        double a0 = std::sqrt(hyper.alpha_sq[0] * hyper.alpha_sq[2]);
        CHECK(got.u[0] == doctest::Approx(hyper.rho(0, 2) * a0 * t0).epsilon(1e-9));
        VectorXd w = solve_weights(got).w;
        CHECK(w.allFinite());
    }
}

TEST_CASE("plug-in weights approach the limiting weights") {
    auto cfg = small_config(300, {600, 450, 375}, 0.6, 0.5, 5);
    auto samples = draw_all(cfg);
    FitState st = fit_state(samples);
    HyperParams hyper = config_hyper(cfg);

    std::vector<double> gamma;
    for (int nk : cfg.n) gamma.push_back(300.0 / nk);
    TheoryModel tm = theory_model(MatrixXd::Identity(300, 300), gamma, hyper);
    CHECK(tm.mean_inv_T == doctest::Approx(1.0));

    for (double lambda : {0.6, 1.8}) {
        for (auto v : {WeightVariant::P_ind, WeightVariant::E_ind, WeightVariant::P_pool}) {
            VectorXd w_hat = solve_weights(plugin_problem(v, hyper, st, lambda)).w;
            VectorXd w_lim = solve_weights(theory_problem(v, tm, lambda)).w;
            CHECK((w_hat - w_lim).cwiseAbs().maxCoeff() < 0.2);
        }
    }
}

TEST_CASE("theory_problem rejects heterogeneous variants") {
    HyperParams hyper;
    hyper.alpha_sq = {0.5, 0.5};
    hyper.rho = MatrixXd::Identity(2, 2);
    hyper.provenance = Provenance::user_supplied;
    TheoryModel tm = theory_model(MatrixXd::Identity(30, 30), {0.5, 0.25}, hyper);
    CHECK_THROWS_AS(theory_problem(WeightVariant::P_het, tm, 1.0), contract_error);
    CHECK_THROWS_AS(theory_problem(WeightVariant::E_het, tm, 1.0), contract_error);
}

TEST_CASE("combine applies weights to cached directions with the target intercept") {
    auto cfg = small_config(30, {70, 60}, 0.9, 0.3, 17);
    cfg.mu_bar_scale = 1.0;
    auto samples = draw_all(cfg);
    FitState st = fit_state(samples);
    const double lambda = 0.8;
    VectorXd w(2);
    w << 0.3, 0.7;

    auto clf = combine(st, w, lambda, false);
    VectorXd want = VectorXd::Zero(30);
    for (int k = 0; k < 2; ++k) {
        MatrixXd shifted = st.moments[static_cast<std::size_t>(k)].sigma_hat;
        shifted.diagonal().array() += lambda;
        want += w[k] * shifted.ldlt().solve(st.moments[static_cast<std::size_t>(k)].delta_hat);
    }
    CHECK((clf.direction - want).cwiseAbs().maxCoeff() < 1e-9);
    MatrixXd shifted_t = st.moments[1].sigma_hat;
    shifted_t.diagonal().array() += lambda;
    VectorXd d_t = shifted_t.ldlt().solve(st.moments[1].delta_hat);
    CHECK(clf.intercept == doctest::Approx(-d_t.dot(st.moments[1].mu_bar())).epsilon(1e-9));

    auto pooled = combine(st, w, lambda, true);
    MatrixXd shifted_p = pooled_covariance(st.moments);
    shifted_p.diagonal().array() += lambda;
    Eigen::LDLT<MatrixXd> ldlt(shifted_p);
    VectorXd want_p = VectorXd::Zero(30);
    for (int k = 0; k < 2; ++k)
        want_p += w[k] * ldlt.solve(st.moments[static_cast<std::size_t>(k)].delta_hat);
    CHECK((pooled.direction - want_p).cwiseAbs().maxCoeff() < 1e-9);
    VectorXd d_tp = ldlt.solve(st.moments[1].delta_hat);
    CHECK(pooled.intercept == doctest::Approx(-d_tp.dot(st.moments[1].mu_bar())).epsilon(1e-9));

    CHECK_THROWS_AS(combine(st, VectorXd::Ones(3), lambda, false), contract_error);
}

TEST_CASE("validate_experiment tracks theory on a small grid and is deterministic") {
    ValidationConfig cfg;
    cfg.sim = small_config(100, {200, 150}, 0.8, 0.6, 3);
    cfg.lambda_grid = VectorXd(3);
    cfg.lambda_grid << 0.5, 1.5, 5.0;
    cfg.reps = 8;

    auto rows = validate_experiment(cfg);
    REQUIRE(rows.size() == 12);
    double gap = 0.0;
    for (const auto& r : rows) {
        CHECK(r.error_theory > 0.0);
        CHECK(r.error_theory < 0.5);
        CHECK(r.error_mc_mean > 0.0);
        CHECK(r.error_mc_mean < 0.5);
        CHECK(r.error_mc_sd >= 0.0);
        CHECK(r.n_reps == 8);
        gap += std::abs(r.error_theory - r.error_mc_mean);
    }
    CHECK(gap / rows.size() < 0.05);

    auto again = validate_experiment(cfg);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        CHECK(rows[i].error_mc_mean == again[i].error_mc_mean);
        CHECK(rows[i].error_mc_sd == again[i].error_mc_sd);
        CHECK(rows[i].method == again[i].method);
    }
}

TEST_CASE("validate_experiment rejects bad configs") {
    ValidationConfig cfg;
    cfg.sim = small_config(20, {50, 40}, 0.5, 0.5, 1);
    CHECK_THROWS_AS(validate_experiment(cfg), contract_error); // empty grid
    cfg.lambda_grid = default_lambda_grid(0.5, 2.0, 4);
    cfg.reps = 0;
    CHECK_THROWS_AS(validate_experiment(cfg), contract_error);
    cfg.reps = 1;
    cfg.sim.heterogeneous_cov = std::vector<CovKind>(2);
    CHECK_THROWS_AS(validate_experiment(cfg), contract_error);
}

TEST_CASE("estimation plug-ins refuse an aggregate aspect ratio at or above one") {
    auto cfg = small_config(100, {60, 30}, 0.5, 0.5, 9);
    auto samples = draw_all(cfg);
    FitState st = fit_state(samples);
    CHECK(st.gamma_bar >= 1.0);
    HyperParams hyper = config_hyper(cfg);
    CHECK_THROWS_WITH_AS(plugin_problem(WeightVariant::E_ind, hyper, st, 1.0),
                         doctest::Contains("prediction"), contract_error);
    // prediction variants still work in the singular regime
    VectorXd w = solve_weights(plugin_problem(WeightVariant::P_ind, hyper, st, 1.0)).w;
    CHECK(w.allFinite());
}

TEST_CASE("default lambda grid is log-spaced with the documented endpoints") {
    VectorXd g = default_lambda_grid();
    REQUIRE(g.size() == 30);
    CHECK(g[0] == doctest::Approx(0.3).epsilon(1e-12));
    CHECK(g[29] == doctest::Approx(10.0).epsilon(1e-12));
    double ratio = g[1] / g[0];
    for (int i = 2; i < 30; ++i) CHECK(g[i] / g[i - 1] == doctest::Approx(ratio).epsilon(1e-9));
}

TEST_CASE("sharpen_spectrum cubes eigenvalues, keeps eigenvectors and the trace") {
    GaussianRng rng(23);
    MatrixXd sigma = testutil::ar1_toeplitz(40, 0.5);
    MatrixXd sharp = sharpen_spectrum(sigma);
    CHECK(sharp.trace() == doctest::Approx(40.0).epsilon(1e-8));
    CHECK((sharp - sharp.transpose()).cwiseAbs().maxCoeff() < 1e-10);
    // same eigenvectors means the two matrices commute
    CHECK((sigma * sharp - sharp * sigma).cwiseAbs().maxCoeff() < 1e-8);
    SymEig orig = sym_eig(sigma, false);
    SymEig cubed = sym_eig(sharp, false);
    VectorXd expect = orig.values.array().cube();
    expect *= 40.0 / expect.sum();
    CHECK((cubed.values - expect).cwiseAbs().maxCoeff() < 1e-8);
    // the pairing is reversed: the training model's top direction carries the
    // smallest test variance, its bottom direction the largest
    SymEig full = sym_eig(sigma, true);
    VectorXd top = full.vectors.col(39), bottom = full.vectors.col(0);
    CHECK(top.dot(sharp * top) == doctest::Approx(expect.minCoeff()).epsilon(1e-8));
    CHECK(bottom.dot(sharp * bottom) == doctest::Approx(expect.maxCoeff()).epsilon(1e-8));
}

TEST_CASE("robustness_experiment without a shift stays close to theory") {
    RobustnessConfig cfg;
    cfg.p = 80;
    cfg.n = {160, 140, 120};
    cfg.lambda_grid = default_lambda_grid(0.5, 4.0, 5);
    cfg.n_test = 1500;
    cfg.reps = 3;
    cfg.seed = 31;
    MatrixXd sigma = testutil::ar1_toeplitz(80, 0.4);

    auto rows = robustness_experiment(sigma, sigma, cfg);
    REQUIRE(rows.size() == 15);
    double gap = 0.0;
    std::map<std::string, double> mean_err;
    for (const auto& r : rows) {
        CHECK(r.error_mc_mean > 0.0);
        CHECK(r.error_mc_mean < 0.5);
        gap += std::abs(r.error_theory - r.error_mc_mean);
        mean_err[r.method] += r.error_mc_mean / 5.0;
    }
    CHECK(gap / rows.size() < 0.06);
    // transfer should beat the target-only classifier on average here
    CHECK(mean_err["P_ind"] < mean_err["naive"] + 0.01);
    CHECK(mean_err["E_ind"] < mean_err["naive"] + 0.01);
}

TEST_CASE("robustness_experiment accepts a covariance shift and validates inputs") {
    RobustnessConfig cfg;
    cfg.p = 60;
    cfg.n = {130, 110};
    cfg.lambda_grid = default_lambda_grid(0.5, 3.0, 4);
    cfg.n_test = 800;
    cfg.reps = 2;
    cfg.seed = 47;
    MatrixXd train = testutil::ar1_toeplitz(60, 0.5);
    MatrixXd test = sharpen_spectrum(train);

    auto rows = robustness_experiment(train, test, cfg);
    REQUIRE(rows.size() == 12);
    for (const auto& r : rows) {
        CHECK(r.error_mc_mean > 0.0);
        CHECK(r.error_mc_mean < 1.0);
        CHECK(std::isfinite(r.error_theory));
    }

    CHECK_THROWS_AS(robustness_experiment(train, testutil::ar1_toeplitz(30, 0.5), cfg),
                    contract_error);
    cfg.reps = 0;
    CHECK_THROWS_AS(robustness_experiment(train, test, cfg), contract_error);
}

} // TEST_SUITE
