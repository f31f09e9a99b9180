#include <doctest.h>

#include "tlrda/hyper.hpp"
#include "test_util.hpp"

using namespace tlrda;

namespace {

PopulationMoments moments_with_delta(const VectorXd& delta, int n_plus, int n_minus) {
    PopulationMoments m;
    m.delta_hat = delta;
    m.mu_plus = delta;
    m.mu_minus = -delta;
    m.n_plus = n_plus;
    m.n_minus = n_minus;
    m.n_k = n_plus + n_minus;
    m.gamma_k = double(delta.size()) / m.n_k;
    return m;
}

// delta_hat for Sigma = I: true delta plus N(0, gamma_eff/p) noise per coord
VectorXd noisy_delta(GaussianRng& rng, const VectorXd& delta, double gamma_eff) {
    double sd = std::sqrt(gamma_eff / delta.size());
    return delta + sd * rng.normal_vector(static_cast<int>(delta.size()));
}

} // namespace

TEST_SUITE("hyper") {

TEST_CASE("alpha estimate clamps the pure-noise floor") {
    const int p = 100;
    auto m = moments_with_delta(VectorXd::Zero(p), 100, 100); // gamma_eff = 0.5
    CHECK(gamma_effective(m) == doctest::Approx(0.5).epsilon(1e-14));
    CHECK(estimate_alpha_sq(m) == 0.0);
}

TEST_CASE("alpha estimate is exact when noise vanishes") {
    const int p = 20;
    VectorXd delta = VectorXd::Ones(p) * 0.3;
    auto m = moments_with_delta(delta, 500000000, 500000000);
    CHECK(estimate_alpha_sq(m) == doctest::Approx(delta.squaredNorm()).epsilon(1e-8));
}

TEST_CASE("alpha estimate is unbiased in monte carlo") {
    const int p = 150;
    const double alpha_sq = 0.5;
    double acc = 0.0;
    const int seeds = 50;
    for (int seed = 0; seed < seeds; ++seed) {
        GaussianRng rng(derive_stream(61, seed));
        VectorXd delta = std::sqrt(alpha_sq / p) * rng.normal_vector(p);
        auto m = moments_with_delta(noisy_delta(rng, delta, 1.0), 75, 75);
        acc += estimate_alpha_sq(m);
    }
    CHECK(std::abs(acc / seeds - alpha_sq) < 0.1);
}

TEST_CASE("imbalance-aware debias constant") {
    const int p = 120;
    auto m = moments_with_delta(VectorXd::Zero(p), 40, 200);
    CHECK(gamma_effective(m) == doctest::Approx(120.0 * (0.25 / 40 + 0.25 / 200)).epsilon(1e-14));
}

TEST_CASE("rho on identical noiseless populations") {
    const int p = 50;
    GaussianRng rng(derive_stream(67, 0));
    VectorXd delta = rng.normal_vector(p) * 0.1;
    auto m = moments_with_delta(delta, 500000000, 500000000);
    double a2 = estimate_alpha_sq(m);
    CHECK(estimate_rho(m, m, a2, a2) == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("self correlation clips to exactly one under noise") {
    const int p = 150;
    GaussianRng rng(derive_stream(67, 1));
    VectorXd delta = std::sqrt(0.5 / p) * rng.normal_vector(p);
    auto m = moments_with_delta(noisy_delta(rng, delta, 1.0), 75, 75);
    double a2 = estimate_alpha_sq(m);
    REQUIRE(a2 > 0.0);
    // ||delta_hat||^2 / alpha_hat^2 > 1 by construction, so the clip binds
    CHECK(estimate_rho(m, m, a2, a2) == 1.0);
}

TEST_CASE("rho monte carlo calibration") {
    const int p = 150;
    const double alpha_sq = 0.5, rho = 0.5;
    double acc = 0.0, acc_indep = 0.0;
    const int seeds = 50;
    for (int seed = 0; seed < seeds; ++seed) {
        GaussianRng rng(derive_stream(71, seed));
        VectorXd z1 = rng.normal_vector(p), z2 = rng.normal_vector(p), z3 = rng.normal_vector(p);
        double sd = std::sqrt(alpha_sq / p);
        VectorXd da = sd * z1;
        VectorXd db = sd * (rho * z1 + std::sqrt(1.0 - rho * rho) * z2);
        VectorXd dc = sd * z3;
        auto ma = moments_with_delta(noisy_delta(rng, da, 1.0), 75, 75);
        auto mb = moments_with_delta(noisy_delta(rng, db, 1.0), 75, 75);
        auto mc = moments_with_delta(noisy_delta(rng, dc, 1.0), 75, 75);
        double a2a = estimate_alpha_sq(ma), a2b = estimate_alpha_sq(mb), a2c = estimate_alpha_sq(mc);
        if (a2a > 0 && a2b > 0) acc += estimate_rho(ma, mb, a2a, a2b);
        if (a2a > 0 && a2c > 0) acc_indep += estimate_rho(ma, mc, a2a, a2c);
    }
    CHECK(std::abs(acc / seeds - rho) < 0.15);
    CHECK(std::abs(acc_indep / seeds) < 0.2);
}

TEST_CASE("rho input validation") {
    auto m = moments_with_delta(VectorXd::Zero(10), 20, 20);
    CHECK_THROWS_AS(estimate_rho(m, m, 0.0, 1.0), data_error);
    auto m2 = moments_with_delta(VectorXd::Zero(11), 20, 20);
    CHECK_THROWS_AS(estimate_rho(m, m2, 1.0, 1.0), contract_error);
}

TEST_CASE("psd projection") {
    HyperParams h;
    h.alpha_sq = {0.5, 0.5};
    h.rho.resize(2, 2);
    h.rho << 1.0, 1.2, 1.2, 1.0;
    auto fixed = project_psd(h);
    CHECK(fixed.rho(0, 1) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(fixed.alpha_sq == h.alpha_sq);
    CHECK_NOTHROW(fixed.validate());

    HyperParams ok;
    ok.alpha_sq = {0.4, 0.6, 0.2};
    ok.rho.resize(3, 3);
    ok.rho << 1.0, 0.3, -0.2, 0.3, 1.0, 0.5, -0.2, 0.5, 1.0;
    auto same = project_psd(ok);
    CHECK((same.rho - ok.rho).cwiseAbs().maxCoeff() < 1e-12);

    GaussianRng rng(derive_stream(73, 0));
    HyperParams noisy;
    const int K = 6;
    noisy.alpha_sq.assign(K, 0.5);
    noisy.rho = MatrixXd::Identity(K, K);
    for (int i = 0; i < K; ++i)
        for (int j = i + 1; j < K; ++j)
            noisy.rho(i, j) = noisy.rho(j, i) = std::clamp(0.8 + 0.6 * rng.normal(), -1.0, 1.0);
    auto proj = project_psd(noisy);
    SymEig e = sym_eig(proj.signal_matrix(), false);
    CHECK(e.values[0] >= -1e-10);
    auto twice = project_psd(proj);
    CHECK((twice.rho - proj.rho).cwiseAbs().maxCoeff() < 1e-12);

    HyperParams zero;
    zero.alpha_sq = {0.0, 0.5};
    zero.rho.resize(2, 2);
    zero.rho << 1.0, 0.7, 0.7, 1.0;
    auto z = project_psd(zero);
    CHECK(z.rho(0, 1) == 0.0);
    CHECK(z.rho(0, 0) == 1.0);
}

TEST_CASE("estimate_hyper assembles and validates") {
    const int p = 150;
    GaussianRng rng(derive_stream(79, 0));
    double sd = std::sqrt(0.5 / p);
    VectorXd z1 = rng.normal_vector(p), z2 = rng.normal_vector(p);
    VectorXd da = sd * z1;
    VectorXd db = sd * (0.5 * z1 + std::sqrt(0.75) * z2);
    auto ma = moments_with_delta(noisy_delta(rng, da, 1.0), 75, 75);
    auto mb = moments_with_delta(noisy_delta(rng, db, 1.0), 75, 75);
    auto h = estimate_hyper({ma, mb});
    CHECK(h.populations() == 2);
    CHECK(h.rho(0, 1) == h.rho(1, 0));
    CHECK(h.provenance == Provenance::estimated);
    auto proj = project_psd(h);
    CHECK_NOTHROW(proj.validate());
}

} // TEST_SUITE
