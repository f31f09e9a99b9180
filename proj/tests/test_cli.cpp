#include <doctest.h>

#include "tlrda/cli.hpp"

#include <fstream>
#include <random>
#include <sstream>

using namespace tlrda;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        std::random_device rd;
        path = fs::temp_directory_path() /
               ("tlrda_test_" + std::to_string(rd()) + std::to_string(rd()));
        fs::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path, ec);
    }
};

void write_text(const fs::path& p, const std::string& text) {
    std::ofstream os(p);
    os << text;
}

std::string slurp(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    std::ostringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

int run_cli(std::initializer_list<std::string> args) {
    std::vector<std::string> v = {"tlrda"};
    v.insert(v.end(), args.begin(), args.end());
    return cli::run(v);
}

const char* kSimSmall = R"({
  "sim": {
    "p": 30, "n": [70, 60, 50], "alpha_sq": 0.8, "rho": 0.5,
    "cov": {"type": "ar1_toeplitz", "t": 0.5},
    "stratified": true, "n_test": 400, "seed": 7
  }
})";

} // namespace

TEST_SUITE("cli") {

TEST_CASE("population csv round trip is exact") {
    TempDir tmp;
    SimConfig cfg;
    cfg.p = 12;
    cfg.n = {40};
    cfg.alpha_sq = {0.5};
    cfg.rho = MatrixXd::Identity(1, 1);
    cfg.class_balance = {0.5};
    cfg.seed = 3;
    auto deltas = draw_deltas(cfg);
    PopulationSample s = draw_population(cfg, 0, deltas);

    write_population_csv(tmp.path / "a.csv", s);
    PopulationSample back = read_population_csv(tmp.path / "a.csv", 0);
    REQUIRE(back.features.rows() == s.features.rows());
    CHECK((back.features - s.features).cwiseAbs().maxCoeff() == 0.0);
    CHECK(back.labels == s.labels);
}

TEST_CASE("population csv reader rejects malformed input") {
    TempDir tmp;
    write_text(tmp.path / "bad_header.csv", "f1,f3,label\n1,2,1\n");
    CHECK_THROWS_AS(read_population_csv(tmp.path / "bad_header.csv", 0), data_error);
    write_text(tmp.path / "bad_label.csv", "f1,label\n1.0,2\n0.5,1\n-0.5,-1\n");
    CHECK_THROWS_AS(read_population_csv(tmp.path / "bad_label.csv", 0), data_error);
    write_text(tmp.path / "bad_cell.csv", "f1,label\nxyz,1\n0.5,-1\n1.0,1\n");
    CHECK_THROWS_AS(read_population_csv(tmp.path / "bad_cell.csv", 0), data_error);
    write_text(tmp.path / "ragged.csv", "f1,f2,label\n1,2,1\n1,-1\n0,1,-1\n");
    CHECK_THROWS_AS(read_population_csv(tmp.path / "ragged.csv", 0), data_error);
    write_text(tmp.path / "empty.csv", "f1,label\n");
    CHECK_THROWS_AS(read_population_csv(tmp.path / "empty.csv", 0), data_error);
    CHECK_THROWS_AS(read_population_csv(tmp.path / "missing.csv", 0), data_error);
}

TEST_CASE("manifest requires exactly one target") {
    TempDir tmp;
    Manifest m;
    m.entries.push_back({0, "a.csv", false});
    m.entries.push_back({1, "b.csv", false});
    write_manifest(tmp.path / "m0.json", m);
    CHECK_THROWS_AS(read_manifest(tmp.path / "m0.json"), data_error);
    m.entries[0].target = m.entries[1].target = true;
    write_manifest(tmp.path / "m2.json", m);
    CHECK_THROWS_AS(read_manifest(tmp.path / "m2.json"), data_error);
    m.entries[0].target = false;
    write_manifest(tmp.path / "m1.json", m);
    Manifest back = read_manifest(tmp.path / "m1.json");
    CHECK(back.entries.size() == 2);
    CHECK(back.entries[1].target);
    CHECK_FALSE(back.test_file.has_value());
}

TEST_CASE("simulate writes datasets that ingest losslessly") {
    TempDir tmp;
    write_text(tmp.path / "sim.json", kSimSmall);
    REQUIRE(run_cli({"simulate", "--config", (tmp.path / "sim.json").string(), "--out",
                     (tmp.path / "data").string()}) == 0);
    CHECK(fs::exists(tmp.path / "data/pop_0.csv"));
    CHECK(fs::exists(tmp.path / "data/pop_2.csv"));
    CHECK(fs::exists(tmp.path / "data/test.csv"));
    CHECK(fs::exists(tmp.path / "data/report.json"));

    auto samples = load_datasets(tmp.path / "data/manifest.json");
    REQUIRE(samples.size() == 3);

    json simcfg = json::parse(std::string(kSimSmall))["sim"];
    SimConfig cfg = cli::sim_from_json(simcfg);
    auto deltas = draw_deltas(cfg);
    for (int k = 0; k < 3; ++k) {
        PopulationSample mem = draw_population(cfg, k, deltas);
        auto m_file = compute_moments(samples[static_cast<std::size_t>(k)]);
        auto m_mem = compute_moments(mem);
        CHECK((m_file.delta_hat - m_mem.delta_hat).cwiseAbs().maxCoeff() < 1e-12);
        CHECK((m_file.sigma_hat - m_mem.sigma_hat).cwiseAbs().maxCoeff() < 1e-12);
    }
}

TEST_CASE("simulate is deterministic and honors n_test = 0") {
    TempDir tmp;
    write_text(tmp.path / "sim.json", kSimSmall);
    REQUIRE(run_cli({"simulate", "--config", (tmp.path / "sim.json").string(), "--out",
                     (tmp.path / "a").string()}) == 0);
    REQUIRE(run_cli({"simulate", "--config", (tmp.path / "sim.json").string(), "--out",
                     (tmp.path / "b").string()}) == 0);
    for (const char* name : {"pop_0.csv", "pop_1.csv", "pop_2.csv", "test.csv", "manifest.json",
                             "report.json"})
        CHECK(slurp(tmp.path / "a" / name) == slurp(tmp.path / "b" / name));

    // a different seed changes the data
    REQUIRE(run_cli({"simulate", "--config", (tmp.path / "sim.json").string(), "--seed", "8",
                     "--out", (tmp.path / "c").string()}) == 0);
    CHECK(slurp(tmp.path / "a/pop_0.csv") != slurp(tmp.path / "c/pop_0.csv"));

    write_text(tmp.path / "no_test.json", R"({
      "sim": {"p": 10, "n": [30], "alpha_sq": 0.5, "rho": 1.0, "n_test": 0, "seed": 2}
    })");
    REQUIRE(run_cli({"simulate", "--config", (tmp.path / "no_test.json").string(), "--out",
                     (tmp.path / "d").string()}) == 0);
    CHECK_FALSE(fs::exists(tmp.path / "d/test.csv"));
    Manifest m = read_manifest(tmp.path / "d/manifest.json");
    CHECK_FALSE(m.test_file.has_value());
    CHECK(m.note.find("no test set") != std::string::npos);
}

TEST_CASE("fit selects lambda by cross-validation with the tie rule") {
    TempDir tmp;
    write_text(tmp.path / "sim.json", kSimSmall);
    REQUIRE(run_cli({"simulate", "--config", (tmp.path / "sim.json").string(), "--out",
                     (tmp.path / "data").string()}) == 0);
    write_text(tmp.path / "fit.json", R"({
      "manifest": "data/manifest.json",
      "variants": ["P_ind", "E_ind", "P_pool"],
      "lambda_grid": {"min": 0.5, "max": 4.0, "points": 5},
      "folds": 4, "seed": 3
    })");
    REQUIRE(run_cli({"fit", "--config", (tmp.path / "fit.json").string(), "--out",
                     (tmp.path / "fit").string()}) == 0);

    json rep = json::parse(slurp(tmp.path / "fit/report.json"));
    CHECK(rep["schema"] == "tlrda-report-v1");
    CHECK(rep["hyperparams"]["provenance"] == "estimated");
    for (const char* v : {"P_ind", "E_ind", "P_pool"}) {
        const auto& risk = rep["risk"][v];
        const auto& grid = risk["per_lambda"];
        REQUIRE(grid.size() == 5);
        double sel = risk["selected_lambda"].get<double>();
        // selected lambda attains the minimum cv error, first from below
        double best = 1e9;
        double best_lambda = 0.0;
        for (const auto& row : grid) {
            double cv = row["cv_error"].get<double>();
            if (cv < best) {
                best = cv;
                best_lambda = row["lambda"].get<double>();
            }
            CHECK(std::isfinite(row["limiting_error"].get<double>()));
        }
        CHECK(sel == doctest::Approx(best_lambda).epsilon(1e-12));
        CHECK(risk["cv_error"].get<double>() == doctest::Approx(best).epsilon(1e-12));
        CHECK(risk["test_error"].get<double>() >= 0.0);
        const auto& w = rep["weights"][v]["w"];
        REQUIRE(w.size() == 3);
        for (const auto& x : w) CHECK(std::isfinite(x.get<double>()));
    }

    // deterministic report
    REQUIRE(run_cli({"fit", "--config", (tmp.path / "fit.json").string(), "--out",
                     (tmp.path / "fit2").string()}) == 0);
    CHECK(slurp(tmp.path / "fit/report.json") == slurp(tmp.path / "fit2/report.json"));
}

TEST_CASE("fit accepts user hyperparameters and per-population lambdas") {
    TempDir tmp;
    write_text(tmp.path / "sim.json", kSimSmall);
    REQUIRE(run_cli({"simulate", "--config", (tmp.path / "sim.json").string(), "--out",
                     (tmp.path / "data").string()}) == 0);

    write_text(tmp.path / "fit.json", R"({
      "manifest": "data/manifest.json",
      "variants": ["P_ind", "E_ind"],
      "lambda": [0.6, 0.9, 1.4],
      "hyper": {"alpha_sq": [0.8, 0.8, 0.8], "rho": 0.5}
    })");
    REQUIRE(run_cli({"fit", "--config", (tmp.path / "fit.json").string(), "--out",
                     (tmp.path / "fit").string()}) == 0);
    json rep = json::parse(slurp(tmp.path / "fit/report.json"));
    CHECK(rep["hyperparams"]["provenance"] == "user_supplied");
    CHECK(rep["hyperparams"]["alpha_sq"][0] == 0.8);
    REQUIRE(rep["weights"]["P_ind"]["lambda"].size() == 3);
    CHECK(rep["weights"]["P_ind"]["lambda"][2] == 1.4);
    CHECK_FALSE(rep["risk"]["P_ind"].contains("per_lambda"));

    // pooled variants cannot take distinct per-population lambdas
    write_text(tmp.path / "bad.json", R"({
      "manifest": "data/manifest.json",
      "variants": ["P_pool"],
      "lambda": [0.6, 0.9, 1.4]
    })");
    CHECK(run_cli({"fit", "--config", (tmp.path / "bad.json").string(), "--out",
                   (tmp.path / "x").string()}) == 2);
}

TEST_CASE("fit on a single population notes the naive reduction") {
    TempDir tmp;
    write_text(tmp.path / "sim.json", R"({
      "sim": {"p": 20, "n": [80], "alpha_sq": 0.9, "rho": 1.0, "n_test": 200,
              "stratified": true, "seed": 5}
    })");
    REQUIRE(run_cli({"simulate", "--config", (tmp.path / "sim.json").string(), "--out",
                     (tmp.path / "data").string()}) == 0);
    write_text(tmp.path / "fit.json", R"({
      "manifest": "data/manifest.json",
      "lambda_grid": {"min": 0.5, "max": 2.0, "points": 3}
    })");
    REQUIRE(run_cli({"fit", "--config", (tmp.path / "fit.json").string(), "--out",
                     (tmp.path / "fit").string()}) == 0);
    json rep = json::parse(slurp(tmp.path / "fit/report.json"));
    REQUIRE(rep.contains("notes"));
    CHECK(rep["notes"][0].get<std::string>().find("naive RDA") != std::string::npos);
    REQUIRE(rep["weights"]["P_ind"]["w"].size() == 1);
    CHECK(rep["weights"]["P_ind"]["w"][0].get<double>() > 0.0);
}

TEST_CASE("validate emits the experiment table and marks single-replicate sd") {
    TempDir tmp;
    write_text(tmp.path / "val.json", R"({
      "sim": {"p": 40, "n": [100, 80], "alpha_sq": 0.6, "rho": 0.5, "n_test": 300,
              "stratified": true, "seed": 5},
      "lambda_grid": [0.5, 1.5],
      "reps": 1,
      "variants": ["P_ind", "P_pool"]
    })");
    REQUIRE(run_cli({"validate", "--config", (tmp.path / "val.json").string(), "--out",
                     (tmp.path / "out").string()}) == 0);
    std::string csv = slurp(tmp.path / "out/validate.csv");
    std::istringstream is(csv);
    std::string line;
    std::getline(is, line);
    CHECK(line == "lambda,method,error_theory,error_mc_mean,error_mc_sd,n_reps,seed0");
    int rows = 0;
    while (std::getline(is, line))
        if (!line.empty()) {
            ++rows;
            CHECK(line.find("nan") != std::string::npos); // sd marked for reps=1
        }
    CHECK(rows == 4);
    json rep = json::parse(slurp(tmp.path / "out/report.json"));
    CHECK(rep["experiment_tables"][0] == "validate.csv");

    // --reps flag overrides the config
    REQUIRE(run_cli({"validate", "--config", (tmp.path / "val.json").string(), "--reps", "2",
                     "--out", (tmp.path / "out2").string()}) == 0);
    CHECK(slurp(tmp.path / "out2/validate.csv").find("nan") == std::string::npos);
}

TEST_CASE("crossover emits closed-form and direct sweeps") {
    TempDir tmp;
    write_text(tmp.path / "c0.json", R"({
      "K": 2, "r": 1.5, "r_prime": 4.0, "rho": 0,
      "gamma_grid": {"min": 0.5, "max": 8, "points": 6}
    })");
    REQUIRE(run_cli({"crossover", "--config", (tmp.path / "c0.json").string(), "--out",
                     (tmp.path / "c0").string()}) == 0);
    json rep = json::parse(slurp(tmp.path / "c0/report.json"));
    CHECK(rep["crossover"]["mode"] == "closed_form");
    CHECK(rep["crossover"]["gamma_star"].get<double>() == doctest::Approx(0.5));
    CHECK(rep["crossover"]["paper_gamma_star"].is_number());
    std::string csv = slurp(tmp.path / "c0/crossover.csv");
    CHECK(csv.find("gamma,lambda_ind,lambda_pool,exact_condition") == 0);
    CHECK(csv.find("nan") == std::string::npos);

    // general rho falls back to the direct limiting-error sweep
    write_text(tmp.path / "c5.json", R"({
      "K": 2, "r": 1.5, "r_prime": 4.0, "rho": 0.5,
      "gamma_grid": {"min": 0.5, "max": 8, "points": 6}
    })");
    REQUIRE(run_cli({"crossover", "--config", (tmp.path / "c5.json").string(), "--out",
                     (tmp.path / "c5").string()}) == 0);
    json rep5 = json::parse(slurp(tmp.path / "c5/report.json"));
    CHECK(rep5["crossover"]["mode"] == "direct");
    CHECK(rep5["crossover"]["paper_gamma_star"].is_null());
    std::string csv5 = slurp(tmp.path / "c5/crossover.csv");
    CHECK(csv5.find("nan,nan") != std::string::npos);
}

TEST_CASE("robustness emits one row per method and lambda") {
    TempDir tmp;
    write_text(tmp.path / "rob.json", R"({
      "p": 40, "n": [90, 70], "alpha_sq": 0.5, "rho": 0.5,
      "lambda_grid": {"min": 0.5, "max": 2.0, "points": 3},
      "n_test": 300, "reps": 2, "seed": 11
    })");
    REQUIRE(run_cli({"robustness", "--config", (tmp.path / "rob.json").string(), "--out",
                     (tmp.path / "out").string()}) == 0);
    std::string csv = slurp(tmp.path / "out/robustness.csv");
    std::istringstream is(csv);
    std::string line;
    std::getline(is, line);
    int rows = 0, naive = 0;
    while (std::getline(is, line))
        if (!line.empty()) {
            ++rows;
            if (line.find("naive") != std::string::npos) ++naive;
        }
    CHECK(rows == 9);
    CHECK(naive == 3);
}

TEST_CASE("exit codes follow the error taxonomy") {
    TempDir tmp;
    // unknown config key -> config error
    write_text(tmp.path / "bad.json", R"({"sim": {"p": 10, "n": [30], "alpha_sq": 0.5,
      "rho": 1.0, "typo": 1}})");
    CHECK(run_cli({"simulate", "--config", (tmp.path / "bad.json").string(), "--out",
                   (tmp.path / "x").string()}) == 2);
    // missing config file -> config error
    CHECK(run_cli({"fit", "--config", (tmp.path / "missing.json").string()}) == 2);
    // malformed JSON -> config error
    write_text(tmp.path / "broken.json", "{not json");
    CHECK(run_cli({"simulate", "--config", (tmp.path / "broken.json").string()}) == 2);
    // missing dataset file -> data error
    write_text(tmp.path / "m.json", R"({"schema": "tlrda-manifest-v1", "populations":
      [{"population_id": 0, "file": "ghost.csv", "target": true}]})");
    write_text(tmp.path / "fit.json",
               std::string(R"({"manifest": "m.json", "lambda": 1.0})"));
    CHECK(run_cli({"fit", "--config", (tmp.path / "fit.json").string(), "--out",
                   (tmp.path / "x").string()}) == 3);
    // bad flag usage -> config error
    write_text(tmp.path / "fit_sim.json", R"({"sim": {"p": 10, "n": [60], "alpha_sq": 0.5,
      "rho": 1.0, "n_test": 0, "seed": 1}})");
    CHECK(run_cli({"fit", "--config", (tmp.path / "fit_sim.json").string(), "--lambda-grid",
                   "oops", "--out", (tmp.path / "x").string()}) == 2);
    // no subcommand -> config error
    CHECK(cli::run({"tlrda"}) == 2);
}

TEST_CASE("lambda grid parsing") {
    VectorXd g = cli::parse_lambda_spec("0.5:2:4");
    REQUIRE(g.size() == 4);
    CHECK(g[0] == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(g[3] == doctest::Approx(2.0).epsilon(1e-12));
    CHECK(g[1] / g[0] == doctest::Approx(g[2] / g[1]).epsilon(1e-9));
    CHECK_THROWS_AS(cli::parse_lambda_spec("1:2"), contract_error);
    CHECK_THROWS_AS(cli::parse_lambda_spec("-1:2:3"), contract_error);
    CHECK_THROWS_AS(cli::parse_lambda_spec("2:1:3"), contract_error);

    VectorXd arr = cli::grid_from_json(json::parse("[2.0, 0.5, 1.0]"), "g", true);
    REQUIRE(arr.size() == 3);
    CHECK(arr[0] == 0.5); // sorted ascending
    CHECK(arr[2] == 2.0);
    VectorXd lin = cli::grid_from_json(json::parse(R"({"min": 1, "max": 3, "points": 3})"),
                                       "g", false);
    CHECK(lin[1] == doctest::Approx(2.0)); // linear spacing
    CHECK_THROWS_AS(cli::grid_from_json(json::parse(R"({"min": 1, "max": 3})"), "g", false),
                    json::exception);
}

} // TEST_SUITE
