#pragma once

#include "tlrda/experiments.hpp"
#include "tlrda/io.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

// Subcommand implementations for the tlrda binary. Everything is callable
// in-process; run() maps the error taxonomy onto exit codes
// (0 ok, 2 config, 3 data, 4 numerical).

namespace tlrda::cli {

namespace fs = std::filesystem;

struct CliOptions {
    fs::path config;
    fs::path out = ".";
    std::optional<std::uint64_t> seed;
    std::vector<std::string> variants;
    std::string lambda_spec; // a:b:n
    std::optional<int> folds;
    std::optional<int> reps;
};

inline WeightVariant variant_from_name(const std::string& name) {
    static const std::map<std::string, WeightVariant> table = {
        {"E_ind", WeightVariant::E_ind},   {"P_ind", WeightVariant::P_ind},
        {"E_pool", WeightVariant::E_pool}, {"P_pool", WeightVariant::P_pool},
        {"E_het", WeightVariant::E_het},   {"P_het", WeightVariant::P_het}};
    auto it = table.find(name);
    if (it == table.end()) throw contract_error("unknown variant '" + name + "'");
    return it->second;
}

// a:b:n -> n log-spaced points in [a, b]
inline VectorXd parse_lambda_spec(const std::string& spec) {
    double a = 0.0, b = 0.0;
    int n = 0;
    char tail = 0;
    if (std::sscanf(spec.c_str(), "%lf:%lf:%d%c", &a, &b, &n, &tail) != 3)
        throw contract_error("--lambda-grid expects a:b:n, got '" + spec + "'");
    if (!(a > 0.0) || b < a || n < 1)
        throw contract_error("--lambda-grid needs 0 < a <= b and n >= 1");
    return default_lambda_grid(a, b, n);
}

inline VectorXd grid_from_json(const json& j, const std::string& context, bool log_spaced) {
    if (j.is_array()) {
        if (j.empty()) throw contract_error("config: " + context + " must not be empty");
        VectorXd g(static_cast<Eigen::Index>(j.size()));
        for (std::size_t i = 0; i < j.size(); ++i) {
            if (!j[i].is_number())
                throw contract_error("config: " + context + " entries must be numbers");
            g[static_cast<Eigen::Index>(i)] = j[i].get<double>();
        }
        std::sort(g.begin(), g.end());
        if (!(g[0] > 0.0)) throw contract_error("config: " + context + " must be positive");
        return g;
    }
    if (!j.is_object())
        throw contract_error("config: " + context + " must be an array or {min,max,points}");
    reject_unknown_keys(j, {"min", "max", "points"}, context);
    double lo = j.at("min").get<double>();
    double hi = j.at("max").get<double>();
    int n = j.at("points").get<int>();
    if (!(lo > 0.0) || hi < lo || n < 1)
        throw contract_error("config: " + context + " needs 0 < min <= max and points >= 1");
    if (log_spaced) return default_lambda_grid(lo, hi, n);
    VectorXd g(n);
    for (int i = 0; i < n; ++i)
        g[i] = lo + (hi - lo) * (n == 1 ? 0.0 : static_cast<double>(i) / (n - 1));
    return g;
}

inline CovKind cov_from_json(const json& j) {
    if (!j.is_object()) throw contract_error("config: covariance spec must be an object");
    std::string type = j.value("type", "");
    CovKind kind;
    if (type == "identity") {
        reject_unknown_keys(j, {"type"}, "covariance");
        kind.type = CovType::identity;
    } else if (type == "ar1_toeplitz") {
        reject_unknown_keys(j, {"type", "t"}, "covariance");
        kind.type = CovType::ar1_toeplitz;
        kind.t = j.value("t", 0.5);
    } else if (type == "custom_eigs") {
        reject_unknown_keys(j, {"type", "eigs"}, "covariance");
        kind.type = CovType::custom_eigs;
        const auto& eigs = j.at("eigs");
        if (!eigs.is_array()) throw contract_error("config: custom_eigs needs an eigs array");
        kind.eigs.resize(static_cast<Eigen::Index>(eigs.size()));
        for (std::size_t i = 0; i < eigs.size(); ++i)
            kind.eigs[static_cast<Eigen::Index>(i)] = eigs[i].get<double>();
    } else {
        throw contract_error("config: covariance type must be identity, ar1_toeplitz or "
                             "custom_eigs, got '" + type + "'");
    }
    return kind;
}

inline std::vector<double> per_population(const json& j, int K, const std::string& context) {
    std::vector<double> out;
    if (j.is_number()) {
        out.assign(static_cast<std::size_t>(K), j.get<double>());
    } else if (j.is_array()) {
        if (static_cast<int>(j.size()) != K)
            throw contract_error("config: " + context + " must have one entry per population");
        for (const auto& v : j) out.push_back(v.get<double>());
    } else {
        throw contract_error("config: " + context + " must be a number or array");
    }
    return out;
}

inline MatrixXd rho_from_json(const json& j, int K) {
    if (j.is_number()) {
        MatrixXd rho = MatrixXd::Constant(K, K, j.get<double>());
        rho.diagonal().setOnes();
        return rho;
    }
    if (j.is_array()) {
        if (static_cast<int>(j.size()) != K)
            throw contract_error("config: rho matrix must be K x K");
        MatrixXd rho(K, K);
        for (int i = 0; i < K; ++i) {
            const auto& row = j[static_cast<std::size_t>(i)];
            if (!row.is_array() || static_cast<int>(row.size()) != K)
                throw contract_error("config: rho matrix must be K x K");
            for (int c = 0; c < K; ++c) rho(i, c) = row[static_cast<std::size_t>(c)].get<double>();
        }
        return rho;
    }
    throw contract_error("config: rho must be a number or a K x K array");
}

inline SimConfig sim_from_json(const json& j) {
    if (!j.is_object()) throw contract_error("config: sim must be an object");
    reject_unknown_keys(j,
                        {"p", "n", "alpha_sq", "rho", "cov", "heterogeneous_cov",
                         "class_balance", "stratified", "mu_bar_scale", "n_test", "seed"},
                        "sim");
    SimConfig cfg;
    cfg.p = j.at("p").get<int>();
    if (!j.contains("n") || !j["n"].is_array())
        throw contract_error("config: sim.n must be an array of sample sizes");
    for (const auto& v : j["n"]) cfg.n.push_back(v.get<int>());
    const int K = cfg.populations();
    if (K == 0) throw contract_error("config: sim.n must not be empty");
    cfg.alpha_sq = per_population(j.at("alpha_sq"), K, "sim.alpha_sq");
    cfg.rho = rho_from_json(j.at("rho"), K);
    if (j.contains("cov")) cfg.cov_kind = cov_from_json(j["cov"]);
    if (j.contains("heterogeneous_cov")) {
        const auto& het = j["heterogeneous_cov"];
        if (!het.is_array() || static_cast<int>(het.size()) != K)
            throw contract_error("config: heterogeneous_cov must list one spec per population");
        std::vector<CovKind> kinds;
        for (const auto& c : het) kinds.push_back(cov_from_json(c));
        cfg.heterogeneous_cov = std::move(kinds);
    }
    cfg.class_balance = j.contains("class_balance")
                            ? per_population(j["class_balance"], K, "sim.class_balance")
                            : std::vector<double>(static_cast<std::size_t>(K), 0.5);
    cfg.stratified = j.value("stratified", false);
    cfg.mu_bar_scale = j.value("mu_bar_scale", 0.0);
    cfg.n_test = j.value("n_test", 2000);
    cfg.seed = j.value("seed", std::uint64_t{1});
    cfg.validate();
    return cfg;
}

inline HyperParams hyper_from_json(const json& j, int K) {
    if (!j.is_object()) throw contract_error("config: hyper must be an object");
    reject_unknown_keys(j, {"alpha_sq", "rho"}, "hyper");
    HyperParams h;
    h.alpha_sq = per_population(j.at("alpha_sq"), K, "hyper.alpha_sq");
    h.rho = rho_from_json(j.at("rho"), K);
    h.provenance = Provenance::user_supplied;
    h.validate();
    return h;
}

inline std::vector<WeightVariant> resolve_variants(const json& cfg, const CliOptions& opt,
                                                   std::vector<WeightVariant> fallback) {
    std::vector<WeightVariant> out;
    if (!opt.variants.empty()) {
        for (const auto& name : opt.variants) out.push_back(variant_from_name(name));
        return out;
    }
    if (cfg.contains("variants")) {
        const auto& v = cfg["variants"];
        if (!v.is_array() || v.empty())
            throw contract_error("config: variants must be a non-empty array");
        for (const auto& name : v) out.push_back(variant_from_name(name.get<std::string>()));
        return out;
    }
    return fallback;
}

inline VectorXd resolve_lambda_grid(const json& cfg, const CliOptions& opt) {
    if (!opt.lambda_spec.empty()) return parse_lambda_spec(opt.lambda_spec);
    if (cfg.contains("lambda_grid")) return grid_from_json(cfg["lambda_grid"], "lambda_grid", true);
    return default_lambda_grid();
}

inline json vec_to_json(const VectorXd& v) {
    json a = json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
    return a;
}

inline json mat_to_json(const MatrixXd& m) {
    json rows = json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        json row = json::array();
        for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(i, c));
        rows.push_back(std::move(row));
    }
    return rows;
}

inline json hyper_to_json(const HyperParams& h) {
    return {{"alpha_sq", h.alpha_sq},
            {"rho", mat_to_json(h.rho)},
            {"provenance", h.provenance == Provenance::estimated ? "estimated" : "user_supplied"}};
}

inline json report_skeleton(const std::string& command, const json& config_echo) {
    json rep;
    rep["schema"] = "tlrda-report-v1";
    rep["command"] = command;
    rep["config_echo"] = config_echo;
    rep["hyperparams"] = nullptr;
    rep["weights"] = nullptr;
    rep["risk"] = nullptr;
    rep["experiment_tables"] = json::array();
    return rep;
}

inline void ensure_out_dir(const fs::path& out) {
    std::error_code ec;
    fs::create_directories(out, ec);
    if (ec) throw data_error("cannot create output directory " + out.string());
}

// ---------------------------------------------------------------- simulate

inline int cmd_simulate(const CliOptions& opt) {
    json cfg = read_json_config(opt.config);
    reject_unknown_keys(cfg, {"sim"}, "simulate config");
    if (!cfg.contains("sim")) throw contract_error("config: simulate needs a sim section");
    SimConfig sim = sim_from_json(cfg["sim"]);
    if (opt.seed) sim.seed = *opt.seed;
    ensure_out_dir(opt.out);

    auto deltas = draw_deltas(sim);
    const int K = sim.populations();
    Manifest manifest;
    for (int k = 0; k < K; ++k) {
        PopulationSample s = draw_population(sim, k, deltas);
        std::string name = "pop_" + std::to_string(k) + ".csv";
        write_population_csv(opt.out / name, s);
        manifest.entries.push_back({k, name, k == K - 1});
    }
    if (sim.n_test > 0) {
        write_population_csv(opt.out / "test.csv", draw_test(sim, deltas));
        manifest.test_file = "test.csv";
    } else {
        manifest.note = "no test set (n_test = 0)";
    }
    write_manifest(opt.out / "manifest.json", manifest);

    json rep = report_skeleton("simulate", cfg);
    rep["seed"] = sim.seed;
    HyperParams h;
    h.alpha_sq = sim.alpha_sq;
    h.rho = sim.rho;
    h.provenance = Provenance::user_supplied;
    rep["hyperparams"] = hyper_to_json(h);
    json files = json::array();
    for (const auto& e : manifest.entries) files.push_back(e.file);
    rep["outputs"] = {{"manifest", "manifest.json"}, {"populations", files}};
    if (manifest.test_file) rep["outputs"]["test_file"] = *manifest.test_file;
    write_json_file(opt.out / "report.json", rep);
    return 0;
}

// --------------------------------------------------------------------- fit

namespace detail {

inline PopulationSample take_rows(const PopulationSample& s, const std::vector<int>& rows) {
    PopulationSample out;
    out.population_id = s.population_id;
    out.features.resize(static_cast<Eigen::Index>(rows.size()), s.features.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        out.features.row(static_cast<Eigen::Index>(i)) =
            s.features.row(rows[i]);
        out.labels.push_back(s.labels[static_cast<std::size_t>(rows[i])]);
    }
    return out;
}

inline WeightVariant error_variant_of(WeightVariant v) {
    if (is_pooled_variant(v)) return WeightVariant::P_pool;
    if (is_het_variant(v)) return WeightVariant::P_het;
    return WeightVariant::P_ind;
}

} // namespace detail

inline int cmd_fit(const CliOptions& opt) {
    json cfg = read_json_config(opt.config);
    reject_unknown_keys(cfg, {"manifest", "sim", "variants", "lambda_grid", "lambda", "folds",
                              "hyper", "seed"},
                        "fit config");
    if (cfg.contains("manifest") == cfg.contains("sim"))
        throw contract_error("config: fit needs exactly one of manifest or sim");

    std::vector<PopulationSample> samples;
    std::optional<PopulationSample> test;
    if (cfg.contains("manifest")) {
        fs::path mpath = cfg["manifest"].get<std::string>();
        if (mpath.is_relative()) mpath = opt.config.parent_path() / mpath;
        Manifest m = read_manifest(mpath);
        samples = load_datasets(mpath);
        if (m.test_file) {
            int target_id = 0;
            for (const auto& e : m.entries)
                if (e.target) target_id = e.population_id;
            test = read_population_csv(mpath.parent_path() / *m.test_file, target_id);
        }
    } else {
        SimConfig sim = sim_from_json(cfg["sim"]);
        if (opt.seed) sim.seed = *opt.seed;
        auto deltas = draw_deltas(sim);
        for (int k = 0; k < sim.populations(); ++k)
            samples.push_back(draw_population(sim, k, deltas));
        if (sim.n_test > 0) test = draw_test(sim, deltas);
    }
    const int K = static_cast<int>(samples.size());

    std::vector<WeightVariant> variants = resolve_variants(
        cfg, opt,
        K > 1 ? std::vector<WeightVariant>{WeightVariant::P_ind, WeightVariant::E_ind,
                                           WeightVariant::P_pool, WeightVariant::E_pool}
              : std::vector<WeightVariant>{WeightVariant::P_ind});

    // fixed lambda (scalar or per-population) short-circuits cross-validation
    std::optional<VectorXd> fixed_lambda;
    if (cfg.contains("lambda")) {
        if (cfg.contains("lambda_grid") || !opt.lambda_spec.empty())
            throw contract_error("config: give either lambda or a lambda grid, not both");
        const auto& l = cfg["lambda"];
        VectorXd lam(K);
        if (l.is_number()) {
            lam.setConstant(l.get<double>());
        } else if (l.is_array() && static_cast<int>(l.size()) == K) {
            for (int k = 0; k < K; ++k) lam[k] = l[static_cast<std::size_t>(k)].get<double>();
        } else {
            throw contract_error("config: lambda must be a number or one value per population");
        }
        if (!(lam.minCoeff() > 0.0)) throw contract_error("config: lambda must be positive");
        bool uniform = (lam.array() == lam[0]).all();
        if (!uniform)
            for (WeightVariant v : variants)
                if (is_pooled_variant(v))
                    throw contract_error("config: pooled variants require a common lambda, "
                                         "but per-population lambdas differ");
        fixed_lambda = lam;
    }
    VectorXd grid = fixed_lambda ? VectorXd() : resolve_lambda_grid(cfg, opt);

    int folds = opt.folds ? *opt.folds : cfg.value("folds", 5);
    std::uint64_t seed = opt.seed ? *opt.seed : cfg.value("seed", std::uint64_t{1});

    bool need_pairs = false;
    for (WeightVariant v : variants)
        if (!is_pooled_variant(v)) need_pairs = true;
    FitState full = fit_state(samples, true, need_pairs);

    HyperParams hyper = cfg.contains("hyper") ? hyper_from_json(cfg["hyper"], K)
                                              : project_psd(estimate_hyper(full.moments));

    json rep = report_skeleton("fit", cfg);
    rep["seed"] = seed;
    rep["hyperparams"] = hyper_to_json(hyper);
    json notes = json::array();
    if (K == 1)
        notes.push_back("single population: the weight is a positive scalar and the classifier "
                        "reduces to naive RDA");

    // cross-validated error per (variant, lambda) on the target population
    const int L = fixed_lambda ? 0 : static_cast<int>(grid.size());
    std::vector<std::vector<double>> cv(static_cast<std::size_t>(variants.size()),
                                        std::vector<double>(static_cast<std::size_t>(L), 0.0));
    if (!fixed_lambda) {
        if (folds < 2) throw contract_error("config: folds must be at least 2");
        const auto& target = samples.back();
        const int n_t = static_cast<int>(target.features.rows());
        if (n_t < 2 * folds)
            throw data_error("cross-validation needs at least 2 rows per fold in the target "
                             "population");
        std::vector<int> order(static_cast<std::size_t>(n_t));
        for (int i = 0; i < n_t; ++i) order[static_cast<std::size_t>(i)] = i;
        GaussianRng rng(derive_stream(seed, 0, 0, 11));
        for (int i = n_t - 1; i > 0; --i) {
            int j = std::min(i, static_cast<int>(rng.uniform() * (i + 1)));
            std::swap(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(j)]);
        }
        for (int f = 0; f < folds; ++f) {
            std::vector<int> hold, keep;
            for (int i = 0; i < n_t; ++i)
                (i % folds == f ? hold : keep).push_back(order[static_cast<std::size_t>(i)]);
            std::vector<PopulationSample> fold_samples(samples.begin(), samples.end() - 1);
            fold_samples.push_back(detail::take_rows(target, keep));
            PopulationSample held = detail::take_rows(target, hold);
            FitState st = fit_state(fold_samples, true, need_pairs);
            for (int li = 0; li < L; ++li)
                for (std::size_t vi = 0; vi < variants.size(); ++vi) {
                    VectorXd w =
                        solve_weights(plugin_problem(variants[vi], hyper, st, grid[li])).w;
                    auto clf = combine(st, w, grid[li], is_pooled_variant(variants[vi]));
                    cv[vi][static_cast<std::size_t>(li)] +=
                        empirical_error_and_auc(clf.direction, clf.intercept, held).error / folds;
                }
        }
    }

    json weights_json, risk_json;
    for (std::size_t vi = 0; vi < variants.size(); ++vi) {
        WeightVariant v = variants[vi];
        VectorXd lambdas(K);
        json per_lambda = json::array();
        std::optional<double> cv_at_selected;
        if (fixed_lambda) {
            lambdas = *fixed_lambda;
        } else {
            int best = 0;
            for (int li = 1; li < L; ++li) // ties keep the smaller lambda
                if (cv[vi][static_cast<std::size_t>(li)] <
                    cv[vi][static_cast<std::size_t>(best)])
                    best = li;
            lambdas.setConstant(grid[best]);
            cv_at_selected = cv[vi][static_cast<std::size_t>(best)];
            for (int li = 0; li < L; ++li) {
                VectorXd w = solve_weights(plugin_problem(v, hyper, full, grid[li])).w;
                WeightProblem err =
                    plugin_problem(detail::error_variant_of(v), hyper, full, grid[li]);
                per_lambda.push_back({{"lambda", grid[li]},
                                      {"cv_error", cv[vi][static_cast<std::size_t>(li)]},
                                      {"limiting_error", limiting_error(w, err.u,
                                                                        err.A + err.R)}});
            }
        }

        TransferWeights tw = solve_weights(plugin_problem(v, hyper, full, lambdas));
        auto clf = combine(full, tw.w, lambdas, is_pooled_variant(v));
        WeightProblem err = plugin_problem(detail::error_variant_of(v), hyper, full, lambdas);

        double mean_inv_T = std::numeric_limits<double>::quiet_NaN();
        if (full.gamma_bar < 1.0 && full.pooled_spectrum)
            mean_inv_T = est_mean_inv_T(*full.pooled_spectrum, full.gamma_bar);
        RiskReport rr;
        if (std::isfinite(mean_inv_T)) {
            rr = make_risk_report(tw.w, err.u, err.A + err.R,
                                  hyper.alpha_sq[static_cast<std::size_t>(K - 1)], mean_inv_T);
        } else {
            rr.limiting_error = limiting_error(tw.w, err.u, err.A + err.R);
            rr.bayes_error = rr.theta_w = rr.theta_bayes = rr.cos_theta =
                std::numeric_limits<double>::quiet_NaN();
        }

        json wj = {{"w", vec_to_json(tw.w)},
                   {"solver_residual", tw.solver_residual},
                   {"condition_estimate", tw.condition_estimate}};
        json rj = {{"limiting_error", rr.limiting_error},
                   {"bayes_error", rr.bayes_error},
                   {"theta_w", rr.theta_w},
                   {"theta_bayes", rr.theta_bayes},
                   {"cos_theta", rr.cos_theta}};
        if (fixed_lambda) {
            wj["lambda"] = vec_to_json(lambdas);
            rj["lambda"] = vec_to_json(lambdas);
        } else {
            wj["selected_lambda"] = lambdas[0];
            rj["selected_lambda"] = lambdas[0];
            rj["cv_error"] = *cv_at_selected;
            rj["per_lambda"] = per_lambda;
        }
        if (test) {
            auto em = empirical_error_and_auc(clf.direction, clf.intercept, *test);
            rj["test_error"] = em.error;
            if (em.auc) rj["test_auc"] = *em.auc;
        }
        weights_json[variant_name(v)] = std::move(wj);
        risk_json[variant_name(v)] = std::move(rj);
    }

    rep["weights"] = std::move(weights_json);
    rep["risk"] = std::move(risk_json);
    if (!notes.empty()) rep["notes"] = notes;
    ensure_out_dir(opt.out);
    write_json_file(opt.out / "report.json", rep);
    return 0;
}

// ---------------------------------------------------------------- validate

inline int cmd_validate(const CliOptions& opt) {
    json cfg = read_json_config(opt.config);
    reject_unknown_keys(cfg, {"sim", "lambda_grid", "reps", "variants", "use_true_hyper"},
                        "validate config");
    if (!cfg.contains("sim")) throw contract_error("config: validate needs a sim section");

    ValidationConfig vc;
    vc.sim = sim_from_json(cfg["sim"]);
    if (opt.seed) vc.sim.seed = *opt.seed;
    vc.lambda_grid = resolve_lambda_grid(cfg, opt);
    vc.reps = opt.reps ? *opt.reps : cfg.value("reps", 50);
    vc.use_true_hyper = cfg.value("use_true_hyper", true);
    vc.variants = resolve_variants(cfg, opt, vc.variants);

    auto rows = validate_experiment(vc);
    ensure_out_dir(opt.out);
    {
        std::ofstream os(opt.out / "validate.csv");
        if (!os) throw data_error("cannot open " + (opt.out / "validate.csv").string());
        write_experiment_csv(os, rows);
    }

    json rep = report_skeleton("validate", cfg);
    rep["seed"] = vc.sim.seed;
    rep["effective"] = {{"reps", vc.reps}, {"lambda_grid", vec_to_json(vc.lambda_grid)}};
    HyperParams h = config_hyper(vc.sim);
    rep["hyperparams"] = hyper_to_json(h);
    rep["experiment_tables"].push_back("validate.csv");
    write_json_file(opt.out / "report.json", rep);
    return 0;
}

// --------------------------------------------------------------- crossover

inline int cmd_crossover(const CliOptions& opt) {
    json cfg = read_json_config(opt.config);
    reject_unknown_keys(cfg, {"K", "r", "r_prime", "rho", "alpha_sq", "gamma_grid"},
                        "crossover config");
    const int K = cfg.at("K").get<int>();
    if (K < 1) throw contract_error("config: K must be positive");
    const double r = cfg.at("r").get<double>();
    const double r_prime = cfg.at("r_prime").get<double>();
    const double rho = cfg.value("rho", 0.0);
    std::vector<double> alpha_sq =
        cfg.contains("alpha_sq") ? per_population(cfg["alpha_sq"], K, "alpha_sq")
                                 : std::vector<double>(static_cast<std::size_t>(K), 0.5);
    VectorXd gamma_grid = cfg.contains("gamma_grid")
                              ? grid_from_json(cfg["gamma_grid"], "gamma_grid", false)
                              : grid_from_json(json{{"min", 0.5}, {"max", 8.0}, {"points", 16}},
                                               "gamma_grid", false);

    const bool closed_form = rho == 0.0 || rho == 1.0;
    CrossoverAnalysis analysis;
    if (closed_form) {
        analysis = crossover_analysis(K, gamma_grid, r, r_prime, rho, alpha_sq);
    } else {
        // general rho: no closed-form condition, direct limiting-error sweep
        for (Eigen::Index gi = 0; gi < gamma_grid.size(); ++gi) {
            CrossoverPoint pt;
            pt.gamma = gamma_grid[gi];
            pt.lambda_ind = r * (pt.gamma - 1.0 / (r + 1.0));
            pt.lambda_pool = r_prime * (pt.gamma / K - 1.0 / (r_prime + 1.0));
            if (!(pt.lambda_ind > 0.0) || !(pt.lambda_pool > 0.0))
                throw contract_error("crossover: matched ridge pair needs positive lambdas on "
                                     "the whole gamma grid");
            auto errs = crossover_direct_errors(K, pt.gamma, pt.lambda_ind, pt.lambda_pool, rho,
                                                alpha_sq);
            pt.err_ind = errs.first;
            pt.err_pool = errs.second;
            pt.direct_pooled_wins = pt.err_pool <= pt.err_ind;
            if (pt.direct_pooled_wins && !analysis.gamma_star)
                analysis.gamma_star = pt.gamma;
            analysis.points.push_back(pt);
        }
    }

    ensure_out_dir(opt.out);
    {
        std::ofstream os(opt.out / "crossover.csv");
        if (!os) throw data_error("cannot open " + (opt.out / "crossover.csv").string());
        os << "gamma,lambda_ind,lambda_pool,exact_condition,paper_condition,"
              "direct_pooled_wins,err_ind,err_pool\n";
        os.precision(12);
        for (const auto& pt : analysis.points) {
            os << pt.gamma << ',' << pt.lambda_ind << ',' << pt.lambda_pool << ',';
            if (closed_form)
                os << (pt.exact_condition ? 1 : 0) << ',' << (pt.paper_condition ? 1 : 0) << ',';
            else
                os << "nan,nan,";
            os << (pt.direct_pooled_wins ? 1 : 0) << ',' << pt.err_ind << ',' << pt.err_pool
               << '\n';
        }
    }

    json rep = report_skeleton("crossover", cfg);
    rep["crossover"] = {{"mode", closed_form ? "closed_form" : "direct"},
                        {"gamma_star", analysis.gamma_star ? json(*analysis.gamma_star)
                                                           : json(nullptr)},
                        {"paper_gamma_star", analysis.paper_gamma_star
                                                 ? json(*analysis.paper_gamma_star)
                                                 : json(nullptr)}};
    rep["experiment_tables"].push_back("crossover.csv");
    write_json_file(opt.out / "report.json", rep);
    return 0;
}

// -------------------------------------------------------------- robustness

inline int cmd_robustness(const CliOptions& opt) {
    json cfg = read_json_config(opt.config);
    reject_unknown_keys(cfg, {"p", "n", "alpha_sq", "rho", "lambda_grid", "n_test", "reps",
                              "seed", "train_cov", "test_cov", "shift"},
                        "robustness config");
    RobustnessConfig rc;
    rc.p = cfg.value("p", 150);
    if (cfg.contains("n")) {
        rc.n.clear();
        for (const auto& v : cfg["n"]) rc.n.push_back(v.get<int>());
    }
    rc.alpha_sq = cfg.value("alpha_sq", 0.5);
    rc.rho = cfg.value("rho", 0.5);
    if (cfg.contains("lambda_grid") || !opt.lambda_spec.empty())
        rc.lambda_grid = resolve_lambda_grid(cfg, opt);
    rc.n_test = cfg.value("n_test", 2000);
    rc.reps = opt.reps ? *opt.reps : cfg.value("reps", 1);
    rc.seed = opt.seed ? *opt.seed : cfg.value("seed", std::uint64_t{1});

    CovKind train_kind;
    train_kind.type = CovType::ar1_toeplitz;
    train_kind.t = 0.5;
    if (cfg.contains("train_cov")) train_kind = cov_from_json(cfg["train_cov"]);
    MatrixXd train = covariance_of(train_kind, rc.p);

    MatrixXd test;
    if (cfg.contains("test_cov")) {
        if (cfg.contains("shift"))
            throw contract_error("config: give either test_cov or shift, not both");
        test = covariance_of(cov_from_json(cfg["test_cov"]), rc.p);
    } else {
        std::string shift = cfg.value("shift", "cubed_spectrum");
        if (shift == "cubed_spectrum")
            test = sharpen_spectrum(train);
        else if (shift == "none")
            test = train;
        else
            throw contract_error("config: shift must be cubed_spectrum or none");
    }

    auto rows = robustness_experiment(train, test, rc);
    ensure_out_dir(opt.out);
    {
        std::ofstream os(opt.out / "robustness.csv");
        if (!os) throw data_error("cannot open " + (opt.out / "robustness.csv").string());
        write_experiment_csv(os, rows);
    }

    json rep = report_skeleton("robustness", cfg);
    rep["seed"] = rc.seed;
    rep["effective"] = {{"reps", rc.reps}, {"lambda_grid", vec_to_json(rc.lambda_grid)}};
    rep["experiment_tables"].push_back("robustness.csv");
    write_json_file(opt.out / "report.json", rep);
    return 0;
}

// --------------------------------------------------------------- dispatch

inline int run(const std::vector<std::string>& args) {
    CLI::App app{"Transfer-learning regularized discriminant analysis"};
    app.require_subcommand(1);
    CliOptions opt;

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", opt.config, "JSON config file")->required();
        sub->add_option("--out", opt.out, "output directory (default .)");
        sub->add_option("--seed", opt.seed, "seed override");
    };
    CLI::App* sim = app.add_subcommand("simulate", "draw datasets and write CSVs + manifest");
    add_common(sim);
    CLI::App* fit = app.add_subcommand("fit", "fit weights with cross-validated lambda");
    add_common(fit);
    fit->add_option("--variant", opt.variants, "weight variant (repeatable)");
    fit->add_option("--lambda-grid", opt.lambda_spec, "a:b:n log-spaced grid");
    fit->add_option("--folds", opt.folds, "CV folds (default 5)");
    CLI::App* val = app.add_subcommand("validate", "theory-vs-Monte-Carlo error curves");
    add_common(val);
    val->add_option("--variant", opt.variants, "weight variant (repeatable)");
    val->add_option("--lambda-grid", opt.lambda_spec, "a:b:n log-spaced grid");
    val->add_option("--reps", opt.reps, "Monte Carlo replicates");
    CLI::App* cro = app.add_subcommand("crossover", "individual vs pooled crossover table");
    add_common(cro);
    CLI::App* rob = app.add_subcommand("robustness", "covariance-shift robustness table");
    add_common(rob);
    rob->add_option("--lambda-grid", opt.lambda_spec, "a:b:n log-spaced grid");
    rob->add_option("--reps", opt.reps, "Monte Carlo replicates");

    std::vector<const char*> argv;
    argv.reserve(args.size());
    for (const auto& a : args) argv.push_back(a.c_str());

    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (sim->parsed()) return cmd_simulate(opt);
        if (fit->parsed()) return cmd_fit(opt);
        if (val->parsed()) return cmd_validate(opt);
        if (cro->parsed()) return cmd_crossover(opt);
        if (rob->parsed()) return cmd_robustness(opt);
        std::fprintf(stderr, "no subcommand given\n");
        return 2;
    } catch (const data_error& e) {
        std::fprintf(stderr, "data error: %s\n", e.what());
        return 3;
    } catch (const numerical_error& e) {
        std::fprintf(stderr, "numerical error: %s\n", e.what());
        return 4;
    } catch (const error& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const json::exception& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }
}

} // namespace tlrda::cli
