// Command-line front end: estimate on a CSV, run the Monte Carlo study, or
// compare two estimators with a proper SE for the difference.

#include <charconv>
#include <cstdint>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "ipwra/ipwra.hpp"

namespace {

using json = nlohmann::ordered_json;

constexpr int kSchemaVersion = 1;

double parse_num(const std::string& s, const std::string& what) {
    double v = 0.0;
    const char* b = s.data();
    const char* e = b + s.size();
    auto [p, ec] = std::from_chars(b, e, v);
    if (ec != std::errc() || p != e)
        throw ipwra::ConfigError(what + ": '" + s + "' is not a number");
    return v;
}

// Covariate term syntax: NAME[^POWER][@SHIFT][~]
//   NAME^2       square of NAME
//   NAME@25      NAME minus 25
//   NAME^2@25    (NAME - 25)^2
//   trailing ~   subtract the sample mean after the power is applied
ipwra::Term parse_term(std::string s) {
    ipwra::Term term;
    if (!s.empty() && s.back() == '~') {
        term.mean_center = true;
        s.pop_back();
    }
    if (const auto at = s.find('@'); at != std::string::npos) {
        term.shift = parse_num(s.substr(at + 1), "covariate shift");
        s = s.substr(0, at);
    }
    if (const auto caret = s.find('^'); caret != std::string::npos) {
        term.power = static_cast<int>(parse_num(s.substr(caret + 1), "covariate power"));
        s = s.substr(0, caret);
    }
    if (s.empty()) throw ipwra::ConfigError("covariate term has no column name");
    term.source = s;
    return term;
}

ipwra::CovariateTransform parse_terms(const std::vector<std::string>& specs) {
    ipwra::CovariateTransform tf;
    for (const auto& s : specs) tf.terms.push_back(parse_term(s));
    return tf;
}

std::vector<std::string> unique_sources(const ipwra::CovariateTransform& tf) {
    std::vector<std::string> out;
    for (const auto& t : tf.terms)
        if (std::find(out.begin(), out.end(), t.source) == out.end()) out.push_back(t.source);
    return out;
}

// ---------------- shared flag bundles ----------------

struct DataArgs {
    std::string data, outcome = "y", treatment = "w", instrument = "z", cluster;
    std::vector<std::string> covariates;
    std::string family = "gaussian", trials;
    std::string one_sided = "none";
    double eps = 0.01;
    double max_overlap_violation = -1.0;   // negative = no hard limit
};

void add_data_flags(CLI::App* cmd, DataArgs& a) {
    cmd->add_option("--data", a.data, "CSV file with a header row");
    cmd->add_option("--outcome", a.outcome, "outcome column (default y)");
    cmd->add_option("--treatment", a.treatment, "treatment column (default w)");
    cmd->add_option("--instrument", a.instrument, "instrument column (default z)");
    cmd->add_option("--covariates", a.covariates,
                    "covariate terms NAME[^POWER][@SHIFT][~], comma separated")
        ->delimiter(',');
    cmd->add_option("--cluster", a.cluster, "cluster id column for clustered inference");
    cmd->add_option("--family", a.family,
                    "outcome family: gaussian | bernoulli | poisson | binomial");
    cmd->add_option("--trials", a.trials, "trials column (binomial family only)");
    cmd->add_option("--one-sided", a.one_sided,
                    "none | no-always-takers (W=0 when Z=0) | no-never-takers (W=1 when Z=1)")
        ->check(CLI::IsMember({"none", "no-always-takers", "no-never-takers"}));
    cmd->add_option("--eps", a.eps, "propensity overlap margin for diagnostics (default 0.01)");
    cmd->add_option("--max-overlap-violation", a.max_overlap_violation,
                    "fail when the flagged propensity share exceeds this");
}

void overlay_data_config(const ipwra::Config& cfg, const CLI::App* cmd, DataArgs& a) {
    auto str = [&](const char* flag, const char* key, std::string& dst) {
        if (cmd->count(flag) == 0)
            if (auto v = cfg.get_string(key)) dst = *v;
    };
    str("--data", "data", a.data);
    str("--outcome", "outcome", a.outcome);
    str("--treatment", "treatment", a.treatment);
    str("--instrument", "instrument", a.instrument);
    str("--cluster", "cluster", a.cluster);
    str("--family", "family", a.family);
    str("--trials", "trials", a.trials);
    str("--one-sided", "one_sided", a.one_sided);
    if (cmd->count("--covariates") == 0)
        if (auto v = cfg.get_strings("covariates")) a.covariates = *v;
    if (cmd->count("--eps") == 0)
        if (auto v = cfg.get_number("eps")) a.eps = *v;
    if (cmd->count("--max-overlap-violation") == 0)
        if (auto v = cfg.get_number("max_overlap_violation")) a.max_overlap_violation = *v;
}

std::vector<std::string> data_config_keys() {
    return {"data",   "outcome", "treatment", "instrument", "covariates",
            "cluster", "family",  "trials",    "one_sided",  "eps",
            "max_overlap_violation"};
}

ipwra::Dataset load_from(const DataArgs& a, const ipwra::CovariateTransform& tf) {
    if (a.data.empty()) throw ipwra::ConfigError("no input: give --data or a config 'data' key");
    ipwra::Roles roles;
    roles.outcome = a.outcome;
    roles.treatment = a.treatment;
    roles.instrument = a.instrument;
    roles.covariates = unique_sources(tf);
    roles.cluster = a.cluster;
    return ipwra::load_dataset(a.data, roles);
}

ipwra::EstimOptions build_options(const DataArgs& a, const ipwra::Dataset& d,
                                  const ipwra::CovariateTransform& tf) {
    ipwra::EstimOptions o;
    o.models = ipwra::ModelSpecs::all_same(tf);
    if (a.family == "gaussian") {
        o.fam_y = ipwra::LefFamily::gaussian();
    } else if (a.family == "bernoulli") {
        o.fam_y = ipwra::LefFamily::bernoulli();
    } else if (a.family == "poisson") {
        o.fam_y = ipwra::LefFamily::poisson();
    } else if (a.family == "binomial") {
        if (a.trials.empty())
            throw ipwra::ConfigError("binomial family needs --trials COLUMN");
        o.fam_y = ipwra::LefFamily::binomial(d.col(a.trials));
    } else {
        throw ipwra::ConfigError("unknown family '" + a.family + "'");
    }
    o.known_pi0_zero = a.one_sided == "no-always-takers";
    o.known_pi1_one = a.one_sided == "no-never-takers";
    o.eps_overlap = a.eps;
    if (a.max_overlap_violation >= 0.0) o.max_overlap_violation = a.max_overlap_violation;
    return o;
}

json data_config_echo(const DataArgs& a, const std::vector<std::string>& cov_specs) {
    json j;
    j["data"] = a.data;
    j["outcome"] = a.outcome;
    j["treatment"] = a.treatment;
    j["instrument"] = a.instrument;
    j["covariates"] = cov_specs;
    j["cluster"] = a.cluster;
    j["family"] = a.family;
    if (!a.trials.empty()) j["trials"] = a.trials;
    j["one_sided"] = a.one_sided;
    j["eps"] = a.eps;
    if (a.max_overlap_violation >= 0.0) j["max_overlap_violation"] = a.max_overlap_violation;
    return j;
}

json estimate_json(const ipwra::EstimateResult& r) {
    json j;
    j["estimand"] = r.estimand;
    j["method"] = r.method;
    j["point"] = r.point;
    j["se"] = r.se ? json(*r.se) : json();
    j["ci95"] = r.ci95 ? json({(*r.ci95)[0], (*r.ci95)[1]}) : json();
    if (r.ci95_percentile)
        j["ci95_percentile"] = {(*r.ci95_percentile)[0], (*r.ci95_percentile)[1]};
    if (r.has_components) {
        json c;
        c["theta1"] = r.theta1;
        c["theta0"] = r.theta0;
        if (r.has_pi) {
            c["pi1"] = r.pi1;
            c["pi0"] = r.pi0;
        }
        j["components"] = c;
    }
    j["diagnostics"] = r.diagnostics;
    return j;
}

void emit(const json& j, const std::string& out_path) {
    const std::string text = j.dump(2) + "\n";
    std::cout << text;
    if (!out_path.empty()) {
        std::ofstream f(out_path, std::ios::binary);
        if (!f) throw ipwra::ConfigError("cannot write '" + out_path + "'");
        f << text;
    }
}

void write_file(const std::string& path, const std::string& text) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw ipwra::ConfigError("cannot write '" + path + "'");
    f << text;
}

// ---------------- estimate ----------------

struct EstimateArgs {
    DataArgs data;
    std::string method = "dr_late", se = "analytic", out, config_path;
    int boot_reps = 999;
    std::uint64_t seed = 20240901;
    bool dof_inflate = false;
};

int run_estimate(const EstimateArgs& raw, const CLI::App* cmd) {
    EstimateArgs a = raw;
    if (!a.config_path.empty()) {
        const auto cfg = ipwra::Config::parse_file(a.config_path);
        auto keys = data_config_keys();
        keys.insert(keys.end(), {"method", "se", "boot_reps", "seed", "dof_inflate", "out"});
        cfg.require_known(keys);
        overlay_data_config(cfg, cmd, a.data);
        if (cmd->count("--method") == 0)
            if (auto v = cfg.get_string("method")) a.method = *v;
        if (cmd->count("--se") == 0)
            if (auto v = cfg.get_string("se")) a.se = *v;
        if (cmd->count("--boot-reps") == 0)
            if (auto v = cfg.get_number("boot_reps")) a.boot_reps = static_cast<int>(*v);
        if (cmd->count("--seed") == 0)
            if (auto v = cfg.get_number("seed")) a.seed = static_cast<std::uint64_t>(*v);
        if (cmd->count("--dof-inflate") == 0)
            if (auto v = cfg.get_bool("dof_inflate")) a.dof_inflate = *v;
        if (cmd->count("--out") == 0)
            if (auto v = cfg.get_string("out")) a.out = *v;
    }

    const auto tf = parse_terms(a.data.covariates);
    const auto d = load_from(a.data, tf);

    ipwra::EstimatorSpec spec;
    spec.method = ipwra::parse_method(a.method);
    spec.options = build_options(a.data, d, tf);
    if (a.se == "analytic") spec.se = ipwra::SeKind::analytic;
    else if (a.se == "bootstrap") spec.se = ipwra::SeKind::bootstrap;
    else if (a.se == "none") spec.se = ipwra::SeKind::none;
    else throw ipwra::ConfigError("unknown se method '" + a.se + "'");
    spec.boot_reps = a.boot_reps;
    spec.seed = a.seed;
    spec.dof_inflate = a.dof_inflate;

    const auto result = ipwra::run_estimator(d, spec);

    json j;
    j["schema_version"] = kSchemaVersion;
    j["command"] = "estimate";
    json cfg = data_config_echo(a.data, a.data.covariates);
    cfg["method"] = a.method;
    cfg["se"] = a.se;
    cfg["boot_reps"] = a.boot_reps;
    cfg["seed"] = a.seed;
    cfg["dof_inflate"] = a.dof_inflate;
    j["config"] = cfg;
    j["result"] = estimate_json(result);
    emit(j, a.out);
    return 0;
}

// ---------------- simulate ----------------

struct SimulateArgs {
    std::string outcome_kind = "continuous";
    long long n = 1000;
    int reps = 1000;
    std::uint64_t seed = 20240901;
    long long truth_draws = 10'000'000;
    std::vector<std::string> estimators;
    std::vector<std::string> scenarios;
    std::string out, json_out, config_path;
};

void apply_dgp_config(const ipwra::Config& cfg, ipwra::DgpSpec& spec) {
    auto num = [&](const char* key, double& dst) {
        if (auto v = cfg.get_number(key)) dst = *v;
    };
    if (auto v = cfg.get_number("dgp.n")) spec.n = static_cast<Eigen::Index>(*v);
    if (auto v = cfg.get_string("dgp.outcome")) {
        if (*v == "continuous") spec.outcome_kind = ipwra::OutcomeKind::continuous;
        else if (*v == "binary") spec.outcome_kind = ipwra::OutcomeKind::binary;
        else throw ipwra::ConfigError("field 'dgp.outcome': expected continuous or binary");
    }
    if (auto v = cfg.get_number("dgp.seed")) spec.seed = static_cast<std::uint64_t>(*v);
    num("dgp.mu_age", spec.mu_age);
    num("dgp.sd_age", spec.sd_age);
    num("dgp.mu_log_income", spec.mu_log_income);
    num("dgp.sd_log_income", spec.sd_log_income);
    num("dgp.corr", spec.corr);
    num("dgp.sigma0", spec.sigma0);
    num("dgp.sigma1", spec.sigma1);
    auto vec4 = [&](const char* key, Eigen::Vector4d& dst) {
        if (auto v = cfg.get_numbers(key)) {
            if (v->size() != 4)
                throw ipwra::ConfigError(std::string("field '") + key +
                                         "': expected 4 numbers (intercept, income, age-25, "
                                         "(age-25)^2)");
            for (int i = 0; i < 4; ++i) dst[i] = (*v)[static_cast<size_t>(i)];
        }
    };
    vec4("dgp.gamma", spec.gamma);
    vec4("dgp.delta1", spec.delta1);
    vec4("dgp.y1_cont", spec.y1_cont);
    vec4("dgp.y0_cont", spec.y0_cont);
    vec4("dgp.y1_bin", spec.y1_bin);
    vec4("dgp.y0_bin", spec.y0_bin);
}

int run_simulate(const SimulateArgs& raw, const CLI::App* cmd) {
    SimulateArgs a = raw;
    ipwra::DgpSpec spec;
    if (!a.config_path.empty()) {
        const auto cfg = ipwra::Config::parse_file(a.config_path);
        cfg.require_known({"reps", "estimators", "scenarios", "truth_draws", "out", "json",
                           "dgp.n", "dgp.outcome", "dgp.seed", "dgp.mu_age", "dgp.sd_age",
                           "dgp.mu_log_income", "dgp.sd_log_income", "dgp.corr", "dgp.sigma0",
                           "dgp.sigma1", "dgp.gamma", "dgp.delta1", "dgp.y1_cont", "dgp.y0_cont",
                           "dgp.y1_bin", "dgp.y0_bin"});
        apply_dgp_config(cfg, spec);
        if (cmd->count("--reps") == 0)
            if (auto v = cfg.get_number("reps")) a.reps = static_cast<int>(*v);
        if (cmd->count("--estimators") == 0)
            if (auto v = cfg.get_strings("estimators")) a.estimators = *v;
        if (cmd->count("--scenarios") == 0)
            if (auto v = cfg.get_strings("scenarios")) a.scenarios = *v;
        if (cmd->count("--truth-draws") == 0)
            if (auto v = cfg.get_number("truth_draws")) a.truth_draws = static_cast<long long>(*v);
        if (cmd->count("--out") == 0)
            if (auto v = cfg.get_string("out")) a.out = *v;
        if (cmd->count("--json") == 0)
            if (auto v = cfg.get_string("json")) a.json_out = *v;
    }
    // command line wins over the config for the core spec fields
    if (cmd->count("--n") > 0 || a.config_path.empty()) spec.n = a.n;
    if (cmd->count("--outcome-kind") > 0 || a.config_path.empty()) {
        if (a.outcome_kind == "continuous") spec.outcome_kind = ipwra::OutcomeKind::continuous;
        else if (a.outcome_kind == "binary") spec.outcome_kind = ipwra::OutcomeKind::binary;
        else throw ipwra::ConfigError("unknown outcome kind '" + a.outcome_kind + "'");
    }
    if (cmd->count("--seed") > 0 || a.config_path.empty()) spec.seed = a.seed;

    ipwra::McOptions opt;
    opt.replications = a.reps;
    opt.truth_draws = a.truth_draws;
    if (!a.estimators.empty()) {
        opt.estimators.clear();
        for (const auto& e : a.estimators) opt.estimators.push_back(ipwra::parse_method(e));
    }
    if (!a.scenarios.empty()) {
        opt.scenarios.clear();
        for (const auto& s : a.scenarios) opt.scenarios.push_back(ipwra::parse_scenario(s));
    }

    const auto report = ipwra::run_monte_carlo(spec, opt);
    std::cout << report.to_text();
    if (!a.out.empty()) write_file(a.out, report.to_csv());
    if (!a.json_out.empty()) {
        json j;
        j["schema_version"] = kSchemaVersion;
        j["command"] = "simulate";
        json cfg;
        cfg["n"] = static_cast<long long>(report.n);
        cfg["outcome"] = report.outcome;
        cfg["seed"] = spec.seed;
        cfg["reps"] = report.replications;
        cfg["truth_draws"] = a.truth_draws;
        j["config"] = cfg;
        j["true_late"] = {{"value", report.true_value}, {"mc_se", report.true_mc_se}};
        json cells = json::array();
        for (const auto& c : report.cells) {
            json cj;
            cj["estimator"] = c.estimator;
            cj["scenario"] = c.scenario;
            cj["bias"] = c.bias;
            cj["rmse"] = c.rmse;
            cj["coverage"] = c.coverage;
            cj["mean_se"] = c.mean_se;
            cj["failures"] = c.n_failures;
            cj["reps_used"] = c.reps_used;
            cells.push_back(cj);
        }
        j["cells"] = cells;
        write_file(a.json_out, j.dump(2) + "\n");
    }
    return 0;
}

// ---------------- test (estimator comparison) ----------------

struct TestArgs {
    DataArgs data;
    std::string flavor, left, right;
    std::string se_method = "bootstrap";
    int boot_reps = 999;
    std::uint64_t seed = 20240901;
    bool allow_two_sided = false;
    std::string out, config_path;
};

int run_test(const TestArgs& raw, const CLI::App* cmd) {
    TestArgs a = raw;
    if (!a.config_path.empty()) {
        const auto cfg = ipwra::Config::parse_file(a.config_path);
        auto keys = data_config_keys();
        keys.insert(keys.end(), {"flavor", "left", "right", "se_method", "boot_reps", "seed",
                                 "allow_two_sided", "out"});
        cfg.require_known(keys);
        overlay_data_config(cfg, cmd, a.data);
        if (cmd->count("--flavor") == 0)
            if (auto v = cfg.get_string("flavor")) a.flavor = *v;
        if (cmd->count("--left") == 0)
            if (auto v = cfg.get_string("left")) a.left = *v;
        if (cmd->count("--right") == 0)
            if (auto v = cfg.get_string("right")) a.right = *v;
        if (cmd->count("--se-method") == 0)
            if (auto v = cfg.get_string("se_method")) a.se_method = *v;
        if (cmd->count("--boot-reps") == 0)
            if (auto v = cfg.get_number("boot_reps")) a.boot_reps = static_cast<int>(*v);
        if (cmd->count("--seed") == 0)
            if (auto v = cfg.get_number("seed")) a.seed = static_cast<std::uint64_t>(*v);
        if (cmd->count("--allow-two-sided") == 0)
            if (auto v = cfg.get_bool("allow_two_sided")) a.allow_two_sided = *v;
        if (cmd->count("--out") == 0)
            if (auto v = cfg.get_string("out")) a.out = *v;
    }

    if (!a.flavor.empty()) {
        if (a.flavor == "latt_vs_att") {
            a.left = "dr_latt";
            a.right = "dr_att";
        } else if (a.flavor == "late_vs_latt") {
            a.left = "dr_late";
            a.right = "dr_latt";
        } else if (a.flavor == "iv_vs_late") {
            a.left = "2sls";
            a.right = "dr_late";
        } else {
            throw ipwra::ConfigError("unknown flavor '" + a.flavor +
                                     "'; use latt_vs_att, late_vs_latt, or iv_vs_late");
        }
    }
    if (a.left.empty() || a.right.empty())
        throw ipwra::ConfigError("give --flavor, or both --left and --right methods");

    const auto tf = parse_terms(a.data.covariates);
    const auto d = load_from(a.data, tf);

    ipwra::EstimatorSpec ls, rs;
    ls.options = rs.options = build_options(a.data, d, tf);
    ls.method = ipwra::parse_method(a.left);
    rs.method = ipwra::parse_method(a.right);

    ipwra::ComparisonOptions copt;
    if (a.se_method == "bootstrap") copt.se_method = ipwra::ComparisonSe::paired_bootstrap;
    else if (a.se_method == "joint_gmm") copt.se_method = ipwra::ComparisonSe::joint_gmm;
    else throw ipwra::ConfigError("unknown se method '" + a.se_method + "'");
    copt.boot_reps = a.boot_reps;
    copt.seed = a.seed;
    copt.allow_two_sided = a.allow_two_sided;

    const auto result = ipwra::hausman_dr_test(d, ls, rs, copt);

    json j;
    j["schema_version"] = kSchemaVersion;
    j["command"] = "test";
    json cfg = data_config_echo(a.data, a.data.covariates);
    cfg["left"] = a.left;
    cfg["right"] = a.right;
    cfg["se_method"] = a.se_method;
    cfg["boot_reps"] = a.boot_reps;
    cfg["seed"] = a.seed;
    cfg["allow_two_sided"] = a.allow_two_sided;
    j["config"] = cfg;
    json r;
    r["left"] = estimate_json(result.left);
    r["right"] = estimate_json(result.right);
    r["diff"] = result.diff;
    r["se_diff"] = result.se_diff;
    r["t_stat"] = result.t_stat;
    r["p_value"] = result.p_value;
    r["method_se"] = result.method_se;
    r["boot_failed"] = result.boot_failed;
    j["result"] = r;
    emit(j, a.out);
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Doubly robust LATE/LATT/ATT/ATE estimation with stacked-moment inference"};
    app.require_subcommand(1);
    app.footer("Covariate terms: NAME[^POWER][@SHIFT][~], e.g. age^2@25 is (age-25)^2;\n"
               "a trailing ~ subtracts the sample mean after the power.\n"
               "IPWRA_THREADS limits worker threads for bootstrap and Monte Carlo loops.");

    EstimateArgs ea;
    auto* est = app.add_subcommand("estimate", "Estimate a treatment effect from a CSV");
    add_data_flags(est, ea.data);
    est->add_option("--method", ea.method,
                    "dr_late | ra_late | aipw_late | ipw_late | ipw_unnorm_late | wald | "
                    "2sls | dr_latt | dr_att | ipwra_ate");
    est->add_option("--se", ea.se, "analytic | bootstrap | none")
        ->check(CLI::IsMember({"analytic", "bootstrap", "none"}));
    est->add_option("--boot-reps", ea.boot_reps, "bootstrap replicates (default 999)");
    est->add_option("--seed", ea.seed, "RNG seed (default 20240901)");
    est->add_flag("--dof-inflate", ea.dof_inflate, "scale the sandwich variance by n/(n-p)");
    est->add_option("--out", ea.out, "write the JSON result here as well as stdout");
    est->add_option("--config", ea.config_path, "config file; command line wins");

    SimulateArgs sa;
    auto* sim = app.add_subcommand("simulate", "Run the Monte Carlo estimator comparison");
    sim->add_option("--n", sa.n, "sample size per replication (default 1000)");
    sim->add_option("--outcome-kind", sa.outcome_kind, "continuous | binary")
        ->check(CLI::IsMember({"continuous", "binary"}));
    sim->add_option("--reps", sa.reps, "replications (default 1000)");
    sim->add_option("--seed", sa.seed, "RNG seed (default 20240901)");
    sim->add_option("--truth-draws", sa.truth_draws,
                    "draws for the plug-in true value (default 1e7)");
    sim->add_option("--estimators", sa.estimators,
                    "subset of iv,ra,ipw,ipwra,aipw (default all five)")
        ->delimiter(',');
    sim->add_option("--scenarios", sa.scenarios,
                    "subset of all_correct,outcome_misspec,ps_misspec (default all)")
        ->delimiter(',');
    sim->add_option("--out", sa.out, "write the per-cell CSV here");
    sim->add_option("--json", sa.json_out, "write a JSON report here");
    sim->add_option("--config", sa.config_path, "config file with [dgp] table; command line wins");

    TestArgs ta;
    auto* tst = app.add_subcommand("test", "Compare two estimators with an SE for the difference");
    add_data_flags(tst, ta.data);
    tst->add_option("--flavor", ta.flavor, "latt_vs_att | late_vs_latt | iv_vs_late");
    tst->add_option("--left", ta.left, "left estimator (overrides --flavor)");
    tst->add_option("--right", ta.right, "right estimator (overrides --flavor)");
    tst->add_option("--se-method", ta.se_method, "bootstrap | joint_gmm")
        ->check(CLI::IsMember({"bootstrap", "joint_gmm"}));
    tst->add_option("--boot-reps", ta.boot_reps, "paired bootstrap replicates (default 999)");
    tst->add_option("--seed", ta.seed, "RNG seed (default 20240901)");
    tst->add_flag("--allow-two-sided", ta.allow_two_sided,
                  "run latt_vs_att even when noncompliance is not one-sided in-sample");
    tst->add_option("--out", ta.out, "write the JSON result here as well as stdout");
    tst->add_option("--config", ta.config_path, "config file; command line wins");

    CLI11_PARSE(app, argc, argv);

    try {
        if (est->parsed()) return run_estimate(ea, est);
        if (sim->parsed()) return run_simulate(sa, sim);
        if (tst->parsed()) return run_test(ta, tst);
    } catch (const ipwra::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "unexpected error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
