// Data-generating-process checks and the Monte Carlo harness: reproducible
// streams, structural invariants, calibration of the assignment probability,
// the plug-in target value, and the report plumbing.

#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <vector>

#include "helpers.hpp"
#include "ipwra/simulate.hpp"

using namespace ipwra;

TEST_CASE("sample generation is deterministic and stream-separated") {
    DgpSpec spec;
    spec.n = 400;
    const Dataset a = generate_sample(spec, 3);
    const Dataset b = generate_sample(spec, 3);
    CHECK(a.values() == b.values());

    const Dataset c = generate_sample(spec, 4);
    CHECK(a.values() != c.values());

    DgpSpec other = spec;
    other.seed = spec.seed + 1;
    CHECK(generate_sample(other, 3).values() != a.values());
}

TEST_CASE("structural invariants of the generated data") {
    DgpSpec spec;
    spec.n = 2000;
    for (const OutcomeKind kind : {OutcomeKind::continuous, OutcomeKind::binary}) {
        spec.outcome_kind = kind;
        const Dataset d = generate_sample(spec, 1);
        const auto z = d.instrument(), w = d.treatment(), y = d.outcome();
        const Eigen::VectorXd income = d.col("income"), age = d.col("age"),
                              agesq = d.col("agesq");
        for (Eigen::Index i = 0; i < spec.n; ++i) {
            CHECK((z[i] == 0.0 || z[i] == 1.0));
            CHECK((w[i] == 0.0 || w[i] == 1.0));
            if (z[i] == 0.0) REQUIRE(w[i] == 0.0);   // one-sided by construction
            CHECK(income[i] > 0.0);
            CHECK(agesq[i] == age[i] * age[i]);
            if (kind == OutcomeKind::binary) CHECK((y[i] == 0.0 || y[i] == 1.0));
        }
        CHECK(d.roles().covariates == std::vector<std::string>{"income", "age", "agesq"});
    }
}

TEST_CASE("covariates and assignment are shared across outcome kinds") {
    DgpSpec spec;
    spec.n = 500;
    spec.outcome_kind = OutcomeKind::continuous;
    const Dataset cont = generate_sample(spec, 9);
    spec.outcome_kind = OutcomeKind::binary;
    const Dataset bin = generate_sample(spec, 9);
    for (const char* colname : {"income", "age", "agesq", "z", "w"})
        CHECK(cont.col(colname) == bin.col(colname));
    CHECK(cont.col("y") != bin.col("y"));
}

TEST_CASE("instrument take-up matches its generating probability by decile") {
    DgpSpec spec;
    spec.n = 100000;
    const Dataset d = generate_sample(spec, 2);
    const Eigen::VectorXd income = d.col("income"), age = d.col("age");
    const auto z = d.instrument();

    std::vector<std::pair<double, double>> pz(static_cast<size_t>(spec.n));
    for (Eigen::Index i = 0; i < spec.n; ++i) {
        const double am = age[i] - 25.0;
        const double p = logistic(spec.gamma[0] + spec.gamma[1] * income[i] +
                                  spec.gamma[2] * am + spec.gamma[3] * am * am);
        pz[static_cast<size_t>(i)] = {p, z[i]};
    }
    std::sort(pz.begin(), pz.end());
    const size_t bin = pz.size() / 10;
    for (int b = 0; b < 10; ++b) {
        double psum = 0.0, zsum = 0.0;
        for (size_t i = static_cast<size_t>(b) * bin; i < static_cast<size_t>(b + 1) * bin; ++i) {
            psum += pz[i].first;
            zsum += pz[i].second;
        }
        const double pbar = psum / static_cast<double>(bin);
        const double zbar = zsum / static_cast<double>(bin);
        const double se = std::sqrt(pbar * (1.0 - pbar) / static_cast<double>(bin));
        INFO("decile " << b << ": model " << pbar << " empirical " << zbar);
        CHECK(std::fabs(zbar - pbar) <= 4.0 * se + 1e-6);
    }
}

TEST_CASE("the plug-in target hits its calibrated values") {
    DgpSpec spec;
    SECTION("continuous outcome") {
        const TrueLate t = true_late(spec, 4000000);
        CHECK(t.draws == 4000000);
        CHECK(t.mc_se > 0.0);
        CHECK(t.mc_se < 40.0);
        INFO("value " << t.value << " mc_se " << t.mc_se);
        CHECK(std::fabs(t.value - 8816.5) <= 0.01 * 8816.5);
    }
    SECTION("binary outcome") {
        spec.outcome_kind = OutcomeKind::binary;
        const TrueLate t = true_late(spec, 2000000);
        INFO("value " << t.value << " mc_se " << t.mc_se);
        CHECK(std::fabs(t.value - 0.036) <= 0.001);
    }
    SECTION("deterministic across calls") {
        const TrueLate a = true_late(spec, 50000);
        const TrueLate b = true_late(spec, 50000);
        CHECK(a.value == b.value);
    }
}

TEST_CASE("single-replication report degenerates as expected") {
    DgpSpec spec;
    spec.n = 300;
    McOptions opt;
    opt.estimators = {Method::wald};
    opt.scenarios = {Scenario::all_correct};
    opt.replications = 1;
    opt.truth_draws = 20000;
    const McReport rep = run_monte_carlo(spec, opt);
    REQUIRE(rep.cells.size() == 1);
    const McCell& c = rep.cell("wald", "all_correct");
    CHECK(c.reps_used == 1);
    CHECK(c.n_failures == 0);
    CHECK(std::fabs(c.rmse - std::fabs(c.bias)) <= 1e-12 * (1.0 + c.rmse));
    CHECK((c.coverage == 0.0 || c.coverage == 100.0));
    CHECK(c.bias_mc_se == 0.0);
    CHECK_THROWS_AS(rep.cell("wald", "ps_misspec"), ShapeError);
}

TEST_CASE("the thread count cannot change the report") {
    DgpSpec spec;
    spec.n = 150;
    McOptions opt;
    opt.estimators = {Method::wald, Method::ra_late};
    opt.scenarios = {Scenario::all_correct};
    opt.replications = 6;
    opt.truth_draws = 20000;
    opt.max_failure_share = 1.0;   // determinism is the subject, not robustness
    opt.threads = 1;
    const McReport one = run_monte_carlo(spec, opt);
    opt.threads = 2;
    const McReport two = run_monte_carlo(spec, opt);
    REQUIRE(one.cells.size() == two.cells.size());
    CHECK(one.true_value == two.true_value);
    for (size_t i = 0; i < one.cells.size(); ++i) {
        CHECK(one.cells[i].bias == two.cells[i].bias);
        CHECK(one.cells[i].rmse == two.cells[i].rmse);
        CHECK(one.cells[i].coverage == two.cells[i].coverage);
        CHECK(one.cells[i].mean_se == two.cells[i].mean_se);
        CHECK(one.cells[i].n_failures == two.cells[i].n_failures);
    }
    CHECK(one.to_csv() == two.to_csv());
}

TEST_CASE("replication failures are counted and capped") {
    // at this tiny n some replications cannot fit the three-covariate models
    DgpSpec spec;
    spec.n = 12;
    McOptions opt;
    opt.estimators = {Method::dr_late};
    opt.scenarios = {Scenario::all_correct};
    opt.replications = 40;
    opt.truth_draws = 20000;

    opt.max_failure_share = 1.0;
    const McReport rep = run_monte_carlo(spec, opt);
    const McCell& c = rep.cell("dr_late", "all_correct");
    INFO(c.n_failures << " failures in " << opt.replications);
    CHECK(c.n_failures > 0);
    CHECK(c.reps_used == opt.replications - c.n_failures);

    opt.max_failure_share = 0.0;
    CHECK_THROWS_AS(run_monte_carlo(spec, opt), SimulationError);
}

TEST_CASE("report serialization") {
    DgpSpec spec;
    spec.n = 200;
    McOptions opt;
    opt.estimators = {Method::wald};
    opt.scenarios = {Scenario::all_correct};
    opt.replications = 3;
    opt.truth_draws = 20000;
    const McReport rep = run_monte_carlo(spec, opt);
    const std::string csv = rep.to_csv();
    CHECK(csv.rfind("estimator,scenario,bias,rmse,coverage,mean_se,bias_mc_se,failures,reps_used\n",
                    0) == 0);
    CHECK(csv.find("wald,all_correct,") != std::string::npos);
    const std::string txt = rep.to_text();
    CHECK(txt.find("n=200") != std::string::npos);
    CHECK(txt.find("wald") != std::string::npos);
}

TEST_CASE("configuration validation") {
    DgpSpec spec;
    SECTION("sample size") {
        spec.n = 1;
        CHECK_THROWS_AS(generate_sample(spec, 0), ConfigError);
    }
    SECTION("covariate spread") {
        spec.sd_age = 0.0;
        CHECK_THROWS_AS(generate_sample(spec, 0), ConfigError);
    }
    SECTION("correlation range") {
        spec.corr = 1.0;
        CHECK_THROWS_AS(generate_sample(spec, 0), ConfigError);
    }
    SECTION("error scale") {
        spec.sigma0 = -1.0;
        CHECK_THROWS_AS(true_late(spec, 1000), ConfigError);
    }
    SECTION("draw count") {
        CHECK_THROWS_AS(true_late(spec, 1), ConfigError);
    }
    SECTION("monte carlo options") {
        McOptions opt;
        opt.replications = 0;
        CHECK_THROWS_AS(run_monte_carlo(spec, opt), ConfigError);
        opt.replications = 2;
        opt.estimators = {};
        CHECK_THROWS_AS(run_monte_carlo(spec, opt), ConfigError);
    }
    SECTION("scenario names") {
        CHECK(scenario_name(parse_scenario("outcome_misspec")) == "outcome_misspec");
        CHECK_THROWS_AS(parse_scenario("bogus"), ConfigError);
    }
    SECTION("scenario model specs") {
        const ModelSpecs m = scenario_models(Scenario::outcome_misspec);
        CHECK(m.outcome.terms.size() == 2);     // age squared dropped
        CHECK(m.treatment.terms.size() == 2);
        CHECK(m.propensity.terms.size() == 3);
        const ModelSpecs p = scenario_models(Scenario::ps_misspec);
        CHECK(p.outcome.terms.size() == 3);
        CHECK(p.propensity.terms.size() == 2);
    }
}
