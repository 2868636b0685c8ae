// Estimator-comparison tests: exact ties, antisymmetry, joint-stack SEs on
// calibrated-scale data, the one-sided precondition, and the null rejection
// rate of the specification test.

#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "helpers.hpp"
#include "ipwra/hausman.hpp"
#include "ipwra/simulate.hpp"

using namespace ipwra;

namespace {

EstimatorSpec spec_with(Method m, const EstimOptions& o) {
    EstimatorSpec s;
    s.method = m;
    s.options = o;
    return s;
}

} // namespace

TEST_CASE("comparing an estimator with itself is an exact tie") {
    Rng rng(301, 0);
    const Dataset d = testutil::small_dgp(rng, 200);
    const EstimatorSpec dr = spec_with(Method::dr_late, testutil::x_options());

    ComparisonOptions joint;
    joint.se_method = ComparisonSe::joint_gmm;
    const ComparisonResult a = hausman_dr_test(d, dr, dr, joint);
    CHECK(a.diff == 0.0);
    CHECK(a.t_stat == 0.0);
    CHECK(a.p_value == 1.0);
    CHECK(a.method_se == "joint_gmm");

    ComparisonOptions boot;
    boot.se_method = ComparisonSe::paired_bootstrap;
    boot.boot_reps = 25;
    const ComparisonResult b = hausman_dr_test(d, dr, dr, boot);
    CHECK(b.diff == 0.0);
    CHECK(b.se_diff == 0.0);   // every paired replicate differences to zero
    CHECK(b.p_value == 1.0);
    CHECK(b.boot_failed == 0);
}

TEST_CASE("swapping the two sides negates the difference and keeps the SE") {
    Rng rng(311, 0);
    const Dataset d = testutil::small_dgp(rng, 250);
    const EstimatorSpec dr = spec_with(Method::dr_late, testutil::x_options());
    const EstimatorSpec ra = spec_with(Method::ra_late, testutil::x_options());

    ComparisonOptions joint;
    joint.se_method = ComparisonSe::joint_gmm;
    const ComparisonResult lr = hausman_dr_test(d, dr, ra, joint);
    const ComparisonResult rl = hausman_dr_test(d, ra, dr, joint);
    CHECK(lr.diff == -rl.diff);
    CHECK(lr.diff != 0.0);
    CHECK(std::fabs(lr.se_diff - rl.se_diff) <= 1e-10 * lr.se_diff);
    CHECK(std::fabs(lr.p_value - rl.p_value) <= 1e-9);
    CHECK(lr.left.method == "dr");
    CHECK(lr.right.method == "ra");

    ComparisonOptions boot;
    boot.se_method = ComparisonSe::paired_bootstrap;
    boot.boot_reps = 60;
    boot.seed = 9;
    const ComparisonResult bl = hausman_dr_test(d, dr, ra, boot);
    const ComparisonResult br = hausman_dr_test(d, ra, dr, boot);
    CHECK(bl.diff == -br.diff);
    CHECK(std::fabs(bl.se_diff - br.se_diff) <= 1e-12 * bl.se_diff);
    CHECK(bl.se_diff > 0.0);
}

TEST_CASE("joint-stack comparison works at the calibrated data scale") {
    DgpSpec dgp;
    dgp.n = 1000;
    const Dataset d = generate_sample(dgp, 7);
    EstimOptions o;
    o.models = scenario_models(Scenario::all_correct);
    o.known_pi0_zero = true;

    ComparisonOptions joint;
    joint.se_method = ComparisonSe::joint_gmm;
    const ComparisonResult r =
        hausman_dr_test(d, spec_with(Method::dr_late, o), spec_with(Method::ra_late, o), joint);
    CHECK(std::isfinite(r.diff));
    CHECK(r.se_diff > 0.0);
    CHECK(r.p_value >= 0.0);
    CHECK(r.p_value <= 1.0);
    CHECK(std::fabs(r.t_stat) < 6.0);   // both sides are consistent here
    CHECK(r.left.point != r.right.point);
}

TEST_CASE("null rejection rate of the specification test is near nominal") {
    // both estimators correctly specified, so rejections at 5% should be rare
    Rng rng(321, 0);
    const EstimatorSpec dr = spec_with(Method::dr_late, testutil::x_options());
    const EstimatorSpec ra = spec_with(Method::ra_late, testutil::x_options());
    ComparisonOptions joint;
    joint.se_method = ComparisonSe::joint_gmm;

    const int reps = 150;
    int rejections = 0, failed = 0;
    for (int rep = 0; rep < reps; ++rep) {
        const Dataset d = testutil::small_dgp(rng, 400);
        try {
            if (hausman_dr_test(d, dr, ra, joint).p_value < 0.05) ++rejections;
        } catch (const Error&) {
            ++failed;
        }
    }
    INFO("rejections " << rejections << " of " << reps << ", " << failed << " failed draws");
    CHECK(failed <= 3);
    CHECK(rejections >= 1);
    CHECK(rejections <= 19);
}

TEST_CASE("the treated-effect comparison insists on one-sided noncompliance") {
    Rng rng(331, 0);
    const Dataset two = testutil::small_dgp(rng, 300);
    const Dataset one = testutil::small_dgp_one_sided(rng, 300);
    const EstimatorSpec latt = spec_with(Method::dr_latt, testutil::x_options());
    const EstimatorSpec att = spec_with(Method::dr_att, testutil::x_options());
    ComparisonOptions joint;
    joint.se_method = ComparisonSe::joint_gmm;

    try {
        hausman_dr_test(two, latt, att, joint);
        FAIL("expected ConsistencyError");
    } catch (const ConsistencyError& e) {
        CHECK(std::string(e.what()).find("allow_two_sided") != std::string::npos);
    }
    CHECK_THROWS_AS(hausman_dr_test(two, att, latt, joint), ConsistencyError);

    joint.allow_two_sided = true;
    const ComparisonResult forced = hausman_dr_test(two, latt, att, joint);
    CHECK(forced.se_diff > 0.0);

    joint.allow_two_sided = false;
    const ComparisonResult ok = hausman_dr_test(one, latt, att, joint);
    CHECK(ok.se_diff > 0.0);
    CHECK(ok.p_value >= 0.0);
    CHECK(ok.left.estimand == "latt");
    CHECK(ok.right.estimand == "att");
}

TEST_CASE("linear IV cannot join a stacked comparison but can be bootstrapped") {
    Rng rng(341, 0);
    const Dataset d = testutil::small_dgp(rng, 200);
    const EstimatorSpec iv = spec_with(Method::tsls, testutil::x_options());
    const EstimatorSpec dr = spec_with(Method::dr_late, testutil::x_options());

    ComparisonOptions joint;
    joint.se_method = ComparisonSe::joint_gmm;
    CHECK_THROWS_AS(hausman_dr_test(d, iv, dr, joint), ConfigError);

    ComparisonOptions boot;
    boot.se_method = ComparisonSe::paired_bootstrap;
    boot.boot_reps = 40;
    const ComparisonResult r = hausman_dr_test(d, iv, dr, boot);
    CHECK(r.se_diff > 0.0);
    CHECK(r.left.method == "2sls");
    CHECK(r.method_se == "paired_bootstrap");
}
