// Dataset validation, CSV round trips, and the covariate expansion rules
// (shift before power, mean-centering after the power).

#include <catch2/catch_amalgamated.hpp>

#include <charconv>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "helpers.hpp"

namespace fs = std::filesystem;
using namespace ipwra;
using testutil::make_data;

namespace {

fs::path temp_dir() {
    const fs::path p = fs::temp_directory_path() / "ipwra_test_data";
    fs::create_directories(p);
    return p;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void spit(const fs::path& p, const std::string& text) {
    std::ofstream out(p, std::ios::binary);
    out << text;
}

Roles ywz_roles() {
    Roles r;
    r.outcome = "y";
    r.treatment = "w";
    r.instrument = "z";
    return r;
}

} // namespace

TEST_CASE("dataset rejects bad roles and values") {
    Eigen::VectorXd y(4), w(4), z(4);
    y << 1.0, 2.0, 3.0, 4.0;
    w << 0.0, 1.0, 0.0, 1.0;
    z << 0.0, 1.0, 1.0, 0.0;
    Eigen::MatrixXd v(4, 3);
    v.col(0) = y;
    v.col(1) = w;
    v.col(2) = z;

    CHECK_NOTHROW(Dataset({"y", "w", "z"}, v, ywz_roles()));

    Roles r = ywz_roles();
    r.outcome = "";
    CHECK_THROWS_AS(Dataset({"y", "w", "z"}, v, r), DataError);
    r = ywz_roles();
    r.outcome = "nope";
    CHECK_THROWS_AS(Dataset({"y", "w", "z"}, v, r), DataError);
    r = ywz_roles();
    r.covariates = {"missing"};
    CHECK_THROWS_AS(Dataset({"y", "w", "z"}, v, r), DataError);
    r = ywz_roles();
    r.cluster = "g";
    CHECK_THROWS_AS(Dataset({"y", "w", "z"}, v, r), DataError);

    Eigen::MatrixXd bad = v;
    bad(1, 1) = 2.0;   // treatment not 0/1
    CHECK_THROWS_AS(Dataset({"y", "w", "z"}, bad, ywz_roles()), DataError);
    bad = v;
    bad.col(2).setZero();   // single-arm instrument
    CHECK_THROWS_AS(Dataset({"y", "w", "z"}, bad, ywz_roles()), DataError);
    bad = v;
    bad(0, 0) = std::nan("");
    CHECK_THROWS_AS(Dataset({"y", "w", "z"}, bad, ywz_roles()), DataError);

    // non-finite values outside role columns are allowed
    Eigen::MatrixXd wide(4, 4);
    wide.leftCols(3) = v;
    wide.col(3).setConstant(std::nan(""));
    CHECK_NOTHROW(Dataset({"y", "w", "z", "junk"}, wide, ywz_roles()));

    CHECK_THROWS_AS(Dataset({"y", "w"}, v, ywz_roles()), ShapeError);
    Eigen::MatrixXd one = v.topRows(1);
    CHECK_THROWS_AS(Dataset({"y", "w", "z"}, one, ywz_roles()), DataError);
}

TEST_CASE("column lookup and row selection") {
    Eigen::VectorXd y(4), w(4), z(4);
    y << 1.5, -2.0, 0.0, 7.25;
    w << 0.0, 1.0, 1.0, 0.0;
    z << 1.0, 0.0, 1.0, 0.0;
    const Dataset d = make_data(y, w, z);
    CHECK(d.n_obs() == 4);
    CHECK(d.col("y")[3] == 7.25);
    CHECK(d.col_index("z") == 2);
    CHECK_THROWS_AS(d.col("nope"), DataError);
    CHECK_FALSE(d.has_cluster());

    const Dataset sub = d.take_rows({3, 0, 3});
    CHECK(sub.n_obs() == 3);
    CHECK(sub.outcome()[0] == 7.25);
    CHECK(sub.outcome()[1] == 1.5);
    CHECK(sub.outcome()[2] == 7.25);
}

TEST_CASE("csv round trip is lossless and re-saving is byte identical") {
    Eigen::VectorXd y(5), w(5), z(5), x(5);
    y << 0.1, 1.0 / 3.0, -1e-17, 1.7976931348623157e308, -0.0;
    w << 0.0, 1.0, 0.0, 1.0, 1.0;
    z << 1.0, 0.0, 1.0, 0.0, 1.0;
    x << 12345.678901234567, 2.5e-308, -3.0, 0.0, 6.02214076e23;
    const Dataset d = testutil::make_data_x(y, w, z, x);

    const fs::path fa = temp_dir() / "round_a.csv";
    const fs::path fb = temp_dir() / "round_b.csv";
    save_dataset(fa.string(), d);
    Roles r = ywz_roles();
    r.covariates = {"x"};
    const Dataset back = load_dataset(fa.string(), r);

    REQUIRE(back.n_obs() == d.n_obs());
    REQUIRE(back.names() == d.names());
    for (Eigen::Index i = 0; i < d.n_obs(); ++i)
        for (Eigen::Index j = 0; j < d.values().cols(); ++j)
            REQUIRE(format_double(back.values()(i, j)) == format_double(d.values()(i, j)));

    save_dataset(fb.string(), back);
    CHECK(slurp(fa) == slurp(fb));
}

TEST_CASE("csv loader reports what broke and where") {
    const fs::path p = temp_dir() / "bad.csv";

    spit(p, "");
    CHECK_THROWS_AS(load_dataset(p.string(), ywz_roles()), ParseError);

    spit(p, "y,w,z\n1,0,1\n2,1\n");
    try {
        load_dataset(p.string(), ywz_roles());
        FAIL("expected ParseError");
    } catch (const ParseError& e) {
        CHECK(std::string(e.what()).find("line 3") != std::string::npos);
    }

    spit(p, "y,w,z\n1,0,1\nfoo,1,0\n");
    try {
        load_dataset(p.string(), ywz_roles());
        FAIL("expected ParseError");
    } catch (const ParseError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("line 3") != std::string::npos);
        CHECK(msg.find("foo") != std::string::npos);
    }

    CHECK_THROWS_AS(load_dataset((temp_dir() / "no_such.csv").string(), ywz_roles()),
                    ParseError);

    // lenient numeric forms: leading '+', surrounding spaces, CRLF endings
    spit(p, "y,w,z\r\n+1.5, 0,1\r\n2.5,1 ,0\r\n");
    const Dataset ok = load_dataset(p.string(), ywz_roles());
    CHECK(ok.outcome()[0] == 1.5);
    CHECK(ok.treatment()[1] == 1.0);
}

TEST_CASE("covariate expansion: shift before power, centering after") {
    Eigen::VectorXd y(3), w(3), z(3), x(3);
    y << 0.0, 1.0, 2.0;
    w << 0.0, 1.0, 1.0;
    z << 0.0, 1.0, 1.0;
    x << 1.0, 2.0, 4.0;
    const Dataset d = testutil::make_data_x(y, w, z, x);

    CovariateTransform tf;
    tf.terms = {Term{"x", 2, 3.0, false},    // (x-3)^2
                Term{"x", 1, 0.0, true},     // x - mean(x)
                Term{"x", 2, 0.0, true}};    // x^2 - mean(x^2), not (x - mean)^2
    const Eigen::MatrixXd X = expand_covariates(d, tf);
    REQUIRE(X.rows() == 3);
    REQUIRE(X.cols() == 4);
    CHECK(X.col(0).isOnes());

    CHECK(X(0, 1) == 4.0);
    CHECK(X(1, 1) == 1.0);
    CHECK(X(2, 1) == 1.0);

    const double xbar = 7.0 / 3.0;
    for (int i = 0; i < 3; ++i) CHECK(std::fabs(X(i, 2) - (x[i] - xbar)) < 1e-14);

    const double x2bar = 7.0;   // mean of {1, 4, 16}
    CHECK(std::fabs(X(0, 3) - (1.0 - x2bar)) < 1e-13);
    CHECK(std::fabs(X(1, 3) - (4.0 - x2bar)) < 1e-13);
    CHECK(std::fabs(X(2, 3) - (16.0 - x2bar)) < 1e-13);
}

TEST_CASE("covariate expansion rejects bad terms") {
    Eigen::VectorXd y(3), w(3), z(3), x(3);
    y << 0, 1, 2;
    w << 0, 1, 1;
    z << 0, 1, 1;
    x << 1, 2, 4;
    const Dataset d = testutil::make_data_x(y, w, z, x);

    CovariateTransform tf;
    tf.terms = {Term{"x", 0, 0.0, false}};
    CHECK_THROWS_AS(expand_covariates(d, tf), TransformError);
    tf.terms = {Term{"nope", 1, 0.0, false}};
    CHECK_THROWS_AS(expand_covariates(d, tf), TransformError);
    tf.terms = {Term{"x", 2, 1.0, false}, Term{"x", 2, 1.0, false}};
    CHECK_THROWS_AS(expand_covariates(d, tf), TransformError);
    // same source with different shift is a distinct term
    tf.terms = {Term{"x", 2, 1.0, false}, Term{"x", 2, 0.0, false}};
    CHECK_NOTHROW(expand_covariates(d, tf));
}

TEST_CASE("term labels") {
    CHECK(Term{"age", 2, 25.0, false}.label() == "(age-25)^2");
    CHECK(Term{"x", 1, 0.0, true}.label() == "x~c");
    CHECK(Term{"x", 3, 0.0, false}.label() == "x^3");
    CHECK(Term{"inc", 1, 0.0, false}.label() == "inc");
}

TEST_CASE("default transform covers the covariate roles in order") {
    Roles r = ywz_roles();
    r.covariates = {"a", "b"};
    const CovariateTransform tf = default_transform(r);
    REQUIRE(tf.terms.size() == 2);
    CHECK(tf.terms[0] == Term{"a", 1, 0.0, false});
    CHECK(tf.terms[1] == Term{"b", 1, 0.0, false});
}

TEST_CASE("format_double is shortest round-trip") {
    for (double v : {0.1, 1.0 / 3.0, -0.0, 1e-300, 123456789.123456789, 2.0}) {
        const std::string s = format_double(v);
        double back = 0.0;
        auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), back);
        REQUIRE(ec == std::errc());
        REQUIRE(p == s.data() + s.size());
        CHECK(back == v);
        CHECK(std::signbit(back) == std::signbit(v));
    }
    CHECK(format_double(0.1) == "0.1");
    CHECK(format_double(2.0) == "2");
}
