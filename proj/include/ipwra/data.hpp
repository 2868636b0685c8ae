#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ipwra/errors.hpp"

namespace ipwra {

struct Roles {
    std::string outcome;
    std::string treatment;
    std::string instrument;
    std::vector<std::string> covariates;
    std::string cluster;   // empty = no clustering
};

class Dataset {
  public:
    Dataset() = default;

    Dataset(std::vector<std::string> names, Eigen::MatrixXd values, Roles roles)
        : names_(std::move(names)), values_(std::move(values)), roles_(std::move(roles)) {
        if (static_cast<Eigen::Index>(names_.size()) != values_.cols())
            throw ShapeError("dataset: header has " + std::to_string(names_.size()) +
                             " names but matrix has " + std::to_string(values_.cols()) +
                             " columns");
        validate();
    }

    Eigen::Index n_obs() const { return values_.rows(); }
    const std::vector<std::string>& names() const { return names_; }
    const Roles& roles() const { return roles_; }
    const Eigen::MatrixXd& values() const { return values_; }

    bool has_column(const std::string& name) const {
        return std::find(names_.begin(), names_.end(), name) != names_.end();
    }

    Eigen::Index col_index(const std::string& name) const {
        auto it = std::find(names_.begin(), names_.end(), name);
        if (it == names_.end())
            throw DataError("dataset: no column named '" + name + "'");
        return static_cast<Eigen::Index>(it - names_.begin());
    }

    Eigen::VectorXd col(const std::string& name) const {
        return values_.col(col_index(name));
    }

    Eigen::VectorXd outcome() const { return col(roles_.outcome); }
    Eigen::VectorXd treatment() const { return col(roles_.treatment); }
    Eigen::VectorXd instrument() const { return col(roles_.instrument); }
    bool has_cluster() const { return !roles_.cluster.empty(); }
    Eigen::VectorXd cluster_ids() const { return col(roles_.cluster); }

    // Row subset, preserving order; used by bootstrap resampling.
    Dataset take_rows(const std::vector<Eigen::Index>& idx) const {
        Eigen::MatrixXd sub(static_cast<Eigen::Index>(idx.size()), values_.cols());
        for (Eigen::Index i = 0; i < sub.rows(); ++i)
            sub.row(i) = values_.row(idx[static_cast<size_t>(i)]);
        return Dataset(names_, std::move(sub), roles_);
    }

  private:
    void validate() const {
        const char* role_tag[] = {"outcome", "treatment", "instrument"};
        const std::string* role_col[] = {&roles_.outcome, &roles_.treatment, &roles_.instrument};
        for (int r = 0; r < 3; ++r) {
            if (role_col[r]->empty())
                throw DataError(std::string("dataset: role '") + role_tag[r] + "' not assigned");
            if (!has_column(*role_col[r]))
                throw DataError(std::string("dataset: role '") + role_tag[r] +
                                "' refers to missing column '" + *role_col[r] + "'");
        }
        for (const auto& c : roles_.covariates)
            if (!has_column(c))
                throw DataError("dataset: covariate column '" + c + "' missing");
        if (!roles_.cluster.empty() && !has_column(roles_.cluster))
            throw DataError("dataset: cluster column '" + roles_.cluster + "' missing");

        if (n_obs() < 2) throw DataError("dataset: need at least 2 observations");

        // NaN anywhere in a role column is rejected outright.
        std::vector<std::string> checked = {roles_.outcome, roles_.treatment, roles_.instrument};
        checked.insert(checked.end(), roles_.covariates.begin(), roles_.covariates.end());
        if (!roles_.cluster.empty()) checked.push_back(roles_.cluster);
        for (const auto& name : checked) {
            const auto v = col(name);
            for (Eigen::Index i = 0; i < v.size(); ++i)
                if (!std::isfinite(v[i]))
                    throw DataError("dataset: non-finite value in role column '" + name +
                                    "' at row " + std::to_string(i));
        }
        for (const char* which : {"treatment", "instrument"}) {
            const auto v = (which[0] == 't') ? treatment() : instrument();
            for (Eigen::Index i = 0; i < v.size(); ++i)
                if (v[i] != 0.0 && v[i] != 1.0)
                    throw DataError(std::string("dataset: ") + which + " column must be 0/1, row " +
                                    std::to_string(i) + " has " + std::to_string(v[i]));
        }
        const auto z = instrument();
        const double zsum = z.sum();
        if (zsum == 0.0 || zsum == static_cast<double>(z.size()))
            throw DataError("dataset: instrument takes a single value; need both arms");
    }

    std::vector<std::string> names_;
    Eigen::MatrixXd values_;
    Roles roles_;
};

// ---------------- CSV ----------------

inline Dataset load_dataset(const std::string& path, const Roles& roles) {
    std::ifstream in(path);
    if (!in) throw ParseError("csv: cannot open '" + path + "'");
    std::string line;
    if (!std::getline(in, line)) throw ParseError("csv: empty file '" + path + "'");
    if (!line.empty() && line.back() == '\r') line.pop_back();

    std::vector<std::string> names;
    {
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) names.push_back(cell);
    }
    if (names.empty()) throw ParseError("csv: header row has no columns");

    std::vector<double> flat;
    Eigen::Index nrow = 0;
    size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        size_t pos = 0, field = 0;
        while (true) {
            size_t comma = line.find(',', pos);
            std::string_view cell(line.data() + pos,
                                  (comma == std::string::npos ? line.size() : comma) - pos);
            double v;
            auto [p, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
            if (ec != std::errc() || p != cell.data() + cell.size()) {
                // from_chars does not accept leading '+' or spaces; fall back
                std::string s(cell);
                try {
                    size_t used = 0;
                    v = std::stod(s, &used);
                    while (used < s.size() && std::isspace(static_cast<unsigned char>(s[used]))) ++used;
                    if (used != s.size()) throw std::invalid_argument("trailing");
                } catch (const std::exception&) {
                    throw ParseError("csv: line " + std::to_string(lineno) + ", field " +
                                     std::to_string(field + 1) + ": cannot parse '" + s + "'");
                }
            }
            flat.push_back(v);
            ++field;
            if (comma == std::string::npos) break;
            pos = comma + 1;
        }
        if (field != names.size())
            throw ParseError("csv: line " + std::to_string(lineno) + " has " +
                             std::to_string(field) + " fields, expected " +
                             std::to_string(names.size()));
        ++nrow;
    }
    Eigen::MatrixXd vals(nrow, static_cast<Eigen::Index>(names.size()));
    for (Eigen::Index i = 0; i < nrow; ++i)
        for (Eigen::Index j = 0; j < vals.cols(); ++j)
            vals(i, j) = flat[static_cast<size_t>(i) * names.size() + static_cast<size_t>(j)];
    return Dataset(std::move(names), std::move(vals), roles);
}

// Shortest representation that parses back to the same double, so that a
// save/load cycle is lossless and re-saving is byte-identical.
inline std::string format_double(double v) {
    char buf[32];
    auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    (void)ec;
    return std::string(buf, p);
}

inline void save_dataset(const std::string& path, const Dataset& d) {
    std::ofstream out(path);
    if (!out) throw DataError("csv: cannot write '" + path + "'");
    const auto& names = d.names();
    for (size_t j = 0; j < names.size(); ++j)
        out << (j ? "," : "") << names[j];
    out << "\n";
    const auto& v = d.values();
    for (Eigen::Index i = 0; i < v.rows(); ++i) {
        for (Eigen::Index j = 0; j < v.cols(); ++j)
            out << (j ? "," : "") << format_double(v(i, j));
        out << "\n";
    }
}

// ---------------- covariate expansion ----------------

// One design column: (source - shift)^power, optionally mean-centered after
// the power is applied.  shift covers regressors like (age - 25)^2.
struct Term {
    std::string source;
    int power = 1;
    double shift = 0.0;
    bool mean_center = false;

    bool operator==(const Term&) const = default;

    std::string label() const {
        std::string base = source;
        if (shift != 0.0) base = "(" + source + "-" + format_double(shift) + ")";
        if (power != 1) base += "^" + std::to_string(power);
        if (mean_center) base += "~c";
        return base;
    }
};

struct CovariateTransform {
    std::vector<Term> terms;
};

// Implicit leading intercept column; term columns follow in order.
inline Eigen::MatrixXd expand_covariates(const Dataset& d, const CovariateTransform& tf) {
    for (size_t a = 0; a < tf.terms.size(); ++a) {
        const Term& t = tf.terms[a];
        if (t.power < 1)
            throw TransformError("transform: term '" + t.source + "' has power " +
                                 std::to_string(t.power) + ", need >= 1");
        if (!d.has_column(t.source))
            throw TransformError("transform: source column '" + t.source + "' not in dataset");
        for (size_t b = a + 1; b < tf.terms.size(); ++b)
            if (tf.terms[a] == tf.terms[b])
                throw TransformError("transform: duplicate term '" + t.label() + "'");
    }
    const Eigen::Index n = d.n_obs();
    Eigen::MatrixXd X(n, static_cast<Eigen::Index>(tf.terms.size()) + 1);
    X.col(0).setOnes();
    for (size_t j = 0; j < tf.terms.size(); ++j) {
        const Term& t = tf.terms[j];
        Eigen::ArrayXd c = d.col(t.source).array() - t.shift;
        Eigen::ArrayXd out = c;
        for (int p = 1; p < t.power; ++p) out *= c;
        if (t.mean_center) out -= out.mean();
        X.col(static_cast<Eigen::Index>(j) + 1) = out.matrix();
    }
    return X;
}

// Default transform: each covariate role column enters linearly.
inline CovariateTransform default_transform(const Roles& roles) {
    CovariateTransform tf;
    for (const auto& c : roles.covariates) tf.terms.push_back({c, 1, 0.0, false});
    return tf;
}

} // namespace ipwra
