#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <map>
#include <numeric>
#include <random>

#include "ddae/combat.hpp"
#include "ddae/errors.hpp"
#include "ddae/synth.hpp"
#include "test_helpers.hpp"

using namespace ddae;

namespace {

double pearson(const std::vector<double>& x, const std::vector<double>& y) {
    const double n = static_cast<double>(x.size());
    const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
    const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
    double sxy = 0, sxx = 0, syy = 0;
    for (size_t i = 0; i < x.size(); ++i) {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx) * (x[i] - mx);
        syy += (y[i] - my) * (y[i] - my);
    }
    return sxy / std::sqrt(sxx * syy);
}

Eigen::VectorXd site_mean(const Eigen::MatrixXd& x, const std::vector<CovariateRecord>& recs, const std::string& site) {
    Eigen::VectorXd sum = Eigen::VectorXd::Zero(x.cols());
    double n = 0;
    for (size_t i = 0; i < recs.size(); ++i) {
        if (recs[i].site == site) {
            sum += x.row(static_cast<Eigen::Index>(i)).transpose();
            n += 1;
        }
    }
    return sum / n;
}

}  // namespace

TEST_CASE("a constant site shift is removed exactly on noiseless data") {
    const int n = 12, p = 10;
    Eigen::MatrixXd x(2 * n, p);
    std::vector<CovariateRecord> recs;
    for (int s = 0; s < 2; ++s) {
        for (int j = 0; j < n; ++j) {
            recs.push_back({30.0 + 2.0 * j, j % 2, s == 0 ? "A" : "B"});
            for (int f = 0; f < p; ++f) {
                x(s * n + j, f) = 0.1 + 0.03 * f + 0.01 * ((j * 7) % 5) + (s == 1 ? 0.3 : 0.0);
            }
        }
    }
    const auto model = combat_fit(x, recs);
    const auto y = combat_apply(model, x, recs);
    const Eigen::VectorXd gap = site_mean(y, recs, "A") - site_mean(y, recs, "B");
    CHECK(gap.cwiseAbs().maxCoeff() < 1e-6);
    CHECK(model.site_shift("B", 0) - model.site_shift("A", 0) == doctest::Approx(0.3).epsilon(1e-6));
}

TEST_CASE("known site shifts are recovered within two standard errors") {
    const int per_site = 400, p = 20;
    const double sigma = 0.05;
    const std::vector<std::string> sites{"s0", "s1", "s2"};
    const std::vector<double> base{-0.1, 0.0, 0.15};
    std::mt19937_64 rng(17);
    std::normal_distribution<double> noise(0.0, sigma);
    std::uniform_real_distribution<double> age_dist(20, 80);
    Eigen::MatrixXd x(3 * per_site, p);
    std::vector<CovariateRecord> recs;
    auto truth = [&](size_t s, int f) { return base[s] * (1.0 + 0.5 * f / p); };
    for (size_t s = 0; s < 3; ++s) {
        for (int j = 0; j < per_site; ++j) {
            const double age = age_dist(rng);
            const int sex = j % 2;
            recs.push_back({age, sex, sites[s]});
            for (int f = 0; f < p; ++f) {
                x(static_cast<Eigen::Index>(recs.size() - 1), f) =
                    0.4 + 0.002 * age + 0.02 * sex + truth(s, f) + noise(rng);
            }
        }
    }
    const auto model = combat_fit(x, recs);
    // Shifts are reported against the sample-weighted grand mean; equal site sizes give weights 1/3.
    const double se = sigma * std::sqrt((4.0 / 9.0 + 2.0 / 9.0) / per_site);
    for (size_t s = 0; s < 3; ++s) {
        double err_sum = 0.0, worst = 0.0;
        for (int f = 0; f < p; ++f) {
            const double expected = truth(s, f) - (truth(0, f) + truth(1, f) + truth(2, f)) / 3.0;
            const double err = model.site_shift(sites[s], f) - expected;
            err_sum += err;
            worst = std::max(worst, std::abs(err));
        }
        CAPTURE(s);
        CHECK(std::abs(err_sum / p) < 2.0 * se / std::sqrt(static_cast<double>(p)));
        CHECK(worst < 4.0 * se);
    }
    CHECK((model.delta_star.array() > 0).all());
    CHECK(model.covariate_coef(0, 0) == doctest::Approx(0.002).epsilon(0.1));
}

TEST_CASE("identical site distributions are left nearly untouched") {
    const int per_site = 200, p = 50;
    std::mt19937_64 rng(5);
    std::normal_distribution<double> noise(0.0, 0.1);
    std::uniform_real_distribution<double> age_dist(20, 80);
    Eigen::MatrixXd x(3 * per_site, p);
    std::vector<CovariateRecord> recs;
    for (int s = 0; s < 3; ++s) {
        for (int j = 0; j < per_site; ++j) {
            const double age = age_dist(rng);
            recs.push_back({age, j % 2, "site" + std::to_string(s)});
            for (int f = 0; f < p; ++f) x(s * per_site + j, f) = 0.3 + 0.004 * age + noise(rng);
        }
    }
    const auto model = combat_fit(x, recs);
    const double se = 1.0 / std::sqrt(static_cast<double>(per_site));
    CHECK(model.gamma_star.cwiseAbs().maxCoeff() < 3.0 * se);
    CHECK((model.delta_star.array() - 1.0).abs().maxCoeff() < 0.25);
    const auto y = combat_apply(model, x, recs, false);
    CHECK((y - x).cwiseAbs().maxCoeff() < 0.05);
}

TEST_CASE("preconditions and error contracts") {
    Eigen::MatrixXd x = Eigen::MatrixXd::Random(4, 3);
    const std::vector<CovariateRecord> one_site{{30, 0, "A"}, {40, 1, "A"}, {50, 0, "A"}, {60, 1, "A"}};
    CHECK_THROWS_AS(combat_fit(x, one_site), std::invalid_argument);
    const std::vector<CovariateRecord> thin{{30, 0, "A"}, {40, 1, "A"}, {50, 0, "A"}, {60, 1, "B"}};
    CHECK_THROWS_AS(combat_fit(x, thin), std::invalid_argument);
    const std::vector<CovariateRecord> ok{{30, 0, "A"}, {40, 1, "A"}, {50, 0, "B"}, {60, 1, "B"}};
    const auto model = combat_fit(x, ok);
    std::vector<CovariateRecord> unknown = ok;
    unknown[0].site = "C";
    CHECK_THROWS_AS(combat_apply(model, x, unknown), UnknownSiteError);
    CHECK_THROWS_AS(combat_apply(model, Eigen::MatrixXd::Random(4, 2), ok), std::invalid_argument);
}

TEST_CASE("constant features pass through and are flagged") {
    std::mt19937_64 rng(1);
    std::normal_distribution<double> noise(0.5, 0.1);
    Eigen::MatrixXd x(20, 3);
    std::vector<CovariateRecord> recs;
    for (int i = 0; i < 20; ++i) {
        recs.push_back({20.0 + i, i % 2, i < 10 ? "A" : "B"});
        x(i, 0) = noise(rng);
        x(i, 1) = 0.25;
        x(i, 2) = noise(rng) + (i < 10 ? 0.1 : 0.0);
    }
    const auto model = combat_fit(x, recs);
    CHECK(model.passthrough == std::vector<uint8_t>{0, 1, 0});
    CHECK(model.passthrough_count() == 1);
    const auto y = combat_apply(model, x, recs);
    CHECK((y.col(1).array() == 0.25).all());
}

TEST_CASE("the covariate component is shared across sites") {
    std::mt19937_64 rng(2);
    std::normal_distribution<double> noise(0.0, 0.05);
    Eigen::MatrixXd x(40, 4);
    std::vector<CovariateRecord> recs;
    for (int i = 0; i < 40; ++i) {
        recs.push_back({20.0 + i, i % 2, i < 20 ? "A" : "B"});
        for (int f = 0; f < 4; ++f) x(i, f) = 0.5 + 0.003 * i + (i < 20 ? 0.0 : 0.1 * (f + 1)) + noise(rng);
    }
    const auto model = combat_fit(x, recs);
    Eigen::MatrixXd row = x.row(3);
    const std::vector<CovariateRecord> as_a{{37.0, 1, "A"}}, as_b{{37.0, 1, "B"}};
    const auto ya = combat_apply(model, row, as_a, false);
    const auto yb = combat_apply(model, row, as_b, false);
    for (int f = 0; f < 4; ++f) {
        const double stand = model.grand_mean(f) + 37.0 * model.covariate_coef(0, f) + model.covariate_coef(1, f);
        const double sd = std::sqrt(model.var_pooled(f));
        const double z = (row(0, f) - stand) / sd;
        const double expected = ((z - model.gamma_star(0, f)) / std::sqrt(model.delta_star(0, f)) -
                                 (z - model.gamma_star(1, f)) / std::sqrt(model.delta_star(1, f))) * sd;
        CHECK(ya(0, f) - yb(0, f) == doctest::Approx(expected).epsilon(1e-9));
    }
}

TEST_CASE("default cohort: site means equalised and age signal preserved") {
    const auto spec = CohortSpec::default_spec(3, 200, 0);
    const auto ds = generate_cohort(spec);
    const auto harmonized = combat_harmonize(ds);
    REQUIRE(harmonized.size() == ds.size());

    // Every pixel any subject's ventricles cover.
    const auto phantoms = testing::cohort_phantoms(spec);
    std::vector<int> vent_count(32 * 32, 0);
    for (const auto& p : phantoms) {
        for (size_t k = 0; k < p.ventricle_mask.size(); ++k) vent_count[k] += p.ventricle_mask[k];
    }
    std::vector<size_t> region;
    for (size_t k = 0; k < vent_count.size(); ++k) {
        if (vent_count[k] > 0) region.push_back(k);
    }
    REQUIRE(region.size() > 10);

    auto region_mean = [&](const Image& img) {
        double s = 0;
        for (auto k : region) s += img.pixels[k];
        return s / static_cast<double>(region.size());
    };
    for (const auto& site : {"site_a", "site_b", "site_c"}) {
        std::vector<double> ages, before, after;
        for (size_t i = 0; i < ds.size(); ++i) {
            if (ds.samples[i].covariates.site != site) continue;
            ages.push_back(ds.samples[i].covariates.age);
            before.push_back(region_mean(ds.samples[i].image));
            after.push_back(region_mean(harmonized.samples[i].image));
        }
        CAPTURE(site);
        CHECK(pearson(ages, before) < -0.5);
        CHECK(std::abs(pearson(ages, before) - pearson(ages, after)) < 0.05);
    }

    // Whole-image mean intensity: site gaps fall below three pooled standard errors.
    std::map<std::string, std::vector<double>> means;
    for (const auto& s : harmonized.samples) means[s.covariates.site].push_back(mean_intensity(s.image));
    std::vector<std::pair<double, double>> stats;
    for (const auto& [site, v] : means) {
        const double m = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
        double sq = 0;
        for (double x : v) sq += (x - m) * (x - m);
        stats.emplace_back(m, sq / static_cast<double>(v.size() - 1));
    }
    for (size_t i = 0; i < stats.size(); ++i) {
        for (size_t j = i + 1; j < stats.size(); ++j) {
            const double se = std::sqrt((stats[i].second + stats[j].second) / 200.0);
            CHECK(std::abs(stats[i].first - stats[j].first) < 3.0 * se);
        }
    }
}
