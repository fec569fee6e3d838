#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <fstream>
#include <random>
#include <set>

#include "ddae/errors.hpp"
#include "ddae/evalsuite.hpp"
#include "ddae/synth.hpp"
#include "test_helpers.hpp"

using namespace ddae;
using ddae::testing::TempDir;

namespace {

Eigen::MatrixXd from_upper(const std::vector<double>& upper, int n) {
    Eigen::MatrixXd m = Eigen::MatrixXd::Zero(n, n);
    size_t k = 0;
    for (int i = 0; i < n; ++i) {
        for (int j = i + 1; j < n; ++j) m(i, j) = m(j, i) = upper[k++];
    }
    return m;
}

GaussianStats gaussian(std::vector<double> mean, Eigen::MatrixXd cov) {
    return {Eigen::Map<Eigen::VectorXd>(mean.data(), static_cast<Eigen::Index>(mean.size())), std::move(cov)};
}

// Bright square on the left for sex 0, on the right for sex 1, with jittered position and noise.
Dataset two_blob_dataset(int n, uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<float> noise(0.0f, 0.05f);
    std::uniform_int_distribution<int> jitter(-2, 2);
    Dataset ds;
    for (int i = 0; i < n; ++i) {
        const int sex = i % 2;
        Image img(16, 16);
        const int cx = (sex == 0 ? 4 : 11) + jitter(rng);
        const int cy = 8 + jitter(rng);
        for (int r = 0; r < 16; ++r) {
            for (int c = 0; c < 16; ++c) {
                const bool inside = std::abs(r - cy) <= 2 && std::abs(c - cx) <= 2;
                img.at(r, c) = std::clamp((inside ? 0.8f : 0.1f) + noise(rng), 0.0f, 1.0f);
            }
        }
        ds.samples.push_back({"blob_" + std::to_string(i), CovariateRecord{40.0, sex, "s"}, img, {}});
    }
    return ds;
}

}  // namespace

TEST_CASE("accuracy and R-squared hand cases") {
    const std::vector<double> truth{1, 2, 4}, pred{1, 2, 3};
    CHECK(r2_score(pred, truth) == doctest::Approx(1.0 - 1.0 / (14.0 / 3.0)).epsilon(1e-12));
    CHECK(r2_score(pred, truth) == doctest::Approx(0.7857).epsilon(1e-4));
    const std::vector<double> mean_pred(3, 7.0 / 3.0);
    CHECK(std::abs(r2_score(mean_pred, truth)) < 1e-12);
    CHECK(accuracy(truth, truth) == 1.0);
    CHECK(accuracy(std::vector<double>{1, 0, 4}, truth) == doctest::Approx(2.0 / 3.0));
    CHECK_THROWS_AS(accuracy(std::vector<double>{}, std::vector<double>{}), std::invalid_argument);
    CHECK_THROWS_AS(r2_score(pred, std::vector<double>{2, 2, 2}), std::domain_error);
}

TEST_CASE("distance matrix matches a brute-force oracle") {
    std::vector<Image> imgs;
    for (uint64_t s = 0; s < 10; ++s) imgs.push_back(testing::random_image(8, s));
    const auto d = distance_matrix(imgs);
    for (size_t i = 0; i < imgs.size(); ++i) {
        for (size_t j = 0; j < imgs.size(); ++j) {
            double sq = 0.0;
            for (size_t k = 0; k < imgs[i].pixels.size(); ++k) {
                const double diff = static_cast<double>(imgs[i].pixels[k]) - imgs[j].pixels[k];
                sq += diff * diff;
            }
            CHECK(std::abs(d(i, j) - sq) < 1e-9);
        }
    }
    CHECK(d.isApprox(d.transpose(), 0.0));
    CHECK(d.diagonal().isZero(0.0));

    Image a(1, 1), b(1, 1);
    a.pixels[0] = 0.2f;
    b.pixels[0] = 0.5f;
    const std::vector<Image> pair{a, b};
    CHECK(distance_matrix(pair)(0, 1) == doctest::Approx(0.09).epsilon(1e-6));
    const std::vector<Image> same(4, testing::random_image(4, 9));
    CHECK(distance_matrix(same).isZero(0.0));
    CHECK_THROWS_AS(distance_matrix(std::vector<Image>{a}), std::invalid_argument);
    CHECK_THROWS_AS(distance_matrix(std::vector<Image>{a, Image(2, 2)}), std::invalid_argument);
}

TEST_CASE("PCC hand cases and affine invariance") {
    const auto d1 = from_upper({1, 2, 4}, 3);
    CHECK(pcc(d1, from_upper({1, 3, 4}, 3)) == doctest::Approx(39.0 / 42.0).epsilon(1e-12));
    CHECK(std::abs(pcc(d1, from_upper({1, 3, 4}, 3)) - 39.0 / 42.0) < 1e-9);
    CHECK(pcc(from_upper({1, 2, 3}, 3), from_upper({3, 2, 1}, 3)) == -1.0);
    CHECK(pcc(d1, d1 * 2.0) == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(pcc(d1, d1) == 1.0);

    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<double> x(15), y(15), y_affine(15);
    for (size_t i = 0; i < x.size(); ++i) {
        x[i] = u(rng);
        y[i] = x[i] + 0.3 * u(rng);
        y_affine[i] = 3.5 * y[i] + 2.0;
    }
    CHECK(pcc(from_upper(x, 6), from_upper(y, 6)) ==
          doctest::Approx(pcc(from_upper(x, 6), from_upper(y_affine, 6))).epsilon(1e-12));
    CHECK_THROWS_AS(pcc(from_upper({1, 1, 1}, 3), d1), std::domain_error);
}

TEST_CASE("Frechet distance closed forms") {
    Eigen::MatrixXd one(1, 1);
    one << 1.0;
    CHECK(frechet_distance(gaussian({0.0}, one), gaussian({1.0}, one)) == doctest::Approx(1.0).epsilon(1e-6));

    std::mt19937_64 rng(8);
    std::normal_distribution<double> n01;
    Eigen::MatrixXd f(50, 3);
    for (Eigen::Index i = 0; i < f.rows(); ++i) {
        for (Eigen::Index j = 0; j < f.cols(); ++j) f(i, j) = n01(rng);
    }
    CHECK(std::abs(frechet_distance(f, f)) < 1e-6);
    Eigen::RowVector3d m(0.5, -1.0, 2.0);
    const Eigen::MatrixXd shifted = f.rowwise() + m;
    CHECK(frechet_distance(f, shifted) == doctest::Approx(m.squaredNorm()).epsilon(1e-6));

    Eigen::MatrixXd g(60, 3);
    for (Eigen::Index i = 0; i < g.rows(); ++i) {
        for (Eigen::Index j = 0; j < g.cols(); ++j) g(i, j) = 2.0 * n01(rng) + 0.3;
    }
    const double ab = frechet_distance(f, g), ba = frechet_distance(g, f);
    CHECK(ab == doctest::Approx(ba).epsilon(1e-9));
    CHECK(ab > 0.0);

    Eigen::MatrixXd few = f.topRows(3);
    try {
        frechet_distance(few, few);
        FAIL("expected an error");
    } catch (const std::invalid_argument& e) {
        CHECK(std::string(e.what()).find("shrinkage") != std::string::npos);
    }
    CHECK(std::abs(frechet_distance(few, few, true)) < 1e-6);
    CHECK(frechet_distance(few, few.rowwise() + m, true) == doctest::Approx(m.squaredNorm()).epsilon(1e-6));
}

TEST_CASE("2-D embedding preserves geometry of rank-2 latents") {
    std::mt19937_64 rng(3);
    std::normal_distribution<double> n01;
    Eigen::MatrixXd z(12, 2);
    for (Eigen::Index i = 0; i < z.rows(); ++i) z.row(i) << 3.0 * n01(rng), n01(rng);
    z.rowwise() -= z.colwise().mean();
    const auto e = embed_latents_2d(z);
    REQUIRE(e.rows() == 12);
    REQUIRE(e.cols() == 2);
    for (Eigen::Index i = 0; i < z.rows(); ++i) {
        for (Eigen::Index j = 0; j < z.rows(); ++j) {
            CHECK(std::abs((z.row(i) - z.row(j)).norm() - (e.row(i) - e.row(j)).norm()) < 1e-6);
        }
    }

    // Rank-2 data embedded in 6 dimensions.
    Eigen::MatrixXd basis = Eigen::MatrixXd::Random(2, 6);
    const Eigen::MatrixXd high = z * basis;
    const auto e2 = embed_latents_2d(high);
    for (Eigen::Index i = 0; i < z.rows(); ++i) {
        for (Eigen::Index j = 0; j < z.rows(); ++j) {
            CHECK(std::abs((high.row(i) - high.row(j)).norm() - (e2.row(i) - e2.row(j)).norm()) < 1e-6);
        }
    }

    Eigen::MatrixXd dup = high;
    dup.row(5) = dup.row(2);
    const auto e3 = embed_latents_2d(dup);
    CHECK((e3.row(5) - e3.row(2)).norm() < 1e-12);

    CHECK(embed_latents_2d(Eigen::MatrixXd::Constant(5, 4, 0.7)).isZero(0.0));
    CHECK_THROWS_AS(embed_latents_2d(Eigen::MatrixXd::Zero(2, 4)), std::invalid_argument);
}

TEST_CASE("separability of labelled clusters") {
    Eigen::MatrixXd c(4, 2);
    c << 0, 0, 0, 2, 10, 0, 10, 2;
    const std::vector<std::string> labels{"a", "a", "b", "b"};
    const auto s = separability(c, labels);
    CHECK(s.intra_spread == doctest::Approx(1.0));
    CHECK(s.inter_centroid == doctest::Approx(10.0));
    CHECK(s.ratio() == doctest::Approx(10.0));
}

TEST_CASE("probe reaches high accuracy on separable two-blob images") {
    const auto train = two_blob_dataset(160, 1);
    const auto test = two_blob_dataset(60, 2);
    ProbeConfig cfg;
    cfg.task = ProbeTask::Sex;
    cfg.epochs = 40;
    cfg.seed = 0;
    const auto probe = train_probe(train, cfg);
    CHECK(sex_accuracy(probe, test) >= 0.95);
    CHECK(probe_score(probe, test) == sex_accuracy(probe, test));
}

TEST_CASE("probes on degenerate targets") {
    auto ds = two_blob_dataset(40, 3);
    ProbeConfig cfg;
    cfg.task = ProbeTask::Sex;
    cfg.epochs = 2;
    auto single_class = ds;
    for (auto& s : single_class.samples) s.covariates.sex = 1;
    CHECK_THROWS_AS(train_probe(single_class, cfg), std::invalid_argument);

    // Constant age carries no information: the probe learns the constant and R-squared is undefined.
    cfg.task = ProbeTask::Age;
    cfg.epochs = 5;
    const auto probe = train_probe(ds, cfg);
    const auto images = ds.images();
    for (double p : probe.predict(images)) CHECK(p == doctest::Approx(40.0).epsilon(0.05));
    CHECK_THROWS_AS(age_r2(probe, ds), std::domain_error);
    CHECK_THROWS_AS(site_accuracy(probe, Dataset{}), std::invalid_argument);
}

TEST_CASE("probe configuration validation") {
    ProbeConfig cfg;
    CHECK_NOTHROW(cfg.validate());
    cfg.validation_fraction = 0.0;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg.validation_fraction = 1.0;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    CHECK(probe_task_from_string("age") == ProbeTask::Age);
    CHECK(to_string(ProbeTask::Site) == "site");
    CHECK_THROWS_AS(probe_task_from_string("height"), std::invalid_argument);
}

TEST_CASE("splits are disjoint, complete and seeded") {
    const auto s = split_indices(100, 0.2, 0.25, 7);
    CHECK(s.test.size() == 20);
    CHECK(s.validation.size() == 20);
    CHECK(s.train.size() == 60);
    std::set<size_t> all;
    for (const auto* part : {&s.train, &s.validation, &s.test}) all.insert(part->begin(), part->end());
    CHECK(all.size() == 100);
    CHECK(split_indices(100, 0.2, 0.25, 7).test == s.test);
    CHECK(split_indices(100, 0.2, 0.25, 8).test != s.test);
}

TEST_CASE("metric summaries report spread only with two or more seeds") {
    const auto one = MetricSummary::from({0.5});
    CHECK(one.mean == 0.5);
    CHECK_FALSE(one.stddev.has_value());
    const auto two = MetricSummary::from({0.4, 0.6});
    CHECK(two.mean == doctest::Approx(0.5));
    REQUIRE(two.stddev.has_value());
    CHECK(*two.stddev == doctest::Approx(std::sqrt(0.02)));
}

TEST_CASE("evaluate: identity harmonization, report shape and pairing") {
    auto spec = CohortSpec::default_spec(3, 12, 5);
    spec.resolution = 16;
    const auto ds = generate_cohort(spec);
    TempDir dir("eval_splits");
    EvalOptions opts;
    opts.seeds = {0};
    opts.probe.epochs = 2;
    opts.shrinkage = true;
    opts.split_dir = dir.path;
    const auto report = evaluate(ds, ds, opts);
    CHECK(report.pcc_pooled == 1.0);
    CHECK(report.pcc_concatenated == 1.0);
    for (const auto& [site, v] : report.pcc_per_site) CHECK(v == 1.0);
    CHECK(std::abs(report.frechet_harmonized_vs_original) < 1e-6);
    CHECK(report.reference_site == ds.modal_site());
    CHECK_FALSE(report.unharmonized.site_accuracy.stddev.has_value());

    const auto j = report.to_json();
    for (const char* key : {"frechet", "pcc"}) CHECK(j.contains(key));
    for (const char* key : {"site_accuracy", "age_r2", "sex_accuracy"}) {
        CHECK(j["harmonized"].contains(key));
        CHECK(j["unharmonized"].contains(key));
    }
    const auto table = report.table();
    for (const char* col : {"FID", "Site Acc", "Age R2", "Sex Acc", "PCC"}) CHECK(table.find(col) != std::string::npos);

    // Split manifest: every id assigned to exactly one part.
    std::ifstream in(dir.path / "split_seed0.csv");
    REQUIRE(in.good());
    std::string line;
    std::getline(in, line);
    CHECK(line == "id,split");
    std::set<std::string> ids;
    size_t rows = 0;
    while (std::getline(in, line)) {
        ids.insert(line.substr(0, line.find(',')));
        ++rows;
    }
    CHECK(rows == ds.size());
    CHECK(ids.size() == ds.size());

    opts.seeds = {0, 1};
    const auto two = evaluate(ds, ds, opts);
    CHECK(two.harmonized.age_r2.stddev.has_value());
}

TEST_CASE("unpaired datasets are rejected naming the id") {
    auto spec = CohortSpec::default_spec(2, 3, 1);
    spec.resolution = 16;
    const auto ds = generate_cohort(spec);
    auto other = ds;
    other.samples[2].id = "intruder";
    try {
        check_paired(ds, other);
        FAIL("expected an error");
    } catch (const DataError& e) {
        CHECK(std::string(e.what()).find("intruder") != std::string::npos);
    }
    other = ds;
    other.samples.pop_back();
    CHECK_THROWS_AS(check_paired(ds, other), DataError);
    CHECK(dataset_fingerprint(ds) == dataset_fingerprint(generate_cohort(spec)));
    CHECK(dataset_fingerprint(ds) != dataset_fingerprint(other));
}
