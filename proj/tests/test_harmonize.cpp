#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <fstream>
#include <map>

#include "ddae/errors.hpp"
#include "ddae/harmonize.hpp"
#include "ddae/synth.hpp"
#include "test_helpers.hpp"

using namespace ddae;
using ddae::testing::TempDir;
using ddae::testing::tiny_meta;

namespace {

Dataset small_cohort(int64_t per_site, uint64_t seed = 3) {
    auto spec = CohortSpec::default_spec(3, per_site, seed);
    spec.resolution = 16;
    return generate_cohort(spec);
}

const SamplerConfig kSampler = SamplerConfig::uniform(5, 50);

}  // namespace

TEST_CASE("identity transfer equals reconstruction bit for bit") {
    DdaeModel model(tiny_meta(1));
    const auto ds = small_cohort(2);
    for (const auto& s : ds.samples) {
        const auto a = harmonize_image(s.image, s.covariates, s.covariates.site, model, kSampler);
        const auto b = reconstruct_image(s.image, s.covariates, model, kSampler);
        CHECK(a.pixels == b.pixels);
    }
}

TEST_CASE("harmonize_image is deterministic, bounded and target dependent") {
    DdaeModel model(tiny_meta(2));
    const auto ds = small_cohort(1);
    const auto& s = ds.samples[0];
    const auto a = harmonize_image(s.image, s.covariates, "site_c", model, kSampler);
    const auto b = harmonize_image(s.image, s.covariates, "site_c", model, kSampler);
    CHECK(a.pixels == b.pixels);
    CHECK(std::all_of(a.pixels.begin(), a.pixels.end(), [](float v) { return v >= 0.0f && v <= 1.0f; }));
    const auto other = harmonize_image(s.image, s.covariates, "site_b", model, kSampler);
    CHECK(a.pixels != other.pixels);
}

TEST_CASE("harmonize_image rejects unknown sites and wrong shapes") {
    DdaeModel model(tiny_meta(0));
    const auto img = testing::random_image(16, 1);
    const CovariateRecord rec{40.0, 0, "site_a"};
    CHECK_THROWS_AS(harmonize_image(img, rec, "site_z", model, kSampler), UnknownSiteError);
    CHECK_THROWS_AS(harmonize_image(img, CovariateRecord{40.0, 0, "site_z"}, "site_a", model, kSampler),
                    UnknownSiteError);
    CHECK_THROWS_AS(harmonize_image(testing::random_image(8, 1), rec, "site_a", model, kSampler),
                    std::invalid_argument);
}

TEST_CASE("empty dataset yields an empty manifest") {
    DdaeModel model(tiny_meta(0));
    Dataset empty;
    HarmonizationJob job{&empty, &model, std::nullopt, kSampler, std::nullopt};
    const auto r = harmonize_dataset(job);
    CHECK(r.manifest.empty());
    CHECK(r.failures == 0);
    CHECK(r.harmonized.empty());
}

TEST_CASE("dataset harmonization: completeness, modal default and covariate preservation") {
    DdaeModel model(tiny_meta(4));
    auto ds = small_cohort(2);
    // Make site_b the largest site.
    auto extra = small_cohort(1, 9).filter_site("site_b");
    extra.samples[0].id = "site_b_extra";
    ds.samples.push_back(extra.samples[0]);

    HarmonizationJob job{&ds, &model, std::nullopt, kSampler, std::nullopt};
    const auto r = harmonize_dataset(job);
    CHECK(r.target_site == "site_b");
    REQUIRE(r.manifest.size() == ds.size());
    CHECK(r.harmonized.size() == ds.size());
    for (size_t i = 0; i < ds.size(); ++i) {
        const auto& row = r.manifest[i];
        CHECK(row.id == ds.samples[i].id);
        CHECK(row.age == ds.samples[i].covariates.age);
        CHECK(row.sex == ds.samples[i].covariates.sex);
        CHECK(row.site_original == ds.samples[i].covariates.site);
        CHECK(row.site_target == "site_b");
        CHECK(row.ok());
        CHECK(r.harmonized.samples[i].covariates == ds.samples[i].covariates);
    }

    job.target_site = "site_q";
    CHECK_THROWS_AS(harmonize_dataset(job), UnknownSiteError);
}

TEST_CASE("per-image failures are recorded and the batch continues") {
    DdaeModel model(tiny_meta(5));
    auto ds = small_cohort(1);
    ds.samples[1].image = testing::random_image(8, 3);
    HarmonizationJob job{&ds, &model, std::string("site_a"), kSampler, std::nullopt};
    const auto r = harmonize_dataset(job);
    CHECK(r.failures == 1);
    REQUIRE(r.manifest.size() == 3);
    CHECK(r.manifest[0].ok());
    CHECK(r.manifest[1].status.rfind("error: ", 0) == 0);
    CHECK(r.manifest[2].ok());
    CHECK(r.harmonized.size() == 2);
}

TEST_CASE("outputs do not depend on iteration order") {
    DdaeModel model(tiny_meta(6));
    const auto ds = small_cohort(2);
    Dataset reversed = ds;
    std::reverse(reversed.samples.begin(), reversed.samples.end());
    HarmonizationJob job{&ds, &model, std::string("site_a"), kSampler, std::nullopt};
    const auto forward = harmonize_dataset(job);
    job.source = &reversed;
    const auto backward = harmonize_dataset(job);
    std::map<std::string, std::vector<float>> a, b;
    for (const auto& s : forward.harmonized.samples) a[s.id] = s.image.pixels;
    for (const auto& s : backward.harmonized.samples) b[s.id] = s.image.pixels;
    CHECK(a == b);
}

TEST_CASE("output directory layout and manifest round trip") {
    TempDir dir("harmonize_out");
    DdaeModel model(tiny_meta(7));
    auto ds = small_cohort(1);
    ds.samples[0].source_path = "in/dir, with \"quotes\".png";
    HarmonizationJob job{&ds, &model, std::string("site_c"), kSampler, dir.path};
    const auto r = harmonize_dataset(job);
    for (const auto& s : ds.samples) CHECK(std::filesystem::exists(dir.path / "images" / (s.id + ".png")));
    const auto rows = read_manifest_csv(dir.path / "manifest.csv");
    REQUIRE(rows.size() == r.manifest.size());
    for (size_t i = 0; i < rows.size(); ++i) {
        CHECK(rows[i].id == r.manifest[i].id);
        CHECK(rows[i].source_path == r.manifest[i].source_path);
        CHECK(rows[i].age == r.manifest[i].age);
        CHECK(rows[i].sex == r.manifest[i].sex);
        CHECK(rows[i].site_original == r.manifest[i].site_original);
        CHECK(rows[i].site_target == "site_c");
        CHECK(rows[i].status == "ok");
    }
    std::ifstream in(dir.path / "manifest.csv");
    std::string header;
    std::getline(in, header);
    CHECK(header == "id,source_path,age,sex,site_original,site_target,status");

    const auto reloaded = load_dataset(dir.path);
    CHECK(reloaded.size() == ds.size());
}
