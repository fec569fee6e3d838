#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "ddae/covariates.hpp"
#include "ddae/errors.hpp"

using namespace ddae;

namespace {

const SiteVocabulary kVocab({"site_a", "site_b", "site_c"});
const CovariateNorm kNorm{50.0, 10.0, 0.0, 120.0};

}  // namespace

TEST_CASE("condition vector zero point and unit offsets") {
    auto c = encode_covariates({50.0, 0, "site_a"}, kNorm, kVocab).values;
    CHECK(c == std::vector<float>{0.0f, 0.0f, 0.0f});
    c = encode_covariates({60.0, 1, "site_c"}, kNorm, kVocab).values;
    CHECK(c == std::vector<float>{1.0f, 1.0f, 1.0f});
    c = encode_covariates({40.0, 1, "site_b"}, kNorm, kVocab).values;
    CHECK(c[0] == doctest::Approx(-1.0));
    CHECK(c[2] == doctest::Approx(0.5));
}

TEST_CASE("single-site vocabulary encodes the site as zero") {
    const SiteVocabulary one({"only"});
    CHECK(encode_covariates({50.0, 1, "only"}, kNorm, one).values[2] == 0.0f);
}

TEST_CASE("unknown site error names the label and the vocabulary") {
    try {
        encode_covariates({50.0, 0, "siteX"}, kNorm, kVocab);
        FAIL("expected UnknownSiteError");
    } catch (const UnknownSiteError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("siteX") != std::string::npos);
        CHECK(msg.find("site_a") != std::string::npos);
        CHECK(msg.find("site_c") != std::string::npos);
    }
}

TEST_CASE("record validation") {
    CHECK_NOTHROW(validate_record({0.0, 0, "s"}, kNorm));
    CHECK_NOTHROW(validate_record({120.0, 1, "s"}, kNorm));
    CHECK_THROWS_AS(validate_record({-0.5, 0, "s"}, kNorm), std::invalid_argument);
    CHECK_THROWS_AS(validate_record({121.0, 0, "s"}, kNorm), std::invalid_argument);
    CHECK_THROWS_AS(validate_record({std::nan(""), 0, "s"}, kNorm), std::invalid_argument);
    CHECK_THROWS_AS(validate_record({30.0, 2, "s"}, kNorm), std::invalid_argument);
}

TEST_CASE("vocabulary is sorted, unique and indexable") {
    const std::vector<CovariateRecord> recs{{30, 0, "b"}, {40, 1, "a"}, {50, 0, "b"}, {60, 1, "c"}};
    const auto v = SiteVocabulary::from_records(recs);
    CHECK(v.sites() == std::vector<std::string>{"a", "b", "c"});
    CHECK(v.index_of("c") == 2);
    CHECK(v.label(1) == "b");
    CHECK(v.contains("a"));
    CHECK_FALSE(v.contains("z"));
    CHECK_THROWS_AS(SiteVocabulary({"a", "a"}), std::invalid_argument);
    CHECK_THROWS_AS(SiteVocabulary({"a", ""}), std::invalid_argument);
}

TEST_CASE("normalisation constants use the population standard deviation") {
    const std::vector<CovariateRecord> recs{{20, 0, "a"}, {40, 1, "a"}, {60, 0, "b"}};
    const auto n = CovariateNorm::fit(recs, 10.0, 90.0);
    CHECK(n.age_mean == doctest::Approx(40.0));
    CHECK(n.age_std == doctest::Approx(std::sqrt(800.0 / 3.0)));
    CHECK(n.age_min == 10.0);
    CHECK(n.age_max == 90.0);
    const std::vector<CovariateRecord> flat{{33, 0, "a"}, {33, 1, "a"}};
    CHECK(CovariateNorm::fit(flat).age_std == 1.0);
}

TEST_CASE("one-hot site encoding widens the condition vector") {
    CHECK(condition_width(SiteEncoding::Scalar, 7) == 3);
    CHECK(condition_width(SiteEncoding::OneHot, 7) == 9);
    const auto c = encode_covariates({50.0, 1, "site_b"}, kNorm, kVocab, SiteEncoding::OneHot).values;
    CHECK(c == std::vector<float>{0.0f, 1.0f, 0.0f, 1.0f, 0.0f});
    CHECK(site_encoding_from_string(to_string(SiteEncoding::OneHot)) == SiteEncoding::OneHot);
    CHECK_THROWS_AS(site_encoding_from_string("ordinal"), std::invalid_argument);
}

TEST_CASE("batch encoding stacks rows") {
    const std::vector<CovariateRecord> recs{{50.0, 0, "site_a"}, {60.0, 1, "site_c"}};
    const auto t = encode_covariate_batch(recs, kNorm, kVocab);
    CHECK(t.sizes() == torch::IntArrayRef({2, 3}));
    CHECK(t[1][0].item<float>() == 1.0f);
    CHECK(t[1][2].item<float>() == 1.0f);
}
