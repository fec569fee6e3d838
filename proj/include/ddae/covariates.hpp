#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <torch/types.h>

namespace ddae {

struct CovariateRecord {
    double age = 0.0;  // years
    int sex = 0;       // 0 or 1
    std::string site;

    bool operator==(const CovariateRecord&) const = default;
};

// Ordered, duplicate-free list of site labels fixed at training time.
class SiteVocabulary {
  public:
    SiteVocabulary() = default;
    explicit SiteVocabulary(std::vector<std::string> sites);

    // Sorted unique labels found in the records.
    static SiteVocabulary from_records(std::span<const CovariateRecord> records);

    size_t size() const { return sites_.size(); }
    bool empty() const { return sites_.empty(); }
    bool contains(const std::string& label) const;
    int64_t index_of(const std::string& label) const;  // throws UnknownSiteError
    const std::string& label(int64_t index) const { return sites_.at(static_cast<size_t>(index)); }
    const std::vector<std::string>& sites() const { return sites_; }
    std::string describe() const;

    bool operator==(const SiteVocabulary&) const = default;

  private:
    std::vector<std::string> sites_;
};

// Age normalisation constants of the training cohort and its declared age range.
struct CovariateNorm {
    double age_mean = 0.0;
    double age_std = 1.0;
    double age_min = 0.0;
    double age_max = 120.0;

    static CovariateNorm fit(std::span<const CovariateRecord> records, double age_min = 0.0, double age_max = 120.0);
    bool operator==(const CovariateNorm&) const = default;
};

enum class SiteEncoding { Scalar, OneHot };

std::string to_string(SiteEncoding encoding);
SiteEncoding site_encoding_from_string(const std::string& name);

// Width of the known-variance encoder input: 3 for scalar site encoding, 2 + |vocab| for one-hot.
int64_t condition_width(SiteEncoding encoding, size_t vocabulary_size);

struct ConditionVector {
    std::vector<float> values;
};

// Throws std::invalid_argument if age is non-finite or outside the declared range, or sex is not 0/1.
void validate_record(const CovariateRecord& record, const CovariateNorm& norm);

// (normalised age, sex, site index scaled to [0,1]); throws UnknownSiteError on unknown labels.
ConditionVector encode_covariates(const CovariateRecord& record, const CovariateNorm& norm,
                                  const SiteVocabulary& vocabulary, SiteEncoding encoding = SiteEncoding::Scalar);

// Row-stacked condition vectors, [B, condition_width] float32.
torch::Tensor encode_covariate_batch(std::span<const CovariateRecord> records, const CovariateNorm& norm,
                                     const SiteVocabulary& vocabulary, SiteEncoding encoding = SiteEncoding::Scalar);

}  // namespace ddae
