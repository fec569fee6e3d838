#include "ddae/covariates.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <stdexcept>

#include <torch/torch.h>

#include "ddae/errors.hpp"

namespace ddae {

SiteVocabulary::SiteVocabulary(std::vector<std::string> sites) : sites_(std::move(sites)) {
    std::set<std::string> seen;
    for (const auto& s : sites_) {
        if (s.empty()) throw std::invalid_argument("site vocabulary: empty site label");
        if (!seen.insert(s).second) throw std::invalid_argument("site vocabulary: duplicate label '" + s + "'");
    }
}

SiteVocabulary SiteVocabulary::from_records(std::span<const CovariateRecord> records) {
    std::set<std::string> labels;
    for (const auto& r : records) labels.insert(r.site);
    return SiteVocabulary(std::vector<std::string>(labels.begin(), labels.end()));
}

bool SiteVocabulary::contains(const std::string& label) const {
    return std::find(sites_.begin(), sites_.end(), label) != sites_.end();
}

int64_t SiteVocabulary::index_of(const std::string& label) const {
    auto it = std::find(sites_.begin(), sites_.end(), label);
    if (it == sites_.end()) throw UnknownSiteError(label, describe());
    return static_cast<int64_t>(it - sites_.begin());
}

std::string SiteVocabulary::describe() const {
    std::string out = "[";
    for (size_t i = 0; i < sites_.size(); ++i) {
        if (i) out += ", ";
        out += sites_[i];
    }
    return out + "]";
}

CovariateNorm CovariateNorm::fit(std::span<const CovariateRecord> records, double age_min, double age_max) {
    if (records.empty()) throw std::invalid_argument("CovariateNorm::fit: no records");
    double sum = 0.0;
    for (const auto& r : records) sum += r.age;
    const double mean = sum / static_cast<double>(records.size());
    double ss = 0.0;
    for (const auto& r : records) ss += (r.age - mean) * (r.age - mean);
    double sd = std::sqrt(ss / static_cast<double>(records.size()));
    if (!(sd > 0.0)) sd = 1.0;
    return CovariateNorm{mean, sd, age_min, age_max};
}

std::string to_string(SiteEncoding encoding) { return encoding == SiteEncoding::Scalar ? "scalar" : "one_hot"; }

SiteEncoding site_encoding_from_string(const std::string& name) {
    if (name == "scalar") return SiteEncoding::Scalar;
    if (name == "one_hot") return SiteEncoding::OneHot;
    throw std::invalid_argument("unknown site encoding '" + name + "' (expected scalar or one_hot)");
}

int64_t condition_width(SiteEncoding encoding, size_t vocabulary_size) {
    return encoding == SiteEncoding::Scalar ? 3 : 2 + static_cast<int64_t>(vocabulary_size);
}

void validate_record(const CovariateRecord& record, const CovariateNorm& norm) {
    if (!std::isfinite(record.age) || record.age < norm.age_min || record.age > norm.age_max) {
        throw std::invalid_argument("covariate age " + std::to_string(record.age) + " outside declared range [" +
                                    std::to_string(norm.age_min) + ", " + std::to_string(norm.age_max) + "]");
    }
    if (record.sex != 0 && record.sex != 1) {
        throw std::invalid_argument("covariate sex must be 0 or 1, got " + std::to_string(record.sex));
    }
}

ConditionVector encode_covariates(const CovariateRecord& record, const CovariateNorm& norm,
                                  const SiteVocabulary& vocabulary, SiteEncoding encoding) {
    validate_record(record, norm);
    const auto site = vocabulary.index_of(record.site);
    ConditionVector c;
    c.values.push_back(static_cast<float>((record.age - norm.age_mean) / norm.age_std));
    c.values.push_back(static_cast<float>(record.sex));
    if (encoding == SiteEncoding::Scalar) {
        const double denom = vocabulary.size() > 1 ? static_cast<double>(vocabulary.size() - 1) : 1.0;
        c.values.push_back(vocabulary.size() > 1 ? static_cast<float>(static_cast<double>(site) / denom) : 0.0f);
    } else {
        for (size_t i = 0; i < vocabulary.size(); ++i) c.values.push_back(static_cast<int64_t>(i) == site ? 1.0f : 0.0f);
    }
    return c;
}

torch::Tensor encode_covariate_batch(std::span<const CovariateRecord> records, const CovariateNorm& norm,
                                     const SiteVocabulary& vocabulary, SiteEncoding encoding) {
    const auto width = condition_width(encoding, vocabulary.size());
    auto out = torch::empty({static_cast<int64_t>(records.size()), width}, torch::kFloat32);
    auto acc = out.accessor<float, 2>();
    for (size_t i = 0; i < records.size(); ++i) {
        auto c = encode_covariates(records[i], norm, vocabulary, encoding);
        for (int64_t j = 0; j < width; ++j) acc[static_cast<int64_t>(i)][j] = c.values[static_cast<size_t>(j)];
    }
    return out;
}

}  // namespace ddae
