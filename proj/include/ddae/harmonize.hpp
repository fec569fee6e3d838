#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ddae/covariates.hpp"
#include "ddae/dataset.hpp"
#include "ddae/image.hpp"
#include "ddae/model.hpp"
#include "ddae/sampling.hpp"

namespace ddae {

// Re-generates `x0` (values in [0,1]) with the site covariate replaced by `target_site`, keeping the
// image latent and the stochastic code. Output in [0,1]. Throws UnknownSiteError for a site outside
// the checkpoint vocabulary and std::invalid_argument on a shape mismatch.
Image harmonize_image(const Image& x0, const CovariateRecord& record, const std::string& target_site,
                      const DdaeModel& model, const SamplerConfig& sampler);

// Identity transfer: harmonize_image with the record's own site.
Image reconstruct_image(const Image& x0, const CovariateRecord& record, const DdaeModel& model,
                        const SamplerConfig& sampler);

struct HarmonizationJob {
    const Dataset* source = nullptr;
    const DdaeModel* model = nullptr;
    // Defaults to the modal site of the source dataset.
    std::optional<std::string> target_site;
    SamplerConfig sampler;
    // When set, images/<id>.png, covariates.csv and manifest.csv are written here.
    std::optional<std::filesystem::path> output_dir;
};

struct ManifestRow {
    std::string id;
    std::string source_path;
    double age = 0.0;
    int sex = 0;
    std::string site_original;
    std::string site_target;
    std::string status;  // "ok" or "error: <cause>"

    bool ok() const { return status == "ok"; }
};

struct HarmonizationResult {
    // Successful outputs only, on the 8-bit grid, carrying the source covariates (original site).
    Dataset harmonized;
    std::vector<ManifestRow> manifest;  // one row per source sample, source order
    std::string target_site;
    size_t failures = 0;
};

HarmonizationResult harmonize_dataset(const HarmonizationJob& job);

// Writes <dir>/images, <dir>/covariates.csv and <dir>/manifest.csv.
void write_harmonized_output(const std::filesystem::path& dir, const HarmonizationResult& result);
void write_manifest_csv(const std::filesystem::path& path, std::span<const ManifestRow> rows);
std::vector<ManifestRow> read_manifest_csv(const std::filesystem::path& path);

}  // namespace ddae
