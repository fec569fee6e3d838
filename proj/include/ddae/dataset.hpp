#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ddae/covariates.hpp"
#include "ddae/image.hpp"

namespace ddae {

struct ImageSample {
    std::string id;
    CovariateRecord covariates;
    Image image;
    std::string source_path;
};

struct Dataset {
    std::vector<ImageSample> samples;

    size_t size() const { return samples.size(); }
    bool empty() const { return samples.empty(); }
    std::vector<CovariateRecord> records() const;
    std::vector<Image> images() const;
    // Samples whose site is `site`, in dataset order.
    Dataset filter_site(const std::string& site) const;
    Dataset subset(std::span<const size_t> indices) const;
    // Site label with the most samples; ties go to the lexicographically smallest label.
    std::string modal_site() const;
};

// Canonical on-disk layout: <root>/covariates.csv (id,age,sex,site) and <root>/images/<id>.png.
void write_covariates_csv(const std::filesystem::path& path, const Dataset& dataset);
void save_dataset(const std::filesystem::path& root, const Dataset& dataset);

// Reads the canonical layout; pixels are v/255 without renormalisation.
Dataset load_dataset(const std::filesystem::path& root);

struct IngestOptions {
    int64_t resolution = 32;
};

// External data: covariate CSV plus an image directory holding <id>.png. Each image is resized
// (bilinear) to the configured resolution and min-max normalised to [0,1]; a constant image
// becomes all zeros.
Dataset ingest(const std::filesystem::path& image_dir, const std::filesystem::path& covariates_csv,
               const IngestOptions& options = {});

// Min-max normalisation with the constant-image policy above.
Image normalize_min_max(const Image& image);
Image resize_bilinear(const Image& image, int64_t rows, int64_t cols);

}  // namespace ddae
