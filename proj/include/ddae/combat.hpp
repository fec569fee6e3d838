#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ddae/covariates.hpp"
#include "ddae/dataset.hpp"

namespace ddae {

struct CombatOptions {
    double tolerance = 1e-6;  // relative change of gamma*/delta* between empirical-Bayes iterations
    int max_iterations = 10000;
};

// Location/scale harmonisation model with age and sex as preserved covariates. Rows of the
// per-site matrices follow the vocabulary order; columns are features.
struct CombatModel {
    SiteVocabulary vocabulary;
    Eigen::VectorXd site_weights;      // n_site / n
    Eigen::VectorXd grand_mean;        // p
    Eigen::VectorXd var_pooled;        // p
    Eigen::MatrixXd covariate_coef;    // 2 x p: age (years), sex
    Eigen::MatrixXd gamma_hat, delta_hat;
    Eigen::MatrixXd gamma_star, delta_star;
    std::vector<uint8_t> passthrough;  // features left untouched (no variance)
    int iterations = 0;

    int64_t features() const { return grand_mean.size(); }
    int64_t passthrough_count() const;
    // Estimated site location shift of feature f relative to the grand mean, in data units.
    double site_shift(const std::string& site, int64_t feature) const;
};

// Expects one row per sample, one column per feature.
CombatModel combat_fit(const Eigen::MatrixXd& data, std::span<const CovariateRecord> records,
                       const CombatOptions& options = {});

// Removes the fitted site location/scale, keeps the covariate and grand-mean component. With
// `clamp_unit` the output is clamped to [0,1].
Eigen::MatrixXd combat_apply(const CombatModel& model, const Eigen::MatrixXd& data,
                             std::span<const CovariateRecord> records, bool clamp_unit = true);

// Flattened pixels, one row per sample.
Eigen::MatrixXd dataset_features(const Dataset& dataset);

// Fit on the dataset and apply to it; images are returned on the 8-bit grid.
Dataset combat_harmonize(const Dataset& dataset, const CombatOptions& options = {},
                         CombatModel* fitted = nullptr);

}  // namespace ddae
