#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "ddae/dataset.hpp"
#include "ddae/image.hpp"

namespace ddae {

// Scanner/site distortion applied on top of a clean phantom.
struct SiteEffectSpec {
    double gain = 1.0;
    double bias_field_amplitude = 0.0;
    double contrast_gamma = 1.0;
    double noise_sigma = 0.0;

    void validate() const;
};

struct CohortSpec {
    int64_t n_per_site = 200;
    std::vector<std::pair<std::string, SiteEffectSpec>> sites;
    double age_min = 20.0;
    double age_max = 80.0;
    double sex_ratio = 0.5;  // probability of sex = 1
    int64_t resolution = 32;
    uint64_t seed = 0;

    void validate() const;

    // `site_count` sites named site_a, site_b, ... cycling through gains {0.7, 1.0, 1.3},
    // gammas {0.8, 1.0, 1.2}, bias amplitudes {0, 0.15, 0.3}, noise sigma 0.02.
    static CohortSpec default_spec(int64_t site_count, int64_t n_per_site, uint64_t seed);
};

struct Phantom {
    Image image;
    std::vector<uint8_t> brain_mask;
    std::vector<uint8_t> ventricle_mask;

    int64_t ventricle_pixels() const;
    int64_t brain_pixels() const;
};

// Elliptical brain with a shaded interior and a dark ventricle. Ventricle area grows linearly
// with normalised age (three-fold across [age_min, age_max]), sex shifts the ventricle laterally,
// and shape parameters are jittered per subject. Background is exactly 0.
Phantom render_phantom_with_masks(double age, int sex, std::mt19937_64& rng, int64_t resolution,
                                  double age_min = 20.0, double age_max = 80.0);
Image render_phantom(double age, int sex, std::mt19937_64& rng, int64_t resolution, double age_min = 20.0,
                     double age_max = 80.0);

// clamp(image^gamma * gain * bias + N(0, sigma^2), 0, 1), bias = 1 + amplitude * (2x/(W-1) - 1).
Image apply_site_effect(const Image& image, const SiteEffectSpec& spec, std::mt19937_64& rng);

// Per-subject random stream derived from (seed, subject index).
std::mt19937_64 subject_stream(uint64_t seed, uint64_t subject_index);

// All sites in spec order, ids "<site>_<nnnn>", pixels on the 8-bit grid so that the
// in-memory dataset equals what save_dataset writes.
Dataset generate_cohort(const CohortSpec& spec);

}  // namespace ddae
