#include "ddae/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <set>
#include <stdexcept>

#include "ddae/errors.hpp"

namespace ddae {

void SiteEffectSpec::validate() const {
    if (!(gain > 0.0)) throw std::invalid_argument("site effect: gain must be > 0");
    if (!(contrast_gamma > 0.0)) throw std::invalid_argument("site effect: contrast_gamma must be > 0");
    if (!(noise_sigma >= 0.0)) throw std::invalid_argument("site effect: noise_sigma must be >= 0");
    if (!std::isfinite(bias_field_amplitude)) throw std::invalid_argument("site effect: bias amplitude not finite");
}

void CohortSpec::validate() const {
    if (n_per_site < 1) throw std::invalid_argument("cohort: n_per_site must be >= 1");
    if (sites.empty()) throw std::invalid_argument("cohort: no sites");
    if (!(age_min < age_max)) throw std::invalid_argument("cohort: age_min must be below age_max");
    if (!(sex_ratio >= 0.0 && sex_ratio <= 1.0)) throw std::invalid_argument("cohort: sex_ratio outside [0,1]");
    if (resolution < 16) throw std::invalid_argument("cohort: resolution must be >= 16");
    std::set<std::string> names;
    for (const auto& [name, effect] : sites) {
        if (name.empty()) throw std::invalid_argument("cohort: empty site name");
        if (!names.insert(name).second) throw std::invalid_argument("cohort: duplicate site name '" + name + "'");
        effect.validate();
    }
}

CohortSpec CohortSpec::default_spec(int64_t site_count, int64_t n_per_site, uint64_t seed) {
    if (site_count < 1 || site_count > 26) throw std::invalid_argument("cohort: site count must be in [1, 26]");
    static constexpr double gains[] = {0.7, 1.0, 1.3};
    static constexpr double gammas[] = {0.8, 1.0, 1.2};
    static constexpr double biases[] = {0.0, 0.15, 0.3};
    CohortSpec spec;
    spec.n_per_site = n_per_site;
    spec.seed = seed;
    for (int64_t i = 0; i < site_count; ++i) {
        const auto k = static_cast<size_t>(i % 3);
        spec.sites.emplace_back(std::string("site_") + static_cast<char>('a' + i),
                                SiteEffectSpec{gains[k], biases[k], gammas[k], 0.02});
    }
    return spec;
}

int64_t Phantom::ventricle_pixels() const {
    return std::count(ventricle_mask.begin(), ventricle_mask.end(), uint8_t{1});
}

int64_t Phantom::brain_pixels() const { return std::count(brain_mask.begin(), brain_mask.end(), uint8_t{1}); }

namespace {

constexpr double kTissueEdge = 0.4;
constexpr double kTissueCentre = 0.6;
constexpr double kVentricle = 0.1;

// Squared elliptical radius of (x, y) about (cx, cy) with semi-axes (a, b) rotated by theta.
double ellipse_rho2(double x, double y, double cx, double cy, double a, double b, double cos_t, double sin_t) {
    const double dx = x - cx;
    const double dy = y - cy;
    const double u = dx * cos_t + dy * sin_t;
    const double v = -dx * sin_t + dy * cos_t;
    return (u * u) / (a * a) + (v * v) / (b * b);
}

}  // namespace

Phantom render_phantom_with_masks(double age, int sex, std::mt19937_64& rng, int64_t resolution, double age_min,
                                  double age_max) {
    if (resolution < 16) throw std::invalid_argument("render_phantom: resolution must be >= 16");
    if (!(age >= age_min && age <= age_max)) throw std::invalid_argument("render_phantom: age outside range");
    std::normal_distribution<double> n01(0.0, 1.0);
    const double r = static_cast<double>(resolution);
    const double mid = (r - 1.0) / 2.0;

    // Draw order is fixed so a given stream always yields the same subject.
    const double cx = mid + 0.025 * r * n01(rng);
    const double cy = mid + 0.025 * r * n01(rng);
    const double brain_a = 0.36 * r * (1.0 + 0.06 * n01(rng));
    const double brain_b = 0.42 * r * (1.0 + 0.06 * n01(rng));
    const double theta = 0.08 * n01(rng);
    const double vent_jitter_a = 1.0 + 0.05 * n01(rng);
    const double vent_jitter_b = 1.0 + 0.05 * n01(rng);
    const double vent_dx = 0.01 * r * n01(rng);
    const double vent_dy = 0.015 * r * n01(rng);

    const double age_norm = (age - age_min) / (age_max - age_min);
    const double vent_scale = std::sqrt(1.0 + 2.0 * age_norm);
    const double vent_a = 0.08 * r * vent_scale * vent_jitter_a;
    const double vent_b = 0.14 * r * vent_scale * vent_jitter_b;
    const double lateral = (sex == 1 ? 1.0 : -1.0) * 0.06 * r;
    const double cos_t = std::cos(theta);
    const double sin_t = std::sin(theta);
    const double vcx = cx + lateral * cos_t + vent_dx;
    const double vcy = cy + lateral * sin_t + vent_dy;

    Phantom p;
    p.image = Image(resolution, resolution);
    p.brain_mask.assign(static_cast<size_t>(resolution * resolution), 0);
    p.ventricle_mask.assign(static_cast<size_t>(resolution * resolution), 0);
    for (int64_t row = 0; row < resolution; ++row) {
        for (int64_t col = 0; col < resolution; ++col) {
            const double x = static_cast<double>(col);
            const double y = static_cast<double>(row);
            const double rho2 = ellipse_rho2(x, y, cx, cy, brain_a, brain_b, cos_t, sin_t);
            if (rho2 > 1.0) continue;
            const auto k = static_cast<size_t>(row * resolution + col);
            p.brain_mask[k] = 1;
            double value = kTissueEdge + (kTissueCentre - kTissueEdge) * (1.0 - rho2);
            if (ellipse_rho2(x, y, vcx, vcy, vent_a, vent_b, cos_t, sin_t) <= 1.0) {
                p.ventricle_mask[k] = 1;
                value = kVentricle;
            }
            p.image.pixels[k] = static_cast<float>(value);
        }
    }
    return p;
}

Image render_phantom(double age, int sex, std::mt19937_64& rng, int64_t resolution, double age_min, double age_max) {
    return render_phantom_with_masks(age, sex, rng, resolution, age_min, age_max).image;
}

Image apply_site_effect(const Image& image, const SiteEffectSpec& spec, std::mt19937_64& rng) {
    spec.validate();
    std::normal_distribution<double> noise(0.0, 1.0);
    Image out(image.rows, image.cols);
    const double denom = image.cols > 1 ? static_cast<double>(image.cols - 1) : 1.0;
    for (int64_t row = 0; row < image.rows; ++row) {
        for (int64_t col = 0; col < image.cols; ++col) {
            const double bias = 1.0 + spec.bias_field_amplitude * (2.0 * static_cast<double>(col) / denom - 1.0);
            double v = std::pow(static_cast<double>(image.at(row, col)), spec.contrast_gamma) * spec.gain * bias;
            if (spec.noise_sigma > 0.0) v += spec.noise_sigma * noise(rng);
            out.at(row, col) = static_cast<float>(std::clamp(v, 0.0, 1.0));
        }
    }
    return out;
}

std::mt19937_64 subject_stream(uint64_t seed, uint64_t subject_index) {
    std::seed_seq seq{static_cast<uint32_t>(seed), static_cast<uint32_t>(seed >> 32),
                      static_cast<uint32_t>(subject_index), static_cast<uint32_t>(subject_index >> 32)};
    return std::mt19937_64(seq);
}

Dataset generate_cohort(const CohortSpec& spec) {
    spec.validate();
    Dataset ds;
    uint64_t subject = 0;
    for (const auto& [site, effect] : spec.sites) {
        for (int64_t i = 0; i < spec.n_per_site; ++i, ++subject) {
            auto rng = subject_stream(spec.seed, subject);
            std::uniform_real_distribution<double> age_dist(spec.age_min, spec.age_max);
            std::bernoulli_distribution sex_dist(spec.sex_ratio);
            // Ages are kept to 0.01 years so the CSV representation round-trips exactly.
            const double age = std::round(age_dist(rng) * 100.0) / 100.0;
            const int sex = sex_dist(rng) ? 1 : 0;
            auto clean = render_phantom(age, sex, rng, spec.resolution, spec.age_min, spec.age_max);
            auto img = quantize_8bit(apply_site_effect(clean, effect, rng));
            char id[64];
            std::snprintf(id, sizeof id, "%s_%04lld", site.c_str(), static_cast<long long>(i));
            ds.samples.push_back(ImageSample{id, CovariateRecord{age, sex, site}, std::move(img), {}});
        }
    }
    return ds;
}

}  // namespace ddae
