#include "ddae/combat.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace ddae {

namespace {

Eigen::MatrixXd covariate_block(std::span<const CovariateRecord> records) {
    Eigen::MatrixXd cov(static_cast<Eigen::Index>(records.size()), 2);
    for (size_t i = 0; i < records.size(); ++i) {
        cov(static_cast<Eigen::Index>(i), 0) = records[i].age;
        cov(static_cast<Eigen::Index>(i), 1) = records[i].sex;
    }
    return cov;
}

std::vector<int64_t> site_indices(const SiteVocabulary& vocab, std::span<const CovariateRecord> records) {
    std::vector<int64_t> idx;
    idx.reserve(records.size());
    for (const auto& r : records) idx.push_back(vocab.index_of(r.site));
    return idx;
}

double sample_variance(const Eigen::VectorXd& v) {
    if (v.size() < 2) return 0.0;
    const double m = v.mean();
    return (v.array() - m).square().sum() / static_cast<double>(v.size() - 1);
}

double relative_change(double next, double prev) {
    return std::abs(next - prev) / std::max(std::abs(prev), 1e-12);
}

}  // namespace

int64_t CombatModel::passthrough_count() const { return std::count(passthrough.begin(), passthrough.end(), uint8_t{1}); }

double CombatModel::site_shift(const std::string& site, int64_t feature) const {
    const auto s = vocabulary.index_of(site);
    return gamma_star(s, feature) * std::sqrt(var_pooled(feature));
}

CombatModel combat_fit(const Eigen::MatrixXd& data, std::span<const CovariateRecord> records,
                       const CombatOptions& options) {
    const auto n = data.rows();
    const auto p = data.cols();
    if (n != static_cast<Eigen::Index>(records.size())) throw std::invalid_argument("combat_fit: one record per row");
    CombatModel m;
    m.vocabulary = SiteVocabulary::from_records(records);
    const auto k = static_cast<Eigen::Index>(m.vocabulary.size());
    if (k < 2) throw std::invalid_argument("combat_fit: need at least two sites, got " + m.vocabulary.describe());
    const auto site = site_indices(m.vocabulary, records);
    std::vector<Eigen::Index> counts(static_cast<size_t>(k), 0);
    for (auto s : site) ++counts[static_cast<size_t>(s)];
    for (Eigen::Index s = 0; s < k; ++s) {
        if (counts[static_cast<size_t>(s)] < 2) {
            throw std::invalid_argument("combat_fit: site '" + m.vocabulary.label(s) + "' has fewer than two samples");
        }
    }

    // Design: site indicators followed by age and sex.
    Eigen::MatrixXd design = Eigen::MatrixXd::Zero(n, k + 2);
    for (Eigen::Index i = 0; i < n; ++i) design(i, site[static_cast<size_t>(i)]) = 1.0;
    design.rightCols(2) = covariate_block(records);
    const Eigen::MatrixXd coef = design.completeOrthogonalDecomposition().solve(data);  // (k+2) x p

    m.site_weights.resize(k);
    for (Eigen::Index s = 0; s < k; ++s) m.site_weights(s) = static_cast<double>(counts[static_cast<size_t>(s)]) / n;
    m.grand_mean = coef.topRows(k).transpose() * m.site_weights;
    m.covariate_coef = coef.bottomRows(2);
    const Eigen::MatrixXd residual = data - design * coef;
    m.var_pooled = residual.array().square().colwise().mean().transpose();

    Eigen::MatrixXd stand_mean = design.rightCols(2) * m.covariate_coef;
    stand_mean.rowwise() += m.grand_mean.transpose();

    // Features without residual variance, overall or inside any site, are passed through.
    m.passthrough.assign(static_cast<size_t>(p), 0);
    Eigen::MatrixXd sdata = Eigen::MatrixXd::Zero(n, p);
    m.gamma_hat = Eigen::MatrixXd::Zero(k, p);
    m.delta_hat = Eigen::MatrixXd::Ones(k, p);
    std::vector<std::vector<Eigen::Index>> rows_of(static_cast<size_t>(k));
    for (Eigen::Index i = 0; i < n; ++i) rows_of[static_cast<size_t>(site[static_cast<size_t>(i)])].push_back(i);
    for (Eigen::Index f = 0; f < p; ++f) {
        if (!(m.var_pooled(f) > 1e-14)) {
            m.passthrough[static_cast<size_t>(f)] = 1;
            continue;
        }
        sdata.col(f) = (data.col(f) - stand_mean.col(f)) / std::sqrt(m.var_pooled(f));
        for (Eigen::Index s = 0; s < k; ++s) {
            const auto& rows = rows_of[static_cast<size_t>(s)];
            Eigen::VectorXd v(static_cast<Eigen::Index>(rows.size()));
            for (size_t r = 0; r < rows.size(); ++r) v(static_cast<Eigen::Index>(r)) = sdata(rows[r], f);
            m.gamma_hat(s, f) = v.mean();
            m.delta_hat(s, f) = sample_variance(v);
            if (!(m.delta_hat(s, f) > 1e-14)) m.passthrough[static_cast<size_t>(f)] = 1;
        }
    }

    std::vector<Eigen::Index> active;
    for (Eigen::Index f = 0; f < p; ++f) {
        if (!m.passthrough[static_cast<size_t>(f)]) active.push_back(f);
    }
    m.gamma_star = Eigen::MatrixXd::Zero(k, p);
    m.delta_star = Eigen::MatrixXd::Ones(k, p);
    if (active.empty()) return m;

    // Parametric priors per site: gamma ~ N(gamma_bar, tau2), delta ~ InvGamma(a, b) by moments.
    const double na = static_cast<double>(active.size());
    for (Eigen::Index s = 0; s < k; ++s) {
        Eigen::VectorXd g(static_cast<Eigen::Index>(active.size())), d(static_cast<Eigen::Index>(active.size()));
        for (size_t j = 0; j < active.size(); ++j) {
            g(static_cast<Eigen::Index>(j)) = m.gamma_hat(s, active[j]);
            d(static_cast<Eigen::Index>(j)) = m.delta_hat(s, active[j]);
        }
        const double gamma_bar = g.mean();
        const double tau2 = na > 1 ? sample_variance(g) : 0.0;
        const double d_mean = d.mean();
        const double d_var = na > 1 ? sample_variance(d) : 0.0;
        const bool flat_delta = !(d_var > 1e-14 * d_mean * d_mean);
        const double a_prior = flat_delta ? 0.0 : (2.0 * d_var + d_mean * d_mean) / d_var;
        const double b_prior = flat_delta ? 0.0 : (d_mean * d_var + d_mean * d_mean * d_mean) / d_var;
        const auto& rows = rows_of[static_cast<size_t>(s)];
        const double ns = static_cast<double>(rows.size());

        for (auto f : active) {
            const double g_hat = m.gamma_hat(s, f);
            double g_old = g_hat;
            double d_old = m.delta_hat(s, f);
            double g_new = g_old;
            double d_new = d_old;
            int it = 0;
            for (; it < options.max_iterations; ++it) {
                g_new = (tau2 * ns * g_hat + d_old * gamma_bar) / (tau2 * ns + d_old);
                if (flat_delta) {
                    // Point-mass prior at the common variance.
                    d_new = d_mean;
                } else {
                    double sum2 = 0.0;
                    for (auto r : rows) sum2 += (sdata(r, f) - g_new) * (sdata(r, f) - g_new);
                    d_new = (0.5 * sum2 + b_prior) / (ns / 2.0 + a_prior - 1.0);
                }
                const double change = std::max(relative_change(g_new, g_old), relative_change(d_new, d_old));
                g_old = g_new;
                d_old = d_new;
                if (change < options.tolerance) break;
            }
            m.iterations = std::max(m.iterations, it + 1);
            m.gamma_star(s, f) = g_new;
            m.delta_star(s, f) = d_new;
        }
    }
    return m;
}

Eigen::MatrixXd combat_apply(const CombatModel& model, const Eigen::MatrixXd& data,
                             std::span<const CovariateRecord> records, bool clamp_unit) {
    if (data.rows() != static_cast<Eigen::Index>(records.size())) {
        throw std::invalid_argument("combat_apply: one record per row");
    }
    if (data.cols() != model.features()) throw std::invalid_argument("combat_apply: feature count mismatch");
    const auto site = site_indices(model.vocabulary, records);
    const Eigen::MatrixXd cov = covariate_block(records);
    Eigen::MatrixXd out = data;
    for (Eigen::Index i = 0; i < data.rows(); ++i) {
        const auto s = site[static_cast<size_t>(i)];
        for (Eigen::Index f = 0; f < data.cols(); ++f) {
            if (model.passthrough[static_cast<size_t>(f)]) continue;
            const double stand = model.grand_mean(f) + cov(i, 0) * model.covariate_coef(0, f) +
                                 cov(i, 1) * model.covariate_coef(1, f);
            const double sd = std::sqrt(model.var_pooled(f));
            const double z = (data(i, f) - stand) / sd;
            const double adjusted = (z - model.gamma_star(s, f)) / std::sqrt(model.delta_star(s, f));
            out(i, f) = adjusted * sd + stand;
        }
    }
    if (clamp_unit) out = out.cwiseMax(0.0).cwiseMin(1.0);
    return out;
}

Eigen::MatrixXd dataset_features(const Dataset& dataset) {
    if (dataset.empty()) return {};
    const auto p = dataset.samples.front().image.size();
    Eigen::MatrixXd x(static_cast<Eigen::Index>(dataset.size()), p);
    for (size_t i = 0; i < dataset.size(); ++i) {
        const auto& img = dataset.samples[i].image;
        if (img.size() != p) throw std::invalid_argument("dataset_features: images differ in size");
        for (int64_t j = 0; j < p; ++j) x(static_cast<Eigen::Index>(i), j) = img.pixels[static_cast<size_t>(j)];
    }
    return x;
}

Dataset combat_harmonize(const Dataset& dataset, const CombatOptions& options, CombatModel* fitted) {
    const auto records = dataset.records();
    const auto features = dataset_features(dataset);
    auto model = combat_fit(features, records, options);
    const auto adjusted = combat_apply(model, features, records, true);
    Dataset out = dataset;
    for (size_t i = 0; i < out.size(); ++i) {
        auto& img = out.samples[i].image;
        for (int64_t j = 0; j < img.size(); ++j) {
            img.pixels[static_cast<size_t>(j)] = static_cast<float>(adjusted(static_cast<Eigen::Index>(i), j));
        }
        img = quantize_8bit(std::move(img));
    }
    if (fitted) *fitted = std::move(model);
    return out;
}

}  // namespace ddae
