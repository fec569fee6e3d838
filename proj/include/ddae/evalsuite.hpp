#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <torch/torch.h>

#include "json.hpp"

#include "ddae/covariates.hpp"
#include "ddae/dataset.hpp"
#include "ddae/model.hpp"

namespace ddae {

// ---- probes -------------------------------------------------------------------------------

enum class ProbeTask { Site, Sex, Age };
std::string to_string(ProbeTask task);
ProbeTask probe_task_from_string(const std::string& name);

struct ProbeConfig {
    ProbeTask task = ProbeTask::Site;
    int64_t epochs = 100;  // upper bound; early stopping usually ends sooner
    double learning_rate = 1e-4;
    double validation_fraction = 0.2;
    int64_t patience = 10;
    int64_t batch_size = 32;
    uint64_t seed = 0;

    void validate() const;
};

// Three strided convolutions followed by a three-layer fully connected head.
struct ProbeNetImpl : torch::nn::Module {
    ProbeNetImpl(int64_t resolution, int64_t outputs);
    torch::Tensor features(const torch::Tensor& x);  // width 128
    torch::Tensor forward(const torch::Tensor& x);

    torch::nn::Conv2d conv1{nullptr}, conv2{nullptr}, conv3{nullptr};
    torch::nn::Linear fc1{nullptr}, fc2{nullptr}, fc3{nullptr};
};
TORCH_MODULE(ProbeNet);

class Probe {
  public:
    Probe(ProbeTask task, int64_t resolution, SiteVocabulary vocabulary, double target_mean, double target_std);

    ProbeTask task() const { return task_; }
    const SiteVocabulary& vocabulary() const { return vocabulary_; }
    ProbeNet& net() { return net_; }

    // Images in [0,1]. Site: label index; sex: 0/1; age: years.
    std::vector<double> predict(std::span<const Image> images) const;
    // Penultimate activations, one row per image.
    Eigen::MatrixXd features(std::span<const Image> images) const;

    double target_mean() const { return target_mean_; }
    double target_std() const { return target_std_; }

  private:
    ProbeTask task_;
    int64_t resolution_;
    SiteVocabulary vocabulary_;
    double target_mean_, target_std_;
    mutable ProbeNet net_{nullptr};
};

// Trains on `train`, early-stopping on `validation`; the best-validation weights are kept.
Probe train_probe(const Dataset& train, const Dataset& validation, const ProbeConfig& config);
// Splits `validation_fraction` of `dataset` off for early stopping.
Probe train_probe(const Dataset& dataset, const ProbeConfig& config);

double accuracy(std::span<const double> predicted, std::span<const double> truth);
double r2_score(std::span<const double> predicted, std::span<const double> truth);

double site_accuracy(const Probe& probe, const Dataset& test);
double sex_accuracy(const Probe& probe, const Dataset& test);
double age_r2(const Probe& probe, const Dataset& test);
// Dispatches on the probe task.
double probe_score(const Probe& probe, const Dataset& test);

// ---- splits -------------------------------------------------------------------------------

struct DataSplit {
    std::vector<size_t> train, validation, test;
};

// Seeded permutation split into disjoint index sets.
DataSplit split_indices(size_t n, double test_fraction, double validation_fraction, uint64_t seed);
void write_split_csv(const std::filesystem::path& path, const Dataset& dataset, const DataSplit& split);

// ---- within-site variability --------------------------------------------------------------

// D(i,j) = squared Euclidean distance between flattened images.
Eigen::MatrixXd distance_matrix(std::span<const Image> images);
// Pearson correlation of the strict upper triangles. Throws std::domain_error on zero variance.
double pcc(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b);

// ---- Frechet distance ---------------------------------------------------------------------

struct GaussianStats {
    Eigen::VectorXd mean;
    Eigen::MatrixXd covariance;
};

// Rows are samples. Needs more samples than feature dimensions unless `shrinkage` adds 1e-6 I.
GaussianStats fit_gaussian(const Eigen::MatrixXd& features, bool shrinkage = false);
double frechet_distance(const GaussianStats& a, const GaussianStats& b);
double frechet_distance(const Eigen::MatrixXd& features_a, const Eigen::MatrixXd& features_b, bool shrinkage = false);

// ---- latent embedding ---------------------------------------------------------------------

// Rows are [z_kappa | z_upsilon] per sample. With `site_override`, every record's site is replaced
// before the known-variance encoder runs.
Eigen::MatrixXd latent_pairs(const DdaeModel& model, const Dataset& dataset,
                             const std::optional<std::string>& site_override = std::nullopt);

// Centred projection onto the top two principal directions (n x 2). All-equal input maps to zeros.
Eigen::MatrixXd embed_latents_2d(const Eigen::MatrixXd& latents);

struct Separability {
    double inter_centroid = 0.0;  // mean distance between site centroids
    double intra_spread = 0.0;    // mean distance of points to their own site centroid
    double ratio() const { return intra_spread > 0 ? inter_centroid / intra_spread : inter_centroid > 0 ? INFINITY : 0; }
};
Separability separability(const Eigen::MatrixXd& coords, std::span<const std::string> labels);

void write_embedding_csv(const std::filesystem::path& path, const Eigen::MatrixXd& coords,
                         std::span<const std::string> ids, std::span<const std::string> labels);
// Scatter plot coloured by label.
void write_embedding_plot(const std::filesystem::path& path, const Eigen::MatrixXd& coords,
                          std::span<const std::string> labels, int size = 512);

// ---- report -------------------------------------------------------------------------------

struct MetricSummary {
    std::vector<double> values;
    double mean = 0.0;
    std::optional<double> stddev;  // sample std, present with two or more seeds

    static MetricSummary from(std::vector<double> values);
};

struct ProbeRow {
    MetricSummary site_accuracy, age_r2, sex_accuracy;
};

struct EvalOptions {
    std::vector<uint64_t> seeds{0, 1, 2, 3, 4};
    ProbeConfig probe;  // task and seed are set per run
    double test_fraction = 0.2;
    std::optional<std::string> reference_site;  // defaults to the modal site
    bool shrinkage = false;
    std::optional<std::filesystem::path> split_dir;  // split manifests written here when set
};

struct EvalReport {
    std::vector<uint64_t> seeds;
    std::string reference_site;
    std::string original_fingerprint, harmonized_fingerprint;
    ProbeRow unharmonized, harmonized;
    std::map<std::string, double> pcc_per_site;
    double pcc_pooled = 0.0;        // pair-count weighted mean of per-site values
    double pcc_concatenated = 0.0;  // one correlation over all within-site pairs
    double frechet_harmonized_vs_reference = 0.0;    // harmonized non-reference vs reference originals
    double frechet_unharmonized_vs_reference = 0.0;  // original non-reference vs reference originals
    double frechet_harmonized_vs_original = 0.0;     // all harmonized vs all originals

    nlohmann::json to_json() const;
    std::string table() const;
};

// Datasets must hold the same ids in the same order; throws DataError naming the first mismatch.
void check_paired(const Dataset& original, const Dataset& harmonized);

EvalReport evaluate(const Dataset& original, const Dataset& harmonized, const EvalOptions& options = {});

// Stable 64-bit digest of ids, covariates and pixels, as hex.
std::string dataset_fingerprint(const Dataset& dataset);

}  // namespace ddae
