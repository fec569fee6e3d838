#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <torch/types.h>

#include "json.hpp"

#include "ddae/dataset.hpp"
#include "ddae/model.hpp"
#include "ddae/schedule.hpp"

namespace ddae {

enum class AuxMode { None, SuperviseKappa, AdversarialUpsilon, Both };

std::string to_string(AuxMode mode);
AuxMode aux_mode_from_string(const std::string& name);

struct TrainConfig {
    int64_t epochs = 10;
    int64_t batch_size = 32;
    double learning_rate = 1e-4;
    ModelConfig model;
    ScheduleFingerprint schedule{"linear", 200, 5e-4, 0.1};
    AuxMode aux_mode = AuxMode::Both;
    double aux_weight = 0.1;
    uint64_t seed = 0;
    double age_min = 0.0;
    double age_max = 120.0;
    std::filesystem::path checkpoint_path;
    std::filesystem::path history_path;
    std::filesystem::path resume_from;

    void validate() const;
};

nlohmann::json to_json(const TrainConfig& config);
TrainConfig train_config_from_json(const nlohmann::json& j);

// Scalar view of one loss evaluation.
struct LossBreakdown {
    double diffusion_loss = 0.0;
    double aux_age_loss = 0.0;
    double aux_sex_loss = 0.0;
    double aux_site_loss = 0.0;
    double total = 0.0;
};

// Differentiable loss terms.
struct LossTerms {
    torch::Tensor diffusion;
    torch::Tensor age;
    torch::Tensor sex;
    torch::Tensor site;
    torch::Tensor total;

    LossBreakdown values() const;
};

// Noise-prediction network as seen by the objective: (x_t, timesteps [B]) -> eps_hat, latents bound.
using NoisePredictorFn = std::function<torch::Tensor(const torch::Tensor& x_t, const torch::Tensor& timesteps)>;

// Mean squared error between eps_hat and eps over batch and pixels, with a fresh timestep and
// standard-normal draw per sample taken from `rng`. x0 is [B,...] in the model range.
torch::Tensor diffusion_loss(const torch::Tensor& x0, const NoisePredictorFn& predictor, const NoiseSchedule& schedule,
                             torch::Generator& rng);

// Per-record targets for the auxiliary heads.
struct AuxTargets {
    torch::Tensor age;   // normalised age, [B]
    torch::Tensor sex;   // {0,1} float, [B]
    torch::Tensor site;  // vocabulary index, int64 [B]
};

AuxTargets make_aux_targets(std::span<const CovariateRecord> records, const CovariateNorm& norm,
                            const SiteVocabulary& vocabulary);

struct AuxLossTerms {
    torch::Tensor age, sex, site;
};

// supervise_kappa: heads on z_kappa; adversarial_upsilon: a second head set on z_upsilon behind a
// gradient-reversal boundary; both: the sum. None yields zeros.
AuxLossTerms aux_losses(const torch::Tensor& z_kappa, const torch::Tensor& z_upsilon, const AuxTargets& targets,
                        AuxHeads& kappa_heads, AuxHeads& upsilon_heads, AuxMode mode);

// Single head-set evaluation; exposed for the loss contract tests.
AuxLossTerms head_losses(const torch::Tensor& latent, const AuxTargets& targets, AuxHeads& heads);

// Full objective for one batch. x0 images are [B,1,H,W] in [0,1]. Throws DivergenceError naming
// the first non-finite term.
LossTerms ddae_loss(const torch::Tensor& x0_unit, std::span<const CovariateRecord> records, DdaeModel& model,
                    AuxMode mode, double aux_weight, torch::Generator& rng);

struct EpochLoss {
    int64_t epoch = 0;
    LossBreakdown mean;
};

void write_loss_history_csv(const std::filesystem::path& path, std::span<const EpochLoss> history);

struct TrainResult {
    DdaeModel model;
    std::vector<EpochLoss> history;
};

using EpochCallback = std::function<void(const EpochLoss&)>;

// Adam on LossBreakdown.total. Single-threaded runs with the same config and seed are
// reproducible. On divergence the loss history so far is written before rethrowing.
TrainResult train(const TrainConfig& config, const Dataset& dataset, const EpochCallback& on_epoch = {});

}  // namespace ddae
