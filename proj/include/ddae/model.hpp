#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>

#include "json.hpp"

#include "ddae/covariates.hpp"
#include "ddae/networks.hpp"
#include "ddae/schedule.hpp"

namespace ddae {

// Everything besides the parameters that a checkpoint must carry.
struct CheckpointMeta {
    ModelConfig model;
    ScheduleFingerprint schedule;
    CovariateNorm norm;
    SiteVocabulary vocabulary;
    nlohmann::json train_config = nlohmann::json::object();
    uint64_t seed = 0;
};

// The trained model: the three networks (noise predictor, unknown-variance encoder,
// known-variance encoder), auxiliary predictor heads, and the metadata needed to use them.
//
// The inference helpers below run without gradient tracking and with the heads in
// evaluation mode; they do not modify parameters and may be called concurrently.
class DdaeModel {
  public:
    // Parameters are initialised from `meta.seed`.
    explicit DdaeModel(CheckpointMeta meta);

    const CheckpointMeta& meta() const { return meta_; }
    CheckpointMeta& mutable_meta() { return meta_; }
    const NoiseSchedule& schedule() const { return schedule_; }
    const ModelConfig& config() const { return meta_.model; }
    const SiteVocabulary& vocabulary() const { return meta_.vocabulary; }
    DdaeNetworks& networks() { return networks_; }

    ConditionVector condition(const CovariateRecord& record) const;
    torch::Tensor conditions(std::span<const CovariateRecord> records) const;

    // f_psi: [B, w] condition batch -> [B, d].
    torch::Tensor encode_known(const torch::Tensor& conditions) const;
    torch::Tensor encode_known(std::span<const CovariateRecord> records) const;
    // s_phi: [B,1,H,W] images in the model range [-1,1] -> [B, d].
    torch::Tensor encode_unknown(const torch::Tensor& x0_model) const;
    // epsilon_theta for a batch; `timesteps` is int64 [B] in [1, T].
    torch::Tensor predict_noise(const torch::Tensor& x_t, const torch::Tensor& timesteps, const torch::Tensor& z_kappa,
                                const torch::Tensor& z_upsilon) const;

    int64_t parameter_count() const;

  private:
    CheckpointMeta meta_;
    NoiseSchedule schedule_;
    mutable DdaeNetworks networks_{nullptr};
};

// Writes parameters plus metadata to `path` via a temporary file and rename.
void save_checkpoint(const DdaeModel& model, const std::filesystem::path& path);

// Loads a checkpoint; when `expected` is given, a differing schedule raises FingerprintMismatch.
DdaeModel load_checkpoint(const std::filesystem::path& path,
                          const std::optional<ScheduleFingerprint>& expected = std::nullopt);

}  // namespace ddae
