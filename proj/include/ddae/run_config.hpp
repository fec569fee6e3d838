#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "ddae/evalsuite.hpp"
#include "ddae/sampling.hpp"
#include "ddae/synth.hpp"
#include "ddae/training.hpp"

namespace ddae {

// Everything a CLI run needs. The top-level seed is propagated to the cohort and the trainer.
struct RunConfig {
    uint64_t seed = 0;
    std::string device = "cpu";
    CohortSpec cohort = CohortSpec::default_spec(3, 200, 0);
    TrainConfig train;
    int64_t sampler_steps = 20;
    int64_t encode_refinements = SamplerConfig{}.encode_refinements;
    ProbeConfig probe;
    std::vector<uint64_t> eval_seeds{0, 1, 2, 3, 4};
    double test_fraction = 0.2;
    bool shrinkage = false;
    std::optional<std::string> reference_site;  // eval; defaults to the modal site
    std::optional<std::string> target_site;     // harmonize; defaults to the modal site
    int64_t ingest_resolution = 32;
    // True when the config file states train.schedule; checkpoints are then checked against it.
    bool schedule_declared = false;

    // Relative paths are resolved against the config file's directory.
    struct Paths {
        std::filesystem::path data, checkpoint, harmonized, original, images, covariates, out;
    } paths;

    void apply_seed(uint64_t s);
};

RunConfig run_config_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
nlohmann::json to_json(const RunConfig& config);
RunConfig load_run_config(const std::filesystem::path& path);

// Hex FNV-1a digest of the canonical JSON form.
std::string config_hash(const RunConfig& config);

}  // namespace ddae
