#pragma once

// JSON conversions for the configuration and metadata types.

#include "json.hpp"

#include "ddae/covariates.hpp"
#include "ddae/networks.hpp"
#include "ddae/schedule.hpp"

namespace ddae {

using Json = nlohmann::json;

void to_json(Json& j, const ScheduleFingerprint& f);
void from_json(const Json& j, ScheduleFingerprint& f);
void to_json(Json& j, const ModelConfig& c);
void from_json(const Json& j, ModelConfig& c);
void to_json(Json& j, const CovariateNorm& n);
void from_json(const Json& j, CovariateNorm& n);

// Variants that report unknown keys under a caller-supplied key path.
ScheduleFingerprint schedule_from_json(const Json& j, const std::string& path);
ModelConfig model_config_from_json(const Json& j, const std::string& path);

// Throws std::invalid_argument naming the first key of `object` not in `allowed`, prefixed by `path`.
void reject_unknown_keys(const Json& object, std::initializer_list<const char*> allowed, const std::string& path);

}  // namespace ddae
