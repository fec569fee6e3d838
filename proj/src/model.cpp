#include "ddae/model.hpp"

#include <fstream>
#include <stdexcept>
#include <system_error>

#include <torch/torch.h>

#include "ddae/errors.hpp"
#include "ddae/json_io.hpp"

namespace ddae {

namespace {
constexpr const char* kMetaKey = "ddae_meta";
constexpr int kFormatVersion = 1;

Json meta_to_json(const CheckpointMeta& m) {
    return Json{{"format_version", kFormatVersion},
                {"model", m.model},
                {"schedule", m.schedule},
                {"norm", m.norm},
                {"vocabulary", m.vocabulary.sites()},
                {"train_config", m.train_config},
                {"seed", m.seed}};
}

CheckpointMeta meta_from_json(const Json& j) {
    if (j.value("format_version", 0) != kFormatVersion) throw std::runtime_error("checkpoint: unsupported format version");
    CheckpointMeta m;
    m.model = j.at("model").get<ModelConfig>();
    m.schedule = j.at("schedule").get<ScheduleFingerprint>();
    m.norm = j.at("norm").get<CovariateNorm>();
    m.vocabulary = SiteVocabulary(j.at("vocabulary").get<std::vector<std::string>>());
    m.train_config = j.value("train_config", Json::object());
    m.seed = j.value("seed", uint64_t{0});
    return m;
}

// Puts the heads (batch norm, dropout) in evaluation mode for the lifetime of the guard.
class InferenceScope {
  public:
    explicit InferenceScope(DdaeNetworks& nets) : nets_(nets), was_training_(nets->is_training()) {
        if (was_training_) nets_->eval();
    }
    ~InferenceScope() {
        if (was_training_) nets_->train();
    }
    InferenceScope(const InferenceScope&) = delete;
    InferenceScope& operator=(const InferenceScope&) = delete;

  private:
    DdaeNetworks& nets_;
    bool was_training_;
    torch::NoGradGuard no_grad_;
};
}  // namespace

DdaeModel::DdaeModel(CheckpointMeta meta) : meta_(std::move(meta)) {
    if (meta_.vocabulary.empty()) throw std::invalid_argument("model: site vocabulary must be non-empty");
    schedule_ = make_schedule(meta_.schedule);
    torch::manual_seed(meta_.seed);
    networks_ = DdaeNetworks(meta_.model, meta_.vocabulary.size());
}

ConditionVector DdaeModel::condition(const CovariateRecord& record) const {
    return encode_covariates(record, meta_.norm, meta_.vocabulary, meta_.model.site_encoding);
}

torch::Tensor DdaeModel::conditions(std::span<const CovariateRecord> records) const {
    return encode_covariate_batch(records, meta_.norm, meta_.vocabulary, meta_.model.site_encoding);
}

torch::Tensor DdaeModel::encode_known(const torch::Tensor& conditions) const {
    InferenceScope scope(networks_);
    return networks_->known_encoder->forward(conditions);
}

torch::Tensor DdaeModel::encode_known(std::span<const CovariateRecord> records) const {
    return encode_known(conditions(records));
}

torch::Tensor DdaeModel::encode_unknown(const torch::Tensor& x0_model) const {
    InferenceScope scope(networks_);
    return networks_->unknown_encoder->forward(x0_model.to(torch::kFloat32));
}

torch::Tensor DdaeModel::predict_noise(const torch::Tensor& x_t, const torch::Tensor& timesteps,
                                       const torch::Tensor& z_kappa, const torch::Tensor& z_upsilon) const {
    InferenceScope scope(networks_);
    return networks_->noise_predictor->forward(x_t.to(torch::kFloat32), timesteps, z_kappa, z_upsilon);
}

int64_t DdaeModel::parameter_count() const {
    // Auxiliary heads are training-time scaffolding; they still count toward the stored parameters.
    return ddae::parameter_count(*networks_);
}

void save_checkpoint(const DdaeModel& model, const std::filesystem::path& path) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    torch::serialize::OutputArchive archive;
    auto nets = const_cast<DdaeModel&>(model).networks();
    nets->save(archive);
    archive.write(kMetaKey, c10::IValue(meta_to_json(model.meta()).dump()));
    auto tmp = path;
    tmp += ".tmp";
    archive.save_to(tmp.string());
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw std::runtime_error("checkpoint: cannot rename " + tmp.string() + " -> " + path.string());
}

DdaeModel load_checkpoint(const std::filesystem::path& path, const std::optional<ScheduleFingerprint>& expected) {
    if (!std::filesystem::exists(path)) throw std::runtime_error("checkpoint not found: " + path.string());
    torch::serialize::InputArchive archive;
    archive.load_from(path.string());
    c10::IValue meta_value;
    if (!archive.try_read(kMetaKey, meta_value)) throw std::runtime_error("checkpoint: missing metadata");
    auto meta = meta_from_json(Json::parse(meta_value.toStringRef()));
    if (expected && !(*expected == meta.schedule)) {
        throw FingerprintMismatch("schedule fingerprint mismatch: checkpoint has " + meta.schedule.describe() +
                                  ", config has " + expected->describe());
    }
    DdaeModel model(std::move(meta));
    model.networks()->load(archive);
    model.networks()->eval();
    return model;
}

}  // namespace ddae
