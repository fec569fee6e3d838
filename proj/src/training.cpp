#include "ddae/training.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <stdexcept>

#include <torch/torch.h>

#include "ddae/errors.hpp"
#include "ddae/image.hpp"
#include "ddae/json_io.hpp"

namespace ddae {

std::string to_string(AuxMode mode) {
    switch (mode) {
        case AuxMode::None: return "none";
        case AuxMode::SuperviseKappa: return "supervise_kappa";
        case AuxMode::AdversarialUpsilon: return "adversarial_upsilon";
        case AuxMode::Both: return "both";
    }
    return "none";
}

AuxMode aux_mode_from_string(const std::string& name) {
    if (name == "none") return AuxMode::None;
    if (name == "supervise_kappa") return AuxMode::SuperviseKappa;
    if (name == "adversarial_upsilon") return AuxMode::AdversarialUpsilon;
    if (name == "both") return AuxMode::Both;
    throw std::invalid_argument("unknown aux_mode '" + name +
                                "' (expected none, supervise_kappa, adversarial_upsilon or both)");
}

void TrainConfig::validate() const {
    if (epochs < 1) throw std::invalid_argument("train: epochs must be >= 1");
    if (batch_size < 1) throw std::invalid_argument("train: batch_size must be >= 1");
    if (!(learning_rate > 0.0)) throw std::invalid_argument("train: learning_rate must be positive");
    if (!(aux_weight >= 0.0)) throw std::invalid_argument("train: aux_weight must be >= 0");
    if (!(age_min < age_max)) throw std::invalid_argument("train: age_min must be below age_max");
    model.validate();
}

nlohmann::json to_json(const TrainConfig& c) {
    return Json{{"epochs", c.epochs},
                {"batch_size", c.batch_size},
                {"learning_rate", c.learning_rate},
                {"model", c.model},
                {"schedule", c.schedule},
                {"aux_mode", to_string(c.aux_mode)},
                {"aux_weight", c.aux_weight},
                {"seed", c.seed},
                {"age_min", c.age_min},
                {"age_max", c.age_max},
                {"checkpoint_path", c.checkpoint_path.string()},
                {"history_path", c.history_path.string()},
                {"resume_from", c.resume_from.string()}};
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
    reject_unknown_keys(j,
                        {"epochs", "batch_size", "learning_rate", "model", "schedule", "aux_mode", "aux_weight",
                         "seed", "age_min", "age_max", "checkpoint_path", "history_path", "resume_from"},
                        "train");
    TrainConfig c;
    c.epochs = j.value("epochs", c.epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    if (j.contains("model")) c.model = model_config_from_json(j.at("model"), "train.model");
    if (j.contains("schedule")) c.schedule = schedule_from_json(j.at("schedule"), "train.schedule");
    c.aux_mode = aux_mode_from_string(j.value("aux_mode", to_string(c.aux_mode)));
    c.aux_weight = j.value("aux_weight", c.aux_weight);
    c.seed = j.value("seed", c.seed);
    c.age_min = j.value("age_min", c.age_min);
    c.age_max = j.value("age_max", c.age_max);
    c.checkpoint_path = j.value("checkpoint_path", std::string());
    c.history_path = j.value("history_path", std::string());
    c.resume_from = j.value("resume_from", std::string());
    return c;
}

LossBreakdown LossTerms::values() const {
    auto v = [](const torch::Tensor& t) { return t.defined() ? t.item<double>() : 0.0; };
    return LossBreakdown{v(diffusion), v(age), v(sex), v(site), v(total)};
}

torch::Tensor diffusion_loss(const torch::Tensor& x0, const NoisePredictorFn& predictor, const NoiseSchedule& schedule,
                             torch::Generator& rng) {
    if (x0.size(0) < 1) throw std::invalid_argument("diffusion_loss: empty batch");
    auto t = torch::randint(1, schedule.steps() + 1, {x0.size(0)}, rng, torch::TensorOptions().dtype(torch::kInt64));
    auto eps = torch::randn(x0.sizes(), rng, x0.options());
    auto x_t = forward_noise_batch(x0, t, eps, schedule);
    auto eps_hat = predictor(x_t, t);
    return (eps_hat - eps).pow(2).mean();
}

AuxTargets make_aux_targets(std::span<const CovariateRecord> records, const CovariateNorm& norm,
                            const SiteVocabulary& vocabulary) {
    const auto n = static_cast<int64_t>(records.size());
    AuxTargets t{torch::empty({n}), torch::empty({n}), torch::empty({n}, torch::kInt64)};
    for (int64_t i = 0; i < n; ++i) {
        const auto& r = records[static_cast<size_t>(i)];
        t.age[i] = (r.age - norm.age_mean) / norm.age_std;
        t.sex[i] = static_cast<float>(r.sex);
        t.site[i] = vocabulary.index_of(r.site);
    }
    return t;
}

AuxLossTerms head_losses(const torch::Tensor& latent, const AuxTargets& targets, AuxHeads& heads) {
    namespace F = torch::nn::functional;
    AuxLossTerms out;
    out.age = F::mse_loss(heads->age->forward(latent).squeeze(1), targets.age.to(latent.scalar_type()));
    out.sex = F::binary_cross_entropy_with_logits(heads->sex->forward(latent).squeeze(1),
                                                  targets.sex.to(latent.scalar_type()));
    out.site = F::cross_entropy(heads->site->forward(latent), targets.site);
    return out;
}

AuxLossTerms aux_losses(const torch::Tensor& z_kappa, const torch::Tensor& z_upsilon, const AuxTargets& targets,
                        AuxHeads& kappa_heads, AuxHeads& upsilon_heads, AuxMode mode) {
    auto zero = torch::zeros({}, z_kappa.options());
    AuxLossTerms total{zero, zero, zero};
    if (mode == AuxMode::SuperviseKappa || mode == AuxMode::Both) {
        auto k = head_losses(z_kappa, targets, kappa_heads);
        total = {total.age + k.age, total.sex + k.sex, total.site + k.site};
    }
    if (mode == AuxMode::AdversarialUpsilon || mode == AuxMode::Both) {
        auto u = head_losses(reverse_gradient(z_upsilon), targets, upsilon_heads);
        total = {total.age + u.age, total.sex + u.sex, total.site + u.site};
    }
    return total;
}

namespace {
void check_finite(const torch::Tensor& t, const char* name) {
    const double v = t.item<double>();
    if (!std::isfinite(v)) throw DivergenceError(name, v);
}
}  // namespace

LossTerms ddae_loss(const torch::Tensor& x0_unit, std::span<const CovariateRecord> records, DdaeModel& model,
                    AuxMode mode, double aux_weight, torch::Generator& rng) {
    if (records.empty() || x0_unit.size(0) != static_cast<int64_t>(records.size())) {
        throw std::invalid_argument("ddae_loss: batch must be non-empty with one record per image");
    }
    auto& nets = model.networks();
    auto x0 = to_model_range(x0_unit);
    auto z_kappa = nets->known_encoder->forward(model.conditions(records));
    auto z_upsilon = nets->unknown_encoder->forward(x0);

    LossTerms terms;
    terms.diffusion = diffusion_loss(
        x0,
        [&](const torch::Tensor& x_t, const torch::Tensor& t) {
            return nets->noise_predictor->forward(x_t, t, z_kappa, z_upsilon);
        },
        model.schedule(), rng);
    auto targets = make_aux_targets(records, model.meta().norm, model.vocabulary());
    auto aux = aux_losses(z_kappa, z_upsilon, targets, nets->kappa_heads, nets->upsilon_heads, mode);
    terms.age = aux.age;
    terms.sex = aux.sex;
    terms.site = aux.site;
    terms.total = terms.diffusion + aux_weight * (terms.age + terms.sex + terms.site);

    check_finite(terms.diffusion, "diffusion_loss");
    check_finite(terms.age, "aux_age_loss");
    check_finite(terms.sex, "aux_sex_loss");
    check_finite(terms.site, "aux_site_loss");
    check_finite(terms.total, "total");
    return terms;
}

void write_loss_history_csv(const std::filesystem::path& path, std::span<const EpochLoss> history) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write loss history " + path.string());
    out << "epoch,diffusion_loss,aux_age_loss,aux_sex_loss,aux_site_loss,total\n";
    out << std::setprecision(10);
    for (const auto& e : history) {
        out << e.epoch << ',' << e.mean.diffusion_loss << ',' << e.mean.aux_age_loss << ',' << e.mean.aux_sex_loss
            << ',' << e.mean.aux_site_loss << ',' << e.mean.total << '\n';
    }
}

namespace {

// Contiguous batches of a permutation; a trailing singleton is folded into the previous batch
// because the heads' batch normalisation needs at least two samples.
std::vector<std::vector<int64_t>> make_batches(const torch::Tensor& perm, int64_t batch_size) {
    std::vector<std::vector<int64_t>> batches;
    const auto* p = perm.data_ptr<int64_t>();
    const int64_t n = perm.numel();
    for (int64_t i = 0; i < n; i += batch_size) {
        batches.emplace_back(p + i, p + std::min(n, i + batch_size));
    }
    if (batches.size() > 1 && batches.back().size() == 1) {
        batches[batches.size() - 2].push_back(batches.back().front());
        batches.pop_back();
    }
    return batches;
}

DdaeModel initial_model(const TrainConfig& config, const Dataset& dataset) {
    auto records = dataset.records();
    auto vocab = SiteVocabulary::from_records(records);
    if (!config.resume_from.empty()) {
        auto model = load_checkpoint(config.resume_from, config.schedule);
        for (const auto& r : records) model.vocabulary().index_of(r.site);
        return model;
    }
    CheckpointMeta meta;
    meta.model = config.model;
    meta.schedule = config.schedule;
    meta.norm = CovariateNorm::fit(records, config.age_min, config.age_max);
    meta.vocabulary = vocab;
    meta.train_config = to_json(config);
    meta.seed = config.seed;
    return DdaeModel(std::move(meta));
}

}  // namespace

TrainResult train(const TrainConfig& config, const Dataset& dataset, const EpochCallback& on_epoch) {
    config.validate();
    if (dataset.empty()) throw std::invalid_argument("train: dataset is empty");
    // Constructs the schedule early so an invalid one fails before any work.
    make_schedule(config.schedule);

    TrainResult result{initial_model(config, dataset), {}};
    auto& model = result.model;
    const auto& cfg = model.config();
    for (const auto& s : dataset.samples) {
        if (s.image.rows != cfg.resolution || s.image.cols != cfg.resolution) {
            throw std::invalid_argument("train: sample '" + s.id + "' is not " + std::to_string(cfg.resolution) +
                                        "x" + std::to_string(cfg.resolution));
        }
    }
    const auto records = dataset.records();
    for (const auto& r : records) validate_record(r, model.meta().norm);

    torch::manual_seed(config.seed + 1);
    auto rng = at::make_generator<at::CPUGeneratorImpl>(config.seed);
    auto images = dataset.images();
    auto all_x0 = images_to_tensor(images);

    auto& nets = model.networks();
    torch::optim::Adam optimizer(nets->parameters(), torch::optim::AdamOptions(config.learning_rate));

    for (int64_t epoch = 1; epoch <= config.epochs; ++epoch) {
        nets->train();
        auto perm = torch::randperm(static_cast<int64_t>(dataset.size()), rng, torch::kInt64);
        LossBreakdown sum;
        int64_t count = 0;
        try {
            for (const auto& batch : make_batches(perm, config.batch_size)) {
                auto idx = torch::tensor(batch, torch::kInt64);
                std::vector<CovariateRecord> batch_records;
                batch_records.reserve(batch.size());
                for (auto i : batch) batch_records.push_back(records[static_cast<size_t>(i)]);
                const AuxMode mode = batch.size() > 1 ? config.aux_mode : AuxMode::None;
                auto terms = ddae_loss(all_x0.index_select(0, idx), batch_records, model, mode, config.aux_weight, rng);
                optimizer.zero_grad();
                terms.total.backward();
                optimizer.step();
                auto v = terms.values();
                sum.diffusion_loss += v.diffusion_loss;
                sum.aux_age_loss += v.aux_age_loss;
                sum.aux_sex_loss += v.aux_sex_loss;
                sum.aux_site_loss += v.aux_site_loss;
                sum.total += v.total;
                ++count;
            }
        } catch (const DivergenceError&) {
            if (!config.history_path.empty()) write_loss_history_csv(config.history_path, result.history);
            throw;
        }
        const double n = static_cast<double>(count);
        EpochLoss e{epoch, {sum.diffusion_loss / n, sum.aux_age_loss / n, sum.aux_sex_loss / n,
                            sum.aux_site_loss / n, sum.total / n}};
        result.history.push_back(e);
        if (on_epoch) on_epoch(e);
    }
    nets->eval();
    model.mutable_meta().train_config = to_json(config);
    if (!config.history_path.empty()) write_loss_history_csv(config.history_path, result.history);
    if (!config.checkpoint_path.empty()) save_checkpoint(model, config.checkpoint_path);
    return result;
}

}  // namespace ddae
