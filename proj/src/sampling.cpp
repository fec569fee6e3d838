#include "ddae/sampling.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include <torch/torch.h>

#include "ddae/errors.hpp"
#include "ddae/image.hpp"

namespace ddae {

SamplerConfig SamplerConfig::uniform(int64_t num_steps, int64_t total_steps) {
    if (num_steps < 1 || num_steps > total_steps) {
        throw std::invalid_argument("sampler: num_steps must lie in [1, T]");
    }
    SamplerConfig c;
    c.num_steps = num_steps;
    for (int64_t i = 1; i <= num_steps; ++i) {
        // Integer ceil(i * T / S) keeps the sequence strictly increasing and ending at T.
        c.timesteps.push_back((i * total_steps + num_steps - 1) / num_steps);
    }
    return c;
}

void SamplerConfig::validate(int64_t total_steps) const {
    if (eta != 0.0) throw std::invalid_argument("sampler: only eta = 0 is supported");
    if (encode_refinements < 0) throw std::invalid_argument("sampler: encode_refinements must be >= 0");
    if (timesteps.empty() || static_cast<int64_t>(timesteps.size()) != num_steps) {
        throw std::invalid_argument("sampler: step schedule length differs from num_steps");
    }
    if (timesteps.front() < 1 || timesteps.back() != total_steps) {
        throw std::invalid_argument("sampler: step schedule must start at >= 1 and end at T");
    }
    for (size_t i = 1; i < timesteps.size(); ++i) {
        if (timesteps[i] <= timesteps[i - 1]) throw std::invalid_argument("sampler: step schedule not increasing");
    }
}

NoiseFn bind_latents(const DdaeModel& model, torch::Tensor z_kappa, torch::Tensor z_upsilon) {
    return [&model, zk = std::move(z_kappa), zu = std::move(z_upsilon)](const torch::Tensor& x_t,
                                                                        const torch::Tensor& t) {
        return model.predict_noise(x_t, t, zk, zu);
    };
}

namespace {

// `label` is the timestep fed to the network; `t` names the step in error messages.
torch::Tensor checked_eps(const NoiseFn& predict, const torch::Tensor& x, int64_t label, int64_t t, const char* stage) {
    auto timesteps = torch::full({x.size(0)}, label, torch::kInt64);
    auto eps = predict(x, timesteps).to(torch::kFloat64);
    if (!eps.sizes().equals(x.sizes())) throw std::invalid_argument("sampler: predictor output shape mismatch");
    if (!torch::isfinite(eps).all().item<bool>()) {
        throw DivergenceError(std::string(stage) + " step t=" + std::to_string(t), std::nan(""));
    }
    return eps;
}

// One deterministic move from alpha_bar_from to alpha_bar_to through the implied x0.
torch::Tensor ddim_move(const torch::Tensor& x, const torch::Tensor& eps, double ab_from, double ab_to) {
    auto x0_hat = (x - std::sqrt(1.0 - ab_from) * eps) / std::sqrt(ab_from);
    return std::sqrt(ab_to) * x0_hat + std::sqrt(1.0 - ab_to) * eps;
}

void check_state(const torch::Tensor& x, const char* stage, int64_t t) {
    if (!torch::isfinite(x).all().item<bool>()) {
        throw DivergenceError(std::string(stage) + " state at step t=" + std::to_string(t), std::nan(""));
    }
}

}  // namespace

torch::Tensor ddim_decode_raw(const torch::Tensor& x_T, const NoiseFn& predict, const NoiseSchedule& schedule,
                              const SamplerConfig& config) {
    config.validate(schedule.steps());
    torch::NoGradGuard no_grad;
    auto x = x_T.to(torch::kFloat64);
    const auto& ts = config.timesteps;
    for (size_t i = ts.size(); i-- > 0;) {
        const int64_t t = ts[i];
        const int64_t t_prev = i == 0 ? 0 : ts[i - 1];
        auto eps = checked_eps(predict, x, t, t, "ddim_decode");
        x = ddim_move(x, eps, schedule.alpha_bar(t), schedule.alpha_bar(t_prev));
        check_state(x, "ddim_decode", t);
    }
    return x;
}

torch::Tensor ddim_encode_raw(const torch::Tensor& x0_model, const NoiseFn& predict, const NoiseSchedule& schedule,
                              const SamplerConfig& config) {
    config.validate(schedule.steps());
    torch::NoGradGuard no_grad;
    auto x = x0_model.to(torch::kFloat64);
    const auto& ts = config.timesteps;
    for (size_t i = 0; i < ts.size(); ++i) {
        const int64_t t = ts[i];
        const int64_t t_prev = i == 0 ? 0 : ts[i - 1];
        const double ab_from = schedule.alpha_bar(t_prev);
        const double ab_to = schedule.alpha_bar(t);
        // Plain inversion reads the noise at the current state; the network never sees t = 0.
        auto eps = checked_eps(predict, x, std::max<int64_t>(t_prev, 1), t, "ddim_encode");
        auto next = ddim_move(x, eps, ab_from, ab_to);
        // A fixed point next = move(x, eps(next, t)) is exactly undone by the decoder's step from t.
        for (int64_t k = 0; k < config.encode_refinements; ++k) {
            eps = checked_eps(predict, next, t, t, "ddim_encode");
            next = ddim_move(x, eps, ab_from, ab_to);
        }
        x = std::move(next);
        check_state(x, "ddim_encode", t);
    }
    return x;
}

torch::Tensor ddim_decode(const torch::Tensor& x_T, const torch::Tensor& z_kappa, const torch::Tensor& z_upsilon,
                          const DdaeModel& model, const SamplerConfig& config) {
    auto x0 = ddim_decode_raw(x_T, bind_latents(model, z_kappa, z_upsilon), model.schedule(), config);
    return to_unit_range(x0).to(torch::kFloat32);
}

torch::Tensor ddim_encode(const torch::Tensor& x0_unit, const torch::Tensor& z_kappa, const torch::Tensor& z_upsilon,
                          const DdaeModel& model, const SamplerConfig& config) {
    return ddim_encode_raw(to_model_range(x0_unit.to(torch::kFloat64)), bind_latents(model, z_kappa, z_upsilon),
                           model.schedule(), config);
}

}  // namespace ddae
