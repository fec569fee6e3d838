#include "ddae/schedule.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

#include <torch/torch.h>

namespace ddae {

std::string ScheduleFingerprint::describe() const {
    std::ostringstream os;
    os.precision(17);
    os << kind << "(T=" << steps << ", beta_start=" << beta_start << ", beta_end=" << beta_end << ")";
    return os.str();
}

double NoiseSchedule::beta(int64_t t) const {
    if (t < 1 || t > steps()) throw std::out_of_range("beta: timestep " + std::to_string(t) + " outside [1, T]");
    return betas_[static_cast<size_t>(t - 1)];
}

double NoiseSchedule::alpha_bar(int64_t t) const {
    if (t == 0) return 1.0;
    if (t < 0 || t > steps()) {
        throw std::out_of_range("alpha_bar: timestep " + std::to_string(t) + " outside [0, T]");
    }
    return alpha_bars_[static_cast<size_t>(t - 1)];
}

torch::Tensor NoiseSchedule::alpha_bar_for(const torch::Tensor& timesteps, torch::ScalarType dtype) const {
    auto table = torch::tensor(alpha_bars_, torch::kFloat64);
    auto idx = timesteps.to(torch::kInt64);
    if (idx.numel() > 0 && (idx.min().item<int64_t>() < 1 || idx.max().item<int64_t>() > steps())) {
        throw std::out_of_range("alpha_bar_for: timestep outside [1, T]");
    }
    return table.index_select(0, idx - 1).to(dtype).view({-1, 1, 1, 1});
}

NoiseSchedule make_linear_schedule(int64_t steps, double beta_start, double beta_end) {
    if (steps < 1) throw std::invalid_argument("make_linear_schedule: T must be positive");
    if (!(beta_start > 0.0 && beta_end < 1.0 && beta_start <= beta_end)) {
        throw std::invalid_argument("make_linear_schedule: need 0 < beta_start <= beta_end < 1");
    }
    NoiseSchedule s;
    s.betas_.resize(static_cast<size_t>(steps));
    s.alpha_bars_.resize(static_cast<size_t>(steps));
    double running = 1.0;
    for (int64_t i = 0; i < steps; ++i) {
        const double frac = steps == 1 ? 0.0 : static_cast<double>(i) / static_cast<double>(steps - 1);
        const double b = beta_start + (beta_end - beta_start) * frac;
        s.betas_[static_cast<size_t>(i)] = b;
        running *= (1.0 - b);
        s.alpha_bars_[static_cast<size_t>(i)] = running;
    }
    s.fingerprint_ = ScheduleFingerprint{"linear", steps, beta_start, beta_end};
    return s;
}

NoiseSchedule make_schedule(const ScheduleFingerprint& fingerprint) {
    if (fingerprint.kind != "linear") {
        throw std::invalid_argument("unsupported schedule kind '" + fingerprint.kind + "'");
    }
    return make_linear_schedule(fingerprint.steps, fingerprint.beta_start, fingerprint.beta_end);
}

NoisedImage forward_noise(const torch::Tensor& x0, int64_t t, const torch::Tensor& epsilon,
                          const NoiseSchedule& schedule) {
    if (t < 1 || t > schedule.steps()) {
        throw std::out_of_range("forward_noise: timestep " + std::to_string(t) + " outside [1, T]");
    }
    if (!x0.sizes().equals(epsilon.sizes())) throw std::invalid_argument("forward_noise: epsilon shape differs from x0");
    const double ab = schedule.alpha_bar(t);
    auto xt = std::sqrt(ab) * x0 + std::sqrt(1.0 - ab) * epsilon.to(x0.scalar_type());
    return NoisedImage{xt, t, epsilon};
}

torch::Tensor forward_noise_batch(const torch::Tensor& x0, const torch::Tensor& timesteps,
                                  const torch::Tensor& epsilon, const NoiseSchedule& schedule) {
    if (!x0.sizes().equals(epsilon.sizes())) {
        throw std::invalid_argument("forward_noise_batch: epsilon shape differs from x0");
    }
    if (timesteps.dim() != 1 || timesteps.size(0) != x0.size(0)) {
        throw std::invalid_argument("forward_noise_batch: need one timestep per sample");
    }
    auto ab = schedule.alpha_bar_for(timesteps, x0.scalar_type());
    if (x0.dim() != 4) ab = ab.view({-1}).reshape([&] {
        std::vector<int64_t> shape(static_cast<size_t>(x0.dim()), 1);
        shape[0] = x0.size(0);
        return shape;
    }());
    return ab.sqrt() * x0 + (1.0 - ab).sqrt() * epsilon;
}

std::vector<int64_t> sample_timesteps(int64_t batch_size, int64_t steps, torch::Generator& rng) {
    if (batch_size < 1) throw std::invalid_argument("sample_timesteps: batch_size must be >= 1");
    if (steps < 1) throw std::invalid_argument("sample_timesteps: T must be >= 1");
    auto draws = torch::randint(1, steps + 1, {batch_size}, rng, torch::TensorOptions().dtype(torch::kInt64));
    return std::vector<int64_t>(draws.data_ptr<int64_t>(), draws.data_ptr<int64_t>() + batch_size);
}

}  // namespace ddae
