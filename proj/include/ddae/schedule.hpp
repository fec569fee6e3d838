#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <torch/types.h>

namespace ddae {

// Identifies a noise schedule; checkpoints and run configs must agree on it.
struct ScheduleFingerprint {
    std::string kind = "linear";
    int64_t steps = 0;
    double beta_start = 0.0;
    double beta_end = 0.0;

    bool operator==(const ScheduleFingerprint&) const = default;
    std::string describe() const;
};

// Forward-process constants beta_t and alpha_bar_t = prod_{s<=t} (1 - beta_s).
// Timesteps are 1-based, t in [1, T]; alpha_bar(0) is the convention 1.
class NoiseSchedule {
  public:
    NoiseSchedule() = default;

    int64_t steps() const { return static_cast<int64_t>(betas_.size()); }
    double beta(int64_t t) const;
    double alpha_bar(int64_t t) const;
    const ScheduleFingerprint& fingerprint() const { return fingerprint_; }

    // alpha_bar gathered for a batch of timesteps, shaped [B,1,1,1] for broadcasting against images.
    torch::Tensor alpha_bar_for(const torch::Tensor& timesteps, torch::ScalarType dtype) const;

  private:
    friend NoiseSchedule make_linear_schedule(int64_t, double, double);

    std::vector<double> betas_;
    std::vector<double> alpha_bars_;
    ScheduleFingerprint fingerprint_;
};

NoiseSchedule make_linear_schedule(int64_t steps, double beta_start, double beta_end);
NoiseSchedule make_schedule(const ScheduleFingerprint& fingerprint);

struct NoisedImage {
    torch::Tensor x_t;
    int64_t t = 0;
    torch::Tensor epsilon;
};

// x_t = sqrt(alpha_bar_t) x0 + sqrt(1 - alpha_bar_t) eps, in the dtype of x0.
NoisedImage forward_noise(const torch::Tensor& x0, int64_t t, const torch::Tensor& epsilon,
                          const NoiseSchedule& schedule);

// Batched closed form: x0 and epsilon are [B,...], timesteps is an int64 tensor of shape [B].
torch::Tensor forward_noise_batch(const torch::Tensor& x0, const torch::Tensor& timesteps,
                                  const torch::Tensor& epsilon, const NoiseSchedule& schedule);

// Uniform draws from {1..T}.
std::vector<int64_t> sample_timesteps(int64_t batch_size, int64_t steps, torch::Generator& rng);

}  // namespace ddae
