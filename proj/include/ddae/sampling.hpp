#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include <torch/types.h>

#include "ddae/model.hpp"
#include "ddae/schedule.hpp"

namespace ddae {

// Deterministic (eta = 0) sampler configuration. `timesteps` is the strictly increasing
// sub-sequence of [1, T] visited by the sampler; it always ends at T.
struct SamplerConfig {
    int64_t num_steps = 20;
    std::vector<int64_t> timesteps;
    double eta = 0.0;
    // Fixed-point corrections per encode step; 0 is plain DDIM inversion. Each correction
    // re-evaluates the noise at the proposed next state so the step inverts the decoder's
    // update more closely.
    int64_t encode_refinements = 0;

    // num_steps timesteps with uniform stride, ending at T.
    static SamplerConfig uniform(int64_t num_steps, int64_t total_steps);
    void validate(int64_t total_steps) const;
};

// Noise prediction with the latents already bound: (x_t in model range, int64 timesteps [B]) -> eps_hat.
using NoiseFn = std::function<torch::Tensor(const torch::Tensor& x_t, const torch::Tensor& timesteps)>;

NoiseFn bind_latents(const DdaeModel& model, torch::Tensor z_kappa, torch::Tensor z_upsilon);

// Sampler cores in the model range; state is carried in float64 and nothing is clamped.
torch::Tensor ddim_decode_raw(const torch::Tensor& x_T, const NoiseFn& predict, const NoiseSchedule& schedule,
                              const SamplerConfig& config);
torch::Tensor ddim_encode_raw(const torch::Tensor& x0_model, const NoiseFn& predict, const NoiseSchedule& schedule,
                              const SamplerConfig& config);

// x_T -> image batch in [0,1]. Throws DivergenceError naming the step on a non-finite state.
torch::Tensor ddim_decode(const torch::Tensor& x_T, const torch::Tensor& z_kappa, const torch::Tensor& z_upsilon,
                          const DdaeModel& model, const SamplerConfig& config);

// Image batch in [0,1] -> stochastic code x_T (model range, float64).
torch::Tensor ddim_encode(const torch::Tensor& x0_unit, const torch::Tensor& z_kappa, const torch::Tensor& z_upsilon,
                          const DdaeModel& model, const SamplerConfig& config);

}  // namespace ddae
