#pragma once

#include <cstdint>
#include <vector>

#include <torch/nn.h>

#include "ddae/covariates.hpp"

namespace ddae {

// Architecture hyper-parameters. Defaults are the desk-scale model: 32x32 input,
// three resolutions, base width 32, latent dimension 64.
struct ModelConfig {
    int64_t resolution = 32;
    int64_t base_channels = 32;
    std::vector<int64_t> channel_mults = {1, 2, 2};
    int64_t latent_dim = 64;
    int64_t known_hidden = 128;
    int64_t time_embed_dim = 128;
    int64_t groups = 8;
    SiteEncoding site_encoding = SiteEncoding::Scalar;

    bool operator==(const ModelConfig&) const = default;
    void validate() const;
};

// Sinusoidal features of integer timesteps, [B] int64 -> [B, dim].
torch::Tensor timestep_embedding(const torch::Tensor& timesteps, int64_t dim);

// Residual block; when cond_dim > 0 the second normalisation is followed by a learned
// per-channel scale and shift computed from the conditioning vector.
struct ResBlockImpl : torch::nn::Module {
    ResBlockImpl(int64_t in_channels, int64_t out_channels, int64_t cond_dim, int64_t groups);
    torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& cond = {});

    torch::nn::GroupNorm norm1{nullptr}, norm2{nullptr};
    torch::nn::Conv2d conv1{nullptr}, conv2{nullptr}, skip{nullptr};
    torch::nn::Linear modulation{nullptr};
};
TORCH_MODULE(ResBlock);

struct DownPathOutput {
    std::vector<torch::Tensor> skips;  // one per resolution, highest first
    torch::Tensor middle;
};

// Input convolution, one residual block per resolution with 2x average pooling between
// them, and a middle block at the lowest resolution.
struct DownPathImpl : torch::nn::Module {
    DownPathImpl(const ModelConfig& config, int64_t cond_dim);
    DownPathOutput forward(const torch::Tensor& x, const torch::Tensor& cond = {});

    torch::nn::Conv2d input{nullptr};
    torch::nn::ModuleList levels{nullptr};
    ResBlock middle{nullptr};
};
TORCH_MODULE(DownPath);

// epsilon_theta: U-Net with skip connections. Every residual block is modulated by
// [z_kappa | z_upsilon | time embedding].
struct NoisePredictorImpl : torch::nn::Module {
    explicit NoisePredictorImpl(const ModelConfig& config);
    torch::Tensor forward(const torch::Tensor& x_t, const torch::Tensor& timesteps, const torch::Tensor& z_kappa,
                          const torch::Tensor& z_upsilon);

    ModelConfig config;
    torch::nn::Sequential time_mlp{nullptr};
    DownPath down{nullptr};
    torch::nn::ModuleList up{nullptr};
    torch::nn::GroupNorm out_norm{nullptr};
    torch::nn::Conv2d out_conv{nullptr};
};
TORCH_MODULE(NoisePredictor);

// s_phi: downward path and middle block, globally pooled and projected to the latent dimension.
struct UnknownEncoderImpl : torch::nn::Module {
    explicit UnknownEncoderImpl(const ModelConfig& config);
    torch::Tensor forward(const torch::Tensor& x0);

    ModelConfig config;
    DownPath down{nullptr};
    torch::nn::GroupNorm norm{nullptr};
    torch::nn::Linear project{nullptr};
};
TORCH_MODULE(UnknownEncoder);

// f_psi: condition vector -> hidden -> latent.
struct KnownEncoderImpl : torch::nn::Module {
    KnownEncoderImpl(int64_t condition_width, const ModelConfig& config);
    torch::Tensor forward(const torch::Tensor& condition);

    int64_t input_width;
    torch::nn::Linear fc1{nullptr}, fc2{nullptr};
};
TORCH_MODULE(KnownEncoder);

// latent -> 128 -> 32 -> outputs, with ReLU, batch norm and 0.5 dropout between layers.
torch::nn::Sequential make_predictor_head(int64_t latent_dim, int64_t outputs);

struct AuxHeadsImpl : torch::nn::Module {
    AuxHeadsImpl(int64_t latent_dim, int64_t site_count);

    torch::nn::Sequential age{nullptr}, sex{nullptr}, site{nullptr};
};
TORCH_MODULE(AuxHeads);

// Identity on the forward pass, negated gradient on the backward pass.
torch::Tensor reverse_gradient(const torch::Tensor& x);

// All learned parameters of the model.
struct DdaeNetworksImpl : torch::nn::Module {
    DdaeNetworksImpl(const ModelConfig& config, size_t site_count);

    NoisePredictor noise_predictor{nullptr};
    UnknownEncoder unknown_encoder{nullptr};
    KnownEncoder known_encoder{nullptr};
    AuxHeads kappa_heads{nullptr};
    AuxHeads upsilon_heads{nullptr};
};
TORCH_MODULE(DdaeNetworks);

int64_t parameter_count(const torch::nn::Module& module);

}  // namespace ddae
