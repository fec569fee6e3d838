#include "ddae/networks.hpp"

#include <cmath>
#include <stdexcept>

#include <torch/torch.h>

namespace ddae {

namespace nn = torch::nn;

void ModelConfig::validate() const {
    if (channel_mults.empty()) throw std::invalid_argument("model: channel_mults must be non-empty");
    if (base_channels < 1 || latent_dim < 1 || known_hidden < 1 || time_embed_dim < 2 || groups < 1) {
        throw std::invalid_argument("model: widths must be positive");
    }
    if (time_embed_dim % 2 != 0) throw std::invalid_argument("model: time_embed_dim must be even");
    const int64_t factor = int64_t{1} << (channel_mults.size() - 1);
    if (resolution < factor || resolution % factor != 0) {
        throw std::invalid_argument("model: resolution " + std::to_string(resolution) + " not divisible by " +
                                    std::to_string(factor));
    }
    for (auto m : channel_mults) {
        if (m < 1 || (base_channels * m) % groups != 0) {
            throw std::invalid_argument("model: channel widths must be multiples of the group count");
        }
    }
}

torch::Tensor timestep_embedding(const torch::Tensor& timesteps, int64_t dim) {
    const int64_t half = dim / 2;
    auto freqs = torch::exp(-std::log(10000.0) * torch::arange(half, torch::kFloat32) / static_cast<double>(half));
    auto args = timesteps.to(torch::kFloat32).unsqueeze(1) * freqs.unsqueeze(0);
    return torch::cat({torch::sin(args), torch::cos(args)}, 1);
}

ResBlockImpl::ResBlockImpl(int64_t in_channels, int64_t out_channels, int64_t cond_dim, int64_t groups) {
    norm1 = register_module("norm1", nn::GroupNorm(nn::GroupNormOptions(std::min(groups, in_channels), in_channels)));
    conv1 = register_module("conv1", nn::Conv2d(nn::Conv2dOptions(in_channels, out_channels, 3).padding(1)));
    norm2 = register_module("norm2", nn::GroupNorm(nn::GroupNormOptions(std::min(groups, out_channels), out_channels)));
    conv2 = register_module("conv2", nn::Conv2d(nn::Conv2dOptions(out_channels, out_channels, 3).padding(1)));
    if (cond_dim > 0) modulation = register_module("modulation", nn::Linear(cond_dim, 2 * out_channels));
    if (in_channels != out_channels) {
        skip = register_module("skip", nn::Conv2d(nn::Conv2dOptions(in_channels, out_channels, 1)));
    }
}

torch::Tensor ResBlockImpl::forward(const torch::Tensor& x, const torch::Tensor& cond) {
    auto h = conv1(torch::silu(norm1(x)));
    h = norm2(h);
    if (modulation) {
        auto ss = modulation(cond).unsqueeze(-1).unsqueeze(-1).chunk(2, 1);
        h = h * (1 + ss[0]) + ss[1];
    }
    h = conv2(torch::silu(h));
    return h + (skip ? skip(x) : x);
}

DownPathImpl::DownPathImpl(const ModelConfig& config, int64_t cond_dim) {
    input = register_module("input", nn::Conv2d(nn::Conv2dOptions(1, config.base_channels, 3).padding(1)));
    levels = register_module("levels", nn::ModuleList());
    int64_t ch = config.base_channels;
    for (auto mult : config.channel_mults) {
        const int64_t out = config.base_channels * mult;
        levels->push_back(ResBlock(ch, out, cond_dim, config.groups));
        ch = out;
    }
    middle = register_module("middle", ResBlock(ch, ch, cond_dim, config.groups));
}

DownPathOutput DownPathImpl::forward(const torch::Tensor& x, const torch::Tensor& cond) {
    DownPathOutput out;
    auto h = input(x);
    for (size_t i = 0; i < levels->size(); ++i) {
        h = levels[i]->as<ResBlock>()->forward(h, cond);
        out.skips.push_back(h);
        if (i + 1 < levels->size()) h = torch::avg_pool2d(h, 2);
    }
    out.middle = middle(h, cond);
    return out;
}

namespace {
int64_t cond_width(const ModelConfig& c) { return 2 * c.latent_dim + c.time_embed_dim; }
}  // namespace

NoisePredictorImpl::NoisePredictorImpl(const ModelConfig& cfg) : config(cfg) {
    config.validate();
    time_mlp = register_module("time_mlp", nn::Sequential(nn::Linear(config.time_embed_dim / 2, config.time_embed_dim),
                                                          nn::SiLU(), nn::Linear(config.time_embed_dim, config.time_embed_dim)));
    down = register_module("down", DownPath(config, cond_width(config)));
    up = register_module("up", nn::ModuleList());
    // Up blocks run from the lowest resolution back to the highest.
    const auto& mults = config.channel_mults;
    int64_t ch = config.base_channels * mults.back();
    for (size_t k = mults.size(); k-- > 0;) {
        const int64_t skip_ch = config.base_channels * mults[k];
        up->push_back(ResBlock(ch + skip_ch, skip_ch, cond_width(config), config.groups));
        ch = skip_ch;
    }
    out_norm = register_module("out_norm", nn::GroupNorm(nn::GroupNormOptions(std::min(config.groups, ch), ch)));
    out_conv = register_module("out_conv", nn::Conv2d(nn::Conv2dOptions(ch, 1, 3).padding(1)));
}

torch::Tensor NoisePredictorImpl::forward(const torch::Tensor& x_t, const torch::Tensor& timesteps,
                                          const torch::Tensor& z_kappa, const torch::Tensor& z_upsilon) {
    if (x_t.dim() != 4 || x_t.size(1) != 1 || x_t.size(2) != config.resolution || x_t.size(3) != config.resolution) {
        throw std::invalid_argument("predict_noise: expected [B,1," + std::to_string(config.resolution) + "," +
                                    std::to_string(config.resolution) + "] input");
    }
    if (z_kappa.size(-1) != config.latent_dim || z_upsilon.size(-1) != config.latent_dim) {
        throw std::invalid_argument("predict_noise: latent dimension mismatch");
    }
    auto temb = torch::silu(time_mlp->forward(timestep_embedding(timesteps, config.time_embed_dim / 2)));
    auto cond = torch::cat({z_kappa, z_upsilon, temb}, 1);
    auto d = down(x_t, cond);
    auto h = d.middle;
    const size_t levels = d.skips.size();
    for (size_t i = 0; i < levels; ++i) {
        const size_t level = levels - 1 - i;
        h = up[i]->as<ResBlock>()->forward(torch::cat({h, d.skips[level]}, 1), cond);
        if (level > 0) {
            h = torch::upsample_nearest2d(h, std::vector<int64_t>{h.size(2) * 2, h.size(3) * 2});
        }
    }
    return out_conv(torch::silu(out_norm(h)));
}

UnknownEncoderImpl::UnknownEncoderImpl(const ModelConfig& cfg) : config(cfg) {
    config.validate();
    down = register_module("down", DownPath(config, 0));
    const int64_t ch = config.base_channels * config.channel_mults.back();
    norm = register_module("norm", nn::GroupNorm(nn::GroupNormOptions(std::min(config.groups, ch), ch)));
    project = register_module("project", nn::Linear(ch, config.latent_dim));
}

torch::Tensor UnknownEncoderImpl::forward(const torch::Tensor& x0) {
    if (x0.dim() != 4 || x0.size(2) != config.resolution || x0.size(3) != config.resolution) {
        throw std::invalid_argument("encode_unknown: expected " + std::to_string(config.resolution) + "x" +
                                    std::to_string(config.resolution) + " input");
    }
    auto h = down(x0).middle;
    return project(torch::silu(norm(h)).mean({2, 3}));
}

KnownEncoderImpl::KnownEncoderImpl(int64_t condition_width, const ModelConfig& config)
    : input_width(condition_width) {
    fc1 = register_module("fc1", nn::Linear(condition_width, config.known_hidden));
    fc2 = register_module("fc2", nn::Linear(config.known_hidden, config.latent_dim));
}

torch::Tensor KnownEncoderImpl::forward(const torch::Tensor& condition) {
    if (condition.dim() != 2 || condition.size(1) != input_width) {
        throw std::invalid_argument("encode_known: condition width " + std::to_string(condition.size(-1)) +
                                    " != expected " + std::to_string(input_width));
    }
    return fc2(torch::silu(fc1(condition)));
}

nn::Sequential make_predictor_head(int64_t latent_dim, int64_t outputs) {
    return nn::Sequential(nn::Linear(latent_dim, 128), nn::ReLU(), nn::BatchNorm1d(128), nn::Dropout(0.5),
                          nn::Linear(128, 32), nn::ReLU(), nn::BatchNorm1d(32), nn::Dropout(0.5),
                          nn::Linear(32, outputs));
}

AuxHeadsImpl::AuxHeadsImpl(int64_t latent_dim, int64_t site_count) {
    age = register_module("age", make_predictor_head(latent_dim, 1));
    sex = register_module("sex", make_predictor_head(latent_dim, 1));
    site = register_module("site", make_predictor_head(latent_dim, site_count));
}

namespace {
struct GradientReversal : torch::autograd::Function<GradientReversal> {
    static torch::Tensor forward(torch::autograd::AutogradContext*, const torch::Tensor& x) { return x.clone(); }
    static torch::autograd::tensor_list backward(torch::autograd::AutogradContext*,
                                                 torch::autograd::tensor_list grads) {
        return {-grads[0]};
    }
};
}  // namespace

torch::Tensor reverse_gradient(const torch::Tensor& x) { return GradientReversal::apply(x); }

DdaeNetworksImpl::DdaeNetworksImpl(const ModelConfig& config, size_t site_count) {
    config.validate();
    if (site_count == 0) throw std::invalid_argument("networks: site vocabulary must be non-empty");
    noise_predictor = register_module("noise_predictor", NoisePredictor(config));
    unknown_encoder = register_module("unknown_encoder", UnknownEncoder(config));
    known_encoder = register_module(
        "known_encoder", KnownEncoder(condition_width(config.site_encoding, site_count), config));
    kappa_heads = register_module("kappa_heads", AuxHeads(config.latent_dim, static_cast<int64_t>(site_count)));
    upsilon_heads = register_module("upsilon_heads", AuxHeads(config.latent_dim, static_cast<int64_t>(site_count)));
}

int64_t parameter_count(const torch::nn::Module& module) {
    int64_t n = 0;
    for (const auto& p : module.parameters()) n += p.numel();
    return n;
}

}  // namespace ddae
