#include "ddae/json_io.hpp"

#include <algorithm>
#include <stdexcept>

namespace ddae {

void to_json(Json& j, const ScheduleFingerprint& f) {
    j = Json{{"kind", f.kind}, {"steps", f.steps}, {"beta_start", f.beta_start}, {"beta_end", f.beta_end}};
}

void from_json(const Json& j, ScheduleFingerprint& f) { f = schedule_from_json(j, "schedule"); }

ScheduleFingerprint schedule_from_json(const Json& j, const std::string& path) {
    reject_unknown_keys(j, {"kind", "steps", "beta_start", "beta_end"}, path);
    ScheduleFingerprint f;
    f.kind = j.value("kind", std::string("linear"));
    f.steps = j.at("steps").get<int64_t>();
    f.beta_start = j.at("beta_start").get<double>();
    f.beta_end = j.at("beta_end").get<double>();
    return f;
}

void to_json(Json& j, const ModelConfig& c) {
    j = Json{{"resolution", c.resolution},
             {"base_channels", c.base_channels},
             {"channel_mults", c.channel_mults},
             {"latent_dim", c.latent_dim},
             {"known_hidden", c.known_hidden},
             {"time_embed_dim", c.time_embed_dim},
             {"groups", c.groups},
             {"site_encoding", to_string(c.site_encoding)}};
}

void from_json(const Json& j, ModelConfig& c) { c = model_config_from_json(j, "model"); }

ModelConfig model_config_from_json(const Json& j, const std::string& path) {
    reject_unknown_keys(j,
                        {"resolution", "base_channels", "channel_mults", "latent_dim", "known_hidden",
                         "time_embed_dim", "groups", "site_encoding"},
                        path);
    ModelConfig c, d;
    c.resolution = j.value("resolution", d.resolution);
    c.base_channels = j.value("base_channels", d.base_channels);
    c.channel_mults = j.value("channel_mults", d.channel_mults);
    c.latent_dim = j.value("latent_dim", d.latent_dim);
    c.known_hidden = j.value("known_hidden", d.known_hidden);
    c.time_embed_dim = j.value("time_embed_dim", d.time_embed_dim);
    c.groups = j.value("groups", d.groups);
    c.site_encoding = site_encoding_from_string(j.value("site_encoding", std::string("scalar")));
    return c;
}

void to_json(Json& j, const CovariateNorm& n) {
    j = Json{{"age_mean", n.age_mean}, {"age_std", n.age_std}, {"age_min", n.age_min}, {"age_max", n.age_max}};
}

void from_json(const Json& j, CovariateNorm& n) {
    n.age_mean = j.at("age_mean").get<double>();
    n.age_std = j.at("age_std").get<double>();
    n.age_min = j.at("age_min").get<double>();
    n.age_max = j.at("age_max").get<double>();
}

void reject_unknown_keys(const Json& object, std::initializer_list<const char*> allowed, const std::string& path) {
    if (!object.is_object()) throw std::invalid_argument("config key '" + path + "': expected an object");
    for (const auto& item : object.items()) {
        const bool known = std::any_of(allowed.begin(), allowed.end(), [&](const char* k) { return item.key() == k; });
        if (!known) throw std::invalid_argument("unknown config key '" + (path.empty() ? item.key() : path + "." + item.key()) + "'");
    }
}

}  // namespace ddae
