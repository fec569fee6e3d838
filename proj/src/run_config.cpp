#include "ddae/run_config.hpp"

#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>

#include "ddae/errors.hpp"
#include "ddae/json_io.hpp"

namespace ddae {

namespace {

std::filesystem::path resolve(const Json& j, const char* key, const std::filesystem::path& base) {
    if (!j.contains(key) || j.at(key).is_null()) return {};
    std::filesystem::path p = j.at(key).get<std::string>();
    if (p.is_relative() && !base.empty()) p = base / p;
    return p.empty() ? p : std::filesystem::absolute(p).lexically_normal();
}

CohortSpec cohort_from_json(const Json& j, uint64_t seed) {
    reject_unknown_keys(j, {"n_per_site", "site_count", "sites", "age_min", "age_max", "sex_ratio", "resolution"},
                        "cohort");
    CohortSpec c = CohortSpec::default_spec(j.value("site_count", int64_t{3}), j.value("n_per_site", int64_t{200}), seed);
    if (j.contains("sites")) {
        c.sites.clear();
        for (size_t i = 0; i < j.at("sites").size(); ++i) {
            const auto& s = j.at("sites").at(i);
            reject_unknown_keys(s, {"name", "gain", "bias_field_amplitude", "contrast_gamma", "noise_sigma"},
                                "cohort.sites[" + std::to_string(i) + "]");
            SiteEffectSpec e;
            e.gain = s.value("gain", e.gain);
            e.bias_field_amplitude = s.value("bias_field_amplitude", e.bias_field_amplitude);
            e.contrast_gamma = s.value("contrast_gamma", e.contrast_gamma);
            e.noise_sigma = s.value("noise_sigma", e.noise_sigma);
            c.sites.emplace_back(s.at("name").get<std::string>(), e);
        }
    }
    c.age_min = j.value("age_min", c.age_min);
    c.age_max = j.value("age_max", c.age_max);
    c.sex_ratio = j.value("sex_ratio", c.sex_ratio);
    c.resolution = j.value("resolution", c.resolution);
    return c;
}

Json cohort_to_json(const CohortSpec& c) {
    Json sites = Json::array();
    for (const auto& [name, e] : c.sites) {
        sites.push_back({{"name", name},
                         {"gain", e.gain},
                         {"bias_field_amplitude", e.bias_field_amplitude},
                         {"contrast_gamma", e.contrast_gamma},
                         {"noise_sigma", e.noise_sigma}});
    }
    return {{"n_per_site", c.n_per_site}, {"sites", sites},         {"age_min", c.age_min},
            {"age_max", c.age_max},       {"sex_ratio", c.sex_ratio}, {"resolution", c.resolution}};
}

template <typename T>
std::optional<T> optional_value(const Json& j, const char* key) {
    if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
    return j.at(key).get<T>();
}

template <typename T>
Json optional_json(const std::optional<T>& v) {
    return v ? Json(*v) : Json(nullptr);
}

}  // namespace

void RunConfig::apply_seed(uint64_t s) {
    seed = s;
    cohort.seed = s;
    train.seed = s;
}

RunConfig run_config_from_json(const Json& j, const std::filesystem::path& base_dir) {
    if (!j.is_object()) throw std::invalid_argument("config: top level must be an object");
    reject_unknown_keys(j, {"seed", "device", "cohort", "train", "sampler", "probe", "eval", "harmonize", "ingest", "paths"},
                        "");
    RunConfig c;
    try {
        c.device = j.value("device", c.device);
        const auto seed = j.value("seed", uint64_t{0});
        if (j.contains("cohort")) c.cohort = cohort_from_json(j.at("cohort"), seed);
        if (j.contains("train")) {
            if (j.at("train").contains("seed")) throw std::invalid_argument("config key 'train.seed': use the top-level seed");
            c.train = train_config_from_json(j.at("train"));
            c.schedule_declared = j.at("train").contains("schedule");
        }
        c.apply_seed(seed);
        if (j.contains("sampler")) {
            reject_unknown_keys(j.at("sampler"), {"num_steps", "encode_refinements"}, "sampler");
            c.sampler_steps = j.at("sampler").value("num_steps", c.sampler_steps);
            c.encode_refinements = j.at("sampler").value("encode_refinements", c.encode_refinements);
        }
        if (j.contains("probe")) {
            const auto& p = j.at("probe");
            reject_unknown_keys(p, {"epochs", "learning_rate", "validation_fraction", "patience", "batch_size"}, "probe");
            c.probe.epochs = p.value("epochs", c.probe.epochs);
            c.probe.learning_rate = p.value("learning_rate", c.probe.learning_rate);
            c.probe.validation_fraction = p.value("validation_fraction", c.probe.validation_fraction);
            c.probe.patience = p.value("patience", c.probe.patience);
            c.probe.batch_size = p.value("batch_size", c.probe.batch_size);
        }
        if (j.contains("eval")) {
            const auto& e = j.at("eval");
            reject_unknown_keys(e, {"seeds", "test_fraction", "shrinkage", "reference_site"}, "eval");
            c.eval_seeds = e.value("seeds", c.eval_seeds);
            c.test_fraction = e.value("test_fraction", c.test_fraction);
            c.shrinkage = e.value("shrinkage", c.shrinkage);
            c.reference_site = optional_value<std::string>(e, "reference_site");
        }
        if (j.contains("harmonize")) {
            reject_unknown_keys(j.at("harmonize"), {"target_site"}, "harmonize");
            c.target_site = optional_value<std::string>(j.at("harmonize"), "target_site");
        }
        if (j.contains("ingest")) {
            reject_unknown_keys(j.at("ingest"), {"resolution"}, "ingest");
            c.ingest_resolution = j.at("ingest").value("resolution", c.ingest_resolution);
        }
        if (j.contains("paths")) {
            const auto& p = j.at("paths");
            reject_unknown_keys(p, {"data", "checkpoint", "harmonized", "original", "images", "covariates", "out"},
                                "paths");
            c.paths = {resolve(p, "data", base_dir),     resolve(p, "checkpoint", base_dir),
                       resolve(p, "harmonized", base_dir), resolve(p, "original", base_dir),
                       resolve(p, "images", base_dir),   resolve(p, "covariates", base_dir),
                       resolve(p, "out", base_dir)};
        }
    } catch (const nlohmann::json::exception& e) {
        throw std::invalid_argument(std::string("config: ") + e.what());
    }
    return c;
}

Json to_json(const RunConfig& c) {
    Json train = to_json(c.train);
    train.erase("seed");
    auto path = [](const std::filesystem::path& p) { return p.empty() ? Json(nullptr) : Json(p.string()); };
    return {
        {"seed", c.seed},
        {"device", c.device},
        {"cohort", cohort_to_json(c.cohort)},
        {"train", train},
        {"sampler", {{"num_steps", c.sampler_steps}, {"encode_refinements", c.encode_refinements}}},
        {"probe",
         {{"epochs", c.probe.epochs},
          {"learning_rate", c.probe.learning_rate},
          {"validation_fraction", c.probe.validation_fraction},
          {"patience", c.probe.patience},
          {"batch_size", c.probe.batch_size}}},
        {"eval",
         {{"seeds", c.eval_seeds},
          {"test_fraction", c.test_fraction},
          {"shrinkage", c.shrinkage},
          {"reference_site", optional_json(c.reference_site)}}},
        {"harmonize", {{"target_site", optional_json(c.target_site)}}},
        {"ingest", {{"resolution", c.ingest_resolution}}},
        {"paths",
         {{"data", path(c.paths.data)},
          {"checkpoint", path(c.paths.checkpoint)},
          {"harmonized", path(c.paths.harmonized)},
          {"original", path(c.paths.original)},
          {"images", path(c.paths.images)},
          {"covariates", path(c.paths.covariates)},
          {"out", path(c.paths.out)}}},
    };
}

RunConfig load_run_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot read config " + path.string());
    Json j;
    try {
        j = Json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw std::invalid_argument("config " + path.string() + ": " + e.what());
    }
    return run_config_from_json(j, std::filesystem::absolute(path).parent_path());
}

std::string config_hash(const RunConfig& config) {
    const auto text = to_json(config).dump();
    uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char ch : text) {
        h ^= ch;
        h *= 0x100000001b3ULL;
    }
    std::ostringstream os;
    os << std::hex << std::setw(16) << std::setfill('0') << h;
    return os.str();
}

}  // namespace ddae
