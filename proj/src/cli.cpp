#include "ddae/cli.hpp"

#include <algorithm>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include <Eigen/Core>
#include <torch/torch.h>

#include "CLI11.hpp"

#include "ddae/combat.hpp"
#include "ddae/errors.hpp"
#include "ddae/evalsuite.hpp"
#include "ddae/harmonize.hpp"
#include "ddae/model.hpp"
#include "ddae/run_config.hpp"
#include "ddae/sampling.hpp"
#include "ddae/synth.hpp"
#include "ddae/training.hpp"

namespace ddae {

namespace {

namespace fs = std::filesystem;

constexpr const char* kVersion = "0.1.0";

struct CommonFlags {
    std::string config;
    std::optional<uint64_t> seed;
    std::string out;
    std::string device;
};

void add_common(CLI::App* cmd, CommonFlags& f) {
    cmd->add_option("--config", f.config, "JSON run configuration")->check(CLI::ExistingFile);
    cmd->add_option("--seed", f.seed, "Seed for every random stream of the run (overrides the config)");
    cmd->add_option("--out", f.out, "Output directory");
    cmd->add_option("--device", f.device, "Compute device (cpu)");
}

fs::path absolute_or_empty(const std::string& p) { return p.empty() ? fs::path{} : fs::absolute(p).lexically_normal(); }

// Config file first, then flags.
RunConfig resolve_config(const CommonFlags& f) {
    RunConfig c = f.config.empty() ? RunConfig{} : load_run_config(f.config);
    if (f.seed) c.apply_seed(*f.seed);
    if (!f.out.empty()) c.paths.out = absolute_or_empty(f.out);
    if (!f.device.empty()) c.device = f.device;
    if (c.device != "cpu") throw std::invalid_argument("device '" + c.device + "' is not supported; use cpu");
    if (c.paths.out.empty()) throw std::invalid_argument("no output directory: pass --out or set paths.out");
    return c;
}

void override_path(fs::path& target, const std::string& flag_value) {
    if (!flag_value.empty()) target = absolute_or_empty(flag_value);
}

void require_path(const fs::path& p, const char* what) {
    if (p.empty()) throw std::invalid_argument(std::string("missing ") + what);
    if (!fs::exists(p)) throw DataError(std::string(what) + " not found: " + p.string());
}

void write_metadata(const std::string& command, const RunConfig& c, const nlohmann::json& extra = {}) {
    fs::create_directories(c.paths.out);
    nlohmann::json meta{
        {"command", command},
        {"config_hash", config_hash(c)},
        {"seed", c.seed},
        {"versions",
         {{"ddae", kVersion},
          {"libtorch", TORCH_VERSION},
          {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                        std::to_string(EIGEN_MINOR_VERSION)},
          {"compiler", __VERSION__}}},
        {"config", to_json(c)},
    };
    if (!extra.is_null()) meta["result"] = extra;
    std::ofstream o(c.paths.out / "run_metadata.json");
    o << meta.dump(2) << '\n';
    if (!o) throw DataError("cannot write run metadata in " + c.paths.out.string());
}

DdaeModel load_model(const RunConfig& c) {
    require_path(c.paths.checkpoint, "checkpoint");
    return load_checkpoint(c.paths.checkpoint,
                           c.schedule_declared ? std::optional<ScheduleFingerprint>(c.train.schedule) : std::nullopt);
}

int cmd_gen_data(RunConfig c, std::optional<int64_t> sites, std::optional<int64_t> n, std::optional<int64_t> res,
                 std::ostream& out) {
    if (sites) {
        const auto keep = c.cohort;
        c.cohort = CohortSpec::default_spec(*sites, keep.n_per_site, keep.seed);
        c.cohort.age_min = keep.age_min;
        c.cohort.age_max = keep.age_max;
        c.cohort.sex_ratio = keep.sex_ratio;
        c.cohort.resolution = keep.resolution;
    }
    if (n) c.cohort.n_per_site = *n;
    if (res) c.cohort.resolution = *res;
    const auto ds = generate_cohort(c.cohort);
    save_dataset(c.paths.out, ds);
    write_metadata("gen-data", c, {{"samples", ds.size()}});
    out << "wrote " << ds.size() << " samples to " << c.paths.out.string() << '\n';
    return 0;
}

int cmd_train(RunConfig c, std::ostream& out) {
    require_path(c.paths.data, "dataset directory");
    const auto ds = load_dataset(c.paths.data);
    fs::create_directories(c.paths.out);
    c.train.checkpoint_path = c.paths.out / "checkpoint.pt";
    c.train.history_path = c.paths.out / "loss_history.csv";
    const auto result = train(c.train, ds, [&](const EpochLoss& e) {
        out << "epoch " << e.epoch << " diffusion " << e.mean.diffusion_loss << " total " << e.mean.total << std::endl;
    });
    write_metadata("train", c,
                   {{"checkpoint", c.train.checkpoint_path.string()},
                    {"parameters", result.model.parameter_count()},
                    {"epochs", result.history.size()}});
    out << "checkpoint written to " << c.train.checkpoint_path.string() << '\n';
    return 0;
}

int cmd_harmonize(RunConfig c, std::ostream& out, std::ostream& err) {
    require_path(c.paths.data, "dataset directory");
    const auto model = load_model(c);
    const auto ds = load_dataset(c.paths.data);
    HarmonizationJob job;
    job.source = &ds;
    job.model = &model;
    job.target_site = c.target_site;
    job.sampler = SamplerConfig::uniform(c.sampler_steps, model.schedule().steps());
    job.sampler.encode_refinements = c.encode_refinements;
    job.output_dir = c.paths.out;
    const auto result = harmonize_dataset(job);
    write_metadata("harmonize", c,
                   {{"target_site", result.target_site}, {"samples", ds.size()}, {"failures", result.failures}});
    out << "harmonized " << result.harmonized.size() << " of " << ds.size() << " samples to site '"
        << result.target_site << "'\n";
    if (result.failures > 0) {
        err << "error: " << result.failures << " sample(s) failed; see " << (c.paths.out / "manifest.csv").string()
            << '\n';
        return kExitPartialFailure;
    }
    return 0;
}

int cmd_combat(RunConfig c, std::ostream& out) {
    require_path(c.paths.data, "dataset directory");
    const auto ds = load_dataset(c.paths.data);
    CombatModel model;
    HarmonizationResult result;
    result.target_site = "combat_pooled";
    result.harmonized = combat_harmonize(ds, {}, &model);
    for (const auto& s : ds.samples) {
        result.manifest.push_back({s.id, s.source_path, s.covariates.age, s.covariates.sex, s.covariates.site,
                                   result.target_site, "ok"});
    }
    write_harmonized_output(c.paths.out, result);
    write_metadata("combat", c,
                   {{"samples", ds.size()},
                    {"passthrough_features", model.passthrough_count()},
                    {"iterations", model.iterations}});
    out << "ComBat-adjusted " << ds.size() << " samples (" << model.passthrough_count()
        << " constant features passed through)\n";
    return 0;
}

int cmd_eval(RunConfig c, std::ostream& out) {
    require_path(c.paths.original, "original dataset directory");
    require_path(c.paths.harmonized, "harmonized dataset directory");
    const auto original = load_dataset(c.paths.original);
    const auto harmonized = load_dataset(c.paths.harmonized);
    check_paired(original, harmonized);
    EvalOptions opt;
    opt.seeds = c.eval_seeds;
    opt.probe = c.probe;
    opt.test_fraction = c.test_fraction;
    opt.reference_site = c.reference_site;
    opt.shrinkage = c.shrinkage;
    opt.split_dir = c.paths.out / "splits";
    const auto report = evaluate(original, harmonized, opt);
    fs::create_directories(c.paths.out);
    std::ofstream(c.paths.out / "report.json") << report.to_json().dump(2) << '\n';
    std::ofstream(c.paths.out / "report.txt") << report.table();
    write_metadata("eval", c, {{"report", (c.paths.out / "report.json").string()}});
    out << report.table();
    return 0;
}

int cmd_embed(RunConfig c, const std::optional<std::string>& same_site, std::ostream& out) {
    require_path(c.paths.data, "dataset directory");
    const auto model = load_model(c);
    const auto ds = load_dataset(c.paths.data);
    std::vector<std::string> ids, labels;
    for (const auto& s : ds.samples) {
        ids.push_back(s.id);
        labels.push_back(s.covariates.site);
    }
    fs::create_directories(c.paths.out);
    nlohmann::json result;
    auto emit = [&](const std::string& stem, const std::optional<std::string>& site) {
        const auto coords = embed_latents_2d(latent_pairs(model, ds, site));
        write_embedding_csv(c.paths.out / (stem + ".csv"), coords, ids, labels);
        write_embedding_plot(c.paths.out / (stem + ".png"), coords, labels);
        const auto s = separability(coords, labels);
        result[stem] = {{"inter_centroid", s.inter_centroid}, {"intra_spread", s.intra_spread}, {"ratio", s.ratio()}};
        out << stem << ": inter-site centroid distance " << s.inter_centroid << ", intra-site spread "
            << s.intra_spread << ", ratio " << s.ratio() << '\n';
    };
    emit("embedding", std::nullopt);
    if (same_site) {
        model.vocabulary().index_of(*same_site);
        emit("embedding_same_site", same_site);
    }
    write_metadata("embed", c, result);
    return 0;
}

int cmd_ingest(RunConfig c, std::ostream& out) {
    require_path(c.paths.images, "image directory");
    require_path(c.paths.covariates, "covariate CSV");
    const auto ds = ingest(c.paths.images, c.paths.covariates, IngestOptions{c.ingest_resolution});
    save_dataset(c.paths.out, ds);
    write_metadata("ingest", c, {{"samples", ds.size()}});
    out << "ingested " << ds.size() << " samples into " << c.paths.out.string() << '\n';
    return 0;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    at::set_num_threads(1);
    CLI::App app{"Disentangled diffusion autoencoder for multi-site image harmonisation"};
    app.require_subcommand(1);
    app.set_version_flag("--version", kVersion);

    CommonFlags flags;
    std::string data, checkpoint, harmonized, original, images, covariates, resume, target_site, same_site;
    std::optional<int64_t> sites, n, resolution, steps, epochs, refinements;
    std::optional<double> lr;
    std::vector<uint64_t> eval_seeds;
    bool shrinkage = false;

    auto* gen = app.add_subcommand("gen-data", "Generate a synthetic multi-site phantom cohort");
    add_common(gen, flags);
    gen->add_option("--sites", sites, "Number of sites")->check(CLI::Range(1, 26));
    gen->add_option("--n", n, "Subjects per site")->check(CLI::PositiveNumber);
    gen->add_option("--resolution", resolution, "Image side length");

    auto* tr = app.add_subcommand("train", "Train the model on a dataset");
    add_common(tr, flags);
    tr->add_option("--data", data, "Dataset directory");
    tr->add_option("--resume", resume, "Checkpoint to resume from");
    tr->add_option("--epochs", epochs, "Training epochs")->check(CLI::PositiveNumber);
    tr->add_option("--lr", lr, "Learning rate");

    auto* hm = app.add_subcommand("harmonize", "Map every image of a dataset to one reference site");
    add_common(hm, flags);
    hm->add_option("--data", data, "Dataset directory");
    hm->add_option("--checkpoint", checkpoint, "Trained checkpoint");
    hm->add_option("--target-site", target_site, "Reference site (default: largest site)");
    hm->add_option("--steps", steps, "Sampler steps")->check(CLI::PositiveNumber);
    hm->add_option("--encode-refinements", refinements, "Fixed-point corrections per inversion step")
        ->check(CLI::NonNegativeNumber);

    auto* cb = app.add_subcommand("combat", "ComBat baseline harmonisation");
    add_common(cb, flags);
    cb->add_option("--data", data, "Dataset directory");

    auto* ev = app.add_subcommand("eval", "Evaluate a harmonised dataset against its original");
    add_common(ev, flags);
    ev->add_option("--original", original, "Original dataset directory");
    ev->add_option("--harmonized", harmonized, "Harmonised dataset directory");
    ev->add_option("--seeds", eval_seeds, "Probe seeds")->delimiter(',');
    ev->add_option("--reference-site", target_site, "Reference site for Frechet distances");
    ev->add_flag("--shrinkage", shrinkage, "Diagonal loading for small-sample covariances");

    auto* em = app.add_subcommand("embed", "Two-dimensional embedding of the joint latent space");
    add_common(em, flags);
    em->add_option("--data", data, "Dataset directory");
    em->add_option("--checkpoint", checkpoint, "Trained checkpoint");
    em->add_option("--same-site", same_site, "Also embed with every site set to this label");

    auto* in = app.add_subcommand("ingest", "Import external images and covariates into the dataset layout");
    add_common(in, flags);
    in->add_option("--images", images, "Directory holding <id>.png");
    in->add_option("--covariates", covariates, "CSV with id,age,sex,site");
    in->add_option("--resolution", resolution, "Output side length");

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return 0;
    } catch (const CLI::CallForVersion&) {
        out << kVersion << '\n';
        return 0;
    } catch (const CLI::ParseError& e) {
        const auto* sub = app.get_subcommands().empty() ? nullptr : app.get_subcommands().front();
        err << "error: " << e.what() << (sub ? " (see '" + sub->get_name() + " --help')" : "") << '\n';
        return kExitUsage;
    }

    try {
        RunConfig c = resolve_config(flags);
        override_path(c.paths.data, data);
        override_path(c.paths.checkpoint, checkpoint);
        override_path(c.paths.harmonized, harmonized);
        override_path(c.paths.original, original);
        override_path(c.paths.images, images);
        override_path(c.paths.covariates, covariates);
        if (steps) c.sampler_steps = *steps;
        if (refinements) c.encode_refinements = *refinements;
        if (epochs) c.train.epochs = *epochs;
        if (lr) c.train.learning_rate = *lr;
        if (!resume.empty()) c.train.resume_from = absolute_or_empty(resume);
        if (!eval_seeds.empty()) c.eval_seeds = eval_seeds;
        if (shrinkage) c.shrinkage = true;

        const auto* sub = app.get_subcommands().front();
        const auto name = sub->get_name();
        if (name == "gen-data") return cmd_gen_data(c, sites, n, resolution, out);
        if (name == "train") return cmd_train(c, out);
        if (name == "harmonize") {
            if (!target_site.empty()) c.target_site = target_site;
            return cmd_harmonize(c, out, err);
        }
        if (name == "combat") return cmd_combat(c, out);
        if (name == "eval") {
            if (!target_site.empty()) c.reference_site = target_site;
            return cmd_eval(c, out);
        }
        if (name == "embed") return cmd_embed(c, same_site.empty() ? std::nullopt : std::optional(same_site), out);
        if (name == "ingest") {
            if (resolution) c.ingest_resolution = *resolution;
            return cmd_ingest(c, out);
        }
        err << "error: unknown command " << name << '\n';
        return kExitUsage;
    } catch (const std::exception& e) {
        std::string msg = e.what();
        std::replace(msg.begin(), msg.end(), '\n', ' ');
        err << "error: " << msg << '\n';
        return kExitError;
    }
}

}  // namespace ddae
