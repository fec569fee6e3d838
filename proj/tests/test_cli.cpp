#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <fstream>
#include <sstream>

#include "json.hpp"

#include "ddae/cli.hpp"
#include "ddae/dataset.hpp"
#include "ddae/harmonize.hpp"
#include "test_helpers.hpp"

using namespace ddae;
using ddae::testing::TempDir;
namespace fs = std::filesystem;

namespace {

struct Run {
    int code;
    std::string out, err;
};

Run cli(std::vector<std::string> args) {
    std::ostringstream out, err;
    const int code = run_cli(args, out, err);
    return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

// Artifact bytes keyed by relative path; run metadata records the output path and is compared separately.
std::map<std::string, std::string> tree_bytes(const fs::path& root) {
    std::map<std::string, std::string> files;
    for (const auto& e : fs::recursive_directory_iterator(root)) {
        if (!e.is_regular_file() || e.path().filename() == "run_metadata.json") continue;
        files[fs::relative(e.path(), root).string()] = slurp(e.path());
    }
    return files;
}

void write_file(const fs::path& p, const std::string& text) {
    std::ofstream o(p);
    o << text;
}

// Tiny model and schedule so the pipeline runs in seconds.
nlohmann::json tiny_run_config() {
    return {{"seed", 3},
            {"train",
             {{"epochs", 1},
              {"batch_size", 8},
              {"learning_rate", 1e-3},
              {"model",
               {{"resolution", 16},
                {"base_channels", 8},
                {"channel_mults", {1, 2}},
                {"latent_dim", 8},
                {"known_hidden", 16},
                {"time_embed_dim", 16},
                {"groups", 4}}},
              {"schedule", {{"kind", "linear"}, {"steps", 50}, {"beta_start", 5e-4}, {"beta_end", 0.1}}}}},
            {"sampler", {{"num_steps", 5}}},
            {"probe", {{"epochs", 2}}},
            {"eval", {{"seeds", {0}}, {"shrinkage", true}}}};
}

}  // namespace

TEST_CASE("gen-data writes the requested cohort deterministically") {
    TempDir dir("cli_gen");
    const auto a = dir.path / "nested" / "a";
    const auto b = dir.path / "b";
    auto r = cli({"gen-data", "--sites", "3", "--n", "50", "--seed", "7", "--out", a.string()});
    REQUIRE(r.code == 0);
    CHECK(r.err.empty());
    size_t pngs = 0;
    for (const auto& e : fs::directory_iterator(a / "images")) pngs += e.path().extension() == ".png";
    CHECK(pngs == 150);
    std::ifstream csv(a / "covariates.csv");
    size_t lines = 0;
    for (std::string line; std::getline(csv, line);) ++lines;
    CHECK(lines == 151);
    REQUIRE(cli({"gen-data", "--sites", "3", "--n", "50", "--seed", "7", "--out", b.string()}).code == 0);
    CHECK(tree_bytes(a) == tree_bytes(b));
    const auto first_meta = slurp(b / "run_metadata.json");
    REQUIRE(cli({"gen-data", "--sites", "3", "--n", "50", "--seed", "7", "--out", b.string()}).code == 0);
    CHECK(slurp(b / "run_metadata.json") == first_meta);

    const auto meta = nlohmann::json::parse(slurp(a / "run_metadata.json"));
    CHECK(meta["command"] == "gen-data");
    CHECK(meta["seed"] == 7);
    CHECK(meta.contains("config_hash"));
    CHECK(meta["versions"].contains("libtorch"));
}

TEST_CASE("usage and configuration errors exit nonzero with one line") {
    TempDir dir("cli_err");
    auto r = cli({"frobnicate"});
    CHECK(r.code == kExitUsage);
    r = cli({"gen-data"});
    CHECK(r.code != 0);
    CHECK(r.err.find("output directory") != std::string::npos);

    const auto cfg = dir.path / "bad.json";
    write_file(cfg, R"({"train": {"epochs": 1, "model": {"resolutoin": 16}}})");
    r = cli({"gen-data", "--config", cfg.string(), "--out", (dir.path / "x").string()});
    CHECK(r.code == kExitError);
    CHECK(r.err.find("train.model.resolutoin") != std::string::npos);
    CHECK(std::count(r.err.begin(), r.err.end(), '\n') == 1);

    write_file(cfg, R"({"seed": 1, "train": {"seed": 2}})");
    r = cli({"gen-data", "--config", cfg.string(), "--out", (dir.path / "x").string()});
    CHECK(r.code == kExitError);
    CHECK(r.err.find("train.seed") != std::string::npos);

    r = cli({"gen-data", "--device", "cuda", "--out", (dir.path / "x").string()});
    CHECK(r.code == kExitError);
    CHECK(r.err.find("cuda") != std::string::npos);
}

TEST_CASE("full pipeline on a tiny configuration") {
    TempDir dir("cli_pipeline");
    const auto cfg = dir.path / "run.json";
    write_file(cfg, tiny_run_config().dump(2));
    const auto data = (dir.path / "data").string();
    const auto run = (dir.path / "run").string();
    const auto harm = (dir.path / "harm").string();

    REQUIRE(cli({"gen-data", "--config", cfg.string(), "--sites", "3", "--n", "6", "--resolution", "16", "--out", data})
                .code == 0);
    auto r = cli({"train", "--config", cfg.string(), "--data", data, "--out", run});
    INFO(r.err);
    REQUIRE(r.code == 0);
    CHECK(fs::exists(fs::path(run) / "checkpoint.pt"));
    CHECK(fs::exists(fs::path(run) / "loss_history.csv"));
    const auto ckpt = (fs::path(run) / "checkpoint.pt").string();

    r = cli({"harmonize", "--config", cfg.string(), "--data", data, "--checkpoint", ckpt, "--out", harm});
    INFO(r.err);
    REQUIRE(r.code == 0);
    const auto manifest = read_manifest_csv(fs::path(harm) / "manifest.csv");
    CHECK(manifest.size() == 18);
    CHECK(load_dataset(harm).size() == 18);
    // Inputs are not mutated and reruns are byte identical.
    const auto data_before = tree_bytes(data);
    const auto harm2 = (dir.path / "harm2").string();
    REQUIRE(cli({"harmonize", "--config", cfg.string(), "--data", data, "--checkpoint", ckpt, "--out", harm2}).code == 0);
    CHECK(tree_bytes(harm) == tree_bytes(harm2));
    CHECK(tree_bytes(data) == data_before);

    const auto combat_dir = (dir.path / "combat").string();
    r = cli({"combat", "--config", cfg.string(), "--data", data, "--out", combat_dir});
    INFO(r.err);
    REQUIRE(r.code == 0);
    CHECK(load_dataset(combat_dir).size() == 18);

    const auto eval_dir = dir.path / "eval";
    r = cli({"eval", "--config", cfg.string(), "--original", data, "--harmonized", harm, "--out", eval_dir.string()});
    INFO(r.err);
    REQUIRE(r.code == 0);
    const auto report = nlohmann::json::parse(slurp(eval_dir / "report.json"));
    CHECK(report.contains("frechet"));
    CHECK(fs::exists(eval_dir / "report.txt"));
    CHECK(fs::exists(eval_dir / "splits" / "split_seed0.csv"));

    const auto embed_dir = dir.path / "embed";
    r = cli({"embed", "--config", cfg.string(), "--data", data, "--checkpoint", ckpt, "--same-site", "site_a", "--out",
             embed_dir.string()});
    INFO(r.err);
    REQUIRE(r.code == 0);
    CHECK(fs::exists(embed_dir / "embedding.csv"));
    CHECK(fs::exists(embed_dir / "embedding.png"));
    CHECK(fs::exists(embed_dir / "embedding_same_site.csv"));
    const auto embed_again = dir.path / "embed2";
    REQUIRE(cli({"embed", "--config", cfg.string(), "--data", data, "--checkpoint", ckpt, "--out", embed_again.string()})
                .code == 0);
    CHECK(slurp(embed_dir / "embedding.csv") == slurp(embed_again / "embedding.csv"));

    // Eval with an id mismatch names the offending id.
    auto tampered = load_dataset(harm);
    tampered.samples[4].id = "site_z_9999";
    const auto tampered_dir = dir.path / "tampered";
    save_dataset(tampered_dir, tampered);
    r = cli({"eval", "--config", cfg.string(), "--original", data, "--harmonized", tampered_dir.string(), "--out",
             (dir.path / "eval_bad").string()});
    CHECK(r.code == kExitError);
    CHECK(r.err.find("site_z_9999") != std::string::npos);

    // Resuming under a different schedule is refused with an explicit fingerprint error.
    auto changed = tiny_run_config();
    changed["train"]["schedule"]["steps"] = 60;
    const auto cfg2 = dir.path / "changed.json";
    write_file(cfg2, changed.dump());
    r = cli({"train", "--config", cfg2.string(), "--data", data, "--resume", ckpt, "--out",
             (dir.path / "resumed").string()});
    CHECK(r.code == kExitError);
    CHECK(r.err.find("fingerprint") != std::string::npos);
    CHECK(r.err.find("60") != std::string::npos);
}
