#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "corrhal/dataset.hpp"

using namespace corrhal;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string cli_path() {
    const char* env = std::getenv("CORRHAL_CLI");
    REQUIRE_MESSAGE(env != nullptr, "CORRHAL_CLI must point at the CLI binary");
    return env;
}

struct CliResult {
    int exit_code;
    std::string stdout_text;
};

CliResult run_cli(const std::string& args) {
    fs::path out_file = fs::temp_directory_path() / "corrhal_cli_stdout.txt";
    std::string cmd = cli_path() + " " + args + " >" + out_file.string() + " 2>/dev/null";
    int status = std::system(cmd.c_str());
    std::ifstream in(out_file);
    std::ostringstream text;
    text << in.rdbuf();
    fs::remove(out_file);
    return {WEXITSTATUS(status), text.str()};
}

std::string slurp(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream text;
    text << in.rdbuf();
    return text.str();
}

struct PipelineDirs {
    fs::path root, data, maps, poses, report;
    fs::path ckpt, metrics;
};

PipelineDirs run_pipeline(const fs::path& root, uint64_t seed) {
    PipelineDirs dirs;
    dirs.root = root;
    dirs.data = root / "data";
    dirs.maps = root / "maps";
    dirs.poses = root / "poses";
    dirs.report = root / "report";
    dirs.ckpt = root / "model.ckpt";
    dirs.metrics = root / "metrics.csv";
    fs::create_directories(root);

    fs::path dataset_cfg = root / "dataset.json";
    std::ofstream(dataset_cfg)
        << R"({"n_pairs": 6, "overlap_bins": 3, "overlap_min": 0.15, "overlap_max": 0.7})";
    fs::path train_cfg = root / "train.json";
    std::ofstream(train_cfg)
        << R"({"epochs": 2, "batch_pairs": 3, "keypoints_per_pair": 12, "seed": )" << seed << "}";

    CHECK(run_cli("synth-gen --config " + dataset_cfg.string() + " --seed " +
                  std::to_string(seed) + " --out " + dirs.data.string())
              .exit_code == 0);
    CHECK(run_cli("train --config " + train_cfg.string() + " --data " + dirs.data.string() +
                  " --out " + dirs.ckpt.string() + " --metrics " + dirs.metrics.string())
              .exit_code == 0);
    CHECK(run_cli("infer --ckpt " + dirs.ckpt.string() + " --data " + dirs.data.string() +
                  " --out " + dirs.maps.string() + " --max-keypoints 16 --previews")
              .exit_code == 0);
    CHECK(run_cli("pose --maps " + dirs.maps.string() + " --data " + dirs.data.string() +
                  " --out " + dirs.poses.string() + " --seed " + std::to_string(seed))
              .exit_code == 0);
    CHECK(run_cli("report --data " + dirs.data.string() + " --maps " + dirs.maps.string() +
                  " --results " + dirs.poses.string() + " --out " + dirs.report.string() +
                  " --seed " + std::to_string(seed))
              .exit_code == 0);
    return dirs;
}

}  // namespace

TEST_CASE("full pipeline produces the expected artifacts") {
    fs::path root = fs::temp_directory_path() / "corrhal_cli_pipeline";
    fs::remove_all(root);
    PipelineDirs dirs = run_pipeline(root, 42);

    DatasetIndex index = read_manifest(dirs.data.string());
    CHECK(index.pairs.size() == 6);
    CHECK(fs::exists(dirs.ckpt));
    CHECK(fs::exists(dirs.metrics));
    CHECK(fs::exists(dirs.maps / "pair_00000" / "map_0000.chm"));
    CHECK(fs::exists(dirs.maps / "pair_00000" / "map_0000.pgm"));
    CHECK(fs::exists(dirs.report / "nre_summary.csv"));
    CHECK(fs::exists(dirs.report / "precision_curve.csv"));

    json pose_json = json::parse(slurp(dirs.poses / "pair_00000.json"));
    CHECK((pose_json.at("status") == "ok" || pose_json.at("status") == "failed"));
    CHECK(pose_json.contains("inlier_count") == (pose_json.at("status") == "ok"));
    CHECK_FALSE(pose_json.contains("wall_ms"));  // timing is opt-in

    std::string metrics = slurp(dirs.metrics);
    CHECK(metrics.substr(0, metrics.find('\n')) ==
          "epoch,lr,train_nre,val_nre,dropped_keypoints,wall_seconds");
    fs::remove_all(root);
}

TEST_CASE("pipeline is bit-deterministic under a fixed seed") {
    fs::path root_a = fs::temp_directory_path() / "corrhal_cli_det_a";
    fs::path root_b = fs::temp_directory_path() / "corrhal_cli_det_b";
    fs::remove_all(root_a);
    fs::remove_all(root_b);
    PipelineDirs a = run_pipeline(root_a, 42);
    PipelineDirs b = run_pipeline(root_b, 42);

    CHECK(slurp(a.ckpt) == slurp(b.ckpt));
    CHECK(slurp(a.maps / "pair_00003" / "map_0002.chm") ==
          slurp(b.maps / "pair_00003" / "map_0002.chm"));
    CHECK(slurp(a.poses / "pair_00001.json") == slurp(b.poses / "pair_00001.json"));
    for (const char* name :
         {"nre_summary.csv", "nre_histogram.csv", "argmax_summary.csv", "precision_curve.csv"})
        CHECK(slurp(a.report / name) == slurp(b.report / name));
    fs::remove_all(root_a);
    fs::remove_all(root_b);
}

TEST_CASE("pipeline on seed 42 reproduces the committed golden CSVs") {
    const char* golden_env = std::getenv("CORRHAL_GOLDEN");
    REQUIRE_MESSAGE(golden_env != nullptr, "CORRHAL_GOLDEN must point at tests/golden");
    fs::path golden = fs::path(golden_env) / "pipeline_seed42";

    fs::path root = fs::temp_directory_path() / "corrhal_cli_golden";
    fs::remove_all(root);
    PipelineDirs dirs = run_pipeline(root, 42);

    if (std::getenv("CORRHAL_WRITE_GOLDEN")) {
        fs::remove_all(golden);
        fs::create_directories(golden);
        for (const char* name : {"nre_summary.csv", "argmax_summary.csv", "precision_curve.csv"})
            fs::copy_file(dirs.report / name, golden / name);
        MESSAGE("golden CSVs rewritten");
    }

    for (const char* name : {"nre_summary.csv", "argmax_summary.csv", "precision_curve.csv"}) {
        REQUIRE_MESSAGE(fs::exists(golden / name), "missing committed golden: ", name);
        CHECK_MESSAGE(slurp(dirs.report / name) == slurp(golden / name), name);
    }
    fs::remove_all(root);
}

TEST_CASE("infer with zero valid keypoints emits an error JSON and exits nonzero") {
    fs::path root = fs::temp_directory_path() / "corrhal_cli_empty";
    fs::remove_all(root);
    fs::create_directories(root / "data");

    fs::path dataset_cfg = root / "dataset.json";
    std::ofstream(dataset_cfg) << R"({"n_pairs": 1, "overlap_bins": 1})";
    CHECK(run_cli("synth-gen --config " + dataset_cfg.string() + " --seed 9 --out " +
                  (root / "data").string())
              .exit_code == 0);

    fs::path train_cfg = root / "train.json";
    std::ofstream(train_cfg) << R"({"epochs": 1, "batch_pairs": 1, "keypoints_per_pair": 8})";
    CHECK(run_cli("train --config " + train_cfg.string() + " --data " + (root / "data").string() +
                  " --out " + (root / "model.ckpt").string())
              .exit_code == 0);

    // Empty the keypoint list of the only pair.
    fs::path pair_json = root / "data" / "pair_00000" / "pair.json";
    json j = json::parse(slurp(pair_json));
    j["keypoints"] = json::array();
    std::ofstream(pair_json) << j.dump(1) << "\n";

    CliResult result = run_cli("infer --ckpt " + (root / "model.ckpt").string() + " --data " +
                               (root / "data").string() + " --out " + (root / "maps").string());
    CHECK(result.exit_code != 0);
    json error = json::parse(result.stdout_text);
    CHECK(error.at("code") == "EmptyBatch");
    CHECK(error.contains("message"));
    CHECK(error.contains("context"));
    fs::remove_all(root);
}

TEST_CASE("bad inputs produce machine-readable errors") {
    CliResult missing = run_cli("infer --ckpt /nonexistent.ckpt --data /nonexistent --out /tmp/x");
    CHECK(missing.exit_code != 0);
    json error = json::parse(missing.stdout_text);
    CHECK(error.at("code") == "IoError");
}
