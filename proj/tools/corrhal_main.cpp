#include <CLI11.hpp>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "corrhal/dataset.hpp"
#include "corrhal/eval.hpp"
#include "corrhal/json_io.hpp"
#include "corrhal/net.hpp"
#include "corrhal/pose.hpp"
#include "corrhal/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace corrhal;

namespace {

struct CliFailure {
    std::string code;
    std::string message;
    json context;
};

[[noreturn]] void fail(std::string code, std::string message, json context = json::object()) {
    throw CliFailure{std::move(code), std::move(message), std::move(context)};
}

std::vector<PairEntry> select_pairs(const DatasetIndex& index, const std::string& pair_id) {
    if (pair_id.empty()) return index.pairs;
    for (const PairEntry& entry : index.pairs)
        if (entry.id == pair_id) return {entry};
    fail("BadFormat", "pair id not found in manifest", {{"pair", pair_id}});
}

std::string map_path(const std::string& maps_dir, const std::string& pair_id, size_t index) {
    char name[32];
    std::snprintf(name, sizeof(name), "map_%04zu.chm", index);
    return maps_dir + "/" + pair_id + "/" + name;
}

std::vector<CorrespondenceMap> load_pair_maps(const std::string& maps_dir,
                                              const std::string& pair_id, size_t max_count) {
    std::vector<CorrespondenceMap> maps;
    for (size_t i = 0; i < max_count; ++i) {
        std::string path = map_path(maps_dir, pair_id, i);
        if (!fs::exists(path)) break;
        maps.push_back(CorrespondenceMap::load(path));
    }
    if (maps.empty()) fail("IoError", "no maps found for pair", {{"pair", pair_id}});
    return maps;
}

int run_synth_gen(const std::string& config_path, uint64_t seed, const std::string& out_dir) {
    DatasetConfig config =
        config_path.empty() ? DatasetConfig{} : dataset_config_from_json_file(config_path);
    write_dataset(out_dir, seed, config, [](int done, int total) {
        if (done % 50 == 0 || done == total)
            std::cerr << "synth-gen: " << done << "/" << total << " pairs\n";
    });
    std::cout << json{{"pairs", config.n_pairs}, {"out", out_dir}}.dump() << "\n";
    return 0;
}

int run_train(const std::string& config_path, const std::string& data_dir,
              const std::string& out_ckpt, const std::string& metrics_path, double gamma_override,
              bool has_gamma, uint64_t seed, bool has_seed) {
    TrainConfig config =
        config_path.empty() ? TrainConfig{} : train_config_from_json_file(config_path);
    if (has_gamma) config.gamma = gamma_override;
    if (has_seed) config.seed = seed;
    config.validate();
    TrainDataset data = load_train_dataset(data_dir);
    TrainResult result = train(config, data, [](const EpochMetrics& m) {
        std::cerr << "epoch " << m.epoch << " lr " << m.lr << " train " << m.train_nre << " val "
                  << m.val_nre << " dropped " << m.dropped_keypoints << "\n";
    });
    save_checkpoint(out_ckpt, result.params);
    if (!metrics_path.empty()) write_metrics_csv(metrics_path, result.metrics);
    std::cout << json{{"checkpoint", out_ckpt},
                      {"best_epoch", result.best_epoch},
                      {"epochs_run", result.metrics.size() - 1}}
                     .dump()
              << "\n";
    return 0;
}

int run_infer(const std::string& ckpt_path, const std::string& data_dir,
              const std::string& out_dir, const std::string& pair_id, int max_keypoints,
              bool previews) {
    NetParams params = load_checkpoint(ckpt_path);
    DatasetIndex index = read_manifest(data_dir);
    for (const PairEntry& entry : select_pairs(index, pair_id)) {
        LoadedPair pair = load_pair(data_dir, entry);
        if (pair.record.keypoints.empty())
            fail("EmptyBatch", "pair has no valid keypoints", {{"pair", entry.id}});
        size_t count = pair.record.keypoints.size();
        if (max_keypoints > 0) count = std::min(count, static_cast<size_t>(max_keypoints));
        std::vector<Vec2> pts;
        pts.reserve(count);
        for (size_t i = 0; i < count; ++i) pts.push_back(pair.record.keypoints[i].p);
        std::vector<CorrespondenceMap> maps =
            infer_maps(params, pair.source_image, pair.target_image, pts);
        fs::create_directories(out_dir + "/" + entry.id);
        for (size_t i = 0; i < maps.size(); ++i) {
            std::string path = map_path(out_dir, entry.id, i);
            maps[i].save(path);
            if (previews) maps[i].save_pgm(path.substr(0, path.size() - 4) + ".pgm");
        }
        std::cerr << "infer: " << entry.id << " -> " << maps.size() << " maps\n";
    }
    std::cout << json{{"out", out_dir}}.dump() << "\n";
    return 0;
}

int run_pose(const std::string& maps_dir, const std::string& data_dir, const std::string& out_dir,
             const std::string& pair_id, uint64_t seed, bool timing) {
    DatasetIndex index = read_manifest(data_dir);
    fs::create_directories(out_dir);
    for (const PairEntry& entry : select_pairs(index, pair_id)) {
        PairRecord record = load_pair_record(data_dir, entry);
        std::vector<CorrespondenceMap> maps =
            load_pair_maps(maps_dir, entry.id, record.keypoints.size());
        std::vector<Keypoint> keypoints;
        keypoints.reserve(maps.size());
        for (size_t i = 0; i < maps.size(); ++i)
            keypoints.push_back({record.keypoints[i].p, record.keypoints[i].depth});

        EstimateConfig config;
        config.msac.seed = seed;
        auto t0 = std::chrono::steady_clock::now();
        PoseEstimate est = estimate(maps, keypoints, record.cam_s, record.cam_t, config);
        double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
                        .count();

        json j;
        j["pair"] = entry.id;
        j["status"] = est.status == PoseStatus::Ok ? "ok" : "failed";
        if (est.status == PoseStatus::Ok) {
            j["pose"] = pose_to_json(est.pose);
            j["inlier_count"] = est.inlier_count;
            j["final_cost"] = est.final_cost;
        }
        if (timing) j["wall_ms"] = ms;
        std::ofstream out(out_dir + "/" + entry.id + ".json");
        if (!out) fail("IoError", "cannot write pose result", {{"pair", entry.id}});
        out << j.dump(1) << "\n";
        std::cerr << "pose: " << entry.id << " " << j["status"] << " (" << ms << " ms)\n";
    }
    std::cout << json{{"out", out_dir}}.dump() << "\n";
    return 0;
}

int run_report(const std::string& data_dir, const std::string& maps_dir,
               const std::string& results_dir, const std::string& out_dir, uint64_t seed,
               double tau_t, double tau_r) {
    DatasetIndex index = read_manifest(data_dir);
    std::vector<std::vector<CorrespondenceMap>> all_maps;
    std::vector<PairRecord> records;
    std::vector<PoseResultEntry> pose_results;
    double scene_scale = 0;

    for (const PairEntry& entry : index.pairs) {
        records.push_back(load_pair_record(data_dir, entry));
        const PairRecord& record = records.back();
        scene_scale = record.scene_scale;
        if (!maps_dir.empty())
            all_maps.push_back(load_pair_maps(maps_dir, entry.id, record.keypoints.size()));
        if (!results_dir.empty()) {
            std::string path = results_dir + "/" + entry.id + ".json";
            std::ifstream in(path);
            if (!in) fail("IoError", "missing pose result", {{"pair", entry.id}});
            json j = json::parse(in);
            PoseResultEntry result;
            result.overlap = record.overlap;
            result.gt_pose = record.pose_ts;
            if (j.at("status") == "ok") {
                result.estimate.status = PoseStatus::Ok;
                result.estimate.pose = pose_from_json(j.at("pose"));
                result.estimate.inlier_count = j.at("inlier_count");
                result.estimate.final_cost = j.at("final_cost");
            }
            pose_results.push_back(std::move(result));
        }
    }

    std::vector<EvalSample> samples;
    for (size_t p = 0; p < all_maps.size(); ++p)
        for (size_t i = 0; i < all_maps[p].size(); ++i)
            samples.push_back({&all_maps[p][i], records[p].keypoints[i]});

    EvalReport report;
    if (!samples.empty()) {
        report.nre = nre_histogram(samples);
        report.argmax = argmax_error_histogram(samples, seed);
    }
    if (!pose_results.empty()) {
        report.tau_t = tau_t > 0 ? tau_t : 0.05 * scene_scale;
        report.tau_r_deg = tau_r;
        report.precision = pose_precision_curve(pose_results, report.tau_t, report.tau_r_deg);
    }
    write_report_csvs(out_dir, report);
    std::cout << json{{"out", out_dir}, {"samples", samples.size()}, {"poses", pose_results.size()}}
                     .dump()
              << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"correspondence hallucination toolkit"};
    app.require_subcommand(1);

    std::string config_path, data_dir, out_path, ckpt_path, maps_dir, results_dir, pair_id;
    std::string metrics_path;
    uint64_t seed = 0;
    double gamma = 0.5, tau_t = -1, tau_r = 20.0;
    int max_keypoints = 0;
    bool previews = true, timing = false;

    CLI::App* synth = app.add_subcommand("synth-gen", "generate a synthetic dataset");
    synth->add_option("--config", config_path, "dataset config JSON");
    synth->add_option("--seed", seed, "RNG seed");
    synth->add_option("--out", out_path, "output dataset directory")->required();

    CLI::App* train_cmd = app.add_subcommand("train", "train the network");
    train_cmd->add_option("--config", config_path, "train config JSON");
    train_cmd->add_option("--data", data_dir, "dataset directory")->required();
    train_cmd->add_option("--out", out_path, "output checkpoint path")->required();
    train_cmd->add_option("--metrics", metrics_path, "metrics CSV path");
    auto* gamma_opt = train_cmd->add_option("--gamma", gamma, "padding ratio override");
    auto* seed_opt = train_cmd->add_option("--seed", seed, "seed override");

    CLI::App* infer = app.add_subcommand("infer", "write correspondence maps");
    infer->add_option("--ckpt", ckpt_path, "checkpoint path")->required();
    infer->add_option("--data", data_dir, "dataset directory")->required();
    infer->add_option("--out", out_path, "output maps directory")->required();
    infer->add_option("--pair", pair_id, "restrict to one pair id");
    infer->add_option("--max-keypoints", max_keypoints, "cap keypoints per pair (0 = all)");
    infer->add_flag("--previews,!--no-previews", previews,
                    "write PGM previews next to the maps (default on)");

    CLI::App* pose_cmd = app.add_subcommand("pose", "estimate poses from maps");
    pose_cmd->add_option("--maps", maps_dir, "maps directory")->required();
    pose_cmd->add_option("--data", data_dir, "dataset directory")->required();
    pose_cmd->add_option("--out", out_path, "output results directory")->required();
    pose_cmd->add_option("--pair", pair_id, "restrict to one pair id");
    pose_cmd->add_option("--seed", seed, "RNG seed");
    pose_cmd->add_flag("--timing", timing, "include wall_ms in result JSON");

    CLI::App* report_cmd = app.add_subcommand("report", "write evaluation CSVs");
    report_cmd->add_option("--data", data_dir, "dataset directory")->required();
    report_cmd->add_option("--maps", maps_dir, "maps directory");
    report_cmd->add_option("--results", results_dir, "pose results directory");
    report_cmd->add_option("--out", out_path, "output CSV directory")->required();
    report_cmd->add_option("--seed", seed, "RNG seed");
    report_cmd->add_option("--tau-t", tau_t, "translation threshold (scene units)");
    report_cmd->add_option("--tau-r", tau_r, "rotation threshold (degrees)");

    CLI11_PARSE(app, argc, argv);

    try {
        if (synth->parsed()) return run_synth_gen(config_path, seed, out_path);
        if (train_cmd->parsed())
            return run_train(config_path, data_dir, out_path, metrics_path, gamma,
                             gamma_opt->count() > 0, seed, seed_opt->count() > 0);
        if (infer->parsed())
            return run_infer(ckpt_path, data_dir, out_path, pair_id, max_keypoints, previews);
        if (pose_cmd->parsed()) return run_pose(maps_dir, data_dir, out_path, pair_id, seed, timing);
        if (report_cmd->parsed())
            return run_report(data_dir, maps_dir, results_dir, out_path, seed, tau_t, tau_r);
    } catch (const CliFailure& failure) {
        std::cout << json{{"code", failure.code},
                          {"message", failure.message},
                          {"context", failure.context}}
                         .dump()
                  << "\n";
        return 1;
    } catch (const Error& error) {
        std::cout << json{{"code", error_code_name(error.code())},
                          {"message", error.what()},
                          {"context", json::object()}}
                         .dump()
                  << "\n";
        return 1;
    } catch (const std::exception& error) {
        std::cout << json{{"code", "Unknown"}, {"message", error.what()}, {"context", json::object()}}
                         .dump()
                  << "\n";
        return 1;
    }
    return 0;
}
