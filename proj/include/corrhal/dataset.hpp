#pragma once

#include <functional>
#include <string>
#include <vector>

#include "corrhal/synth.hpp"

namespace corrhal {

struct DatasetConfig {
    int n_pairs = 64;
    int image_width = 64;
    int image_height = 48;
    double focal = 55.0;
    SceneConfig scene;
    int keypoint_cell = 4;
    double depth_grad_max = 0.3;
    double cyclic_px = 1.0;
    double overlap_min = 0.02;
    double overlap_max = 0.80;
    int overlap_bins = 8;
    int max_attempts_per_pair = 60;
    double max_rot_deg = 40.0;
    double max_trans = 2.2;

    CameraModel camera() const;
    LabelingConfig labeling() const;
    /// Depth tolerance: 1% of the scene depth range.
    double depth_tol() const { return 0.01 * scene.depth_range(); }
    /// Scene scale used by pose thresholds: the scene depth range.
    double scene_scale() const { return scene.depth_range(); }
};

struct PairRecord {
    std::string id;
    uint64_t scene_seed = 0;
    CameraModel cam_s, cam_t;
    RigidPose pose_s, pose_t;  // world -> camera
    RigidPose pose_ts;         // source camera frame -> target camera frame
    double overlap = 0;
    int overlap_bin = 0;
    double scene_scale = 0;
    int dropped_behind = 0;
    std::vector<LabeledKeypoint> keypoints;
};

struct GeneratedPair {
    PairRecord record;
    RenderedView source;
    RenderedView target;
};

/// Samples a scene and a view pair whose overlap falls in
/// [overlap_lo, overlap_hi]; retries up to max_attempts_per_pair times and
/// keeps the closest attempt if the window is never hit.
GeneratedPair generate_pair(Rng& rng, const DatasetConfig& config, double overlap_lo,
                            double overlap_hi);

/// Generates n_pairs pairs, rotating through uniform overlap bins over
/// [overlap_min, overlap_max].
std::vector<GeneratedPair> generate_pairs(uint64_t seed, const DatasetConfig& config,
                                          const std::function<void(int, int)>& progress = {});

/// On-disk layout: <dir>/manifest.json plus one subdirectory per pair with
/// pair.json and the four image/depth grids.
void write_dataset(const std::string& dir, uint64_t seed, const DatasetConfig& config,
                   const std::function<void(int, int)>& progress = {});
void write_pair(const std::string& pair_dir, const GeneratedPair& pair);

struct PairEntry {
    std::string id;
    std::string dir;  // relative to the dataset root
    double overlap = 0;
    int overlap_bin = 0;
};

struct DatasetIndex {
    uint64_t seed = 0;
    DatasetConfig config;
    std::vector<PairEntry> pairs;
};

DatasetIndex read_manifest(const std::string& dir);

struct LoadedPair {
    PairRecord record;
    Grid<double> source_image, source_depth;
    Grid<double> target_image, target_depth;
};

LoadedPair load_pair(const std::string& dataset_dir, const PairEntry& entry);
PairRecord load_pair_record(const std::string& dataset_dir, const PairEntry& entry);

DatasetConfig dataset_config_from_json_file(const std::string& path);

}  // namespace corrhal
