#include "corrhal/dataset.hpp"

#include <filesystem>
#include <fstream>

#include "corrhal/json_io.hpp"

namespace corrhal {

namespace fs = std::filesystem;
using nlohmann::json;

CameraModel DatasetConfig::camera() const {
    CameraModel cam;
    cam.fx = focal;
    cam.fy = focal;
    cam.cx = image_width / 2.0;
    cam.cy = image_height / 2.0;
    cam.width = image_width;
    cam.height = image_height;
    return cam;
}

LabelingConfig DatasetConfig::labeling() const {
    LabelingConfig cfg;
    cfg.depth_tol = depth_tol();
    cfg.cyclic_px = cyclic_px;
    return cfg;
}

// ---- JSON conversions ----

json camera_to_json(const CameraModel& cam) {
    return json{{"fx", cam.fx}, {"fy", cam.fy}, {"cx", cam.cx},
                {"cy", cam.cy}, {"width", cam.width}, {"height", cam.height}};
}

CameraModel camera_from_json(const json& j) {
    CameraModel cam;
    cam.fx = j.at("fx");
    cam.fy = j.at("fy");
    cam.cx = j.at("cx");
    cam.cy = j.at("cy");
    cam.width = j.at("width");
    cam.height = j.at("height");
    cam.validate();
    return cam;
}

json pose_to_json(const RigidPose& pose) {
    // Row-major rotation entries.
    std::vector<double> r(9);
    for (int i = 0; i < 3; ++i)
        for (int k = 0; k < 3; ++k) r[static_cast<size_t>(i * 3 + k)] = pose.rotation(i, k);
    return json{{"rotation", r},
                {"translation", {pose.translation.x(), pose.translation.y(), pose.translation.z()}}};
}

RigidPose pose_from_json(const json& j) {
    RigidPose pose;
    const auto& r = j.at("rotation");
    if (r.size() != 9) raise(ErrorCode::BadFormat, "rotation must have 9 entries");
    for (int i = 0; i < 3; ++i)
        for (int k = 0; k < 3; ++k) pose.rotation(i, k) = r.at(static_cast<size_t>(i * 3 + k));
    const auto& t = j.at("translation");
    if (t.size() != 3) raise(ErrorCode::BadFormat, "translation must have 3 entries");
    for (int i = 0; i < 3; ++i) pose.translation(i) = t.at(static_cast<size_t>(i));
    pose.validate();
    return pose;
}

json keypoint_to_json(const LabeledKeypoint& kp) {
    return json{{"p", {kp.p.x(), kp.p.y()}},
                {"depth", kp.depth},
                {"gt", {kp.gt.x(), kp.gt.y()}},
                {"label", label_name(kp.label)}};
}

LabeledKeypoint keypoint_from_json(const json& j) {
    LabeledKeypoint kp;
    kp.p = Vec2(j.at("p").at(0), j.at("p").at(1));
    kp.depth = j.at("depth");
    kp.gt = Vec2(j.at("gt").at(0), j.at("gt").at(1));
    kp.label = label_from_name(j.at("label"));
    return kp;
}

json dataset_config_to_json(const DatasetConfig& c) {
    return json{{"n_pairs", c.n_pairs},
                {"image_width", c.image_width},
                {"image_height", c.image_height},
                {"focal", c.focal},
                {"scene",
                 {{"n_layers", c.scene.n_layers},
                  {"depth_min", c.scene.depth_min},
                  {"depth_max", c.scene.depth_max},
                  {"texture_octaves", c.scene.texture_octaves}}},
                {"keypoint_cell", c.keypoint_cell},
                {"depth_grad_max", c.depth_grad_max},
                {"cyclic_px", c.cyclic_px},
                {"overlap_min", c.overlap_min},
                {"overlap_max", c.overlap_max},
                {"overlap_bins", c.overlap_bins},
                {"max_attempts_per_pair", c.max_attempts_per_pair},
                {"max_rot_deg", c.max_rot_deg},
                {"max_trans", c.max_trans}};
}

DatasetConfig dataset_config_from_json(const json& j) {
    DatasetConfig c;
    c.n_pairs = j.value("n_pairs", c.n_pairs);
    c.image_width = j.value("image_width", c.image_width);
    c.image_height = j.value("image_height", c.image_height);
    c.focal = j.value("focal", c.focal);
    if (j.contains("scene")) {
        const auto& s = j.at("scene");
        c.scene.n_layers = s.value("n_layers", c.scene.n_layers);
        c.scene.depth_min = s.value("depth_min", c.scene.depth_min);
        c.scene.depth_max = s.value("depth_max", c.scene.depth_max);
        c.scene.texture_octaves = s.value("texture_octaves", c.scene.texture_octaves);
    }
    c.keypoint_cell = j.value("keypoint_cell", c.keypoint_cell);
    c.depth_grad_max = j.value("depth_grad_max", c.depth_grad_max);
    c.cyclic_px = j.value("cyclic_px", c.cyclic_px);
    c.overlap_min = j.value("overlap_min", c.overlap_min);
    c.overlap_max = j.value("overlap_max", c.overlap_max);
    c.overlap_bins = j.value("overlap_bins", c.overlap_bins);
    c.max_attempts_per_pair = j.value("max_attempts_per_pair", c.max_attempts_per_pair);
    c.max_rot_deg = j.value("max_rot_deg", c.max_rot_deg);
    c.max_trans = j.value("max_trans", c.max_trans);
    return c;
}

DatasetConfig dataset_config_from_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) raise(ErrorCode::IoError, "cannot open config " + path);
    json j = json::parse(in, nullptr, true, true);
    return dataset_config_from_json(j);
}

// ---- pair sampling ----

namespace {

RigidPose sample_source_pose(Rng& rng) {
    RigidPose pose;
    Vec3 axis(rng.normal(), rng.normal(), rng.normal());
    double angle = rng.uniform(0.0, 0.12);
    if (axis.norm() > 1e-9) pose.rotation = exp_so3(axis.normalized() * angle);
    // world -> camera translation; the camera center stays near the origin.
    pose.translation = Vec3(rng.uniform(-0.25, 0.25), rng.uniform(-0.25, 0.25),
                            rng.uniform(-0.2, 0.2));
    return pose;
}

RigidPose sample_target_pose(Rng& rng, const RigidPose& source, double difficulty,
                             const DatasetConfig& config) {
    Vec3 axis(rng.normal(), rng.normal(), rng.normal());
    if (axis.norm() < 1e-9) axis = Vec3::UnitY();
    double angle = difficulty * config.max_rot_deg * M_PI / 180.0;
    Vec3 trans_dir(rng.normal(), rng.normal(), 0.4 * rng.normal());
    if (trans_dir.norm() < 1e-9) trans_dir = Vec3::UnitX();
    RigidPose delta;
    delta.rotation = exp_so3(axis.normalized() * angle);
    delta.translation = trans_dir.normalized() * (difficulty * config.max_trans);
    return pose_compose(delta, source);
}

}  // namespace

GeneratedPair generate_pair(Rng& rng, const DatasetConfig& config, double overlap_lo,
                            double overlap_hi) {
    CameraModel camera = config.camera();
    LabelingConfig labeling = config.labeling();

    GeneratedPair best;
    double best_gap = std::numeric_limits<double>::infinity();

    for (int attempt = 0; attempt < config.max_attempts_per_pair; ++attempt) {
        uint64_t scene_seed = rng.next_u64();
        Scene scene = generate_scene(scene_seed, config.scene);
        RigidPose pose_s = sample_source_pose(rng);
        // Low difficulty keeps views nearly aligned (high overlap).
        double target_mid = 1.0 - 0.5 * (overlap_lo + overlap_hi);
        double difficulty = std::clamp(target_mid + rng.uniform(-0.35, 0.35), 0.02, 1.0);
        RigidPose pose_t = sample_target_pose(rng, pose_s, difficulty, config);

        GeneratedPair candidate;
        try {
            candidate.source = render_view(scene, camera, pose_s);
            candidate.target = render_view(scene, camera, pose_t);
        } catch (const Error&) {
            continue;  // extreme pose missed the background; resample
        }
        ViewPair pair{candidate.source, candidate.target};
        double overlap = estimate_overlap(pair, config.keypoint_cell, config.depth_grad_max,
                                          labeling);

        std::vector<Keypoint> kps =
            sample_keypoints(candidate.source, config.keypoint_cell, config.depth_grad_max);
        LabelingResult labeled = label_keypoints(pair, kps, labeling);
        if (labeled.keypoints.size() < 8) continue;

        candidate.record.scene_seed = scene_seed;
        candidate.record.cam_s = camera;
        candidate.record.cam_t = camera;
        candidate.record.pose_s = pose_s;
        candidate.record.pose_t = pose_t;
        candidate.record.pose_ts = pair.pose_ts();
        candidate.record.overlap = overlap;
        candidate.record.scene_scale = config.scene_scale();
        candidate.record.dropped_behind = labeled.dropped_behind;
        candidate.record.keypoints = std::move(labeled.keypoints);

        if (overlap >= overlap_lo && overlap <= overlap_hi) return candidate;
        double gap = overlap < overlap_lo ? overlap_lo - overlap : overlap - overlap_hi;
        if (gap < best_gap) {
            best_gap = gap;
            best = std::move(candidate);
        }
    }
    if (!std::isfinite(best_gap))
        raise(ErrorCode::InvalidConfig, "pair sampling produced no usable pair");
    return best;
}

std::vector<GeneratedPair> generate_pairs(uint64_t seed, const DatasetConfig& config,
                                          const std::function<void(int, int)>& progress) {
    if (config.n_pairs < 1) raise(ErrorCode::InvalidConfig, "n_pairs must be >= 1");
    if (config.overlap_bins < 1) raise(ErrorCode::InvalidConfig, "overlap_bins must be >= 1");
    Rng rng(hash_u64(seed ^ 0x8f2d3c4b5a697887ULL));
    std::vector<GeneratedPair> pairs;
    pairs.reserve(static_cast<size_t>(config.n_pairs));
    double bin_width = (config.overlap_max - config.overlap_min) / config.overlap_bins;
    for (int i = 0; i < config.n_pairs; ++i) {
        int bin = i % config.overlap_bins;
        double lo = config.overlap_min + bin * bin_width;
        double hi = lo + bin_width;
        GeneratedPair pair = generate_pair(rng, config, lo, hi);
        pair.record.overlap_bin = bin;
        char id[32];
        std::snprintf(id, sizeof(id), "pair_%05d", i);
        pair.record.id = id;
        pairs.push_back(std::move(pair));
        if (progress) progress(i + 1, config.n_pairs);
    }
    return pairs;
}

// ---- disk IO ----

void write_pair(const std::string& pair_dir, const GeneratedPair& pair) {
    fs::create_directories(pair_dir);
    json j;
    j["id"] = pair.record.id;
    j["scene_seed"] = pair.record.scene_seed;
    j["overlap"] = pair.record.overlap;
    j["overlap_bin"] = pair.record.overlap_bin;
    j["scene_scale"] = pair.record.scene_scale;
    j["dropped_behind"] = pair.record.dropped_behind;
    j["source"] = {{"camera", camera_to_json(pair.record.cam_s)},
                   {"pose", pose_to_json(pair.record.pose_s)},
                   {"image", "source_image.grid"},
                   {"depth", "source_depth.grid"}};
    j["target"] = {{"camera", camera_to_json(pair.record.cam_t)},
                   {"pose", pose_to_json(pair.record.pose_t)},
                   {"image", "target_image.grid"},
                   {"depth", "target_depth.grid"}};
    j["pose_ts"] = pose_to_json(pair.record.pose_ts);
    json kps = json::array();
    for (const LabeledKeypoint& kp : pair.record.keypoints) kps.push_back(keypoint_to_json(kp));
    j["keypoints"] = std::move(kps);

    std::ofstream out(pair_dir + "/pair.json");
    if (!out) raise(ErrorCode::IoError, "cannot write " + pair_dir + "/pair.json");
    out << j.dump(1) << "\n";

    write_grid(pair_dir + "/source_image.grid", pair.source.image);
    write_grid(pair_dir + "/source_depth.grid", pair.source.depth);
    write_grid(pair_dir + "/target_image.grid", pair.target.image);
    write_grid(pair_dir + "/target_depth.grid", pair.target.depth);
}

void write_dataset(const std::string& dir, uint64_t seed, const DatasetConfig& config,
                   const std::function<void(int, int)>& progress) {
    fs::create_directories(dir);
    std::vector<GeneratedPair> pairs = generate_pairs(seed, config, progress);
    json manifest;
    manifest["seed"] = seed;
    manifest["config"] = dataset_config_to_json(config);
    json entries = json::array();
    for (const GeneratedPair& pair : pairs) {
        write_pair(dir + "/" + pair.record.id, pair);
        entries.push_back(json{{"id", pair.record.id},
                               {"dir", pair.record.id},
                               {"overlap", pair.record.overlap},
                               {"bin", pair.record.overlap_bin}});
    }
    manifest["pairs"] = std::move(entries);
    std::ofstream out(dir + "/manifest.json");
    if (!out) raise(ErrorCode::IoError, "cannot write manifest in " + dir);
    out << manifest.dump(1) << "\n";
}

DatasetIndex read_manifest(const std::string& dir) {
    std::ifstream in(dir + "/manifest.json");
    if (!in) raise(ErrorCode::IoError, "cannot open " + dir + "/manifest.json");
    json j = json::parse(in);
    DatasetIndex index;
    index.seed = j.at("seed");
    index.config = dataset_config_from_json(j.at("config"));
    for (const auto& e : j.at("pairs"))
        index.pairs.push_back({e.at("id"), e.at("dir"), e.at("overlap"), e.value("bin", 0)});
    return index;
}

namespace {

PairRecord record_from_json(const json& j) {
    PairRecord rec;
    rec.id = j.at("id");
    rec.scene_seed = j.at("scene_seed");
    rec.overlap = j.at("overlap");
    rec.overlap_bin = j.value("overlap_bin", 0);
    rec.scene_scale = j.at("scene_scale");
    rec.dropped_behind = j.value("dropped_behind", 0);
    rec.cam_s = camera_from_json(j.at("source").at("camera"));
    rec.cam_t = camera_from_json(j.at("target").at("camera"));
    rec.pose_s = pose_from_json(j.at("source").at("pose"));
    rec.pose_t = pose_from_json(j.at("target").at("pose"));
    rec.pose_ts = pose_from_json(j.at("pose_ts"));
    for (const auto& kj : j.at("keypoints")) rec.keypoints.push_back(keypoint_from_json(kj));
    return rec;
}

}  // namespace

PairRecord load_pair_record(const std::string& dataset_dir, const PairEntry& entry) {
    std::string pair_dir = dataset_dir + "/" + entry.dir;
    std::ifstream in(pair_dir + "/pair.json");
    if (!in) raise(ErrorCode::IoError, "cannot open " + pair_dir + "/pair.json");
    return record_from_json(json::parse(in));
}

LoadedPair load_pair(const std::string& dataset_dir, const PairEntry& entry) {
    std::string pair_dir = dataset_dir + "/" + entry.dir;
    LoadedPair pair;
    pair.record = load_pair_record(dataset_dir, entry);
    pair.source_image = read_grid(pair_dir + "/source_image.grid");
    pair.source_depth = read_grid(pair_dir + "/source_depth.grid");
    pair.target_image = read_grid(pair_dir + "/target_image.grid");
    pair.target_depth = read_grid(pair_dir + "/target_depth.grid");
    return pair;
}

}  // namespace corrhal
