#pragma once

#include <vector>

#include "corrhal/corrmap.hpp"
#include "corrhal/geometry.hpp"
#include "corrhal/synth.hpp"

namespace corrhal::testing {

inline RigidPose random_pose(Rng& rng, double max_angle = 1.0, double max_trans = 2.0) {
    Vec3 axis(rng.normal(), rng.normal(), rng.normal());
    while (axis.norm() < 1e-9) axis = Vec3(rng.normal(), rng.normal(), rng.normal());
    RigidPose pose;
    pose.rotation = exp_so3(axis.normalized() * rng.uniform(0.0, max_angle));
    pose.translation =
        Vec3(rng.uniform(-max_trans, max_trans), rng.uniform(-max_trans, max_trans),
             rng.uniform(-max_trans, max_trans));
    return pose;
}

inline Mat3 rot_z(double angle_rad) { return exp_so3(Vec3(0, 0, angle_rad)); }

/// Rotation angle between two poses without the acos cancellation floor
/// (~1e-6 deg); needed when asserting sub-microdegree accuracy.
inline double precise_rot_error_deg(const RigidPose& a, const RigidPose& b) {
    double frob = (a.rotation - b.rotation).norm();
    double s = std::min(1.0, frob / (2.0 * std::sqrt(2.0)));
    return 2.0 * std::asin(s) * 180.0 / M_PI;
}

inline CameraModel toy_camera(int width = 128, int height = 96, double focal = 100.0) {
    CameraModel cam;
    cam.fx = focal;
    cam.fy = focal;
    cam.cx = width / 2.0;
    cam.cy = height / 2.0;
    cam.width = width;
    cam.height = height;
    return cam;
}

/// Random normalized map via a softmax of N(0, logit_std) logits.
inline CorrespondenceMap random_map(const MapFrame& frame, Rng& rng, double logit_std = 1.0) {
    Grid<double> logits(frame.map_w, frame.map_h);
    for (double& v : logits.data) v = rng.normal() * logit_std;
    return CorrespondenceMap::normalize(logits, frame);
}

/// Peaked oracle map: an isotropic Gaussian (in cell units) around a
/// ground-truth map coordinate, evaluated at cell centers.
inline CorrespondenceMap gaussian_map(const Vec2& center_map, const MapFrame& frame,
                                      double sigma_cells) {
    Grid<double> values(frame.map_w, frame.map_h);
    double inv = 1.0 / (2.0 * sigma_cells * sigma_cells);
    for (int r = 0; r < frame.map_h; ++r) {
        for (int c = 0; c < frame.map_w; ++c) {
            double dx = (c + 0.5) - center_map.x();
            double dy = (r + 0.5) - center_map.y();
            values.at(c, r) = std::exp(-(dx * dx + dy * dy) * inv);
        }
    }
    return CorrespondenceMap::from_probabilities(std::move(values), frame);
}

/// Synthetic absolute-pose minimal problem with exact ground truth.
struct MinimalProblem {
    std::array<Vec3, 3> points;
    std::array<Vec3, 3> bearings;
    RigidPose gt;
};

inline MinimalProblem random_minimal_problem(Rng& rng) {
    MinimalProblem problem;
    problem.gt = random_pose(rng, 0.8, 1.0);
    problem.gt.translation.z() = std::abs(problem.gt.translation.z());
    for (int i = 0; i < 3; ++i) {
        while (true) {
            Vec3 p(rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(2.5, 7.0));
            Vec3 world = pose_inverse(problem.gt).apply(p);
            Vec3 cam = problem.gt.apply(world);
            if (cam.z() > 0.5) {
                problem.points[static_cast<size_t>(i)] = world;
                problem.bearings[static_cast<size_t>(i)] = cam.normalized();
                break;
            }
        }
    }
    return problem;
}

/// Oracle-map pose scenario: a synthetic pair plus sharply peaked maps at
/// the true correspondents.
struct OracleScenario {
    CameraModel cam;
    RigidPose pose_ts;
    std::vector<Keypoint> keypoints;
    std::vector<CorrespondenceMap> maps;
    MapFrame frame;
    double depth_range = 3.5;
};

inline OracleScenario make_oracle_scenario(Rng& rng, int stride = 1, double gamma = 0.25,
                                           double sigma_cells = 0.5) {
    OracleScenario scenario;
    scenario.cam = toy_camera(64, 48, 55.0);
    scenario.frame = MapFrame::for_camera(scenario.cam, stride, gamma);

    // Depth-rich scenes: without parallax diversity the pose objective has a
    // nearly flat rotation/translation-compensation valley.
    SceneConfig scene_config;
    scene_config.n_layers = 6;
    scene_config.depth_min = 2.0;
    Scene scene = generate_scene(rng.next_u64(), scene_config);
    for (size_t i = 1; i < scene.layers.size(); ++i) {
        scene.layers[i].half_u *= 1.8;
        scene.layers[i].half_v *= 1.8;
    }
    RigidPose pose_s = random_pose(rng, 0.1, 0.2);
    RigidPose delta = random_pose(rng, 0.25, 0.5);
    RigidPose pose_t = pose_compose(delta, pose_s);
    RenderedView source = render_view(scene, scenario.cam, pose_s);
    RenderedView target = render_view(scene, scenario.cam, pose_t);
    ViewPair pair{source, target};
    scenario.pose_ts = pair.pose_ts();
    scenario.depth_range = scene_config.depth_range();

    // Keypoints at random continuous positions: a regular grid would map to a
    // near-lattice in the target and the per-cell quantization biases of all
    // maps would align instead of averaging out.
    for (int attempt = 0; attempt < 400 && scenario.keypoints.size() < 160; ++attempt) {
        Vec2 p(rng.uniform(1.0, scenario.cam.width - 1.0),
               rng.uniform(1.0, scenario.cam.height - 1.0));
        int px = static_cast<int>(p.x());
        int py = static_cast<int>(p.y());
        int xm = std::max(px - 1, 0), xp = std::min(px + 1, source.depth.width - 1);
        int ym = std::max(py - 1, 0), yp = std::min(py + 1, source.depth.height - 1);
        if (!source.depth_valid(px, py) || !source.depth_valid(xm, py) ||
            !source.depth_valid(xp, py) || !source.depth_valid(px, ym) ||
            !source.depth_valid(px, yp))
            continue;
        double gx = (source.depth.at(xp, py) - source.depth.at(xm, py)) / (xp - xm);
        double gy = (source.depth.at(px, yp) - source.depth.at(px, ym)) / (yp - ym);
        if (std::max(std::abs(gx), std::abs(gy)) > 0.3) continue;
        double depth = depth_at_bilinear(source, p);

        Vec3 point_t = scenario.pose_ts.apply(backproject(p, depth, scenario.cam));
        if (!(point_t.z() > kMinDepth)) continue;
        Vec2 norm = project(point_t);
        Vec2 gt{scenario.cam.fx * norm.x() + scenario.cam.cx,
                scenario.cam.fy * norm.y() + scenario.cam.cy};
        Vec2 gt_map = scenario.frame.image_to_map(gt);
        if (!scenario.frame.in_map(gt_map)) continue;
        scenario.keypoints.push_back({p, depth});
        scenario.maps.push_back(gaussian_map(gt_map, scenario.frame, sigma_cells));
    }
    return scenario;
}

/// Oracle scenario whose ground-truth correspondents sit exactly on map cell
/// centers: keypoints are back-derived from target cell centers, so the
/// bilinear-of-log objective has its minimum exactly at the true pose.
inline OracleScenario make_aligned_scenario(Rng& rng, int stride, double gamma,
                                            double sigma_cells) {
    OracleScenario scenario;
    scenario.cam = toy_camera(64, 48, 55.0);
    scenario.frame = MapFrame::for_camera(scenario.cam, stride, gamma);
    scenario.pose_ts = random_pose(rng, 0.25, 0.5);
    RigidPose pose_st = pose_inverse(scenario.pose_ts);

    int base_w = scenario.frame.map_w - 2 * scenario.frame.pad_x;
    int base_h = scenario.frame.map_h - 2 * scenario.frame.pad_y;
    for (int r = 0; r < base_h; ++r) {
        for (int c = 0; c < base_w; ++c) {
            Vec2 q{scenario.frame.pad_x + c + 0.5, scenario.frame.pad_y + r + 0.5};
            Vec2 target_px = scenario.frame.map_to_image(q);
            double z = rng.uniform(3.0, 6.0);
            Vec3 point_t = z * scenario.cam.ray(target_px);
            Vec3 point_s = pose_st.apply(point_t);
            if (!(point_s.z() > 0.5)) continue;
            Vec2 norm = project(point_s);
            Vec2 p{scenario.cam.fx * norm.x() + scenario.cam.cx,
                   scenario.cam.fy * norm.y() + scenario.cam.cy};
            if (p.x() < 1 || p.x() > scenario.cam.width - 1 || p.y() < 1 ||
                p.y() > scenario.cam.height - 1)
                continue;
            scenario.keypoints.push_back({p, point_s.z()});
            scenario.maps.push_back(gaussian_map(q, scenario.frame, sigma_cells));
        }
    }
    return scenario;
}

/// Brute-force z-buffer visibility oracle: the correspondent is visible iff
/// the target sees the same surface at a consistent depth.
inline bool zbuffer_visible(const ViewPair& pair, const Vec2& p_s, double d_s, double depth_tol) {
    RigidPose pose_ts = pair.pose_ts();
    Vec3 point_t = pose_ts.apply(backproject(p_s, d_s, pair.source.camera));
    if (!(point_t.z() > kMinDepth)) return false;
    Vec2 norm = project(point_t);
    Vec2 gt{pair.target.camera.fx * norm.x() + pair.target.camera.cx,
            pair.target.camera.fy * norm.y() + pair.target.camera.cy};
    if (!pair.target.camera.contains(gt)) return false;
    int px = static_cast<int>(gt.x());
    int py = static_cast<int>(gt.y());
    if (!pair.target.surface.contains(px, py) || pair.target.surface.at(px, py) < 0) return false;
    int sx = static_cast<int>(p_s.x());
    int sy = static_cast<int>(p_s.y());
    if (pair.target.surface.at(px, py) != pair.source.surface.at(sx, sy)) return false;
    return std::abs(pair.target.depth.at(px, py) - point_t.z()) <= depth_tol;
}

}  // namespace corrhal::testing
