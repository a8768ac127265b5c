#include "corrhal/synth.hpp"

#include <algorithm>
#include <cmath>

namespace corrhal {

const char* label_name(KeypointLabel label) {
    switch (label) {
        case KeypointLabel::Identified: return "identified";
        case KeypointLabel::Inpainted: return "inpainted";
        case KeypointLabel::Outpainted: return "outpainted";
    }
    return "unknown";
}

KeypointLabel label_from_name(const std::string& name) {
    if (name == "identified") return KeypointLabel::Identified;
    if (name == "inpainted") return KeypointLabel::Inpainted;
    if (name == "outpainted") return KeypointLabel::Outpainted;
    raise(ErrorCode::BadFormat, "unknown keypoint label: " + name);
}

namespace {

double lattice_value(int64_t ix, int64_t iy, uint64_t seed) {
    uint64_t h = hash_u64(static_cast<uint64_t>(ix) * 0x9e3779b97f4a7c15ULL ^
                          static_cast<uint64_t>(iy) * 0xc2b2ae3d27d4eb4fULL ^ seed);
    return static_cast<double>(h >> 11) * 0x1.0p-53;
}

double smooth(double t) { return t * t * (3.0 - 2.0 * t); }

double value_noise(double x, double y, uint64_t seed) {
    double fx = std::floor(x), fy = std::floor(y);
    auto ix = static_cast<int64_t>(fx);
    auto iy = static_cast<int64_t>(fy);
    double tx = smooth(x - fx), ty = smooth(y - fy);
    double v00 = lattice_value(ix, iy, seed);
    double v10 = lattice_value(ix + 1, iy, seed);
    double v01 = lattice_value(ix, iy + 1, seed);
    double v11 = lattice_value(ix + 1, iy + 1, seed);
    double top = v00 + tx * (v10 - v00);
    double bottom = v01 + tx * (v11 - v01);
    return top + ty * (bottom - top);
}

Mat3 small_tilt(double rx, double ry) {
    return exp_so3(Vec3(rx, ry, 0.0));
}

}  // namespace

double fbm_value(double u, double v, uint64_t seed, int octaves) {
    double sum = 0.0, amp = 1.0, total = 0.0, freq = 1.0;
    for (int o = 0; o < octaves; ++o) {
        sum += amp * value_noise(u * freq, v * freq, hash_u64(seed + static_cast<uint64_t>(o)));
        total += amp;
        amp *= 0.5;
        freq *= 2.0;
    }
    return sum / total;
}

Scene generate_scene(uint64_t seed, const SceneConfig& config) {
    if (config.n_layers < 1) raise(ErrorCode::InvalidConfig, "scene needs at least one layer");
    if (!(config.depth_min > 0) || !(config.depth_max > config.depth_min))
        raise(ErrorCode::InvalidConfig, "scene depth range is empty");
    if (config.texture_octaves < 1) raise(ErrorCode::InvalidConfig, "texture needs >= 1 octave");

    Rng rng(hash_u64(seed ^ 0x5ce7e5c3a1b2d4e6ULL));
    Scene scene;
    scene.seed = seed;
    scene.texture_octaves = config.texture_octaves;

    // Background: a near-fronto-parallel plane with a huge extent so every
    // sampled frustum is covered.
    PlaneLayer bg;
    Mat3 tilt = small_tilt(rng.uniform(-0.10, 0.10), rng.uniform(-0.10, 0.10));
    bg.origin = Vec3(0, 0, config.depth_max);
    bg.axis_u = tilt * Vec3::UnitX();
    bg.axis_v = tilt * Vec3::UnitY();
    bg.half_u = 300.0;
    bg.half_v = 300.0;
    bg.texture_seed = rng.next_u64();
    bg.texture_scale = rng.uniform(1.6, 2.6);
    bg.is_background = true;
    scene.layers.push_back(bg);

    // Occluders live strictly in front of the background so depth orderings
    // never cross inside a frustum.
    int n_occluders = config.n_layers - 1;
    double depth_hi = std::max(config.depth_min + 0.1, config.depth_max - 1.2);
    for (int i = 0; i < n_occluders; ++i) {
        PlaneLayer occ;
        double z = rng.uniform(config.depth_min, depth_hi);
        double angle_x = rng.uniform(-0.35, 0.35);
        double angle_y = rng.uniform(-0.28, 0.28);
        occ.origin = Vec3(std::tan(angle_x) * z, std::tan(angle_y) * z, z);
        Mat3 occ_tilt = small_tilt(rng.uniform(-0.25, 0.25), rng.uniform(-0.25, 0.25));
        occ.axis_u = occ_tilt * Vec3::UnitX();
        occ.axis_v = occ_tilt * Vec3::UnitY();
        occ.half_u = rng.uniform(0.3, 0.95) * z / config.depth_max;
        occ.half_v = rng.uniform(0.3, 0.95) * z / config.depth_max;
        occ.texture_seed = rng.next_u64();
        occ.texture_scale = rng.uniform(2.5, 4.5);
        scene.layers.push_back(occ);
    }
    return scene;
}

RenderedView render_view(const Scene& scene, const CameraModel& camera, const RigidPose& pose) {
    camera.validate();
    RenderedView view;
    view.camera = camera;
    view.pose = pose;
    view.image = Grid<double>(camera.width, camera.height, 0.0);
    view.depth = Grid<double>(camera.width, camera.height, 0.0);
    view.surface = Grid<int16_t>(camera.width, camera.height, -1);

    RigidPose cam_to_world = pose_inverse(pose);
    Vec3 center = cam_to_world.translation;

    for (int y = 0; y < camera.height; ++y) {
        for (int x = 0; x < camera.width; ++x) {
            Vec3 dir_cam = camera.ray({x + 0.5, y + 0.5});
            Vec3 dir_world = cam_to_world.rotation * dir_cam;
            double best_t = std::numeric_limits<double>::infinity();
            int best_layer = -1;
            double best_u = 0, best_v = 0;
            for (size_t li = 0; li < scene.layers.size(); ++li) {
                const PlaneLayer& layer = scene.layers[li];
                Vec3 n = layer.normal();
                double denom = n.dot(dir_world);
                if (std::abs(denom) < 1e-12) continue;
                double t = n.dot(layer.origin - center) / denom;
                // dir_cam has unit z, so the ray parameter is the camera depth.
                if (t <= kMinDepth || t >= best_t) continue;
                Vec3 hit = center + t * dir_world;
                Vec3 rel = hit - layer.origin;
                double u = layer.axis_u.dot(rel);
                double v = layer.axis_v.dot(rel);
                if (std::abs(u) > layer.half_u || std::abs(v) > layer.half_v) continue;
                best_t = t;
                best_layer = static_cast<int>(li);
                best_u = u;
                best_v = v;
            }
            if (best_layer < 0)
                raise(ErrorCode::UncoveredFrustum, "pixel ray misses every scene layer");
            const PlaneLayer& hit_layer = scene.layers[static_cast<size_t>(best_layer)];
            view.depth.at(x, y) = best_t;
            view.surface.at(x, y) = static_cast<int16_t>(best_layer);
            view.image.at(x, y) = fbm_value(best_u * hit_layer.texture_scale,
                                            best_v * hit_layer.texture_scale,
                                            hit_layer.texture_seed, scene.texture_octaves);
        }
    }
    return view;
}

std::vector<Keypoint> sample_keypoints(const RenderedView& view, int cell, double depth_grad_max) {
    if (cell < 1) raise(ErrorCode::InvalidConfig, "keypoint cell must be >= 1");
    std::vector<Keypoint> out;
    const Grid<double>& depth = view.depth;
    int nx = view.camera.width / cell;
    int ny = view.camera.height / cell;
    for (int gy = 0; gy < ny; ++gy) {
        for (int gx = 0; gx < nx; ++gx) {
            int px = gx * cell + cell / 2;
            int py = gy * cell + cell / 2;
            if (!view.depth_valid(px, py)) continue;
            int xm = std::max(px - 1, 0), xp = std::min(px + 1, depth.width - 1);
            int ym = std::max(py - 1, 0), yp = std::min(py + 1, depth.height - 1);
            if (!view.depth_valid(xm, py) || !view.depth_valid(xp, py) ||
                !view.depth_valid(px, ym) || !view.depth_valid(px, yp))
                continue;
            double gx_d = (depth.at(xp, py) - depth.at(xm, py)) / (xp - xm);
            double gy_d = (depth.at(px, yp) - depth.at(px, ym)) / (yp - ym);
            if (std::max(std::abs(gx_d), std::abs(gy_d)) > depth_grad_max) continue;
            out.push_back({{px + 0.5, py + 0.5}, depth.at(px, py)});
        }
    }
    return out;
}

double depth_at_bilinear(const RenderedView& view, const Vec2& p) {
    const Grid<double>& depth = view.depth;
    double hx = std::clamp(p.x() - 0.5, 0.0, static_cast<double>(depth.width - 1));
    double hy = std::clamp(p.y() - 0.5, 0.0, static_cast<double>(depth.height - 1));
    int x0 = std::min(static_cast<int>(hx), depth.width - 2);
    int y0 = std::min(static_cast<int>(hy), depth.height - 2);
    x0 = std::max(x0, 0);
    y0 = std::max(y0, 0);
    int x1 = std::min(x0 + 1, depth.width - 1);
    int y1 = std::min(y0 + 1, depth.height - 1);
    double fx = hx - x0, fy = hy - y0;
    double top = depth.at(x0, y0) + fx * (depth.at(x1, y0) - depth.at(x0, y0));
    double bottom = depth.at(x0, y1) + fx * (depth.at(x1, y1) - depth.at(x0, y1));
    return top + fy * (bottom - top);
}

LabelingResult label_keypoints(const ViewPair& pair, const std::vector<Keypoint>& keypoints,
                               const LabelingConfig& config) {
    LabelingResult result;
    result.keypoints.reserve(keypoints.size());
    RigidPose pose_ts = pair.pose_ts();
    RigidPose pose_st = pose_inverse(pose_ts);
    const CameraModel& cam_s = pair.source.camera;
    const CameraModel& cam_t = pair.target.camera;

    for (const Keypoint& kp : keypoints) {
        Vec3 point_t = pose_ts.apply(backproject(kp.p, kp.depth, cam_s));
        if (!(point_t.z() > kMinDepth)) {
            ++result.dropped_behind;
            continue;
        }
        Vec2 normalized = project(point_t);
        Vec2 gt{cam_t.fx * normalized.x() + cam_t.cx, cam_t.fy * normalized.y() + cam_t.cy};

        LabeledKeypoint labeled;
        labeled.p = kp.p;
        labeled.depth = kp.depth;
        labeled.gt = gt;

        if (!cam_t.contains(gt)) {
            labeled.label = KeypointLabel::Outpainted;
            result.keypoints.push_back(labeled);
            continue;
        }

        double target_depth = depth_at_bilinear(pair.target, gt);
        bool occluded = target_depth < point_t.z() - config.depth_tol;
        if (!occluded) {
            // Cyclic projection: send the observed target surface point back
            // to the source image; a large round trip means the target sees
            // a different surface here.
            bool cyclic_ok = false;
            Vec3 point_back = pose_st.apply(backproject(gt, target_depth, cam_t));
            if (point_back.z() > kMinDepth) {
                Vec2 norm_back = project(point_back);
                Vec2 p_back{cam_s.fx * norm_back.x() + cam_s.cx,
                            cam_s.fy * norm_back.y() + cam_s.cy};
                cyclic_ok = (p_back - kp.p).norm() <= config.cyclic_px;
            }
            labeled.label = cyclic_ok ? KeypointLabel::Identified : KeypointLabel::Inpainted;
        } else {
            labeled.label = KeypointLabel::Inpainted;
        }
        result.keypoints.push_back(labeled);
    }
    return result;
}

double estimate_overlap(const ViewPair& pair, int cell, double depth_grad_max,
                        const LabelingConfig& config) {
    auto ratio = [&](const ViewPair& directed) {
        std::vector<Keypoint> kps = sample_keypoints(directed.source, cell, depth_grad_max);
        LabelingResult labeled = label_keypoints(directed, kps, config);
        size_t total = labeled.keypoints.size() + static_cast<size_t>(labeled.dropped_behind);
        if (total == 0) return 0.0;
        size_t identified = 0;
        for (const LabeledKeypoint& kp : labeled.keypoints)
            if (kp.label == KeypointLabel::Identified) ++identified;
        return static_cast<double>(identified) / static_cast<double>(total);
    };
    ViewPair reversed{pair.target, pair.source};
    return std::min(ratio(pair), ratio(reversed));
}

}  // namespace corrhal
