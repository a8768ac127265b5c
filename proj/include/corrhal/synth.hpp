#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "corrhal/geometry.hpp"
#include "corrhal/grid.hpp"

namespace corrhal {

enum class KeypointLabel { Identified, Inpainted, Outpainted };
const char* label_name(KeypointLabel label);
KeypointLabel label_from_name(const std::string& name);

/// Textured planar patch: a point, two orthonormal in-plane axes and half
/// extents, plus a procedural texture.
struct PlaneLayer {
    Vec3 origin = Vec3::Zero();
    Vec3 axis_u = Vec3::UnitX();
    Vec3 axis_v = Vec3::UnitY();
    double half_u = 1.0, half_v = 1.0;
    uint64_t texture_seed = 0;
    double texture_scale = 2.0;
    bool is_background = false;

    Vec3 normal() const { return axis_u.cross(axis_v); }
};

struct SceneConfig {
    int n_layers = 4;            // 1 background + (n_layers - 1) occluders
    double depth_min = 2.5;      // nearest occluder depth (scene units)
    double depth_max = 6.0;      // background depth
    int texture_octaves = 4;

    double depth_range() const { return depth_max - depth_min; }
};

struct Scene {
    uint64_t seed = 0;
    int texture_octaves = 4;
    std::vector<PlaneLayer> layers;
};

/// Deterministic function of (seed, config). The background plane covers
/// every frustum the pair sampler produces. Throws InvalidConfig.
Scene generate_scene(uint64_t seed, const SceneConfig& config);

/// Multi-octave value noise in [0, 1]; deterministic in all arguments.
double fbm_value(double u, double v, uint64_t seed, int octaves);

struct RenderedView {
    Grid<double> image;      // grayscale in [0, 1]
    Grid<double> depth;      // camera-frame z at each pixel center
    Grid<int16_t> surface;   // scene layer index, -1 where no hit
    CameraModel camera;
    RigidPose pose;          // world -> camera

    bool depth_valid(int x, int y) const { return surface.at(x, y) >= 0; }
};

/// Per-pixel nearest-hit ray cast against all layers. Throws
/// UncoveredFrustum if any pixel misses every layer.
RenderedView render_view(const Scene& scene, const CameraModel& camera, const RigidPose& pose);

struct Keypoint {
    Vec2 p = Vec2::Zero();
    double depth = 0;
};

/// One keypoint per grid cell, at the pixel center nearest the cell center.
/// Keypoints with invalid depth or a central-difference depth gradient above
/// depth_grad_max are dropped.
std::vector<Keypoint> sample_keypoints(const RenderedView& view, int cell, double depth_grad_max);

struct LabeledKeypoint {
    Vec2 p = Vec2::Zero();
    double depth = 0;
    Vec2 gt = Vec2::Zero();  // unclipped target-plane correspondent
    KeypointLabel label = KeypointLabel::Identified;
};

struct ViewPair {
    RenderedView source;
    RenderedView target;

    RigidPose pose_ts() const { return pose_compose(target.pose, pose_inverse(source.pose)); }
};

struct LabelingConfig {
    double depth_tol = 0.035;  // absolute depth tolerance (scene units)
    double cyclic_px = 1.0;    // round-trip pixel threshold
};

struct LabelingResult {
    std::vector<LabeledKeypoint> keypoints;
    int dropped_behind = 0;  // warp undefined (point at/behind target camera)
};

/// Out-of-bounds correspondents are outpainted; in-bounds ones are checked by
/// reading the target depth at the correspondent (bilinear) and cyclically
/// projecting back to the source. A failed depth or round-trip check marks
/// the keypoint inpainted, otherwise identified.
LabelingResult label_keypoints(const ViewPair& pair, const std::vector<Keypoint>& keypoints,
                               const LabelingConfig& config);

/// min(identified fraction source->target, target->source).
double estimate_overlap(const ViewPair& pair, int cell, double depth_grad_max,
                        const LabelingConfig& config);

/// Bilinear depth read at a continuous pixel coordinate (clamped to the
/// pixel-center hull).
double depth_at_bilinear(const RenderedView& view, const Vec2& p);

}  // namespace corrhal
