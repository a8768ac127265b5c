#pragma once

#include <Eigen/Dense>

#include "corrhal/common.hpp"

namespace corrhal {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

/// Smallest depth treated as in front of the camera (scene units).
constexpr double kMinDepth = 1e-6;

/// Pinhole camera intrinsics. Continuous pixel coordinates; the center of
/// integer pixel (i, j) is (i + 0.5, j + 0.5).
struct CameraModel {
    double fx = 0, fy = 0, cx = 0, cy = 0;
    int width = 0, height = 0;

    Mat3 k_matrix() const;
    Mat3 k_inverse() const;

    /// Camera-frame ray direction through a continuous pixel coordinate (z=1).
    Vec3 ray(const Vec2& pixel) const;

    bool contains(const Vec2& pixel) const {
        return pixel.x() >= 0.0 && pixel.x() < width && pixel.y() >= 0.0 && pixel.y() < height;
    }

    void validate() const;
};

/// Rigid transform x_out = R * x_in + t.
struct RigidPose {
    Mat3 rotation = Mat3::Identity();
    Vec3 translation = Vec3::Zero();

    static RigidPose identity() { return {}; }

    Vec3 apply(const Vec3& p) const { return rotation * p + translation; }

    void validate() const;
};

/// Affine image<->map frame: map = pixel / stride + pad. Stored structurally
/// so the transform is always invertible.
struct MapFrame {
    int stride = 1;
    int pad_x = 0, pad_y = 0;
    int map_w = 0, map_h = 0;

    /// Frame sized for a camera: base dims ceil(dim/stride), padded per side
    /// by round(gamma * base).
    static MapFrame for_camera(const CameraModel& cam, int stride, double gamma);
    static MapFrame for_dims(int width, int height, int stride, double gamma);

    Vec2 image_to_map(const Vec2& pixel) const {
        return {pixel.x() / stride + pad_x, pixel.y() / stride + pad_y};
    }
    Vec2 map_to_image(const Vec2& map_pt) const {
        return {(map_pt.x() - pad_x) * stride, (map_pt.y() - pad_y) * stride};
    }
    bool in_map(const Vec2& map_pt) const {
        return map_pt.x() >= 0.0 && map_pt.x() <= map_w && map_pt.y() >= 0.0 && map_pt.y() <= map_h;
    }
    int cell_count() const { return map_w * map_h; }

    bool operator==(const MapFrame&) const = default;
};

/// Homogeneous normalization (u_x/u_z, u_y/u_z). Throws NonPositiveDepth for
/// points at or behind the camera plane.
Vec2 project(const Vec3& u);

/// Warp a source pixel with known depth into the target image plane. The
/// result is unclipped and may lie outside the target bounds.
Vec2 warp(const Vec2& p_s, double d_s, const RigidPose& pose_ts, const CameraModel& cam_s,
          const CameraModel& cam_t);

/// Source-camera-frame 3D point of a pixel with depth d (z = d).
Vec3 backproject(const Vec2& pixel, double depth, const CameraModel& cam);

RigidPose pose_compose(const RigidPose& a, const RigidPose& b);
RigidPose pose_inverse(const RigidPose& a);

struct PoseError {
    double rot_deg = 0;
    double trans = 0;
};
PoseError pose_error(const RigidPose& est, const RigidPose& gt);

/// so(3) exponential map (Rodrigues).
Mat3 exp_so3(const Vec3& omega);

}  // namespace corrhal
