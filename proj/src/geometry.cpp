#include "corrhal/geometry.hpp"

#include <cmath>

namespace corrhal {

Mat3 CameraModel::k_matrix() const {
    Mat3 k;
    k << fx, 0, cx, 0, fy, cy, 0, 0, 1;
    return k;
}

Mat3 CameraModel::k_inverse() const {
    Mat3 k;
    k << 1.0 / fx, 0, -cx / fx, 0, 1.0 / fy, -cy / fy, 0, 0, 1;
    return k;
}

Vec3 CameraModel::ray(const Vec2& pixel) const {
    return {(pixel.x() - cx) / fx, (pixel.y() - cy) / fy, 1.0};
}

void CameraModel::validate() const {
    if (!(fx > 0) || !(fy > 0)) raise(ErrorCode::InvalidConfig, "camera focal lengths must be positive");
    if (width < 1 || height < 1) raise(ErrorCode::InvalidConfig, "camera size must be at least 1x1");
    if (!(cx >= 0 && cx < width && cy >= 0 && cy < height))
        raise(ErrorCode::InvalidConfig, "principal point outside image");
}

void RigidPose::validate() const {
    Mat3 residual = rotation.transpose() * rotation - Mat3::Identity();
    if (residual.cwiseAbs().maxCoeff() >= 1e-9)
        raise(ErrorCode::InvalidConfig, "rotation is not orthonormal");
    if (std::abs(rotation.determinant() - 1.0) >= 1e-9)
        raise(ErrorCode::InvalidConfig, "rotation determinant is not +1");
}

MapFrame MapFrame::for_dims(int width, int height, int stride, double gamma) {
    if (stride < 1) raise(ErrorCode::InvalidConfig, "stride must be positive");
    if (gamma < 0) raise(ErrorCode::InvalidConfig, "gamma must be nonnegative");
    MapFrame frame;
    frame.stride = stride;
    int base_w = (width + stride - 1) / stride;
    int base_h = (height + stride - 1) / stride;
    frame.pad_x = static_cast<int>(std::lround(gamma * base_w));
    frame.pad_y = static_cast<int>(std::lround(gamma * base_h));
    frame.map_w = base_w + 2 * frame.pad_x;
    frame.map_h = base_h + 2 * frame.pad_y;
    return frame;
}

MapFrame MapFrame::for_camera(const CameraModel& cam, int stride, double gamma) {
    return for_dims(cam.width, cam.height, stride, gamma);
}

Vec2 project(const Vec3& u) {
    if (!(u.z() > kMinDepth))
        raise(ErrorCode::NonPositiveDepth, "point at or behind the camera plane");
    return {u.x() / u.z(), u.y() / u.z()};
}

Vec3 backproject(const Vec2& pixel, double depth, const CameraModel& cam) {
    return depth * cam.ray(pixel);
}

Vec2 warp(const Vec2& p_s, double d_s, const RigidPose& pose_ts, const CameraModel& cam_s,
          const CameraModel& cam_t) {
    if (!(d_s > 0)) raise(ErrorCode::NonPositiveDepth, "source depth must be positive");
    Vec3 p3 = pose_ts.apply(backproject(p_s, d_s, cam_s));
    Vec2 normalized = project(p3);
    return {cam_t.fx * normalized.x() + cam_t.cx, cam_t.fy * normalized.y() + cam_t.cy};
}

RigidPose pose_compose(const RigidPose& a, const RigidPose& b) {
    // (a ∘ b)(x) = a(b(x))
    RigidPose out;
    out.rotation = a.rotation * b.rotation;
    out.translation = a.rotation * b.translation + a.translation;
    return out;
}

RigidPose pose_inverse(const RigidPose& a) {
    RigidPose out;
    out.rotation = a.rotation.transpose();
    out.translation = -(out.rotation * a.translation);
    return out;
}

PoseError pose_error(const RigidPose& est, const RigidPose& gt) {
    double trace = (est.rotation * gt.rotation.transpose()).trace();
    double cos_angle = std::clamp((trace - 1.0) / 2.0, -1.0, 1.0);
    PoseError err;
    err.rot_deg = std::acos(cos_angle) * 180.0 / M_PI;
    err.trans = (est.translation - gt.translation).norm();
    return err;
}

Mat3 exp_so3(const Vec3& omega) {
    double angle = omega.norm();
    Mat3 hat;
    hat << 0, -omega.z(), omega.y(), omega.z(), 0, -omega.x(), -omega.y(), omega.x(), 0;
    if (angle < 1e-10) {
        return Mat3::Identity() + hat + 0.5 * hat * hat;
    }
    double a = std::sin(angle) / angle;
    double b = (1.0 - std::cos(angle)) / (angle * angle);
    return Mat3::Identity() + a * hat + b * hat * hat;
}

}  // namespace corrhal
