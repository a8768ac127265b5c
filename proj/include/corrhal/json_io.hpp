#pragma once

#include <json.hpp>

#include "corrhal/geometry.hpp"
#include "corrhal/synth.hpp"

namespace corrhal {

nlohmann::json camera_to_json(const CameraModel& cam);
CameraModel camera_from_json(const nlohmann::json& j);

nlohmann::json pose_to_json(const RigidPose& pose);
RigidPose pose_from_json(const nlohmann::json& j);

nlohmann::json keypoint_to_json(const LabeledKeypoint& kp);
LabeledKeypoint keypoint_from_json(const nlohmann::json& j);

}  // namespace corrhal
