#pragma once

#include <string>

#include "json.hpp"

#include "dexforge/pose.hpp"

namespace dexforge {

/// {"xyz": [x, y, z], "rpy": [r, p, y]}
nlohmann::json pose_to_json(const Pose& pose);
/// Missing `xyz` or `rpy` default to zero. Throws Error{kParse} naming `context`.
Pose pose_from_json(const nlohmann::json& j, const std::string& context);

Eigen::Vector3d vec3_from_json(const nlohmann::json& j, const std::string& context);
nlohmann::json vec3_to_json(const Eigen::Vector3d& v);

std::string read_text_file(const std::string& path);
/// Writes atomically via a temporary sibling; throws Error{kIo}.
void write_text_file(const std::string& path, const std::string& text);

}  // namespace dexforge
