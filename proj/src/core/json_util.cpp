#include "dexforge/json_util.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

#include "dexforge/error.hpp"

namespace dexforge {

using nlohmann::json;

json vec3_to_json(const Eigen::Vector3d& v) { return json::array({v.x(), v.y(), v.z()}); }

Eigen::Vector3d vec3_from_json(const json& j, const std::string& context) {
  if (!j.is_array() || j.size() != 3) {
    throw Error(ErrorCode::kParse, context + ": expected an array of 3 numbers");
  }
  Eigen::Vector3d v;
  for (int i = 0; i < 3; ++i) {
    if (!j[static_cast<std::size_t>(i)].is_number()) {
      throw Error(ErrorCode::kParse, context + ": expected an array of 3 numbers");
    }
    v[i] = j[static_cast<std::size_t>(i)].get<double>();
  }
  return v;
}

json pose_to_json(const Pose& pose) {
  return json{{"xyz", vec3_to_json(pose.translation())}, {"rpy", vec3_to_json(pose.rpy())}};
}

Pose pose_from_json(const json& j, const std::string& context) {
  if (!j.is_object()) throw Error(ErrorCode::kParse, context + ": expected {xyz, rpy}");
  Eigen::Vector3d xyz = Eigen::Vector3d::Zero();
  Eigen::Vector3d rpy = Eigen::Vector3d::Zero();
  if (j.contains("xyz")) xyz = vec3_from_json(j["xyz"], context + ".xyz");
  if (j.contains("rpy")) rpy = vec3_from_json(j["rpy"], context + ".rpy");
  return Pose::from_xyz_rpy(xyz, rpy);
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const std::string& path, const std::string& text) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::kIo, "cannot write '" + path + "'");
    out << text;
    if (!out.flush()) throw Error(ErrorCode::kIo, "short write to '" + path + "'");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp, ec);
    throw Error(ErrorCode::kIo, "cannot write '" + path + "'");
  }
}

}  // namespace dexforge
