#include "dexforge/hand_model.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "dexforge/error.hpp"
#include "dexforge/json_util.hpp"

namespace dexforge {

using nlohmann::json;

namespace {

[[noreturn]] void parse_fail(const std::string& msg) { throw Error(ErrorCode::kParse, msg); }
[[noreturn]] void invalid(const std::string& msg) { throw Error(ErrorCode::kValidation, msg); }

const json& require(const json& obj, const char* key, const std::string& context) {
  if (!obj.is_object() || !obj.contains(key)) parse_fail(context + ": missing key '" + key + "'");
  return obj.at(key);
}

std::string require_string(const json& obj, const char* key, const std::string& context) {
  const json& v = require(obj, key, context);
  if (!v.is_string()) parse_fail(context + "." + key + ": expected a string");
  return v.get<std::string>();
}

double require_number(const json& obj, const char* key, const std::string& context) {
  const json& v = require(obj, key, context);
  if (!v.is_number()) parse_fail(context + "." + key + ": expected a number");
  return v.get<double>();
}

const char* primitive_name(PrimitiveType t) {
  switch (t) {
    case PrimitiveType::kSphere: return "sphere";
    case PrimitiveType::kBox: return "box";
    case PrimitiveType::kCapsule: return "capsule";
  }
  return "sphere";
}

VisualPrimitive parse_visual(const json& j, const std::string& context) {
  VisualPrimitive v;
  const std::string type = require_string(j, "type", context);
  if (type == "sphere") {
    v.type = PrimitiveType::kSphere;
    v.radius = require_number(j, "radius", context);
  } else if (type == "box") {
    v.type = PrimitiveType::kBox;
    v.size = vec3_from_json(require(j, "size", context), context + ".size");
  } else if (type == "capsule") {
    v.type = PrimitiveType::kCapsule;
    v.radius = require_number(j, "radius", context);
    v.length = require_number(j, "length", context);
  } else {
    parse_fail(context + ".type: unknown primitive '" + type + "'");
  }
  if (j.contains("origin")) v.origin = pose_from_json(j["origin"], context + ".origin");
  if (v.radius < 0.0 || v.length < 0.0 || (v.size.array() < 0.0).any()) {
    invalid(context + ": negative primitive dimension");
  }
  return v;
}

json visual_to_json(const VisualPrimitive& v) {
  json j{{"type", primitive_name(v.type)}, {"origin", pose_to_json(v.origin)}};
  switch (v.type) {
    case PrimitiveType::kSphere: j["radius"] = v.radius; break;
    case PrimitiveType::kBox: j["size"] = vec3_to_json(v.size); break;
    case PrimitiveType::kCapsule:
      j["radius"] = v.radius;
      j["length"] = v.length;
      break;
  }
  return j;
}

struct RawJoint {
  std::string name;
  bool fixed = false;
  std::string parent, child;
  Pose origin;
  Eigen::Vector3d axis = Eigen::Vector3d::UnitZ();
  double lower = 0.0, upper = 0.0;
  bool has_mimic = false;
  std::string mimic_master;
  double multiplier = 1.0, offset = 0.0;
};

RawJoint parse_joint(const json& j, std::size_t index) {
  RawJoint r;
  std::string context = "joints[" + std::to_string(index) + "]";
  r.name = require_string(j, "name", context);
  context = "joint '" + r.name + "'";
  if (j.contains("type")) {
    if (!j["type"].is_string()) parse_fail(context + ".type: expected a string");
    const std::string type = j["type"].get<std::string>();
    if (type == "fixed") {
      r.fixed = true;
    } else if (type != "revolute") {
      parse_fail(context + ": unsupported joint type '" + type + "'");
    }
  }
  r.parent = require_string(j, "parent", context);
  r.child = require_string(j, "child", context);
  if (j.contains("origin")) r.origin = pose_from_json(j["origin"], context + ".origin");
  if (r.fixed) return r;

  r.axis = vec3_from_json(require(j, "axis", context), context + ".axis");
  const json& limits = require(j, "limits", context);
  r.lower = require_number(limits, "lower", context + ".limits");
  r.upper = require_number(limits, "upper", context + ".limits");
  if (j.contains("mimic")) {
    const json& m = j["mimic"];
    r.has_mimic = true;
    r.mimic_master = require_string(m, "master", context + ".mimic");
    r.multiplier = m.contains("multiplier") ? require_number(m, "multiplier", context + ".mimic") : 1.0;
    r.offset = m.contains("offset") ? require_number(m, "offset", context + ".mimic") : 0.0;
  }
  return r;
}

}  // namespace

const char* side_name(Side side) { return side == Side::kLeft ? "left" : "right"; }

Side parse_side(std::string_view text) {
  if (text == "left") return Side::kLeft;
  if (text == "right") return Side::kRight;
  throw Error(ErrorCode::kParse, "side: expected 'left' or 'right', got '" + std::string(text) + "'");
}

HandModel::HandModel(std::string name, Side side, std::vector<Link> links, std::vector<Joint> joints,
                     std::vector<int> fingertips)
    : name_(std::move(name)),
      side_(side),
      links_(std::move(links)),
      joints_(std::move(joints)),
      fingertips_(std::move(fingertips)) {
  for (int j = 0; j < full_dof(); ++j) {
    (joints_[static_cast<std::size_t>(j)].mimic ? mimic_joints_ : active_joints_).push_back(j);
  }
  moves_.assign(joints_.size(), std::vector<bool>(fingertips_.size(), false));
  for (std::size_t i = 0; i < fingertips_.size(); ++i) {
    std::vector<int> chain;
    int joint = links_[static_cast<std::size_t>(fingertips_[i])].parent_joint;
    while (joint >= 0) {
      chain.push_back(joint);
      moves_[static_cast<std::size_t>(joint)][i] = true;
      joint = links_[static_cast<std::size_t>(joints_[static_cast<std::size_t>(joint)].parent_link)].parent_joint;
    }
    std::reverse(chain.begin(), chain.end());
    chains_.push_back(std::move(chain));
  }
}

bool HandModel::moves_fingertip(int j, int i) const {
  return moves_[static_cast<std::size_t>(j)][static_cast<std::size_t>(i)];
}

std::optional<int> HandModel::find_link(std::string_view name) const {
  for (std::size_t i = 0; i < links_.size(); ++i) {
    if (links_[i].name == name) return static_cast<int>(i);
  }
  return std::nullopt;
}

std::optional<int> HandModel::find_joint(std::string_view name) const {
  for (std::size_t i = 0; i < joints_.size(); ++i) {
    if (joints_[i].name == name) return static_cast<int>(i);
  }
  return std::nullopt;
}

Eigen::VectorXd HandModel::lower_limits() const {
  Eigen::VectorXd v(full_dof());
  for (int j = 0; j < full_dof(); ++j) v[j] = joint(j).lower;
  return v;
}

Eigen::VectorXd HandModel::upper_limits() const {
  Eigen::VectorXd v(full_dof());
  for (int j = 0; j < full_dof(); ++j) v[j] = joint(j).upper;
  return v;
}

Eigen::VectorXd HandModel::rest_pose() const {
  Eigen::VectorXd q(full_dof());
  for (int j = 0; j < full_dof(); ++j) q[j] = joint(j).mid();
  for (int s : mimic_joints_) {
    const auto& m = *joint(s).mimic;
    q[s] = std::clamp(m.multiplier * q[m.master] + m.offset, joint(s).lower, joint(s).upper);
  }
  return q;
}

HandModel parse_hand_model(std::string_view text) {
  json doc;
  try {
    doc = json::parse(text.begin(), text.end());
  } catch (const json::parse_error& e) {
    parse_fail(std::string("syntax error: ") + e.what());
  }
  if (!doc.is_object()) parse_fail("document: expected a JSON object");

  const std::string name = require_string(doc, "name", "document");
  const Side side = parse_side(require_string(doc, "side", "document"));

  const json& links_json = require(doc, "links", "document");
  const json& joints_json = require(doc, "joints", "document");
  const json& tips_json = require(doc, "fingertips", "document");
  const json& map_json = require(doc, "faas_map", "document");
  if (!links_json.is_array()) parse_fail("links: expected an array");
  if (!joints_json.is_array()) parse_fail("joints: expected an array");
  if (!tips_json.is_array()) parse_fail("fingertips: expected an array");
  if (!map_json.is_object()) parse_fail("faas_map: expected an object");

  // Links as declared.
  std::vector<Link> raw_links;
  std::map<std::string, int> link_index;
  for (std::size_t i = 0; i < links_json.size(); ++i) {
    const json& lj = links_json[i];
    Link link;
    link.name = require_string(lj, "name", "links[" + std::to_string(i) + "]");
    const std::string context = "link '" + link.name + "'";
    if (lj.contains("visual")) link.visual = parse_visual(lj["visual"], context + ".visual");
    if (lj.contains("color")) {
      const json& c = lj["color"];
      if (!c.is_array() || c.size() != 3) parse_fail(context + ".color: expected [r, g, b]");
      for (std::size_t k = 0; k < 3; ++k) {
        if (!c[k].is_number_integer() || c[k].get<int>() < 0 || c[k].get<int>() > 255) {
          parse_fail(context + ".color: components must be integers in [0, 255]");
        }
        link.color[k] = static_cast<std::uint8_t>(c[k].get<int>());
      }
    }
    if (!link_index.emplace(link.name, static_cast<int>(i)).second) {
      invalid("duplicate link '" + link.name + "'");
    }
    raw_links.push_back(std::move(link));
  }
  if (raw_links.empty()) invalid("links: at least one link is required");

  std::vector<RawJoint> raw_joints;
  std::set<std::string> joint_names;
  for (std::size_t i = 0; i < joints_json.size(); ++i) {
    RawJoint r = parse_joint(joints_json[i], i);
    if (!joint_names.insert(r.name).second) invalid("duplicate joint '" + r.name + "'");
    if (!link_index.count(r.parent)) invalid("joint '" + r.name + "': unknown parent link '" + r.parent + "'");
    if (!link_index.count(r.child)) invalid("joint '" + r.name + "': unknown child link '" + r.child + "'");
    if (r.parent == r.child) invalid("joint '" + r.name + "': parent and child are the same link");
    if (!r.fixed) {
      if (std::abs(r.axis.norm() - 1.0) > 1e-9) invalid("joint '" + r.name + "': axis is not unit length");
      if (!(r.lower <= r.upper)) invalid("joint '" + r.name + "': bad limits (lower > upper)");
    }
    raw_joints.push_back(std::move(r));
  }

  // Tree structure: every non-root link has exactly one parent joint.
  std::vector<int> parent_of(raw_links.size(), -1);
  for (std::size_t j = 0; j < raw_joints.size(); ++j) {
    const int child = link_index[raw_joints[j].child];
    if (parent_of[static_cast<std::size_t>(child)] != -1) {
      invalid("link '" + raw_joints[j].child + "' has more than one parent joint");
    }
    parent_of[static_cast<std::size_t>(child)] = static_cast<int>(j);
  }
  std::vector<int> roots;
  for (std::size_t l = 0; l < raw_links.size(); ++l) {
    if (parent_of[l] == -1) roots.push_back(static_cast<int>(l));
  }
  if (roots.empty()) invalid("kinematic cycle: no root link");
  if (roots.size() > 1) {
    invalid("link '" + raw_links[static_cast<std::size_t>(roots[1])].name + "' is disconnected (multiple roots)");
  }

  // Depth-first from the root, children in declaration order: a topological order that keeps
  // each finger's joints contiguous.
  std::vector<std::vector<int>> children(raw_links.size());
  for (std::size_t j = 0; j < raw_joints.size(); ++j) {
    children[static_cast<std::size_t>(link_index[raw_joints[j].parent])].push_back(static_cast<int>(j));
  }
  std::vector<int> link_order;
  std::vector<int> joint_order;
  std::vector<bool> seen(raw_links.size(), false);
  std::vector<std::pair<int, int>> stack{{roots.front(), -1}};  // (link, joint that reached it)
  while (!stack.empty()) {
    const auto [l, via] = stack.back();
    stack.pop_back();
    if (seen[static_cast<std::size_t>(l)]) {
      invalid("kinematic cycle through joint '" + raw_joints[static_cast<std::size_t>(via)].name + "'");
    }
    seen[static_cast<std::size_t>(l)] = true;
    link_order.push_back(l);
    if (via >= 0) joint_order.push_back(via);
    const auto& kids = children[static_cast<std::size_t>(l)];
    for (auto it = kids.rbegin(); it != kids.rend(); ++it) {
      stack.emplace_back(link_index[raw_joints[static_cast<std::size_t>(*it)].child], *it);
    }
  }
  for (std::size_t l = 0; l < raw_links.size(); ++l) {
    if (!seen[l]) invalid("kinematic cycle involving link '" + raw_links[l].name + "'");
  }

  std::vector<int> new_link(raw_links.size(), -1);
  std::vector<Link> links;
  for (int l : link_order) {
    new_link[static_cast<std::size_t>(l)] = static_cast<int>(links.size());
    links.push_back(raw_links[static_cast<std::size_t>(l)]);
  }

  std::map<std::string, int> revolute_index;
  std::vector<Joint> joints;
  for (int rj : joint_order) {
    const RawJoint& r = raw_joints[static_cast<std::size_t>(rj)];
    const int parent = new_link[static_cast<std::size_t>(link_index[r.parent])];
    const int child = new_link[static_cast<std::size_t>(link_index[r.child])];
    Link& child_link = links[static_cast<std::size_t>(child)];
    if (r.fixed) {
      // Fold into the child: it rides on whatever frame the parent rides on.
      const Link& parent_link = links[static_cast<std::size_t>(parent)];
      child_link.parent_joint = parent_link.parent_joint;
      child_link.attach = parent_link.attach * r.origin;
      continue;
    }
    Joint joint;
    joint.name = r.name;
    joint.parent_link = parent;
    joint.child_link = child;
    joint.origin = r.origin;
    joint.axis = r.axis;
    joint.lower = r.lower;
    joint.upper = r.upper;
    child_link.parent_joint = static_cast<int>(joints.size());
    child_link.attach = Pose::identity();
    revolute_index[r.name] = static_cast<int>(joints.size());
    joints.push_back(std::move(joint));
  }

  if (joints.empty()) invalid("active_dof ≥ 1 required (model has no revolute joints)");

  // Mimic constraints, single level only.
  for (int rj : joint_order) {
    const RawJoint& r = raw_joints[static_cast<std::size_t>(rj)];
    if (r.fixed || !r.has_mimic) continue;
    Joint& slave = joints[static_cast<std::size_t>(revolute_index[r.name])];
    if (r.mimic_master == r.name) invalid("joint '" + r.name + "': mimic master is itself");
    auto it = revolute_index.find(r.mimic_master);
    if (it == revolute_index.end()) {
      invalid("joint '" + r.name + "': unknown mimic master '" + r.mimic_master + "'");
    }
    slave.mimic = MimicConstraint{it->second, r.multiplier, r.offset};
  }
  for (const Joint& j : joints) {
    if (!j.mimic) continue;
    const Joint& master = joints[static_cast<std::size_t>(j.mimic->master)];
    if (master.mimic) {
      invalid("joint '" + j.name + "': mimic master '" + master.name + "' is itself a mimic joint");
    }
    // Some master value inside its limits must put the slave inside its limits.
    const double a = j.mimic->multiplier * master.lower + j.mimic->offset;
    const double b = j.mimic->multiplier * master.upper + j.mimic->offset;
    if (std::max(std::min(a, b), j.lower) > std::min(std::max(a, b), j.upper) + 1e-12) {
      invalid("joint '" + j.name + "': mimic range does not intersect its limits");
    }
  }
  const auto active = std::count_if(joints.begin(), joints.end(), [](const Joint& j) { return !j.mimic; });
  if (active < 1) invalid("active_dof ≥ 1 required (every joint is a mimic joint)");

  std::vector<int> fingertips;
  for (std::size_t i = 0; i < tips_json.size(); ++i) {
    if (!tips_json[i].is_string()) parse_fail("fingertips[" + std::to_string(i) + "]: expected a link name");
    const std::string tip = tips_json[i].get<std::string>();
    auto it = link_index.find(tip);
    if (it == link_index.end()) invalid("fingertip '" + tip + "' is not a link");
    const int l = new_link[static_cast<std::size_t>(it->second)];
    if (std::find(fingertips.begin(), fingertips.end(), l) != fingertips.end()) {
      invalid("fingertip '" + tip + "' listed twice");
    }
    fingertips.push_back(l);
  }
  if (fingertips.empty() || fingertips.size() > 5) {
    invalid("fingertips: expected between 1 and 5 entries, got " + std::to_string(fingertips.size()));
  }

  std::set<int> used_slots;
  for (auto it = map_json.begin(); it != map_json.end(); ++it) {
    auto ji = revolute_index.find(it.key());
    if (ji == revolute_index.end()) invalid("faas_map: unknown joint '" + it.key() + "'");
    if (!it.value().is_number_integer()) parse_fail("faas_map." + it.key() + ": expected an integer slot");
    const int slot = it.value().get<int>();
    if (slot < 0 || slot >= kFaasSlotsPerHand) {
      invalid("faas_map." + it.key() + ": slot " + std::to_string(slot) + " outside [0, 31]");
    }
    if (!used_slots.insert(slot).second) invalid("duplicate FAAS slot " + std::to_string(slot));
    joints[static_cast<std::size_t>(ji->second)].faas_slot = slot;
  }
  for (const Joint& j : joints) {
    if (j.faas_slot < 0) invalid("faas_map: joint '" + j.name + "' has no slot");
  }

  HandModel model(name, side, std::move(links), std::move(joints), std::move(fingertips));

  // Finger-exclusive joints stay inside one five-slot finger block, distinct per finger.
  std::map<int, int> block_owner;  // block -> fingertip
  for (int j = 0; j < model.full_dof(); ++j) {
    const int slot = model.joint(j).faas_slot;
    if (slot >= kFingerBlockEnd) continue;
    int owner = -1, count = 0;
    for (int i = 0; i < model.fingertip_count(); ++i) {
      if (model.moves_fingertip(j, i)) {
        owner = i;
        ++count;
      }
    }
    if (count != 1) continue;
    const int block = slot / kFingerBlockWidth;
    auto [it, inserted] = block_owner.emplace(block, owner);
    if (!inserted && it->second != owner) {
      invalid("faas_map: joint '" + model.joint(j).name + "' maps into finger block " + std::to_string(block) +
              " already used by another finger");
    }
  }
  for (int i = 0; i < model.fingertip_count(); ++i) {
    std::set<int> blocks;
    for (const auto& [block, owner] : block_owner) {
      if (owner == i) blocks.insert(block);
    }
    if (blocks.size() > 1) {
      invalid("faas_map: fingertip '" + model.links()[static_cast<std::size_t>(model.fingertips()[static_cast<std::size_t>(i)])].name +
              "' spans more than one finger block");
    }
  }
  return model;
}

HandModel load_hand_model(const std::string& path) { return parse_hand_model(read_text_file(path)); }

std::string serialize_hand_model(const HandModel& model) {
  json links = json::array();
  for (const Link& l : model.links()) {
    json lj{{"name", l.name}, {"color", {l.color[0], l.color[1], l.color[2]}}};
    if (l.visual) lj["visual"] = visual_to_json(*l.visual);
    links.push_back(std::move(lj));
  }
  json joints = json::array();
  json faas = json::object();
  // Links hanging off a frame through folded fixed joints are re-emitted as fixed joints
  // from the link that defines that frame.
  const int root = 0;
  for (std::size_t l = 0; l < model.links().size(); ++l) {
    const Link& link = model.links()[l];
    if (static_cast<int>(l) == root) continue;
    const bool revolute_child = link.parent_joint >= 0 &&
                                model.joint(link.parent_joint).child_link == static_cast<int>(l);
    if (revolute_child) {
      const Joint& j = model.joint(link.parent_joint);
      json jj{{"name", j.name},
              {"type", "revolute"},
              {"parent", model.links()[static_cast<std::size_t>(j.parent_link)].name},
              {"child", link.name},
              {"origin", pose_to_json(j.origin)},
              {"axis", vec3_to_json(j.axis)},
              {"limits", {{"lower", j.lower}, {"upper", j.upper}}}};
      if (j.mimic) {
        jj["mimic"] = {{"master", model.joint(j.mimic->master).name},
                       {"multiplier", j.mimic->multiplier},
                       {"offset", j.mimic->offset}};
      }
      faas[j.name] = j.faas_slot;
      joints.push_back(std::move(jj));
    } else {
      const int anchor = link.parent_joint >= 0 ? model.joint(link.parent_joint).child_link : root;
      joints.push_back(json{{"name", "fixed_" + link.name},
                            {"type", "fixed"},
                            {"parent", model.links()[static_cast<std::size_t>(anchor)].name},
                            {"child", link.name},
                            {"origin", pose_to_json(link.attach)}});
    }
  }
  json tips = json::array();
  for (int t : model.fingertips()) tips.push_back(model.links()[static_cast<std::size_t>(t)].name);
  json doc{{"name", model.name()},
           {"side", side_name(model.side())},
           {"links", links},
           {"joints", joints},
           {"fingertips", tips},
           {"faas_map", faas}};
  return doc.dump(2);
}

namespace {

bool poses_close(const Pose& a, const Pose& b, double tol) {
  return (a.rotation() - b.rotation()).cwiseAbs().maxCoeff() <= tol &&
         (a.translation() - b.translation()).cwiseAbs().maxCoeff() <= tol;
}

}  // namespace

bool models_equal(const HandModel& a, const HandModel& b, double tol) {
  if (a.name() != b.name() || a.side() != b.side() || a.fingertips() != b.fingertips()) return false;
  if (a.links().size() != b.links().size() || a.joints().size() != b.joints().size()) return false;
  for (std::size_t i = 0; i < a.links().size(); ++i) {
    const Link& x = a.links()[i];
    const Link& y = b.links()[i];
    if (x.name != y.name || x.parent_joint != y.parent_joint || x.color != y.color) return false;
    if (!poses_close(x.attach, y.attach, tol)) return false;
    if (x.visual.has_value() != y.visual.has_value()) return false;
    if (x.visual) {
      const auto& u = *x.visual;
      const auto& v = *y.visual;
      if (u.type != v.type || u.radius != v.radius || u.length != v.length || u.size != v.size) return false;
      if (!poses_close(u.origin, v.origin, tol)) return false;
    }
  }
  for (std::size_t i = 0; i < a.joints().size(); ++i) {
    const Joint& x = a.joints()[i];
    const Joint& y = b.joints()[i];
    if (x.name != y.name || x.parent_link != y.parent_link || x.child_link != y.child_link) return false;
    if (x.axis != y.axis || x.lower != y.lower || x.upper != y.upper || x.faas_slot != y.faas_slot) return false;
    if (!poses_close(x.origin, y.origin, tol)) return false;
    if (x.mimic.has_value() != y.mimic.has_value()) return false;
    if (x.mimic && (x.mimic->master != y.mimic->master || x.mimic->multiplier != y.mimic->multiplier ||
                    x.mimic->offset != y.mimic->offset)) {
      return false;
    }
  }
  return true;
}

HandSummary hand_summary(const HandModel& model) {
  HandSummary s;
  s.name = model.name();
  s.side = model.side();
  s.active_dof = model.active_dof();
  s.full_dof = model.full_dof();
  s.mimic_count = static_cast<int>(model.mimic_joints().size());
  for (int i = 0; i < model.fingertip_count(); ++i) {
    s.joints_per_finger.push_back(static_cast<int>(model.chain(i).size()));
  }
  for (const Joint& j : model.joints()) s.slot_occupancy |= (1u << j.faas_slot);
  return s;
}

std::string hand_summary_json(const HandSummary& s) {
  json slots = json::array();
  for (int b = 0; b < kFaasSlotsPerHand; ++b) {
    if (s.slot_occupancy & (1u << b)) slots.push_back(b);
  }
  json j{{"name", s.name},
         {"side", side_name(s.side)},
         {"active_dof", s.active_dof},
         {"full_dof", s.full_dof},
         {"mimic_joints", s.mimic_count},
         {"joints_per_finger", s.joints_per_finger},
         {"slot_occupancy", s.slot_occupancy},
         {"occupied_slots", slots}};
  return j.dump(2);
}

}  // namespace dexforge
