#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "dexforge/dexforge.h"

namespace {

struct Failure {
  int code;
};

void check(dexforge_status s, const char* what) {
  if (s != DEXFORGE_OK) {
    std::fprintf(stderr, "dexforge %s: %s: %s\n", what, dexforge_status_name(s), dexforge_last_error());
    throw Failure{static_cast<int>(s)};
  }
}

std::string read_file(const std::string& path) {
  if (path == "-") {
    std::ostringstream ss;
    ss << std::cin.rdbuf();
    return ss.str();
  }
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    std::fprintf(stderr, "dexforge: cannot read %s\n", path.c_str());
    throw Failure{DEXFORGE_E_IO};
  }
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_output(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::cout << text << '\n';
    return;
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << text << '\n';
  if (!out) {
    std::fprintf(stderr, "dexforge: cannot write %s\n", path.c_str());
    throw Failure{DEXFORGE_E_IO};
  }
}

// Owns a string allocated by the library.
class LibString {
 public:
  LibString() = default;
  LibString(const LibString&) = delete;
  LibString& operator=(const LibString&) = delete;
  ~LibString() { dexforge_string_free(ptr_); }
  char** out() { return &ptr_; }
  std::string str() const { return ptr_ ? ptr_ : ""; }

 private:
  char* ptr_ = nullptr;
};

class Hand {
 public:
  explicit Hand(const std::string& path) { check(dexforge_hand_load(path.c_str(), &ptr_), "hand"); }
  Hand(const Hand&) = delete;
  Hand& operator=(const Hand&) = delete;
  ~Hand() { dexforge_hand_free(ptr_); }
  const dexforge_hand* get() const { return ptr_; }

 private:
  dexforge_hand* ptr_ = nullptr;
};

const char* opt(const std::string& s) { return s.empty() ? nullptr : s.c_str(); }

std::string optional_file(const std::string& path) { return path.empty() ? std::string() : read_file(path); }

std::vector<const char*> c_strings(const std::vector<std::string>& v) {
  std::vector<const char*> out;
  for (const auto& s : v) out.push_back(s.c_str());
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dexterous-hand retargeting, action-space and policy toolkit"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(dexforge_version()));

  // serve
  int port = 8765;
  auto* serve = app.add_subcommand("serve", "Run the local HTTP session service");
  serve->add_option("--port", port, "TCP port on 127.0.0.1 (0 picks a free port)")->check(CLI::Range(0, 65535));

  // hand
  std::string hand_path;
  auto* hand_cmd = app.add_subcommand("hand", "Print a hand model summary");
  hand_cmd->add_option("--hand", hand_path, "Hand description file")->required();

  // retarget
  std::string recording, profile, out, ik_file;
  auto* retarget = app.add_subcommand("retarget", "Retarget a fingertip recording onto a robot hand");
  retarget->add_option("--hand", hand_path, "Hand description file")->required();
  retarget->add_option("--recording", recording, "Recording file")->required();
  retarget->add_option("--profile", profile, "Calibration profile (identity when omitted)");
  retarget->add_option("--out", out, "Output JSON")->required();
  retarget->add_option("--ik", ik_file, "Solver settings JSON");

  // synth
  std::string spec_file;
  auto* synth = app.add_subcommand("synth", "Write a forward-kinematics oracle recording");
  synth->add_option("--hand", hand_path, "Hand description file")->required();
  synth->add_option("--spec", spec_file, "Recording spec JSON");
  synth->add_option("--out", out, "Output recording")->required();

  // faas
  std::string state_file, faas_file, target_hand;
  auto* faas = app.add_subcommand("faas", "Encode, decode and transfer FAAS action vectors");
  faas->require_subcommand(1);
  auto* faas_encode = faas->add_subcommand("encode", "Joint state to FAAS vector");
  faas_encode->add_option("--hand", hand_path, "Hand description file")->required();
  faas_encode->add_option("--state", state_file, "State JSON ({q, wrist?}); '-' for stdin");
  faas_encode->add_option("--out", out, "Output JSON (stdout when omitted)");
  auto* faas_decode = faas->add_subcommand("decode", "FAAS vector to joint state");
  faas_decode->add_option("--hand", hand_path, "Hand description file")->required();
  faas_decode->add_option("--faas", faas_file, "FAAS JSON; '-' for stdin")->required();
  faas_decode->add_option("--out", out, "Output JSON (stdout when omitted)");
  auto* faas_transfer = faas->add_subcommand("transfer", "Re-target a joint state to another hand through FAAS");
  faas_transfer->add_option("--from", hand_path, "Source hand description")->required();
  faas_transfer->add_option("--to", target_hand, "Target hand description")->required();
  faas_transfer->add_option("--state", state_file, "State JSON on the source hand; '-' for stdin");
  faas_transfer->add_option("--out", out, "Output JSON (stdout when omitted)");

  // train-toy
  std::string config_file, checkpoint, curve;
  auto* train = app.add_subcommand("train-toy", "Train the flow-matching policy on the 2-d reaching task");
  train->add_option("--config", config_file, "Training config JSON");
  train->add_option("--checkpoint", checkpoint, "Checkpoint output");
  train->add_option("--curve", curve, "Loss curve CSV output");

  // pointcloud
  std::string frame, mask, cloud, intrinsics;
  auto* pc = app.add_subcommand("pointcloud", "RGB-D and point cloud operations");
  pc->require_subcommand(1);
  auto* unproject = pc->add_subcommand("unproject", "RGB-D frame to a DXPC cloud");
  unproject->add_option("--frame", frame, "Frame prefix (<p>.color.ppm, <p>.depth.pgm, <p>.intrinsics.json)")
      ->required();
  unproject->add_option("--mask", mask, "Hand mask PGM (masked pixels are dropped)");
  unproject->add_option("--out", out, "Output cloud")->required();
  auto* reproject = pc->add_subcommand("reproject", "DXPC cloud to an RGB-D frame");
  reproject->add_option("--cloud", cloud, "Input cloud")->required();
  reproject->add_option("--intrinsics", intrinsics, "Camera intrinsics JSON")->required();
  reproject->add_option("--out", out, "Output frame prefix")->required();
  auto* attach = pc->add_subcommand("attach", "Replace the human hand with the robot hand and reproject");
  attach->add_option("--hand", hand_path, "Hand description file")->required();
  attach->add_option("--frame", frame, "Frame prefix")->required();
  attach->add_option("--mask", mask, "Hand mask PGM")->required();
  attach->add_option("--state", state_file, "Robot state JSON ({q, hand_pose, offset?, density?, seed?})");
  attach->add_option("--out", out, "Output frame prefix")->required();
  attach->add_option("--cloud", cloud, "Also write the composed cloud");

  // dataset
  std::string shard;
  std::vector<std::string> shards, human, robot;
  auto* dataset = app.add_subcommand("dataset", "Trajectory shards");
  dataset->require_subcommand(1);
  auto* pack = dataset->add_subcommand("pack", "Retarget a recording into a trajectory shard");
  pack->add_option("--hand", hand_path, "Hand description file")->required();
  pack->add_option("--recording", recording, "Recording file")->required();
  pack->add_option("--profile", profile, "Calibration profile");
  pack->add_option("--config", config_file, "Pack config JSON ({id, source, target_fps, instruction, ik})");
  pack->add_option("--out", shard, "Shard directory")->required();
  auto* stats = dataset->add_subcommand("stats", "Summarize shards");
  stats->add_option("shards", shards, "Shard directories")->required();
  auto* mix = dataset->add_subcommand("mix-preview", "Draw mixed human/robot batches");
  mix->add_option("--human", human, "Human shard directories");
  mix->add_option("--robot", robot, "Robot shard directories");
  mix->add_option("--spec", spec_file, "Mix spec JSON ({human_weight, robot_weight, seed, batch_size, batches})");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*serve) {
      dexforge_server* server = nullptr;
      check(dexforge_server_create(&server), "serve");
      int bound = 0;
      const dexforge_status s = dexforge_server_bind(server, port, &bound);
      if (s != DEXFORGE_OK) dexforge_server_free(server);
      check(s, "serve");
      std::printf("listening on http://127.0.0.1:%d\n", bound);
      std::fflush(stdout);
      const dexforge_status l = dexforge_server_listen(server);
      dexforge_server_free(server);
      check(l, "serve");
    } else if (*hand_cmd) {
      Hand hand(hand_path);
      LibString json;
      check(dexforge_hand_summary_json(hand.get(), json.out()), "hand");
      write_output("", json.str());
    } else if (*retarget) {
      Hand hand(hand_path);
      const std::string ik = optional_file(ik_file);
      LibString summary;
      check(dexforge_retarget_recording(hand.get(), recording.c_str(), opt(profile), opt(ik), out.c_str(),
                                        summary.out()),
            "retarget");
      write_output("", summary.str());
    } else if (*synth) {
      Hand hand(hand_path);
      const std::string spec = optional_file(spec_file);
      check(dexforge_synthetic_recording(hand.get(), opt(spec), out.c_str()), "synth");
    } else if (*faas_encode) {
      Hand hand(hand_path);
      const std::string state = optional_file(state_file);
      LibString json;
      check(dexforge_faas_encode_json(hand.get(), opt(state), json.out()), "faas encode");
      write_output(out, json.str());
    } else if (*faas_decode) {
      Hand hand(hand_path);
      const std::string v = read_file(faas_file);
      LibString json;
      check(dexforge_faas_decode_json(hand.get(), v.c_str(), json.out()), "faas decode");
      write_output(out, json.str());
    } else if (*faas_transfer) {
      Hand source(hand_path);
      Hand target(target_hand);
      const std::string state = optional_file(state_file);
      LibString json;
      check(dexforge_faas_transfer_json(source.get(), target.get(), opt(state), json.out()), "faas transfer");
      write_output(out, json.str());
    } else if (*train) {
      const std::string config = optional_file(config_file);
      LibString report;
      check(dexforge_train_toy(opt(config), opt(checkpoint), opt(curve), report.out()), "train-toy");
      write_output("", report.str());
    } else if (*unproject) {
      std::size_t count = 0;
      check(dexforge_pointcloud_unproject(frame.c_str(), opt(mask), out.c_str(), &count), "pointcloud unproject");
      std::printf("{\"points\": %zu}\n", count);
    } else if (*reproject) {
      check(dexforge_pointcloud_reproject(cloud.c_str(), intrinsics.c_str(), out.c_str()), "pointcloud reproject");
    } else if (*attach) {
      Hand hand(hand_path);
      const std::string state = optional_file(state_file);
      std::size_t count = 0;
      check(dexforge_pointcloud_attach(hand.get(), frame.c_str(), mask.c_str(), opt(state), out.c_str(), opt(cloud),
                                       &count),
            "pointcloud attach");
      std::printf("{\"points\": %zu}\n", count);
    } else if (*pack) {
      Hand hand(hand_path);
      const std::string config = optional_file(config_file);
      LibString summary;
      check(dexforge_dataset_pack(hand.get(), recording.c_str(), opt(profile), opt(config), shard.c_str(),
                                  summary.out()),
            "dataset pack");
      write_output("", summary.str());
    } else if (*stats) {
      const auto dirs = c_strings(shards);
      LibString json;
      check(dexforge_dataset_stats(dirs.data(), dirs.size(), json.out()), "dataset stats");
      write_output("", json.str());
    } else if (*mix) {
      const auto h = c_strings(human);
      const auto r = c_strings(robot);
      const std::string spec = optional_file(spec_file);
      LibString json;
      check(dexforge_dataset_mix_preview(h.data(), h.size(), r.data(), r.size(), opt(spec), json.out()),
            "dataset mix-preview");
      write_output("", json.str());
    }
  } catch (const Failure& f) {
    return f.code == 0 ? 1 : f.code;
  }
  return 0;
}
