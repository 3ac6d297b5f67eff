#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "flowpose/error.hpp"
#include "flowpose/flow.hpp"
#include "flowpose/heatmap.hpp"
#include "flowpose/synth.hpp"
#include "flowpose/tensor.hpp"

namespace flowpose {

namespace fs = std::filesystem;

inline std::string frame_filename(std::size_t t) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "frame_%05zu.tns", t);
  return buf;
}

inline std::string flow_filename(std::size_t t, long delta) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "flow_%05zu_%+03ld.flo", t, delta);
  return buf;
}

inline std::string indexed_filename(const std::string& prefix, std::size_t t, const std::string& ext) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%s_%05zu%s", prefix.c_str(), t, ext.c_str());
  return buf;
}

// Pose CSV: header "frame,joint,x,y,visible", one row per (frame, joint).

inline void write_poses_csv(std::ostream& os, const std::vector<Pose>& poses, const JointSet& joints) {
  os << "frame,joint,x,y,visible\n";
  char buf[128];
  for (std::size_t t = 0; t < poses.size(); ++t) {
    if (poses[t].size() != joints.size()) throw std::invalid_argument("pose size does not match the joint set");
    for (std::size_t j = 0; j < joints.size(); ++j) {
      std::snprintf(buf, sizeof buf, "%.17g,%.17g,%d", poses[t][j].x, poses[t][j].y, poses[t][j].visible ? 1 : 0);
      os << t << "," << joints.name(j) << "," << buf << "\n";
    }
  }
}

inline std::vector<Pose> read_poses_csv(std::istream& is, const JointSet& joints) {
  std::string line;
  if (!std::getline(is, line) || line.rfind("frame,joint,x,y,visible", 0) != 0)
    throw FormatError("pose csv: expected header frame,joint,x,y,visible");
  std::map<std::size_t, Pose> by_frame;
  std::map<std::size_t, std::vector<bool>> seen;
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string cells[5];
    for (auto& c : cells)
      if (!std::getline(ls, c, ',')) throw FormatError("pose csv line " + std::to_string(lineno) + ": expected 5 fields");
    std::size_t t = 0, j = 0;
    Joint jt;
    try {
      t = std::stoul(cells[0]);
      j = joints.index(cells[1]);
      jt.x = std::stod(cells[2]);
      jt.y = std::stod(cells[3]);
      jt.visible = std::stoi(cells[4]) != 0;
    } catch (const std::exception& e) {
      throw FormatError("pose csv line " + std::to_string(lineno) + ": " + e.what());
    }
    auto [it, fresh] = by_frame.try_emplace(t, Pose(joints.size()));
    auto& s = seen.try_emplace(t, std::vector<bool>(joints.size(), false)).first->second;
    if (s[j]) throw FormatError("pose csv line " + std::to_string(lineno) + ": duplicate joint");
    s[j] = true;
    it->second[j] = jt;
  }
  std::vector<Pose> out;
  std::size_t expect = 0;
  for (auto& [t, p] : by_frame) {
    if (t != expect) throw FormatError("pose csv: frames must be numbered 0..N-1 without gaps");
    for (bool b : seen[t])
      if (!b) throw FormatError("pose csv: frame " + std::to_string(t) + " is missing joints");
    out.push_back(std::move(p));
    ++expect;
  }
  return out;
}

inline void save_poses_csv(const fs::path& path, const std::vector<Pose>& poses, const JointSet& joints) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  write_poses_csv(os, poses, joints);
}

inline std::vector<Pose> load_poses_csv(const fs::path& path, const JointSet& joints) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  return read_poses_csv(is, joints);
}

/// Frames and labels read from a dataset directory.
struct Dataset {
  std::vector<Tensor> frames;
  std::vector<Pose> poses;
};

/// Writes frames, poses.csv and true flow for every offset 1..flow_n in both
/// directions.
inline void save_sequence(const fs::path& dir, const PuppetSpec& spec, const Sequence& seq, std::size_t flow_n) {
  fs::create_directories(dir);
  for (std::size_t t = 0; t < seq.frames.size(); ++t) save_tensor(dir / frame_filename(t), seq.frames[t]);
  save_poses_csv(dir / "poses.csv", seq.poses, puppet_joints());
  for (std::size_t t = 0; t < seq.frames.size(); ++t)
    for (long d = -static_cast<long>(flow_n); d <= static_cast<long>(flow_n); ++d) {
      const long target = static_cast<long>(t) + d;
      if (d == 0 || target < 0 || target >= static_cast<long>(seq.frames.size())) continue;
      save_flo(dir / flow_filename(t, d), true_flow(spec, seq, t, d));
    }
}

inline std::vector<fs::path> list_indexed(const fs::path& dir, const std::string& prefix, const std::string& ext) {
  std::vector<fs::path> out;
  for (std::size_t t = 0;; ++t) {
    fs::path p = dir / indexed_filename(prefix, t, ext);
    if (!fs::exists(p)) break;
    out.push_back(p);
  }
  return out;
}

inline Dataset load_dataset(const fs::path& dir, const JointSet& joints) {
  Dataset d;
  for (const auto& p : list_indexed(dir, "frame", ".tns")) d.frames.push_back(load_tensor(p));
  if (d.frames.empty()) throw std::runtime_error("no frame_00000.tns in " + dir.string());
  d.poses = load_poses_csv(dir / "poses.csv", joints);
  if (d.poses.size() != d.frames.size())
    throw FormatError("dataset " + dir.string() + ": " + std::to_string(d.frames.size()) + " frames but " +
                      std::to_string(d.poses.size()) + " poses");
  return d;
}

}  // namespace flowpose
