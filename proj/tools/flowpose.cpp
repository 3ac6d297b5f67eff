// flowpose command-line driver. Every stage reads and writes plain files so
// the stages can be chained or swapped independently.

#include <openssl/sha.h>

#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "flowpose/flowpose.hpp"

using namespace flowpose;
namespace fs = std::filesystem;

namespace {

std::string hex(const unsigned char* d, std::size_t n) {
  static const char* digits = "0123456789abcdef";
  std::string out;
  for (std::size_t i = 0; i < n; ++i) {
    out += digits[d[i] >> 4];
    out += digits[d[i] & 15];
  }
  return out;
}

std::string read_file(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + p.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

/// Content hash in git's blob form: sha1("blob <size>\0" + bytes).
std::string blob_hash(const fs::path& p) {
  const std::string body = read_file(p);
  const std::string blob = "blob " + std::to_string(body.size()) + std::string(1, '\0') + body;
  unsigned char digest[SHA_DIGEST_LENGTH];
  SHA1(reinterpret_cast<const unsigned char*>(blob.data()), blob.size(), digest);
  return hex(digest, SHA_DIGEST_LENGTH);
}

struct Manifest {
  std::vector<std::pair<std::string, std::string>> entries;

  void add(const std::string& k, const std::string& v) { entries.emplace_back(k, v); }

  void write(const fs::path& dir, const std::string& command_line) const {
    std::ofstream os(dir / "manifest.txt");
    if (!os) throw std::runtime_error("cannot write " + (dir / "manifest.txt").string());
    const std::time_t now = std::time(nullptr);
    char stamp[32];
    std::strftime(stamp, sizeof stamp, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
    os << "command_line = " << command_line << "\n";
    for (const auto& [k, v] : entries) os << k << " = " << v << "\n";
    os << "created = " << stamp << "\n";
  }
};

/// Value of `key` in the manifest of `dir`, if present.
std::optional<std::string> manifest_value(const fs::path& dir, const std::string& key) {
  if (!fs::exists(dir / "manifest.txt")) return std::nullopt;
  std::ifstream is(dir / "manifest.txt");
  std::string line;
  while (std::getline(is, line)) {
    const auto eq = line.find(" = ");
    if (eq != std::string::npos && line.substr(0, eq) == key) return line.substr(eq + 3);
  }
  return std::nullopt;
}

std::size_t heatmap_scale_of(const fs::path& dir, std::size_t override_scale) {
  if (override_scale) return override_scale;
  const auto v = manifest_value(dir, "heatmap_scale");
  if (!v) throw ConfigError("no heatmap_scale in " + (dir / "manifest.txt").string() + "; pass --scale");
  return std::stoul(*v);
}

std::vector<Tensor> load_indexed(const fs::path& dir, const std::string& prefix) {
  std::vector<Tensor> out;
  for (const auto& p : list_indexed(dir, prefix, ".tns")) out.push_back(load_tensor(p));
  if (out.empty()) throw std::runtime_error("no " + prefix + "_00000.tns in " + dir.string());
  return out;
}

// ---------------------------------------------------------------------------

struct GenDataArgs {
  std::string spec, out;
  std::uint64_t seed = 1;
  std::size_t frames = 100, flow_n = 2;
};

void gen_data(const GenDataArgs& a, const std::string& cmd) {
  const PuppetSpec spec = a.spec.empty() ? PuppetSpec{} : load_puppet_spec(a.spec);
  if (a.frames == 0) throw ConfigError("--frames must be at least 1");
  const Sequence seq = generate_sequence(spec, a.frames, a.seed);
  save_sequence(a.out, spec, seq, a.flow_n);
  Manifest m;
  m.add("command", "gen-data");
  m.add("config", a.spec.empty() ? "(defaults)" : a.spec);
  m.add("seed", std::to_string(a.seed));
  m.add("frames", std::to_string(a.frames));
  m.add("flow_n", std::to_string(a.flow_n));
  m.add("outputs", "frame_*.tns poses.csv flow_*.flo");
  m.write(a.out, cmd);
}

struct TrainArgs {
  std::string config, data, out;
  std::optional<std::uint64_t> seed;
};

void train_cmd(const TrainArgs& a, const std::string& cmd) {
  TrainConfig cfg = a.config.empty() ? TrainConfig{} : load_train_config(a.config);
  if (a.seed) cfg.seed = *a.seed;
  const JointSet joints = puppet_joints();
  const Dataset d = load_dataset(a.data, joints);
  const Shape fs0 = d.frames.front().shape();
  if (fs0.h != fs0.w) throw ConfigError("frames must be square, got " + fs0.str());
  const std::size_t n_val = static_cast<std::size_t>(cfg.val_fraction * static_cast<double>(d.frames.size()));
  const std::size_t n_train = d.frames.size() - n_val;
  if (n_train == 0) throw ConfigError("config key 'val_fraction' leaves no training frames");
  const std::vector<Tensor> tf(d.frames.begin(), d.frames.begin() + static_cast<long>(n_train));
  const std::vector<Tensor> vf(d.frames.begin() + static_cast<long>(n_train), d.frames.end());
  const std::vector<Pose> tp(d.poses.begin(), d.poses.begin() + static_cast<long>(n_train));
  const std::vector<Pose> vp(d.poses.begin() + static_cast<long>(n_train), d.poses.end());
  NetworkConfig nc = network_config_for(cfg, fs0.h, joints.size());
  nc.input_channels = fs0.c;
  const TrainResult r = train(Network(nc, cfg.seed), tf, tp, vf, vp, cfg, joints);
  fs::create_directories(a.out);
  save_checkpoint(fs::path(a.out) / "checkpoint.fpn", r.best);
  std::ofstream loss(fs::path(a.out) / "loss.csv");
  write_loss_csv(loss, r.curve);
  Manifest m;
  m.add("command", "train");
  m.add("config", a.config.empty() ? "(defaults)" : a.config);
  m.add("seed", std::to_string(cfg.seed));
  m.add("data", a.data);
  m.add("train_frames", std::to_string(n_train));
  m.add("val_frames", std::to_string(n_val));
  m.add("best_iteration", std::to_string(r.best_iteration));
  m.add("best_val_pck", std::to_string(r.best_val_pck));
  m.add("heatmap_scale", std::to_string(nc.heatmap_scale()));
  m.add("outputs", "checkpoint.fpn loss.csv");
  m.add("checkpoint_hash", blob_hash(fs::path(a.out) / "checkpoint.fpn"));
  m.write(a.out, cmd);
}

struct InferArgs {
  std::string checkpoint, out;
  std::vector<std::string> inputs;
};

void infer(const InferArgs& a, const std::string& cmd) {
  const Checkpoint ck = load_checkpoint(a.checkpoint);
  std::vector<Tensor> frames;
  for (const auto& in : a.inputs) {
    if (fs::is_directory(in)) {
      for (auto& t : load_indexed(in, "frame")) frames.push_back(std::move(t));
    } else {
      frames.push_back(load_tensor(in));
    }
  }
  if (frames.empty()) throw ConfigError("no input frames");
  const NetworkConfig& nc = ck.network.config();
  for (const Tensor& f : frames)
    if (f.shape() != Shape{1, nc.input_channels, nc.input_h, nc.input_w})
      throw FormatError("frame shape " + f.shape().str() + " does not match the network input");
  fs::create_directories(a.out);
  std::vector<Pose> poses;
  if (nc.model == ModelKind::coordinate) {
    poses = predict_poses(ck.network, frames);
  } else {
    const auto maps = predict_heatmap_sequence(ck.network, frames);
    for (std::size_t t = 0; t < maps.size(); ++t) {
      save_tensor(fs::path(a.out) / indexed_filename("heatmap", t, ".tns"), maps[t]);
      poses.push_back(decode_argmax(maps[t], static_cast<double>(nc.heatmap_scale())));
    }
  }
  save_poses_csv(fs::path(a.out) / "poses.csv", poses, puppet_joints());
  Manifest m;
  m.add("command", "infer");
  m.add("checkpoint", a.checkpoint);
  m.add("checkpoint_hash", blob_hash(a.checkpoint));
  std::string ins;
  for (const auto& in : a.inputs) ins += (ins.empty() ? "" : " ") + in;
  m.add("inputs", ins);
  m.add("frames", std::to_string(frames.size()));
  m.add("heatmap_scale", std::to_string(nc.heatmap_scale()));
  m.add("outputs", nc.model == ModelKind::coordinate ? "poses.csv" : "heatmap_*.tns poses.csv");
  m.write(a.out, cmd);
}

struct WarpArgs {
  std::string heatmaps, flow, frames, out;
  std::size_t n = 15, scale = 0;
  HornSchunckParams hs;
};

void warp(const WarpArgs& a, const std::string& cmd) {
  if (a.flow.empty() == a.frames.empty()) throw ConfigError("give exactly one of --flow and --frames");
  const std::vector<Tensor> maps = load_indexed(a.heatmaps, "heatmap");
  const std::size_t scale = heatmap_scale_of(a.heatmaps, a.scale);
  const Shape hs = maps.front().shape();
  std::vector<Tensor> frames;
  if (!a.frames.empty()) {
    frames = load_indexed(a.frames, "frame");
    if (frames.size() != maps.size()) throw FormatError("frame and heatmap counts differ");
  }
  auto to_heatmap_res = [&](FlowField f) {
    if (f.height == hs.h && f.width == hs.w) return f;
    if (f.height != hs.h * scale || f.width != hs.w * scale)
      throw FormatError("flow field " + std::to_string(f.height) + "x" + std::to_string(f.width) +
                        " matches neither the heatmap nor the frame size");
    return downsample_flow(f, scale);
  };
  const FlowProvider flow = [&](std::size_t t, long d) {
    if (!frames.empty())
      return to_heatmap_res(estimate_flow(frames[t], frames[static_cast<std::size_t>(static_cast<long>(t) + d)], a.hs));
    const fs::path p = fs::path(a.flow) / flow_filename(t, d);
    if (!fs::exists(p)) throw std::runtime_error("missing flow file " + p.string());
    return to_heatmap_res(load_flo(p));
  };
  fs::create_directories(a.out);
  for (std::size_t t = 0; t < maps.size(); ++t)
    save_tensor(fs::path(a.out) / indexed_filename("warped", t, ".tns"), build_warped_stack(maps, t, a.n, flow));
  Manifest m;
  m.add("command", "warp");
  m.add("heatmaps", a.heatmaps);
  m.add("flow", a.flow.empty() ? "horn-schunck on " + a.frames : a.flow);
  if (!a.frames.empty()) {
    m.add("hs_lambda", std::to_string(a.hs.lambda));
    m.add("hs_iterations", std::to_string(a.hs.iterations));
    m.add("hs_levels", std::to_string(a.hs.levels));
  }
  m.add("n", std::to_string(a.n));
  m.add("heatmap_scale", std::to_string(scale));
  m.add("outputs", "warped_*.tns");
  m.write(a.out, cmd);
}

struct PoolArgs {
  std::string warped, mode = "parametric", weights, out;
  std::size_t scale = 0;
};

void pool_cmd(const PoolArgs& a, const std::string& cmd) {
  const PoolingType type = pooling_type_from_string(a.mode);
  std::optional<PoolingWeights> w;
  if (type == PoolingType::parametric) {
    if (a.weights.empty()) throw ConfigError("--mode parametric needs --weights");
    w = load_pooling_csv(a.weights);
  }
  const std::size_t scale = heatmap_scale_of(a.warped, a.scale);
  const std::vector<Tensor> stacks = load_indexed(a.warped, "warped");
  fs::create_directories(a.out);
  std::vector<Pose> poses;
  for (std::size_t t = 0; t < stacks.size(); ++t) {
    const Tensor pooled = pool(stacks[t], type, w ? &*w : nullptr);
    save_tensor(fs::path(a.out) / indexed_filename("pooled", t, ".tns"), pooled);
    poses.push_back(decode_argmax(pooled, static_cast<double>(scale)));
  }
  save_poses_csv(fs::path(a.out) / "poses.csv", poses, puppet_joints());
  Manifest m;
  m.add("command", "pool");
  m.add("warped", a.warped);
  m.add("mode", a.mode);
  if (w) m.add("weights", a.weights);
  m.add("heatmap_scale", std::to_string(scale));
  m.add("outputs", "pooled_*.tns poses.csv");
  m.write(a.out, cmd);
}

struct LearnPoolArgs {
  std::string warped, targets, out;
  double sigma = 1.5;
  std::size_t scale = 0;
  PoolingTrainParams params;
};

void learn_pool(const LearnPoolArgs& a, const std::string& cmd) {
  const std::vector<Tensor> stacks = load_indexed(a.warped, "warped");
  const JointSet joints = puppet_joints();
  const std::vector<Pose> poses = load_poses_csv(a.targets, joints);
  if (poses.size() != stacks.size())
    throw FormatError(std::to_string(stacks.size()) + " warped stacks but " + std::to_string(poses.size()) + " poses");
  const std::size_t scale = heatmap_scale_of(a.warped, a.scale);
  const Shape s = stacks.front().shape();
  if (s.n % 2 == 0) throw FormatError("warped stacks must hold 2n+1 frames");
  std::vector<PoolingSample> samples;
  for (std::size_t t = 0; t < stacks.size(); ++t)
    samples.push_back({stacks[t], synthesize_target(poses[t], a.sigma, s.h, s.w, static_cast<double>(scale))});
  const PoolingTrainResult r = learn_pooling_weights(samples, PoolingWeights::uniform((s.n - 1) / 2, s.c), a.params);
  fs::create_directories(a.out);
  save_pooling_csv(fs::path(a.out) / "weights.csv", r.weights, joints);
  Manifest m;
  m.add("command", "learn-pool");
  m.add("warped", a.warped);
  m.add("targets", a.targets);
  m.add("sigma", std::to_string(a.sigma));
  m.add("iterations", std::to_string(a.params.iterations));
  m.add("final_loss", std::to_string(r.loss.empty() ? 0.0 : r.loss.back()));
  m.add("outputs", "weights.csv");
  m.write(a.out, cmd);
}

struct EvalArgs {
  std::string pred, gt, out, method = "prediction";
  double d_max = 20.0, step = 1.0;
};

void eval_cmd(const EvalArgs& a, const std::string& cmd) {
  const JointSet joints = puppet_joints();
  const PckCurve c = with_joint_types(pck(load_poses_csv(a.pred, joints), load_poses_csv(a.gt, joints),
                                          d_grid(a.d_max, a.step), joints));
  emit_curves({{a.method, c}}, a.out, "pck", {"wrist", "elbow", "shoulder", "head"});
  Manifest m;
  m.add("command", "eval");
  m.add("predictions", a.pred);
  m.add("ground_truth", a.gt);
  m.add("d_max", std::to_string(a.d_max));
  m.add("step", std::to_string(a.step));
  m.add("outputs", "pck.csv pck.svg");
  m.write(a.out, cmd);
}

int fail(const std::string& kind, const std::string& msg) {
  std::string one_line = msg;
  for (char& ch : one_line)
    if (ch == '\n') ch = ' ';
  std::cerr << "error: " << kind << ": " << one_line << "\n";
  return kind == "usage" ? 2 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  std::string cmd_line;
  for (int i = 0; i < argc; ++i) cmd_line += (i ? " " : "") + std::string(argv[i]);

  CLI::App app{"flowpose: heatmap pose estimation with flow-warped temporal pooling"};
  app.require_subcommand(1);

  GenDataArgs gd;
  auto* c_gen = app.add_subcommand("gen-data", "render a synthetic puppet sequence with labels and true flow");
  c_gen->add_option("--spec", gd.spec, "puppet spec file (key = value)")->check(CLI::ExistingFile);
  c_gen->add_option("--out", gd.out, "output directory")->required();
  c_gen->add_option("--seed", gd.seed, "random seed");
  c_gen->add_option("--frames", gd.frames, "sequence length");
  c_gen->add_option("--flow-n", gd.flow_n, "write true flow for offsets 1..N in both directions");

  TrainArgs tr;
  auto* c_train = app.add_subcommand("train", "train a heatmap or coordinate network");
  c_train->add_option("--config", tr.config, "training config (key = value)")->check(CLI::ExistingFile);
  c_train->add_option("--data", tr.data, "dataset directory")->required()->check(CLI::ExistingDirectory);
  c_train->add_option("--out", tr.out, "output directory")->required();
  c_train->add_option("--seed", tr.seed, "override the config seed");

  InferArgs in;
  auto* c_infer = app.add_subcommand("infer", "per-frame heatmaps and decoded poses");
  c_infer->add_option("--checkpoint", in.checkpoint, "checkpoint file")->required()->check(CLI::ExistingFile);
  c_infer->add_option("--out", in.out, "output directory")->required();
  c_infer->add_option("inputs", in.inputs, "frame files or dataset directories")->required();

  WarpArgs wa;
  auto* c_warp = app.add_subcommand("warp", "warp neighbouring heatmaps onto each frame");
  c_warp->add_option("--heatmaps", wa.heatmaps, "directory of heatmap_*.tns")->required()->check(CLI::ExistingDirectory);
  c_warp->add_option("--flow", wa.flow, "directory of flow_*_*.flo")->check(CLI::ExistingDirectory);
  c_warp->add_option("--frames", wa.frames, "estimate flow from frame_*.tns in this directory")
      ->check(CLI::ExistingDirectory);
  c_warp->add_option("--out", wa.out, "output directory")->required();
  c_warp->add_option("--n", wa.n, "temporal half-window");
  c_warp->add_option("--scale", wa.scale, "input pixels per heatmap pixel (default: from manifest)");
  c_warp->add_option("--hs-lambda", wa.hs.lambda, "Horn-Schunck smoothness weight");
  c_warp->add_option("--hs-iterations", wa.hs.iterations, "Horn-Schunck iterations per level");
  c_warp->add_option("--hs-levels", wa.hs.levels, "pyramid levels");

  PoolArgs po;
  auto* c_pool = app.add_subcommand("pool", "pool warped stacks into one heatmap per frame");
  c_pool->add_option("--warped", po.warped, "directory of warped_*.tns")->required()->check(CLI::ExistingDirectory);
  c_pool->add_option("--mode", po.mode, "parametric, sum or max");
  c_pool->add_option("--weights", po.weights, "pooling weights CSV")->check(CLI::ExistingFile);
  c_pool->add_option("--scale", po.scale, "input pixels per heatmap pixel (default: from manifest)");
  c_pool->add_option("--out", po.out, "output directory")->required();

  LearnPoolArgs lp;
  auto* c_learn = app.add_subcommand("learn-pool", "fit parametric pooling weights");
  c_learn->add_option("--warped", lp.warped, "directory of warped_*.tns")->required()->check(CLI::ExistingDirectory);
  c_learn->add_option("--targets", lp.targets, "poses CSV for the same frames")->required()->check(CLI::ExistingFile);
  c_learn->add_option("--out", lp.out, "output directory")->required();
  c_learn->add_option("--sigma", lp.sigma, "target Gaussian sigma (heatmap pixels)");
  c_learn->add_option("--scale", lp.scale, "input pixels per heatmap pixel (default: from manifest)");
  c_learn->add_option("--iterations", lp.params.iterations, "gradient steps");

  EvalArgs ev;
  auto* c_eval = app.add_subcommand("eval", "accuracy vs distance curves");
  c_eval->add_option("--pred", ev.pred, "predicted poses CSV")->required()->check(CLI::ExistingFile);
  c_eval->add_option("--gt", ev.gt, "ground-truth poses CSV")->required()->check(CLI::ExistingFile);
  c_eval->add_option("--out", ev.out, "output directory")->required();
  c_eval->add_option("--d-max", ev.d_max, "largest distance threshold (input pixels)");
  c_eval->add_option("--step", ev.step, "threshold spacing");
  c_eval->add_option("--method", ev.method, "label for the curves");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail("usage", e.what());
  }

  try {
    if (*c_gen) gen_data(gd, cmd_line);
    else if (*c_train) train_cmd(tr, cmd_line);
    else if (*c_infer) infer(in, cmd_line);
    else if (*c_warp) warp(wa, cmd_line);
    else if (*c_pool) pool_cmd(po, cmd_line);
    else if (*c_learn) learn_pool(lp, cmd_line);
    else if (*c_eval) eval_cmd(ev, cmd_line);
  } catch (const FormatError& e) {
    return fail("format", e.what());
  } catch (const ConfigError& e) {
    return fail("config", e.what());
  } catch (const DivergenceError& e) {
    return fail("divergence", e.what());
  } catch (const std::exception& e) {
    return fail("runtime", e.what());
  }
  return 0;
}
