#pragma once

#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>

#include "flowpose/binary_io.hpp"
#include "flowpose/error.hpp"
#include "flowpose/network.hpp"
#include "flowpose/temporal.hpp"
#include "flowpose/tensor.hpp"

namespace flowpose {

/// "FPNET", u32 length + canonical config text, then every parameter tensor in
/// declaration order. If the text carries a "pooling_n N" line a (1,1,2N+1,k)
/// pooling weight tensor follows.
struct Checkpoint {
  Network network;
  std::optional<PoolingWeights> pooling;
};

inline void write_checkpoint(std::ostream& os, const Network& net, const PoolingWeights* pooling = nullptr) {
  std::string text = to_text(net.config());
  if (pooling) text += "pooling_n " + std::to_string(pooling->n()) + "\n";
  os.write("FPNET", 5);
  binary::write_u32(os, static_cast<std::uint32_t>(text.size()));
  os.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& p : net.parameters()) write_tensor(os, p.value);
  if (pooling) write_tensor(os, pooling->tensor());
}

inline Checkpoint read_checkpoint(std::istream& is) {
  binary::expect_magic(is, "FPNET", "checkpoint");
  const std::uint32_t len = binary::read_u32(is, "checkpoint config length");
  if (len > (1u << 24)) throw FormatError("checkpoint config text is implausibly long");
  std::string text(len, '\0');
  is.read(text.data(), len);
  if (static_cast<std::uint32_t>(is.gcount()) != len) throw FormatError("truncated file while reading checkpoint config");

  std::optional<std::size_t> pooling_n;
  std::string net_text;
  std::istringstream lines(text);
  std::string line;
  while (std::getline(lines, line)) {
    if (line.rfind("pooling_n ", 0) == 0) {
      pooling_n = std::stoul(line.substr(10));
      continue;
    }
    net_text += line + "\n";
  }
  NetworkConfig cfg = config_from_text(net_text);
  try {
    validate(cfg);
  } catch (const ConfigError& e) {
    throw FormatError(std::string("checkpoint holds an invalid network config: ") + e.what());
  }
  Network shape_ref(cfg, 0);
  std::vector<Parameter> params;
  for (const auto& p : shape_ref.parameters()) params.push_back({p.name, read_tensor(is)});
  Checkpoint ck{Network(cfg, std::move(params)), std::nullopt};
  if (pooling_n) {
    PoolingWeights w = PoolingWeights::from_tensor(read_tensor(is));
    if (w.n() != *pooling_n || w.joints() != cfg.joints) throw FormatError("checkpoint pooling weights have the wrong shape");
    ck.pooling = std::move(w);
  }
  return ck;
}

inline void save_checkpoint(const std::filesystem::path& path, const Network& net,
                            const PoolingWeights* pooling = nullptr) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  write_checkpoint(os, net, pooling);
  if (!os) throw std::runtime_error("write failed: " + path.string());
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  return read_checkpoint(is);
}

}  // namespace flowpose
