#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "flowpose/binary_io.hpp"
#include "flowpose/error.hpp"

namespace flowpose {

/// NCHW extents of a dense 4-D tensor.
struct Shape {
  std::size_t n = 0, c = 0, h = 0, w = 0;

  constexpr std::size_t size() const { return n * c * h * w; }
  constexpr std::size_t plane() const { return h * w; }
  friend constexpr bool operator==(const Shape&, const Shape&) = default;

  std::string str() const {
    return "(" + std::to_string(n) + "," + std::to_string(c) + "," + std::to_string(h) + "," +
           std::to_string(w) + ")";
  }
};

/// Dense row-major 4-D array of doubles. Value type; gradients live on the tape.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0) : shape_(shape), data_(shape.size(), fill) {}
  Tensor(Shape shape, std::vector<double> data) : shape_(shape), data_(std::move(data)) {
    if (data_.size() != shape_.size())
      throw std::invalid_argument("tensor data length " + std::to_string(data_.size()) +
                                  " does not match shape " + shape_.str());
  }

  const Shape& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  double* ptr() { return data_.data(); }
  const double* ptr() const { return data_.data(); }
  std::vector<double>& storage() { return data_; }
  const std::vector<double>& storage() const { return data_; }

  std::size_t index(std::size_t n, std::size_t c, std::size_t y, std::size_t x) const {
    return ((n * shape_.c + c) * shape_.h + y) * shape_.w + x;
  }
  double& at(std::size_t n, std::size_t c, std::size_t y, std::size_t x) { return data_[index(n, c, y, x)]; }
  double at(std::size_t n, std::size_t c, std::size_t y, std::size_t x) const { return data_[index(n, c, y, x)]; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  /// Pointer to the (n, c) spatial plane.
  double* plane(std::size_t n, std::size_t c) { return data_.data() + (n * shape_.c + c) * shape_.plane(); }
  const double* plane(std::size_t n, std::size_t c) const {
    return data_.data() + (n * shape_.c + c) * shape_.plane();
  }

  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  Shape shape_{};
  std::vector<double> data_;
};

/// Copies sample `n` of a batch into a (1, C, H, W) tensor.
inline Tensor batch_item(const Tensor& t, std::size_t n) {
  const Shape& s = t.shape();
  if (n >= s.n) throw std::out_of_range("batch index out of range");
  Tensor out({1, s.c, s.h, s.w});
  std::copy_n(t.ptr() + n * s.c * s.plane(), s.c * s.plane(), out.ptr());
  return out;
}

/// Stacks equally-shaped (1, C, H, W) tensors along the batch axis.
inline Tensor stack_batch(std::span<const Tensor> items) {
  if (items.empty()) throw std::invalid_argument("stack_batch: empty input");
  const Shape s = items.front().shape();
  if (s.n != 1) throw std::invalid_argument("stack_batch: items must have batch 1");
  Tensor out({items.size(), s.c, s.h, s.w});
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (items[i].shape() != s) throw std::invalid_argument("stack_batch: shape mismatch");
    std::copy_n(items[i].ptr(), s.size(), out.ptr() + i * s.size());
  }
  return out;
}

// Binary tensor format: "TNSR", four u32 dims (B, C, H, W), then B*C*H*W f64,
// everything little-endian.
inline void write_tensor(std::ostream& os, const Tensor& t) {
  os.write("TNSR", 4);
  const Shape& s = t.shape();
  for (std::size_t d : {s.n, s.c, s.h, s.w}) {
    if (d > UINT32_MAX) throw std::invalid_argument("tensor dimension exceeds u32");
    binary::write_u32(os, static_cast<std::uint32_t>(d));
  }
  for (double v : t.data()) binary::write_f64(os, v);
}

inline Tensor read_tensor(std::istream& is) {
  binary::expect_magic(is, "TNSR", "tensor");
  Shape s;
  s.n = binary::read_u32(is, "tensor header");
  s.c = binary::read_u32(is, "tensor header");
  s.h = binary::read_u32(is, "tensor header");
  s.w = binary::read_u32(is, "tensor header");
  Tensor t(s);
  for (double& v : t.storage()) v = binary::read_f64(is, "tensor data");
  return t;
}

inline void save_tensor(const std::filesystem::path& path, const Tensor& t) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open for writing: " + path.string());
  write_tensor(os, t);
  if (!os) throw std::runtime_error("write failed: " + path.string());
}

inline Tensor load_tensor(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open: " + path.string());
  return read_tensor(is);
}

}  // namespace flowpose
