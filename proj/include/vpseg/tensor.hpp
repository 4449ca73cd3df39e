#pragma once

#include <array>
#include <cstddef>
#include <initializer_list>
#include <string>
#include <vector>

namespace vpseg {

// Dense rank-1..3 tensor of 32-bit floats, row-major. Reductions accumulate
// in 64-bit with a fixed sequential order so results are bit-reproducible.
class Tensor {
 public:
  Tensor() = default;  // empty sentinel (rank 0), used for lazy gradients

  explicit Tensor(std::initializer_list<int> shape);
  explicit Tensor(const std::vector<int>& shape);

  static Tensor zeros(std::initializer_list<int> shape) { return Tensor(shape); }
  static Tensor full(std::initializer_list<int> shape, float value);
  static Tensor from_data(std::vector<int> shape, std::vector<float> data);
  // Row-major 2-D helper for tests and small fixtures.
  static Tensor from_rows(std::initializer_list<std::initializer_list<float>> rows);

  bool empty() const { return rank_ == 0; }
  int rank() const { return rank_; }
  int extent(int d) const { return extents_[static_cast<std::size_t>(d)]; }
  std::size_t size() const { return data_.size(); }
  std::vector<int> shape() const;
  std::string shape_string() const;

  float* data() { return data_.data(); }
  const float* data() const { return data_.data(); }

  float& at(int i) { return data_[static_cast<std::size_t>(i)]; }
  float at(int i) const { return data_[static_cast<std::size_t>(i)]; }
  float& at(int i, int j) { return data_[static_cast<std::size_t>(i) * extents_[1] + j]; }
  float at(int i, int j) const { return data_[static_cast<std::size_t>(i) * extents_[1] + j]; }
  float& at(int i, int j, int k) {
    return data_[(static_cast<std::size_t>(i) * extents_[1] + j) * extents_[2] + k];
  }
  float at(int i, int j, int k) const {
    return data_[(static_cast<std::size_t>(i) * extents_[1] + j) * extents_[2] + k];
  }

  // Same data, new shape metadata; element count must match.
  Tensor reshaped(const std::vector<int>& shape) const;

  bool same_shape(const Tensor& other) const;
  bool all_finite() const;

 private:
  void init_shape(const std::vector<int>& shape);

  int rank_ = 0;
  std::array<std::size_t, 3> extents_ = {1, 1, 1};
  std::vector<float> data_;
};

// ---- core operations ------------------------------------------------------

// Standard m x k by k x n product, sequential row-major accumulation in f64.
Tensor matmul(const Tensor& a, const Tensor& b);

Tensor transpose(const Tensor& a);

// Row-wise softmax with per-row max subtraction. Throws on non-finite input.
Tensor softmax_rows(const Tensor& x);

// Softmax(q^T k / sqrt(c) + bias) v^T, transposed back to c x Nq.
// bias (optional, length Nk) is added to every query row of the score matrix.
// With residual set, q is added to the output (the CA_E form).
Tensor cross_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                       const Tensor* bias, bool residual);

// Bilinear resize of the trailing two dims, align-corners-false convention:
// source sample for output index i is (i + 0.5) * in/out - 0.5, clamped.
// Accepts rank-2 (h x w) or rank-3 (c x h x w) input.
Tensor bilinear_resize(const Tensor& x, int out_h, int out_w);

// Elementwise helpers.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor affine(const Tensor& a, float scale, float shift);

// ---- CTNSR v1 file format -------------------------------------------------
// 5-byte magic "CTNSR", 1-byte version, 1-byte rank, rank x u32 LE extents,
// row-major f32 LE payload. Round-trips bit-exactly.

void save_ctnsr(const Tensor& t, const std::string& path);
Tensor load_ctnsr(const std::string& path);

}  // namespace vpseg
