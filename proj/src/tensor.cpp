#include "vpseg/tensor.hpp"

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace vpseg {

void Tensor::init_shape(const std::vector<int>& shape) {
  if (shape.empty() || shape.size() > 3) {
    throw std::invalid_argument("tensor rank must be 1..3, got " +
                                std::to_string(shape.size()));
  }
  std::size_t count = 1;
  for (std::size_t d = 0; d < shape.size(); ++d) {
    if (shape[d] < 1) {
      throw std::invalid_argument("tensor extents must be >= 1");
    }
    extents_[d] = static_cast<std::size_t>(shape[d]);
    count *= extents_[d];
  }
  for (std::size_t d = shape.size(); d < 3; ++d) extents_[d] = 1;
  rank_ = static_cast<int>(shape.size());
  data_.assign(count, 0.0f);
}

Tensor::Tensor(std::initializer_list<int> shape) { init_shape(std::vector<int>(shape)); }
Tensor::Tensor(const std::vector<int>& shape) { init_shape(shape); }

Tensor Tensor::full(std::initializer_list<int> shape, float value) {
  Tensor t(shape);
  for (auto& v : t.data_) v = value;
  return t;
}

Tensor Tensor::from_data(std::vector<int> shape, std::vector<float> data) {
  Tensor t(shape);
  if (t.data_.size() != data.size()) {
    throw std::invalid_argument("from_data: " + std::to_string(data.size()) +
                                " values for shape " + t.shape_string());
  }
  t.data_ = std::move(data);
  return t;
}

Tensor Tensor::from_rows(std::initializer_list<std::initializer_list<float>> rows) {
  const int m = static_cast<int>(rows.size());
  const int n = m > 0 ? static_cast<int>(rows.begin()->size()) : 0;
  Tensor t({m, n});
  int i = 0;
  for (const auto& row : rows) {
    if (static_cast<int>(row.size()) != n) {
      throw std::invalid_argument("from_rows: ragged rows");
    }
    int j = 0;
    for (float v : row) t.at(i, j++) = v;
    ++i;
  }
  return t;
}

std::vector<int> Tensor::shape() const {
  std::vector<int> s(static_cast<std::size_t>(rank_));
  for (int d = 0; d < rank_; ++d) s[static_cast<std::size_t>(d)] = extent(d);
  return s;
}

std::string Tensor::shape_string() const {
  std::ostringstream os;
  os << '[';
  for (int d = 0; d < rank_; ++d) {
    if (d) os << 'x';
    os << extent(d);
  }
  os << ']';
  return os.str();
}

Tensor Tensor::reshaped(const std::vector<int>& shape) const {
  Tensor t(shape);
  if (t.size() != size()) {
    throw std::invalid_argument("reshape: element count mismatch, " + shape_string() +
                                " -> " + t.shape_string());
  }
  t.data_ = data_;
  return t;
}

bool Tensor::same_shape(const Tensor& other) const {
  return rank_ == other.rank_ && extents_ == other.extents_;
}

bool Tensor::all_finite() const {
  for (float v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

// ---- core operations ------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2) {
    throw std::invalid_argument("matmul: expected rank-2 operands, got " +
                                a.shape_string() + " and " + b.shape_string());
  }
  if (a.extent(1) != b.extent(0)) {
    throw std::invalid_argument("matmul: inner extents differ: " + a.shape_string() +
                                " vs " + b.shape_string());
  }
  const int m = a.extent(0), k = a.extent(1), n = b.extent(1);
  Tensor c({m, n});
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < n; ++j) {
      double acc = 0.0;
      for (int p = 0; p < k; ++p) {
        acc += static_cast<double>(a.at(i, p)) * static_cast<double>(b.at(p, j));
      }
      c.at(i, j) = static_cast<float>(acc);
    }
  }
  return c;
}

Tensor transpose(const Tensor& a) {
  if (a.rank() != 2) {
    throw std::invalid_argument("transpose: expected rank-2, got " + a.shape_string());
  }
  Tensor t({a.extent(1), a.extent(0)});
  for (int i = 0; i < a.extent(0); ++i) {
    for (int j = 0; j < a.extent(1); ++j) t.at(j, i) = a.at(i, j);
  }
  return t;
}

Tensor softmax_rows(const Tensor& x) {
  if (x.rank() != 2) {
    throw std::invalid_argument("softmax_rows: expected rank-2, got " + x.shape_string());
  }
  if (!x.all_finite()) {
    throw std::invalid_argument("softmax_rows: non-finite input");
  }
  const int m = x.extent(0), n = x.extent(1);
  Tensor y({m, n});
  for (int i = 0; i < m; ++i) {
    float row_max = x.at(i, 0);
    for (int j = 1; j < n; ++j) row_max = std::max(row_max, x.at(i, j));
    double denom = 0.0;
    for (int j = 0; j < n; ++j) {
      const double e = std::exp(static_cast<double>(x.at(i, j)) - row_max);
      y.at(i, j) = static_cast<float>(e);
      denom += e;
    }
    for (int j = 0; j < n; ++j) {
      y.at(i, j) = static_cast<float>(static_cast<double>(y.at(i, j)) / denom);
    }
  }
  return y;
}

Tensor cross_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                       const Tensor* bias, bool residual) {
  if (q.rank() != 2 || k.rank() != 2 || v.rank() != 2) {
    throw std::invalid_argument("cross_attention: rank-2 operands required");
  }
  const int c = q.extent(0);
  if (k.extent(0) != c || v.extent(0) != c) {
    throw std::invalid_argument("cross_attention: channel extents differ: q " +
                                q.shape_string() + ", k " + k.shape_string() + ", v " +
                                v.shape_string());
  }
  const int nk = k.extent(1);
  if (v.extent(1) != nk) {
    throw std::invalid_argument("cross_attention: key/value counts differ: " +
                                k.shape_string() + " vs " + v.shape_string());
  }
  if (bias) {
    const int blen = static_cast<int>(bias->size());
    if (blen != nk) {
      throw std::invalid_argument("cross_attention: bias length " + std::to_string(blen) +
                                  " != key count " + std::to_string(nk));
    }
    if (!bias->all_finite()) {
      throw std::invalid_argument("cross_attention: non-finite bias");
    }
  }
  const float scale = 1.0f / std::sqrt(static_cast<float>(c));
  Tensor scores = affine(matmul(transpose(q), k), scale, 0.0f);  // Nq x Nk
  if (bias) {
    for (int i = 0; i < scores.extent(0); ++i) {
      for (int j = 0; j < nk; ++j) scores.at(i, j) += bias->at(j);
    }
  }
  const Tensor weights = softmax_rows(scores);
  Tensor out = matmul(v, transpose(weights));  // c x Nq
  if (residual) out = add(out, q);
  return out;
}

namespace {

// Shared sampling rule so forward resize and its tape backward agree exactly.
struct LinearSample {
  int lo, hi;
  float w_hi;  // weight of hi; lo gets 1 - w_hi
};

LinearSample resize_sample(int out_index, int in_extent, int out_extent) {
  const double scale = static_cast<double>(in_extent) / static_cast<double>(out_extent);
  double src = (out_index + 0.5) * scale - 0.5;
  if (src < 0.0) src = 0.0;
  const double limit = static_cast<double>(in_extent - 1);
  if (src > limit) src = limit;
  LinearSample s;
  s.lo = static_cast<int>(src);
  s.hi = std::min(s.lo + 1, in_extent - 1);
  s.w_hi = static_cast<float>(src - s.lo);
  return s;
}

}  // namespace

Tensor bilinear_resize(const Tensor& x, int out_h, int out_w) {
  if (x.rank() != 2 && x.rank() != 3) {
    throw std::invalid_argument("bilinear_resize: expected rank-2/3, got " + x.shape_string());
  }
  if (out_h < 1 || out_w < 1) {
    throw std::invalid_argument("bilinear_resize: target extents must be >= 1, got " +
                                std::to_string(out_h) + "x" + std::to_string(out_w));
  }
  const bool rank2 = x.rank() == 2;
  const int c = rank2 ? 1 : x.extent(0);
  const int in_h = rank2 ? x.extent(0) : x.extent(1);
  const int in_w = rank2 ? x.extent(1) : x.extent(2);
  if (in_h == out_h && in_w == out_w) return x;  // exact identity

  Tensor y = rank2 ? Tensor({out_h, out_w}) : Tensor({c, out_h, out_w});
  const float* src = x.data();
  float* dst = y.data();
  for (int ch = 0; ch < c; ++ch) {
    const float* plane = src + static_cast<std::size_t>(ch) * in_h * in_w;
    for (int i = 0; i < out_h; ++i) {
      const LinearSample sy = resize_sample(i, in_h, out_h);
      for (int j = 0; j < out_w; ++j) {
        const LinearSample sx = resize_sample(j, in_w, out_w);
        const float top = plane[sy.lo * in_w + sx.lo] * (1.0f - sx.w_hi) +
                          plane[sy.lo * in_w + sx.hi] * sx.w_hi;
        const float bot = plane[sy.hi * in_w + sx.lo] * (1.0f - sx.w_hi) +
                          plane[sy.hi * in_w + sx.hi] * sx.w_hi;
        dst[(static_cast<std::size_t>(ch) * out_h + i) * out_w + j] =
            top * (1.0f - sy.w_hi) + bot * sy.w_hi;
      }
    }
  }
  return y;
}

namespace {

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (!a.same_shape(b)) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch, " + a.shape_string() +
                                " vs " + b.shape_string());
  }
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  Tensor c = a;
  for (std::size_t i = 0; i < c.size(); ++i) c.data()[i] += b.data()[i];
  return c;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  Tensor c = a;
  for (std::size_t i = 0; i < c.size(); ++i) c.data()[i] -= b.data()[i];
  return c;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  Tensor c = a;
  for (std::size_t i = 0; i < c.size(); ++i) c.data()[i] *= b.data()[i];
  return c;
}

Tensor affine(const Tensor& a, float scale, float shift) {
  Tensor c = a;
  for (std::size_t i = 0; i < c.size(); ++i) c.data()[i] = c.data()[i] * scale + shift;
  return c;
}

// ---- CTNSR v1 ---------------------------------------------------------------

namespace {

void put_u32_le(std::ostream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>((v >> 8) & 0xff),
                        static_cast<unsigned char>((v >> 16) & 0xff),
                        static_cast<unsigned char>((v >> 24) & 0xff)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32_le(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

}  // namespace

void save_ctnsr(const Tensor& t, const std::string& path) {
  if (t.empty()) throw std::invalid_argument("save_ctnsr: empty tensor");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("save_ctnsr: cannot open " + path);
  os.write("CTNSR", 5);
  const unsigned char version = 1;
  const unsigned char rank = static_cast<unsigned char>(t.rank());
  os.write(reinterpret_cast<const char*>(&version), 1);
  os.write(reinterpret_cast<const char*>(&rank), 1);
  for (int d = 0; d < t.rank(); ++d) put_u32_le(os, static_cast<std::uint32_t>(t.extent(d)));
  static_assert(sizeof(float) == 4);
  for (std::size_t i = 0; i < t.size(); ++i) {
    std::uint32_t bits;
    std::memcpy(&bits, &t.data()[i], 4);
    put_u32_le(os, bits);
  }
  if (!os) throw std::runtime_error("save_ctnsr: write failed for " + path);
}

Tensor load_ctnsr(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("load_ctnsr: cannot open " + path);
  char magic[5];
  is.read(magic, 5);
  if (!is || std::memcmp(magic, "CTNSR", 5) != 0) {
    throw std::runtime_error("load_ctnsr: bad magic in " + path);
  }
  unsigned char version = 0, rank = 0;
  is.read(reinterpret_cast<char*>(&version), 1);
  is.read(reinterpret_cast<char*>(&rank), 1);
  if (version != 1) throw std::runtime_error("load_ctnsr: unsupported version");
  if (rank < 1 || rank > 3) throw std::runtime_error("load_ctnsr: bad rank");
  std::vector<int> shape(rank);
  for (auto& e : shape) e = static_cast<int>(get_u32_le(is));
  Tensor t(shape);
  for (std::size_t i = 0; i < t.size(); ++i) {
    const std::uint32_t bits = get_u32_le(is);
    std::memcpy(&t.data()[i], &bits, 4);
  }
  if (!is) throw std::runtime_error("load_ctnsr: truncated file " + path);
  return t;
}

}  // namespace vpseg
