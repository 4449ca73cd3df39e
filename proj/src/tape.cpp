#include "vpseg/tape.hpp"

#include <cmath>
#include <stdexcept>

namespace vpseg {

int Tape::add_node(Tensor value, bool requires_grad, std::function<void(Tape&, int)> backward) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return static_cast<int>(nodes_.size()) - 1;
}

void Tape::accumulate(int id, const Tensor& g) {
  Node& n = node(id);
  if (!n.requires_grad) return;
  if (n.grad.empty()) {
    n.grad = Tensor(n.value.shape());
  }
  for (std::size_t i = 0; i < g.size(); ++i) n.grad.data()[i] += g.data()[i];
}

void Tape::backward(int root) {
  Node& r = node(root);
  if (r.value.size() != 1) {
    throw std::invalid_argument("backward: root must be scalar, got " + r.value.shape_string());
  }
  if (r.grad.empty()) r.grad = Tensor(r.value.shape());
  r.grad.data()[0] = 1.0f;
  for (int id = root; id >= 0; --id) {
    Node& n = node(id);
    if (n.grad.empty() || !n.backward) continue;
    n.backward(*this, id);
  }
}

namespace ad {

namespace {

bool any_requires(std::initializer_list<Var> vars) {
  for (const Var& v : vars) {
    if (v.tape->node(v.id).requires_grad) return true;
  }
  return false;
}

}  // namespace

Var leaf(Tape& tape, Tensor value, bool requires_grad) {
  return {&tape, tape.add_node(std::move(value), requires_grad, nullptr)};
}

Var constant(Tape& tape, Tensor value) { return leaf(tape, std::move(value), false); }

Var matmul(Var a, Var b) {
  Tape& t = *a.tape;
  Tensor out = vpseg::matmul(t.value(a.id), t.value(b.id));
  const int aid = a.id, bid = b.id;
  const int id = t.add_node(std::move(out), any_requires({a, b}), [aid, bid](Tape& tp, int self) {
    const Tensor& g = tp.grad(self);
    tp.accumulate(aid, vpseg::matmul(g, vpseg::transpose(tp.value(bid))));
    tp.accumulate(bid, vpseg::matmul(vpseg::transpose(tp.value(aid)), g));
  });
  return {&t, id};
}

Var transpose(Var a) {
  Tape& t = *a.tape;
  const int aid = a.id;
  const int id = t.add_node(vpseg::transpose(t.value(a.id)), any_requires({a}),
                            [aid](Tape& tp, int self) {
                              tp.accumulate(aid, vpseg::transpose(tp.grad(self)));
                            });
  return {&t, id};
}

Var add(Var a, Var b) {
  Tape& t = *a.tape;
  const int aid = a.id, bid = b.id;
  const int id = t.add_node(vpseg::add(t.value(a.id), t.value(b.id)), any_requires({a, b}),
                            [aid, bid](Tape& tp, int self) {
                              tp.accumulate(aid, tp.grad(self));
                              tp.accumulate(bid, tp.grad(self));
                            });
  const double sa = t.node(a.id).scalar64, sb = t.node(b.id).scalar64;
  if (std::isfinite(sa) && std::isfinite(sb)) t.node(id).scalar64 = sa + sb;
  return {&t, id};
}

Var sub(Var a, Var b) {
  Tape& t = *a.tape;
  const int aid = a.id, bid = b.id;
  const int id = t.add_node(vpseg::sub(t.value(a.id), t.value(b.id)), any_requires({a, b}),
                            [aid, bid](Tape& tp, int self) {
                              tp.accumulate(aid, tp.grad(self));
                              tp.accumulate(bid, vpseg::affine(tp.grad(self), -1.0f, 0.0f));
                            });
  return {&t, id};
}

Var mul(Var a, Var b) {
  Tape& t = *a.tape;
  const int aid = a.id, bid = b.id;
  const int id = t.add_node(vpseg::mul(t.value(a.id), t.value(b.id)), any_requires({a, b}),
                            [aid, bid](Tape& tp, int self) {
                              tp.accumulate(aid, vpseg::mul(tp.grad(self), tp.value(bid)));
                              tp.accumulate(bid, vpseg::mul(tp.grad(self), tp.value(aid)));
                            });
  return {&t, id};
}

Var affine(Var a, float scale, float shift) {
  Tape& t = *a.tape;
  const int aid = a.id;
  const int id = t.add_node(vpseg::affine(t.value(a.id), scale, shift), any_requires({a}),
                            [aid, scale](Tape& tp, int self) {
                              tp.accumulate(aid, vpseg::affine(tp.grad(self), scale, 0.0f));
                            });
  const double sa = t.node(a.id).scalar64;
  if (std::isfinite(sa)) {
    t.node(id).scalar64 = sa * static_cast<double>(scale) + static_cast<double>(shift);
  }
  return {&t, id};
}

Var add_row_broadcast(Var a, Var bias) {
  Tape& t = *a.tape;
  const Tensor& av = t.value(a.id);
  const Tensor& bv = t.value(bias.id);
  if (av.rank() != 2 || static_cast<int>(bv.size()) != av.extent(1)) {
    throw std::invalid_argument("add_row_broadcast: bias length " +
                                std::to_string(bv.size()) + " vs " + av.shape_string());
  }
  Tensor out = av;
  for (int i = 0; i < av.extent(0); ++i) {
    for (int j = 0; j < av.extent(1); ++j) out.at(i, j) += bv.at(j);
  }
  const int aid = a.id, bid = bias.id;
  const int id = t.add_node(std::move(out), any_requires({a, bias}), [aid, bid](Tape& tp, int self) {
    const Tensor& g = tp.grad(self);
    tp.accumulate(aid, g);
    Tensor gb(tp.value(bid).shape());
    for (int i = 0; i < g.extent(0); ++i) {
      for (int j = 0; j < g.extent(1); ++j) gb.at(j) += g.at(i, j);
    }
    tp.accumulate(bid, gb);
  });
  return {&t, id};
}

Var add_col_broadcast(Var a, Var bias) {
  Tape& t = *a.tape;
  const Tensor& av = t.value(a.id);
  const Tensor& bv = t.value(bias.id);
  if (av.rank() != 2 || static_cast<int>(bv.size()) != av.extent(0)) {
    throw std::invalid_argument("add_col_broadcast: bias length " +
                                std::to_string(bv.size()) + " vs " + av.shape_string());
  }
  Tensor out = av;
  for (int i = 0; i < av.extent(0); ++i) {
    for (int j = 0; j < av.extent(1); ++j) out.at(i, j) += bv.at(i);
  }
  const int aid = a.id, bid = bias.id;
  const int id = t.add_node(std::move(out), any_requires({a, bias}), [aid, bid](Tape& tp, int self) {
    const Tensor& g = tp.grad(self);
    tp.accumulate(aid, g);
    Tensor gb(tp.value(bid).shape());
    for (int i = 0; i < g.extent(0); ++i) {
      for (int j = 0; j < g.extent(1); ++j) gb.at(i) += g.at(i, j);
    }
    tp.accumulate(bid, gb);
  });
  return {&t, id};
}

Var softmax_rows(Var x) {
  Tape& t = *x.tape;
  Tensor y = vpseg::softmax_rows(t.value(x.id));
  const int xid = x.id;
  const int id = t.add_node(std::move(y), any_requires({x}), [xid](Tape& tp, int self) {
    const Tensor& y = tp.value(self);
    const Tensor& g = tp.grad(self);
    Tensor gx(y.shape());
    for (int i = 0; i < y.extent(0); ++i) {
      double dot = 0.0;
      for (int j = 0; j < y.extent(1); ++j) {
        dot += static_cast<double>(g.at(i, j)) * static_cast<double>(y.at(i, j));
      }
      for (int j = 0; j < y.extent(1); ++j) {
        gx.at(i, j) = y.at(i, j) * (g.at(i, j) - static_cast<float>(dot));
      }
    }
    tp.accumulate(xid, gx);
  });
  return {&t, id};
}

Var logistic(Var x) {
  Tape& t = *x.tape;
  const Tensor& xv = t.value(x.id);
  Tensor y = xv;
  for (std::size_t i = 0; i < y.size(); ++i) {
    y.data()[i] = static_cast<float>(1.0 / (1.0 + std::exp(-static_cast<double>(y.data()[i]))));
  }
  const int xid = x.id;
  const int id = t.add_node(std::move(y), any_requires({x}), [xid](Tape& tp, int self) {
    const Tensor& y = tp.value(self);
    Tensor gx = tp.grad(self);
    for (std::size_t i = 0; i < gx.size(); ++i) {
      gx.data()[i] *= y.data()[i] * (1.0f - y.data()[i]);
    }
    tp.accumulate(xid, gx);
  });
  return {&t, id};
}

Var reshape(Var a, const std::vector<int>& shape) {
  Tape& t = *a.tape;
  const int aid = a.id;
  const std::vector<int> old_shape = t.value(a.id).shape();
  const int id = t.add_node(t.value(a.id).reshaped(shape), any_requires({a}),
                            [aid, old_shape](Tape& tp, int self) {
                              tp.accumulate(aid, tp.grad(self).reshaped(old_shape));
                            });
  return {&t, id};
}

Var gather_cols(Var a, std::vector<int> idx) {
  Tape& t = *a.tape;
  const Tensor& av = t.value(a.id);
  if (av.rank() != 2) throw std::invalid_argument("gather_cols: rank-2 input required");
  for (int j : idx) {
    if (j < 0 || j >= av.extent(1)) {
      throw std::invalid_argument("gather_cols: index " + std::to_string(j) +
                                  " outside " + av.shape_string());
    }
  }
  const int rows = av.extent(0);
  Tensor out({rows, static_cast<int>(idx.size())});
  for (int i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < idx.size(); ++j) {
      out.at(i, static_cast<int>(j)) = av.at(i, idx[j]);
    }
  }
  const int aid = a.id;
  const int id = t.add_node(std::move(out), any_requires({a}),
                            [aid, idx = std::move(idx)](Tape& tp, int self) {
                              const Tensor& g = tp.grad(self);
                              Tensor ga(tp.value(aid).shape());
                              for (int i = 0; i < g.extent(0); ++i) {
                                for (std::size_t j = 0; j < idx.size(); ++j) {
                                  ga.at(i, idx[j]) += g.at(i, static_cast<int>(j));
                                }
                              }
                              tp.accumulate(aid, ga);
                            });
  return {&t, id};
}

Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: no parts");
  Tape& t = *parts[0].tape;
  const int rows = t.value(parts[0].id).extent(0);
  int cols = 0;
  bool grad = false;
  for (const Var& p : parts) {
    const Tensor& v = t.value(p.id);
    if (v.rank() != 2 || v.extent(0) != rows) {
      throw std::invalid_argument("concat_cols: row extents differ");
    }
    cols += v.extent(1);
    grad = grad || t.node(p.id).requires_grad;
  }
  Tensor out({rows, cols});
  int off = 0;
  for (const Var& p : parts) {
    const Tensor& v = t.value(p.id);
    for (int i = 0; i < rows; ++i) {
      for (int j = 0; j < v.extent(1); ++j) out.at(i, off + j) = v.at(i, j);
    }
    off += v.extent(1);
  }
  std::vector<int> ids;
  ids.reserve(parts.size());
  for (const Var& p : parts) ids.push_back(p.id);
  const int id = t.add_node(std::move(out), grad, [ids](Tape& tp, int self) {
    const Tensor& g = tp.grad(self);
    int off = 0;
    for (int pid : ids) {
      const Tensor& v = tp.value(pid);
      Tensor gp(v.shape());
      for (int i = 0; i < v.extent(0); ++i) {
        for (int j = 0; j < v.extent(1); ++j) gp.at(i, j) = g.at(i, off + j);
      }
      tp.accumulate(pid, gp);
      off += v.extent(1);
    }
  });
  return {&t, id};
}

Var bilinear_resize(Var x, int out_h, int out_w) {
  Tape& t = *x.tape;
  const Tensor& xv = t.value(x.id);
  Tensor out = vpseg::bilinear_resize(xv, out_h, out_w);
  const int xid = x.id;
  const int id = t.add_node(std::move(out), any_requires({x}),
                            [xid, out_h, out_w](Tape& tp, int self) {
    const Tensor& xin = tp.value(xid);
    const Tensor& g = tp.grad(self);
    const bool rank2 = xin.rank() == 2;
    const int c = rank2 ? 1 : xin.extent(0);
    const int in_h = rank2 ? xin.extent(0) : xin.extent(1);
    const int in_w = rank2 ? xin.extent(1) : xin.extent(2);
    Tensor gx(xin.shape());
    if (in_h == out_h && in_w == out_w) {
      tp.accumulate(xid, g);
      return;
    }
    // Scatter each output gradient back through the same four taps the
    // forward pass read. Sampling math mirrors bilinear_resize exactly.
    auto sample = [](int oi, int in_e, int out_e, int& lo, int& hi, float& w_hi) {
      const double scale = static_cast<double>(in_e) / static_cast<double>(out_e);
      double src = (oi + 0.5) * scale - 0.5;
      if (src < 0.0) src = 0.0;
      if (src > in_e - 1) src = in_e - 1;
      lo = static_cast<int>(src);
      hi = lo + 1 < in_e ? lo + 1 : in_e - 1;
      w_hi = static_cast<float>(src - lo);
    };
    for (int ch = 0; ch < c; ++ch) {
      float* gp = gx.data() + static_cast<std::size_t>(ch) * in_h * in_w;
      const float* go = g.data() + static_cast<std::size_t>(ch) * out_h * out_w;
      for (int i = 0; i < out_h; ++i) {
        int ylo, yhi;
        float wy;
        sample(i, in_h, out_h, ylo, yhi, wy);
        for (int j = 0; j < out_w; ++j) {
          int xlo, xhi;
          float wx;
          sample(j, in_w, out_w, xlo, xhi, wx);
          const float gv = go[i * out_w + j];
          gp[ylo * in_w + xlo] += gv * (1.0f - wy) * (1.0f - wx);
          gp[ylo * in_w + xhi] += gv * (1.0f - wy) * wx;
          gp[yhi * in_w + xlo] += gv * wy * (1.0f - wx);
          gp[yhi * in_w + xhi] += gv * wy * wx;
        }
      }
    }
    tp.accumulate(xid, gx);
  });
  return {&t, id};
}

Var cross_attention(Var q, Var k, Var v, const Var* bias, bool residual) {
  Tape& t = *q.tape;
  const int c = t.value(q.id).extent(0);
  if (t.value(k.id).extent(0) != c || t.value(v.id).extent(0) != c) {
    throw std::invalid_argument("cross_attention: channel extents differ");
  }
  if (bias && static_cast<int>(t.value(bias->id).size()) != t.value(k.id).extent(1)) {
    throw std::invalid_argument("cross_attention: bias length mismatch");
  }
  Var scores = affine(matmul(transpose(q), k), 1.0f / std::sqrt(static_cast<float>(c)), 0.0f);
  if (bias) scores = add_row_broadcast(scores, *bias);
  const Var weights = softmax_rows(scores);
  Var out = matmul(v, transpose(weights));
  if (residual) out = add(out, q);
  return out;
}

Var sum_all(Var a) {
  Tape& t = *a.tape;
  const Tensor& av = t.value(a.id);
  double acc = 0.0;
  for (std::size_t i = 0; i < av.size(); ++i) acc += static_cast<double>(av.data()[i]);
  Tensor out({1});
  out.at(0) = static_cast<float>(acc);
  const int aid = a.id;
  const int id = t.add_node(std::move(out), any_requires({a}), [aid](Tape& tp, int self) {
    const float g = tp.grad(self).at(0);
    tp.accumulate(aid, Tensor::from_data(
                           tp.value(aid).shape(),
                           std::vector<float>(tp.value(aid).size(), g)));
  });
  t.node(id).scalar64 = acc;
  return {&t, id};
}

Var cross_entropy_mean(Var logits, const LabelMap& labels, std::uint16_t ignore_label) {
  Tape& t = *logits.tape;
  const Tensor& lv = t.value(logits.id);
  if (lv.rank() != 3) {
    throw std::invalid_argument("cross_entropy_mean: expected K x H x W logits, got " +
                                lv.shape_string());
  }
  const int k = lv.extent(0), h = lv.extent(1), w = lv.extent(2);
  if (labels.height() != h || labels.width() != w) {
    throw std::invalid_argument("cross_entropy_mean: label map " +
                                std::to_string(labels.height()) + "x" +
                                std::to_string(labels.width()) + " vs logits " +
                                lv.shape_string());
  }
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  double total = 0.0;
  std::size_t valid = 0;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const std::uint16_t g = labels.at(y, x);
      if (g == ignore_label) continue;
      if (g >= k) {
        throw std::invalid_argument("cross_entropy_mean: label " + std::to_string(g) +
                                    " out of range for " + std::to_string(k) + " classes");
      }
      const std::size_t p = static_cast<std::size_t>(y) * w + x;
      double m = lv.data()[p];
      for (int ch = 1; ch < k; ++ch) m = std::max(m, static_cast<double>(lv.data()[ch * plane + p]));
      double denom = 0.0;
      for (int ch = 0; ch < k; ++ch) {
        denom += std::exp(static_cast<double>(lv.data()[ch * plane + p]) - m);
      }
      const double lse = m + std::log(denom);
      total += lse - static_cast<double>(lv.data()[g * plane + p]);
      ++valid;
    }
  }
  if (valid == 0) {
    throw std::invalid_argument("cross_entropy_mean: no non-ignored pixels");
  }
  Tensor out({1});
  out.at(0) = static_cast<float>(total / static_cast<double>(valid));
  const int lid = logits.id;
  // labels copied into the closure: the tape may outlive the caller's map.
  const int id = t.add_node(std::move(out), t.node(logits.id).requires_grad,
                            [lid, labels, ignore_label, valid](Tape& tp, int self) {
    const Tensor& lv = tp.value(lid);
    const int k = lv.extent(0), h = lv.extent(1), w = lv.extent(2);
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    const float gout = tp.grad(self).at(0);
    const float inv = gout / static_cast<float>(valid);
    Tensor gl(lv.shape());
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        const std::uint16_t g = labels.at(y, x);
        if (g == ignore_label) continue;
        const std::size_t p = static_cast<std::size_t>(y) * w + x;
        double m = lv.data()[p];
        for (int ch = 1; ch < k; ++ch) {
          m = std::max(m, static_cast<double>(lv.data()[ch * plane + p]));
        }
        double denom = 0.0;
        for (int ch = 0; ch < k; ++ch) {
          denom += std::exp(static_cast<double>(lv.data()[ch * plane + p]) - m);
        }
        for (int ch = 0; ch < k; ++ch) {
          const double sm = std::exp(static_cast<double>(lv.data()[ch * plane + p]) - m) / denom;
          gl.data()[ch * plane + p] =
              (static_cast<float>(sm) - (ch == g ? 1.0f : 0.0f)) * inv;
        }
      }
    }
    tp.accumulate(lid, gl);
  });
  t.node(id).scalar64 = total / static_cast<double>(valid);
  return {&t, id};
}

}  // namespace ad

double grad_check(const std::function<Var(Tape&, Var)>& f, const Tensor& x, float eps) {
  if (!(eps >= 1e-4f && eps <= 1e-2f)) {
    throw std::invalid_argument("grad_check: eps must be in [1e-4, 1e-2]");
  }
  Tape tape;
  Var xv = ad::leaf(tape, x, true);
  Var y = f(tape, xv);
  if (tape.value(y.id).size() != 1) {
    throw std::invalid_argument("grad_check: f must be scalar-valued");
  }
  tape.backward(y.id);
  Tensor analytic = tape.grad(xv.id);
  if (analytic.empty()) analytic = Tensor(x.shape());
  if (!analytic.all_finite()) throw std::invalid_argument("grad_check: non-finite gradient");

  auto eval = [&f](const Tensor& point) {
    Tape t;
    Var v = ad::leaf(t, point, false);
    Var out = f(t, v);
    const double hint = t.node(out.id).scalar64;
    return std::isfinite(hint) ? hint : static_cast<double>(t.value(out.id).at(0));
  };

  double worst = 0.0;
  Tensor probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const float orig = probe.data()[i];
    probe.data()[i] = orig + eps;
    const double x_hi = static_cast<double>(probe.data()[i]);  // realized step
    const double hi = eval(probe);
    probe.data()[i] = orig - eps;
    const double x_lo = static_cast<double>(probe.data()[i]);
    const double lo = eval(probe);
    probe.data()[i] = orig;
    const double central = (hi - lo) / (x_hi - x_lo);
    const double err = std::abs(static_cast<double>(analytic.data()[i]) - central) /
                       std::max(1.0, std::abs(central));
    worst = std::max(worst, err);
  }
  return worst;
}

}  // namespace vpseg
