#include "vpseg/cma.hpp"

#include <stdexcept>

namespace vpseg {

Var ca_e(Tape& tape, Var q, Var k, Var v, Var bias_flat) {
  (void)tape;
  return ad::cross_attention(q, k, v, &bias_flat, /*residual=*/true);
}

Tensor ca_e(const Tensor& q, const Tensor& k, const Tensor& v, const Tensor& bias_flat) {
  return cross_attention(q, k, v, &bias_flat, /*residual=*/true);
}

namespace {

Var flatten_spatial(Tape& tape, Var x) {
  const Tensor& v = tape.value(x.id);
  if (v.rank() != 3) {
    throw std::invalid_argument("expected c x h x w tensor, got " + v.shape_string());
  }
  return ad::reshape(x, {v.extent(0), v.extent(1) * v.extent(2)});
}

Var flatten_bias(Tape& tape, Var proximity, int expected) {
  const Tensor& v = tape.value(proximity.id);
  if (static_cast<int>(v.size()) != expected) {
    throw std::invalid_argument("proximity bias has " + std::to_string(v.size()) +
                                " entries, expected " + std::to_string(expected));
  }
  return ad::reshape(proximity, {static_cast<int>(v.size())});
}

}  // namespace

Var contextualize_queries(Tape& tape, Var queries, Var local_context, Var proximity,
                          const AttentionProjectionVars& proj) {
  const Var flat = flatten_spatial(tape, local_context);
  const Var bias = flatten_bias(tape, proximity, tape.value(flat.id).extent(1));
  const Var q = ad::matmul(proj.wq, queries);
  const Var k = ad::matmul(proj.wk, flat);
  const Var v = ad::matmul(proj.wv, flat);
  return ca_e(tape, q, k, v, bias);
}

Tensor contextualize_queries(const Tensor& queries, const Tensor& local_context,
                             const Tensor& proximity, const AttentionProjections& proj) {
  Tape tape;
  const Var out = contextualize_queries(tape, ad::constant(tape, queries),
                                        ad::constant(tape, local_context),
                                        ad::constant(tape, proximity),
                                        as_vars(tape, proj, false));
  return tape.value(out.id);
}

Var motion_attention(Tape& tape, Var contextualized, Var augmented_ctx, Var proximity,
                     const std::vector<AttentionProjectionVars>& layers) {
  if (layers.empty()) return contextualized;  // N = 0 bypass
  const Var flat = flatten_spatial(tape, augmented_ctx);
  const Var bias = flatten_bias(tape, proximity, tape.value(flat.id).extent(1));
  Var merged = contextualized;
  for (const AttentionProjectionVars& layer : layers) {
    const Var q = ad::matmul(layer.wq, merged);
    const Var k = ad::matmul(layer.wk, flat);
    const Var v = ad::matmul(layer.wv, flat);
    merged = ca_e(tape, q, k, v, bias);
  }
  return merged;
}

Tensor motion_attention(const Tensor& contextualized, const Tensor& augmented_ctx,
                        const Tensor& proximity,
                        const std::vector<AttentionProjections>& layers) {
  Tape tape;
  std::vector<AttentionProjectionVars> layer_vars;
  layer_vars.reserve(layers.size());
  for (const AttentionProjections& l : layers) layer_vars.push_back(as_vars(tape, l, false));
  const Var out = motion_attention(tape, ad::constant(tape, contextualized),
                                   ad::constant(tape, augmented_ctx),
                                   ad::constant(tape, proximity), layer_vars);
  return tape.value(out.id);
}

Var detail_attention_map(Tape& tape, Var merged_context, Var local_context) {
  const Tensor& mv = tape.value(merged_context.id);
  const Tensor& lv = tape.value(local_context.id);
  if (mv.rank() != 2 || lv.rank() != 3 || mv.extent(0) != lv.extent(0)) {
    throw std::invalid_argument("detail_attention_map: F_m " + mv.shape_string() +
                                " incompatible with F_tl " + lv.shape_string());
  }
  const int classes = mv.extent(1), h = lv.extent(1), w = lv.extent(2);
  const Var flat = flatten_spatial(tape, local_context);
  const Var raw = ad::matmul(ad::transpose(merged_context), flat);  // K x hw
  return ad::logistic(ad::reshape(raw, {classes, h, w}));
}

DetailAttention detail_attention_map(const Tensor& merged_context, const Tensor& local_context) {
  Tape tape;
  const Var m = ad::constant(tape, merged_context);
  const Var l = ad::constant(tape, local_context);
  const Var squashed = detail_attention_map(tape, m, l);
  DetailAttention out;
  out.squashed = tape.value(squashed.id);
  const int classes = merged_context.extent(1);
  const Tensor raw = matmul(transpose(merged_context),
                            local_context.reshaped({local_context.extent(0),
                                                    local_context.extent(1) * local_context.extent(2)}));
  out.raw = raw.reshaped({classes, local_context.extent(1), local_context.extent(2)});
  return out;
}

Var fuse_predictions(Tape& tape, Var context_pred, Var detail_pred, Var detail_attention) {
  const Tensor& dv = tape.value(detail_pred.id);
  const Tensor& cv = tape.value(context_pred.id);
  const Tensor& ov = tape.value(detail_attention.id);
  if (dv.rank() != 3 || cv.rank() != 3 || ov.rank() != 3 || cv.extent(0) != dv.extent(0) ||
      ov.extent(0) != dv.extent(0)) {
    throw std::invalid_argument("fuse_predictions: class extents differ: P_c " +
                                cv.shape_string() + ", P_d " + dv.shape_string() + ", O " +
                                ov.shape_string());
  }
  const int out_h = dv.extent(1), out_w = dv.extent(2);
  const Var context_up = ad::bilinear_resize(context_pred, out_h, out_w);
  const Var weights = ad::bilinear_resize(detail_attention, out_h, out_w);
  // (1 - O) . P_c + O . P_d, written as P_c + O . (P_d - P_c).
  return ad::add(context_up, ad::mul(weights, ad::sub(detail_pred, context_up)));
}

Tensor fuse_predictions(const Tensor& context_pred, const Tensor& detail_pred,
                        const Tensor& detail_attention) {
  Tape tape;
  const Var out = fuse_predictions(tape, ad::constant(tape, context_pred),
                                   ad::constant(tape, detail_pred),
                                   ad::constant(tape, detail_attention));
  return tape.value(out.id);
}

Var total_loss(Tape& tape, Var fused_pred, Var detail_pred, const LabelMap& labels,
               float lambda_d, std::uint16_t ignore_label) {
  if (lambda_d < 0.0f || lambda_d > 1.0f) {
    throw std::invalid_argument("total_loss: lambda_d must be in [0, 1]");
  }
  const Var fused_ce = ad::cross_entropy_mean(fused_pred, labels, ignore_label);
  const Var detail_ce = ad::cross_entropy_mean(detail_pred, labels, ignore_label);
  (void)tape;
  return ad::add(ad::affine(fused_ce, 1.0f - lambda_d, 0.0f),
                 ad::affine(detail_ce, lambda_d, 0.0f));
}

float total_loss(const Tensor& fused_pred, const Tensor& detail_pred, const LabelMap& labels,
                 float lambda_d, std::uint16_t ignore_label) {
  Tape tape;
  const Var out = total_loss(tape, ad::constant(tape, fused_pred),
                             ad::constant(tape, detail_pred), labels, lambda_d, ignore_label);
  return tape.value(out.id).at(0);
}

}  // namespace vpseg
