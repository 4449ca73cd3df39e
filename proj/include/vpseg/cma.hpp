#pragma once

#include <vector>

#include "vpseg/image.hpp"
#include "vpseg/motionvp.hpp"
#include "vpseg/tape.hpp"
#include "vpseg/tensor.hpp"

namespace vpseg {

// VP-aware attention: Softmax(q^T k / sqrt(c) + E) v + q, with the proximity
// bias broadcast to every query row. Inputs are already projected.
Var ca_e(Tape& tape, Var q, Var k, Var v, Var bias_flat);
Tensor ca_e(const Tensor& q, const Tensor& k, const Tensor& v, const Tensor& bias_flat);

// Learnable class queries contextualized against the local context F_tl
// (c x h x w) under the proximity bias E (h x w).
Var contextualize_queries(Tape& tape, Var queries, Var local_context, Var proximity,
                          const AttentionProjectionVars& proj);
Tensor contextualize_queries(const Tensor& queries, const Tensor& local_context,
                             const Tensor& proximity, const AttentionProjections& proj);

// N stacked CA_E blocks over the augmented dynamic context, fresh projections
// per layer; N = 0 bypasses to the contextualized queries.
Var motion_attention(Tape& tape, Var contextualized, Var augmented_ctx, Var proximity,
                     const std::vector<AttentionProjectionVars>& layers);
Tensor motion_attention(const Tensor& contextualized, const Tensor& augmented_ctx,
                        const Tensor& proximity,
                        const std::vector<AttentionProjections>& layers);

// O_raw = F_m^T F_tl reshaped to K x h x w, squashed by the elementwise
// logistic so Eq. 16's blend weights live in (0, 1).
struct DetailAttention {
  Tensor raw;       // K x h x w
  Tensor squashed;  // logistic(raw)
};
Var detail_attention_map(Tape& tape, Var merged_context, Var local_context);
DetailAttention detail_attention_map(const Tensor& merged_context, const Tensor& local_context);

// P_f = (1 - O) . P_c + O . P_d at detail resolution; P_c and O are
// bilinearly resized to P_d's extent first.
Var fuse_predictions(Tape& tape, Var context_pred, Var detail_pred, Var detail_attention);
Tensor fuse_predictions(const Tensor& context_pred, const Tensor& detail_pred,
                        const Tensor& detail_attention);

// (1 - lambda_d) * CE(P_f, G) + lambda_d * CE(P_d, G), mean over non-ignored.
Var total_loss(Tape& tape, Var fused_pred, Var detail_pred, const LabelMap& labels,
               float lambda_d, std::uint16_t ignore_label = kIgnoreLabel);
float total_loss(const Tensor& fused_pred, const Tensor& detail_pred, const LabelMap& labels,
                 float lambda_d, std::uint16_t ignore_label = kIgnoreLabel);

}  // namespace vpseg
