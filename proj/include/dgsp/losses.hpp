#pragma once

#include <string>
#include <utility>
#include <vector>

#include "dgsp/model.hpp"

namespace dgsp {

template <typename T>
struct LossValue {
  Var<T> total;
  std::vector<std::pair<std::string, Var<T>>> components;

  T component(const std::string& name) const {
    for (const auto& [k, v] : components)
      if (k == name) return v.value()[0];
    throw ConfigError("no loss component named " + name);
  }
};

namespace detail {
template <typename T>
void check_loss_shapes(const Var<T>& a, const Var<T>& b) {
  if (!a.value().same_shape(b.value()))
    throw ShapeError("loss operands disagree: " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
}
template <typename T>
Var<T> one_minus(const Var<T>& x) {
  return add_scalar(mul_scalar(x, T(-1)), T(1));
}
}  // namespace detail

// Mean binary cross-entropy over all pixels; predictions clamped away from
// the log singularities.
template <typename T>
Var<T> bce(const Var<T>& pred, const Var<T>& target) {
  detail::check_loss_shapes(pred, target);
  Var<T> p = clamp(pred, T(1e-7), T(1) - T(1e-7));
  Var<T> ll = add(mul(target, log_op(p)),
                  mul(detail::one_minus(target), log_op(detail::one_minus(p))));
  return mul_scalar(mean_all(ll), T(-1));
}

// Differentiable IoU complement, computed per batch element then averaged.
template <typename T>
Var<T> soft_iou(const Var<T>& pred, const Var<T>& target, T eps = T(1e-6)) {
  detail::check_loss_shapes(pred, target);
  Var<T> inter = sum_per_sample(mul(target, pred));
  Var<T> uni = sub(add(sum_per_sample(target), sum_per_sample(pred)), inter);
  Var<T> ratio = div(add_scalar(inter, eps), add_scalar(uni, eps));
  return mean_all(detail::one_minus(ratio));
}

template <typename T>
Var<T> mse(const Var<T>& recon, const Var<T>& input) {
  detail::check_loss_shapes(recon, input);
  Var<T> d = sub(recon, input);
  return mean_all(mul(d, d));
}

// Symmetric InfoNCE between projected pooled image features and text [eot]
// vectors. The image branch is cut off from the encoder by stop-gradient
// inside image_embedding.
template <typename T>
Var<T> contrastive(const Model<T>& m, const Var<T>& f5, const Var<T>& eot_batch,
                   T tau = T(0.07)) {
  const long n = f5.dim(0);
  if (n == 0) throw DataError("contrastive loss needs a non-empty batch");
  if (eot_batch.dim(0) != n) throw ShapeError("contrastive batch sizes disagree");
  Var<T> zi = l2_normalize_rows(m.image_embedding(f5));
  Var<T> zt = l2_normalize_rows(eot_batch);
  Var<T> logits = mul_scalar(matmul(zi, transpose_2d(zt)), T(1) / tau);
  Var<T> img_to_txt = mean_all(take_diag(log_softmax_lastdim(logits)));
  Var<T> txt_to_img = mean_all(take_diag(log_softmax_lastdim(transpose_2d(logits))));
  return mul_scalar(add(img_to_txt, txt_to_img), T(-0.5));
}

template <typename T>
LossValue<T> pretrain_loss(const Model<T>& m, const Var<T>& recon, const Var<T>& input,
                           const Var<T>& f5, const Var<T>& eot_batch, T tau = T(0.07)) {
  Var<T> c = contrastive(m, f5, eot_batch, tau);
  Var<T> r = mse(recon, input);
  return {add(c, r), {{"contra", c}, {"mse", r}}};
}

template <typename T>
LossValue<T> train_loss(const Var<T>& pred, const Var<T>& target, T lambda1 = T(1),
                        T lambda2 = T(1)) {
  Var<T> b = bce(pred, target);
  Var<T> s = soft_iou(pred, target);
  return {add(mul_scalar(b, lambda1), mul_scalar(s, lambda2)), {{"bce", b}, {"softiou", s}}};
}

}  // namespace dgsp
