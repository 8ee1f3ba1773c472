#pragma once

#include <cmath>
#include <string>
#include <unordered_map>

#include "dgsp/params.hpp"
#include "dgsp/tensor.hpp"

namespace dgsp {

// Adam with decoupled weight decay. weight_decay = 0 gives plain Adam.
// Moment slots are keyed by parameter name and created on first use, so the
// same optimizer instance follows a store whatever subset is trainable.
template <typename T>
class AdamOpt {
 public:
  explicit AdamOpt(double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8,
                   double weight_decay = 0.0)
      : b1_(beta1), b2_(beta2), eps_(eps), wd_(weight_decay) {}

  // lr_for(entry) -> double gives the learning rate per parameter group.
  template <typename LrFn>
  void step(ParamStore<T>& params, LrFn lr_for) {
    ++t_;
    const double bc1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
    for (auto& e : params.entries()) {
      if (!e.trainable) continue;
      const double lr = lr_for(e);
      Tensor<T>& p = e.var.value();
      const Tensor<T>& g = e.var.grad();
      Tensor<T>& m = slot(m_, e.name, p);
      Tensor<T>& v = slot(v_, e.name, p);
      for (long i = 0; i < p.numel(); ++i) {
        const T gi = g[i];
        m[i] = static_cast<T>(b1_) * m[i] + static_cast<T>(1.0 - b1_) * gi;
        v[i] = static_cast<T>(b2_) * v[i] + static_cast<T>(1.0 - b2_) * gi * gi;
        const double mhat = static_cast<double>(m[i]) / bc1;
        const double vhat = static_cast<double>(v[i]) / bc2;
        double upd = mhat / (std::sqrt(vhat) + eps_);
        if (wd_ != 0.0) upd += wd_ * static_cast<double>(p[i]);
        p[i] = static_cast<T>(static_cast<double>(p[i]) - lr * upd);
      }
    }
  }

  long t() const { return t_; }
  void set_t(long t) { t_ = t; }
  double weight_decay() const { return wd_; }

  bool has_slot(const std::string& name) const { return m_.count(name) > 0; }
  // Creating accessors, used when restoring optimizer state from disk.
  Tensor<T>& slot_m(const std::string& name, const Shape& shape) {
    return slot(m_, name, shape);
  }
  Tensor<T>& slot_v(const std::string& name, const Shape& shape) {
    return slot(v_, name, shape);
  }
  const Tensor<T>& peek_m(const std::string& name) const { return m_.at(name); }
  const Tensor<T>& peek_v(const std::string& name) const { return v_.at(name); }

 private:
  static Tensor<T>& slot(std::unordered_map<std::string, Tensor<T>>& slots, const std::string& name,
                         const Tensor<T>& like) {
    auto it = slots.find(name);
    if (it == slots.end()) it = slots.emplace(name, Tensor<T>::zeros(like.shape())).first;
    return it->second;
  }
  static Tensor<T>& slot(std::unordered_map<std::string, Tensor<T>>& slots, const std::string& name,
                         const Shape& shape) {
    auto it = slots.find(name);
    if (it == slots.end()) it = slots.emplace(name, Tensor<T>::zeros(shape)).first;
    return it->second;
  }

  double b1_, b2_, eps_, wd_;
  long t_ = 0;
  std::unordered_map<std::string, Tensor<T>> m_, v_;
};

}  // namespace dgsp
