#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "dgsp/autodiff.hpp"
#include "dgsp/rng.hpp"

namespace dgsp {

enum class Init { FanInUniform, Zeros, Ones };

// Named parameter registry. Entries keep insertion order, which fixes both the
// serialization order and the optimizer update order. Every tensor gets its
// own RNG stream derived from (master seed, name), so adding or removing one
// parameter does not shift the init of any other.
template <typename T>
class ParamStore {
 public:
  struct Entry {
    std::string name;
    Var<T> var;
    std::string group;
    bool trainable = true;
  };

  explicit ParamStore(std::uint64_t master_seed = 0) : master_seed_(master_seed) {}

  Var<T> add(const std::string& name, const Shape& shape, const std::string& group,
             Init init = Init::FanInUniform) {
    if (index_.count(name)) throw ConfigError("duplicate parameter: " + name);
    Tensor<T> t(shape);
    switch (init) {
      case Init::Zeros:
        break;
      case Init::Ones:
        t.fill(T(1));
        break;
      case Init::FanInUniform: {
        const long fan_in = shape.size() >= 2 ? shape_numel(shape) / shape[0] : shape[0];
        const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
        Rng rng(seed_for(master_seed_, name));
        for (long i = 0; i < t.numel(); ++i)
          t[i] = static_cast<T>(rng.uniform(-bound, bound));
        break;
      }
    }
    Var<T> v = Var<T>::leaf(std::move(t), true);
    index_[name] = entries_.size();
    entries_.push_back(Entry{name, v, group, true});
    return v;
  }

  bool has(const std::string& name) const { return index_.count(name) != 0; }

  Var<T>& get(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw ConfigError("unknown parameter: " + name);
    return entries_[it->second].var;
  }

  const Var<T>& get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ConfigError("unknown parameter: " + name);
    return entries_[it->second].var;
  }

  // Freezing clears requires_grad, so frozen subgraphs drop out of backward
  // entirely rather than accumulating zeros.
  void set_trainable(const std::string& group, bool trainable) {
    bool found = false;
    for (auto& e : entries_)
      if (e.group == group) {
        e.trainable = trainable;
        e.var.node()->requires_grad = trainable;
        found = true;
      }
    if (!found) throw ConfigError("unknown parameter group: " + group);
  }

  std::vector<Entry>& entries() { return entries_; }
  const std::vector<Entry>& entries() const { return entries_; }

  std::vector<Entry*> trainable_entries() {
    std::vector<Entry*> out;
    for (auto& e : entries_)
      if (e.trainable) out.push_back(&e);
    return out;
  }

  void zero_grad() {
    for (auto& e : entries_) e.var.zero_grad();
  }

  long total_parameters() const {
    long n = 0;
    for (const auto& e : entries_) n += e.var.value().numel();
    return n;
  }

  std::uint64_t master_seed() const { return master_seed_; }

 private:
  std::uint64_t master_seed_;
  std::vector<Entry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

}  // namespace dgsp
