#pragma once

// Shared helpers for the test binaries: finite-difference gradient checking
// against the autodiff graph, deterministic tensor filling, and scratch
// directories that clean up after themselves.

#include <unistd.h>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "dgsp/autodiff.hpp"
#include "dgsp/rng.hpp"
#include "dgsp/tensor.hpp"

namespace dgsp::testing {

template <typename T>
void fill_uniform(Tensor<T>& t, Rng& rng, double lo = -1.0, double hi = 1.0) {
  for (long i = 0; i < t.numel(); ++i) t[i] = static_cast<T>(rng.uniform(lo, hi));
}

template <typename T>
Tensor<T> random_tensor(const Shape& s, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor<T> t(s);
  fill_uniform(t, rng, lo, hi);
  return t;
}

struct GradCheckStats {
  bool ok = true;
  double worst_rel = 0.0;   // worst relative deviation among large elements
  double worst_abs = 0.0;   // worst absolute deviation among near-zero elements
  long checked = 0;
  std::string detail;       // filled on the first failure
};

// Central-difference check of d(scalar)/d(leaf) for every element of every
// leaf. The closure must rebuild the graph from the leaves' current values
// and return a scalar Var. Elements where both gradients are tiny are held
// to an absolute bound instead of a relative one.
inline GradCheckStats gradcheck(const std::function<Var<double>()>& f,
                                const std::vector<std::pair<std::string, Var<double>>>& leaves,
                                double step = 1e-5, double rel_tol = 1e-6,
                                double tiny = 1e-6, double abs_tol = 1e-9) {
  GradCheckStats st;
  // Var is a handle onto a shared node, so copies below mutate the real leaf.
  for (auto [name, leaf] : leaves) leaf.zero_grad();
  Var<double> y = f();
  if (y.value().numel() != 1) throw ShapeError("gradcheck probe must be scalar");
  y.backward();

  std::vector<Tensor<double>> analytic;
  analytic.reserve(leaves.size());
  for (auto [name, leaf] : leaves) analytic.push_back(leaf.grad());

  for (std::size_t li = 0; li < leaves.size(); ++li) {
    const std::string& name = leaves[li].first;
    Var<double> handle = leaves[li].second;
    Tensor<double>& vals = handle.value();
    for (long i = 0; i < vals.numel(); ++i) {
      const double keep = vals[i];
      vals[i] = keep + step;
      const double up = f().value()[0];
      vals[i] = keep - step;
      const double dn = f().value()[0];
      vals[i] = keep;
      const double num = (up - dn) / (2.0 * step);
      const double ana = analytic[li][i];
      const double mag = std::max(std::abs(ana), std::abs(num));
      ++st.checked;
      if (mag < tiny) {
        const double dev = std::abs(ana - num);
        st.worst_abs = std::max(st.worst_abs, dev);
        if (dev > abs_tol && st.ok) {
          st.ok = false;
          std::ostringstream os;
          os << name << "[" << i << "]: analytic " << ana << " vs numeric " << num
             << " (abs dev " << dev << " > " << abs_tol << ")";
          st.detail = os.str();
        }
      } else {
        const double rel = std::abs(ana - num) / mag;
        st.worst_rel = std::max(st.worst_rel, rel);
        if (rel > rel_tol && st.ok) {
          st.ok = false;
          std::ostringstream os;
          os << name << "[" << i << "]: analytic " << ana << " vs numeric " << num
             << " (rel dev " << rel << " > " << rel_tol << ")";
          st.detail = os.str();
        }
      }
    }
  }
  return st;
}

// Scratch directory under the system temp root, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static std::uint64_t counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            (tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::string str() const { return path_.string(); }
  std::string file(const std::string& name) const { return (path_ / name).string(); }

 private:
  std::filesystem::path path_;
};

}  // namespace dgsp::testing
