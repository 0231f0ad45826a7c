#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "agddad/core/rng.hpp"

namespace agddad::nn {

using MatRM = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapRM = Eigen::Map<MatRM>;
using CMapRM = Eigen::Map<const MatRM>;
using VecMap = Eigen::Map<Eigen::VectorXd>;
using CVecMap = Eigen::Map<const Eigen::VectorXd>;

// All learnable parameters of a network live in one flat vector so that the
// optimizer, EMA updates, finite-difference checks and serialization can
// treat the network as a plain point in R^n.
struct ParamStore {
  struct Entry {
    std::string name;
    size_t off;
    size_t n;
  };
  std::vector<double> w;
  std::vector<Entry> entries;

  size_t add(std::string name, size_t n) {
    const size_t off = w.size();
    w.resize(off + n, 0.0);
    entries.push_back({std::move(name), off, n});
    return off;
  }
  size_t size() const { return w.size(); }
  double* p(size_t off) { return w.data() + off; }
  const double* p(size_t off) const { return w.data() + off; }
};

using Grad = std::vector<double>;  // same layout as ParamStore::w

inline void init_uniform_fan(ParamStore& store, size_t off, size_t n, int fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (size_t i = 0; i < n; ++i) store.w[off + i] = rng.uniform(-bound, bound);
}

// theta_t <- m * theta_t + (1 - m) * theta_s, elementwise.
inline void ema_update(std::vector<double>& teacher, const std::vector<double>& student,
                       double m) {
  if (teacher.size() != student.size()) {
    throw std::invalid_argument("ema_update: parameter shape mismatch");
  }
  if (m < 0.0 || m > 1.0) throw std::invalid_argument("ema_update: momentum outside [0,1]");
  for (size_t i = 0; i < teacher.size(); ++i) {
    teacher[i] = m * teacher[i] + (1.0 - m) * student[i];
  }
}

// Adam with optional decoupled weight decay (AdamW when weight_decay > 0).
class Adam {
 public:
  Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8,
       double weight_decay = 0.0)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps), wd_(weight_decay) {}

  void step(std::vector<double>& w, const Grad& g) {
    if (m_.empty()) {
      m_.assign(w.size(), 0.0);
      v_.assign(w.size(), 0.0);
    }
    if (w.size() != g.size() || w.size() != m_.size()) {
      throw std::invalid_argument("Adam::step: size mismatch");
    }
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (size_t i = 0; i < w.size(); ++i) {
      m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * g[i];
      v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * g[i] * g[i];
      const double mhat = m_[i] / bc1;
      const double vhat = v_[i] / bc2;
      if (wd_ > 0.0) w[i] -= lr_ * wd_ * w[i];
      w[i] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
    }
  }

  double lr() const { return lr_; }

 private:
  double lr_, beta1_, beta2_, eps_, wd_;
  int64_t t_ = 0;
  std::vector<double> m_, v_;
};

// --- small elementwise pieces shared by both networks ----------------------

inline double silu(double x) { return x / (1.0 + std::exp(-x)); }
inline double silu_grad(double x) {
  const double s = 1.0 / (1.0 + std::exp(-x));
  return s * (1.0 + x * (1.0 - s));
}

inline double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * M_SQRT1_2)); }
inline double gelu_grad(double x) {
  const double cdf = 0.5 * (1.0 + std::erf(x * M_SQRT1_2));
  const double pdf = std::exp(-0.5 * x * x) * 0.3989422804014327;  // 1/sqrt(2*pi)
  return cdf + x * pdf;
}

}  // namespace agddad::nn
