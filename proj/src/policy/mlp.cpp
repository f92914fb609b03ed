#include "stlrl/policy/mlp.hpp"

#include <cmath>
#include <stdexcept>

namespace stlrl::policy {

std::size_t Params::size() const {
  std::size_t n = 0;
  for (std::size_t l = 0; l < w.size(); ++l) n += w[l].size() + b[l].size();
  return n;
}

void Params::set_zero() {
  for (auto& m : w) m.setZero();
  for (auto& v : b) v.setZero();
}

std::vector<double> Params::flatten() const {
  std::vector<double> out;
  out.reserve(size());
  for (std::size_t l = 0; l < w.size(); ++l) {
    out.insert(out.end(), w[l].data(), w[l].data() + w[l].size());
    out.insert(out.end(), b[l].data(), b[l].data() + b[l].size());
  }
  return out;
}

void Params::assign(std::span<const double> flat) {
  if (flat.size() != size()) throw std::invalid_argument("parameter vector has the wrong length");
  std::size_t k = 0;
  for (std::size_t l = 0; l < w.size(); ++l) {
    std::copy_n(flat.data() + k, w[l].size(), w[l].data());
    k += w[l].size();
    std::copy_n(flat.data() + k, b[l].size(), b[l].data());
    k += b[l].size();
  }
}

bool Params::all_finite() const {
  for (std::size_t l = 0; l < w.size(); ++l) {
    if (!w[l].allFinite() || !b[l].allFinite()) return false;
  }
  return true;
}

bool Params::operator==(const Params& o) const {
  if (w.size() != o.w.size()) return false;
  for (std::size_t l = 0; l < w.size(); ++l) {
    if (w[l].rows() != o.w[l].rows() || w[l].cols() != o.w[l].cols() || w[l] != o.w[l] || b[l] != o.b[l]) {
      return false;
    }
  }
  return true;
}

Mlp::Mlp(std::vector<std::size_t> sizes, OutputKind output, std::vector<double> low, std::vector<double> high)
    : sizes_(std::move(sizes)), output_(output) {
  if (sizes_.size() < 2) throw std::invalid_argument("an MLP needs at least input and output sizes");
  for (auto s : sizes_) {
    if (s == 0) throw std::invalid_argument("layer sizes must be positive");
  }
  const auto out = static_cast<Eigen::Index>(sizes_.back());
  mid_ = Vector::Zero(out);
  half_ = Vector::Ones(out);
  if (output_ == OutputKind::TanhScaled) {
    if (low.size() != sizes_.back() || high.size() != sizes_.back()) {
      throw std::invalid_argument("output bounds must match the output size");
    }
    for (Eigen::Index i = 0; i < out; ++i) {
      if (!(high[i] > low[i])) throw std::invalid_argument("output bounds must satisfy low < high");
      mid_[i] = 0.5 * (low[i] + high[i]);
      half_[i] = 0.5 * (high[i] - low[i]);
    }
  }
  for (std::size_t l = 0; l + 1 < sizes_.size(); ++l) {
    p_.w.push_back(Matrix::Zero(static_cast<Eigen::Index>(sizes_[l + 1]), static_cast<Eigen::Index>(sizes_[l])));
    p_.b.push_back(Vector::Zero(static_cast<Eigen::Index>(sizes_[l + 1])));
  }
}

void Mlp::init(std::mt19937_64& rng) {
  for (std::size_t l = 0; l < p_.w.size(); ++l) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(sizes_[l]));
    std::uniform_real_distribution<double> u(-bound, bound);
    for (Eigen::Index i = 0; i < p_.w[l].size(); ++i) p_.w[l].data()[i] = u(rng);
    for (Eigen::Index i = 0; i < p_.b[l].size(); ++i) p_.b[l][i] = u(rng);
  }
}

void Mlp::set_output_scale(Vector mid, Vector half) {
  if (static_cast<std::size_t>(mid.size()) != sizes_.back() || static_cast<std::size_t>(half.size()) != sizes_.back()) {
    throw std::invalid_argument("output scale must match the output size");
  }
  mid_ = std::move(mid);
  half_ = std::move(half);
}

Params Mlp::zeros_like() const {
  Params g = p_;
  g.set_zero();
  return g;
}

Matrix Mlp::forward(const Matrix& x) const {
  Cache unused;
  return forward(x, unused);
}

Matrix Mlp::forward(const Matrix& x, Cache& cache) const {
  if (static_cast<std::size_t>(x.rows()) != sizes_.front()) throw std::invalid_argument("MLP input has the wrong size");
  const std::size_t layers = p_.w.size();
  cache.a.resize(layers + 1);
  cache.z.resize(layers);
  cache.a[0] = x;
  for (std::size_t l = 0; l < layers; ++l) {
    cache.z[l].noalias() = p_.w[l] * cache.a[l];
    cache.z[l].colwise() += p_.b[l];
    if (l + 1 < layers) {
      cache.a[l + 1] = cache.z[l].cwiseMax(0.0);
    } else if (output_ == OutputKind::TanhScaled) {
      cache.a[l + 1] = (cache.z[l].array().tanh().colwise() * half_.array()).colwise() + mid_.array();
    } else {
      cache.a[l + 1] = cache.z[l];
    }
  }
  return cache.a[layers];
}

Matrix Mlp::backward(const Cache& cache, const Matrix& dout, Params* grad) const {
  const std::size_t layers = p_.w.size();
  Matrix dz;
  if (output_ == OutputKind::TanhScaled) {
    Eigen::ArrayXXd slope = 1.0 - cache.z[layers - 1].array().tanh().square();
    slope.colwise() *= half_.array();
    dz = (dout.array() * slope).matrix();
  } else {
    dz = dout;
  }
  for (std::size_t l = layers; l-- > 0;) {
    if (grad) {
      grad->w[l].noalias() += dz * cache.a[l].transpose();
      grad->b[l] += dz.rowwise().sum();
    }
    Matrix da = p_.w[l].transpose() * dz;
    if (l == 0) return da;
    dz = (cache.z[l - 1].array() > 0.0).select(da, 0.0);
  }
  return {};
}

Adam::Adam(const Params& shape, AdamConfig cfg) : config(cfg), m(shape), v(shape) {
  m.set_zero();
  v.set_zero();
}

void Adam::step(Params& p, const Params& grad) {
  ++t;
  const double c1 = 1.0 - std::pow(config.beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(config.beta2, static_cast<double>(t));
  const double step = config.lr / c1;
  const double root_c2 = std::sqrt(c2);
  auto update = [&](auto& value, auto& mm, auto& vv, const auto& g) {
    mm = config.beta1 * mm + (1.0 - config.beta1) * g;
    vv = config.beta2 * vv + (1.0 - config.beta2) * g.cwiseProduct(g);
    value.array() -= step * mm.array() / (vv.array().sqrt() / root_c2 + config.eps);
  };
  for (std::size_t l = 0; l < p.w.size(); ++l) {
    update(p.w[l], m.w[l], v.w[l], grad.w[l]);
    update(p.b[l], m.b[l], v.b[l], grad.b[l]);
  }
}

void soft_update(Params& target, const Params& online, double tau) {
  const double keep = 1.0 - tau;
  auto blend = [&](double* t, const double* o, Eigen::Index n) {
    for (Eigen::Index i = 0; i < n; ++i) t[i] = keep * t[i] + tau * o[i];
  };
  for (std::size_t l = 0; l < target.w.size(); ++l) {
    blend(target.w[l].data(), online.w[l].data(), target.w[l].size());
    blend(target.b[l].data(), online.b[l].data(), target.b[l].size());
  }
}

}  // namespace stlrl::policy
