#include "stlrl/bo/bo.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <set>
#include <stdexcept>

#include "stlrl/stl/robustness.hpp"

namespace stlrl::bo {

using Eigen::MatrixXd;
using Eigen::VectorXd;

void LabeledDataset::validate() const {
  if (safe.empty() || unsafe.empty()) throw std::invalid_argument("labeled dataset needs safe and unsafe traces");
  std::set<std::string> ids;
  for (const auto* side : {&safe, &unsafe}) {
    for (const auto& t : *side) {
      if (!ids.insert(t.id()).second) throw std::invalid_argument("duplicate trace id '" + t.id() + "'");
    }
  }
}

double Confusion::mcr() const {
  const double ns = static_cast<double>(safe_correct + safe_wrong);
  const double nu = static_cast<double>(unsafe_correct + unsafe_wrong);
  if (ns == 0 || nu == 0) throw std::invalid_argument("MCR needs both classes");
  return 0.5 * (static_cast<double>(safe_wrong) / ns + static_cast<double>(unsafe_wrong) / nu);
}

Confusion classify(const stl::Formula& ground, const LabeledDataset& ds) {
  Confusion c;
  for (const auto& t : ds.safe) {
    if (stl::robustness(ground, t) < 0.0) {
      ++c.safe_wrong;
    } else {
      ++c.safe_correct;
    }
  }
  for (const auto& t : ds.unsafe) {
    if (stl::robustness(ground, t) >= 0.0) {
      ++c.unsafe_wrong;
    } else {
      ++c.unsafe_correct;
    }
  }
  return c;
}

double mcr_objective(const stl::Formula& tmpl, const stl::Valuation& v, const LabeledDataset& ds) {
  if (ds.safe.empty() || ds.unsafe.empty()) throw std::invalid_argument("labeled dataset needs safe and unsafe traces");
  return classify(stl::valuate(tmpl, v), ds).mcr();
}

double kernel(const VectorXd& a, const VectorXd& b, const VectorXd& length_scale, double variance) {
  return variance * std::exp(-((a - b).array() / length_scale.array()).square().sum());
}

GpState gp_fit(const MatrixXd& x, const VectorXd& y, const VectorXd& length_scale, double noise,
               double signal_variance) {
  if (x.rows() == 0) throw std::invalid_argument("gp_fit needs at least one point");
  if (x.rows() != y.size() || x.cols() != length_scale.size()) throw std::invalid_argument("gp_fit shape mismatch");
  if (!x.allFinite() || !y.allFinite() || !length_scale.allFinite() || !std::isfinite(noise)) {
    throw std::invalid_argument("gp_fit got non-finite input");
  }
  if ((length_scale.array() <= 0).any() || noise < 0) throw std::invalid_argument("gp_fit needs l > 0, noise >= 0");
  GpState gp;
  gp.x = x;
  gp.y = y;
  gp.length_scale = length_scale;
  gp.signal_variance = signal_variance;
  gp.noise = noise;
  const auto n = x.rows();
  MatrixXd k(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j <= i; ++j) {
      k(i, j) = k(j, i) = kernel(x.row(i).transpose(), x.row(j).transpose(), length_scale, signal_variance);
    }
  }
  double jitter = 0.0;
  for (;;) {
    MatrixXd a = k;
    a.diagonal().array() += noise + jitter;
    Eigen::LLT<MatrixXd> llt(a);
    // LLT only reports a non-positive pivot; also reject factors whose
    // pivots are lost in roundoff.
    bool ok = llt.info() == Eigen::Success;
    if (ok) {
      const VectorXd d = llt.matrixL().toDenseMatrix().diagonal();
      ok = d.allFinite() && d.minCoeff() > 1e-10 * std::sqrt(signal_variance);
    }
    if (ok) {
      gp.chol = llt.matrixL();
      gp.alpha = llt.solve(y);
      gp.jitter_added = jitter;
      return gp;
    }
    if (jitter >= kMaxJitter) throw std::runtime_error("GP covariance is singular even with maximal jitter");
    jitter = jitter == 0.0 ? 1e-12 : std::min(kMaxJitter, jitter * 10.0);
  }
}

Prediction gp_predict(const GpState& gp, const VectorXd& p) {
  const auto n = gp.x.rows();
  VectorXd ks(n);
  for (Eigen::Index i = 0; i < n; ++i) ks[i] = kernel(gp.x.row(i).transpose(), p, gp.length_scale, gp.signal_variance);
  Prediction out;
  out.mean = ks.dot(gp.alpha);
  const VectorXd v = gp.chol.triangularView<Eigen::Lower>().solve(ks);
  out.variance = std::max(0.0, gp.signal_variance - v.squaredNorm());
  return out;
}

double expected_improvement(double mu, double sigma, double f_min) {
  const double gain = f_min - mu;
  if (!(sigma > 0.0)) return std::max(0.0, gain);
  const double z = gain / sigma;
  const double cdf = 0.5 * std::erfc(-z / std::sqrt(2.0));
  const double pdf = std::exp(-0.5 * z * z) / std::sqrt(2.0 * M_PI);
  return std::max(0.0, gain * cdf + sigma * pdf);
}

double expected_improvement(const GpState& gp, const VectorXd& p, double f_min) {
  const auto pred = gp_predict(gp, p);
  return expected_improvement(pred.mean, std::sqrt(pred.variance), f_min);
}

std::size_t default_n_init(std::size_t dim) { return std::max<std::size_t>(8, 4 * dim); }

namespace {

struct Box {
  std::vector<envs::ParamBound> bounds;

  std::vector<double> to_params(const VectorXd& u) const {
    std::vector<double> p(bounds.size());
    for (std::size_t i = 0; i < bounds.size(); ++i) {
      p[i] = bounds[i].lo + u[static_cast<Eigen::Index>(i)] * (bounds[i].hi - bounds[i].lo);
    }
    return p;
  }
  VectorXd to_unit(const std::vector<double>& p) const {
    VectorXd u(static_cast<Eigen::Index>(p.size()));
    for (std::size_t i = 0; i < p.size(); ++i) {
      u[static_cast<Eigen::Index>(i)] = std::clamp((p[i] - bounds[i].lo) / (bounds[i].hi - bounds[i].lo), 0.0, 1.0);
    }
    return u;
  }
  stl::Valuation valuation(const std::vector<double>& p) const {
    stl::Valuation v;
    for (std::size_t i = 0; i < bounds.size(); ++i) v[bounds[i].name] = p[i];
    return v;
  }
};

std::vector<VectorXd> latin_hypercube(std::size_t n, std::size_t dim, std::mt19937_64& rng) {
  std::vector<VectorXd> pts(n, VectorXd(static_cast<Eigen::Index>(dim)));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<std::size_t> perm(n);
  for (std::size_t d = 0; d < dim; ++d) {
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    for (std::size_t i = 0; i < n; ++i) {
      pts[i][static_cast<Eigen::Index>(d)] = (static_cast<double>(perm[i]) + unit(rng)) / static_cast<double>(n);
    }
  }
  return pts;
}

VectorXd propose(const GpState& gp, double f_min, const BoConfig& cfg, std::mt19937_64& rng) {
  const auto dim = gp.x.cols();
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<std::pair<double, VectorXd>> scored;
  scored.reserve(cfg.candidates);
  for (std::size_t c = 0; c < cfg.candidates; ++c) {
    VectorXd u(dim);
    for (Eigen::Index d = 0; d < dim; ++d) u[d] = unit(rng);
    scored.emplace_back(expected_improvement(gp, u, f_min), std::move(u));
  }
  std::stable_sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  if (scored.empty()) throw std::invalid_argument("BO needs at least one EI candidate");

  auto best = scored.front();
  const std::size_t starts = std::min(cfg.refine_starts, scored.size());
  for (std::size_t s = 0; s < starts; ++s) {
    auto [ei, u] = scored[s];
    double step = 0.1;
    for (std::size_t pass = 0; pass < cfg.refine_passes; ++pass) {
      bool moved = false;
      for (Eigen::Index d = 0; d < dim; ++d) {
        for (double dir : {-1.0, 1.0}) {
          VectorXd trial = u;
          trial[d] = std::clamp(trial[d] + dir * step, 0.0, 1.0);
          const double e = expected_improvement(gp, trial, f_min);
          if (e > ei) {
            ei = e;
            u = std::move(trial);
            moved = true;
          }
        }
      }
      if (!moved) step *= 0.5;
    }
    if (ei > best.first) best = {ei, u};
  }
  // A flat acquisition carries no information; explore instead.
  if (!(best.first > 0.0)) return scored[std::uniform_int_distribution<std::size_t>(0, scored.size() - 1)(rng)].second;
  return best.second;
}

}  // namespace

BoResult optimize(const stl::Formula& tmpl, const std::vector<envs::ParamBound>& bounds, const LabeledDataset& ds,
                  const BoConfig& cfg, std::uint64_t seed, const stl::Valuation* warm_start) {
  ds.validate();
  if (bounds.empty()) throw std::invalid_argument("BO needs at least one parameter");
  const auto params = stl::free_parameters(tmpl);
  for (const auto& name : params) {
    if (std::none_of(bounds.begin(), bounds.end(), [&](const auto& b) { return b.name == name; })) {
      throw std::invalid_argument("no bounds given for parameter '" + name + "'");
    }
  }
  for (const auto& b : bounds) {
    if (!std::isfinite(b.lo) || !std::isfinite(b.hi) || !(b.hi > b.lo)) {
      throw std::invalid_argument("bounds for '" + b.name + "' must be finite with lo < hi");
    }
  }
  const std::size_t dim = bounds.size();
  const std::size_t n_init = cfg.n_init ? cfg.n_init : default_n_init(dim);
  if (cfg.budget < n_init) throw std::invalid_argument("BO budget is smaller than the initial design");

  const Box box{bounds};
  std::mt19937_64 rng(seed);
  auto design = latin_hypercube(n_init, dim, rng);
  if (warm_start) {
    std::vector<double> p(dim);
    for (std::size_t i = 0; i < dim; ++i) {
      const auto it = warm_start->find(bounds[i].name);
      if (it == warm_start->end()) throw std::invalid_argument("warm start lacks '" + bounds[i].name + "'");
      p[i] = it->second;
    }
    design.back() = box.to_unit(p);
  }

  BoResult result;
  std::vector<VectorXd> xs;
  std::vector<double> ys;
  auto evaluate = [&](const VectorXd& u) {
    const auto p = box.to_params(u);
    const double f = mcr_objective(tmpl, box.valuation(p), ds);
    result.history.push_back({result.history.size(), p, f});
    xs.push_back(u);
    ys.push_back(f);
    if (result.best.empty() || f < result.best_value) {
      result.best_value = f;
      result.best = box.valuation(p);
    }
    return f;
  };

  for (const auto& u : design) {
    if (evaluate(u) == 0.0) return result;
  }
  const VectorXd ell = VectorXd::Constant(static_cast<Eigen::Index>(dim), cfg.length_scale);
  while (result.evaluations() < cfg.budget) {
    MatrixXd x(static_cast<Eigen::Index>(xs.size()), static_cast<Eigen::Index>(dim));
    for (std::size_t i = 0; i < xs.size(); ++i) x.row(static_cast<Eigen::Index>(i)) = xs[i].transpose();
    const VectorXd y = Eigen::Map<const VectorXd>(ys.data(), static_cast<Eigen::Index>(ys.size()));
    // Fit on standardized values so the unit signal variance matches the data.
    const double mean = y.mean();
    double scale = 1.0;
    if (cfg.standardize) {
      const double sd = std::sqrt((y.array() - mean).square().mean());
      if (sd > 0.0) scale = sd;
    }
    const double shift = cfg.standardize ? mean : 0.0;
    const VectorXd z = (y.array() - shift) / scale;
    const GpState gp = gp_fit(x, z, ell, cfg.noise);
    if (evaluate(propose(gp, (result.best_value - shift) / scale, cfg, rng)) == 0.0) break;
  }
  return result;
}

void write_history_csv(const BoResult& r, const std::vector<envs::ParamBound>& bounds,
                       const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "iteration";
  for (const auto& b : bounds) out << ',' << b.name;
  out << ",mcr\n";
  for (const auto& e : r.history) {
    out << e.iteration;
    for (double p : e.point) out << ',' << stl::format_real(p);
    out << ',' << stl::format_real(e.value) << '\n';
  }
}

}  // namespace stlrl::bo
