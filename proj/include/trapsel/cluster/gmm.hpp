#pragma once

// Full-covariance Gaussian mixtures fitted by EM, with AIC/BIC model selection.

#include <cstdint>
#include <vector>

#include "trapsel/cluster/result.hpp"
#include "trapsel/common.hpp"

namespace trapsel {

enum class InformationCriterion { AIC, BIC };

struct GmmModel {
  int k = 0;
  std::vector<double> weights;
  std::vector<Vector> means;
  std::vector<Matrix> covariances;
  double log_likelihood = -kInf;
  double aic = kInf;
  double bic = kInf;
  std::vector<double> log_likelihood_history;  // one entry per E-step
  std::vector<int> reseed_iterations;          // history indices where a component was re-seeded
  int iterations = 0;
  bool converged = false;
};

/// Free parameters of a K-component, d-dimensional full-covariance mixture:
/// means, covariances and K - 1 independent weights.
inline double gmm_free_parameters(int k, Index d) {
  const auto dd = static_cast<double>(d);
  return static_cast<double>(k) * (dd + dd * (dd + 1.0) / 2.0) + static_cast<double>(k - 1);
}

inline double aic(double free_parameters, double log_likelihood) {
  return 2.0 * free_parameters - 2.0 * log_likelihood;
}

inline double bic(double free_parameters, double n, double log_likelihood) {
  return free_parameters * std::log(n) - 2.0 * log_likelihood;
}

struct GmmOptions {
  double reg_floor = 1e-6;
  int max_iter = 200;
  double tol = 1e-6;  // stop when the log-likelihood gains less than this
};

namespace detail {

struct ComponentDensity {
  Eigen::LLT<Matrix> chol;
  double log_norm = 0.0;  // -d/2 log 2pi - 1/2 log|Sigma|
};

inline ComponentDensity component_density(const Matrix& cov) {
  ComponentDensity c;
  c.chol.compute(cov);
  if (c.chol.info() != Eigen::Success) throw Error("gmm: covariance is not positive definite");
  const Matrix& l = c.chol.matrixLLT();
  double logdet = 0.0;
  for (Index i = 0; i < l.rows(); ++i) logdet += 2.0 * std::log(l(i, i));
  c.log_norm = -0.5 * static_cast<double>(cov.rows()) * std::log(2.0 * std::numbers::pi) - 0.5 * logdet;
  return c;
}

/// Fills log(pi_k N(x_i | mu_k, Sigma_k)) into `logp` (M x K) and returns per-row log p(x_i).
inline Vector weighted_log_densities(const Matrix& x, const GmmModel& g, Matrix& logp) {
  const Index m = x.rows();
  logp.resize(m, g.k);
  for (int c = 0; c < g.k; ++c) {
    const auto dens = component_density(g.covariances[static_cast<std::size_t>(c)]);
    const Matrix centered = (x.rowwise() - g.means[static_cast<std::size_t>(c)].transpose()).transpose();
    const Matrix z = dens.chol.matrixL().solve(centered);
    const double lw = std::log(std::max(g.weights[static_cast<std::size_t>(c)], 1e-300));
    for (Index i = 0; i < m; ++i) logp(i, c) = lw + dens.log_norm - 0.5 * z.col(i).squaredNorm();
  }
  Vector row_lse(m);
  for (Index i = 0; i < m; ++i) {
    const double mx = logp.row(i).maxCoeff();
    row_lse(i) = mx + std::log((logp.row(i).array() - mx).exp().sum());
  }
  return row_lse;
}

inline Matrix sample_covariance(const Matrix& x, const Vector& mean) {
  const Matrix c = x.rowwise() - mean.transpose();
  return (c.transpose() * c) / static_cast<double>(x.rows());
}

}  // namespace detail

/// Log density of the mixture at each row of `x`.
inline Vector gmm_log_density(const GmmModel& g, const Matrix& x) {
  Matrix logp;
  return detail::weighted_log_densities(x, g, logp);
}

/// Posterior responsibilities (M x K).
inline Matrix gmm_responsibilities(const GmmModel& g, const Matrix& x) {
  Matrix logp;
  const Vector lse = detail::weighted_log_densities(x, g, logp);
  for (Index i = 0; i < x.rows(); ++i) logp.row(i) = (logp.row(i).array() - lse(i)).exp().matrix();
  return logp;
}

inline GmmModel gmm_em(const Matrix& x, int k, std::uint64_t seed, const GmmOptions& opt = {}) {
  const Index m = x.rows();
  const Index d = x.cols();
  if (k < 1) throw InvalidArgument("gmm_em: K must be >= 1");
  if (m < k) throw InvalidArgument("gmm_em: K exceeds the number of points");
  if (!all_finite(x)) throw InvalidArgument("gmm_em: non-finite input");
  const Matrix reg = opt.reg_floor * Matrix::Identity(d, d);

  GmmModel g;
  g.k = k;

  // k-means++ seeding, then one hard-assignment M-step.
  Rng rng(seed);
  std::vector<Index> centers{static_cast<Index>(uniform_index(rng, static_cast<std::uint64_t>(m)))};
  std::vector<double> d2(static_cast<std::size_t>(m), kInf);
  while (static_cast<int>(centers.size()) < k) {
    double total = 0.0;
    for (Index i = 0; i < m; ++i) {
      d2[static_cast<std::size_t>(i)] = std::min(d2[static_cast<std::size_t>(i)], squared_distance(x, i, centers.back()));
      total += d2[static_cast<std::size_t>(i)];
    }
    Index pick = 0;
    if (total > 0.0) {
      double target = uniform01(rng) * total;
      for (Index i = 0; i < m; ++i) {
        target -= d2[static_cast<std::size_t>(i)];
        if (target <= 0.0 && d2[static_cast<std::size_t>(i)] > 0.0) {
          pick = i;
          break;
        }
        pick = i;
      }
    } else {
      pick = static_cast<Index>(uniform_index(rng, static_cast<std::uint64_t>(m)));
    }
    centers.push_back(pick);
  }
  Matrix resp = Matrix::Zero(m, k);
  for (Index i = 0; i < m; ++i) {
    int best = 0;
    for (int c = 1; c < k; ++c) {
      if (squared_distance(x, i, centers[static_cast<std::size_t>(c)]) <
          squared_distance(x, i, centers[static_cast<std::size_t>(best)]))
        best = c;
    }
    resp(i, best) = 1.0;
  }

  const Vector global_mean = x.colwise().mean().transpose();
  const Matrix global_cov = detail::sample_covariance(x, global_mean) + reg;
  Vector point_logp = Vector::Zero(m);

  auto m_step = [&](int history_index) {
    g.weights.assign(static_cast<std::size_t>(k), 0.0);
    g.means.assign(static_cast<std::size_t>(k), Vector::Zero(d));
    g.covariances.assign(static_cast<std::size_t>(k), global_cov);
    bool reseeded = false;
    for (int c = 0; c < k; ++c) {
      const double nk = resp.col(c).sum();
      const auto cu = static_cast<std::size_t>(c);
      if (nk < 1e-10 * static_cast<double>(m) + 1e-300) {
        // Emptied component: restart it at the worst-explained point.
        Index worst = 0;
        for (Index i = 1; i < m; ++i)
          if (point_logp(i) < point_logp(worst)) worst = i;
        g.means[cu] = x.row(worst).transpose();
        g.covariances[cu] = global_cov;
        g.weights[cu] = 1.0 / static_cast<double>(m);
        reseeded = true;
        continue;
      }
      g.weights[cu] = nk / static_cast<double>(m);
      g.means[cu] = (resp.col(c).transpose() * x).transpose() / nk;
      const Matrix centered = x.rowwise() - g.means[cu].transpose();
      g.covariances[cu] = (centered.transpose() * resp.col(c).asDiagonal() * centered) / nk + reg;
    }
    double wsum = 0.0;
    for (double w : g.weights) wsum += w;
    for (double& w : g.weights) w /= wsum;
    if (reseeded) g.reseed_iterations.push_back(history_index);
  };

  m_step(0);
  Matrix logp;
  for (int it = 0;; ++it) {
    point_logp = detail::weighted_log_densities(x, g, logp);
    const double ll = point_logp.sum();
    g.log_likelihood_history.push_back(ll);
    g.log_likelihood = ll;
    const std::size_t h = g.log_likelihood_history.size();
    if (h >= 2 && ll - g.log_likelihood_history[h - 2] < opt.tol) {
      g.converged = true;
      break;
    }
    if (it >= opt.max_iter) break;
    for (Index i = 0; i < m; ++i) resp.row(i) = (logp.row(i).array() - point_logp(i)).exp().matrix();
    m_step(static_cast<int>(h));
    g.iterations = it + 1;
  }

  const double p = gmm_free_parameters(k, d);
  g.aic = aic(p, g.log_likelihood);
  g.bic = bic(p, static_cast<double>(m), g.log_likelihood);
  return g;
}

struct GmmSelectOptions {
  int k_max = 10;
  InformationCriterion criterion = InformationCriterion::BIC;
  int restarts = 5;
  GmmOptions em{};
};

struct GmmSelection {
  ClusterResult clustering;
  GmmModel model;
  std::vector<double> scores;  // criterion value per K = 1..
};

inline GmmSelection gmm_select_model(const Matrix& x, std::uint64_t seed, const GmmSelectOptions& opt = {}) {
  if (opt.k_max < 1) throw InvalidArgument("gmm_select: K_max must be >= 1");
  if (opt.restarts < 1) throw InvalidArgument("gmm_select: restarts must be >= 1");
  const int kmax = static_cast<int>(std::min<Index>(opt.k_max, x.rows()));
  GmmSelection sel;
  double best_score = kInf;
  for (int k = 1; k <= kmax; ++k) {
    GmmModel best;
    for (int r = 0; r < opt.restarts; ++r) {
      auto g = gmm_em(x, k, mix_seed(seed, static_cast<std::uint64_t>(k) * 1000U + static_cast<std::uint64_t>(r)), opt.em);
      if (g.log_likelihood > best.log_likelihood) best = std::move(g);
    }
    const double score = opt.criterion == InformationCriterion::AIC ? best.aic : best.bic;
    sel.scores.push_back(score);
    if (score < best_score) {
      best_score = score;
      sel.model = std::move(best);
    }
  }

  const Matrix resp = gmm_responsibilities(sel.model, x);
  std::vector<int> raw(static_cast<std::size_t>(x.rows()));
  for (Index i = 0; i < x.rows(); ++i) {
    Index arg = 0;
    resp.row(i).maxCoeff(&arg);
    raw[static_cast<std::size_t>(i)] = static_cast<int>(arg);
  }
  sel.clustering = compact_labels(raw, [&](int c) {
    Index best = -1;
    for (Index i = 0; i < x.rows(); ++i) {
      if (raw[static_cast<std::size_t>(i)] != c) continue;
      if (best < 0 || resp(i, c) > resp(best, c)) best = i;
    }
    return best;
  });
  sel.clustering.method = ClusterMethod::GMM;
  sel.clustering.diagnostics = {{"k", static_cast<double>(sel.model.k)},
                                {"log_likelihood", sel.model.log_likelihood},
                                {"aic", sel.model.aic},
                                {"bic", sel.model.bic},
                                {"iterations", static_cast<double>(sel.model.iterations)}};
  if (!sel.model.reseed_iterations.empty()) sel.clustering.flags.emplace_back("component_reseeded");
  if (static_cast<int>(sel.clustering.k()) < sel.model.k) sel.clustering.flags.emplace_back("empty_component_dropped");
  return sel;
}

inline ClusterResult gmm_select(const Matrix& x, std::uint64_t seed, const GmmSelectOptions& opt = {}) {
  return gmm_select_model(x, seed, opt).clustering;
}

}  // namespace trapsel
