#pragma once

#include <Eigen/Core>

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "srcl/tensor.hpp"

namespace srcl {

/// One embedding per batch sample, rows = samples. Rows must have nonzero
/// Euclidean norm; cosine similarity is undefined otherwise.
using EmbeddingBatch = Eigen::MatrixXd;

struct ContrastiveConfig {
  double temperature = 0.1;
  double epsilon = 1e-12;  // norms at or below this count as zero

  void validate() const {
    if (!(temperature > 0.0)) throw config_error("contrastive temperature must be > 0");
    if (!(epsilon > 0.0)) throw config_error("contrastive epsilon must be > 0");
  }
};

namespace detail {

inline void require_same_batch(const EmbeddingBatch& u, const EmbeddingBatch& v) {
  if (u.rows() != v.rows())
    throw config_error("embedding batch size mismatch: " + std::to_string(u.rows()) + " vs " +
                       std::to_string(v.rows()));
  if (u.cols() != v.cols())
    throw config_error("embedding dimension mismatch: " + std::to_string(u.cols()) + " vs " +
                       std::to_string(v.cols()));
}

inline void require_index(const EmbeddingBatch& b, Eigen::Index i) {
  if (i < 0 || i >= b.rows())
    throw std::out_of_range("embedding index " + std::to_string(i) + " out of range [0, " +
                            std::to_string(b.rows()) + ")");
}

/// Rows scaled to unit norm; throws on a (near-)zero row.
inline EmbeddingBatch normalized_rows(const EmbeddingBatch& m, double epsilon, const char* side) {
  EmbeddingBatch out(m.rows(), m.cols());
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    const double n = m.row(i).norm();
    if (!(n > epsilon))
      throw std::domain_error(std::string("zero-norm embedding row ") + std::to_string(i) +
                              " on side " + side);
    out.row(i) = m.row(i) / n;
  }
  return out;
}

}  // namespace detail

inline double cosine_similarity(const Eigen::VectorXd& u, const Eigen::VectorXd& v,
                                double epsilon = 1e-12) {
  if (u.size() != v.size())
    throw config_error("cosine similarity dimension mismatch: " + std::to_string(u.size()) +
                       " vs " + std::to_string(v.size()));
  const double nu = u.norm();
  const double nv = v.norm();
  if (!(nu > epsilon)) throw std::domain_error("zero-norm embedding (first argument)");
  if (!(nv > epsilon)) throw std::domain_error("zero-norm embedding (second argument)");
  return u.dot(v) / (nu * nv);
}

/// Inter-embedding negative sum: sum over k != i of exp(cos(u_i, v_k) / tau).
inline double inter_term(const Eigen::VectorXd& u_i, const EmbeddingBatch& v, Eigen::Index i,
                         double tau, double epsilon = 1e-12) {
  detail::require_index(v, i);
  if (!(tau > 0.0)) throw config_error("temperature must be > 0");
  double s = 0.0;
  for (Eigen::Index k = 0; k < v.rows(); ++k) {
    if (k == i) continue;
    s += std::exp(cosine_similarity(u_i, v.row(k).transpose(), epsilon) / tau);
  }
  return s;
}

/// Intra-embedding negative sum over the anchor's own side.
inline double intra_term(const Eigen::VectorXd& u_i, const EmbeddingBatch& u, Eigen::Index i,
                         double tau, double epsilon = 1e-12) {
  return inter_term(u_i, u, i, tau, epsilon);
}

/// Per-anchor loss: log of the positive pair term over positive + both
/// negative sums. Always <= 0; exactly 0 when the batch has one sample.
/// Evaluated through a max-shifted log-sum so small temperatures are safe.
inline double pairwise_loss(Eigen::Index i, const EmbeddingBatch& u, const EmbeddingBatch& v,
                            const ContrastiveConfig& cfg) {
  cfg.validate();
  detail::require_same_batch(u, v);
  detail::require_index(u, i);
  const double tau = cfg.temperature;
  const EmbeddingBatch un = detail::normalized_rows(u, cfg.epsilon, "u");
  const EmbeddingBatch vn = detail::normalized_rows(v, cfg.epsilon, "v");

  const Eigen::Index n = u.rows();
  std::vector<double> terms;
  terms.reserve(static_cast<std::size_t>(2 * n - 1));
  const double pos = un.row(i).dot(vn.row(i)) / tau;
  terms.push_back(pos);
  for (Eigen::Index k = 0; k < n; ++k) {
    if (k == i) continue;
    terms.push_back(un.row(i).dot(vn.row(k)) / tau);
    terms.push_back(un.row(i).dot(un.row(k)) / tau);
  }
  double m = terms[0];
  for (double t : terms) m = std::max(m, t);
  double acc = 0.0;
  for (double t : terms) acc += std::exp(t - m);
  return pos - (m + std::log(acc));
}

namespace detail {

struct BatchLossWork {
  EmbeddingBatch un, vn;     // normalized rows
  EmbeddingBatch a, b, c;    // cosine matrices: a = un vn^T, b = un un^T, c = vn vn^T
  Eigen::VectorXd log_du;    // log denominator of the u-anchored loss, per row
  Eigen::VectorXd log_dv;    // v-anchored, per row
  double value = 0.0;
};

inline BatchLossWork batch_loss_work(const EmbeddingBatch& u, const EmbeddingBatch& v,
                                     const ContrastiveConfig& cfg) {
  cfg.validate();
  require_same_batch(u, v);
  const double tau = cfg.temperature;
  const Eigen::Index n = u.rows();

  BatchLossWork w;
  w.un = normalized_rows(u, cfg.epsilon, "u");
  w.vn = normalized_rows(v, cfg.epsilon, "v");
  w.a = (w.un * w.vn.transpose()) / tau;
  w.b = (w.un * w.un.transpose()) / tau;
  w.c = (w.vn * w.vn.transpose()) / tau;
  w.log_du.resize(n);
  w.log_dv.resize(n);

  double total = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    // u-anchored denominator: full row i of a plus off-diagonal row i of b.
    double m = w.a(i, i);
    for (Eigen::Index k = 0; k < n; ++k) {
      m = std::max(m, w.a(i, k));
      if (k != i) m = std::max(m, w.b(i, k));
    }
    double acc = 0.0;
    for (Eigen::Index k = 0; k < n; ++k) {
      acc += std::exp(w.a(i, k) - m);
      if (k != i) acc += std::exp(w.b(i, k) - m);
    }
    w.log_du[i] = m + std::log(acc);

    // v-anchored: column i of a plus off-diagonal row i of c.
    m = w.a(i, i);
    for (Eigen::Index k = 0; k < n; ++k) {
      m = std::max(m, w.a(k, i));
      if (k != i) m = std::max(m, w.c(i, k));
    }
    acc = 0.0;
    for (Eigen::Index k = 0; k < n; ++k) {
      acc += std::exp(w.a(k, i) - m);
      if (k != i) acc += std::exp(w.c(i, k) - m);
    }
    w.log_dv[i] = m + std::log(acc);

    total += 2.0 * w.a(i, i) - w.log_du[i] - w.log_dv[i];
  }
  w.value = -total / (2.0 * static_cast<double>(n));
  return w;
}

}  // namespace detail

/// Symmetric batch objective: -(1/2N) sum_i [L(u_i, v_i) + L(v_i, u_i)].
/// Nonnegative, zero at N = 1, invariant to swapping the two sides.
inline double symmetric_batch_loss(const EmbeddingBatch& u, const EmbeddingBatch& v,
                                   const ContrastiveConfig& cfg) {
  return detail::batch_loss_work(u, v, cfg).value;
}

/// Loss value plus analytic gradients with respect to every embedding entry.
/// The gradient is assembled on the cosine matrices and chained through the
/// row normalization.
inline double symmetric_batch_loss_grad(const EmbeddingBatch& u, const EmbeddingBatch& v,
                                        const ContrastiveConfig& cfg, EmbeddingBatch& du,
                                        EmbeddingBatch& dv) {
  const auto w = detail::batch_loss_work(u, v, cfg);
  const double tau = cfg.temperature;
  const Eigen::Index n = u.rows();
  const double scale = 1.0 / (2.0 * static_cast<double>(n) * tau);

  EmbeddingBatch ga(n, n), gb = EmbeddingBatch::Zero(n, n), gc = EmbeddingBatch::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index k = 0; k < n; ++k) {
      double g = std::exp(w.a(i, k) - w.log_du[i]) + std::exp(w.a(i, k) - w.log_dv[k]);
      if (i == k) g -= 2.0;
      ga(i, k) = scale * g;
      if (i != k) {
        gb(i, k) = scale * std::exp(w.b(i, k) - w.log_du[i]);
        gc(i, k) = scale * std::exp(w.c(i, k) - w.log_dv[i]);
      }
    }
  }

  // d/d(normalized rows); the 1/tau inside a, b, c is already in `scale`.
  EmbeddingBatch dun = ga * w.vn + (gb + gb.transpose()) * w.un;
  EmbeddingBatch dvn = ga.transpose() * w.un + (gc + gc.transpose()) * w.vn;

  du.resize(n, u.cols());
  dv.resize(n, v.cols());
  for (Eigen::Index i = 0; i < n; ++i) {
    const double nu = u.row(i).norm();
    const double nv = v.row(i).norm();
    const Eigen::RowVectorXd uh = w.un.row(i);
    const Eigen::RowVectorXd vh = w.vn.row(i);
    du.row(i) = (dun.row(i) - dun.row(i).dot(uh) * uh) / nu;
    dv.row(i) = (dvn.row(i) - dvn.row(i).dot(vh) * vh) / nv;
  }
  return w.value;
}

/// Raster-flattens equally shaped maps into one embedding row per map.
inline EmbeddingBatch flatten_to_embeddings(const std::vector<Tensor>& maps) {
  if (maps.empty()) throw config_error("flatten_to_embeddings: empty batch");
  const Shape& shape = maps.front().shape();
  const Index d = maps.front().numel();
  EmbeddingBatch out(static_cast<Eigen::Index>(maps.size()), d);
  for (std::size_t i = 0; i < maps.size(); ++i) {
    if (maps[i].shape() != shape)
      throw config_error("flatten_to_embeddings: map " + std::to_string(i) + " has shape " +
                         shape_str(maps[i].shape()) + ", expected " + shape_str(shape));
    for (Index j = 0; j < d; ++j) out(static_cast<Eigen::Index>(i), j) = maps[i][j];
  }
  return out;
}

}  // namespace srcl
