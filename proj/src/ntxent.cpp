#include "sse/ntxent.hpp"

#include <cmath>
#include <limits>
#include <string>

#include "sse/error.hpp"

namespace sse {

NtxentResult ntxent_loss(const Eigen::MatrixXd& z, double temperature) {
  const Eigen::Index m = z.rows();
  if (m < 2 || m % 2 != 0) throw UsageError("ntxent_loss: need an even number (>= 2) of embeddings");
  if (!(temperature > 0)) throw UsageError("ntxent_loss: temperature must be positive");
  if (!z.allFinite()) throw NumericalError("ntxent_loss: non-finite embedding");

  const Eigen::VectorXd norms = z.rowwise().norm();
  for (Eigen::Index i = 0; i < m; ++i)
    if (!(norms(i) > 0)) throw NumericalError("ntxent_loss: zero-norm embedding at row " + std::to_string(i));
  const Eigen::MatrixXd u = z.array().colwise() / norms.array();
  const Eigen::MatrixXd sim = u * u.transpose();

  // g(i, j) = d(loss)/d(sim(i, j)) from anchor i's term.
  Eigen::MatrixXd g = Eigen::MatrixXd::Zero(m, m);
  double total = 0.0;
  for (Eigen::Index i = 0; i < m; ++i) {
    const Eigen::Index pos = i ^ 1;
    double max_logit = -std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < m; ++j)
      if (j != i) max_logit = std::max(max_logit, sim(i, j) / temperature);
    double denom = 0.0;
    for (Eigen::Index j = 0; j < m; ++j)
      if (j != i) denom += std::exp(sim(i, j) / temperature - max_logit);
    total += -(sim(i, pos) / temperature) + max_logit + std::log(denom);
    for (Eigen::Index j = 0; j < m; ++j) {
      if (j == i) continue;
      const double p = std::exp(sim(i, j) / temperature - max_logit) / denom;
      g(i, j) = (p - (j == pos ? 1.0 : 0.0)) / (temperature * static_cast<double>(m));
    }
  }

  NtxentResult out;
  out.loss = total / static_cast<double>(m);
  if (!std::isfinite(out.loss)) throw NumericalError("ntxent_loss: non-finite loss");
  // sim is symmetric, so each entry feeds both rows it touches.
  const Eigen::MatrixXd du = (g + g.transpose()) * u;
  out.grad.resize(m, z.cols());
  for (Eigen::Index i = 0; i < m; ++i) {
    const double radial = u.row(i).dot(du.row(i));
    out.grad.row(i) = (du.row(i) - radial * u.row(i)) / norms(i);
  }
  return out;
}

}  // namespace sse
