#pragma once

#include <Eigen/Core>

namespace sse {

struct NtxentResult {
  double loss = 0.0;
  Eigen::MatrixXd grad;  // d(loss)/d(embeddings), same shape as the input
};

/// NT-Xent over 2n embeddings stored as rows; row 2k pairs with row 2k+1.
/// For anchor i the softmax runs over all j != i (positive included) of
/// cos(z_i, z_j) / temperature; the loss is the mean over all 2n anchors.
/// Gradients flow through the cosine normalization. Throws NumericalError on
/// zero-norm or non-finite rows.
NtxentResult ntxent_loss(const Eigen::MatrixXd& embeddings, double temperature);

}  // namespace sse
