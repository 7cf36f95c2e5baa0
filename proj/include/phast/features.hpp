#pragma once

// Shared configuration feature map. Angular coordinates expand to two Fourier
// harmonics (sin q, cos q, sin 2q, cos 2q) so that periodic structure is
// expressible without wrap discontinuities; Euclidean coordinates pass
// through unchanged. Blocks are emitted in coordinate order.

#include <Eigen/Dense>
#include <vector>

#include "phast/graph.hpp"

namespace phast {

inline int feature_dim(const std::vector<bool>& angular) {
  int f = 0;
  for (bool a : angular) f += a ? 4 : 1;
  return f;
}

inline Eigen::VectorXd features(const Eigen::VectorXd& q,
                                const std::vector<bool>& angular) {
  Eigen::VectorXd out(feature_dim(angular));
  int e = 0;
  for (int j = 0; j < q.size(); ++j) {
    if (angular[static_cast<size_t>(j)]) {
      out[e++] = std::sin(q[j]);
      out[e++] = std::cos(q[j]);
      out[e++] = std::sin(2.0 * q[j]);
      out[e++] = std::cos(2.0 * q[j]);
    } else {
      out[e++] = q[j];
    }
  }
  return out;
}

// Jacobian d(features)/dq, dense F x n (each feature depends on one q_j).
inline Eigen::MatrixXd features_jac(const Eigen::VectorXd& q,
                                    const std::vector<bool>& angular) {
  Eigen::MatrixXd J = Eigen::MatrixXd::Zero(feature_dim(angular), q.size());
  int e = 0;
  for (int j = 0; j < q.size(); ++j) {
    if (angular[static_cast<size_t>(j)]) {
      J(e++, j) = std::cos(q[j]);
      J(e++, j) = -std::sin(q[j]);
      J(e++, j) = 2.0 * std::cos(2.0 * q[j]);
      J(e++, j) = -2.0 * std::sin(2.0 * q[j]);
    } else {
      J(e++, j) = 1.0;
    }
  }
  return J;
}

// Entrywise derivative of the Jacobian in its own coordinate:
// out(e, j) = d(J(e, j))/dq_j. Off-coordinate derivatives are zero.
inline Eigen::MatrixXd features_jac_dq(const Eigen::VectorXd& q,
                                       const std::vector<bool>& angular) {
  Eigen::MatrixXd H = Eigen::MatrixXd::Zero(feature_dim(angular), q.size());
  int e = 0;
  for (int j = 0; j < q.size(); ++j) {
    if (angular[static_cast<size_t>(j)]) {
      H(e++, j) = -std::sin(q[j]);
      H(e++, j) = -std::cos(q[j]);
      H(e++, j) = -4.0 * std::sin(2.0 * q[j]);
      H(e++, j) = -4.0 * std::cos(2.0 * q[j]);
    } else {
      H(e++, j) = 0.0;
    }
  }
  return H;
}

inline NodeId features_graph(Graph& g, NodeId q,
                             const std::vector<bool>& angular) {
  std::vector<NodeId> parts;
  const Eigen::Index n = g.val(q).rows();
  for (int j = 0; j < n; ++j) {
    NodeId qj = g.rows(q, j, 1);
    if (angular[static_cast<size_t>(j)]) {
      parts.push_back(g.sin_(qj));
      parts.push_back(g.cos_(qj));
      NodeId q2 = g.scale(qj, 2.0);
      parts.push_back(g.sin_(q2));
      parts.push_back(g.cos_(q2));
    } else {
      parts.push_back(qj);
    }
  }
  return g.concat_rows(parts);
}

}  // namespace phast
