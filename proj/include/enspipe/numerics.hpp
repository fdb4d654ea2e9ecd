#ifndef ENSPIPE_NUMERICS_HPP_
#define ENSPIPE_NUMERICS_HPP_

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "enspipe/error.hpp"

namespace enspipe {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;

// Throws ValidationError if any entry is NaN or Inf.
void checkFinite(const Matrix& m, const std::string& what);
void checkFinite(const Vector& v, const std::string& what);

// Matrix product with an explicit shape check; error names both shapes.
Matrix matmul(const Matrix& a, const Matrix& b);

// Elementwise max(0, x).
Vector relu(const Vector& x);
Matrix relu(const Matrix& x);

// Numerically stable softmax (max-subtraction). Output sums to 1.
Vector softmax(const Vector& logits);

// Row-wise softmax over a batch of logit rows.
Matrix softmaxRows(const Matrix& logits);

// Index of the maximum; ties broken by lowest index.
Eigen::Index argmax(const Vector& x);
Eigen::Index argmaxRow(const Matrix& m, Eigen::Index row);

}  // namespace enspipe

#endif  // ENSPIPE_NUMERICS_HPP_
