#include "enspipe/numerics.hpp"

#include <sstream>

namespace enspipe {

void checkFinite(const Matrix& m, const std::string& what) {
  if (!m.allFinite()) {
    throw ValidationError(what + ": contains NaN or Inf");
  }
}

void checkFinite(const Vector& v, const std::string& what) {
  if (!v.allFinite()) {
    throw ValidationError(what + ": contains NaN or Inf");
  }
}

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) {
    std::ostringstream os;
    os << "matmul: dimension mismatch, lhs is " << a.rows() << "x" << a.cols()
       << " but rhs is " << b.rows() << "x" << b.cols();
    throw ValidationError(os.str());
  }
  return a * b;
}

Vector relu(const Vector& x) { return x.cwiseMax(0.0); }

Matrix relu(const Matrix& x) { return x.cwiseMax(0.0); }

Vector softmax(const Vector& logits) {
  if (logits.size() == 0) {
    throw ValidationError("softmax: empty input");
  }
  Vector shifted = logits.array() - logits.maxCoeff();
  Vector e = shifted.array().exp();
  return e / e.sum();
}

Matrix softmaxRows(const Matrix& logits) {
  if (logits.cols() == 0) {
    throw ValidationError("softmax: empty input rows");
  }
  Matrix out(logits.rows(), logits.cols());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    out.row(i) = softmax(logits.row(i).transpose()).transpose();
  }
  return out;
}

Eigen::Index argmax(const Vector& x) {
  if (x.size() == 0) {
    throw ValidationError("argmax: empty input");
  }
  Eigen::Index best = 0;
  for (Eigen::Index i = 1; i < x.size(); ++i) {
    if (x[i] > x[best]) best = i;  // strict: lowest index wins ties
  }
  return best;
}

Eigen::Index argmaxRow(const Matrix& m, Eigen::Index row) {
  return argmax(m.row(row).transpose());
}

}  // namespace enspipe
