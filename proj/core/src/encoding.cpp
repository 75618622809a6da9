#include "dnrf/encoding.hpp"

#include <cmath>
#include <numbers>

#include "dnrf/errors.hpp"

namespace dnrf::encoding {
namespace {

// Writes the encoding of one 3-vector into out[0 .. encoded_dim).
template <typename Out>
void encode_into(const double* x, int freqs, bool include_input, Out out) {
  int row = 0;
  if (include_input) {
    for (int c = 0; c < 3; ++c) out(row++, x[c]);
  }
  if (freqs == 0) return;
  double s[3];
  double co[3];
  for (int c = 0; c < 3; ++c) {
    s[c] = std::sin(std::numbers::pi * x[c]);
    co[c] = std::cos(std::numbers::pi * x[c]);
  }
  for (int k = 0; k < freqs; ++k) {
    for (int c = 0; c < 3; ++c) out(row++, s[c]);
    for (int c = 0; c < 3; ++c) out(row++, co[c]);
    for (int c = 0; c < 3; ++c) {
      const double s2 = 2.0 * s[c] * co[c];
      const double c2 = (co[c] - s[c]) * (co[c] + s[c]);
      s[c] = s2;
      co[c] = c2;
    }
  }
}

}  // namespace

Eigen::VectorXd positional_encode(const std::array<double, 3>& x, int freqs, bool include_input) {
  if (freqs < 0) throw ContractViolation("positional_encode: negative frequency count");
  Eigen::VectorXd out(encoded_dim(freqs, include_input));
  encode_into(x.data(), freqs, include_input, [&](int row, double v) { out(row) = v; });
  return out;
}

template <typename T>
Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic> encode_batch(const Eigen::Matrix<T, 3, Eigen::Dynamic>& points,
                                                              int freqs, bool include_input) {
  if (freqs < 0) throw ContractViolation("encode_batch: negative frequency count");
  Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic> out(encoded_dim(freqs, include_input), points.cols());
  for (Eigen::Index j = 0; j < points.cols(); ++j) {
    const double x[3] = {static_cast<double>(points(0, j)), static_cast<double>(points(1, j)),
                         static_cast<double>(points(2, j))};
    T* col = out.col(j).data();
    encode_into(x, freqs, include_input, [col](int row, double v) { col[row] = static_cast<T>(v); });
  }
  return out;
}

template Eigen::MatrixXf encode_batch(const Eigen::Matrix<float, 3, Eigen::Dynamic>&, int, bool);
template Eigen::MatrixXd encode_batch(const Eigen::Matrix<double, 3, Eigen::Dynamic>&, int, bool);

}  // namespace dnrf::encoding
