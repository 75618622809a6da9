#pragma once

#include <Eigen/Dense>

#include <array>

namespace dnrf::encoding {

struct EncodingConfig {
  int pos_freqs = 10;
  int dir_freqs = 4;
  bool include_input = true;

  bool operator==(const EncodingConfig&) const = default;
};

// Encoded width of a 3-vector with `freqs` octaves.
constexpr int encoded_dim(int freqs, bool include_input) { return 3 * (include_input ? 1 : 0) + 6 * freqs; }

// [x?, sin(2^0 pi x), cos(2^0 pi x), ..., sin(2^(F-1) pi x), cos(2^(F-1) pi x)],
// each block componentwise over the three coordinates.
Eigen::VectorXd positional_encode(const std::array<double, 3>& x, int freqs, bool include_input);

// Column-wise encoding of a 3xN matrix. Octaves are generated in double by
// angle doubling from one sin/cos pair per coordinate.
template <typename T>
Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic> encode_batch(
    const Eigen::Matrix<T, 3, Eigen::Dynamic>& points, int freqs, bool include_input);

}  // namespace dnrf::encoding
