#include "dnrf/nn.hpp"

namespace dnrf::nn {

template struct LinearLayer<float>;
template struct LinearLayer<double>;
template struct DenseStack<float>;
template struct DenseStack<double>;
template struct AdamState<float>;
template struct AdamState<double>;

template const Matrix<float>& dense_forward(const DenseStack<float>&, Matrix<float>, const Vector<float>&,
                                            DenseTape<float>&);
template const Matrix<double>& dense_forward(const DenseStack<double>&, Matrix<double>, const Vector<double>&,
                                             DenseTape<double>&);
template DenseInputGrad<float> dense_backward(const DenseStack<float>&, const DenseTape<float>&, Matrix<float>,
                                              DenseStack<float>&, bool);
template DenseInputGrad<double> dense_backward(const DenseStack<double>&, const DenseTape<double>&,
                                               Matrix<double>, DenseStack<double>&, bool);

}  // namespace dnrf::nn
