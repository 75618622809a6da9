#pragma once

#include "dnrf/image.hpp"

namespace dnrf::train {

inline constexpr double kPsnrCap = 99.0;

// Mean absolute difference over all pixels and channels.
double l1_distance(const Image& a, const Image& b);
double mse(const Image& a, const Image& b);
// 10 log10(1 / MSE) for images in [0, 1], capped at kPsnrCap.
double psnr(const Image& a, const Image& b);
// Mean SSIM over every fully-contained 11x11 Gaussian window (sigma 1.5,
// K1 = 0.01, K2 = 0.03, L = 1), averaged over channels.
double ssim(const Image& a, const Image& b);

}  // namespace dnrf::train
