#pragma once

#include "kdvr/core.hpp"

namespace kdvr {

// Images are clamped to [0, 1] before comparison; sizes must match.
double mse(const Image& a, const Image& b);

// 10 log10(1 / mse), reported as 99 when mse < 1e-10.
double psnr(const Image& a, const Image& b);

// Mean structural similarity with the standard 11x11 Gaussian window
// (sigma 1.5, K1 = 0.01, K2 = 0.03, dynamic range 1), evaluated only where
// the window fits entirely, averaged over channels. Requires >= 11 pixels on
// each side.
double ssim(const Image& a, const Image& b);

}  // namespace kdvr
