#include "kdvr/metrics.hpp"

#include <algorithm>

namespace kdvr {

namespace {

void check_sizes(const Image& a, const Image& b) {
  if (a.width != b.width || a.height != b.height)
    throw SizeError("image metric: sizes differ (" + std::to_string(a.width) + "x" +
                    std::to_string(a.height) + " vs " + std::to_string(b.width) + "x" +
                    std::to_string(b.height) + ")");
}

double clamp01(double v) { return std::min(1.0, std::max(0.0, v)); }

constexpr int kWin = 11;
constexpr double kWinSigma = 1.5;

std::array<double, kWin> gaussian_window() {
  std::array<double, kWin> w{};
  double sum = 0.0;
  for (int i = 0; i < kWin; ++i) {
    double d = i - (kWin - 1) / 2.0;
    w[i] = std::exp(-d * d / (2.0 * kWinSigma * kWinSigma));
    sum += w[i];
  }
  for (double& v : w) v /= sum;
  return w;
}

// Separable valid-region convolution; output is (w - 10) x (h - 10).
std::vector<double> blur_valid(const std::vector<double>& src, int w, int h) {
  static const std::array<double, kWin> g = gaussian_window();
  int ow = w - (kWin - 1);
  std::vector<double> tmp(static_cast<size_t>(ow) * h, 0.0);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < ow; ++x) {
      double s = 0.0;
      for (int k = 0; k < kWin; ++k) s += g[k] * src[static_cast<size_t>(y) * w + x + k];
      tmp[static_cast<size_t>(y) * ow + x] = s;
    }
  int oh = h - (kWin - 1);
  std::vector<double> out(static_cast<size_t>(ow) * oh, 0.0);
  for (int y = 0; y < oh; ++y)
    for (int x = 0; x < ow; ++x) {
      double s = 0.0;
      for (int k = 0; k < kWin; ++k) s += g[k] * tmp[static_cast<size_t>(y + k) * ow + x];
      out[static_cast<size_t>(y) * ow + x] = s;
    }
  return out;
}

}  // namespace

double mse(const Image& a, const Image& b) {
  check_sizes(a, b);
  double s = 0.0;
  for (size_t i = 0; i < a.rgb.size(); ++i) {
    double d = clamp01(a.rgb[i]) - clamp01(b.rgb[i]);
    s += d * d;
  }
  return s / static_cast<double>(a.rgb.size());
}

double psnr(const Image& a, const Image& b) {
  double m = mse(a, b);
  if (m < 1e-10) return 99.0;
  return 10.0 * std::log10(1.0 / m);
}

double ssim(const Image& a, const Image& b) {
  check_sizes(a, b);
  if (a.width < kWin || a.height < kWin)
    throw SizeError("ssim: image smaller than the 11x11 window");
  constexpr double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;

  int w = a.width, h = a.height;
  size_t n = static_cast<size_t>(w) * h;
  std::vector<double> xa(n), xb(n), xaa(n), xbb(n), xab(n);
  double total = 0.0;
  for (int ch = 0; ch < 3; ++ch) {
    for (size_t p = 0; p < n; ++p) {
      double va = clamp01(a.rgb[p * 3 + ch]);
      double vb = clamp01(b.rgb[p * 3 + ch]);
      xa[p] = va;
      xb[p] = vb;
      xaa[p] = va * va;
      xbb[p] = vb * vb;
      xab[p] = va * vb;
    }
    std::vector<double> mu_a = blur_valid(xa, w, h);
    std::vector<double> mu_b = blur_valid(xb, w, h);
    std::vector<double> m_aa = blur_valid(xaa, w, h);
    std::vector<double> m_bb = blur_valid(xbb, w, h);
    std::vector<double> m_ab = blur_valid(xab, w, h);

    double acc = 0.0;
    for (size_t p = 0; p < mu_a.size(); ++p) {
      double va = m_aa[p] - mu_a[p] * mu_a[p];
      double vb = m_bb[p] - mu_b[p] * mu_b[p];
      double cov = m_ab[p] - mu_a[p] * mu_b[p];
      acc += (2.0 * mu_a[p] * mu_b[p] + c1) * (2.0 * cov + c2) /
             ((mu_a[p] * mu_a[p] + mu_b[p] * mu_b[p] + c1) * (va + vb + c2));
    }
    total += acc / static_cast<double>(mu_a.size());
  }
  return total / 3.0;
}

}  // namespace kdvr
