#include "omni/ssim.hpp"

#include <array>
#include <cmath>

#include "omni/common.hpp"

namespace omni {

namespace {

constexpr int kWin = 11;
constexpr int kHalf = kWin / 2;
constexpr double kC1 = 0.01 * 0.01;
constexpr double kC2 = 0.03 * 0.03;

std::array<double, kWin> gaussian_taps() {
  std::array<double, kWin> t{};
  double sum = 0;
  for (int i = 0; i < kWin; ++i) {
    const double x = i - kHalf;
    t[i] = std::exp(-x * x / (2.0 * 1.5 * 1.5));
    sum += t[i];
  }
  for (auto& v : t) v /= sum;
  return t;
}

const std::array<double, kWin>& taps() {
  static const auto t = gaussian_taps();
  return t;
}

// Separable valid-mode filter: output is (H-10)x(W-10).
Image conv_valid(const Image& in) {
  const auto& w = taps();
  const int W = in.width(), H = in.height();
  Image tmp(W - 2 * kHalf, H);  // horizontal pass
  for (int y = 0; y < H; ++y)
    for (int x = kHalf; x < W - kHalf; ++x) {
      double s = 0;
      for (int k = -kHalf; k <= kHalf; ++k) s += w[k + kHalf] * in.at(y, x + k);
      tmp.at(y, x - kHalf) = s;
    }
  Image out(W - 2 * kHalf, H - 2 * kHalf);
  for (int y = kHalf; y < H - kHalf; ++y)
    for (int x = 0; x < tmp.width(); ++x) {
      double s = 0;
      for (int k = -kHalf; k <= kHalf; ++k) s += w[k + kHalf] * tmp.at(y + k, x);
      out.at(y - kHalf, x) = s;
    }
  return out;
}

// Adjoint of conv_valid: scatter from the valid map back to the full image.
void conv_valid_adjoint(const Image& map, int W, int H, Image& acc) {
  const auto& w = taps();
  Image tmp(W - 2 * kHalf, H, 0.0);  // adjoint of the vertical pass
  for (int y = 0; y < map.height(); ++y)
    for (int x = 0; x < map.width(); ++x) {
      const double v = map.at(y, x);
      if (v == 0) continue;
      for (int k = -kHalf; k <= kHalf; ++k) tmp.at(y + kHalf + k, x) += w[k + kHalf] * v;
    }
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < tmp.width(); ++x) {
      const double v = tmp.at(y, x);
      if (v == 0) continue;
      for (int k = -kHalf; k <= kHalf; ++k) acc.at(y, x + kHalf + k) += w[k + kHalf] * v;
    }
}

Image product(const Image& a, const Image& b) {
  Image out(a.width(), a.height());
  for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] = a.data()[i] * b.data()[i];
  return out;
}

struct Stats {
  Image mu_a, mu_b, mu_aa, mu_bb, mu_ab;
};

Stats compute_stats(const Image& a, const Image& b) {
  Stats s;
  s.mu_a = conv_valid(a);
  s.mu_b = conv_valid(b);
  s.mu_aa = conv_valid(product(a, a));
  s.mu_bb = conv_valid(product(b, b));
  s.mu_ab = conv_valid(product(a, b));
  return s;
}

}  // namespace

double ssim(const Image& a, const Image& b) {
  if (!a.same_size(b)) throw DataError("ssim: image sizes differ");
  if (a.width() < kWin || a.height() < kWin) return 1.0;
  const Stats s = compute_stats(a, b);
  double total = 0;
  const std::size_t n = s.mu_a.size();
  for (std::size_t i = 0; i < n; ++i) {
    const double ma = s.mu_a.data()[i], mb = s.mu_b.data()[i];
    const double va = s.mu_aa.data()[i] - ma * ma;
    const double vb = s.mu_bb.data()[i] - mb * mb;
    const double cov = s.mu_ab.data()[i] - ma * mb;
    const double num = (2 * ma * mb + kC1) * (2 * cov + kC2);
    const double den = (ma * ma + mb * mb + kC1) * (va + vb + kC2);
    total += num / den;
  }
  return total / static_cast<double>(n);
}

double ssim(const ColorImage& a, const ColorImage& b) {
  return (ssim(a.r, b.r) + ssim(a.g, b.g) + ssim(a.b, b.b)) / 3.0;
}

void ssim_backward(const Image& a, const Image& b, double upstream, Image& grad_a) {
  if (a.width() < kWin || a.height() < kWin) return;
  const Stats s = compute_stats(a, b);
  const int mw = s.mu_a.width(), mh = s.mu_a.height();
  const double scale = upstream / (static_cast<double>(mw) * mh);

  // Per-map-pixel partials with respect to the filtered moments of `a`.
  Image g_mu(mw, mh), g_aa(mw, mh), g_ab(mw, mh);
  for (int y = 0; y < mh; ++y)
    for (int x = 0; x < mw; ++x) {
      const double ma = s.mu_a.at(y, x), mb = s.mu_b.at(y, x);
      const double va = s.mu_aa.at(y, x) - ma * ma;
      const double vb = s.mu_bb.at(y, x) - mb * mb;
      const double cov = s.mu_ab.at(y, x) - ma * mb;
      const double A1 = 2 * ma * mb + kC1;
      const double A2 = 2 * cov + kC2;
      const double B1 = ma * ma + mb * mb + kC1;
      const double B2 = va + vb + kC2;
      const double val = (A1 * A2) / (B1 * B2);

      // d val / d mu_a with mu_aa, mu_ab held fixed:
      //   A1 += 2 mb, A2 += -2 mb, B1 += 2 ma, B2 += -2 ma.
      const double d_mu = (2 * mb * A2 + A1 * (-2 * mb)) / (B1 * B2) -
                          val * (2 * ma / B1 - 2 * ma / B2);
      const double d_aa = -val / B2;           // B2 channel
      const double d_ab = 2 * A1 / (B1 * B2);  // A2 channel

      g_mu.at(y, x) = scale * d_mu;
      g_aa.at(y, x) = scale * d_aa;
      g_ab.at(y, x) = scale * d_ab;
    }

  const int W = a.width(), H = a.height();
  Image acc_mu(W, H, 0.0), acc_aa(W, H, 0.0), acc_ab(W, H, 0.0);
  conv_valid_adjoint(g_mu, W, H, acc_mu);
  conv_valid_adjoint(g_aa, W, H, acc_aa);
  conv_valid_adjoint(g_ab, W, H, acc_ab);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x)
      grad_a.at(y, x) +=
          acc_mu.at(y, x) + 2 * a.at(y, x) * acc_aa.at(y, x) + b.at(y, x) * acc_ab.at(y, x);
}

}  // namespace omni
