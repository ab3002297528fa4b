#pragma once

#include "omni/image.hpp"

namespace omni {

// SSIM with the standard 11x11 Gaussian window (sigma 1.5), C1=0.01^2,
// C2=0.03^2 on the [0,1] range. The map is evaluated on the valid interior
// (window fully inside the image); images smaller than the window score 1.
double ssim(const Image& a, const Image& b);
double ssim(const ColorImage& a, const ColorImage& b);

// Accumulates d(mean SSIM map)/d a(p) * upstream into grad_a.
void ssim_backward(const Image& a, const Image& b, double upstream, Image& grad_a);

}  // namespace omni
