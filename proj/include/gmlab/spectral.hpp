#pragma once

#include <Eigen/Core>

#include <complex>
#include <utility>
#include <vector>

#include "gmlab/activations.hpp"
#include "gmlab/tensor.hpp"

namespace gmlab::spectral {

using Image = Eigen::ArrayXXd;  // (row, col) = (y, x)
using ComplexGrid = Eigen::ArrayXXcd;

/// DC-centered 2-D frequency grid. The forward transform is unnormalized;
/// the inverse divides by H*W. The zero frequency sits at
/// (floor(H/2), floor(W/2)).
struct Spectrum {
  int height = 0;
  int width = 0;
  ComplexGrid coeffs;

  int dc_row() const { return height / 2; }
  int dc_col() const { return width / 2; }
};

Spectrum dft2_forward(const Image& img);
Image dft2_inverse(const Spectrum& spec);

double spatial_energy(const Image& img);
double spectral_energy(const Spectrum& spec);

/// Euclidean distance of every bin from the DC bin on the centered grid.
Eigen::ArrayXXd centered_distance_grid(int h, int w);

/// Radial masking operator: coefficients with distance < r from DC feed the
/// low image, the exact complement feeds the high image. Low + high
/// reconstructs the input up to transform round-off.
std::pair<Image, Image> radial_decompose(const Image& img, double r);

struct BandSplit {
  std::vector<double> radii;      // interior cut radii, bracketed by 0 and +inf
  std::vector<Image> components;  // radii.size() + 1 spatial images
};

/// Splits an image into annular frequency bands. Band i holds coefficients
/// with r_{i-1} <= d < r_i where r_0 = 0 and r_last = +inf; the components
/// sum back to the input.
BandSplit band_split(const Image& img, const std::vector<double>& radii);

/// Max abs difference between u*v (element-wise) and the inverse transform
/// of the direct circular convolution of the two spectra (normalized by
/// 1/(H*W)). Small residuals confirm the convolution theorem numerically.
double verify_convolution_theorem(const Image& u, const Image& v);

struct DecayFit {
  Activation activation = Activation::Identity;
  double exponent = 0;   // fitted n in |F| ~ 1/|omega|^n
  double residual = 0;   // rms of the log-log fit
  double omega_lo = 0;
  double omega_hi = 0;
  bool degenerate = false;
};

/// Samples sigma on [-T, T] under a Hann taper, transforms, and fits
/// log|F| against log|omega| over the geometric middle two decades.
DecayFit activation_decay_fit(Activation act, double half_width = 8.0, int sample_count = 4096);

/// Same fit on caller-provided samples (assumed already tapered).
DecayFit decay_fit_from_samples(const std::vector<double>& samples, double half_width,
                                Activation tag);

struct EnergyRatio {
  double ratio = 0;            // high-region energy / low-region energy
  bool degenerate_low = false; // no low-region energy: ratio = +inf sentinel
};

/// Low region = centered rectangle covering one quarter of the spectral
/// area (floor(H/2) x floor(W/2) extents around DC).
EnergyRatio energy_ratio_high_low(const Spectrum& spec);
EnergyRatio energy_ratio_high_low(const Image& img);

/// Channel-wise transform of an NCHW feature map; ratios averaged over
/// channels and batch. All-zero channels carry no spectral content and are
/// skipped.
EnergyRatio energy_ratio_high_low_nchw(const Tensor<float>& x);
EnergyRatio energy_ratio_high_low_nchw(const Tensor<double>& x);

struct KernelBandwidth {
  double bandwidth = 0;  // smallest radius with energy_fraction of the
                         // inscribed-disk energy, over the inscribed radius
  bool all_zero = false;
};

/// Zero-pads a k x k kernel to pad_to x pad_to, transforms, and radially
/// integrates the power spectrum out to the inscribed radius.
KernelBandwidth kernel_bandwidth(const Eigen::ArrayXXd& kernel, int pad_to = 64,
                                 double energy_fraction = 0.9);

}  // namespace gmlab::spectral
