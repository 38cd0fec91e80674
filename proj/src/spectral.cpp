#include "gmlab/spectral.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <mutex>
#include <numbers>
#include <stdexcept>

namespace gmlab::spectral {

namespace {

using Eigen::MatrixXcd;
using std::complex;

constexpr double kPi = std::numbers::pi;

/// DFT matrix F(k,j) = exp(-2*pi*i*k*j/n), cached per size.
const MatrixXcd& dft_matrix(int n) {
  static std::map<int, MatrixXcd> cache;
  static std::mutex mtx;
  std::lock_guard<std::mutex> lock(mtx);
  auto it = cache.find(n);
  if (it != cache.end()) return it->second;
  MatrixXcd f(n, n);
  for (int k = 0; k < n; ++k)
    for (int j = 0; j < n; ++j) {
      const double phase = -2.0 * kPi * static_cast<double>(k) * static_cast<double>(j) / n;
      f(k, j) = complex<double>(std::cos(phase), std::sin(phase));
    }
  return cache.emplace(n, std::move(f)).first->second;
}

/// Unshifted forward transform: Z = F_H X F_W.
MatrixXcd forward_raw(const Image& img) {
  const int h = static_cast<int>(img.rows());
  const int w = static_cast<int>(img.cols());
  MatrixXcd x = img.matrix().cast<complex<double>>();
  return dft_matrix(h) * x * dft_matrix(w);
}

Image inverse_raw(const MatrixXcd& z) {
  const int h = static_cast<int>(z.rows());
  const int w = static_cast<int>(z.cols());
  MatrixXcd x = dft_matrix(h).conjugate() * z * dft_matrix(w).conjugate();
  return x.real().array() / (static_cast<double>(h) * w);
}

ComplexGrid fftshift(const MatrixXcd& z) {
  const int h = static_cast<int>(z.rows()), w = static_cast<int>(z.cols());
  const int cy = h / 2, cx = w / 2;
  ComplexGrid out(h, w);
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j) out(i, j) = z(((i - cy) % h + h) % h, ((j - cx) % w + w) % w);
  return out;
}

MatrixXcd ifftshift(const ComplexGrid& s) {
  const int h = static_cast<int>(s.rows()), w = static_cast<int>(s.cols());
  const int cy = h / 2, cx = w / 2;
  MatrixXcd out(h, w);
  for (int k = 0; k < h; ++k)
    for (int l = 0; l < w; ++l) out(k, l) = s((k + cy) % h, (l + cx) % w);
  return out;
}

/// Iterative radix-2 FFT for power-of-two sizes; direct DFT otherwise.
void dft1(std::vector<complex<double>>& a) {
  const std::size_t n = a.size();
  if (n == 0) return;
  if ((n & (n - 1)) != 0) {
    std::vector<complex<double>> out(n, complex<double>(0, 0));
    for (std::size_t k = 0; k < n; ++k)
      for (std::size_t j = 0; j < n; ++j) {
        const double phase = -2.0 * kPi * static_cast<double>(k * j % n) / static_cast<double>(n);
        out[k] += a[j] * complex<double>(std::cos(phase), std::sin(phase));
      }
    a = std::move(out);
    return;
  }
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const double ang = -2.0 * kPi / static_cast<double>(len);
    const complex<double> wl(std::cos(ang), std::sin(ang));
    for (std::size_t i = 0; i < n; i += len) {
      complex<double> w(1, 0);
      for (std::size_t j = 0; j < len / 2; ++j) {
        const complex<double> u = a[i + j];
        const complex<double> v = a[i + j + len / 2] * w;
        a[i + j] = u + v;
        a[i + j + len / 2] = u - v;
        w *= wl;
      }
    }
  }
}

struct SortedBins {
  std::vector<double> dist;     // ascending distances of bins inside the inscribed disk
  std::vector<int> flat_index;  // matching flat indices (row-major i*n+j)
  double r_max = 0;
};

const SortedBins& sorted_inscribed_bins(int n) {
  static std::map<int, SortedBins> cache;
  static std::mutex mtx;
  std::lock_guard<std::mutex> lock(mtx);
  auto it = cache.find(n);
  if (it != cache.end()) return it->second;
  SortedBins bins;
  bins.r_max = n / 2;
  const int c = n / 2;
  std::vector<std::pair<double, int>> tmp;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      const double d = std::hypot(i - c, j - c);
      if (d <= bins.r_max) tmp.emplace_back(d, i * n + j);
    }
  std::stable_sort(tmp.begin(), tmp.end(),
                   [](const auto& a, const auto& b) { return a.first < b.first; });
  for (auto& [d, idx] : tmp) {
    bins.dist.push_back(d);
    bins.flat_index.push_back(idx);
  }
  return cache.emplace(n, std::move(bins)).first->second;
}

}  // namespace

Spectrum dft2_forward(const Image& img) {
  if (img.rows() < 1 || img.cols() < 1) throw std::invalid_argument("dft2_forward: empty image");
  Spectrum s;
  s.height = static_cast<int>(img.rows());
  s.width = static_cast<int>(img.cols());
  s.coeffs = fftshift(forward_raw(img));
  return s;
}

Image dft2_inverse(const Spectrum& spec) {
  if (spec.coeffs.rows() != spec.height || spec.coeffs.cols() != spec.width)
    throw std::invalid_argument("dft2_inverse: coefficient grid does not match spectrum size");
  return inverse_raw(ifftshift(spec.coeffs));
}

double spatial_energy(const Image& img) { return (img * img).sum(); }

double spectral_energy(const Spectrum& spec) {
  return spec.coeffs.abs2().sum() / (static_cast<double>(spec.height) * spec.width);
}

Eigen::ArrayXXd centered_distance_grid(int h, int w) {
  Eigen::ArrayXXd d(h, w);
  const int cy = h / 2, cx = w / 2;
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j) d(i, j) = std::hypot(i - cy, j - cx);
  return d;
}

std::pair<Image, Image> radial_decompose(const Image& img, double r) {
  if (r < 0) throw std::invalid_argument("radial_decompose: r must be >= 0");
  Spectrum s = dft2_forward(img);
  const Eigen::ArrayXXd d = centered_distance_grid(s.height, s.width);
  Spectrum low = s, high = s;
  low.coeffs = s.coeffs * (d < r).cast<std::complex<double>>();
  high.coeffs = s.coeffs * (d >= r).cast<std::complex<double>>();
  return {dft2_inverse(low), dft2_inverse(high)};
}

BandSplit band_split(const Image& img, const std::vector<double>& radii) {
  for (std::size_t i = 0; i < radii.size(); ++i) {
    if (!(radii[i] > 0) || !std::isfinite(radii[i]))
      throw std::invalid_argument("band_split: radii must be positive and finite");
    if (i > 0 && !(radii[i] > radii[i - 1]))
      throw std::invalid_argument("band_split: radii must be strictly increasing");
  }
  Spectrum s = dft2_forward(img);
  const Eigen::ArrayXXd d = centered_distance_grid(s.height, s.width);
  BandSplit out;
  out.radii = radii;
  const std::size_t bands = radii.size() + 1;
  for (std::size_t b = 0; b < bands; ++b) {
    const double lo = b == 0 ? 0.0 : radii[b - 1];
    Spectrum sb = s;
    if (b == bands - 1)
      sb.coeffs = s.coeffs * (d >= lo).cast<std::complex<double>>();
    else
      sb.coeffs = s.coeffs * (d >= lo && d < radii[b]).cast<std::complex<double>>();
    out.components.push_back(dft2_inverse(sb));
  }
  return out;
}

double verify_convolution_theorem(const Image& u, const Image& v) {
  if (u.rows() != v.rows() || u.cols() != v.cols())
    throw std::invalid_argument("verify_convolution_theorem: shape mismatch");
  const int h = static_cast<int>(u.rows()), w = static_cast<int>(u.cols());
  const MatrixXcd U = forward_raw(u);
  const MatrixXcd V = forward_raw(v);

  // direct circular convolution of the two spectra, no FFT shortcuts
  std::vector<complex<double>> urow(static_cast<std::size_t>(h) * w);
  std::vector<complex<double>> vrow(static_cast<std::size_t>(h) * w);
  for (int k = 0; k < h; ++k)
    for (int l = 0; l < w; ++l) {
      urow[static_cast<std::size_t>(k) * w + l] = U(k, l);
      vrow[static_cast<std::size_t>(k) * w + l] = V(k, l);
    }
  MatrixXcd C(h, w);
  const double norm = 1.0 / (static_cast<double>(h) * w);
  for (int k = 0; k < h; ++k) {
    for (int l = 0; l < w; ++l) {
      complex<double> acc(0, 0);
      for (int p = 0; p < h; ++p) {
        const int kp = k - p >= 0 ? k - p : k - p + h;
        const complex<double>* ur = urow.data() + static_cast<std::size_t>(p) * w;
        const complex<double>* vr = vrow.data() + static_cast<std::size_t>(kp) * w;
        for (int q = 0; q < w; ++q) {
          const int lq = l - q >= 0 ? l - q : l - q + w;
          acc += ur[q] * vr[lq];
        }
      }
      C(k, l) = acc * norm;
    }
  }
  const Image back = inverse_raw(C);
  return (back - u * v).abs().maxCoeff();
}

DecayFit decay_fit_from_samples(const std::vector<double>& samples, double half_width,
                                Activation tag) {
  const int n = static_cast<int>(samples.size());
  DecayFit fit;
  fit.activation = tag;
  if (n < 16 || half_width <= 0)
    throw std::invalid_argument("decay fit: need >= 16 samples and positive half width");

  std::vector<complex<double>> a(samples.begin(), samples.end());
  dft1(a);

  double peak = 0;
  for (auto& c : a) peak = std::max(peak, std::abs(c));
  if (peak < 1e-12 * n) {
    fit.degenerate = true;
    return fit;
  }

  const double omega_1 = kPi / half_width;                 // fundamental
  const double omega_ny = kPi * (n / 2 - 1) / half_width;  // just below Nyquist
  const double omega_geo = std::sqrt(omega_1 * omega_ny);
  fit.omega_lo = omega_geo / 10.0;
  fit.omega_hi = omega_geo * 10.0;

  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  int m = 0;
  std::vector<std::pair<double, double>> pts;
  for (int k = 1; k < n / 2; ++k) {
    const double omega = kPi * k / half_width;
    if (omega < fit.omega_lo || omega > fit.omega_hi) continue;
    const double mag = std::abs(a[static_cast<std::size_t>(k)]);
    if (mag <= 0) continue;
    const double lx = std::log10(omega), ly = std::log10(mag);
    pts.emplace_back(lx, ly);
    sx += lx;
    sy += ly;
    sxx += lx * lx;
    sxy += lx * ly;
    ++m;
  }
  if (m < 4) {
    fit.degenerate = true;
    return fit;
  }
  const double denom = m * sxx - sx * sx;
  const double slope = (m * sxy - sx * sy) / denom;
  const double intercept = (sy - slope * sx) / m;
  double rss = 0;
  for (auto& [lx, ly] : pts) {
    const double e = ly - (slope * lx + intercept);
    rss += e * e;
  }
  fit.exponent = -slope;
  fit.residual = std::sqrt(rss / m);
  return fit;
}

DecayFit activation_decay_fit(Activation act, double half_width, int sample_count) {
  std::vector<double> samples(static_cast<std::size_t>(sample_count));
  for (int i = 0; i < sample_count; ++i) {
    const double t = -half_width + 2.0 * half_width * i / sample_count;
    const double hann = 0.5 * (1.0 + std::cos(kPi * t / half_width));
    samples[static_cast<std::size_t>(i)] = act_value(act, t) * hann;
  }
  return decay_fit_from_samples(samples, half_width, act);
}

EnergyRatio energy_ratio_high_low(const Spectrum& spec) {
  const int h = spec.height, w = spec.width;
  const int hh = h / 2, ww = w / 2;
  const int r0 = spec.dc_row() - hh / 2;
  const int c0 = spec.dc_col() - ww / 2;
  double low = 0, total = 0;
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j) {
      const double e = std::norm(spec.coeffs(i, j));
      total += e;
      if (i >= r0 && i < r0 + hh && j >= c0 && j < c0 + ww) low += e;
    }
  EnergyRatio out;
  // transform round-off leaves ~1e-30 relative dust in empty regions
  if (low <= total * 1e-20) {
    out.degenerate_low = true;
    out.ratio = std::numeric_limits<double>::infinity();
    return out;
  }
  out.ratio = (total - low) / low;
  return out;
}

EnergyRatio energy_ratio_high_low(const Image& img) {
  return energy_ratio_high_low(dft2_forward(img));
}

namespace {

template <class S>
EnergyRatio ratio_nchw_impl(const Tensor<S>& x) {
  if (x.ndim() != 4)
    throw std::invalid_argument("energy_ratio_high_low: expected NCHW feature map");
  const Index n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  double acc = 0;
  long long count = 0;
  bool any_inf = false;
  for (Index b = 0; b < n; ++b)
    for (Index ch = 0; ch < c; ++ch) {
      Image img(h, w);
      const S* p = x.value().data() + (b * c + ch) * h * w;
      bool all_zero = true;
      for (Index i = 0; i < h; ++i)
        for (Index j = 0; j < w; ++j) {
          img(i, j) = static_cast<double>(p[i * w + j]);
          all_zero = all_zero && img(i, j) == 0.0;
        }
      if (all_zero) continue;
      EnergyRatio r = energy_ratio_high_low(img);
      if (r.degenerate_low) {
        any_inf = true;
        continue;
      }
      acc += r.ratio;
      ++count;
    }
  EnergyRatio out;
  if (any_inf || count == 0) {
    out.degenerate_low = true;
    out.ratio = std::numeric_limits<double>::infinity();
    return out;
  }
  out.ratio = acc / count;
  return out;
}

}  // namespace

EnergyRatio energy_ratio_high_low_nchw(const Tensor<float>& x) { return ratio_nchw_impl(x); }
EnergyRatio energy_ratio_high_low_nchw(const Tensor<double>& x) { return ratio_nchw_impl(x); }

KernelBandwidth kernel_bandwidth(const Eigen::ArrayXXd& kernel, int pad_to,
                                 double energy_fraction) {
  if (kernel.rows() > pad_to || kernel.cols() > pad_to)
    throw std::invalid_argument("kernel_bandwidth: kernel larger than pad_to grid");
  if (energy_fraction <= 0 || energy_fraction > 1)
    throw std::invalid_argument("kernel_bandwidth: energy_fraction must be in (0,1]");
  KernelBandwidth out;
  if ((kernel == 0.0).all()) {
    out.all_zero = true;
    return out;
  }
  Image padded = Image::Zero(pad_to, pad_to);
  padded.block(0, 0, kernel.rows(), kernel.cols()) = kernel;
  Spectrum s = dft2_forward(padded);
  const SortedBins& bins = sorted_inscribed_bins(pad_to);
  double total = 0;
  for (std::size_t i = 0; i < bins.flat_index.size(); ++i)
    total += std::norm(s.coeffs(bins.flat_index[i] / pad_to, bins.flat_index[i] % pad_to));
  const double target = energy_fraction * total;
  double acc = 0;
  for (std::size_t i = 0; i < bins.flat_index.size(); ++i) {
    acc += std::norm(s.coeffs(bins.flat_index[i] / pad_to, bins.flat_index[i] % pad_to));
    if (acc >= target) {
      out.bandwidth = bins.dist[i] / bins.r_max;
      return out;
    }
  }
  out.bandwidth = 1.0;
  return out;
}

}  // namespace gmlab::spectral
