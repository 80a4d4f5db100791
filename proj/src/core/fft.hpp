#pragma once

#include <complex>
#include <vector>

namespace kamqm {

using cplx = std::complex<double>;

/// Uniform grid on the standard torus [0, 2 pi)^d with n points per axis,
/// stored row-major (axis 0 slowest).
struct TorusGrid {
  int dimension = 1;
  int n = 0;

  std::size_t size() const {
    std::size_t s = 1;
    for (int j = 0; j < dimension; ++j) s *= static_cast<std::size_t>(n);
    return s;
  }
  /// Angle of grid index i along one axis.
  double angle(int i) const;
  /// Multi-index of flat position `flat`.
  void unflatten(std::size_t flat, int* multi) const;
};

/// Signed frequency held by FFT slot i (slot n/2 carries -n/2).
inline int fft_frequency(int slot, int n) { return slot < n / 2 ? slot : slot - n; }
/// FFT slot holding signed frequency m, or -1 when |m| does not fit.
inline int fft_slot(int m, int n) {
  if (m >= n / 2 || m < -n / 2) return -1;
  return m >= 0 ? m : m + n;
}

/// Grid values -> Fourier coefficients c_m = mean(f e^{-i m.theta}), in place.
void fft_forward(std::vector<cplx>& data, const TorusGrid& grid);
/// Fourier coefficients -> grid values, in place.
void fft_inverse(std::vector<cplx>& data, const TorusGrid& grid);

/// Resample a band-limited field to a finer or coarser grid by zero padding
/// or truncation in frequency space.
std::vector<cplx> fft_resample(const std::vector<cplx>& values, const TorusGrid& from,
                               const TorusGrid& to);

/// Smallest power of two >= n.
int next_pow2(int n);

}  // namespace kamqm
