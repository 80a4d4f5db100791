#include "fft.hpp"

#include <fftw3.h>

#include <cmath>
#include <map>
#include <mutex>
#include <tuple>

#include "error.hpp"
#include "lattice.hpp"

namespace kamqm {
namespace {

// The FFTW planner is not thread safe; plans are created once under a lock
// and executed afterwards with the new-array interface. FFTW_UNALIGNED keeps
// the chosen codelets independent of buffer alignment, so results do not
// depend on which thread or allocation produced the data.
class PlanCache {
 public:
  fftw_plan get(int dimension, int n, int sign) {
    std::lock_guard<std::mutex> lock(mutex_);
    auto key = std::make_tuple(dimension, n, sign);
    auto it = plans_.find(key);
    if (it != plans_.end()) return it->second;
    TorusGrid grid{dimension, n};
    auto* buf = static_cast<fftw_complex*>(fftw_malloc(sizeof(fftw_complex) * grid.size()));
    int dims[2] = {n, n};
    fftw_plan plan = fftw_plan_dft(dimension, dims, buf, buf, sign, FFTW_ESTIMATE | FFTW_UNALIGNED);
    fftw_free(buf);
    if (plan == nullptr) fail(ErrorCode::Internal, "fftw planning failed");
    plans_.emplace(key, plan);
    return plan;
  }

 private:
  std::mutex mutex_;
  std::map<std::tuple<int, int, int>, fftw_plan> plans_;
};

PlanCache& plan_cache() {
  static PlanCache cache;
  return cache;
}

void check(const std::vector<cplx>& data, const TorusGrid& grid) {
  if (grid.dimension < 1 || grid.dimension > 2 || grid.n < 1 || data.size() != grid.size()) {
    fail(ErrorCode::Internal, "fft buffer does not match grid");
  }
}

}  // namespace

double TorusGrid::angle(int i) const { return kTwoPi * static_cast<double>(i) / static_cast<double>(n); }

void TorusGrid::unflatten(std::size_t flat, int* multi) const {
  for (int j = dimension - 1; j >= 0; --j) {
    multi[j] = static_cast<int>(flat % static_cast<std::size_t>(n));
    flat /= static_cast<std::size_t>(n);
  }
}

void fft_forward(std::vector<cplx>& data, const TorusGrid& grid) {
  check(data, grid);
  auto* p = reinterpret_cast<fftw_complex*>(data.data());
  fftw_execute_dft(plan_cache().get(grid.dimension, grid.n, FFTW_FORWARD), p, p);
  const double scale = 1.0 / static_cast<double>(grid.size());
  for (auto& v : data) v *= scale;
}

void fft_inverse(std::vector<cplx>& data, const TorusGrid& grid) {
  check(data, grid);
  auto* p = reinterpret_cast<fftw_complex*>(data.data());
  fftw_execute_dft(plan_cache().get(grid.dimension, grid.n, FFTW_BACKWARD), p, p);
}

std::vector<cplx> fft_resample(const std::vector<cplx>& values, const TorusGrid& from,
                               const TorusGrid& to) {
  std::vector<cplx> coeffs = values;
  fft_forward(coeffs, from);
  std::vector<cplx> out(to.size(), cplx(0.0, 0.0));
  int multi[2] = {0, 0};
  for (std::size_t f = 0; f < coeffs.size(); ++f) {
    from.unflatten(f, multi);
    std::size_t target = 0;
    bool fits = true;
    for (int j = 0; j < from.dimension; ++j) {
      const int m = fft_frequency(multi[j], from.n);
      // The Nyquist mode of an even grid is ambiguous; drop it when resampling.
      if (from.n % 2 == 0 && m == -from.n / 2) {
        fits = false;
        break;
      }
      const int slot = fft_slot(m, to.n);
      if (slot < 0) {
        fits = false;
        break;
      }
      target = target * static_cast<std::size_t>(to.n) + static_cast<std::size_t>(slot);
    }
    if (fits) out[target] = coeffs[f];
  }
  fft_inverse(out, to);
  return out;
}

int next_pow2(int n) {
  int p = 1;
  while (p < n) p <<= 1;
  return p;
}

}  // namespace kamqm
