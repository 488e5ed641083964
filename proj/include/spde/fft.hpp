#pragma once

#include <fftw3.h>

#include <algorithm>
#include <complex>
#include <map>
#include <memory>
#include <mutex>
#include <span>
#include <utility>
#include <vector>

#include "spde/grid.hpp"

namespace spde {

using Complex = std::complex<double>;

namespace detail {

// FFTW's planner is not thread-safe; execution of an existing plan on new
// arrays (fftw_execute_dft) is.
inline std::mutex& fftw_planner_mutex() {
  static std::mutex m;
  return m;
}

}  // namespace detail

/// Pair of complex-to-complex FFTW plans for one lattice shape.
///
/// `forward` computes X_m = Σ_x f_x e^{-iξ_m·x}; `inverse` computes
/// f_x = N^{-k} Σ_m X_m e^{iξ_m·x} (normalized).
class FftPlan {
 public:
  FftPlan(int dim, std::size_t n) : size_(1) {
    int dims[kMaxDim];
    for (int d = 0; d < dim; ++d) {
      dims[d] = static_cast<int>(n);
      size_ *= n;
    }
    // In-place plans; out-of-place calls copy first.
    std::vector<Complex> a(size_);
    auto* buf = reinterpret_cast<fftw_complex*>(a.data());
    std::lock_guard lock(detail::fftw_planner_mutex());
    const unsigned flags = FFTW_ESTIMATE | FFTW_UNALIGNED;
    forward_ = fftw_plan_dft(dim, dims, buf, buf, FFTW_FORWARD, flags);
    backward_ = fftw_plan_dft(dim, dims, buf, buf, FFTW_BACKWARD, flags);
  }

  FftPlan(const FftPlan&) = delete;
  FftPlan& operator=(const FftPlan&) = delete;

  ~FftPlan() {
    std::lock_guard lock(detail::fftw_planner_mutex());
    fftw_destroy_plan(forward_);
    fftw_destroy_plan(backward_);
  }

  std::size_t size() const noexcept { return size_; }

  void forward(std::span<const Complex> in, std::span<Complex> out) const {
    require_same_size(size_, in.size(), "fft input");
    require_same_size(size_, out.size(), "fft output");
    if (in.data() != out.data()) std::copy(in.begin(), in.end(), out.begin());
    execute(forward_, out);
  }

  void inverse(std::span<const Complex> in, std::span<Complex> out) const {
    require_same_size(size_, in.size(), "fft input");
    require_same_size(size_, out.size(), "fft output");
    if (in.data() != out.data()) std::copy(in.begin(), in.end(), out.begin());
    execute(backward_, out);
    const double scale = 1.0 / static_cast<double>(size_);
    for (auto& v : out) v *= scale;
  }

  /// Forward transform of real data.
  void forward_real(std::span<const double> in, std::span<Complex> out) const {
    require_same_size(size_, in.size(), "fft input");
    require_same_size(size_, out.size(), "fft output");
    for (std::size_t i = 0; i < size_; ++i) out[i] = Complex(in[i], 0.0);
    execute(forward_, out);
  }

  /// Inverse transform keeping the real part; `work` is overwritten.
  void inverse_real(std::span<Complex> work, std::span<double> out) const {
    require_same_size(size_, work.size(), "fft input");
    require_same_size(size_, out.size(), "fft output");
    execute(backward_, work);
    const double scale = 1.0 / static_cast<double>(size_);
    for (std::size_t i = 0; i < size_; ++i) out[i] = work[i].real() * scale;
  }

 private:
  static void execute(fftw_plan plan, std::span<Complex> data) {
    auto* p = reinterpret_cast<fftw_complex*>(data.data());
    fftw_execute_dft(plan, p, p);
  }

  std::size_t size_;
  fftw_plan forward_ = nullptr;
  fftw_plan backward_ = nullptr;
};

/// Shared, cached plan for a grid shape.
inline std::shared_ptr<const FftPlan> fft_plan_for(const SpatialGrid& grid) {
  static std::mutex cache_mutex;
  static std::map<std::pair<int, std::size_t>, std::shared_ptr<const FftPlan>> cache;
  const auto key = std::make_pair(grid.dim(), grid.points_per_axis());
  std::lock_guard lock(cache_mutex);
  auto it = cache.find(key);
  if (it != cache.end()) return it->second;
  auto plan = std::make_shared<const FftPlan>(grid.dim(), grid.points_per_axis());
  cache.emplace(key, plan);
  return plan;
}

}  // namespace spde
