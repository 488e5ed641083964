#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "spde/errors.hpp"

namespace spde {

inline constexpr int kMaxDim = 3;

/// Default cap on the number of lattice points (2^22 doubles = 32 MiB per field).
inline constexpr std::size_t kDefaultPointBudget = std::size_t{1} << 22;

using LatticeIndex = std::array<std::ptrdiff_t, kMaxDim>;

/// Periodic lattice of n^dim points on the box [0, length)^dim.
///
/// Linear indices run with the last axis fastest (row-major), which is also the
/// layout FFTW expects for multi-dimensional transforms.
class SpatialGrid {
 public:
  SpatialGrid() = default;

  SpatialGrid(int dim, std::size_t points_per_axis, double length,
              std::size_t point_budget = kDefaultPointBudget)
      : dim_(dim), n_(points_per_axis), length_(length) {
    if (dim < 1 || dim > kMaxDim)
      throw ParameterDomainError("grid dimension must be 1, 2 or 3");
    if (n_ < 4 || (n_ & (n_ - 1)) != 0)
      throw ParameterDomainError("points per axis must be a power of two and at least 4");
    if (!(length > 0.0) || !std::isfinite(length))
      throw ParameterDomainError("box length must be positive and finite");
    size_ = 1;
    for (int d = 0; d < dim_; ++d) {
      if (size_ > point_budget / n_)
        throw ParameterDomainError("grid exceeds the point budget of " +
                                   std::to_string(point_budget) + " points");
      size_ *= n_;
    }
  }

  int dim() const noexcept { return dim_; }
  std::size_t points_per_axis() const noexcept { return n_; }
  double length() const noexcept { return length_; }
  std::size_t size() const noexcept { return size_; }
  double spacing() const noexcept { return length_ / static_cast<double>(n_); }
  double cell_volume() const noexcept { return std::pow(spacing(), dim_); }
  double box_volume() const noexcept { return std::pow(length_, dim_); }

  /// Volume of one frequency cell, (2π/L)^k.
  double frequency_cell() const noexcept {
    return std::pow(2.0 * std::numbers::pi / length_, dim_);
  }

  LatticeIndex unravel(std::size_t linear) const noexcept {
    LatticeIndex idx{0, 0, 0};
    for (int d = dim_ - 1; d >= 0; --d) {
      idx[d] = static_cast<std::ptrdiff_t>(linear % n_);
      linear /= n_;
    }
    return idx;
  }

  /// Linear index of a lattice vector, wrapped periodically.
  std::size_t ravel(const LatticeIndex& idx) const noexcept {
    const auto n = static_cast<std::ptrdiff_t>(n_);
    std::size_t linear = 0;
    for (int d = 0; d < dim_; ++d) {
      std::ptrdiff_t v = idx[d] % n;
      if (v < 0) v += n;
      linear = linear * n_ + static_cast<std::size_t>(v);
    }
    return linear;
  }

  /// Signed wavenumber m in [-n/2, n/2) for FFT position i.
  std::ptrdiff_t wavenumber(std::size_t i) const noexcept {
    const auto n = static_cast<std::ptrdiff_t>(n_);
    const auto s = static_cast<std::ptrdiff_t>(i);
    return s < n / 2 ? s : s - n;
  }

  /// Angular frequency vector ξ_m = 2π m / L of FFT position `linear`.
  std::array<double, kMaxDim> frequency(std::size_t linear) const noexcept {
    std::array<double, kMaxDim> xi{0.0, 0.0, 0.0};
    const auto idx = unravel(linear);
    for (int d = 0; d < dim_; ++d)
      xi[d] = 2.0 * std::numbers::pi * static_cast<double>(wavenumber(idx[d])) / length_;
    return xi;
  }

  std::array<double, kMaxDim> position(std::size_t linear) const noexcept {
    std::array<double, kMaxDim> x{0.0, 0.0, 0.0};
    const auto idx = unravel(linear);
    for (int d = 0; d < dim_; ++d) x[d] = static_cast<double>(idx[d]) * spacing();
    return x;
  }

  /// Minimal-image displacement between two lattice points.
  std::array<double, kMaxDim> displacement(std::size_t from, std::size_t to) const noexcept {
    std::array<double, kMaxDim> r{0.0, 0.0, 0.0};
    const auto a = unravel(from);
    const auto b = unravel(to);
    const auto n = static_cast<std::ptrdiff_t>(n_);
    for (int d = 0; d < dim_; ++d) {
      std::ptrdiff_t diff = ((b[d] - a[d]) % n + n) % n;
      if (diff > n / 2) diff -= n;
      r[d] = static_cast<double>(diff) * spacing();
    }
    return r;
  }

  /// Flat array of point coordinates, `dim` values per point.
  std::vector<double> coordinates() const {
    std::vector<double> out(size_ * static_cast<std::size_t>(dim_));
    for (std::size_t i = 0; i < size_; ++i) {
      const auto x = position(i);
      for (int d = 0; d < dim_; ++d) out[i * dim_ + d] = x[d];
    }
    return out;
  }

  friend bool operator==(const SpatialGrid& a, const SpatialGrid& b) noexcept {
    return a.dim_ == b.dim_ && a.n_ == b.n_ && a.length_ == b.length_;
  }

 private:
  int dim_ = 1;
  std::size_t n_ = 4;
  double length_ = 1.0;
  std::size_t size_ = 4;
};

/// Uniform time grid t_i = i·dt, i = 0..steps, on [0, horizon].
class TimeGrid {
 public:
  TimeGrid() = default;
  TimeGrid(double horizon, std::size_t steps) : horizon_(horizon), steps_(steps) {
    if (!(horizon > 0.0) || !std::isfinite(horizon))
      throw ParameterDomainError("time horizon must be positive and finite");
    if (steps < 1) throw ParameterDomainError("time grid needs at least one step");
  }

  double horizon() const noexcept { return horizon_; }
  std::size_t steps() const noexcept { return steps_; }
  std::size_t points() const noexcept { return steps_ + 1; }
  double dt() const noexcept { return horizon_ / static_cast<double>(steps_); }
  double time(std::size_t i) const noexcept { return static_cast<double>(i) * dt(); }

  friend bool operator==(const TimeGrid& a, const TimeGrid& b) noexcept {
    return a.horizon_ == b.horizon_ && a.steps_ == b.steps_;
  }

 private:
  double horizon_ = 1.0;
  std::size_t steps_ = 1;
};

/// Values on `slices` consecutive time levels of a spatial grid, stored slice-major.
class SpaceTimeField {
 public:
  SpaceTimeField() = default;
  SpaceTimeField(std::size_t slices, std::size_t slice_size, double fill = 0.0)
      : slices_(slices), slice_size_(slice_size), values_(slices * slice_size, fill) {}

  std::size_t slices() const noexcept { return slices_; }
  std::size_t slice_size() const noexcept { return slice_size_; }

  std::span<double> slice(std::size_t i) {
    return {values_.data() + i * slice_size_, slice_size_};
  }
  std::span<const double> slice(std::size_t i) const {
    return {values_.data() + i * slice_size_, slice_size_};
  }

  double& at(std::size_t i, std::size_t x) { return values_[i * slice_size_ + x]; }
  double at(std::size_t i, std::size_t x) const { return values_[i * slice_size_ + x]; }

  std::span<double> values() noexcept { return values_; }
  std::span<const double> values() const noexcept { return values_; }

 private:
  std::size_t slices_ = 0;
  std::size_t slice_size_ = 0;
  std::vector<double> values_;
};

inline void require_same_size(std::size_t expected, std::size_t got, const char* what) {
  if (expected != got)
    throw ShapeError(std::string(what) + ": expected " + std::to_string(expected) +
                     " values, got " + std::to_string(got));
}

}  // namespace spde
