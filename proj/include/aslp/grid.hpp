#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "aslp/errors.hpp"

namespace aslp {

/// Row-major H x W array of values.
template <class T>
class BasicGrid {
 public:
  using value_type = T;

  BasicGrid() = default;

  BasicGrid(std::size_t height, std::size_t width, T fill = T{})
      : height_(height), width_(width), values_(height * width, fill) {}

  BasicGrid(std::size_t height, std::size_t width, std::vector<T> values)
      : height_(height), width_(width), values_(std::move(values)) {
    if (values_.size() != height_ * width_) {
      throw ShapeError("grid value count " + std::to_string(values_.size()) +
                       " does not match " + std::to_string(height_) + "x" +
                       std::to_string(width_));
    }
  }

  std::size_t height() const noexcept { return height_; }
  std::size_t width() const noexcept { return width_; }
  std::size_t size() const noexcept { return values_.size(); }
  bool empty() const noexcept { return values_.empty(); }

  T& operator()(std::size_t r, std::size_t c) { return values_[r * width_ + c]; }
  const T& operator()(std::size_t r, std::size_t c) const { return values_[r * width_ + c]; }

  T& operator[](std::size_t i) { return values_[i]; }
  const T& operator[](std::size_t i) const { return values_[i]; }

  std::span<T> values() noexcept { return values_; }
  std::span<const T> values() const noexcept { return values_; }

  auto begin() noexcept { return values_.begin(); }
  auto end() noexcept { return values_.end(); }
  auto begin() const noexcept { return values_.begin(); }
  auto end() const noexcept { return values_.end(); }

  bool same_shape(const BasicGrid& other) const noexcept {
    return height_ == other.height_ && width_ == other.width_;
  }

  friend bool operator==(const BasicGrid&, const BasicGrid&) = default;

 private:
  std::size_t height_ = 0;
  std::size_t width_ = 0;
  std::vector<T> values_;
};

using Grid = BasicGrid<double>;

/// Per-pixel foreground probability in (0,1).
using ProbabilityMap = Grid;

/// Per-pixel supervision; {0,1} when hard, [0,1] when soft.
using LabelMap = Grid;

template <class T>
void require_same_shape(const BasicGrid<T>& a, const BasicGrid<T>& b, const char* what) {
  if (!a.same_shape(b)) {
    throw ShapeError(std::string(what) + ": shape " + std::to_string(a.height()) + "x" +
                     std::to_string(a.width()) + " vs " + std::to_string(b.height()) + "x" +
                     std::to_string(b.width()));
  }
}

inline bool is_hard_label(const LabelMap& y) {
  for (double v : y) {
    if (v != 0.0 && v != 1.0) return false;
  }
  return true;
}

}  // namespace aslp
