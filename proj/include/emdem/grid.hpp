#ifndef EMDEM_GRID_HPP
#define EMDEM_GRID_HPP

#include <cstddef>
#include <stdexcept>
#include <vector>

namespace emdem {

/// Dense row-major scalar field over a width x height lattice.
/// Site index convention: idx = y * width + x.
class Grid {
 public:
  Grid() = default;
  Grid(int width, int height, double fill = 0.0)
      : width_(width), height_(height) {
    if (width <= 0 || height <= 0) {
      throw std::invalid_argument("Grid: dimensions must be positive");
    }
    v_.assign(static_cast<std::size_t>(width) * height, fill);
  }

  int width() const { return width_; }
  int height() const { return height_; }
  std::size_t size() const { return v_.size(); }
  bool empty() const { return v_.empty(); }

  double& at(int x, int y) { return v_[index(x, y)]; }
  double at(int x, int y) const { return v_[index(x, y)]; }

  double& operator[](std::size_t i) { return v_[i]; }
  double operator[](std::size_t i) const { return v_[i]; }

  std::size_t index(int x, int y) const {
    return static_cast<std::size_t>(y) * width_ + x;
  }

  std::vector<double>& data() { return v_; }
  const std::vector<double>& data() const { return v_; }

  bool same_shape(const Grid& o) const {
    return width_ == o.width_ && height_ == o.height_;
  }

 private:
  int width_ = 0;
  int height_ = 0;
  std::vector<double> v_;
};

/// Reflect an index into [0, n) without repeating the edge sample twice
/// in a row (whole-sample reflection: -1 -> 1, n -> n-2). Preserves the
/// parity of the index whenever it is in range after one fold.
inline int mirror_index(int i, int n) {
  if (n == 1) return 0;
  const int period = 2 * (n - 1);
  i = i % period;
  if (i < 0) i += period;
  return (i < n) ? i : period - i;
}

}  // namespace emdem

#endif  // EMDEM_GRID_HPP
