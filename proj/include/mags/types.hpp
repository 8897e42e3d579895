#pragma once

// Small shared value types: raster images, boxes, Gaussian primitives, ids.

#include <Eigen/Dense>

#include <array>
#include <cstdint>
#include <limits>
#include <vector>

namespace mags {

template <typename T>
struct Image {
  int width = 0;
  int height = 0;
  std::vector<T> data;  // row-major

  Image() = default;
  Image(int w, int h, T fill = T(0)) : width(w), height(h), data(static_cast<size_t>(w) * h, fill) {}

  T& at(int x, int y) { return data[static_cast<size_t>(y) * width + x]; }
  const T& at(int x, int y) const { return data[static_cast<size_t>(y) * width + x]; }
  size_t size() const { return data.size(); }
  bool same_size(const Image& o) const { return width == o.width && height == o.height; }
};

using ImageF = Image<float>;
using ImageD = Image<double>;
using MaskImage = Image<uint8_t>;

// Dense grid of back-projected pixel positions with a validity mask.
struct PointGrid {
  int width = 0;
  int height = 0;
  std::vector<Eigen::Vector3d> points;
  std::vector<uint8_t> valid;

  PointGrid() = default;
  PointGrid(int w, int h)
      : width(w),
        height(h),
        points(static_cast<size_t>(w) * h, Eigen::Vector3d::Zero()),
        valid(static_cast<size_t>(w) * h, 0) {}
};

struct Aabb {
  Eigen::Vector3d min = Eigen::Vector3d::Constant(std::numeric_limits<double>::infinity());
  Eigen::Vector3d max = Eigen::Vector3d::Constant(-std::numeric_limits<double>::infinity());

  bool empty() const { return !(min.x() <= max.x()); }
  void expand(const Eigen::Vector3d& p) {
    min = min.cwiseMin(p);
    max = max.cwiseMax(p);
  }
  bool contains(const Eigen::Vector3d& p, double eps = 0.0) const {
    return (p.array() >= min.array() - eps).all() && (p.array() <= max.array() + eps).all();
  }
  double diagonal() const { return empty() ? 0.0 : (max - min).norm(); }
};

struct Gaussian {
  Eigen::Vector3d mean = Eigen::Vector3d::Zero();
  Eigen::Vector3d scales = Eigen::Vector3d::Ones();  // per-axis sigma, meters
  Eigen::Quaterniond rotation = Eigen::Quaterniond::Identity();
  float opacity = 1.0f;                       // [0, 1]
  Eigen::Vector3f color = Eigen::Vector3f::Zero();  // RGB in [0, 1]
};

struct SubmapId {
  uint32_t agent = 0;
  uint32_t index = 0;
  friend bool operator==(const SubmapId&, const SubmapId&) = default;
  friend auto operator<=>(const SubmapId&, const SubmapId&) = default;
};

}  // namespace mags
