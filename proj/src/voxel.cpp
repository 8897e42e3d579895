#include "mags/voxel.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace mags {

namespace {
constexpr int64_t kMaxIndex = int64_t(1) << 20;  // exclusive bound per axis

uint64_t zigzag21(int64_t n) {
  const uint64_t z = (static_cast<uint64_t>(n) << 1) ^ static_cast<uint64_t>(n >> 63);
  return z & ((uint64_t(1) << 21) - 1);
}

int64_t unzigzag(uint64_t z) {
  return static_cast<int64_t>(z >> 1) ^ -static_cast<int64_t>(z & 1);
}
}  // namespace

int64_t voxel_index(double p, double voxel) {
  const double q = p / voxel;
  const double r = std::nearbyint(q);
  if (std::abs(q - r) <= 1e-9 * std::max(1.0, std::abs(q))) {
    return static_cast<int64_t>(r);
  }
  return static_cast<int64_t>(std::floor(q));
}

uint64_t pack_voxel_indices(int64_t ix, int64_t iy, int64_t iz) {
  for (int64_t i : {ix, iy, iz}) {
    if (i <= -kMaxIndex || i >= kMaxIndex) {
      throw std::out_of_range("voxel_key: index " + std::to_string(i) +
                              " outside [-2^20, 2^20)");
    }
  }
  return zigzag21(ix) | (zigzag21(iy) << 21) | (zigzag21(iz) << 42);
}

uint64_t voxel_key(const Eigen::Vector3d& p, double voxel) {
  return pack_voxel_indices(voxel_index(p.x(), voxel), voxel_index(p.y(), voxel),
                            voxel_index(p.z(), voxel));
}

Eigen::Matrix<int64_t, 3, 1> voxel_key_decode(uint64_t key) {
  const uint64_t mask = (uint64_t(1) << 21) - 1;
  return {unzigzag(key & mask), unzigzag((key >> 21) & mask), unzigzag((key >> 42) & mask)};
}

}  // namespace mags
