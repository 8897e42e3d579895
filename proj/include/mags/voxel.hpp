#pragma once

// 64-bit spatial-hash voxel keys, shared by summary downsampling and fusion.
//
// Packing: each axis index i = floor(p/v) is zigzag-encoded to 21 bits and
// placed at bit offset 0 (x), 21 (y), 42 (z); the top bit stays zero. The
// packing is injective for |i| < 2^20 per axis.

#include <Eigen/Dense>

#include <cstdint>

namespace mags {

// Floor division robust against representation error: values within 1e-9
// (relative) of an exact voxel boundary snap to it, so e.g. 1.0 / 0.1 lands on
// index 10, not 9, despite 0.1 being irrepresentable.
int64_t voxel_index(double p, double voxel);

uint64_t voxel_key(const Eigen::Vector3d& p, double voxel);

// Inverse of the packing (indices, not positions); exposed for tests/exports.
Eigen::Matrix<int64_t, 3, 1> voxel_key_decode(uint64_t key);

uint64_t pack_voxel_indices(int64_t ix, int64_t iy, int64_t iz);

}  // namespace mags
