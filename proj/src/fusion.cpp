#include "mags/fusion.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace mags {

Gaussian transform_gaussian(const Gaussian& g, const Sim3& c) {
  Gaussian out = g;
  out.mean = c * g.mean;
  out.scales = c.scale * g.scales;
  out.rotation = (c.rotation * g.rotation).normalized();
  return out;
}

std::unordered_set<uint64_t> build_occupied(const std::vector<Gaussian>& gaussians, double voxel,
                                            double envelope) {
  std::unordered_set<uint64_t> keys;
  for (const auto& g : gaussians) {
    // World-frame AABB of the rotated +-envelope*scales box: half extents
    // |R| * (envelope * scales).
    const Eigen::Matrix3d r = g.rotation.normalized().toRotationMatrix();
    const Eigen::Vector3d h = r.cwiseAbs() * (envelope * g.scales);
    const Eigen::Vector3d lo = g.mean - h;
    const Eigen::Vector3d hi = g.mean + h;
    const int64_t x0 = voxel_index(lo.x(), voxel), x1 = voxel_index(hi.x(), voxel);
    const int64_t y0 = voxel_index(lo.y(), voxel), y1 = voxel_index(hi.y(), voxel);
    const int64_t z0 = voxel_index(lo.z(), voxel), z1 = voxel_index(hi.z(), voxel);
    for (int64_t iz = z0; iz <= z1; ++iz) {
      for (int64_t iy = y0; iy <= y1; ++iy) {
        for (int64_t ix = x0; ix <= x1; ++ix) {
          keys.insert(pack_voxel_indices(ix, iy, iz));
        }
      }
    }
  }
  return keys;
}

std::unordered_set<uint64_t> carve_free(const std::vector<CarveKeyframe>& keyframes, double voxel,
                                        int pixel_stride, double max_ray) {
  std::unordered_set<uint64_t> keys;
  const double step = voxel / 2.0;
  for (const auto& kf : keyframes) {
    const Eigen::Vector3d origin = kf.pose.translation;
    const size_t n = kf.depth.size();
    for (size_t p = 0; p < n; p += size_t(pixel_stride)) {
      const float z = kf.depth.data[p];
      if (!(z > 0.f)) continue;
      const int x = int(p % size_t(kf.depth.width));
      const int y = int(p / size_t(kf.depth.width));
      const Eigen::Vector3d cam(double(z) * (x - kf.cx) / kf.fx,
                                double(z) * (y - kf.cy) / kf.fy, double(z));
      const Eigen::Vector3d endpoint = kf.pose * cam;
      const Eigen::Vector3d dir = endpoint - origin;
      const double full = dir.norm();
      if (!(full > 0.0)) continue;
      const Eigen::Vector3d unit = dir / full;
      // The strict stop excludes the endpoint (surface) voxel; the relative
      // slack absorbs float quantization of stored depths so a step landing
      // essentially at the surface still counts as the endpoint.
      const double length = std::min(full, max_ray) * (1.0 - 1e-6);
      for (int j = 0; j * step < length; ++j) {
        keys.insert(voxel_key(origin + (j * step) * unit, voxel));
      }
    }
  }
  return keys;
}

std::vector<Gaussian> dedup(const std::vector<Gaussian>& borrowed, const OccupancyGrid& grid) {
  std::vector<Gaussian> kept;
  kept.reserve(borrowed.size());
  for (const auto& g : borrowed) {
    const uint64_t key = voxel_key(g.mean, grid.voxel);
    if (grid.occupied.count(key) || grid.free.count(key)) continue;
    kept.push_back(g);
  }
  return kept;
}

ExposureModel fit_exposure(const ImageF& rendered, const ImageF& reference,
                           const MaskImage& valid) {
  if (!rendered.same_size(reference)) {
    throw std::invalid_argument("fit_exposure: image sizes differ");
  }
  const bool masked = valid.width == rendered.width && valid.height == rendered.height;
  double n = 0.0, sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
  for (size_t i = 0; i < rendered.size(); ++i) {
    if (masked && valid.data[i] == 0) continue;
    const double x = rendered.data[i];
    const double y = reference.data[i];
    n += 1.0;
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
  }
  ExposureModel m;
  if (n == 0.0) return m;
  const double var = sxx - sx * sx / n;
  if (var <= 1e-15 * n) {
    m.a = 0.0;  // gain indeterminate on a constant render
    m.b = (sy - sx) / n;
    return m;
  }
  double gain = (sxy - sx * sy / n) / var;
  if (gain <= 0.0) gain = 1e-3;  // clamp, then refit the bias
  m.a = std::log(gain);
  m.b = (sy - gain * sx) / n;
  return m;
}

FuseResult fuse(const std::vector<Gaussian>& target_map,
                const std::vector<BorrowedSubmap>& borrowed,
                const std::vector<CarveKeyframe>& keyframes, const FuseParams& params) {
  FuseResult out;
  out.grid.voxel = params.voxel;
  out.grid.occupied = build_occupied(target_map, params.voxel, params.envelope);
  out.grid.free = carve_free(keyframes, params.voxel, params.pixel_stride, params.max_ray);

  std::vector<Gaussian> incoming;
  for (const auto& sub : borrowed) {
    for (const auto& g : sub.gaussians) incoming.push_back(transform_gaussian(g, sub.correction));
  }
  out.borrowed_total = incoming.size();
  const std::vector<Gaussian> retained = dedup(incoming, out.grid);
  out.borrowed_retained = retained.size();

  out.map.reserve(target_map.size() + retained.size());
  for (const auto& g : target_map) {
    if (g.opacity < params.min_opacity) {
      ++out.pruned;
    } else {
      out.map.push_back(g);
    }
  }
  for (const auto& g : retained) {
    if (g.opacity < params.min_opacity) {
      ++out.pruned;
    } else {
      out.map.push_back(g);
    }
  }

  out.exposure.reserve(keyframes.size());
  for (const auto& kf : keyframes) {
    if (kf.rendered.size() > 0 && kf.rendered.same_size(kf.reference)) {
      out.exposure.push_back(fit_exposure(kf.rendered, kf.reference, kf.valid));
    } else {
      out.exposure.push_back(ExposureModel{});
    }
  }
  return out;
}

namespace {

void put_f32(std::string& out, float v) {
  char buf[4];
  std::memcpy(buf, &v, 4);
  out.append(buf, 4);
}

uint8_t to_u8(float c) {
  const float clamped = std::min(1.0f, std::max(0.0f, c));
  return uint8_t(std::lround(clamped * 255.0f));
}

}  // namespace

std::string gaussians_to_ply(const std::vector<Gaussian>& gaussians) {
  std::string out;
  out += "ply\n";
  out += "format binary_little_endian 1.0\n";
  out += "element vertex " + std::to_string(gaussians.size()) + "\n";
  out += "property float x\n";
  out += "property float y\n";
  out += "property float z\n";
  out += "property float scale_0\n";
  out += "property float scale_1\n";
  out += "property float scale_2\n";
  out += "property float rot_0\n";
  out += "property float rot_1\n";
  out += "property float rot_2\n";
  out += "property float rot_3\n";
  out += "property float opacity\n";
  out += "property uchar red\n";
  out += "property uchar green\n";
  out += "property uchar blue\n";
  out += "end_header\n";
  for (const auto& g : gaussians) {
    for (int i = 0; i < 3; ++i) put_f32(out, float(g.mean[i]));
    for (int i = 0; i < 3; ++i) put_f32(out, float(g.scales[i]));
    put_f32(out, float(g.rotation.w()));
    put_f32(out, float(g.rotation.x()));
    put_f32(out, float(g.rotation.y()));
    put_f32(out, float(g.rotation.z()));
    put_f32(out, g.opacity);
    out.push_back(char(to_u8(g.color[0])));
    out.push_back(char(to_u8(g.color[1])));
    out.push_back(char(to_u8(g.color[2])));
  }
  return out;
}

void write_ply(const std::string& path, const std::vector<Gaussian>& gaussians) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("write_ply: cannot open " + path);
  const std::string blob = gaussians_to_ply(gaussians);
  f.write(blob.data(), std::streamsize(blob.size()));
  if (!f) throw std::runtime_error("write_ply: short write to " + path);
}

std::string grid_to_text(const OccupancyGrid& grid) {
  const auto dump = [](const std::unordered_set<uint64_t>& set, const char* name,
                       std::ostringstream& os) {
    std::vector<uint64_t> keys(set.begin(), set.end());
    std::sort(keys.begin(), keys.end());
    os << name << " " << keys.size() << "\n";
    for (const uint64_t k : keys) os << k << "\n";
  };
  std::ostringstream os;
  dump(grid.occupied, "occupied", os);
  dump(grid.free, "free", os);
  return os.str();
}

}  // namespace mags
