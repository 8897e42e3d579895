#pragma once

// Binary wire formats: the ".msum" summary encoding, the coordinator message
// framing, and the byte-level reader/writer shared by every serializer.
//
// Summary format, little-endian throughout:
//   magic "MAGS", u16 version = 1, then six length-prefixed sections in fixed
//   order (u32 payload length, payload):
//     header     u32 agent_id, u32 submap_index, u32 flags (bit0: has
//                prev_odometry), then 8 f64 prev_odometry when the flag is set
//     descriptor u32 count (= 128), count f32
//     Q          u32 count, per point: 3 f64 position, 32 f32 descriptor
//     R          u32 count, per point: 3 f64
//     aabb       6 f64 (min, max)
//     anchor     u32 width, u32 height, 4 f64 intrinsics (fx fy cx cy),
//                8 f64 pose, then W*H f32 image, W*H f32 disparity (row-major)
//   Sim3 values serialize as 8 f64: scale, qw, qx, qy, qz, tx, ty, tz.

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "mags/sim3.hpp"
#include "mags/summary.hpp"

namespace mags {

class DecodeError : public std::runtime_error {
 public:
  DecodeError(const std::string& what, size_t offset, const std::string& section)
      : std::runtime_error(what + " (section '" + section + "', byte offset " +
                           std::to_string(offset) + ")"),
        offset_(offset),
        section_(section) {}
  size_t offset() const { return offset_; }
  const std::string& section() const { return section_; }

 private:
  size_t offset_;
  std::string section_;
};

class ByteWriter {
 public:
  void u8(uint8_t v) { buf_.push_back(v); }
  void u16(uint16_t v);
  void u32(uint32_t v);
  void u64(uint64_t v);
  void f32(float v);
  void f64(double v);
  void bytes(const void* p, size_t n);
  void sim3(const Sim3& t);

  std::vector<uint8_t> take() { return std::move(buf_); }
  const std::vector<uint8_t>& buffer() const { return buf_; }
  size_t size() const { return buf_.size(); }
  // Patches a previously written u32 (for back-filled section lengths).
  void patch_u32(size_t at, uint32_t v);

 private:
  std::vector<uint8_t> buf_;
};

class ByteReader {
 public:
  ByteReader(const uint8_t* data, size_t size) : data_(data), size_(size) {}
  explicit ByteReader(const std::vector<uint8_t>& buf) : ByteReader(buf.data(), buf.size()) {}

  void set_section(const std::string& name) { section_ = name; }
  size_t offset() const { return pos_; }
  size_t remaining() const { return size_ - pos_; }

  uint8_t u8();
  uint16_t u16();
  uint32_t u32();
  uint64_t u64();
  float f32();
  double f64();
  void bytes(void* out, size_t n);
  Sim3 sim3();
  void expect_consumed_until(size_t end);  // section-length cross-check

  [[noreturn]] void fail(const std::string& what) const { throw DecodeError(what, pos_, section_); }

 private:
  void need(size_t n);
  const uint8_t* data_;
  size_t size_;
  size_t pos_ = 0;
  std::string section_ = "preamble";
};

std::vector<uint8_t> encode_summary(const SubmapSummary& s);
SubmapSummary decode_summary(const std::vector<uint8_t>& bytes);

// Coordinator channel messages. Sequence numbers are per-agent and strictly
// increasing across both kinds.
struct Message {
  enum class Kind : uint8_t { kSummary = 1, kPgbaReport = 2 };
  Kind kind = Kind::kSummary;
  uint32_t agent_id = 0;
  uint64_t sequence = 0;
  std::vector<uint8_t> payload;
};

std::vector<uint8_t> encode_message(const Message& m);
Message decode_message(ByteReader& r);

// PGBA rigidity report: pre/post keyframe camera centers of one rewritten
// submap (the coordinator runs the rigidity fit itself).
struct PgbaReport {
  uint32_t agent_id = 0;
  uint32_t submap_index = 0;
  std::vector<Eigen::Vector3d> pre_centers;
  std::vector<Eigen::Vector3d> post_centers;
};

std::vector<uint8_t> encode_pgba_report(const PgbaReport& r);
PgbaReport decode_pgba_report(const std::vector<uint8_t>& bytes);

}  // namespace mags
