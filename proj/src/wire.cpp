#include "mags/wire.hpp"

#include <cstring>

namespace mags {

namespace {
template <typename T>
void append_raw(std::vector<uint8_t>& buf, T v) {
  // Little-endian host assumed (x86/arm64); layout is the wire contract.
  static_assert(std::is_trivially_copyable_v<T>);
  const size_t at = buf.size();
  buf.resize(at + sizeof(T));
  std::memcpy(buf.data() + at, &v, sizeof(T));
}
}  // namespace

void ByteWriter::u16(uint16_t v) { append_raw(buf_, v); }
void ByteWriter::u32(uint32_t v) { append_raw(buf_, v); }
void ByteWriter::u64(uint64_t v) { append_raw(buf_, v); }
void ByteWriter::f32(float v) { append_raw(buf_, v); }
void ByteWriter::f64(double v) { append_raw(buf_, v); }

void ByteWriter::bytes(const void* p, size_t n) {
  const size_t at = buf_.size();
  buf_.resize(at + n);
  std::memcpy(buf_.data() + at, p, n);
}

void ByteWriter::sim3(const Sim3& t) {
  for (double v : t.to_array()) f64(v);
}

void ByteWriter::patch_u32(size_t at, uint32_t v) { std::memcpy(buf_.data() + at, &v, 4); }

void ByteReader::need(size_t n) {
  if (size_ - pos_ < n) fail("truncated buffer");
}

uint8_t ByteReader::u8() {
  need(1);
  return data_[pos_++];
}

uint16_t ByteReader::u16() {
  need(2);
  uint16_t v;
  std::memcpy(&v, data_ + pos_, 2);
  pos_ += 2;
  return v;
}

uint32_t ByteReader::u32() {
  need(4);
  uint32_t v;
  std::memcpy(&v, data_ + pos_, 4);
  pos_ += 4;
  return v;
}

uint64_t ByteReader::u64() {
  need(8);
  uint64_t v;
  std::memcpy(&v, data_ + pos_, 8);
  pos_ += 8;
  return v;
}

float ByteReader::f32() {
  need(4);
  float v;
  std::memcpy(&v, data_ + pos_, 4);
  pos_ += 4;
  return v;
}

double ByteReader::f64() {
  need(8);
  double v;
  std::memcpy(&v, data_ + pos_, 8);
  pos_ += 8;
  return v;
}

void ByteReader::bytes(void* out, size_t n) {
  need(n);
  std::memcpy(out, data_ + pos_, n);
  pos_ += n;
}

Sim3 ByteReader::sim3() {
  std::array<double, 8> a;
  for (double& v : a) v = f64();
  return Sim3::from_array(a);
}

void ByteReader::expect_consumed_until(size_t end) {
  if (pos_ != end) fail("section length does not match content");
}

namespace {
constexpr char kSummaryMagic[4] = {'M', 'A', 'G', 'S'};
constexpr uint16_t kSummaryVersion = 1;

// Writes one length-prefixed section via a fill callback.
template <typename Fn>
void write_section(ByteWriter& w, Fn&& fill) {
  const size_t len_at = w.size();
  w.u32(0);
  const size_t start = w.size();
  fill();
  w.patch_u32(len_at, static_cast<uint32_t>(w.size() - start));
}

// Reads a section length and returns the absolute end offset.
size_t begin_section(ByteReader& r, const char* name) {
  r.set_section(name);
  const uint32_t len = r.u32();
  if (len > r.remaining()) r.fail("truncated section");
  return r.offset() + len;
}
}  // namespace

std::vector<uint8_t> encode_summary(const SubmapSummary& s) {
  validate_summary(s);
  ByteWriter w;
  w.bytes(kSummaryMagic, 4);
  w.u16(kSummaryVersion);

  write_section(w, [&] {
    w.u32(s.agent_id);
    w.u32(s.submap_index);
    w.u32(s.prev_odometry ? 1u : 0u);
    if (s.prev_odometry) w.sim3(*s.prev_odometry);
  });
  write_section(w, [&] {
    w.u32(kDescriptorDim);
    for (int i = 0; i < kDescriptorDim; ++i) w.f32(s.descriptor[i]);
  });
  write_section(w, [&] {
    w.u32(static_cast<uint32_t>(s.salient.size()));
    for (const auto& q : s.salient) {
      for (int i = 0; i < 3; ++i) w.f64(q.position[i]);
      for (int i = 0; i < kLocalDescriptorDim; ++i) w.f32(q.descriptor[i]);
    }
  });
  write_section(w, [&] {
    w.u32(static_cast<uint32_t>(s.cloud.size()));
    for (const auto& p : s.cloud) {
      for (int i = 0; i < 3; ++i) w.f64(p[i]);
    }
  });
  write_section(w, [&] {
    for (int i = 0; i < 3; ++i) w.f64(s.aabb.min[i]);
    for (int i = 0; i < 3; ++i) w.f64(s.aabb.max[i]);
  });
  write_section(w, [&] {
    const auto& a = s.anchor;
    w.u32(static_cast<uint32_t>(a.image.width));
    w.u32(static_cast<uint32_t>(a.image.height));
    w.f64(a.fx);
    w.f64(a.fy);
    w.f64(a.cx);
    w.f64(a.cy);
    w.sim3(a.pose);
    w.bytes(a.image.data.data(), a.image.data.size() * 4);
    w.bytes(a.disparity.data.data(), a.disparity.data.size() * 4);
  });
  return w.take();
}

SubmapSummary decode_summary(const std::vector<uint8_t>& bytes) {
  ByteReader r(bytes);
  char magic[4];
  r.bytes(magic, 4);
  if (std::memcmp(magic, kSummaryMagic, 4) != 0) r.fail("bad magic");
  const uint16_t version = r.u16();
  if (version != kSummaryVersion) r.fail("unsupported version " + std::to_string(version));

  SubmapSummary s;
  {
    const size_t end = begin_section(r, "header");
    s.agent_id = r.u32();
    s.submap_index = r.u32();
    const uint32_t flags = r.u32();
    if (flags & 1u) s.prev_odometry = r.sim3();
    r.expect_consumed_until(end);
  }
  {
    const size_t end = begin_section(r, "descriptor");
    const uint32_t n = r.u32();
    if (n != kDescriptorDim) r.fail("descriptor dimension " + std::to_string(n));
    for (int i = 0; i < kDescriptorDim; ++i) s.descriptor[i] = r.f32();
    r.expect_consumed_until(end);
  }
  {
    const size_t end = begin_section(r, "Q");
    const uint32_t n = r.u32();
    if (n > kMaxSalientPoints) r.fail("salient count " + std::to_string(n) + " over cap");
    s.salient.resize(n);
    for (auto& q : s.salient) {
      for (int i = 0; i < 3; ++i) q.position[i] = r.f64();
      for (int i = 0; i < kLocalDescriptorDim; ++i) q.descriptor[i] = r.f32();
    }
    r.expect_consumed_until(end);
  }
  {
    const size_t end = begin_section(r, "R");
    const uint32_t n = r.u32();
    if (n > kMaxCloudPoints) r.fail("cloud count " + std::to_string(n) + " over cap");
    s.cloud.resize(n);
    for (auto& p : s.cloud) {
      for (int i = 0; i < 3; ++i) p[i] = r.f64();
    }
    r.expect_consumed_until(end);
  }
  {
    const size_t end = begin_section(r, "aabb");
    for (int i = 0; i < 3; ++i) s.aabb.min[i] = r.f64();
    for (int i = 0; i < 3; ++i) s.aabb.max[i] = r.f64();
    r.expect_consumed_until(end);
  }
  {
    const size_t end = begin_section(r, "anchor");
    const uint32_t width = r.u32();
    const uint32_t height = r.u32();
    if (width == 0 || height == 0 || uint64_t(width) * height > (64u << 20)) {
      r.fail("implausible anchor dimensions");
    }
    auto& a = s.anchor;
    a.fx = r.f64();
    a.fy = r.f64();
    a.cx = r.f64();
    a.cy = r.f64();
    a.pose = r.sim3();
    a.image = ImageF(static_cast<int>(width), static_cast<int>(height));
    a.disparity = ImageF(static_cast<int>(width), static_cast<int>(height));
    r.bytes(a.image.data.data(), a.image.data.size() * 4);
    r.bytes(a.disparity.data.data(), a.disparity.data.size() * 4);
    r.expect_consumed_until(end);
  }
  if (r.remaining() != 0) r.fail("trailing bytes after anchor section");

  try {
    validate_summary(s);
  } catch (const std::invalid_argument& e) {
    throw DecodeError(std::string("invariant violation: ") + e.what(), bytes.size(), "summary");
  }
  return s;
}

std::vector<uint8_t> encode_message(const Message& m) {
  ByteWriter w;
  w.u8(static_cast<uint8_t>(m.kind));
  w.u32(m.agent_id);
  w.u64(m.sequence);
  w.u32(static_cast<uint32_t>(m.payload.size()));
  w.bytes(m.payload.data(), m.payload.size());
  return w.take();
}

Message decode_message(ByteReader& r) {
  r.set_section("message");
  Message m;
  const uint8_t kind = r.u8();
  if (kind != 1 && kind != 2) r.fail("unknown message kind " + std::to_string(kind));
  m.kind = static_cast<Message::Kind>(kind);
  m.agent_id = r.u32();
  m.sequence = r.u64();
  const uint32_t len = r.u32();
  if (len > r.remaining()) r.fail("truncated message payload");
  m.payload.resize(len);
  r.bytes(m.payload.data(), len);
  return m;
}

std::vector<uint8_t> encode_pgba_report(const PgbaReport& rep) {
  ByteWriter w;
  w.u32(rep.agent_id);
  w.u32(rep.submap_index);
  if (rep.pre_centers.size() != rep.post_centers.size()) {
    throw std::invalid_argument("pgba report: pre/post center counts differ");
  }
  w.u32(static_cast<uint32_t>(rep.pre_centers.size()));
  for (const auto& p : rep.pre_centers) {
    for (int i = 0; i < 3; ++i) w.f64(p[i]);
  }
  for (const auto& p : rep.post_centers) {
    for (int i = 0; i < 3; ++i) w.f64(p[i]);
  }
  return w.take();
}

PgbaReport decode_pgba_report(const std::vector<uint8_t>& bytes) {
  ByteReader r(bytes);
  r.set_section("pgba_report");
  PgbaReport rep;
  rep.agent_id = r.u32();
  rep.submap_index = r.u32();
  const uint32_t n = r.u32();
  if (uint64_t(n) * 48 > r.remaining()) r.fail("truncated center list");
  rep.pre_centers.resize(n);
  rep.post_centers.resize(n);
  for (auto& p : rep.pre_centers) {
    for (int i = 0; i < 3; ++i) p[i] = r.f64();
  }
  for (auto& p : rep.post_centers) {
    for (int i = 0; i < 3; ++i) p[i] = r.f64();
  }
  if (r.remaining() != 0) r.fail("trailing bytes in pgba report");
  return rep;
}

}  // namespace mags
