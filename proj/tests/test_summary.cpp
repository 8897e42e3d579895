#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <map>
#include <tuple>

#include "mags/summary.hpp"
#include "mags/voxel.hpp"
#include "mags/wire.hpp"
#include "test_util.hpp"

using namespace mags;
using testutil::uniform;
using testutil::uniform_index;

namespace {

SubmapSummary make_random_summary(std::mt19937_64& rng, int n_salient = 20, int n_cloud = 50) {
  SubmapSummary s;
  s.agent_id = static_cast<uint32_t>(uniform_index(rng, 4));
  s.submap_index = static_cast<uint32_t>(uniform_index(rng, 30));
  for (int i = 0; i < kDescriptorDim; ++i) s.descriptor[i] = float(uniform(rng, -1, 1));
  s.descriptor.normalize();
  for (int i = 0; i < n_salient; ++i) {
    SalientPoint q;
    q.position = Eigen::Vector3d(uniform(rng, -2, 2), uniform(rng, -2, 2), uniform(rng, 0, 3));
    for (int j = 0; j < kLocalDescriptorDim; ++j) q.descriptor[j] = float(uniform(rng, -1, 1));
    q.descriptor.normalize();
    s.salient.push_back(q);
    s.aabb.expand(q.position);
  }
  for (int i = 0; i < n_cloud; ++i) {
    Eigen::Vector3d p(uniform(rng, -2, 2), uniform(rng, -2, 2), uniform(rng, 0, 3));
    s.cloud.push_back(p);
    s.aabb.expand(p);
  }
  if (s.aabb.empty()) {
    s.aabb.min = Eigen::Vector3d::Zero();
    s.aabb.max = Eigen::Vector3d::Zero();
  }
  s.anchor.image = ImageF(6, 4);
  s.anchor.disparity = ImageF(6, 4);
  for (auto& v : s.anchor.image.data) v = float(uniform(rng, 0, 1));
  for (auto& v : s.anchor.disparity.data) v = (uniform(rng, 0, 1) < 0.2) ? 0.f : float(uniform(rng, 0.1, 2));
  s.anchor.fx = 50;
  s.anchor.fy = 55;
  s.anchor.cx = 3;
  s.anchor.cy = 2;
  s.anchor.pose = testutil::random_sim3(rng, 1.0, 1.0, 1.0);
  if (uniform(rng, 0, 1) < 0.5) s.prev_odometry = testutil::random_sim3(rng);
  return s;
}

bool summaries_identical(const SubmapSummary& a, const SubmapSummary& b) {
  if (a.agent_id != b.agent_id || a.submap_index != b.submap_index) return false;
  if (a.descriptor != b.descriptor) return false;
  if (a.salient.size() != b.salient.size() || a.cloud.size() != b.cloud.size()) return false;
  for (size_t i = 0; i < a.salient.size(); ++i) {
    if (a.salient[i].position != b.salient[i].position) return false;
    if (a.salient[i].descriptor != b.salient[i].descriptor) return false;
  }
  for (size_t i = 0; i < a.cloud.size(); ++i) {
    if (a.cloud[i] != b.cloud[i]) return false;
  }
  if (a.aabb.min != b.aabb.min || a.aabb.max != b.aabb.max) return false;
  if (a.anchor.image.data != b.anchor.image.data) return false;
  if (a.anchor.disparity.data != b.anchor.disparity.data) return false;
  if (a.anchor.fx != b.anchor.fx || a.anchor.fy != b.anchor.fy || a.anchor.cx != b.anchor.cx ||
      a.anchor.cy != b.anchor.cy) {
    return false;
  }
  if (a.anchor.pose.to_array() != b.anchor.pose.to_array()) return false;
  if (a.prev_odometry.has_value() != b.prev_odometry.has_value()) return false;
  if (a.prev_odometry && a.prev_odometry->to_array() != b.prev_odometry->to_array()) return false;
  return true;
}

}  // namespace

TEST_CASE("saliency: constant inputs give the feature-magnitude floor") {
  std::vector<ImageF> feat{ImageF(8, 6, 0.5f)};
  ImageF disp(8, 6, 1.0f);
  const ImageD s = score_saliency(feat, disp, SaliencyWeights{});
  for (double v : s.data) CHECK(v == doctest::Approx(0.10 * 0.5).epsilon(1e-12));
}

TEST_CASE("saliency: disparity step edge peaks at lambda_d*|dd|/2") {
  const int w = 10, h = 5, edge = 5;
  std::vector<ImageF> feat{ImageF(w, h, 0.0f)};
  ImageF disp(w, h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) disp.at(x, y) = x < edge ? 1.0f : 1.5f;
  }
  const ImageD s = score_saliency(feat, disp, SaliencyWeights{});
  for (int y = 0; y < h; ++y) {
    for (int x = 1; x < w - 1; ++x) {
      const double expected = (x == edge - 1 || x == edge) ? 0.35 * 0.5 / 2.0 : 0.0;
      CHECK(s.at(x, y) == doctest::Approx(expected).epsilon(1e-12));
    }
  }
}

TEST_CASE("saliency: random 8x8 matches per-pixel re-computation oracle") {
  std::mt19937_64 rng(101);
  const int w = 8, h = 8, channels = 2;
  std::vector<ImageF> feat(channels, ImageF(w, h));
  ImageF disp(w, h);
  for (auto& ch : feat) {
    for (auto& v : ch.data) v = float(uniform(rng, 0, 1));
  }
  for (auto& v : disp.data) v = float(uniform(rng, 0.1, 2));
  const SaliencyWeights wts{0.35, 0.10};
  const ImageD s = score_saliency(feat, disp, wts);

  // Independent straight-line re-computation.
  auto grad1 = [](const ImageF& img, int x, int y, int dx, int dy, int n) {
    const int lo = dx ? x : y, hi = dx ? img.width - 1 : img.height - 1;
    (void)n;
    if (lo == 0) return double(img.at(x + dx, y + dy)) - img.at(x, y);
    if (lo == hi) return double(img.at(x, y)) - img.at(x - dx, y - dy);
    return 0.5 * (double(img.at(x + dx, y + dy)) - img.at(x - dx, y - dy));
  };
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double gf = 0, mf = 0;
      for (const auto& ch : feat) {
        const double gx = grad1(ch, x, y, 1, 0, w), gy = grad1(ch, x, y, 0, 1, h);
        gf += gx * gx + gy * gy;
        mf += double(ch.at(x, y)) * ch.at(x, y);
      }
      const double dx = grad1(disp, x, y, 1, 0, w), dy = grad1(disp, x, y, 0, 1, h);
      const double expected =
          std::sqrt(gf) + wts.lambda_d * std::hypot(dx, dy) + wts.lambda_f * std::sqrt(mf);
      CHECK(s.at(x, y) == doctest::Approx(expected).epsilon(1e-12));
    }
  }
}

TEST_CASE("select_salient: trivial cases and sort oracle") {
  std::mt19937_64 rng(103);
  const int w = 6, h = 5;
  ImageD score(w, h);
  PointGrid grid(w, h);
  for (int i = 0; i < w * h; ++i) {
    grid.points[i] = Eigen::Vector3d(i, 0, 0);
    grid.valid[i] = 1;
  }

  CHECK(select_salient(score, grid, 0).empty());

  // All-equal scores: tie-break picks the first pixels in row-major order.
  for (auto& v : score.data) v = 0.7;
  auto picks = select_salient(score, grid, 3);
  REQUIRE(picks.size() == 3);
  CHECK(picks[0].pixel == 0);
  CHECK(picks[1].pixel == 1);
  CHECK(picks[2].pixel == 2);

  // Random scores with some invalid pixels vs a full-sort oracle.
  for (auto& v : score.data) v = uniform(rng, 0, 1);
  for (int i = 0; i < w * h; i += 7) grid.valid[i] = 0;
  picks = select_salient(score, grid, 10);
  std::vector<int> oracle;
  for (int i = 0; i < w * h; ++i) {
    if (grid.valid[i]) oracle.push_back(i);
  }
  std::sort(oracle.begin(), oracle.end(), [&](int a, int b) {
    return score.data[a] != score.data[b] ? score.data[a] > score.data[b] : a < b;
  });
  oracle.resize(10);
  REQUIRE(picks.size() == 10);
  for (size_t i = 0; i < picks.size(); ++i) CHECK(picks[i].pixel == oracle[i]);
  // Non-increasing scores; every omitted valid pixel scores <= the last kept.
  for (size_t i = 1; i < picks.size(); ++i) CHECK(picks[i].score <= picks[i - 1].score);
  for (int i = 0; i < w * h; ++i) {
    if (!grid.valid[i]) continue;
    bool kept = false;
    for (const auto& p : picks) kept |= (p.pixel == i);
    if (!kept) CHECK(score.data[i] <= picks.back().score);
  }
}

TEST_CASE("patch_descriptor: mean-free, unit norm, flat patch is zero") {
  std::mt19937_64 rng(107);
  ImageF img(12, 8);
  for (auto& v : img.data) v = float(uniform(rng, 0, 1));
  const LocalDescriptor d = patch_descriptor(img, 5, 4);
  CHECK(std::abs(d.sum()) < 1e-5);
  CHECK(d.norm() == doctest::Approx(1.0).epsilon(1e-6));

  ImageF flat(12, 8, 0.25f);
  CHECK(patch_descriptor(flat, 5, 4).norm() == 0.0f);
}

TEST_CASE("voxel_downsample: pinned cases") {
  // All points in one voxel -> single centroid.
  std::vector<Eigen::Vector3d> pts{{0.01, 0.01, 0.01}, {0.02, 0.02, 0.02}};
  auto out = voxel_downsample(pts, 0.05);
  REQUIRE(out.size() == 1);
  CHECK(out[0].isApprox(Eigen::Vector3d(0.015, 0.015, 0.015), 1e-12));

  // Two points 1 m apart, voxel 0.05 -> both retained.
  out = voxel_downsample({{0, 0, 0}, {1, 0, 0}}, 0.05);
  CHECK(out.size() == 2);
}

TEST_CASE("voxel_downsample: brute-force binning oracle, cap, idempotence") {
  std::mt19937_64 rng(109);
  std::vector<Eigen::Vector3d> pts;
  for (int i = 0; i < 10000; ++i) {
    pts.emplace_back(uniform(rng, 0, 1), uniform(rng, 0, 1), uniform(rng, 0, 1));
  }
  const double v = 0.1;
  auto out = voxel_downsample(pts, v);
  CHECK(out.size() <= 1000);

  // Independent binning oracle (plain floor; random points dodge boundaries).
  struct Accum {
    Eigen::Vector3d sum = Eigen::Vector3d::Zero();
    int n = 0;
  };
  std::map<std::tuple<int64_t, int64_t, int64_t>, Accum> bins;
  for (const auto& p : pts) {
    auto key = std::make_tuple(int64_t(std::floor(p.x() / v)), int64_t(std::floor(p.y() / v)),
                               int64_t(std::floor(p.z() / v)));
    auto& b = bins[key];
    b.sum += p;
    b.n += 1;
  }
  REQUIRE(out.size() == bins.size());
  // Same multiset of centroids (order differs: ours is key-order).
  for (const auto& c : out) {
    auto key = std::make_tuple(int64_t(std::floor(c.x() / v)), int64_t(std::floor(c.y() / v)),
                               int64_t(std::floor(c.z() / v)));
    auto it = bins.find(key);
    REQUIRE(it != bins.end());
    CHECK(c.isApprox(it->second.sum / it->second.n, 1e-12));
  }
  // Every output point within voxel-diagonal/2 of some input point.
  const double half_diag = v * std::sqrt(3.0) / 2.0;
  for (const auto& c : out) {
    double best = 1e9;
    for (const auto& p : pts) best = std::min(best, (c - p).norm());
    CHECK(best <= half_diag + 1e-12);
  }
  // Idempotent: downsampling the centroids reproduces them exactly.
  auto again = voxel_downsample(out, v);
  REQUIRE(again.size() == out.size());
  for (size_t i = 0; i < out.size(); ++i) CHECK(again[i] == out[i]);

  // Cap keeps ascending key order.
  auto capped = voxel_downsample(pts, v, 100);
  CHECK(capped.size() == 100);
  for (size_t i = 0; i < capped.size(); ++i) CHECK(capped[i] == out[i]);
}

TEST_CASE("retrieve: trivial cases, oracle, permutation invariance") {
  std::mt19937_64 rng(113);
  CHECK(retrieve(make_random_summary(rng), {}, 3, 0.3).empty());

  // Exact copy ranks first with similarity 1.
  std::vector<SubmapSummary> cat;
  SubmapSummary query = make_random_summary(rng);
  query.agent_id = 9;
  for (int i = 0; i < 20; ++i) cat.push_back(make_random_summary(rng));
  SubmapSummary clone = cat[0];
  clone.descriptor = query.descriptor;
  clone.agent_id = 3;
  cat.push_back(clone);
  std::vector<const SubmapSummary*> ptrs;
  for (const auto& s : cat) ptrs.push_back(&s);
  auto top = retrieve(query, ptrs, 3, 0.3);
  REQUIRE(!top.empty());
  CHECK(top[0] == &cat.back());
  CHECK(cosine_similarity(query.descriptor, top[0]->descriptor) == doctest::Approx(1.0).epsilon(1e-6));

  // Brute-force oracle over random catalogs.
  for (int trial = 0; trial < 10; ++trial) {
    SubmapSummary q = make_random_summary(rng);
    std::vector<SubmapSummary> c;
    for (int i = 0; i < 20; ++i) c.push_back(make_random_summary(rng));
    std::vector<const SubmapSummary*> p;
    for (const auto& s : c) p.push_back(&s);
    auto got = retrieve(q, p, 3, 0.3);

    struct Row {
      double sim;
      const SubmapSummary* s;
    };
    std::vector<Row> all;
    for (const auto& s : c) {
      if (s.agent_id == q.agent_id && std::abs(int(s.submap_index) - int(q.submap_index)) <= 1) {
        continue;
      }
      const double sim = double(s.descriptor.cast<double>().dot(q.descriptor.cast<double>()));
      if (sim >= 0.3) all.push_back({sim, &s});
    }
    std::sort(all.begin(), all.end(), [](const Row& a, const Row& b) {
      if (a.sim != b.sim) return a.sim > b.sim;
      if (a.s->agent_id != b.s->agent_id) return a.s->agent_id < b.s->agent_id;
      return a.s->submap_index < b.s->submap_index;
    });
    if (all.size() > 3) all.resize(3);
    REQUIRE(got.size() == all.size());
    for (size_t i = 0; i < got.size(); ++i) CHECK(got[i] == all[i].s);

    // Permutation invariance.
    std::vector<const SubmapSummary*> shuffled = p;
    for (size_t i = shuffled.size(); i > 1; --i) {
      std::swap(shuffled[i - 1], shuffled[uniform_index(rng, i)]);
    }
    auto got2 = retrieve(q, shuffled, 3, 0.3);
    REQUIRE(got2.size() == got.size());
    for (size_t i = 0; i < got.size(); ++i) CHECK(got2[i] == got[i]);
  }
}

TEST_CASE("retrieve: same-agent neighbors are excluded") {
  std::mt19937_64 rng(127);
  SubmapSummary q = make_random_summary(rng);
  q.agent_id = 1;
  q.submap_index = 5;
  std::vector<SubmapSummary> cat;
  for (uint32_t idx : {4u, 5u, 6u, 8u}) {
    SubmapSummary s = make_random_summary(rng);
    s.agent_id = 1;
    s.submap_index = idx;
    s.descriptor = q.descriptor;  // similarity 1, would rank first if eligible
    cat.push_back(s);
  }
  std::vector<const SubmapSummary*> ptrs;
  for (const auto& s : cat) ptrs.push_back(&s);
  auto top = retrieve(q, ptrs, 4, 0.3);
  REQUIRE(top.size() == 1);  // only |dl| = 3 survives
  CHECK(top[0]->submap_index == 8);
}

TEST_CASE("wire: minimal summary round-trips byte-identically") {
  SubmapSummary s;
  s.agent_id = 0;
  s.submap_index = 0;
  s.descriptor[0] = 1.0f;  // unit norm
  s.aabb.min = Eigen::Vector3d::Zero();
  s.aabb.max = Eigen::Vector3d::Zero();
  s.anchor.image = ImageF(1, 1, 0.5f);
  s.anchor.disparity = ImageF(1, 1, 1.0f);
  s.anchor.fx = s.anchor.fy = 1.0;
  s.anchor.cx = s.anchor.cy = 0.5;
  const auto bytes = encode_summary(s);
  const SubmapSummary d = decode_summary(bytes);
  CHECK(summaries_identical(s, d));
  CHECK(encode_summary(d) == bytes);
}

TEST_CASE("wire: 100 seeded summaries, encode-decode-encode is identity") {
  std::mt19937_64 rng(131);
  for (int i = 0; i < 100; ++i) {
    const SubmapSummary s = make_random_summary(rng);
    const auto bytes = encode_summary(s);
    const SubmapSummary d = decode_summary(bytes);
    CHECK(summaries_identical(s, d));
    CHECK(encode_summary(d) == bytes);
  }
}

TEST_CASE("wire: corrupt and truncated buffers fail with located diagnostics") {
  std::mt19937_64 rng(137);
  const SubmapSummary s = make_random_summary(rng);
  auto bytes = encode_summary(s);

  // Bad magic.
  {
    auto b = bytes;
    b[0] = 'X';
    CHECK_THROWS_AS(decode_summary(b), DecodeError);
  }
  // Unsupported version.
  {
    auto b = bytes;
    b[4] = 9;
    try {
      decode_summary(b);
      FAIL("expected version error");
    } catch (const DecodeError& e) {
      CHECK(std::string(e.what()).find("version") != std::string::npos);
    }
  }
  // Every proper prefix must fail, and the diagnostic names section + offset.
  for (size_t cut : {5ul, 12ul, 30ul, bytes.size() / 2, bytes.size() - 1}) {
    std::vector<uint8_t> b(bytes.begin(), bytes.begin() + cut);
    try {
      decode_summary(b);
      FAIL("expected truncation error at cut ", cut);
    } catch (const DecodeError& e) {
      CHECK(e.offset() <= cut);
      CHECK(!e.section().empty());
      CHECK(std::string(e.what()).find("offset") != std::string::npos);
    }
  }
  // Invariant violation caught on decode: corrupt the stored descriptor.
  {
    auto b = bytes;
    // Descriptor section payload starts after magic+version+header section.
    ByteReader r(b);
    char magic[4];
    r.bytes(magic, 4);
    r.u16();
    const uint32_t header_len = r.u32();
    const size_t desc_payload = r.offset() + header_len + 4 + 4;  // skip len+count
    float big = 100.f;
    std::memcpy(b.data() + desc_payload, &big, 4);
    CHECK_THROWS_AS(decode_summary(b), DecodeError);
  }
}

TEST_CASE("wire: message framing round trip and bad kind") {
  std::mt19937_64 rng(139);
  Message m;
  m.kind = Message::Kind::kPgbaReport;
  m.agent_id = 2;
  m.sequence = 77;
  PgbaReport rep;
  rep.agent_id = 2;
  rep.submap_index = 5;
  for (int i = 0; i < 4; ++i) {
    rep.pre_centers.emplace_back(uniform(rng, -1, 1), uniform(rng, -1, 1), uniform(rng, -1, 1));
    rep.post_centers.emplace_back(uniform(rng, -1, 1), uniform(rng, -1, 1), uniform(rng, -1, 1));
  }
  m.payload = encode_pgba_report(rep);
  const auto bytes = encode_message(m);
  ByteReader r(bytes);
  const Message d = decode_message(r);
  CHECK(d.kind == m.kind);
  CHECK(d.agent_id == m.agent_id);
  CHECK(d.sequence == m.sequence);
  CHECK(d.payload == m.payload);
  const PgbaReport drep = decode_pgba_report(d.payload);
  CHECK(drep.agent_id == rep.agent_id);
  CHECK(drep.submap_index == rep.submap_index);
  REQUIRE(drep.pre_centers.size() == 4);
  CHECK(drep.pre_centers[2] == rep.pre_centers[2]);
  CHECK(drep.post_centers[3] == rep.post_centers[3]);

  auto bad = bytes;
  bad[0] = 7;
  ByteReader rb(bad);
  CHECK_THROWS_AS(decode_message(rb), DecodeError);
}

TEST_CASE("voxel keys: pinned indices, snap rule, collision-free packing") {
  // Pinned floor arithmetic from the contract.
  CHECK(voxel_index(0.25, 0.10) == 2);
  CHECK(voxel_index(-0.05, 0.10) == -1);
  CHECK(voxel_index(1.0, 0.10) == 10);  // exact-boundary snap
  CHECK(voxel_key(Eigen::Vector3d::Zero(), 0.1) == pack_voxel_indices(0, 0, 0));

  const uint64_t k = voxel_key(Eigen::Vector3d(0.024, -0.031, 0.05), 0.05);
  // indices (0, -1, 1) -> zigzag (0, 1, 2) at offsets 0/21/42.
  CHECK(k == ((uint64_t(1) << 21) | (uint64_t(2) << 42)));
  const auto dec = voxel_key_decode(k);
  CHECK(dec[0] == 0);
  CHECK(dec[1] == -1);
  CHECK(dec[2] == 1);

  CHECK_THROWS_AS(pack_voxel_indices(int64_t(1) << 20, 0, 0), std::out_of_range);
  CHECK_THROWS_AS(voxel_key(Eigen::Vector3d(2e5, 0, 0), 0.1), std::out_of_range);
}

TEST_CASE("voxel keys: one million seeded points, zero collisions") {
  std::mt19937_64 rng(149);
  std::vector<uint64_t> keys;
  std::vector<std::tuple<int64_t, int64_t, int64_t>> idx;
  keys.reserve(1000000);
  idx.reserve(1000000);
  const double v = 0.05;
  for (int i = 0; i < 1000000; ++i) {
    const Eigen::Vector3d p(uniform(rng, -5e4, 5e4) * v, uniform(rng, -5e4, 5e4) * v,
                            uniform(rng, -5e4, 5e4) * v);
    keys.push_back(voxel_key(p, v));
    idx.emplace_back(voxel_index(p.x(), v), voxel_index(p.y(), v), voxel_index(p.z(), v));
  }
  // Distinct index triples must map to distinct keys.
  std::vector<size_t> order(keys.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](size_t a, size_t b) { return keys[a] < keys[b]; });
  size_t collisions = 0;
  for (size_t i = 1; i < order.size(); ++i) {
    if (keys[order[i]] == keys[order[i - 1]] && idx[order[i]] != idx[order[i - 1]]) ++collisions;
  }
  CHECK(collisions == 0);
  // Decode inverts encode exactly.
  for (size_t i = 0; i < keys.size(); i += 9973) {
    const auto d = voxel_key_decode(keys[i]);
    CHECK(std::make_tuple(d[0], d[1], d[2]) == idx[i]);
  }
}
