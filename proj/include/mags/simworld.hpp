#pragma once

// Deterministic synthetic world: axis-aligned textured box scenes with an
// exact ray-cast renderer, scripted agent trajectories with per-agent scale
// error and odometry drift, the submap freeze policy, rigidity-event
// emulation, scenario generation, and the ".mstream" replay container.
//
// Frame conventions. World poses are rigid (scale 1). Each agent carries a
// constant map scale factor `scale_error`: every distance the agent believes
// is scale_error times the true metric distance. A submap's local frame is
// its first keyframe's camera frame with that scale applied, so the
// ground-truth correction (local -> world) is
//     C_true = T_first ∘ Scale(1/scale_error)
// and believed depth = scale_error * true depth (disparity shrinks by the
// same factor). Cameras look along +z with x right and y down.
//
// Stream container (".mstream", little-endian):
//   magic "MSTR", u16 version = 1, then records of
//     u8 kind (1 = message, 2 = fusion payload, 3 = ground truth), u32
//     payload length, payload bytes.
//   message        encode_message bytes (wire.hpp)
//   fusion payload u32 agent, u32 submap, u32 n_gaussians, per gaussian
//                  3 f64 mean, 3 f64 scales, 4 f64 rotation (w x y z),
//                  f32 opacity, 3 f32 color; u32 n_keyframes, per keyframe
//                  8 f64 local pose, 4 f64 intrinsics (fx fy cx cy), u32
//                  width, u32 height, then W*H f32 depth, W*H f32 rendered,
//                  W*H f32 reference (row-major)
//   ground truth   u32 agent, u32 submap, f64 scale_error, 8 f64 true
//                  correction, u32 n_keyframes, per keyframe f64 timestamp,
//                  8 f64 world pose, 8 f64 local pose
//   A rigid rewrite event re-emits the submap's fusion payload (updated
//   geometry) immediately before the PgbaReport message.

#include <cstdint>
#include <string>
#include <vector>

#include "mags/fusion.hpp"
#include "mags/sim3.hpp"
#include "mags/summary.hpp"
#include "mags/types.hpp"
#include "mags/wire.hpp"

namespace mags {

// --- Scene -----------------------------------------------------------------

enum class TextureId : uint8_t { kSine = 0, kChecker = 1, kGradient = 2 };

struct SceneBox {
  Aabb box;
  TextureId texture = TextureId::kSine;
  double albedo_scale = 1.0;  // multiplies the pattern around the midtone
  double albedo_bias = 0.0;   // added to the final intensity
};

struct SceneModel {
  std::vector<SceneBox> boxes;
  Aabb world;        // hull of all boxes
  uint64_t seed = 0;  // drives per-face texture phases

  void add_box(const SceneBox& b) {
    boxes.push_back(b);
    world.expand(b.box.min);
    world.expand(b.box.max);
  }
};

// Deterministic face intensity in [0, 1]; (u, v) are the two non-normal world
// coordinates of the surface point, so co-observed points agree exactly.
double face_intensity(const SceneModel& scene, size_t box_index, int face, double u, double v);

struct RayHit {
  double t = 0.0;  // ray parameter, camera-z depth under the pinhole model
  size_t box_index = 0;
  int face = 0;  // 0..5: -x +x -y +y -z +z
  Eigen::Vector3d point = Eigen::Vector3d::Zero();
};

// Nearest face intersection with t > eps; false on a miss. Faces are hit from
// either side, so box interiors (rooms) and exteriors (furniture) both work.
bool raycast(const SceneModel& scene, const Eigen::Vector3d& origin, const Eigen::Vector3d& dir,
             RayHit* hit, double eps = 1e-9);

struct SimCamera {
  int width = 64;
  int height = 48;
  double fx = 50.0;
  double fy = 50.0;
  double cx = 31.5;  // width/2 - 0.5: pixel centers at integer coordinates
  double cy = 23.5;

  static SimCamera standard(int w = 64, int h = 48, double focal = 50.0) {
    SimCamera c;
    c.width = w;
    c.height = h;
    c.fx = c.fy = focal;
    c.cx = w / 2.0 - 0.5;
    c.cy = h / 2.0 - 0.5;
    return c;
  }
};

// Exact first-hit render from a rigid world pose: grayscale intensity plus
// true-metric disparity (inverse camera depth); misses carry disparity 0.
// The anchor's pose field is left at identity (the caller owns frames); its
// intrinsics are filled from `cam`. Throws std::invalid_argument for a
// non-rigid pose or a resolution under 8x8.
AnchorKeyframe render_anchor(const SceneModel& scene, const Sim3& world_pose, const SimCamera& cam);

// --- Agent scripts and submap construction ---------------------------------

struct DriftModel {
  double sigma_nu = 0.0;      // m per keyframe step (believed units)
  double sigma_omega = 0.0;   // rad per keyframe step
  double sigma_lambda = 0.0;  // log-scale per keyframe step
};

struct PgbaEvent {
  uint32_t submap_index = 0;
  Sim3 delta;              // rewrite applied to the submap-local frame
  double magnitude = 0.0;  // when > 0, delta is drawn as exp of a seeded
                           // random unit tangent scaled by this
  double sigma = 0.0;      // m, noise on the reported post centers
  uint32_t emit_after = 0;  // emitted after this summary round of the stream
};

struct AgentScript {
  uint32_t agent_id = 0;
  std::vector<double> timestamps;  // TUM seconds, strictly increasing
  std::vector<Sim3> keyframe_poses;  // rigid world camera-to-world
  double scale_error = 1.0;          // in [0.33, 3.0]
  DriftModel drift;
  std::vector<PgbaEvent> pgba_events;
};

// Throws std::invalid_argument on scale band violation, < 2 keyframes, or
// size mismatch between timestamps and poses.
void validate_script(const AgentScript& script);

struct FusionKeyframe {
  Sim3 local_pose;  // submap-local camera pose; rigid as built, but a rigid
                    // rewrite may leave a scale component the pose absorbs
  double fx = 1.0, fy = 1.0, cx = 0.0, cy = 0.0;
  ImageF depth;     // believed metric depth (scale_error * true)
  ImageF rendered;  // the agent's own render
  ImageF reference; // captured image: gain * rendered + bias
};

struct KeyframeTruth {
  double timestamp = 0.0;
  Sim3 world_pose;  // rigid ground truth
  Sim3 local_pose;  // the believed submap-local pose
};

// One frozen submap: the transmissible summary plus the fusion payload and
// the evaluation sidecar.
struct SubmapData {
  SubmapSummary summary;
  std::vector<Gaussian> gaussians;  // submap-local map
  std::vector<FusionKeyframe> keyframes;
  Sim3 true_correction;  // local -> world, includes scale_error
  double scale_error = 1.0;
  std::vector<KeyframeTruth> truth;
};

struct BuildParams {
  SimCamera camera = SimCamera::standard();
  int k_max = 8;             // freeze at this many keyframes
  double tau_move = 2.0;     // m (believed units), max pairwise center spread
  int gaussian_stride = 4;   // seeding decimation
  int cloud_stride = 2;      // registration-cloud decimation
  double cloud_voxel = 0.05; // local-units downsampling voxel
  size_t salient_k = kMaxSalientPoints;
  double point_noise = 0.0;  // sigma, local units, on cloud + salient points
  double exposure_gain = 1.0;
  double exposure_bias = 0.0;
  uint64_t seed = 0;         // noise streams only; geometry is exact
};

// Greedy freeze policy: a submap freezes when it holds k_max keyframes or
// the max pairwise believed camera-center distance inside it exceeds
// tau_move (the breaching keyframe stays in the frozen submap); a partial
// submap at the end of the script freezes as-is.
std::vector<SubmapData> build_submaps(const AgentScript& script, const SceneModel& scene,
                                      const BuildParams& params = {});

// Applies one scripted rigidity event: mutates `submap` in place when the
// event's sigma is in the rigid regime (geometry carried through delta, true
// correction takes the companion update) and returns the report message
// payload (pre/post centers, post = delta * pre + noise). Throws
// std::out_of_range when the event names a different submap.
inline constexpr double kSimRigidSigma = 0.05;
PgbaReport emit_pgba_event(SubmapData& submap, const PgbaEvent& event, uint64_t seed);

// --- Scenario generation ----------------------------------------------------

enum class OverlapPlan : uint8_t { kNone = 0, kPartial = 1, kFull = 2 };

struct ScenarioParams {
  uint64_t seed = 42;
  int n_agents = 3;
  OverlapPlan overlap = OverlapPlan::kFull;
  int submaps_per_agent = 12;
  int keyframes_per_submap = 8;
  std::vector<double> scale_errors = {1.0, 0.6, 1.7};  // cycled over agents
  double point_noise = 0.0;
  DriftModel drift;
  double exposure_jitter = 0.0;  // per-agent gain/bias magnitude
  SimCamera camera = SimCamera::standard();
  std::vector<PgbaEvent> pgba_events;      // paired with pgba_event_agents
  std::vector<uint32_t> pgba_event_agents;
};

struct Scenario {
  ScenarioParams params;
  SceneModel scene;
  std::vector<AgentScript> scripts;
};

// Deterministic multi-room box scene and per-agent loop trajectories.
// kFull: shared room, full loops at distinct phases; kPartial: shared room,
// overlapping arcs; kNone: one disjoint room per agent. Agent 0 always gets
// scale_errors[0] (the gauge agent should be metric when that entry is 1).
// Throws std::invalid_argument for n_agents outside [1, 8].
Scenario generate_scenario(const ScenarioParams& params);

// Per-agent BuildParams implied by a scenario (noise, exposure, seed).
BuildParams scenario_build_params(const Scenario& scenario, uint32_t agent_id);

// --- Replay container -------------------------------------------------------

struct FusionPayload {
  uint32_t agent_id = 0;
  uint32_t submap_index = 0;
  std::vector<Gaussian> gaussians;
  std::vector<FusionKeyframe> keyframes;
};

struct TruthRecord {
  uint32_t agent_id = 0;
  uint32_t submap_index = 0;
  double scale_error = 1.0;
  Sim3 true_correction;
  std::vector<KeyframeTruth> keyframes;
};

struct StreamRecord {
  enum class Kind : uint8_t { kMessage = 1, kFusionPayload = 2, kTruth = 3 };
  Kind kind = Kind::kMessage;
  Message message;        // kind == kMessage
  FusionPayload payload;  // kind == kFusionPayload
  TruthRecord truth;      // kind == kTruth
};

std::vector<uint8_t> encode_fusion_payload(const FusionPayload& p);
FusionPayload decode_fusion_payload(const std::vector<uint8_t>& bytes);
std::vector<uint8_t> encode_truth_record(const TruthRecord& t);
TruthRecord decode_truth_record(const std::vector<uint8_t>& bytes);

std::vector<uint8_t> encode_stream(const std::vector<StreamRecord>& records);
// Throws DecodeError on malformed bytes (bad magic/version, truncation,
// unknown record kind) with the failing byte offset.
std::vector<StreamRecord> decode_stream(const std::vector<uint8_t>& bytes);

// Builds every agent's submaps, interleaves them round-robin by submap index
// (payload, truth, then summary message per submap; an agent's scripted
// events follow the round named by their emit_after), and serializes the
// canonical stream. Per-agent sequence numbers count both message kinds.
std::vector<StreamRecord> scenario_to_records(const Scenario& scenario);
std::vector<uint8_t> scenario_to_stream(const Scenario& scenario);

// --- Scenario config and TUM trajectories -----------------------------------

// Line-oriented key=value text; '#' starts a comment. Keys: seed, n_agents,
// overlap (none|partial|full), submaps_per_agent, keyframes_per_submap,
// scale_errors (comma-separated), point_noise, drift_nu, drift_omega,
// drift_lambda, exposure_jitter, image_width, image_height, focal, and
// repeatable pgba_event = agent,submap,emit_after,magnitude,sigma lines.
// Unknown keys or unparsable values throw std::invalid_argument naming the
// offending line.
ScenarioParams parse_scenario_config(const std::string& text);

struct TimedPose {
  double timestamp = 0.0;
  Sim3 pose;
};

// TUM trajectory format: "timestamp tx ty tz qx qy qz qw" per line, '#'
// comments; poses written with 9 significant digits. parse throws
// std::invalid_argument on malformed lines.
std::string tum_to_string(const std::vector<TimedPose>& trajectory);
std::vector<TimedPose> parse_tum(const std::string& text);

void write_text_file(const std::string& path, const std::string& content);
std::string read_text_file(const std::string& path);
void write_binary_file(const std::string& path, const std::vector<uint8_t>& bytes);
std::vector<uint8_t> read_binary_file(const std::string& path);

}  // namespace mags
