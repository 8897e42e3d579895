// Command-line front end: run a scenario end to end, replay a recorded
// stream, evaluate trajectories, or inspect an exported graph.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <string>

#include "mags/coordinator.hpp"

namespace {

using mags::AlignMode;
using ordered_json = nlohmann::ordered_json;

int cmd_run(const std::string& scenario_path, const std::string& out_dir, bool strict,
            int threads, const std::optional<uint64_t>& seed) {
  mags::ScenarioParams params = mags::parse_scenario_config(mags::read_text_file(scenario_path));
  if (seed.has_value()) params.seed = *seed;
  const mags::Scenario scenario = mags::generate_scenario(params);
  const std::vector<uint8_t> stream = mags::scenario_to_stream(scenario);

  std::filesystem::create_directories(out_dir);
  mags::write_binary_file((std::filesystem::path(out_dir) / "stream.mstream").string(), stream);

  mags::RunConfig config;
  config.strict = strict;
  config.threads = threads;
  config.out_dir = out_dir;
  const mags::RunReport report = mags::run_stream(stream, config);
  std::cout << mags::report_to_json(report);
  return 0;
}

int cmd_replay(const std::string& stream_path, const std::string& out_dir, bool strict,
               int threads) {
  mags::RunConfig config;
  config.strict = strict;
  config.threads = threads;
  config.out_dir = out_dir;
  const mags::RunReport report = mags::run_stream(mags::read_binary_file(stream_path), config);
  std::cout << mags::report_to_json(report);
  return 0;
}

int cmd_eval(const std::string& est_path, const std::string& gt_path, const std::string& mode) {
  const auto est = mags::parse_tum(mags::read_text_file(est_path));
  const auto gt = mags::parse_tum(mags::read_text_file(gt_path));
  const AlignMode align = mode == "se3" ? AlignMode::kSe3 : AlignMode::kSim3;
  const mags::AteResult result = mags::ate_rmse(est, gt, align);
  ordered_json j;
  j["mode"] = mode;
  j["rmse_cm"] = result.rmse_cm;
  j["matched"] = result.matched;
  j["alignment_scale"] = result.alignment.scale;
  std::cout << j.dump(2) << "\n";
  return 0;
}

int cmd_inspect(const std::string& graph_path) {
  const auto graph = nlohmann::json::parse(mags::read_text_file(graph_path));
  ordered_json j;
  j["nodes"] = graph.at("nodes").size();
  size_t temporal = 0;
  size_t verified = 0;
  size_t invalid = 0;
  for (const auto& e : graph.at("edges")) {
    if (e.at("kind") == "temporal") {
      ++temporal;
    } else if (e.at("valid").get<bool>()) {
      ++verified;
    } else {
      ++invalid;
    }
  }
  j["temporal_edges"] = temporal;
  j["verified_edges"] = verified;
  j["invalidated_edges"] = invalid;
  ordered_json nodes = ordered_json::array();
  for (const auto& n : graph.at("nodes")) {
    ordered_json jn;
    jn["id"] = std::to_string(n.at("agent").get<uint64_t>()) + ":" +
               std::to_string(n.at("index").get<uint64_t>());
    jn["gauge"] = n.at("gauge").get<bool>();
    jn["correction_scale"] = n.at("correction").at(0).get<double>();
    nodes.push_back(std::move(jn));
  }
  j["node_corrections"] = std::move(nodes);
  std::cout << j.dump(2) << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-agent submap mapping runner"};
  app.require_subcommand(1);

  std::string scenario_path;
  std::string out_dir;
  bool strict = false;
  int threads = 1;
  uint64_t seed_value = 0;
  std::string stream_path;
  std::string replay_out;
  std::string est_path;
  std::string gt_path;
  std::string mode = "sim3";
  std::string graph_path;

  CLI::App* run = app.add_subcommand("run", "Generate a scenario, record its stream, run it");
  run->add_option("--scenario", scenario_path, "Scenario config file")->required();
  run->add_option("--out", out_dir, "Output directory for the stream and artifacts")->required();
  run->add_flag("--strict", strict, "Abort on the first malformed record");
  run->add_option("--threads", threads, "Fusion worker threads")->check(CLI::PositiveNumber);
  CLI::Option* seed_opt = run->add_option("--seed", seed_value, "Override the scenario seed");

  CLI::App* replay = app.add_subcommand("replay", "Re-run a recorded stream byte for byte");
  replay->add_option("--stream", stream_path, "Recorded .mstream file")->required();
  replay->add_option("--out", replay_out, "Optional artifact output directory");
  replay->add_flag("--strict", strict, "Abort on the first malformed record");
  replay->add_option("--threads", threads, "Fusion worker threads")->check(CLI::PositiveNumber);

  CLI::App* eval = app.add_subcommand("eval", "ATE RMSE between two TUM trajectories");
  eval->add_option("--est", est_path, "Estimated trajectory (TUM)")->required();
  eval->add_option("--gt", gt_path, "Ground-truth trajectory (TUM)")->required();
  eval->add_option("--mode", mode, "Alignment mode")
      ->check(CLI::IsMember({"sim3", "se3"}))
      ->capture_default_str();

  CLI::App* inspect = app.add_subcommand("inspect", "Summarize an exported graph JSON");
  inspect->add_option("--graph", graph_path, "graph.json produced by a run")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (run->parsed()) {
      std::optional<uint64_t> seed;
      if (seed_opt->count() > 0) seed = seed_value;
      return cmd_run(scenario_path, out_dir, strict, threads, seed);
    }
    if (replay->parsed()) return cmd_replay(stream_path, replay_out, strict, threads);
    if (eval->parsed()) return cmd_eval(est_path, gt_path, mode);
    if (inspect->parsed()) return cmd_inspect(graph_path);
  } catch (const std::exception& e) {
    std::cerr << "[mags] error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
