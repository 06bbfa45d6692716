#pragma once

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "gridsim/gridsim.hpp"

namespace testkit {

using namespace gridsim;

inline std::filesystem::path scenario_dir() { return GRIDSIM_SCENARIO_DIR; }

inline std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// One site holding every CE and SE; same-site access is local.
inline GridTopology flat_site(int ces, int nodes, double speed = 1.0) {
  GridTopology t;
  t.add_site("s0");
  t.broker_site = "s0";
  t.add_ui("ui0", "s0");
  for (int i = 0; i < ces; ++i) {
    ComputingElement ce;
    ce.id = "ce" + std::to_string(i);
    ce.site = "s0";
    ce.nodes = nodes;
    ce.speed = speed;
    t.add_ce(ce);
  }
  t.add_se(StorageElement{"se0", "s0", 1'000'000'000'000ULL, 0});
  return t;
}

inline TimedJob make_job(std::string id, double at, double cpu) {
  TimedJob tj;
  tj.at = SimTime(at);
  tj.spec.id = std::move(id);
  tj.spec.user = "u";
  tj.spec.vo = "vo";
  tj.spec.cpu = cpu;
  tj.spec.ui = "ui0";
  return tj;
}

inline SimulationConfig make_config(GridTopology topo, std::vector<TimedJob> jobs,
                                    double duration = 1e6) {
  SimulationConfig cfg;
  cfg.topology = std::move(topo);
  cfg.jobs = std::move(jobs);
  cfg.duration = duration;
  cfg.metrics.window = duration > 0 ? duration : 1.0;
  cfg.accounting.period = duration > 0 ? duration : 1.0;
  cfg.verify_invariants = true;
  return cfg;
}

inline std::vector<nlohmann::json> parse_trace(const std::vector<std::string>& lines) {
  std::vector<nlohmann::json> out;
  out.reserve(lines.size());
  for (const auto& l : lines) out.push_back(nlohmann::json::parse(l));
  return out;
}

// Every scenario shipped with the repository (sweep and tuning grids excluded).
inline std::vector<std::filesystem::path> shipped_scenarios() {
  std::vector<std::filesystem::path> out;
  for (const auto& dir : {scenario_dir(), scenario_dir() / "experiments"})
    for (const auto& e : std::filesystem::directory_iterator(dir)) {
      const auto name = e.path().filename().string();
      if (e.path().extension() != ".json") continue;
      if (name.find("_sweep") != std::string::npos || name.find("_tune") != std::string::npos)
        continue;
      out.push_back(e.path());
    }
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace testkit
