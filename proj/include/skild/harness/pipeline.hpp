#pragma once

#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "skild/harness/config.hpp"
#include "skild/harness/metrics.hpp"
#include "skild/harness/render.hpp"
#include "skild/rl/flat_sac.hpp"
#include "skild/rl/skill_sac.hpp"

namespace skild {

namespace fs = std::filesystem;

inline std::string out_root(const std::string& fallback) {
  if (const char* env = std::getenv("SKILD_OUT_DIR")) return env;
  return fallback;
}

// Content hash of a file, for manifest-based stage skipping.
inline uint64_t file_hash(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) raise(ErrorKind::IoError, "cannot hash " + path);
  uint64_t h = 0xcbf29ce484222325ULL;
  char buf[65536];
  while (is.read(buf, sizeof(buf)) || is.gcount() > 0) {
    for (std::streamsize i = 0; i < is.gcount(); ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 0x100000001b3ULL;
    }
  }
  return h;
}

// Records, per stage, the input hash it was built from. A stage reruns only
// when its inputs changed or its outputs are missing.
class Manifest {
 public:
  explicit Manifest(const std::string& path) : path_(path) {
    if (fs::exists(path_)) {
      std::ifstream is(path_);
      try {
        is >> j_;
      } catch (...) {
        j_ = json::object();
      }
    } else {
      j_ = json::object();
    }
    if (!j_.contains("stages")) j_["stages"] = json::object();
  }

  bool up_to_date(const std::string& stage, uint64_t input_hash,
                  const std::vector<std::string>& outputs) const {
    if (!j_.at("stages").contains(stage)) return false;
    if (j_.at("stages").at(stage).value("input_hash", std::string()) !=
        std::to_string(input_hash))
      return false;
    for (const std::string& o : outputs)
      if (!fs::exists(o)) return false;
    return true;
  }

  void record(const std::string& stage, uint64_t input_hash,
              const std::vector<std::string>& outputs) {
    json e;
    e["input_hash"] = std::to_string(input_hash);
    e["outputs"] = outputs;
    j_["stages"][stage] = e;
    std::ofstream os(path_);
    os << j_.dump(2) << "\n";
  }

 private:
  std::string path_;
  json j_;
};

struct RLInputs {
  const MazeSpec* maze = nullptr;
  std::optional<SkillModel> skills;
  std::optional<Guidance> guidance;
  const Dataset* demos = nullptr;
};

// Dispatches a single RL run for any mode; returns its metrics log and the
// trained policy when the mode is skill-based.
inline std::pair<MetricsLog, std::optional<PolicyNet>> run_rl(
    const RLConfig& cfg, const RLInputs& in,
    const std::function<void(int, SkillSpaceTrainer&)>& on_eval = {}) {
  const ModeTraits traits = mode_traits(cfg.mode);
  if (traits.flat) {
    FlatSacTrainer trainer(*in.maze, cfg, in.demos);
    return {trainer.train(), std::nullopt};
  }
  if (!in.skills) raise(ErrorKind::MissingCheckpoint, "mode requires the skills checkpoint");
  SkillSpaceTrainer trainer(*in.maze, cfg, *in.skills, in.guidance, in.demos);
  MetricsLog log = trainer.train(on_eval);
  return {std::move(log), std::move(trainer.policy_)};
}

// Fig.2 pipeline: datasets -> skill pretraining -> guidance pretraining ->
// downstream RL per (mode, seed) -> aggregation and figures. Stages are
// resumable through the manifest.
inline void run_pipeline(const ExperimentConfig& cfg, const std::string& out_dir_in,
                         std::ostream& progress) {
  const std::string out_dir = out_root(out_dir_in);
  fs::create_directories(out_dir);
  Manifest manifest(out_dir + "/manifest.json");
  if (cfg.maze_file.empty()) raise(ErrorKind::InvalidConfig, "pipeline needs maze.file");
  const MazeSpec maze = load_maze_file(cfg.maze_file, cfg.maze);
  const uint64_t maze_hash = file_hash(cfg.maze_file);

  auto stage = [&](const std::string& name, uint64_t input_hash,
                   const std::vector<std::string>& outputs, auto&& fn) {
    if (manifest.up_to_date(name, input_hash, outputs)) {
      progress << "[skip] " << name << "\n";
      return;
    }
    progress << "[run ] " << name << "\n" << std::flush;
    try {
      fn();
    } catch (const Error& e) {
      raise(e.kind(), "stage '" + name + "' failed: " + e.what());
    }
    manifest.record(name, input_hash, outputs);
  };

  // Stage: datasets.
  const std::string data_path = out_dir + "/task_agnostic.skld";
  const std::string demos_path = out_dir + "/demos.skld";
  const uint64_t datagen_hash =
      splitmix64(maze_hash ^ splitmix64(cfg.master_seed) ^
                 fnv1a64(std::to_string(cfg.datagen.n_traj) + "/" +
                         std::to_string(cfg.datagen.noise_sigma) + "/" +
                         std::to_string(cfg.demo.k) + "/" + std::to_string(cfg.demo.jitter)));
  stage("datagen", datagen_hash, {data_path, demos_path}, [&] {
    const Dataset data = generate_task_agnostic(maze, cfg.datagen, cfg.master_seed);
    save_dataset(data, data_path);
    const Dataset demos = generate_demos(maze, cfg.demo, cfg.master_seed);
    save_dataset(demos, demos_path);
  });

  // Stage: skill pretraining.
  const std::string skills_path = out_dir + "/skills.sknn";
  const uint64_t skills_hash =
      splitmix64(file_hash(data_path) ^ fnv1a64(std::to_string(cfg.skill_model.train_steps) + "/" +
                                                std::to_string(cfg.skill_model.beta) + "/" +
                                                std::to_string(cfg.skill_model.lstm_hidden)));
  stage("pretrain-skills", skills_hash, {skills_path}, [&] {
    const Dataset data = load_dataset(data_path);
    Rng rng = derive_rng(cfg.master_seed, "skills.init");
    SkillModel model = SkillModel::init(cfg.skill_model, data.state_dim, data.action_dim, rng);
    train_skill_model(model, data, cfg.master_seed);
    save_skill_model(model, skills_path);
  });

  // Stage: guidance pretraining.
  const std::string guidance_path = out_dir + "/guidance.sknn";
  const uint64_t guidance_hash = splitmix64(
      file_hash(skills_path) ^ file_hash(demos_path) ^
      fnv1a64(std::to_string(cfg.guidance.posterior_steps) + "/" +
              std::to_string(cfg.guidance.disc_steps)));
  stage("pretrain-guidance", guidance_hash, {guidance_path}, [&] {
    const Dataset data = load_dataset(data_path);
    const Dataset demos = load_dataset(demos_path);
    const SkillModel skills = load_skill_model(skills_path);
    Rng rng = derive_rng(cfg.master_seed, "guidance.init");
    Guidance g = Guidance::init(cfg.guidance, skills.obs_dim, skills.cfg.z_dim, rng);
    train_posterior(g, skills, demos, cfg.master_seed);
    train_discriminator(g, data, demos, cfg.master_seed);
    save_guidance(g, guidance_path);
  });

  // Stage: RL per (mode, seed).
  const uint64_t rl_base_hash = splitmix64(
      file_hash(skills_path) ^ file_hash(guidance_path) ^
      fnv1a64(std::to_string(cfg.rl.env_step_budget) + "/" + std::to_string(cfg.rl.batch) + "/" +
              std::to_string(cfg.rl.kappa)));
  for (const std::string& mode_str : cfg.rl_modes) {
    for (uint64_t seed : cfg.seeds) {
      const std::string run_dir = out_dir + "/runs/" + mode_str + "/seed" + std::to_string(seed);
      const std::string metrics_path = run_dir + "/metrics.csv";
      const std::string stage_name = "train/" + mode_str + "/seed" + std::to_string(seed);
      stage(stage_name, splitmix64(rl_base_hash ^ fnv1a64(mode_str) ^ seed),
            {metrics_path}, [&] {
              fs::create_directories(run_dir);
              RLConfig rl = cfg.rl;
              rl.mode = mode_from_name(mode_str);
              rl.seed = derive_seed(cfg.master_seed, "rl.run", seed);
              const Dataset data = load_dataset(data_path);
              const Dataset demos = load_dataset(demos_path);
              RLInputs in;
              in.maze = &maze;
              in.skills = load_skill_model(skills_path);
              in.guidance = load_guidance(guidance_path);
              in.demos = &demos;
              auto on_eval = [&](int env_steps, SkillSpaceTrainer& tr) {
                save_policy_net(tr.policy_, run_dir + "/policy_" +
                                                std::to_string(env_steps) + ".sknn");
                save_policy_net(tr.policy_, run_dir + "/policy.sknn");
              };
              auto [log, policy] = run_rl(rl, in, on_eval);
              log.save(metrics_path);
            });
    }
  }

  // Stage: aggregation + figures.
  std::vector<std::pair<std::string, AggregateCurves>> curves;
  for (const std::string& mode_str : cfg.rl_modes) {
    std::vector<MetricsLog> logs;
    for (uint64_t seed : cfg.seeds)
      logs.push_back(MetricsLog::load(out_dir + "/runs/" + mode_str + "/seed" +
                                      std::to_string(seed) + "/metrics.csv"));
    const AggregateCurves agg = aggregate_seeds(logs);
    fs::create_directories(out_dir + "/aggregates");
    save_aggregate(agg, out_dir + "/aggregates/" + mode_str + ".csv");
    curves.emplace_back(mode_str, agg);
  }
  size_t success_col = 0;
  {
    const auto& cols = curves.front().second.columns;
    for (size_t i = 0; i < cols.size(); ++i)
      if (cols[i] == "success_rate") success_col = i;
  }
  fs::create_directories(out_dir + "/figures");
  emit_learning_curves(curves, success_col, "success_rate", out_dir + "/figures/learning_curves");
  progress << "[done] pipeline artifacts in " << out_dir << "\n";
}

}  // namespace skild
