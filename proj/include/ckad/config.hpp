#pragma once

#include "ckad/continual.hpp"
#include "ckad/model.hpp"
#include "ckad/synthgen.hpp"

#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace ckad {

inline constexpr const char* kToolVersion = "0.1.0";

/// Every tunable of a run. Keys in files and overrides use the field names.
struct RunConfig {
  // data
  int tasks = 3;
  int categories_per_task = 2;
  int train_per_category = 20;
  int normal_test = 10;
  int anomalous_test = 10;
  Eigen::Index points = 8192;
  double jitter = 0.002;
  bool pose_randomization = false;
  double defect_amplitude = 0.2;
  double defect_extent = 0.1;
  // model
  Eigen::Index n = 256;
  Eigen::Index g = 32;
  Eigen::Index d = 64;
  Eigen::Index m = 10;
  Eigen::Index blocks = 4;
  Eigen::Index embed_hidden = 128;
  double alpha = 0.7;
  double beta = 0.7;
  double eta = 10.0;
  RadiusMode radius_mode = RadiusMode::per_center;
  double phi_scale = 0.5;
  bool use_kal = true;
  bool use_kaa = true;
  bool kaa_normalized = false;
  // perturbation
  double epsilon = 0.1;
  double lambda_rpp = 1.0;
  int ascent_steps = 1;
  double step_size = 0.5;
  // optimization
  int epochs = 200;
  int batch_size = 4;
  double lr = 1e-4;
  double lr_low = 1e-5;
  double lr_drop_fraction = 0.8;
  double weight_decay = 0.01;
  double token_noise = 0.0;
  bool train_embedder = false;
  // run
  std::uint64_t seed = 0;
  int threads = 1;
  bool deterministic = true;
  std::string data_dir = "data";
  std::string out_dir = "runs";

  void validate() const;
  /// Applies one "key = value" assignment. Throws ConfigError.
  void set(const std::string& key, const std::string& value);
  /// Flat key/value view with every field, in declaration order.
  std::vector<std::pair<std::string, std::string>> entries() const;
  std::string to_text() const;

  ModelHyper hyper() const;
  TrainConfig train() const;
  ProtocolConfig protocol() const;
  std::vector<CategorySpec> categories() const;
  std::vector<std::vector<std::size_t>> partition() const;
  StreamSizes sizes() const;
  std::vector<DefectSpec> defects() const;
  TaskStream build_stream() const;
  int effective_threads() const { return deterministic ? 1 : threads; }
};

/// Parses flat "key = value" text; '#' starts a comment, string values may be
/// double-quoted. Unknown keys and malformed lines raise ConfigError.
RunConfig parse_config(const std::string& text, RunConfig base = {});
RunConfig load_config(const std::filesystem::path& path, RunConfig base = {});

/// Writes config.toml (effective config plus tool version) into `dir`.
void echo_config(const RunConfig& cfg, const std::filesystem::path& dir);

}  // namespace ckad
