#pragma once

#include <string>
#include <utility>
#include <vector>

#include "borrowdet/evalrep.hpp"

namespace borrowdet::runconfig {

// Union of the module configurations plus resource paths; every model
// default matches the published hyperparameter table.
struct RunConfig {
  evalrep::AblationSetup setup;  // encoder, trainer, augmentation, detection

  std::string wordlist_path;
  std::string features_path;
  std::string asjp_path;
  std::string pmi_path;
  std::string colex_path;
  std::string checkpoint_path;
  std::string out_dir = "out";
  std::vector<std::string> donors;  // donor-fixed candidate languages

  double colex_threshold = 0.05;
  int runs = 1;
  bool skip_unknown_symbols = false;
};

// One `key=value` pair from a config file or override list; unknown keys are
// a validation error naming the key. `seed` sets the training and detection
// seeds together; `threshold=auto` clears a manual threshold.
void apply_config_entry(RunConfig& config, const std::string& key, const std::string& value);

// Flat UTF-8 `key=value` file; blank lines and '#' comments ignored.
void load_config_file(RunConfig& config, const std::string& path);

// Ordered key=value rendering of every field (manifests, debugging).
std::vector<std::pair<std::string, std::string>> config_entries(const RunConfig& config);

// Run manifest: tool version, command line, timestamp, full configuration,
// content checksums of every referenced resource file, and the fixed
// implementation choices that affect comparability of runs.
void write_manifest(const RunConfig& config, const std::string& command,
                    const std::vector<std::pair<std::string, std::string>>& outputs,
                    const std::string& path);

}  // namespace borrowdet::runconfig
