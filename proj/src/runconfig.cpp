#include "borrowdet/runconfig.hpp"

#include <ctime>
#include <filesystem>
#include <sstream>

#include "borrowdet/common.hpp"

namespace borrowdet::runconfig {

namespace {

std::string trim(const std::string& text) {
  std::size_t begin = text.find_first_not_of(" \t\r");
  if (begin == std::string::npos) return "";
  std::size_t end = text.find_last_not_of(" \t\r");
  return text.substr(begin, end - begin + 1);
}

bool parse_bool(const std::string& value, const std::string& key) {
  if (value == "true") return true;
  if (value == "false") return false;
  throw ValidationError("config " + key + ": expected true or false, got '" + value + "'");
}

std::string hex64(std::uint64_t v) {
  std::ostringstream out;
  out << std::hex << v;
  return out.str();
}

}  // namespace

void apply_config_entry(RunConfig& config, const std::string& key, const std::string& value) {
  if (key == "wordlist") {
    config.wordlist_path = value;
  } else if (key == "features") {
    config.features_path = value;
  } else if (key == "asjp_map") {
    config.asjp_path = value;
  } else if (key == "pmi") {
    config.pmi_path = value;
  } else if (key == "colex") {
    config.colex_path = value;
  } else if (key == "checkpoint") {
    config.checkpoint_path = value;
  } else if (key == "out") {
    config.out_dir = value;
  } else if (key == "donor") {
    config.donors.clear();
    for (const auto& name : split(value, ',')) {
      if (!name.empty()) config.donors.push_back(name);
    }
  } else if (key == "mode") {
    config.setup.detect.mode = detector::candidate_mode_from_name(value);
  } else if (key == "method") {
    config.setup.detect.method = detector::method_from_label(value);
  } else if (key == "threshold") {
    if (value == "auto") {
      config.setup.detect.manual_threshold.reset();
    } else {
      config.setup.detect.manual_threshold = parse_double(value, "config threshold");
    }
  } else if (key == "per_word_max") {
    config.setup.detect.per_word_max = parse_bool(value, key);
  } else if (key == "colex_threshold") {
    config.colex_threshold = parse_double(value, "config colex_threshold");
  } else if (key == "seed") {
    const auto seed = static_cast<std::uint64_t>(parse_long(value, "config seed"));
    config.setup.train.seed = seed;
    config.setup.detect.seed = seed;
  } else if (key == "runs") {
    config.runs = static_cast<int>(parse_long(value, "config runs"));
  } else if (key == "workers") {
    config.setup.detect.workers = static_cast<int>(parse_long(value, "config workers"));
  } else if (key == "skip_unknown_symbols") {
    config.skip_unknown_symbols = parse_bool(value, key);
  } else {
    try {
      evalrep::apply_override(config.setup, key, value);
    } catch (const ValidationError&) {
      throw ValidationError("unknown config key '" + key + "'");
    }
  }
}

void load_config_file(RunConfig& config, const std::string& path) {
  const auto lines = read_lines(path);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const std::string line = trim(lines[i]);
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos || eq == 0) {
      throw ValidationError(path + ":" + std::to_string(i + 1) +
                            ": expected key=value, got '" + line + "'");
    }
    apply_config_entry(config, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
}

std::vector<std::pair<std::string, std::string>> config_entries(const RunConfig& config) {
  std::vector<std::pair<std::string, std::string>> entries;
  const auto add = [&](const std::string& key, const std::string& value) {
    entries.emplace_back(key, value);
  };
  add("wordlist", config.wordlist_path);
  add("features", config.features_path);
  add("asjp_map", config.asjp_path);
  add("pmi", config.pmi_path);
  add("colex", config.colex_path);
  add("checkpoint", config.checkpoint_path);
  add("out", config.out_dir);
  add("donor", join(config.donors, ','));
  add("mode", detector::candidate_mode_name(config.setup.detect.mode));
  add("method", detector::method_label(config.setup.detect.method));
  add("cosine_weight", format_double(config.setup.detect.cosine_weight));
  add("cross_concept_penalty", format_double(config.setup.detect.cross_concept_penalty));
  add("threshold", config.setup.detect.manual_threshold
                       ? format_double(*config.setup.detect.manual_threshold)
                       : "auto");
  add("per_word_max", config.setup.detect.per_word_max ? "true" : "false");
  add("colex_threshold", format_double(config.colex_threshold));
  add("seed", std::to_string(config.setup.train.seed));
  add("runs", std::to_string(config.runs));
  add("workers", std::to_string(config.setup.detect.workers));
  add("skip_unknown_symbols", config.skip_unknown_symbols ? "true" : "false");
  add("hidden_dim", std::to_string(config.setup.encoder.hidden_dim));
  add("n_layers", std::to_string(config.setup.encoder.n_layers));
  add("n_heads", std::to_string(config.setup.encoder.n_heads));
  add("ff_dim", std::to_string(config.setup.encoder.ff_dim));
  add("feature_dropout", format_double(config.setup.encoder.feature_dropout));
  add("attention_dropout", format_double(config.setup.encoder.attention_dropout));
  add("projection_head", config.setup.encoder.use_projection_head ? "true" : "false");
  add("encoding", config.setup.encoder.encoding_mode == encoder::EncodingMode::kFeatureVectors
                      ? "features"
                      : "one_hot_ipa");
  add("temperature", format_double(config.setup.train.temperature));
  add("learning_rate", format_double(config.setup.train.learning_rate));
  add("batch_size", std::to_string(config.setup.train.batch_size));
  add("epochs", std::to_string(config.setup.train.epochs));
  add("sampler", config.setup.train.sampler == trainer::Sampler::kConceptBalanced
                     ? "concept_balanced"
                     : "random");
  add("noise_prob", format_double(config.setup.augment.noise_prob));
  add("noise_sigma", format_double(config.setup.augment.noise_sigma));
  add("duplication_prob", format_double(config.setup.augment.duplication_prob));
  add("swap_prob", format_double(config.setup.augment.swap_prob));
  add("deletion_prob", format_double(config.setup.augment.deletion_prob));
  return entries;
}

void write_manifest(const RunConfig& config, const std::string& command,
                    const std::vector<std::pair<std::string, std::string>>& outputs,
                    const std::string& path) {
  std::ostringstream out;
  out << "tool_version=" << kVersion << '\n';
  out << "command=" << command << '\n';
  const std::time_t now = std::time(nullptr);
  char stamp[32];
  std::strftime(stamp, sizeof stamp, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
  out << "timestamp=" << stamp << '\n';
  for (const auto& [key, value] : config_entries(config)) {
    out << "config." << key << '=' << value << '\n';
  }
  const std::pair<std::string, std::string> resources[] = {
      {"wordlist", config.wordlist_path}, {"features", config.features_path},
      {"asjp_map", config.asjp_path},     {"pmi", config.pmi_path},
      {"colex", config.colex_path},       {"checkpoint", config.checkpoint_path},
  };
  for (const auto& [name, file] : resources) {
    if (!file.empty() && std::filesystem::exists(file)) {
      out << "checksum." << name << '=' << hex64(fnv1a64_file(file)) << '\n';
    }
  }
  for (const auto& [name, file] : outputs) {
    out << "output." << name << '=' << file << '\n';
  }
  out << "decision.threshold_comparison=strict_greater\n";
  out << "decision.cross_concept_penalty_target=combined_score\n";
  out << "decision.tie_break=smallest_candidate_id\n";
  out << "decision.pmi_scaling=min_max_over_run\n";
  write_file(path, out.str());
}

}  // namespace borrowdet::runconfig
