#include <filesystem>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <tuple>
#include <vector>

#include "CLI11.hpp"
#include "borrowdet/common.hpp"
#include "borrowdet/corpus.hpp"
#include "borrowdet/detector.hpp"
#include "borrowdet/encoder.hpp"
#include "borrowdet/evalrep.hpp"
#include "borrowdet/gmmthresh.hpp"
#include "borrowdet/phon.hpp"
#include "borrowdet/pmialign.hpp"
#include "borrowdet/runconfig.hpp"
#include "borrowdet/svgplot.hpp"
#include "borrowdet/trainer.hpp"

namespace bd = borrowdet;
namespace fs = std::filesystem;

namespace {

void require_file(const std::string& path, const std::string& flag) {
  if (path.empty()) throw bd::ValidationError("missing required --" + flag);
  if (!fs::exists(path)) {
    throw bd::ValidationError("--" + flag + ": file not found: " + path);
  }
}

struct Loaded {
  bd::phon::FeatureTable features;
  bd::phon::AsjpMapping mapping;
  bd::corpus::Wordlist wordlist;
  std::optional<bd::pmialign::PmiMatrix> pmi;
  std::optional<bd::corpus::ColexNetwork> colex;

  const bd::pmialign::PmiMatrix* pmi_ptr() const { return pmi ? &*pmi : nullptr; }
  const bd::corpus::ColexNetwork* colex_ptr() const { return colex ? &*colex : nullptr; }
};

Loaded load_resources(const bd::runconfig::RunConfig& cfg, bool need_pmi) {
  require_file(cfg.wordlist_path, "wordlist");
  require_file(cfg.features_path, "features");
  require_file(cfg.asjp_path, "asjp-map");

  Loaded loaded;
  loaded.features = bd::phon::load_feature_table(cfg.features_path);
  loaded.mapping = bd::phon::load_asjp_mapping(cfg.asjp_path);

  bd::corpus::LoadOptions options;
  options.default_role = bd::corpus::LanguageRole::kUnrestricted;
  for (const auto& donor : cfg.donors) {
    options.roles[donor] = bd::corpus::LanguageRole::kDonor;
  }
  std::vector<std::string> skipped;
  options.skip_unknown_symbols = cfg.skip_unknown_symbols;
  options.skipped_log = &skipped;
  loaded.wordlist =
      bd::corpus::load_wordlist(cfg.wordlist_path, loaded.features, loaded.mapping, options);
  for (const auto& message : skipped) std::cerr << "warning: " << message << '\n';

  if (need_pmi) require_file(cfg.pmi_path, "pmi");
  if (!cfg.pmi_path.empty()) {
    require_file(cfg.pmi_path, "pmi");
    loaded.pmi = bd::pmialign::load_pmi(cfg.pmi_path);
  }
  if (!cfg.colex_path.empty()) {
    require_file(cfg.colex_path, "colex");
    loaded.colex = bd::corpus::load_colex(cfg.colex_path, cfg.colex_threshold);
  }
  return loaded;
}

void check_donor_mode(const bd::runconfig::RunConfig& cfg) {
  if (cfg.setup.detect.mode == bd::detector::CandidateMode::kDonorFixed &&
      cfg.donors.empty()) {
    throw bd::ValidationError("donor_fixed mode requires --donor");
  }
}

struct Model {
  bd::encoder::Params<float> params;
  bd::encoder::InputEncoder input_encoder;
};

Model model_from_checkpoint(const std::string& path) {
  auto loaded = bd::encoder::load_checkpoint(path);
  Model model{std::move(loaded.params), {}};
  if (model.params.config.encoding_mode == bd::encoder::EncodingMode::kOneHotIpa) {
    model.input_encoder = bd::encoder::InputEncoder::one_hot(loaded.inventory);
  } else {
    model.input_encoder = bd::encoder::InputEncoder::feature_vectors();
  }
  return model;
}

std::string out_path(const bd::runconfig::RunConfig& cfg, const std::string& name) {
  fs::create_directories(cfg.out_dir);
  return (fs::path(cfg.out_dir) / name).string();
}

std::string supervision_for(bd::detector::Method method) {
  switch (method) {
    case bd::detector::Method::kCombined:
    case bd::detector::Method::kCosineOnly: return "self-supervised";
    case bd::detector::Method::kPmiOnly:
    case bd::detector::Method::kNed: return "unsupervised";
  }
  return "unsupervised";
}

int cmd_train(bd::runconfig::RunConfig& cfg) {
  const auto loaded = load_resources(cfg, /*need_pmi=*/false);
  cfg.setup.train.validate();
  cfg.setup.augment.validate();

  const auto result = bd::trainer::train(loaded.wordlist, cfg.setup.encoder, cfg.setup.train,
                                         cfg.setup.augment);

  auto params = result.params;
  const std::string checkpoint = out_path(cfg, "checkpoint.bin");
  const std::string log = out_path(cfg, "train_log.tsv");
  bd::encoder::save_checkpoint(checkpoint, params, cfg.setup.train.seed,
                               result.input_encoder.inventory);
  bd::trainer::write_train_log(result.log, log);
  bd::runconfig::write_manifest(cfg, "train",
                                {{"checkpoint", checkpoint}, {"train_log", log}},
                                out_path(cfg, "train_manifest.txt"));

  double final_loss = 0.0;
  if (!result.log.empty()) final_loss = result.log.back().loss;
  std::cout << "trained " << bd::encoder::param_count(params.config) << " parameters over "
            << cfg.setup.train.epochs << " epochs; final batch loss "
            << bd::format_double(final_loss) << '\n';
  std::cout << "checkpoint: " << checkpoint << '\n';
  return 0;
}

struct DetectInputs {
  Loaded loaded;
  std::optional<Model> model;
};

DetectInputs prepare_detect_inputs(bd::runconfig::RunConfig& cfg) {
  check_donor_mode(cfg);
  const auto& opts = cfg.setup.detect;
  const double w_eff = bd::detector::effective_cosine_weight(opts.method, opts.cosine_weight);
  const bool need_model = w_eff > 0.0;
  const bool need_pmi = opts.method != bd::detector::Method::kNed && w_eff < 1.0;

  DetectInputs inputs{load_resources(cfg, need_pmi), std::nullopt};
  if (need_model) {
    require_file(cfg.checkpoint_path, "checkpoint");
    inputs.model = model_from_checkpoint(cfg.checkpoint_path);
  }
  return inputs;
}

int cmd_detect(bd::runconfig::RunConfig& cfg, bool dump_similarities) {
  auto inputs = prepare_detect_inputs(cfg);
  const auto* params = inputs.model ? &inputs.model->params : nullptr;
  const auto* input_encoder = inputs.model ? &inputs.model->input_encoder : nullptr;

  const auto result =
      bd::detector::detect(inputs.loaded.wordlist, params, input_encoder,
                           inputs.loaded.pmi_ptr(), inputs.loaded.colex_ptr(),
                           cfg.setup.detect);

  const std::string predictions = out_path(cfg, "predictions.tsv");
  const std::string thresholds = out_path(cfg, "thresholds.tsv");
  bd::detector::write_predictions(result.predictions, predictions);
  bd::gmmthresh::write_threshold_report(result.thresholds, thresholds);
  std::vector<std::pair<std::string, std::string>> outputs = {
      {"predictions", predictions}, {"thresholds", thresholds}};
  if (dump_similarities) {
    const std::string similarities = out_path(cfg, "similarities.tsv");
    bd::detector::write_similarities(result.records, similarities);
    outputs.emplace_back("similarities", similarities);
  }
  bd::runconfig::write_manifest(cfg, "detect", outputs, out_path(cfg, "detect_manifest.txt"));

  long positive = 0;
  for (const auto& p : result.predictions) positive += p.predicted_borrowed ? 1 : 0;
  std::cout << "scored " << result.records.size() << " candidate pairs for "
            << result.predictions.size() << " query forms; " << positive
            << " predicted borrowings\n";
  std::cout << "predictions: " << predictions << '\n';
  return 0;
}

int cmd_evaluate(bd::runconfig::RunConfig& cfg, const std::string& protocol) {
  if (protocol != "donor_fixed" && protocol != "all_pairs") {
    throw bd::ValidationError("unknown protocol '" + protocol +
                              "' (expected donor_fixed or all_pairs)");
  }
  check_donor_mode(cfg);
  const auto& opts = cfg.setup.detect;
  const double w_eff = bd::detector::effective_cosine_weight(opts.method, opts.cosine_weight);
  const bool need_model = w_eff > 0.0;
  const bool need_pmi = opts.method != bd::detector::Method::kNed && w_eff < 1.0;
  auto loaded = load_resources(cfg, need_pmi);

  const std::string method = bd::detector::method_label(opts.method);
  const std::string supervision = supervision_for(opts.method);
  const int runs = need_model && cfg.checkpoint_path.empty() ? cfg.runs : 1;
  if (runs < 1) throw bd::ValidationError("--runs must be at least 1");

  std::vector<bd::evalrep::EvalReport> reports;
  for (int run = 0; run < runs; ++run) {
    std::optional<Model> model;
    bd::detector::DetectOptions detect_options = cfg.setup.detect;
    if (need_model) {
      if (!cfg.checkpoint_path.empty()) {
        require_file(cfg.checkpoint_path, "checkpoint");
        model = model_from_checkpoint(cfg.checkpoint_path);
      } else {
        auto train_config = cfg.setup.train;
        train_config.seed = cfg.setup.train.seed + static_cast<std::uint64_t>(run);
        detect_options.seed = train_config.seed;
        auto trained = bd::trainer::train(loaded.wordlist, cfg.setup.encoder, train_config,
                                          cfg.setup.augment);
        model = Model{std::move(trained.params), std::move(trained.input_encoder)};
      }
    }
    const auto* params = model ? &model->params : nullptr;
    const auto* input_encoder = model ? &model->input_encoder : nullptr;
    const auto result = bd::detector::detect(loaded.wordlist, params, input_encoder,
                                             loaded.pmi_ptr(), loaded.colex_ptr(),
                                             detect_options);
    if (protocol == "donor_fixed") {
      reports.push_back(bd::evalrep::evaluate_donor_fixed(loaded.wordlist,
                                                          result.predictions, method,
                                                          supervision));
    } else {
      const auto gold = bd::evalrep::derive_pair_gold(loaded.wordlist, result.records);
      double threshold;
      if (detect_options.manual_threshold) {
        threshold = *detect_options.manual_threshold;
      } else {
        std::vector<double> scores;
        scores.reserve(result.records.size());
        for (const auto& rec : result.records) scores.push_back(rec.combined);
        threshold = bd::gmmthresh::auto_threshold(scores, detect_options.seed).value;
      }
      const auto counts = bd::evalrep::evaluate_all_pairs(result.records, gold, threshold);
      bd::evalrep::EvalReport report;
      report.method = method;
      report.supervision = supervision;
      report.seed = detect_options.seed;
      report.rows.push_back(
          bd::evalrep::EvalRow{"ALL", counts, bd::evalrep::metrics(counts)});
      reports.push_back(std::move(report));
    }
  }

  const auto aggregated = bd::evalrep::aggregate_runs(reports);
  const std::string report_path = out_path(cfg, "report.tsv");
  bd::evalrep::write_report(aggregated, report_path);
  bd::runconfig::write_manifest(cfg, "evaluate", {{"report", report_path}},
                                out_path(cfg, "evaluate_manifest.txt"));

  for (const auto& row : aggregated.rows) {
    if (row.language == "ALL") {
      std::cout << method << " (" << protocol << ", " << runs << " run"
                << (runs == 1 ? "" : "s") << "): F1 " << bd::format_double(row.mean.f1)
                << " +/- " << bd::format_double(row.stddev.f1) << '\n';
    }
  }
  std::cout << "report: " << report_path << '\n';
  return 0;
}

int cmd_sweep(bd::runconfig::RunConfig& cfg, const std::string& axis_name,
              std::string grid_csv, int grid_points) {
  const auto axis = bd::evalrep::axis_from_name(axis_name);
  std::vector<double> grid;
  if (!grid_csv.empty()) {
    for (const auto& item : bd::split(grid_csv, ',')) {
      grid.push_back(bd::parse_double(item, "--grid"));
    }
  } else {
    if (grid_points < 2) throw bd::ValidationError("--grid-points must be at least 2");
    const double hi = 1.0;
    for (int i = 0; i < grid_points; ++i) {
      grid.push_back(hi * i / (grid_points - 1));
    }
  }

  auto inputs = prepare_detect_inputs(cfg);
  const auto* params = inputs.model ? &inputs.model->params : nullptr;
  const auto* input_encoder = inputs.model ? &inputs.model->input_encoder : nullptr;
  const auto base = bd::detector::detect(inputs.loaded.wordlist, params, input_encoder,
                                         inputs.loaded.pmi_ptr(), inputs.loaded.colex_ptr(),
                                         cfg.setup.detect);
  const auto rows =
      bd::evalrep::sweep(inputs.loaded.wordlist, base.records, axis, grid, cfg.setup.detect);

  const std::string table = out_path(cfg, "sweep.tsv");
  bd::evalrep::write_sweep_table(axis, rows, table);
  bd::runconfig::write_manifest(cfg, "sweep", {{"sweep", table}},
                                out_path(cfg, "sweep_manifest.txt"));
  std::cout << "swept " << rows.size() << " grid points over " << axis_name << '\n';
  std::cout << "table: " << table << '\n';
  return 0;
}

int cmd_ablate(bd::runconfig::RunConfig& cfg, const std::string& grid_file) {
  check_donor_mode(cfg);
  require_file(grid_file, "grid-file");
  auto loaded = load_resources(cfg, /*need_pmi=*/true);
  const auto grid = bd::evalrep::load_ablation_grid(grid_file);
  const auto rows = bd::evalrep::ablate(loaded.wordlist, cfg.setup, grid, loaded.pmi_ptr(),
                                        loaded.colex_ptr(), cfg.runs);
  const std::string table = out_path(cfg, "ablation.tsv");
  bd::evalrep::write_ablation_table(rows, table);
  bd::runconfig::write_manifest(cfg, "ablate", {{"ablation", table}},
                                out_path(cfg, "ablate_manifest.txt"));
  std::cout << "ablated " << rows.size() << " settings x " << cfg.runs << " runs\n";
  std::cout << "table: " << table << '\n';
  return 0;
}

int cmd_explain(bd::runconfig::RunConfig& cfg, const std::string& query_id,
                const std::string& candidate_id) {
  auto inputs = prepare_detect_inputs(cfg);
  const auto* params = inputs.model ? &inputs.model->params : nullptr;
  const auto* input_encoder = inputs.model ? &inputs.model->input_encoder : nullptr;
  const auto text =
      bd::detector::explain(inputs.loaded.wordlist, params, input_encoder,
                            inputs.loaded.pmi_ptr(), inputs.loaded.colex_ptr(),
                            cfg.setup.detect, query_id, candidate_id);
  std::cout << text;
  const std::string file = out_path(cfg, "explain.txt");
  bd::write_file(file, text);
  bd::runconfig::write_manifest(cfg, "explain", {{"explain", file}},
                                out_path(cfg, "explain_manifest.txt"));
  return 0;
}

std::vector<double> read_scores(const std::string& path) {
  const auto lines = bd::read_lines(path);
  std::vector<double> scores;
  int combined_column = -1;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const auto& line = lines[i];
    if (line.empty() || line[0] == '#') continue;
    const auto fields = bd::split(line, '\t');
    if (i == 0 && !fields.empty() && fields[0] == "QUERY_ID") {
      for (std::size_t f = 0; f < fields.size(); ++f) {
        if (fields[f] == "COMBINED") combined_column = static_cast<int>(f);
      }
      if (combined_column < 0) {
        throw bd::ValidationError(path + ": similarity dump has no COMBINED column");
      }
      continue;
    }
    if (combined_column >= 0) {
      if (static_cast<std::size_t>(combined_column) >= fields.size()) {
        throw bd::ValidationError(path + ":" + std::to_string(i + 1) + ": short row");
      }
      scores.push_back(
          bd::parse_double(fields[static_cast<std::size_t>(combined_column)], "score"));
    } else {
      scores.push_back(bd::parse_double(fields[0], "score"));
    }
  }
  if (scores.empty()) throw bd::ValidationError(path + ": no scores to plot");
  return scores;
}

int cmd_plot(bd::runconfig::RunConfig& cfg, const std::string& scores_path,
             const std::string& title) {
  require_file(scores_path, "scores");
  const auto scores = read_scores(scores_path);

  bd::gmmthresh::ThresholdDecision decision;
  if (cfg.setup.detect.manual_threshold) {
    decision.value = *cfg.setup.detect.manual_threshold;
    decision.method = bd::gmmthresh::ThresholdMethod::kManual;
  } else {
    decision = bd::gmmthresh::auto_threshold(scores, cfg.setup.detect.seed);
  }

  bd::svgplot::PlotOptions options;
  options.title = title.empty() ? "similarity scores (" +
                                      bd::detector::method_label(cfg.setup.detect.method) + ")"
                                : title;
  const auto svg = bd::svgplot::render_histogram(scores, decision, options);
  const std::string file = out_path(cfg, "plot.svg");
  bd::write_file(file, svg);
  bd::runconfig::write_manifest(cfg, "plot", {{"plot", file}},
                                out_path(cfg, "plot_manifest.txt"));
  std::cout << "threshold " << bd::format_double(decision.value) << " ("
            << bd::gmmthresh::method_name(decision.method) << ")\n";
  std::cout << "plot: " << file << '\n';
  return 0;
}

// Shared-flag plumbing: every flag is stored as text and applied to the
// RunConfig only when the user actually passed it, so precedence stays
// defaults < config file < command line.
struct FlagSet {
  std::vector<std::tuple<std::string, CLI::Option*, std::shared_ptr<std::string>>> entries;

  void add(CLI::App* cmd, const std::string& flag, const std::string& key,
           const std::string& default_value, const std::string& help) {
    auto storage = std::make_shared<std::string>();
    auto* option = cmd->add_option(flag, *storage, help);
    option->default_str(default_value);
    entries.emplace_back(key, option, storage);
  }

  void add_bool(CLI::App* cmd, const std::string& flag, const std::string& key,
                const std::string& help) {
    auto storage = std::make_shared<std::string>("true");
    auto* option = cmd->add_flag(flag, help);
    entries.emplace_back(key, option, storage);
  }

  void apply(bd::runconfig::RunConfig& cfg) const {
    for (const auto& [key, option, storage] : entries) {
      if (option->count() > 0) bd::runconfig::apply_config_entry(cfg, key, *storage);
    }
  }
};

void add_shared_flags(CLI::App* cmd, FlagSet& flags) {
  flags.add(cmd, "--wordlist", "wordlist", "", "wordlist TSV (ID, LANGUAGE, FAMILY, CONCEPT, FORM, ...)");
  flags.add(cmd, "--features", "features", "", "phonetic feature table TSV");
  flags.add(cmd, "--asjp-map", "asjp_map", "", "IPA-to-ASJP conversion table TSV");
  flags.add(cmd, "--pmi", "pmi", "", "PMI correspondence matrix TSV");
  flags.add(cmd, "--colex", "colex", "", "colexification network TSV (optional)");
  flags.add(cmd, "--donor", "donor", "", "donor language name(s), comma separated");
  flags.add(cmd, "--mode", "mode", "donor_fixed", "candidate mode: donor_fixed or cross_family");
  flags.add(cmd, "--method", "method", "combined", "scoring method: combined, cosine, pmi, or ned");
  flags.add(cmd, "--cosine-weight", "cosine_weight", "0.25", "weight of the cosine term in the combined score");
  flags.add(cmd, "--threshold", "threshold", "auto", "manual decision threshold, or 'auto'");
  flags.add(cmd, "--cross-concept-penalty", "cross_concept_penalty", "0.1", "penalty for colexification-extended candidates");
  flags.add(cmd, "--colex-threshold", "colex_threshold", "0.05", "minimum colexification proportion");
  flags.add(cmd, "--seed", "seed", "42", "seed for training, augmentation, and threshold fitting");
  flags.add(cmd, "--runs", "runs", "1", "independent runs to aggregate");
  flags.add(cmd, "--workers", "workers", "1", "worker threads for scoring");
  flags.add(cmd, "--out", "out", "out", "output directory");
  flags.add_bool(cmd, "--per-word-max", "per_word_max", "fit thresholds on per-word best scores");
  flags.add_bool(cmd, "--skip-unknown-symbols", "skip_unknown_symbols", "skip wordlist rows with unknown symbols instead of failing");
  cmd->add_option("--config", "flat key=value configuration file (applied before flags)")
      ->check(CLI::ExistingFile);
}

void add_train_flags(CLI::App* cmd, FlagSet& flags) {
  flags.add(cmd, "--hidden-dim", "hidden_dim", "256", "encoder hidden width");
  flags.add(cmd, "--n-layers", "n_layers", "1", "transformer layers");
  flags.add(cmd, "--n-heads", "n_heads", "4", "attention heads");
  flags.add(cmd, "--ff-dim", "ff_dim", "1024", "feed-forward width");
  flags.add(cmd, "--feature-dropout", "feature_dropout", "0.1", "input feature dropout probability");
  flags.add(cmd, "--attention-dropout", "attention_dropout", "0.1", "attention dropout probability");
  flags.add(cmd, "--projection-head", "projection_head", "true", "train through a projection head (true/false)");
  flags.add(cmd, "--encoding", "encoding", "features", "input encoding: features or one_hot_ipa");
  flags.add(cmd, "--temperature", "temperature", "0.05", "contrastive loss temperature");
  flags.add(cmd, "--learning-rate", "learning_rate", "0.001", "AdamW learning rate");
  flags.add(cmd, "--batch-size", "batch_size", "128", "training batch size");
  flags.add(cmd, "--epochs", "epochs", "4", "training epochs");
  flags.add(cmd, "--sampler", "sampler", "concept_balanced", "batch sampler: concept_balanced or random");
  flags.add(cmd, "--noise-prob", "noise_prob", "0.5", "per-view Gaussian noise probability");
  flags.add(cmd, "--noise-sigma", "noise_sigma", "0.1", "Gaussian noise standard deviation");
  flags.add(cmd, "--duplication-prob", "duplication_prob", "0.1", "segment duplication probability");
  flags.add(cmd, "--swap-prob", "swap_prob", "0", "adjacent segment swap probability");
  flags.add(cmd, "--deletion-prob", "deletion_prob", "0", "segment deletion probability");
}

}  // namespace

int main(int argc, char** argv) {
  bd::runconfig::RunConfig cfg;

  try {
    // config file first, so command-line flags override it
    for (int i = 1; i < argc; ++i) {
      const std::string arg = argv[i];
      std::string path;
      if (arg == "--config" && i + 1 < argc) {
        path = argv[i + 1];
      } else if (arg.rfind("--config=", 0) == 0) {
        path = arg.substr(9);
      }
      if (!path.empty()) {
        if (!fs::exists(path)) throw bd::ValidationError("--config: file not found: " + path);
        bd::runconfig::load_config_file(cfg, path);
      }
    }

    CLI::App app{"self-supervised lexical borrowing detection"};
    app.require_subcommand(1);

    std::map<const CLI::App*, std::shared_ptr<FlagSet>> flag_sets;
    const auto make_cmd = [&](const std::string& name, const std::string& help) {
      CLI::App* cmd = app.add_subcommand(name, help);
      auto flags = std::make_shared<FlagSet>();
      add_shared_flags(cmd, *flags);
      flag_sets[cmd] = flags;
      return cmd;
    };

    CLI::App* train = make_cmd("train", "train the contrastive encoder and write a checkpoint");
    add_train_flags(train, *flag_sets[train]);

    CLI::App* detect = make_cmd("detect", "classify borrowings and write predictions");
    flag_sets[detect]->add(detect, "--checkpoint", "checkpoint", "", "trained model checkpoint");
    bool dump_similarities = false;
    detect->add_flag("--dump-similarities", dump_similarities,
                     "also write every candidate-pair similarity record");

    CLI::App* evaluate = make_cmd("evaluate", "run detection against gold annotations");
    flag_sets[evaluate]->add(evaluate, "--checkpoint", "checkpoint", "",
                             "evaluate this checkpoint instead of training per run");
    add_train_flags(evaluate, *flag_sets[evaluate]);
    std::string protocol = "donor_fixed";
    evaluate->add_option("--protocol", protocol,
                         "evaluation protocol: donor_fixed or all_pairs")
        ->default_str("donor_fixed");

    CLI::App* sweep = make_cmd("sweep", "evaluate over a cosine-weight or threshold grid");
    flag_sets[sweep]->add(sweep, "--checkpoint", "checkpoint", "", "trained model checkpoint");
    std::string axis = "global_threshold";
    std::string grid_csv;
    int grid_points = 20;
    sweep->add_option("--axis", axis, "sweep axis: cosine_weight or global_threshold")
        ->default_str("global_threshold");
    sweep->add_option("--grid", grid_csv, "explicit comma-separated grid values");
    sweep->add_option("--grid-points", grid_points, "evenly spaced grid size in [0, 1]")
        ->default_str("20");

    CLI::App* ablate = make_cmd("ablate", "train and evaluate a grid of configuration overrides");
    add_train_flags(ablate, *flag_sets[ablate]);
    std::string grid_file = "data/ablation_grid.tsv";
    ablate->add_option("--grid-file", grid_file, "ablation grid TSV (LABEL, OVERRIDES)")
        ->default_str("data/ablation_grid.tsv");

    CLI::App* explain = make_cmd("explain", "per-pair diagnostic: alignment, scores, margin");
    flag_sets[explain]->add(explain, "--checkpoint", "checkpoint", "", "trained model checkpoint");
    std::string query_id, candidate_id;
    explain->add_option("query", query_id, "query form id")->required();
    explain->add_option("candidate", candidate_id, "candidate form id")->required();

    CLI::App* plot = make_cmd("plot", "SVG histogram of similarity scores with the fitted threshold");
    std::string scores_path, title;
    plot->add_option("--scores", scores_path,
                     "similarity dump TSV or one score per line")
        ->required();
    plot->add_option("--title", title, "plot title");

    try {
      app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
      return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
      return app.exit(e);
    } catch (const CLI::ParseError& e) {
      app.exit(e);
      return 2;
    }

    CLI::App* parsed = app.get_subcommands().front();
    flag_sets[parsed]->apply(cfg);

    if (parsed == train) return cmd_train(cfg);
    if (parsed == detect) return cmd_detect(cfg, dump_similarities);
    if (parsed == evaluate) return cmd_evaluate(cfg, protocol);
    if (parsed == sweep) return cmd_sweep(cfg, axis, grid_csv, grid_points);
    if (parsed == ablate) return cmd_ablate(cfg, grid_file);
    if (parsed == explain) return cmd_explain(cfg, query_id, candidate_id);
    if (parsed == plot) return cmd_plot(cfg, scores_path, title);
    throw std::logic_error("unhandled subcommand");
  } catch (const bd::ValidationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
