#include "borrowdet/evalrep.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>
#include <stdexcept>

#include "borrowdet/common.hpp"

namespace borrowdet::evalrep {

namespace {

double mean_of(const std::vector<double>& xs) {
  double sum = 0.0;
  for (double x : xs) sum += x;
  return xs.empty() ? 0.0 : sum / static_cast<double>(xs.size());
}

double population_std(const std::vector<double>& xs) {
  if (xs.size() < 2) return 0.0;
  const double m = mean_of(xs);
  double sq = 0.0;
  for (double x : xs) sq += (x - m) * (x - m);
  return std::sqrt(sq / static_cast<double>(xs.size()));
}

}  // namespace

ConfusionCounts& ConfusionCounts::operator+=(const ConfusionCounts& other) {
  tp += other.tp;
  fp += other.fp;
  fn += other.fn;
  tn += other.tn;
  return *this;
}

Metrics metrics(const ConfusionCounts& counts) {
  if (counts.tp < 0 || counts.fp < 0 || counts.fn < 0 || counts.tn < 0) {
    throw ValidationError("metrics: negative confusion count");
  }
  if (counts.total() == 0) throw ValidationError("metrics: empty confusion counts");
  Metrics m;
  const double tp = static_cast<double>(counts.tp);
  if (counts.tp + counts.fp > 0) m.precision = tp / static_cast<double>(counts.tp + counts.fp);
  if (counts.tp + counts.fn > 0) m.recall = tp / static_cast<double>(counts.tp + counts.fn);
  if (m.precision + m.recall > 0.0) {
    m.f1 = 2.0 * m.precision * m.recall / (m.precision + m.recall);
  }
  m.accuracy = static_cast<double>(counts.tp + counts.tn) / static_cast<double>(counts.total());
  return m;
}

const EvalRow& EvalReport::aggregate() const {
  for (const auto& row : rows) {
    if (row.language == "ALL") return row;
  }
  throw std::logic_error("EvalReport has no aggregate row");
}

EvalReport evaluate_donor_fixed(const corpus::Wordlist& wordlist,
                                const std::vector<detector::Prediction>& predictions,
                                const std::string& method, const std::string& supervision) {
  std::map<std::string, ConfusionCounts> per_language;
  for (const auto& pred : predictions) {
    const auto idx = wordlist.id_index.find(pred.form_id);
    if (idx == wordlist.id_index.end()) {
      throw ValidationError("evaluate: prediction for unknown form '" + pred.form_id + "'");
    }
    const auto& form = wordlist.forms[idx->second];
    if (!form.gold_borrowed.has_value()) {
      throw ValidationError("evaluate: form '" + form.id + "' has no borrowing annotation");
    }
    const bool gold = *form.gold_borrowed;
    if (gold && !form.gold_donor_language.has_value()) {
      throw ValidationError("evaluate: borrowed form '" + form.id +
                            "' has no donor annotation");
    }
    auto& c = per_language[pred.language];
    if (pred.predicted_borrowed) {
      if (!pred.best.has_value()) {
        throw std::logic_error("predicted borrowing without best candidate");
      }
      if (gold && pred.best->language == *form.gold_donor_language) {
        ++c.tp;
      } else if (gold) {
        ++c.fp;  // wrong donor: penalize the attribution and the missed source
        ++c.fn;
      } else {
        ++c.fp;
      }
    } else {
      if (gold) {
        ++c.fn;
      } else {
        ++c.tn;
      }
    }
  }

  EvalReport report;
  report.method = method;
  report.supervision = supervision;
  ConfusionCounts all;
  for (const auto& [language, counts] : per_language) {
    report.rows.push_back(EvalRow{language, counts, metrics(counts)});
    all += counts;
  }
  report.rows.push_back(EvalRow{"ALL", all, metrics(all)});
  return report;
}

std::vector<bool> derive_pair_gold(const corpus::Wordlist& wordlist,
                                   const std::vector<detector::SimilarityRecord>& records) {
  std::vector<bool> gold;
  gold.reserve(records.size());
  for (const auto& rec : records) {
    const auto q_it = wordlist.id_index.find(rec.query_id);
    const auto c_it = wordlist.id_index.find(rec.candidate_id);
    if (q_it == wordlist.id_index.end() || c_it == wordlist.id_index.end()) {
      throw ValidationError("pair gold: record references an unknown form id");
    }
    const auto& query = wordlist.forms[q_it->second];
    const auto& cand = wordlist.forms[c_it->second];
    if (!query.gold_borrowed.has_value()) {
      throw ValidationError("pair gold: form '" + query.id + "' has no borrowing annotation");
    }
    bool label = false;
    if (*query.gold_borrowed) {
      if (!query.gold_donor_language.has_value()) {
        throw ValidationError("pair gold: borrowed form '" + query.id +
                              "' has no donor annotation");
      }
      label = cand.language == *query.gold_donor_language;
    }
    gold.push_back(label);
  }
  return gold;
}

ConfusionCounts evaluate_all_pairs(const std::vector<detector::SimilarityRecord>& records,
                                   const std::vector<bool>& gold, double threshold) {
  if (gold.size() != records.size()) {
    throw ValidationError("evaluate_all_pairs: a record is missing its gold label");
  }
  ConfusionCounts counts;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const bool predicted = records[i].combined > threshold;
    if (predicted && gold[i]) {
      ++counts.tp;
    } else if (predicted) {
      ++counts.fp;
    } else if (gold[i]) {
      ++counts.fn;
    } else {
      ++counts.tn;
    }
  }
  return counts;
}

AggregateReport aggregate_runs(const std::vector<EvalReport>& reports) {
  if (reports.empty()) throw ValidationError("aggregate_runs: no reports");
  const auto& first = reports.front();
  for (const auto& report : reports) {
    if (report.rows.size() != first.rows.size()) {
      throw ValidationError("aggregate_runs: reports have different row counts");
    }
    for (std::size_t i = 0; i < report.rows.size(); ++i) {
      if (report.rows[i].language != first.rows[i].language) {
        throw ValidationError("aggregate_runs: report rows disagree on language '" +
                              report.rows[i].language + "'");
      }
    }
  }

  AggregateReport out;
  out.method = first.method;
  out.supervision = first.supervision;
  out.runs = static_cast<int>(reports.size());
  for (std::size_t i = 0; i < first.rows.size(); ++i) {
    std::vector<double> p, r, f, a;
    for (const auto& report : reports) {
      p.push_back(report.rows[i].values.precision);
      r.push_back(report.rows[i].values.recall);
      f.push_back(report.rows[i].values.f1);
      a.push_back(report.rows[i].values.accuracy);
    }
    AggregateRow row;
    row.language = first.rows[i].language;
    row.mean = Metrics{mean_of(p), mean_of(r), mean_of(f), mean_of(a)};
    row.stddev =
        Metrics{population_std(p), population_std(r), population_std(f), population_std(a)};
    out.rows.push_back(std::move(row));
  }
  return out;
}

void write_report(const AggregateReport& report, const std::string& path) {
  std::ostringstream out;
  out << "METHOD\tSUPERVISION\tLANGUAGE\tPRECISION\tRECALL\tF1\tACCURACY\t"
         "STD_PRECISION\tSTD_RECALL\tSTD_F1\tSTD_ACCURACY\n";
  for (const auto& row : report.rows) {
    out << report.method << '\t' << report.supervision << '\t' << row.language << '\t'
        << format_double(row.mean.precision) << '\t' << format_double(row.mean.recall) << '\t'
        << format_double(row.mean.f1) << '\t' << format_double(row.mean.accuracy) << '\t'
        << format_double(row.stddev.precision) << '\t' << format_double(row.stddev.recall)
        << '\t' << format_double(row.stddev.f1) << '\t' << format_double(row.stddev.accuracy)
        << '\n';
  }
  write_file(path, out.str());
}

void write_report(const EvalReport& report, const std::string& path) {
  write_report(aggregate_runs({report}), path);
}

std::string axis_name(SweepAxis axis) {
  return axis == SweepAxis::kCosineWeight ? "cosine_weight" : "global_threshold";
}

SweepAxis axis_from_name(const std::string& name) {
  if (name == "cosine_weight") return SweepAxis::kCosineWeight;
  if (name == "global_threshold") return SweepAxis::kGlobalThreshold;
  throw ValidationError("unknown sweep axis '" + name +
                        "' (expected cosine_weight or global_threshold)");
}

std::vector<SweepRow> sweep(const corpus::Wordlist& wordlist,
                            const std::vector<detector::SimilarityRecord>& records,
                            SweepAxis axis, const std::vector<double>& grid,
                            const detector::DetectOptions& options) {
  if (grid.empty()) throw ValidationError("sweep: empty grid");
  std::vector<SweepRow> rows;
  rows.reserve(grid.size());
  for (const double value : grid) {
    std::vector<detector::SimilarityRecord> cell_records;
    detector::DetectOptions cell_options = options;
    if (axis == SweepAxis::kCosineWeight) {
      if (value < 0.0 || value > 1.0) {
        throw ValidationError("sweep: cosine weight " + format_double(value) +
                              " outside [0, 1]");
      }
      cell_records = detector::recombine(records, value, options.cross_concept_penalty);
      cell_options.cosine_weight = value;
    } else {
      cell_records = records;
      cell_options.manual_threshold = value;
    }
    const auto thresholds =
        detector::fit_thresholds(wordlist, cell_records, cell_options);
    const auto predictions =
        detector::classify_records(wordlist, cell_records, thresholds, cell_options.mode);
    const auto report = evaluate_donor_fixed(wordlist, predictions,
                                             detector::method_label(cell_options.method),
                                             "self-supervised");
    const auto& all = report.aggregate();
    rows.push_back(SweepRow{value, all.counts, all.values});
  }
  return rows;
}

void write_sweep_table(SweepAxis axis, const std::vector<SweepRow>& rows,
                       const std::string& path) {
  std::ostringstream out;
  out << "AXIS\tVALUE\tPRECISION\tRECALL\tF1\tACCURACY\tTP\tFP\tFN\tTN\n";
  for (const auto& row : rows) {
    out << axis_name(axis) << '\t' << format_double(row.value) << '\t'
        << format_double(row.values.precision) << '\t' << format_double(row.values.recall)
        << '\t' << format_double(row.values.f1) << '\t' << format_double(row.values.accuracy)
        << '\t' << row.counts.tp << '\t' << row.counts.fp << '\t' << row.counts.fn << '\t'
        << row.counts.tn << '\n';
  }
  write_file(path, out.str());
}

void apply_override(AblationSetup& setup, const std::string& key, const std::string& value) {
  const std::string context = "override " + key;
  if (key == "temperature") {
    setup.train.temperature = parse_double(value, context);
  } else if (key == "learning_rate") {
    setup.train.learning_rate = parse_double(value, context);
  } else if (key == "batch_size") {
    setup.train.batch_size = static_cast<int>(parse_long(value, context));
  } else if (key == "epochs") {
    setup.train.epochs = static_cast<int>(parse_long(value, context));
  } else if (key == "sampler") {
    if (value == "concept_balanced") {
      setup.train.sampler = trainer::Sampler::kConceptBalanced;
    } else if (value == "random") {
      setup.train.sampler = trainer::Sampler::kRandom;
    } else {
      throw ValidationError("override sampler: unknown value '" + value + "'");
    }
  } else if (key == "noise_prob") {
    setup.augment.noise_prob = parse_double(value, context);
  } else if (key == "noise_sigma") {
    setup.augment.noise_sigma = parse_double(value, context);
  } else if (key == "duplication_prob") {
    setup.augment.duplication_prob = parse_double(value, context);
  } else if (key == "swap_prob") {
    setup.augment.swap_prob = parse_double(value, context);
  } else if (key == "deletion_prob") {
    setup.augment.deletion_prob = parse_double(value, context);
  } else if (key == "feature_dropout") {
    setup.encoder.feature_dropout = parse_double(value, context);
  } else if (key == "attention_dropout") {
    setup.encoder.attention_dropout = parse_double(value, context);
  } else if (key == "hidden_dim") {
    setup.encoder.hidden_dim = static_cast<int>(parse_long(value, context));
  } else if (key == "n_layers") {
    setup.encoder.n_layers = static_cast<int>(parse_long(value, context));
  } else if (key == "n_heads") {
    setup.encoder.n_heads = static_cast<int>(parse_long(value, context));
  } else if (key == "ff_dim") {
    setup.encoder.ff_dim = static_cast<int>(parse_long(value, context));
  } else if (key == "projection_head") {
    if (value == "true" || value == "false") {
      setup.encoder.use_projection_head = value == "true";
    } else {
      throw ValidationError("override projection_head: expected true or false, got '" +
                            value + "'");
    }
  } else if (key == "encoding") {
    if (value == "features") {
      setup.encoder.encoding_mode = encoder::EncodingMode::kFeatureVectors;
    } else if (value == "one_hot_ipa") {
      setup.encoder.encoding_mode = encoder::EncodingMode::kOneHotIpa;
    } else {
      throw ValidationError("override encoding: unknown value '" + value + "'");
    }
  } else if (key == "cosine_weight") {
    setup.detect.cosine_weight = parse_double(value, context);
  } else if (key == "cross_concept_penalty") {
    setup.detect.cross_concept_penalty = parse_double(value, context);
  } else {
    throw ValidationError("unknown override key '" + key + "'");
  }
}

std::vector<AblationCell> load_ablation_grid(const std::string& path) {
  const auto lines = read_lines(path);
  std::vector<AblationCell> cells;
  bool first = true;
  for (const auto& line : lines) {
    if (line.empty() || line[0] == '#') continue;
    if (first) {
      first = false;
      if (line.rfind("LABEL\t", 0) == 0 || line == "LABEL") continue;
    }
    const auto fields = split(line, '\t');
    AblationCell cell;
    cell.label = fields[0];
    if (cell.label.empty()) throw ValidationError("ablation grid: empty label in " + path);
    if (fields.size() > 1 && !fields[1].empty()) {
      for (const auto& item : split(fields[1], ',')) {
        const auto eq = item.find('=');
        if (eq == std::string::npos || eq == 0) {
          throw ValidationError("ablation grid: malformed override '" + item + "' in " + path);
        }
        cell.overrides.emplace_back(item.substr(0, eq), item.substr(eq + 1));
      }
    }
    cells.push_back(std::move(cell));
  }
  return cells;
}

std::vector<AblationRow> ablate(const corpus::Wordlist& wordlist, const AblationSetup& base,
                                const std::vector<AblationCell>& grid,
                                const pmialign::PmiMatrix* pmi,
                                const corpus::ColexNetwork* colex, int runs) {
  if (runs < 1) throw ValidationError("ablate: runs must be at least 1");

  std::vector<AblationCell> cells;
  cells.push_back(AblationCell{"baseline", {}});
  cells.insert(cells.end(), grid.begin(), grid.end());

  std::vector<AblationRow> rows;
  for (const auto& cell : cells) {
    AblationSetup setup = base;
    std::vector<std::string> rendered;
    for (const auto& [key, value] : cell.overrides) {
      apply_override(setup, key, value);
      rendered.push_back(key + "=" + value);
    }
    setup.encoder.validate();
    setup.train.validate();
    setup.augment.validate();

    std::vector<double> cosine_f1, combined_f1;
    for (int run = 0; run < runs; ++run) {
      trainer::TrainConfig train_config = setup.train;
      train_config.seed = base.train.seed + static_cast<std::uint64_t>(run);
      const auto trained =
          trainer::train(wordlist, setup.encoder, train_config, setup.augment);

      detector::DetectOptions opts = setup.detect;
      opts.seed = train_config.seed;
      opts.method = detector::Method::kCosineOnly;
      auto result = detector::detect(wordlist, &trained.params, &trained.input_encoder, pmi,
                                     colex, opts);
      cosine_f1.push_back(evaluate_donor_fixed(wordlist, result.predictions, "cosine",
                                               "self-supervised")
                              .aggregate()
                              .values.f1);

      opts.method = detector::Method::kCombined;
      result = detector::detect(wordlist, &trained.params, &trained.input_encoder, pmi,
                                colex, opts);
      combined_f1.push_back(evaluate_donor_fixed(wordlist, result.predictions, "combined",
                                                 "self-supervised")
                                .aggregate()
                                .values.f1);
    }

    AblationRow row;
    row.label = cell.label;
    row.overrides = join(rendered, ',');
    row.cosine_f1_mean = mean_of(cosine_f1);
    row.cosine_f1_std = population_std(cosine_f1);
    row.combined_f1_mean = mean_of(combined_f1);
    row.combined_f1_std = population_std(combined_f1);
    rows.push_back(std::move(row));
  }
  return rows;
}

void write_ablation_table(const std::vector<AblationRow>& rows, const std::string& path) {
  std::ostringstream out;
  out << "LABEL\tOVERRIDES\tCOSINE_F1\tCOSINE_F1_STD\tCOMBINED_F1\tCOMBINED_F1_STD\n";
  for (const auto& row : rows) {
    out << row.label << '\t' << row.overrides << '\t' << format_double(row.cosine_f1_mean)
        << '\t' << format_double(row.cosine_f1_std) << '\t'
        << format_double(row.combined_f1_mean) << '\t' << format_double(row.combined_f1_std)
        << '\n';
  }
  write_file(path, out.str());
}

}  // namespace borrowdet::evalrep
