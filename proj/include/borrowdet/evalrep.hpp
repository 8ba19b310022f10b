#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "borrowdet/corpus.hpp"
#include "borrowdet/detector.hpp"
#include "borrowdet/encoder.hpp"
#include "borrowdet/pmialign.hpp"
#include "borrowdet/trainer.hpp"

namespace borrowdet::evalrep {

struct ConfusionCounts {
  long tp = 0;
  long fp = 0;
  long fn = 0;
  long tn = 0;

  long total() const { return tp + fp + fn + tn; }
  ConfusionCounts& operator+=(const ConfusionCounts& other);
};

struct Metrics {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  double accuracy = 0.0;
};

// Zero-denominator precision/recall/F1 are 0 by convention (low-borrowing
// folds would otherwise be undefined). Accuracy requires total > 0.
Metrics metrics(const ConfusionCounts& counts);

struct EvalRow {
  std::string language;  // "ALL" on the aggregate row
  ConfusionCounts counts;
  Metrics values;
};

struct EvalReport {
  std::string method;
  std::string supervision;
  std::uint64_t seed = 0;
  std::vector<EvalRow> rows;  // per-language sorted by name, aggregate last

  const EvalRow& aggregate() const;
};

// Donor-identification protocol: a predicted borrowing is a true positive
// only when the form is gold-borrowed AND the best candidate's language is
// the annotated donor; a wrong donor on a gold borrowing counts as both a
// false positive and a false negative.
EvalReport evaluate_donor_fixed(const corpus::Wordlist& wordlist,
                                const std::vector<detector::Prediction>& predictions,
                                const std::string& method, const std::string& supervision);

// Pair labels for the all-pairs protocol, aligned with `records`: a pair is
// a gold borrowing when the query form is annotated borrowed and the
// candidate's language is its annotated donor.
std::vector<bool> derive_pair_gold(const corpus::Wordlist& wordlist,
                                   const std::vector<detector::SimilarityRecord>& records);

// All-pairs protocol: every record with combined > threshold counts as a
// predicted borrowing pair.
ConfusionCounts evaluate_all_pairs(const std::vector<detector::SimilarityRecord>& records,
                                   const std::vector<bool>& gold, double threshold);

struct AggregateRow {
  std::string language;
  Metrics mean;
  Metrics stddev;  // population standard deviation
};

struct AggregateReport {
  std::string method;
  std::string supervision;
  int runs = 0;
  std::vector<AggregateRow> rows;
};

// Mean and population std per metric over same-shaped reports.
AggregateReport aggregate_runs(const std::vector<EvalReport>& reports);

// TSV `METHOD, SUPERVISION, LANGUAGE, PRECISION, RECALL, F1, ACCURACY,
// STD_PRECISION, STD_RECALL, STD_F1, STD_ACCURACY`.
void write_report(const AggregateReport& report, const std::string& path);
void write_report(const EvalReport& report, const std::string& path);

enum class SweepAxis { kCosineWeight, kGlobalThreshold };

std::string axis_name(SweepAxis axis);
SweepAxis axis_from_name(const std::string& name);

struct SweepRow {
  double value = 0.0;
  ConfusionCounts counts;
  Metrics values;
};

// One donor-fixed evaluation per grid value over cached component scores.
// The threshold axis swaps in a manual global threshold; the weight axis
// recombines the cached cosine/PMI columns and refits the thresholds.
std::vector<SweepRow> sweep(const corpus::Wordlist& wordlist,
                            const std::vector<detector::SimilarityRecord>& records,
                            SweepAxis axis, const std::vector<double>& grid,
                            const detector::DetectOptions& options);

// TSV `AXIS, VALUE, PRECISION, RECALL, F1, ACCURACY, TP, FP, FN, TN`.
void write_sweep_table(SweepAxis axis, const std::vector<SweepRow>& rows,
                       const std::string& path);

struct AblationSetup {
  encoder::EncoderConfig encoder;
  trainer::TrainConfig train;
  trainer::AugmentConfig augment;
  detector::DetectOptions detect;
};

// Applies `key=value` to the matching config field; unknown keys are a
// validation error naming the key.
void apply_override(AblationSetup& setup, const std::string& key, const std::string& value);

struct AblationCell {
  std::string label;
  std::vector<std::pair<std::string, std::string>> overrides;
};

// Grid TSV `LABEL, OVERRIDES` with comma-separated key=value overrides; an
// empty override field re-runs the baseline configuration.
std::vector<AblationCell> load_ablation_grid(const std::string& path);

struct AblationRow {
  std::string label;
  std::string overrides;  // rendered key=value list
  double cosine_f1_mean = 0.0;
  double cosine_f1_std = 0.0;
  double combined_f1_mean = 0.0;
  double combined_f1_std = 0.0;
};

// Trains and evaluates one model per cell and run seed; the baseline row is
// always emitted first. F1 values are donor-fixed aggregates.
std::vector<AblationRow> ablate(const corpus::Wordlist& wordlist, const AblationSetup& base,
                                const std::vector<AblationCell>& grid,
                                const pmialign::PmiMatrix* pmi,
                                const corpus::ColexNetwork* colex, int runs);

// TSV `LABEL, OVERRIDES, COSINE_F1, COSINE_F1_STD, COMBINED_F1, COMBINED_F1_STD`.
void write_ablation_table(const std::vector<AblationRow>& rows, const std::string& path);

}  // namespace borrowdet::evalrep
