#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "borrowdet/corpus.hpp"
#include "borrowdet/encoder.hpp"
#include "borrowdet/gmmthresh.hpp"
#include "borrowdet/pmialign.hpp"

namespace borrowdet::detector {

enum class CandidateMode { kDonorFixed, kCrossFamily };

std::string candidate_mode_name(CandidateMode mode);
CandidateMode candidate_mode_from_name(const std::string& name);

// Scoring method: the combined score, either of its two components alone,
// or the normalized-edit-distance baseline (no model, no PMI matrix).
enum class Method { kCombined, kCosineOnly, kPmiOnly, kNed };

std::string method_label(Method method);
Method method_from_label(const std::string& name);
double effective_cosine_weight(Method method, double configured_weight);

struct SimilarityRecord {
  std::string query_id;
  std::string candidate_id;
  bool same_concept = true;
  double cosine = 0.0;
  double pmi_scaled = 0.0;
  double combined = 0.0;
  bool penalty_applied = false;
};

struct BestCandidate {
  std::string form_id;
  std::string language;
  double score = 0.0;
};

struct Prediction {
  std::string form_id;
  std::string language;
  std::string concept_id;
  bool predicted_borrowed = false;
  std::optional<BestCandidate> best;
  std::optional<double> threshold;
  std::string threshold_method;  // empty when the language had nothing to score
};

template <typename S>
double cosine_similarity(const encoder::Vector<S>& u, const encoder::Vector<S>& v);

struct Candidate {
  const corpus::WordForm* form;
  bool same_concept;
};

// Forms the query is compared against: same concept (or a colexified one
// when a network is given, flagged cross-concept), never the query itself or
// its own language; donor_fixed restricts to donor-role languages,
// cross_family to languages of other families.
std::vector<Candidate> candidates(const corpus::WordForm& query,
                                  const corpus::Wordlist& wordlist,
                                  const corpus::ColexNetwork* colex, CandidateMode mode);

double combined_similarity(double cosine, double pmi_scaled, double cosine_weight,
                           bool cross_concept, double penalty);

// Eval-mode pooled representations for every form, in wordlist order.
encoder::Matrix<float> eval_hidden(const corpus::Wordlist& wordlist,
                                   const encoder::Params<float>& params,
                                   const encoder::InputEncoder& input_encoder,
                                   int workers = 1);

struct DetectOptions {
  Method method = Method::kCombined;
  CandidateMode mode = CandidateMode::kDonorFixed;
  double cosine_weight = 0.25;
  double cross_concept_penalty = 0.1;
  bool per_word_max = false;  // threshold fit population: per-word maxima
  std::optional<double> manual_threshold;
  std::uint64_t seed = 42;
  int workers = 1;
};

struct DetectResult {
  std::vector<Prediction> predictions;  // queries in wordlist order
  std::vector<SimilarityRecord> records;
  std::vector<gmmthresh::ThresholdDecision> thresholds;
  double score_min = 0.0, score_max = 0.0;  // raw-PMI scaling bounds for the run
};

// Full pipeline: candidate pairs, similarity records (PMI min-max scaled
// over the whole run), per-recipient-language thresholds (automatic unless a
// manual value is given), strict-inequality classification.
// `params`/`input_encoder` may be null when the effective cosine weight is
// zero; `pmi` may be null only for the NED method.
DetectResult detect(const corpus::Wordlist& wordlist, const encoder::Params<float>* params,
                    const encoder::InputEncoder* input_encoder,
                    const pmialign::PmiMatrix* pmi, const corpus::ColexNetwork* colex,
                    const DetectOptions& options);

// Re-threshold + re-classify precomputed records (threshold sweeps).
std::vector<Prediction> classify_records(const corpus::Wordlist& wordlist,
                                         const std::vector<SimilarityRecord>& records,
                                         const std::vector<gmmthresh::ThresholdDecision>& thresholds,
                                         CandidateMode mode);

// Recompute the combined column from the cached components under a new
// weight/penalty (weight sweeps reuse one scoring pass).
std::vector<SimilarityRecord> recombine(const std::vector<SimilarityRecord>& records,
                                        double cosine_weight, double penalty);

// Per-recipient-language thresholds over the records' combined scores:
// manual value when configured, otherwise the automatic model-selected
// threshold. Languages without any scored pair get no decision.
std::vector<gmmthresh::ThresholdDecision> fit_thresholds(
    const corpus::Wordlist& wordlist, const std::vector<SimilarityRecord>& records,
    const DetectOptions& options);

// Human-readable pair diagnostic: ASJP strings, alignment columns, raw and
// scaled PMI, cosine, combined score and threshold margin; runs the full
// scoring pass so the scaling matches a real detection run.
std::string explain(const corpus::Wordlist& wordlist, const encoder::Params<float>* params,
                    const encoder::InputEncoder* input_encoder,
                    const pmialign::PmiMatrix* pmi, const corpus::ColexNetwork* colex,
                    const DetectOptions& options, const std::string& query_id,
                    const std::string& candidate_id);

// TSV `ID, LANGUAGE, CONCEPT, PREDICTED, SCORE, BEST_CANDIDATE_ID,
// BEST_CANDIDATE_LANGUAGE, THRESHOLD, METHOD`.
void write_predictions(const std::vector<Prediction>& predictions, const std::string& path);

// TSV dump of every similarity record.
void write_similarities(const std::vector<SimilarityRecord>& records, const std::string& path);

}  // namespace borrowdet::detector
