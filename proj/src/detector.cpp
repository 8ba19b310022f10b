#include "borrowdet/detector.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <functional>
#include <map>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "borrowdet/common.hpp"

namespace borrowdet::detector {

namespace {

struct Pair {
  std::size_t query;      // index into wordlist.forms
  std::size_t candidate;  // index into wordlist.forms
  bool same_concept;
};

bool is_query_role(const corpus::Wordlist& wordlist, const corpus::WordForm& form) {
  return wordlist.languages.at(form.language) != corpus::LanguageRole::kDonor;
}

std::vector<Pair> candidate_pairs(const corpus::Wordlist& wordlist,
                                  const corpus::ColexNetwork* colex, CandidateMode mode) {
  std::vector<Pair> pairs;
  for (std::size_t q = 0; q < wordlist.forms.size(); ++q) {
    const auto& query = wordlist.forms[q];
    if (!is_query_role(wordlist, query)) continue;
    for (std::size_t c = 0; c < wordlist.forms.size(); ++c) {
      if (c == q) continue;
      const auto& cand = wordlist.forms[c];
      if (cand.language == query.language) continue;
      if (mode == CandidateMode::kDonorFixed) {
        if (wordlist.languages.at(cand.language) != corpus::LanguageRole::kDonor) continue;
      } else {
        if (cand.family == query.family) continue;
      }
      bool same = cand.concept_id == query.concept_id;
      if (!same) {
        if (colex == nullptr ||
            colex->proportion(query.concept_id, cand.concept_id) <= 0.0) {
          continue;
        }
      }
      pairs.push_back(Pair{q, c, same});
    }
  }
  return pairs;
}

// Runs fn(i) for i in [0, n) across `workers` threads; fn writes only to
// slot i of preallocated output, so the merge is deterministic.
void parallel_for(std::size_t n, int workers, const std::function<void(std::size_t)>& fn) {
  if (workers <= 1 || n < 2) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  const auto n_threads = static_cast<std::size_t>(workers);
  std::vector<std::thread> pool;
  pool.reserve(n_threads);
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(n_threads);
  for (std::size_t t = 0; t < n_threads; ++t) {
    pool.emplace_back([&, t] {
      try {
        while (true) {
          const std::size_t i = next.fetch_add(1);
          if (i >= n) break;
          fn(i);
        }
      } catch (...) {
        errors[t] = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace

std::string candidate_mode_name(CandidateMode mode) {
  return mode == CandidateMode::kDonorFixed ? "donor_fixed" : "cross_family";
}

CandidateMode candidate_mode_from_name(const std::string& name) {
  if (name == "donor_fixed") return CandidateMode::kDonorFixed;
  if (name == "cross_family") return CandidateMode::kCrossFamily;
  throw ValidationError("unknown candidate mode '" + name +
                        "' (expected donor_fixed or cross_family)");
}

std::string method_label(Method method) {
  switch (method) {
    case Method::kCombined: return "combined";
    case Method::kCosineOnly: return "cosine";
    case Method::kPmiOnly: return "pmi";
    case Method::kNed: return "ned";
  }
  throw std::logic_error("unreachable method");
}

Method method_from_label(const std::string& name) {
  if (name == "combined") return Method::kCombined;
  if (name == "cosine") return Method::kCosineOnly;
  if (name == "pmi") return Method::kPmiOnly;
  if (name == "ned") return Method::kNed;
  throw ValidationError("unknown method '" + name +
                        "' (expected combined, cosine, pmi, or ned)");
}

double effective_cosine_weight(Method method, double configured_weight) {
  switch (method) {
    case Method::kCombined: return configured_weight;
    case Method::kCosineOnly: return 1.0;
    case Method::kPmiOnly:
    case Method::kNed: return 0.0;
  }
  throw std::logic_error("unreachable method");
}

template <typename S>
double cosine_similarity(const encoder::Vector<S>& u, const encoder::Vector<S>& v) {
  if (u.size() != v.size()) throw ValidationError("cosine_similarity: dimension mismatch");
  const double nu = u.template cast<double>().norm();
  const double nv = v.template cast<double>().norm();
  if (nu == 0.0 || nv == 0.0) throw ValidationError("cosine_similarity: zero vector");
  return u.template cast<double>().dot(v.template cast<double>()) / (nu * nv);
}

std::vector<Candidate> candidates(const corpus::WordForm& query,
                                  const corpus::Wordlist& wordlist,
                                  const corpus::ColexNetwork* colex, CandidateMode mode) {
  if (wordlist.id_index.find(query.id) == wordlist.id_index.end()) {
    throw ValidationError("candidates: form '" + query.id + "' is not in the wordlist");
  }
  std::vector<Candidate> out;
  for (const auto& cand : wordlist.forms) {
    if (cand.id == query.id || cand.language == query.language) continue;
    if (mode == CandidateMode::kDonorFixed) {
      if (wordlist.languages.at(cand.language) != corpus::LanguageRole::kDonor) continue;
    } else {
      if (cand.family == query.family) continue;
    }
    if (cand.concept_id == query.concept_id) {
      out.push_back(Candidate{&cand, true});
    } else if (colex != nullptr &&
               colex->proportion(query.concept_id, cand.concept_id) > 0.0) {
      out.push_back(Candidate{&cand, false});
    }
  }
  return out;
}

double combined_similarity(double cosine, double pmi_scaled, double cosine_weight,
                           bool cross_concept, double penalty) {
  if (cosine_weight < 0.0 || cosine_weight > 1.0) {
    throw ValidationError("combined_similarity: cosine weight must lie in [0, 1]");
  }
  return cosine_weight * cosine + (1.0 - cosine_weight) * pmi_scaled -
         (cross_concept ? penalty : 0.0);
}

encoder::Matrix<float> eval_hidden(const corpus::Wordlist& wordlist,
                                   const encoder::Params<float>& params,
                                   const encoder::InputEncoder& input_encoder,
                                   int workers) {
  if (wordlist.forms.empty()) throw ValidationError("eval_hidden: empty wordlist");
  const std::size_t n = wordlist.forms.size();
  constexpr std::size_t kChunk = 64;
  const std::size_t n_chunks = (n + kChunk - 1) / kChunk;
  encoder::Matrix<float> hidden(static_cast<Eigen::Index>(n), params.config.hidden_dim);
  parallel_for(n_chunks, workers, [&](std::size_t chunk) {
    const std::size_t begin = chunk * kChunk;
    const std::size_t end = std::min(begin + kChunk, n);
    std::vector<const corpus::WordForm*> forms;
    forms.reserve(end - begin);
    for (std::size_t i = begin; i < end; ++i) forms.push_back(&wordlist.forms[i]);
    const auto batch = encoder::make_batch<float>(forms, input_encoder);
    const auto tape = encoder::forward_eval(params, batch);
    hidden.middleRows(static_cast<Eigen::Index>(begin), tape.hidden.rows()) = tape.hidden;
  });
  return hidden;
}

DetectResult detect(const corpus::Wordlist& wordlist, const encoder::Params<float>* params,
                    const encoder::InputEncoder* input_encoder,
                    const pmialign::PmiMatrix* pmi, const corpus::ColexNetwork* colex,
                    const DetectOptions& options) {
  if (options.workers < 1) throw ValidationError("detect: workers must be at least 1");
  if (options.cross_concept_penalty < 0.0) {
    throw ValidationError("detect: cross-concept penalty must be nonnegative");
  }
  const double w_cos = effective_cosine_weight(options.method, options.cosine_weight);
  if (w_cos < 0.0 || w_cos > 1.0) {
    throw ValidationError("detect: cosine weight must lie in [0, 1]");
  }
  const bool need_model = w_cos > 0.0;
  if (need_model && (params == nullptr || input_encoder == nullptr)) {
    throw ValidationError("detect: method '" + method_label(options.method) +
                          "' with cosine weight " + format_double(w_cos) +
                          " requires a trained model");
  }
  const bool need_pmi = options.method != Method::kNed && w_cos < 1.0;
  if (need_pmi && pmi == nullptr) {
    throw ValidationError("detect: method '" + method_label(options.method) +
                          "' requires a PMI matrix");
  }

  DetectResult result;
  const auto pairs = candidate_pairs(wordlist, colex, options.mode);

  encoder::Matrix<float> hidden;
  if (need_model) hidden = eval_hidden(wordlist, *params, *input_encoder, options.workers);

  // component similarities per pair
  std::vector<double> cosines(pairs.size(), 0.0);
  std::vector<double> raw(pairs.size(), 0.0);
  parallel_for(pairs.size(), options.workers, [&](std::size_t i) {
    const auto& pair = pairs[i];
    const auto& query = wordlist.forms[pair.query];
    const auto& cand = wordlist.forms[pair.candidate];
    if (need_model) {
      const encoder::Vector<float> u = hidden.row(static_cast<Eigen::Index>(pair.query));
      const encoder::Vector<float> v = hidden.row(static_cast<Eigen::Index>(pair.candidate));
      cosines[i] = cosine_similarity(u, v);
    }
    if (options.method == Method::kNed) {
      raw[i] = pmialign::ned_similarity(query.segments, cand.segments);
    } else if (need_pmi) {
      raw[i] = pmialign::align_score(query.asjp, cand.asjp, *pmi);
    }
  });

  // the NED similarity is already in [0,1]; PMI scores are min-max scaled
  // over the run's full candidate-pair population
  std::vector<double> scaled(pairs.size(), 0.0);
  if (options.method == Method::kNed) {
    scaled = raw;
    const auto [lo, hi] = std::minmax_element(raw.begin(), raw.end());
    result.score_min = raw.empty() ? 0.0 : *lo;
    result.score_max = raw.empty() ? 0.0 : *hi;
  } else if (need_pmi && !pairs.empty()) {
    const auto scaled_set = pmialign::scale_scores(raw);
    scaled = scaled_set.scaled;
    result.score_min = scaled_set.min;
    result.score_max = scaled_set.max;
  }

  result.records.resize(pairs.size());
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const auto& pair = pairs[i];
    SimilarityRecord rec;
    rec.query_id = wordlist.forms[pair.query].id;
    rec.candidate_id = wordlist.forms[pair.candidate].id;
    rec.same_concept = pair.same_concept;
    rec.cosine = cosines[i];
    rec.pmi_scaled = scaled[i];
    rec.penalty_applied = !pair.same_concept;
    rec.combined = combined_similarity(rec.cosine, rec.pmi_scaled, w_cos, !pair.same_concept,
                                       options.cross_concept_penalty);
    result.records[i] = std::move(rec);
  }

  result.thresholds = fit_thresholds(wordlist, result.records, options);
  result.predictions =
      classify_records(wordlist, result.records, result.thresholds, options.mode);
  return result;
}

std::vector<SimilarityRecord> recombine(const std::vector<SimilarityRecord>& records,
                                        double cosine_weight, double penalty) {
  std::vector<SimilarityRecord> out = records;
  for (auto& rec : out) {
    rec.combined = combined_similarity(rec.cosine, rec.pmi_scaled, cosine_weight,
                                       rec.penalty_applied, penalty);
  }
  return out;
}

std::vector<gmmthresh::ThresholdDecision> fit_thresholds(
    const corpus::Wordlist& wordlist, const std::vector<SimilarityRecord>& records,
    const DetectOptions& options) {
  std::map<std::string, std::vector<double>> population;
  if (options.per_word_max) {
    std::map<std::string, double> best_per_query;
    for (const auto& rec : records) {
      auto [it, inserted] = best_per_query.emplace(rec.query_id, rec.combined);
      if (!inserted) it->second = std::max(it->second, rec.combined);
    }
    for (const auto& form : wordlist.forms) {
      const auto it = best_per_query.find(form.id);
      if (it != best_per_query.end()) population[form.language].push_back(it->second);
    }
  } else {
    for (const auto& rec : records) {
      const auto idx = wordlist.id_index.find(rec.query_id);
      if (idx == wordlist.id_index.end()) {
        throw ValidationError("fit_thresholds: unknown form id '" + rec.query_id + "'");
      }
      population[wordlist.forms[idx->second].language].push_back(rec.combined);
    }
  }
  std::vector<gmmthresh::ThresholdDecision> thresholds;
  for (const auto& [language, scores] : population) {
    gmmthresh::ThresholdDecision decision;
    if (options.manual_threshold) {
      decision.value = *options.manual_threshold;
      decision.method = gmmthresh::ThresholdMethod::kManual;
    } else {
      decision = gmmthresh::auto_threshold(scores, options.seed);
    }
    decision.language = language;
    thresholds.push_back(std::move(decision));
  }
  return thresholds;
}

std::vector<Prediction> classify_records(
    const corpus::Wordlist& wordlist, const std::vector<SimilarityRecord>& records,
    const std::vector<gmmthresh::ThresholdDecision>& thresholds, CandidateMode mode) {
  (void)mode;
  std::map<std::string, const gmmthresh::ThresholdDecision*> by_language;
  for (const auto& d : thresholds) by_language[d.language] = &d;

  // best record per query, ties broken toward the smaller candidate id
  std::map<std::string, const SimilarityRecord*> best;
  for (const auto& rec : records) {
    auto [it, inserted] = best.emplace(rec.query_id, &rec);
    if (!inserted) {
      const auto* cur = it->second;
      if (rec.combined > cur->combined ||
          (rec.combined == cur->combined && rec.candidate_id < cur->candidate_id)) {
        it->second = &rec;
      }
    }
  }

  std::vector<Prediction> predictions;
  for (const auto& form : wordlist.forms) {
    if (!is_query_role(wordlist, form)) continue;
    Prediction pred;
    pred.form_id = form.id;
    pred.language = form.language;
    pred.concept_id = form.concept_id;
    const auto best_it = best.find(form.id);
    const auto thr_it = by_language.find(form.language);
    if (thr_it != by_language.end()) {
      pred.threshold = thr_it->second->value;
      pred.threshold_method = gmmthresh::method_name(thr_it->second->method);
    }
    if (best_it != best.end()) {
      if (thr_it == by_language.end()) {
        throw ValidationError("classify: no threshold for language '" + form.language +
                              "' although it has scored candidate pairs");
      }
      const auto* rec = best_it->second;
      const auto cand_idx = wordlist.id_index.at(rec->candidate_id);
      pred.best = BestCandidate{rec->candidate_id,
                                wordlist.forms[cand_idx].language, rec->combined};
      pred.predicted_borrowed = rec->combined > *pred.threshold;
    }
    predictions.push_back(std::move(pred));
  }
  return predictions;
}

std::string explain(const corpus::Wordlist& wordlist, const encoder::Params<float>* params,
                    const encoder::InputEncoder* input_encoder,
                    const pmialign::PmiMatrix* pmi, const corpus::ColexNetwork* colex,
                    const DetectOptions& options, const std::string& query_id,
                    const std::string& candidate_id) {
  const auto q_it = wordlist.id_index.find(query_id);
  const auto c_it = wordlist.id_index.find(candidate_id);
  if (q_it == wordlist.id_index.end()) {
    throw ValidationError("explain: unknown form id '" + query_id + "'");
  }
  if (c_it == wordlist.id_index.end()) {
    throw ValidationError("explain: unknown form id '" + candidate_id + "'");
  }
  const auto& query = wordlist.forms[q_it->second];
  const auto& cand = wordlist.forms[c_it->second];

  const auto result = detect(wordlist, params, input_encoder, pmi, colex, options);

  std::ostringstream out;
  out << "query      " << query.id << "  " << query.language << "  " << query.concept_id
      << "  /" << query.raw_form << "/  asjp=" << query.asjp << '\n';
  out << "candidate  " << cand.id << "  " << cand.language << "  " << cand.concept_id
      << "  /" << cand.raw_form << "/  asjp=" << cand.asjp << '\n';

  const SimilarityRecord* record = nullptr;
  for (const auto& rec : result.records) {
    if (rec.query_id == query_id && rec.candidate_id == candidate_id) {
      record = &rec;
      break;
    }
  }

  if (options.method != Method::kNed && pmi != nullptr) {
    const auto alignment = pmialign::align_trace(query.asjp, cand.asjp, *pmi);
    out << "alignment  raw score " << format_double(alignment.score) << '\n';
    for (const auto& col : alignment.columns) {
      const std::string a =
          col.a_index >= 0 ? query.asjp.substr(static_cast<std::size_t>(col.a_index), 1) : "-";
      const std::string b =
          col.b_index >= 0 ? cand.asjp.substr(static_cast<std::size_t>(col.b_index), 1) : "-";
      out << "  " << a << " ~ " << b << "  " << format_double(col.score) << '\n';
    }
    out << "pmi scaling  min " << format_double(result.score_min) << "  max "
        << format_double(result.score_max) << '\n';
  } else if (options.method == Method::kNed) {
    out << "ned similarity " << format_double(pmialign::ned_similarity(query.segments,
                                                                       cand.segments))
        << '\n';
  }

  if (record != nullptr) {
    out << "cosine " << format_double(record->cosine) << "  pmi_scaled "
        << format_double(record->pmi_scaled) << "  combined "
        << format_double(record->combined)
        << (record->penalty_applied ? "  (cross-concept penalty applied)" : "") << '\n';
    for (const auto& d : result.thresholds) {
      if (d.language == query.language) {
        out << "threshold " << format_double(d.value) << " (" << method_name(d.method)
            << ")  margin " << format_double(record->combined - d.value) << '\n';
      }
    }
  } else {
    out << "note: this pair is not in the candidate set for the current mode\n";
  }
  return out.str();
}

void write_predictions(const std::vector<Prediction>& predictions, const std::string& path) {
  std::ostringstream out;
  out << "ID\tLANGUAGE\tCONCEPT\tPREDICTED\tSCORE\tBEST_CANDIDATE_ID\t"
         "BEST_CANDIDATE_LANGUAGE\tTHRESHOLD\tMETHOD\n";
  for (const auto& p : predictions) {
    out << p.form_id << '\t' << p.language << '\t' << p.concept_id << '\t'
        << (p.predicted_borrowed ? "true" : "false") << '\t';
    if (p.best) out << format_double(p.best->score);
    out << '\t';
    if (p.best) out << p.best->form_id;
    out << '\t';
    if (p.best) out << p.best->language;
    out << '\t';
    if (p.threshold) out << format_double(*p.threshold);
    out << '\t' << p.threshold_method << '\n';
  }
  write_file(path, out.str());
}

void write_similarities(const std::vector<SimilarityRecord>& records,
                        const std::string& path) {
  std::ostringstream out;
  out << "QUERY_ID\tCANDIDATE_ID\tSAME_CONCEPT\tCOSINE\tPMI_SCALED\tCOMBINED\t"
         "PENALTY_APPLIED\n";
  for (const auto& r : records) {
    out << r.query_id << '\t' << r.candidate_id << '\t' << (r.same_concept ? "true" : "false")
        << '\t' << format_double(r.cosine) << '\t' << format_double(r.pmi_scaled) << '\t'
        << format_double(r.combined) << '\t' << (r.penalty_applied ? "true" : "false")
        << '\n';
  }
  write_file(path, out.str());
}

template double cosine_similarity<float>(const encoder::Vector<float>&,
                                         const encoder::Vector<float>&);
template double cosine_similarity<double>(const encoder::Vector<double>&,
                                          const encoder::Vector<double>&);

}  // namespace borrowdet::detector
