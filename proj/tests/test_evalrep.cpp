#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <unistd.h>

#include <cctype>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "borrowdet/common.hpp"
#include "borrowdet/corpus.hpp"
#include "borrowdet/detector.hpp"
#include "borrowdet/evalrep.hpp"

using namespace borrowdet;
using namespace borrowdet::evalrep;
using detector::Prediction;
using detector::SimilarityRecord;

namespace {

const std::string kDataDir = BORROWDET_DATA_DIR;

const corpus::Wordlist& demo_wordlist() {
  static auto features = phon::load_feature_table(kDataDir + "/features.tsv");
  static auto mapping = phon::load_asjp_mapping(kDataDir + "/asjp.tsv");
  static corpus::Wordlist wl = [] {
    corpus::LoadOptions options;
    options.roles["donorese"] = corpus::LanguageRole::kDonor;
    return corpus::load_wordlist(kDataDir + "/demo_wordlist.tsv", features, mapping,
                                 options);
  }();
  return wl;
}

// Complete prediction set over the demo queries: the four planted
// borrowings positive with the given donor, everything else negative.
std::vector<Prediction> perfect_predictions(const std::string& donor = "donorese") {
  std::vector<Prediction> out;
  for (const auto& form : demo_wordlist().forms) {
    if (form.language == "donorese") continue;
    Prediction p;
    p.form_id = form.id;
    p.language = form.language;
    p.concept_id = form.concept_id;
    if (form.gold_borrowed.value_or(false)) {
      p.predicted_borrowed = true;
      p.best = detector::BestCandidate{"some_donor_form", donor, 0.9};
    }
    out.push_back(p);
  }
  return out;
}

// Synthetic cached scores: every query is paired with both donor forms of
// its concept; planted borrowings score clearly high on both pairs, with
// the first candidate slightly ahead.
std::vector<SimilarityRecord> synthetic_records() {
  std::vector<SimilarityRecord> out;
  int i = 0;
  for (const auto& form : demo_wordlist().forms) {
    if (form.language == "donorese") continue;
    bool planted = form.gold_borrowed.value_or(false);
    std::string concept_lower;
    for (char c : form.concept_id)
      concept_lower += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    for (int k = 1; k <= 2; ++k) {
      SimilarityRecord r;
      r.query_id = form.id;
      r.candidate_id = "donorese_" + concept_lower + "_" + std::to_string(k);
      double base = planted ? (k == 1 ? 0.9 : 0.85)
                            : 0.1 + 0.006 * static_cast<double>(i++ % 20);
      r.cosine = base + (planted ? 0.05 : 0.01);
      r.pmi_scaled = base;
      r.combined = 0.25 * r.cosine + 0.75 * r.pmi_scaled;
      out.push_back(r);
    }
  }
  return out;
}

ConfusionCounts counts(long tp, long fp, long fn, long tn) {
  return ConfusionCounts{tp, fp, fn, tn};
}

}  // namespace

TEST_CASE("metric formulas and zero-denominator conventions") {
  auto m = metrics(counts(3, 1, 2, 10));
  CHECK(m.precision == doctest::Approx(0.75));
  CHECK(m.recall == doctest::Approx(0.6));
  CHECK(m.f1 == doctest::Approx(2 * 0.75 * 0.6 / (0.75 + 0.6)));
  CHECK(m.accuracy == doctest::Approx(13.0 / 16.0));

  // No predicted positives: precision (and F1) default to 0.
  auto none = metrics(counts(0, 0, 2, 10));
  CHECK(none.precision == 0.0);
  CHECK(none.recall == 0.0);
  CHECK(none.f1 == 0.0);
  CHECK(none.accuracy == doctest::Approx(10.0 / 12.0));

  // No gold positives: recall defaults to 0.
  auto clean = metrics(counts(0, 1, 0, 11));
  CHECK(clean.recall == 0.0);
  CHECK(clean.precision == 0.0);

  CHECK_THROWS_AS(metrics(counts(0, 0, 0, 0)), ValidationError);
  CHECK_THROWS_AS(metrics(counts(-1, 0, 0, 5)), ValidationError);

  // Random confusion tables agree with the formulas.
  for (long tp = 0; tp <= 3; ++tp) {
    for (long fp = 0; fp <= 3; ++fp) {
      for (long fn = 0; fn <= 3; ++fn) {
        auto c = counts(tp, fp, fn, 5);
        auto v = metrics(c);
        double p = tp + fp ? static_cast<double>(tp) / (tp + fp) : 0.0;
        double r = tp + fn ? static_cast<double>(tp) / (tp + fn) : 0.0;
        double f = p + r > 0 ? 2 * p * r / (p + r) : 0.0;
        CHECK(v.precision == doctest::Approx(p));
        CHECK(v.recall == doctest::Approx(r));
        CHECK(v.f1 == doctest::Approx(f));
        CHECK(v.accuracy == doctest::Approx(static_cast<double>(tp + 5) / c.total()));
      }
    }
  }
}

TEST_CASE("donor-fixed evaluation bookkeeping") {
  const auto& wl = demo_wordlist();

  SUBCASE("a perfect run scores 1.0 everywhere") {
    auto report = evaluate_donor_fixed(wl, perfect_predictions(), "combined",
                                       "self-supervised");
    CHECK(report.method == "combined");
    REQUIRE(report.rows.size() == 3);  // recip_a, recip_b, ALL
    CHECK(report.rows[0].language == "recip_a");
    CHECK(report.rows[1].language == "recip_b");
    CHECK(report.rows[2].language == "ALL");
    for (const auto& row : report.rows) {
      CHECK(row.values.f1 == doctest::Approx(1.0));
      CHECK(row.values.accuracy == doctest::Approx(1.0));
    }
    CHECK(report.rows[0].counts.tp == 2);
    CHECK(report.rows[0].counts.tn == 10);
    CHECK(report.aggregate().counts.tp == 4);
    CHECK(report.aggregate().counts.tn == 20);
    // Aggregate equals the column sums of the language rows.
    CHECK(report.aggregate().counts.total() ==
          report.rows[0].counts.total() + report.rows[1].counts.total());
  }

  SUBCASE("the right form, the wrong donor: both a miss and a false alarm") {
    auto preds = perfect_predictions("somewhere_else");
    auto report = evaluate_donor_fixed(wl, preds, "combined", "self-supervised");
    CHECK(report.aggregate().counts.tp == 0);
    CHECK(report.aggregate().counts.fp == 4);
    CHECK(report.aggregate().counts.fn == 4);
    CHECK(report.aggregate().counts.tn == 20);
  }

  SUBCASE("spurious positives and missed positives") {
    auto preds = perfect_predictions();
    for (auto& p : preds) {
      if (p.form_id == "recip_a_arm") {  // gold negative -> false positive
        p.predicted_borrowed = true;
        p.best = detector::BestCandidate{"donorese_arm_1", "donorese", 0.8};
      }
      if (p.form_id == "recip_b_fire") {  // gold positive -> false negative
        p.predicted_borrowed = false;
        p.best.reset();
      }
    }
    auto report = evaluate_donor_fixed(wl, preds, "combined", "self-supervised");
    CHECK(report.aggregate().counts.tp == 3);
    CHECK(report.aggregate().counts.fp == 1);
    CHECK(report.aggregate().counts.fn == 1);
    CHECK(report.aggregate().counts.tn == 19);
  }

  SUBCASE("missing annotations are hard errors naming the form") {
    auto wl_copy = wl;
    wl_copy.forms[2].gold_borrowed.reset();  // recip_a_arm
    wl_copy.rebuild_index();
    CHECK_THROWS_WITH_AS(evaluate_donor_fixed(wl_copy, perfect_predictions(), "m", "s"),
                         doctest::Contains("recip_a_arm"), ValidationError);
  }

  SUBCASE("predictions for unknown forms are refused") {
    auto preds = perfect_predictions();
    preds[0].form_id = "phantom";
    CHECK_THROWS_AS(evaluate_donor_fixed(wl, preds, "m", "s"), ValidationError);
  }
}

TEST_CASE("all-pairs protocol over cached records") {
  const auto& wl = demo_wordlist();
  auto records = synthetic_records();
  auto gold = derive_pair_gold(wl, records);
  REQUIRE(gold.size() == records.size());

  // Both donor pairs of a planted borrowing are gold (same donor language).
  long gold_count = 0;
  for (bool g : gold) gold_count += g;
  CHECK(gold_count == 8);

  // Scores were built so exactly the planted pairs clear 0.5.
  auto c = evaluate_all_pairs(records, gold, 0.5);
  CHECK(c.tp == 8);
  CHECK(c.fn == 0);
  CHECK(c.fp == 0);
  CHECK(c.tn == 40);

  auto strict = evaluate_all_pairs(records, gold, 0.88);
  CHECK(strict.tp == 4);  // only the k=1 pairs sit above 0.88
  CHECK(strict.fn == 4);

  auto low = evaluate_all_pairs(records, gold, -1.0);
  CHECK(low.tp == 8);
  CHECK(low.fp == 40);
  CHECK(low.fn == 0);
  CHECK(low.tn == 0);

  std::vector<bool> short_gold(gold.begin(), gold.end() - 1);
  CHECK_THROWS_AS(evaluate_all_pairs(records, short_gold, 0.5), ValidationError);
}

TEST_CASE("aggregation over runs reports mean and population spread") {
  EvalReport a, b;
  a.method = b.method = "combined";
  a.supervision = b.supervision = "self-supervised";
  a.rows = {EvalRow{"recip_a", counts(2, 0, 0, 10), Metrics{1.0, 1.0, 1.0, 1.0}},
            EvalRow{"ALL", counts(2, 0, 0, 10), Metrics{1.0, 1.0, 1.0, 1.0}}};
  b.rows = {EvalRow{"recip_a", counts(1, 1, 1, 9), Metrics{0.5, 0.5, 0.5, 10.0 / 12.0}},
            EvalRow{"ALL", counts(1, 1, 1, 9), Metrics{0.5, 0.5, 0.5, 10.0 / 12.0}}};

  auto agg = aggregate_runs({a, b});
  CHECK(agg.runs == 2);
  REQUIRE(agg.rows.size() == 2);
  CHECK(agg.rows[0].language == "recip_a");
  CHECK(agg.rows[0].mean.f1 == doctest::Approx(0.75));
  CHECK(agg.rows[0].stddev.f1 == doctest::Approx(0.25));  // population std of {1, .5}
  CHECK(agg.rows[1].language == "ALL");

  SUBCASE("single run has zero spread") {
    auto solo = aggregate_runs({a});
    CHECK(solo.rows[0].stddev.f1 == 0.0);
    CHECK(solo.rows[0].mean.f1 == 1.0);
  }

  SUBCASE("three runs match a direct computation") {
    EvalReport c = a;
    c.rows[0].values.f1 = 0.8;
    c.rows[1].values.f1 = 0.8;
    auto three = aggregate_runs({a, b, c});
    double mean = (1.0 + 0.5 + 0.8) / 3.0;
    double var = ((1.0 - mean) * (1.0 - mean) + (0.5 - mean) * (0.5 - mean) +
                  (0.8 - mean) * (0.8 - mean)) /
                 3.0;
    CHECK(three.rows[0].mean.f1 == doctest::Approx(mean).epsilon(1e-12));
    CHECK(three.rows[0].stddev.f1 == doctest::Approx(std::sqrt(var)).epsilon(1e-9));
  }

  SUBCASE("mismatched shapes are refused") {
    EvalReport odd = b;
    odd.rows[0].language = "recip_x";
    CHECK_THROWS_AS(aggregate_runs({a, odd}), ValidationError);
    EvalReport fewer = b;
    fewer.rows.pop_back();
    CHECK_THROWS_AS(aggregate_runs({a, fewer}), ValidationError);
    CHECK_THROWS_AS(aggregate_runs({}), ValidationError);
  }
}

TEST_CASE("threshold sweeps show the precision/recall trade-off") {
  const auto& wl = demo_wordlist();
  auto records = synthetic_records();
  detector::DetectOptions options;

  std::vector<double> grid;
  for (int i = 0; i < 20; ++i) grid.push_back(i * (1.0 / 19.0));
  auto rows = sweep(wl, records, SweepAxis::kGlobalThreshold, grid, options);
  REQUIRE(rows.size() == grid.size());

  for (std::size_t i = 1; i < rows.size(); ++i) {
    CHECK(rows[i].values.recall <= rows[i - 1].values.recall + 1e-12);
    bool defined = rows[i].counts.tp + rows[i].counts.fp > 0;
    bool prev_defined = rows[i - 1].counts.tp + rows[i - 1].counts.fp > 0;
    if (defined && prev_defined) {
      CHECK(rows[i].values.precision >= rows[i - 1].values.precision - 1e-12);
    }
  }
  // Permissive end: everything flagged; strict end: nothing flagged.
  CHECK(rows.front().counts.tp + rows.front().counts.fp == 24);
  CHECK(rows.front().values.recall == doctest::Approx(1.0));
  CHECK(rows.back().counts.tp + rows.back().counts.fp == 0);

  SUBCASE("a clean separation yields a perfect middle row") {
    auto mid = sweep(wl, records, SweepAxis::kGlobalThreshold, {0.5}, options);
    CHECK(mid[0].values.f1 == doctest::Approx(1.0));
    CHECK(mid[0].counts.tp == 4);
    CHECK(mid[0].counts.tn == 20);
  }
}

TEST_CASE("weight sweeps recombine the cached components") {
  const auto& wl = demo_wordlist();
  auto records = synthetic_records();
  detector::DetectOptions options;

  // The synthetic scores are bimodal under any mixing weight, so every row
  // recovers the planted borrowings exactly.
  auto rows = sweep(wl, records, SweepAxis::kCosineWeight, {0.0, 0.25, 1.0}, options);
  REQUIRE(rows.size() == 3);
  for (const auto& row : rows) {
    CAPTURE(row.value);
    CHECK(row.values.f1 == doctest::Approx(1.0));
  }

  auto again = sweep(wl, records, SweepAxis::kCosineWeight, {0.0, 0.25, 1.0}, options);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    CHECK(again[i].values.f1 == rows[i].values.f1);
    CHECK(again[i].counts.tp == rows[i].counts.tp);
  }

  CHECK_THROWS_AS(sweep(wl, records, SweepAxis::kCosineWeight, {1.5}, options),
                  ValidationError);
  CHECK_THROWS_AS(sweep(wl, records, SweepAxis::kCosineWeight, {}, options),
                  ValidationError);
}

TEST_CASE("axis names round trip") {
  CHECK(axis_name(SweepAxis::kCosineWeight) == "cosine_weight");
  CHECK(axis_name(SweepAxis::kGlobalThreshold) == "global_threshold");
  CHECK(axis_from_name("global_threshold") == SweepAxis::kGlobalThreshold);
  CHECK_THROWS_AS(axis_from_name("girth"), ValidationError);
}

TEST_CASE("ablation overrides mutate the right knobs") {
  AblationSetup setup;

  apply_override(setup, "temperature", "0.25");
  CHECK(setup.train.temperature == 0.25);
  apply_override(setup, "learning_rate", "0.01");
  CHECK(setup.train.learning_rate == 0.01);
  apply_override(setup, "batch_size", "64");
  CHECK(setup.train.batch_size == 64);
  apply_override(setup, "epochs", "2");
  CHECK(setup.train.epochs == 2);
  apply_override(setup, "sampler", "random");
  CHECK(setup.train.sampler == trainer::Sampler::kRandom);
  apply_override(setup, "noise_prob", "0.75");
  CHECK(setup.augment.noise_prob == 0.75);
  apply_override(setup, "noise_sigma", "0.2");
  CHECK(setup.augment.noise_sigma == 0.2);
  apply_override(setup, "duplication_prob", "0.5");
  CHECK(setup.augment.duplication_prob == 0.5);
  apply_override(setup, "swap_prob", "0.25");
  CHECK(setup.augment.swap_prob == 0.25);
  apply_override(setup, "deletion_prob", "0.1");
  CHECK(setup.augment.deletion_prob == 0.1);
  apply_override(setup, "feature_dropout", "0.3");
  CHECK(setup.encoder.feature_dropout == 0.3);
  apply_override(setup, "attention_dropout", "0.2");
  CHECK(setup.encoder.attention_dropout == 0.2);
  apply_override(setup, "hidden_dim", "128");
  CHECK(setup.encoder.hidden_dim == 128);
  apply_override(setup, "n_layers", "4");
  CHECK(setup.encoder.n_layers == 4);
  apply_override(setup, "n_heads", "8");
  CHECK(setup.encoder.n_heads == 8);
  apply_override(setup, "ff_dim", "512");
  CHECK(setup.encoder.ff_dim == 512);
  apply_override(setup, "projection_head", "false");
  CHECK_FALSE(setup.encoder.use_projection_head);
  apply_override(setup, "encoding", "one_hot_ipa");
  CHECK(setup.encoder.encoding_mode == encoder::EncodingMode::kOneHotIpa);
  apply_override(setup, "cosine_weight", "0.5");
  CHECK(setup.detect.cosine_weight == 0.5);
  apply_override(setup, "cross_concept_penalty", "0.2");
  CHECK(setup.detect.cross_concept_penalty == 0.2);

  CHECK_THROWS_WITH_AS(apply_override(setup, "warp_factor", "9"),
                       doctest::Contains("warp_factor"), ValidationError);
  CHECK_THROWS_AS(apply_override(setup, "batch_size", "lots"), ValidationError);
}

TEST_CASE("ablation grids load from the bundled table") {
  auto grid = load_ablation_grid(kDataDir + "/ablation_grid.tsv");
  CHECK(grid.size() == 33);
  CHECK(grid[0].label == "Projection head removed");
  REQUIRE(grid[0].overrides.size() == 1);
  CHECK(grid[0].overrides[0].first == "projection_head");
  CHECK(grid[0].overrides[0].second == "false");

  // The dropout-only row switches several augmentations off at once.
  bool found_multi = false;
  for (const auto& cell : grid) found_multi |= cell.overrides.size() > 1;
  CHECK(found_multi);

  std::string bad = std::string("/tmp/borrowdet_grid_") + std::to_string(::getpid()) +
                    ".tsv";
  write_file(bad, "LABEL\tOVERRIDES\nBroken row\tno_equals_sign\n");
  CHECK_THROWS_AS(load_ablation_grid(bad), ValidationError);
  std::remove(bad.c_str());
}

TEST_CASE("ablation always reports the baseline row first") {
  const auto& wl = demo_wordlist();
  static auto pmi = pmialign::load_pmi(kDataDir + "/pmi.tsv");

  AblationSetup base;
  base.encoder.hidden_dim = 16;
  base.encoder.n_layers = 1;
  base.encoder.n_heads = 2;
  base.encoder.ff_dim = 24;
  base.train.batch_size = 24;
  base.train.epochs = 1;

  auto rows = ablate(wl, base, {}, &pmi, nullptr, 1);
  REQUIRE(rows.size() == 1);
  CHECK(rows[0].label == "baseline");
  CHECK(rows[0].overrides.empty());
  CHECK(rows[0].cosine_f1_mean >= 0.0);
  CHECK(rows[0].cosine_f1_mean <= 1.0);
  CHECK(rows[0].combined_f1_mean >= 0.0);
  CHECK(rows[0].combined_f1_mean <= 1.0);
  CHECK(rows[0].cosine_f1_std == 0.0);  // single run
  CHECK(rows[0].combined_f1_std == 0.0);
}

TEST_CASE("report writers emit the documented tables") {
  std::string dir = std::string(std::getenv("TMPDIR") ? std::getenv("TMPDIR") : "/tmp");
  std::string rpath = dir + "/borrowdet_report_" + std::to_string(::getpid()) + ".tsv";
  std::string wpath = dir + "/borrowdet_sweep_" + std::to_string(::getpid()) + ".tsv";
  std::string apath = dir + "/borrowdet_ablation_" + std::to_string(::getpid()) + ".tsv";

  EvalReport report;
  report.method = "combined";
  report.supervision = "self-supervised";
  report.rows = {EvalRow{"recip_a", counts(2, 0, 0, 10), Metrics{1, 1, 1, 1}},
                 EvalRow{"ALL", counts(2, 0, 0, 10), Metrics{1, 1, 1, 1}}};
  write_report(report, rpath);
  {
    std::ifstream in(rpath);
    std::string header, row;
    REQUIRE(std::getline(in, header));
    CHECK(header ==
          "METHOD\tSUPERVISION\tLANGUAGE\tPRECISION\tRECALL\tF1\tACCURACY\t"
          "STD_PRECISION\tSTD_RECALL\tSTD_F1\tSTD_ACCURACY");
    REQUIRE(std::getline(in, row));
    CHECK(row.find("combined\tself-supervised\trecip_a\t1\t1\t1\t1") == 0);
  }

  SweepRow sr;
  sr.value = 0.25;
  sr.counts = counts(4, 0, 0, 20);
  sr.values = Metrics{1, 1, 1, 1};
  write_sweep_table(SweepAxis::kCosineWeight, {sr}, wpath);
  {
    std::ifstream in(wpath);
    std::string header, row;
    REQUIRE(std::getline(in, header));
    CHECK(header == "AXIS\tVALUE\tPRECISION\tRECALL\tF1\tACCURACY\tTP\tFP\tFN\tTN");
    REQUIRE(std::getline(in, row));
    CHECK(row.find("cosine_weight\t0.25\t1\t1\t1\t1\t4\t0\t0\t20") == 0);
  }

  AblationRow ar;
  ar.label = "baseline";
  ar.cosine_f1_mean = 0.8;
  ar.cosine_f1_std = 0.0;
  ar.combined_f1_mean = 0.9;
  ar.combined_f1_std = 0.0;
  AblationRow br;
  br.label = "No projection head";
  br.overrides = "projection_head=false";
  br.cosine_f1_mean = 0.7;
  br.combined_f1_mean = 0.75;
  write_ablation_table({ar, br}, apath);
  {
    std::ifstream in(apath);
    std::string header, r1, r2;
    REQUIRE(std::getline(in, header));
    CHECK(header ==
          "LABEL\tOVERRIDES\tCOSINE_F1\tCOSINE_F1_STD\tCOMBINED_F1\tCOMBINED_F1_STD");
    REQUIRE(std::getline(in, r1));
    CHECK(r1.find("baseline\t") == 0);
    REQUIRE(std::getline(in, r2));
    CHECK(r2.find("No projection head\tprojection_head=false\t0.7") == 0);
  }

  std::remove(rpath.c_str());
  std::remove(wpath.c_str());
  std::remove(apath.c_str());
}
