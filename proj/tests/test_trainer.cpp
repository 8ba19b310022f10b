#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "borrowdet/common.hpp"
#include "borrowdet/corpus.hpp"
#include "borrowdet/encoder.hpp"
#include "borrowdet/rng.hpp"
#include "borrowdet/trainer.hpp"

using namespace borrowdet;
using namespace borrowdet::trainer;

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

std::vector<phon::Segment> segs(const std::string& letters) {
  std::vector<phon::Segment> out(letters.size());
  for (std::size_t i = 0; i < letters.size(); ++i) out[i].symbol = letters.substr(i, 1);
  return out;
}

std::string letters(const std::vector<phon::Segment>& s) {
  std::string out;
  for (const auto& seg : s) out += seg.symbol;
  return out;
}

AugmentConfig quiet() {
  AugmentConfig cfg;
  cfg.noise_prob = 0.0;
  cfg.duplication_prob = 0.0;
  cfg.swap_prob = 0.0;
  cfg.deletion_prob = 0.0;
  return cfg;
}

}  // namespace

TEST_CASE("augmentation edits fire per the configured probabilities") {
  SUBCASE("all probabilities zero is the identity") {
    Rng rng(1);
    auto out = augment(segs("abcd"), quiet(), rng);
    CHECK(letters(out) == "abcd");
  }

  SUBCASE("certain duplication adds exactly one adjacent copy") {
    auto cfg = quiet();
    cfg.duplication_prob = 1.0;
    Rng rng(2);
    auto out = augment(segs("abc"), cfg, rng);
    REQUIRE(out.size() == 4);
    // Some position repeats its neighbor; the rest is the original order.
    bool found = false;
    for (std::size_t i = 0; i + 1 < out.size() && !found; ++i) {
      if (out[i].symbol == out[i + 1].symbol) {
        auto copy = out;
        copy.erase(copy.begin() + static_cast<std::ptrdiff_t>(i));
        found = letters(copy) == "abc";
      }
    }
    CHECK(found);
  }

  SUBCASE("certain deletion removes exactly one segment") {
    auto cfg = quiet();
    cfg.deletion_prob = 1.0;
    Rng rng(3);
    auto out = augment(segs("abcd"), cfg, rng);
    CHECK(out.size() == 3);
  }

  SUBCASE("certain swap permutes one adjacent pair") {
    auto cfg = quiet();
    cfg.swap_prob = 1.0;
    Rng rng(4);
    auto out = augment(segs("abcd"), cfg, rng);
    REQUIRE(out.size() == 4);
    std::string got = letters(out);
    CHECK(got != "abcd");
    std::string sorted = got;
    std::sort(sorted.begin(), sorted.end());
    CHECK(sorted == "abcd");  // same multiset
    int displaced = 0;
    for (std::size_t i = 0; i < 4; ++i) displaced += got[i] != "abcd"[i];
    CHECK(displaced == 2);
  }

  SUBCASE("short forms are protected from destructive edits") {
    auto cfg = quiet();
    cfg.swap_prob = 1.0;
    cfg.deletion_prob = 1.0;
    Rng rng(5);
    auto out = augment(segs("abc"), cfg, rng);
    CHECK(letters(out) == "abc");
  }

  SUBCASE("duplication can push a form over the length gate") {
    auto cfg = quiet();
    cfg.duplication_prob = 1.0;
    cfg.deletion_prob = 1.0;
    Rng rng(6);
    // len 3 -> dup to 4 -> deletion now allowed -> back to 3.
    auto out = augment(segs("abc"), cfg, rng);
    CHECK(out.size() == 3);
  }

  SUBCASE("deterministic under the rng state") {
    auto cfg = quiet();
    cfg.duplication_prob = 0.5;
    cfg.swap_prob = 0.5;
    cfg.deletion_prob = 0.5;
    Rng a(9), b(9);
    for (int i = 0; i < 20; ++i) {
      CHECK(letters(augment(segs("abcde"), cfg, a)) ==
            letters(augment(segs("abcde"), cfg, b)));
    }
  }

  SUBCASE("validation") {
    Rng rng(1);
    CHECK_THROWS_AS(augment({}, quiet(), rng), ValidationError);
    auto bad = quiet();
    bad.duplication_prob = 1.5;
    CHECK_THROWS_AS(augment(segs("ab"), bad, rng), ValidationError);
    bad = quiet();
    bad.noise_sigma = -0.1;
    CHECK_THROWS_AS(augment(segs("ab"), bad, rng), ValidationError);
  }
}

TEST_CASE("batching partitions the wordlist and balances concepts") {
  const auto& wl = demo_wordlist();

  SUBCASE("partition, sizes within one") {
    for (int batch_size : {16, 32}) {
      auto batches = make_batches(wl, batch_size, Sampler::kConceptBalanced, 7);
      CHECK(batches.size() == (wl.forms.size() + batch_size - 1) / batch_size);
      std::set<std::string> seen;
      std::size_t max_size = 0, min_size = wl.forms.size();
      for (const auto& batch : batches) {
        max_size = std::max(max_size, batch.size());
        min_size = std::min(min_size, batch.size());
        for (const auto* form : batch) CHECK(seen.insert(form->id).second);
      }
      CHECK(seen.size() == wl.forms.size());
      CHECK(max_size - min_size <= 1);
    }
  }

  SUBCASE("concept-balanced batches spread same-concept forms") {
    // 12 concepts x 4 forms over 3 batches: no batch may hold more than
    // ceil(4/3) = 2 forms of one concept.
    auto batches = make_batches(wl, 16, Sampler::kConceptBalanced, 7);
    REQUIRE(batches.size() == 3);
    for (const auto& batch : batches) {
      std::map<std::string, int> per_concept;
      for (const auto* form : batch) ++per_concept[form->concept_id];
      for (const auto& [concept_id, count] : per_concept) {
        CAPTURE(concept_id);
        CHECK(count <= 2);
      }
    }
  }

  SUBCASE("both samplers are seed-deterministic") {
    for (auto sampler : {Sampler::kConceptBalanced, Sampler::kRandom}) {
      auto a = make_batches(wl, 16, sampler, 11);
      auto b = make_batches(wl, 16, sampler, 11);
      REQUIRE(a.size() == b.size());
      for (std::size_t i = 0; i < a.size(); ++i) {
        REQUIRE(a[i].size() == b[i].size());
        for (std::size_t j = 0; j < a[i].size(); ++j) CHECK(a[i][j] == b[i][j]);
      }
    }
  }

  SUBCASE("random sampler partitions too") {
    auto batches = make_batches(wl, 20, Sampler::kRandom, 3);
    std::set<std::string> seen;
    for (const auto& batch : batches)
      for (const auto* form : batch) CHECK(seen.insert(form->id).second);
    CHECK(seen.size() == 48);
  }

  SUBCASE("errors") {
    CHECK_THROWS_WITH_AS(make_batches(wl, 49, Sampler::kConceptBalanced, 1),
                         doctest::Contains("exceeds"), ValidationError);
    CHECK_THROWS_AS(make_batches(wl, 1, Sampler::kConceptBalanced, 1), ValidationError);
  }
}

TEST_CASE("view batches interleave two augmented copies per form") {
  const auto& wl = demo_wordlist();
  auto enc = encoder::InputEncoder::feature_vectors();
  FormBatch forms = {wl.by_id("recip_a_dog"), wl.by_id("recip_b_fire"),
                     wl.by_id("donorese_arm_1")};

  SUBCASE("structure and pairing") {
    auto cfg = quiet();
    Rng rng(5);
    auto batch = make_view_batch(forms, enc, cfg, rng);
    CHECK(batch.size == 6);
    for (std::size_t i = 0; i < 3; ++i) {
      CHECK(batch.form_ids[2 * i] == forms[i]->id);
      CHECK(batch.form_ids[2 * i + 1] == forms[i]->id);
      CHECK(batch.concepts[2 * i] == batch.concepts[2 * i + 1]);
    }
    // No edits, no noise: the paired views encode identically.
    for (Eigen::Index r = 0; r < batch.size; r += 2) {
      CHECK(batch.lengths[static_cast<std::size_t>(r)] ==
            batch.lengths[static_cast<std::size_t>(r + 1)]);
      for (Eigen::Index t = 0; t < batch.max_len; ++t) {
        CHECK((batch.inputs.row(r * batch.max_len + t) -
               batch.inputs.row((r + 1) * batch.max_len + t))
                  .cwiseAbs()
                  .maxCoeff() == 0.0f);
      }
    }
    CHECK(std::all_of(batch.noise_flags.begin(), batch.noise_flags.end(),
                      [](std::uint8_t f) { return f == 0; }));
  }

  SUBCASE("noise flags follow noise_prob") {
    auto cfg = quiet();
    cfg.noise_prob = 1.0;
    cfg.noise_sigma = 0.25;
    Rng rng(5);
    auto batch = make_view_batch(forms, enc, cfg, rng);
    CHECK(std::all_of(batch.noise_flags.begin(), batch.noise_flags.end(),
                      [](std::uint8_t f) { return f == 1; }));
    CHECK(batch.noise_sigma == 0.25);
  }
}

TEST_CASE("contrastive loss identities and gradients") {
  using Mat = encoder::Matrix<double>;

  SUBCASE("a single pair has zero loss and zero gradient") {
    Mat proj(2, 3);
    proj << 0.3, -1.2, 0.4, 0.9, 0.1, -0.5;
    auto result = nt_xent_loss(proj, 0.05);
    CHECK(result.loss == 0.0);  // only the partner is in the denominator
    CHECK(result.grad.cwiseAbs().maxCoeff() == doctest::Approx(0.0).epsilon(1e-12));
  }

  SUBCASE("hand-computed two-pair case") {
    // Pairs (e1, e1) and (e2, e2): each view's positive similarity is 1,
    // the two cross similarities are 0.
    Mat proj(4, 2);
    proj << 1, 0, 1, 0, 0, 1, 0, 1;
    double tau = 0.5;
    auto result = nt_xent_loss(proj, tau);
    double e2 = std::exp(1.0 / tau);
    double expected = -std::log(e2 / (e2 + 2.0));
    CHECK(result.loss == doctest::Approx(expected).epsilon(1e-12));
  }

  SUBCASE("very high temperature approaches log(2N - 1)") {
    Rng rng(8);
    for (Eigen::Index n : {2, 8, 64}) {
      Mat proj(2 * n, 5);
      for (Eigen::Index r = 0; r < proj.rows(); ++r)
        for (Eigen::Index c = 0; c < proj.cols(); ++c)
          proj(r, c) = rng.uniform() * 2.0 - 1.0;
      auto result = nt_xent_loss(proj, 1e6);
      CHECK(result.loss ==
            doctest::Approx(std::log(static_cast<double>(2 * n - 1))).epsilon(1e-3));
    }
  }

  SUBCASE("gradient matches finite differences") {
    Rng rng(13);
    Mat proj(6, 4);
    for (Eigen::Index r = 0; r < proj.rows(); ++r)
      for (Eigen::Index c = 0; c < proj.cols(); ++c)
        proj(r, c) = rng.uniform() * 2.0 - 1.0;
    auto result = nt_xent_loss(proj, 0.7);

    const double h = 1e-6;
    for (Eigen::Index r = 0; r < proj.rows(); ++r) {
      for (Eigen::Index c = 0; c < proj.cols(); ++c) {
        double saved = proj(r, c);
        proj(r, c) = saved + h;
        double up = nt_xent_loss(proj, 0.7).loss;
        proj(r, c) = saved - h;
        double down = nt_xent_loss(proj, 0.7).loss;
        proj(r, c) = saved;
        double fd = (up - down) / (2 * h);
        CHECK(result.grad(r, c) == doctest::Approx(fd).epsilon(1e-5));
      }
    }
  }

  SUBCASE("validation") {
    Mat odd(3, 2);
    odd.setOnes();
    CHECK_THROWS_AS(nt_xent_loss(odd, 0.1), ValidationError);
    Mat zero_row(2, 2);
    zero_row << 1, 0, 0, 0;
    CHECK_THROWS_AS(nt_xent_loss(zero_row, 0.1), ValidationError);
    Mat fine(2, 2);
    fine.setOnes();
    CHECK_THROWS_AS(nt_xent_loss(fine, 0.0), ValidationError);
  }
}

TEST_CASE("optimizer steps match the documented update rule") {
  encoder::EncoderConfig cfg;
  cfg.input_dim = 4;
  cfg.hidden_dim = 4;
  cfg.n_layers = 1;
  cfg.n_heads = 2;
  cfg.ff_dim = 4;

  auto params = encoder::make_zero_params<double>(cfg);
  auto grads = encoder::make_zero_params<double>(cfg);
  auto state = make_adamw_state<double>(cfg);
  AdamWConfig opt;
  opt.learning_rate = 0.1;
  opt.weight_decay = 0.01;

  params.embed_w(0, 0) = 0.5;
  grads.embed_w(0, 0) = 0.2;
  params.embed_w(1, 1) = 0.3;  // zero gradient: decay only

  adamw_step(params, grads, state, opt);
  CHECK(state.step == 1);

  // Decay shrinks first, then the bias-corrected moment update applies:
  // m-hat = g, v-hat = g^2, so the step is almost exactly lr.
  double decayed = 0.5 * (1.0 - 0.1 * 0.01);
  double update = 0.1 * (0.2 / (0.2 + 1e-8));
  CHECK(params.embed_w(0, 0) == doctest::Approx(decayed - update).epsilon(1e-12));
  CHECK(params.embed_w(1, 1) == doctest::Approx(0.3 * (1.0 - 0.001)).epsilon(1e-12));

  SUBCASE("second step keeps the bias correction exact for constant g") {
    double before = params.embed_w(0, 0);
    adamw_step(params, grads, state, opt);
    CHECK(state.step == 2);
    // With a constant gradient, m-hat/sqrt(v-hat) stays g/|g| = 1.
    double expected = before * (1.0 - 0.001) - 0.1 * (0.2 / (0.2 + 1e-8));
    CHECK(params.embed_w(0, 0) == doctest::Approx(expected).epsilon(1e-9));
  }

  SUBCASE("non-finite gradients are refused by name") {
    grads.embed_w(0, 0) = std::numeric_limits<double>::infinity();
    CHECK_THROWS_WITH_AS(adamw_step(params, grads, state, opt),
                         doctest::Contains("embed.weight"), std::runtime_error);
  }
}

TEST_CASE("training on the bundled demo list is reproducible") {
  const auto& wl = demo_wordlist();

  encoder::EncoderConfig enc_cfg;
  enc_cfg.hidden_dim = 16;
  enc_cfg.n_layers = 1;
  enc_cfg.n_heads = 2;
  enc_cfg.ff_dim = 24;

  TrainConfig train_cfg;
  train_cfg.batch_size = 24;
  train_cfg.epochs = 1;
  train_cfg.seed = 5;

  AugmentConfig aug;

  auto first = train(wl, enc_cfg, train_cfg, aug);
  auto second = train(wl, enc_cfg, train_cfg, aug);
  CHECK(first.params.content_hash() == second.params.content_hash());
  REQUIRE(first.log.size() == 2);  // ceil(48/24) batches x 1 epoch
  CHECK(first.log[0].epoch == 1);
  CHECK(std::isfinite(first.log[0].loss));
  REQUIRE(second.log.size() == first.log.size());
  CHECK(second.log.back().loss == first.log.back().loss);

  TrainConfig other = train_cfg;
  other.seed = 6;
  auto third = train(wl, enc_cfg, other, aug);
  CHECK(third.params.content_hash() != first.params.content_hash());

  SUBCASE("zero epochs returns the untouched initialization") {
    TrainConfig zero = train_cfg;
    zero.epochs = 0;
    auto result = train(wl, enc_cfg, zero, aug);
    CHECK(result.log.empty());
    CHECK(result.params.count() == encoder::param_count(result.params.config));
  }
}

TEST_CASE("train log serializes one row per step") {
  std::vector<TrainLogEntry> log = {{1, 1, 0.5}, {2, 1, 0.25}};
  std::string path = std::string("/tmp/borrowdet_trainlog_") +
                     std::to_string(::getpid()) + ".tsv";
  write_train_log(log, path);
  std::ifstream in(path);
  std::string header, r1, r2;
  REQUIRE(std::getline(in, header));
  CHECK(header == "STEP\tEPOCH\tLOSS");
  REQUIRE(std::getline(in, r1));
  CHECK(r1.find("1\t1\t0.5") == 0);
  REQUIRE(std::getline(in, r2));
  CHECK(r2.find("2\t1\t0.25") == 0);
  std::remove(path.c_str());
}

TEST_CASE("sampler names round trip") {
  CHECK(sampler_name(Sampler::kConceptBalanced) == "concept_balanced");
  CHECK(sampler_name(Sampler::kRandom) == "random");
  CHECK(sampler_from_name("random") == Sampler::kRandom);
  CHECK_THROWS_AS(sampler_from_name("bogus"), ValidationError);
}
