#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "borrowdet/common.hpp"
#include "borrowdet/phon.hpp"
#include "borrowdet/pmialign.hpp"

using namespace borrowdet;
using namespace borrowdet::pmialign;

namespace {

const std::string kDataDir = BORROWDET_DATA_DIR;

// Tiny alphabet used for hand-checkable alignments: match +2 on the
// diagonal, a/b mildly confusable, everything else -1.
PmiMatrix toy_matrix(double gap_open = -3.0, double gap_extend = -1.0) {
  return make_matrix({"a", "b", "c"},
                     {2.0, 0.5, -1.0,   //
                      0.5, 2.0, -1.0,   //
                      -1.0, -1.0, 2.0},
                     gap_open, gap_extend);
}

// Reference alignment scorer: plain recursion over the three affine states,
// memo-free (fine for the short strings used here).
constexpr double kNegInf = -1e18;

double brute_affine(const std::string& a, const std::string& b, const PmiMatrix& m) {
  struct Rec {
    const std::string& a;
    const std::string& b;
    const PmiMatrix& m;
    // state: 0 = free, 1 = gap in b open, 2 = gap in a open
    double best(std::size_t i, std::size_t j, int state) const {
      if (i == a.size() && j == b.size()) return 0.0;
      double out = kNegInf;
      if (i < a.size() && j < b.size()) {
        int ia = m.symbol_index(a[i]);
        int ib = m.symbol_index(b[j]);
        out = std::max(out, m.score(ia, ib) + best(i + 1, j + 1, 0));
      }
      if (i < a.size()) {
        double open = state == 1 ? m.gap_extend : m.gap_open;
        out = std::max(out, open + best(i + 1, j, 1));
      }
      if (j < b.size()) {
        double open = state == 2 ? m.gap_extend : m.gap_open;
        out = std::max(out, open + best(i, j + 1, 2));
      }
      return out;
    }
  };
  return Rec{a, b, m}.best(0, 0, 0);
}

}  // namespace

TEST_CASE("bundled PMI matrix is a symmetric 41-symbol table") {
  auto m = load_pmi(kDataDir + "/pmi.tsv");
  REQUIRE(m.symbols.size() == 41);
  CHECK(m.symbols == phon::asjp_inventory());
  CHECK(m.gap_open < 0.0);
  CHECK(m.gap_extend < 0.0);
  CHECK(m.gap_open <= m.gap_extend);

  const int n = static_cast<int>(m.symbols.size());
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      CHECK(m.score(i, j) == doctest::Approx(m.score(j, i)).epsilon(1e-12));
    }
    // Identity should out-score confusion for a diagonal-dominant table.
    CHECK(m.score(i, i) > 0.0);
  }
  CHECK(m.symbol_index('p') == 0);
  CHECK(m.symbol_index('o') == 40);
  CHECK(m.symbol_index('@') == -1);
}

TEST_CASE("make_matrix validates its inputs") {
  CHECK_THROWS_AS(make_matrix({"a"}, {1.0, 2.0}, -1, -1), ValidationError);
  CHECK_THROWS_AS(make_matrix({"a", "a"}, std::vector<double>(4, 1.0), -1, -1),
                  ValidationError);
  CHECK_THROWS_AS(make_matrix({"a"}, {1.0}, 1.0, -1), ValidationError);  // positive gap
  CHECK_THROWS_AS(make_matrix({"ab"}, {1.0}, -1, -1), ValidationError);  // multi-char
}

TEST_CASE("alignment scores match hand-worked cases") {
  auto m = toy_matrix();

  CHECK(align_score("a", "a", m) == doctest::Approx(2.0));
  CHECK(align_score("a", "b", m) == doctest::Approx(0.5));
  CHECK(align_score("abc", "abc", m) == doctest::Approx(6.0));
  // One insertion: match a, match b, gap-open against c.
  CHECK(align_score("ab", "abc", m) == doctest::Approx(2.0 + 2.0 - 3.0));
  // Gap run of 2 costs open + extend, cheaper than two separate opens.
  CHECK(align_score("a", "abb", m) == doctest::Approx(2.0 - 3.0 - 1.0));
  // Mismatch beats double gap here: c~a scores -1 > -6.
  CHECK(align_score("c", "a", m) == doctest::Approx(-1.0));

  CHECK_THROWS_WITH_AS(align_score("az", "a", m), doctest::Contains("z"),
                       ValidationError);
  CHECK_THROWS_AS(align_score("", "a", m), ValidationError);
  CHECK_THROWS_AS(align_score("a", "", m), ValidationError);
}

TEST_CASE("alignment scores agree with a brute-force recursion") {
  auto m = toy_matrix(-2.5, -0.75);
  const std::string alphabet = "abc";
  std::vector<std::string> words = {""};
  for (int len = 1; len <= 3; ++len) {
    std::vector<std::string> next;
    for (const auto& w : words)
      if (w.size() == static_cast<std::size_t>(len) - 1)
        for (char c : alphabet) next.push_back(w + c);
    words.insert(words.end(), next.begin(), next.end());
  }
  for (const auto& a : words) {
    if (a.empty()) continue;
    for (const auto& b : words) {
      if (b.empty()) continue;
      CAPTURE(a);
      CAPTURE(b);
      CHECK(align_score(a, b, m) == doctest::Approx(brute_affine(a, b, m)).epsilon(1e-9));
    }
  }
}

TEST_CASE("traceback columns reproduce the optimal score") {
  auto m = toy_matrix();
  for (const auto& [a, b] : std::vector<std::pair<std::string, std::string>>{
           {"abc", "abc"}, {"ab", "abc"}, {"a", "abb"}, {"b", "a"}, {"cab", "ba"}}) {
    CAPTURE(a);
    CAPTURE(b);
    auto tr = align_trace(a, b, m);
    CHECK(tr.score == doctest::Approx(align_score(a, b, m)));

    double col_sum = 0.0;
    std::string ra, rb;
    for (const auto& col : tr.columns) {
      col_sum += col.score;
      CHECK((col.a_index >= 0 || col.b_index >= 0));
      if (col.a_index >= 0) ra += a[static_cast<std::size_t>(col.a_index)];
      if (col.b_index >= 0) rb += b[static_cast<std::size_t>(col.b_index)];
    }
    CHECK(col_sum == doctest::Approx(tr.score));
    CHECK(ra == a);  // every input position appears exactly once, in order
    CHECK(rb == b);
  }
}

TEST_CASE("min-max scaling maps onto [0,1] with the endpoints pinned") {
  auto s = scale_scores({-2.0, 0.0, 6.0});
  CHECK(s.min == -2.0);
  CHECK(s.max == 6.0);
  REQUIRE(s.scaled.size() == 3);
  CHECK(s.scaled[0] == doctest::Approx(0.0));
  CHECK(s.scaled[1] == doctest::Approx(0.25));
  CHECK(s.scaled[2] == doctest::Approx(1.0));

  auto flat = scale_scores({3.0, 3.0, 3.0});
  for (double v : flat.scaled) CHECK(v == doctest::Approx(0.5));

  CHECK_THROWS_AS(scale_scores({}), ValidationError);
}

TEST_CASE("normalized edit-distance similarity") {
  auto segs = [](std::initializer_list<const char*> symbols) {
    std::vector<std::string> out;
    for (auto* s : symbols) out.emplace_back(s);
    return out;
  };

  CHECK(ned_similarity(segs({"k", "a", "n"}), segs({"k", "a", "n"})) ==
        doctest::Approx(1.0));
  CHECK(ned_similarity(segs({"a", "b"}), segs({"c", "d"})) == doctest::Approx(0.0));
  // One substitution over max length 3.
  CHECK(ned_similarity(segs({"k", "a", "n"}), segs({"k", "o", "n"})) ==
        doctest::Approx(1.0 - 1.0 / 3.0));
  // One insertion over max length 4.
  CHECK(ned_similarity(segs({"k", "a", "n"}), segs({"k", "a", "n", "u"})) ==
        doctest::Approx(0.75));
  CHECK_THROWS_AS(ned_similarity(segs({}), segs({"a"})), ValidationError);

  // Yujian-Bo normalization stays in [0,1] and still rewards identity.
  double yb_same = ned_similarity(segs({"k", "a"}), segs({"k", "a"}), NedNorm::kYujianBo);
  double yb_diff = ned_similarity(segs({"k", "a"}), segs({"u", "o"}), NedNorm::kYujianBo);
  CHECK(yb_same == doctest::Approx(1.0));
  CHECK(yb_diff >= 0.0);
  CHECK(yb_diff < yb_same);

  // Segment overload matches the string overload on the same symbols.
  std::vector<phon::Segment> sa(3), sb(3);
  sa[0].symbol = "k"; sa[1].symbol = "a"; sa[2].symbol = "n";
  sb[0].symbol = "k"; sb[1].symbol = "o"; sb[2].symbol = "n";
  CHECK(ned_similarity(sa, sb) == doctest::Approx(1.0 - 1.0 / 3.0));
}

TEST_CASE("ned distances agree with a reference Levenshtein") {
  auto lev = [](const std::string& a, const std::string& b) {
    std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
    for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = j;
    for (std::size_t i = 1; i <= a.size(); ++i) {
      cur[0] = i;
      for (std::size_t j = 1; j <= b.size(); ++j) {
        std::size_t sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
        cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
      }
      std::swap(prev, cur);
    }
    return prev[b.size()];
  };

  const std::vector<std::string> words = {"a",    "ab",   "abc", "acb",  "bca",
                                          "aabb", "abab", "ccc", "abcabc"};
  for (const auto& a : words) {
    for (const auto& b : words) {
      std::vector<std::string> sa, sb;
      for (char c : a) sa.emplace_back(1, c);
      for (char c : b) sb.emplace_back(1, c);
      double expected = 1.0 - static_cast<double>(lev(a, b)) /
                                  static_cast<double>(std::max(a.size(), b.size()));
      CAPTURE(a);
      CAPTURE(b);
      CHECK(ned_similarity(sa, sb) == doctest::Approx(expected).epsilon(1e-12));
    }
  }
}

TEST_CASE("pmi loader rejects malformed resources") {
  CHECK_THROWS_AS(load_pmi("/nonexistent/pmi.tsv"), std::exception);
}
