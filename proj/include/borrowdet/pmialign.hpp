#pragma once

#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "borrowdet/phon.hpp"

namespace borrowdet::pmialign {

// Symmetric log-odds correspondence scores over an ASJP-style alphabet of
// single-character symbols, with affine gap parameters (both <= 0).
struct PmiMatrix {
  std::vector<std::string> symbols;
  std::vector<double> scores;  // symbols.size()^2, row-major
  double gap_open = 0.0;
  double gap_extend = 0.0;
  std::unordered_map<char, int> index;

  double score(int a, int b) const { return scores[static_cast<std::size_t>(a) * symbols.size() + b]; }
  int symbol_index(char c) const {
    auto it = index.find(c);
    return it == index.end() ? -1 : it->second;
  }
};

// Builds a validated matrix from in-memory data (tests, toy alphabets).
PmiMatrix make_matrix(std::vector<std::string> symbols, std::vector<double> scores,
                      double gap_open, double gap_extend);

// Resource file: header row of the 41 ASJP symbols, 41 score rows, footer
// lines `#gap_open <v>` and `#gap_extend <v>`.
PmiMatrix load_pmi(const std::string& path);

// Maximal global alignment score under the three-state affine-gap
// recurrence. A gap run of length L costs gap_open + (L-1)*gap_extend.
double align_score(std::string_view a, std::string_view b, const PmiMatrix& m);

struct AlignmentColumn {
  int a_index = -1;  // -1 marks a gap
  int b_index = -1;
  double score = 0.0;
};

struct Alignment {
  std::vector<AlignmentColumn> columns;
  double score = 0.0;
};

// Same optimum as align_score, with a deterministic traceback.
Alignment align_trace(std::string_view a, std::string_view b, const PmiMatrix& m);

struct ScaledScores {
  double min = 0.0;
  double max = 0.0;
  std::vector<double> scaled;  // parallel to the input; in [0,1]
};

// Affine min-max map onto [0,1]; an all-equal collection maps to 0.5.
ScaledScores scale_scores(const std::vector<double>& raw);

enum class NedNorm { kMaxLength, kYujianBo };

// 1 - normalized segment-level Levenshtein distance.
double ned_similarity(const std::vector<phon::Segment>& a,
                      const std::vector<phon::Segment>& b,
                      NedNorm norm = NedNorm::kMaxLength);
double ned_similarity(const std::vector<std::string>& a, const std::vector<std::string>& b,
                      NedNorm norm = NedNorm::kMaxLength);

}  // namespace borrowdet::pmialign
