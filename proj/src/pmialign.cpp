#include "borrowdet/pmialign.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "borrowdet/common.hpp"

namespace borrowdet::pmialign {

namespace {
constexpr double kNegInf = -std::numeric_limits<double>::infinity();

std::vector<int> to_indices(std::string_view word, const PmiMatrix& m) {
  std::vector<int> out;
  out.reserve(word.size());
  for (char c : word) {
    int idx = m.symbol_index(c);
    if (idx < 0)
      throw ValidationError(std::string("symbol '") + c + "' not in the PMI matrix");
    out.push_back(idx);
  }
  return out;
}
}  // namespace

PmiMatrix make_matrix(std::vector<std::string> symbols, std::vector<double> scores,
                      double gap_open, double gap_extend) {
  PmiMatrix m;
  m.symbols = std::move(symbols);
  m.scores = std::move(scores);
  m.gap_open = gap_open;
  m.gap_extend = gap_extend;
  const std::size_t n = m.symbols.size();
  if (m.scores.size() != n * n)
    throw ValidationError("PMI matrix dimension mismatch: " + std::to_string(n) +
                          " symbols but " + std::to_string(m.scores.size()) + " scores");
  if (gap_open > 0.0 || gap_extend > 0.0)
    throw ValidationError("gap parameters must be <= 0");
  for (std::size_t i = 0; i < n; ++i) {
    if (m.symbols[i].size() != 1)
      throw ValidationError("PMI symbols must be single characters, got '" + m.symbols[i] +
                            "'");
    char c = m.symbols[i][0];
    if (m.index.count(c))
      throw ValidationError(std::string("duplicate PMI symbol '") + c + "'");
    m.index.emplace(c, static_cast<int>(i));
  }
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      if (std::abs(m.scores[i * n + j] - m.scores[j * n + i]) > 1e-6)
        throw ValidationError("PMI matrix asymmetric at (" + m.symbols[i] + "," +
                              m.symbols[j] + ")");
  return m;
}

PmiMatrix load_pmi(const std::string& path) {
  auto lines = read_lines(path);
  if (lines.empty()) throw ValidationError(path + ": empty PMI file");
  auto symbols = split(lines[0], '\t');
  const std::size_t n = symbols.size();
  if (n != phon::asjp_inventory().size())
    throw ValidationError(path + ": expected " +
                          std::to_string(phon::asjp_inventory().size()) +
                          " header symbols, got " + std::to_string(n));
  for (const auto& s : symbols)
    if (!phon::is_asjp_symbol(s))
      throw ValidationError(path + ": '" + s + "' is not an ASJP symbol");

  std::vector<double> scores;
  scores.reserve(n * n);
  bool have_open = false, have_extend = false;
  double gap_open = 0.0, gap_extend = 0.0;
  std::size_t rows = 0;
  for (std::size_t li = 1; li < lines.size(); ++li) {
    const auto& line = lines[li];
    if (line.empty()) continue;
    auto where = path + ":" + std::to_string(li + 1);
    if (line[0] == '#') {
      auto parts = split(line, ' ');
      if (parts.size() == 1) parts = split(line, '\t');
      if (parts.size() != 2)
        throw ValidationError(where + ": expected '#gap_open <v>' or '#gap_extend <v>'");
      if (parts[0] == "#gap_open") {
        gap_open = parse_double(parts[1], where);
        have_open = true;
      } else if (parts[0] == "#gap_extend") {
        gap_extend = parse_double(parts[1], where);
        have_extend = true;
      } else {
        throw ValidationError(where + ": unknown footer line '" + parts[0] + "'");
      }
      continue;
    }
    auto cols = split(line, '\t');
    if (cols.size() != n)
      throw ValidationError(where + ": expected " + std::to_string(n) + " scores, got " +
                            std::to_string(cols.size()));
    if (++rows > n)
      throw ValidationError(where + ": more than " + std::to_string(n) + " score rows");
    for (const auto& cell : cols) scores.push_back(parse_double(cell, where));
  }
  if (rows != n)
    throw ValidationError(path + ": expected " + std::to_string(n) + " score rows, got " +
                          std::to_string(rows));
  if (!have_open || !have_extend)
    throw ValidationError(path + ": missing #gap_open / #gap_extend footer");
  return make_matrix(std::move(symbols), std::move(scores), gap_open, gap_extend);
}

double align_score(std::string_view a, std::string_view b, const PmiMatrix& m) {
  if (a.empty() || b.empty())
    throw ValidationError("align_score requires non-empty strings");
  auto ia = to_indices(a, m);
  auto ib = to_indices(b, m);
  const std::size_t n = ia.size(), mm = ib.size();
  const double open = m.gap_open, ext = m.gap_extend;

  // Three states per cell: diag match (M), gap in a (X, consumes b), gap in
  // b (Y, consumes a). Rolling rows.
  std::vector<double> Mprev(mm + 1), Xprev(mm + 1), Yprev(mm + 1);
  std::vector<double> Mcur(mm + 1), Xcur(mm + 1), Ycur(mm + 1);
  Mprev[0] = 0.0;
  Xprev[0] = Yprev[0] = kNegInf;
  for (std::size_t j = 1; j <= mm; ++j) {
    Mprev[j] = Yprev[j] = kNegInf;
    Xprev[j] = open + static_cast<double>(j - 1) * ext;
  }
  for (std::size_t i = 1; i <= n; ++i) {
    Mcur[0] = Xcur[0] = kNegInf;
    Ycur[0] = open + static_cast<double>(i - 1) * ext;
    for (std::size_t j = 1; j <= mm; ++j) {
      double best_prev = std::max({Mprev[j - 1], Xprev[j - 1], Yprev[j - 1]});
      Mcur[j] = best_prev + m.score(ia[i - 1], ib[j - 1]);
      Xcur[j] = std::max({Mcur[j - 1] + open, Xcur[j - 1] + ext, Ycur[j - 1] + open});
      Ycur[j] = std::max({Mprev[j] + open, Xprev[j] + open, Yprev[j] + ext});
    }
    std::swap(Mprev, Mcur);
    std::swap(Xprev, Xcur);
    std::swap(Yprev, Ycur);
  }
  return std::max({Mprev[mm], Xprev[mm], Yprev[mm]});
}

Alignment align_trace(std::string_view a, std::string_view b, const PmiMatrix& m) {
  if (a.empty() || b.empty())
    throw ValidationError("align_trace requires non-empty strings");
  auto ia = to_indices(a, m);
  auto ib = to_indices(b, m);
  const std::size_t n = ia.size(), mm = ib.size();
  const double open = m.gap_open, ext = m.gap_extend;
  const std::size_t W = mm + 1;

  auto at = [W](std::vector<double>& v, std::size_t i, std::size_t j) -> double& {
    return v[i * W + j];
  };
  std::vector<double> M((n + 1) * W, kNegInf), X((n + 1) * W, kNegInf),
      Y((n + 1) * W, kNegInf);
  // back[state][cell]: predecessor state 0=M 1=X 2=Y
  std::vector<std::uint8_t> backM((n + 1) * W), backX((n + 1) * W), backY((n + 1) * W);

  at(M, 0, 0) = 0.0;
  for (std::size_t j = 1; j <= mm; ++j) {
    at(X, 0, j) = open + static_cast<double>(j - 1) * ext;
    backX[j] = j == 1 ? 0 : 1;
  }
  for (std::size_t i = 1; i <= n; ++i) {
    at(Y, i, 0) = open + static_cast<double>(i - 1) * ext;
    backY[i * W] = i == 1 ? 0 : 2;
  }
  auto argmax3 = [](double vm, double vx, double vy) {
    if (vm >= vx && vm >= vy) return std::pair<double, std::uint8_t>{vm, 0};
    if (vx >= vy) return std::pair<double, std::uint8_t>{vx, 1};
    return std::pair<double, std::uint8_t>{vy, 2};
  };
  for (std::size_t i = 1; i <= n; ++i) {
    for (std::size_t j = 1; j <= mm; ++j) {
      auto [vm, am] = argmax3(at(M, i - 1, j - 1), at(X, i - 1, j - 1), at(Y, i - 1, j - 1));
      at(M, i, j) = vm + m.score(ia[i - 1], ib[j - 1]);
      backM[i * W + j] = am;
      auto [vx, ax] =
          argmax3(at(M, i, j - 1) + open, at(X, i, j - 1) + ext, at(Y, i, j - 1) + open);
      at(X, i, j) = vx;
      backX[i * W + j] = ax;
      auto [vy, ay] =
          argmax3(at(M, i - 1, j) + open, at(X, i - 1, j) + open, at(Y, i - 1, j) + ext);
      at(Y, i, j) = vy;
      backY[i * W + j] = ay;
    }
  }

  Alignment result;
  auto [best, state] = argmax3(at(M, n, mm), at(X, n, mm), at(Y, n, mm));
  result.score = best;
  std::size_t i = n, j = mm;
  std::vector<AlignmentColumn> columns;
  while (i > 0 || j > 0) {
    AlignmentColumn col;
    std::uint8_t prev;
    if (state == 0) {
      prev = backM[i * W + j];
      col.a_index = static_cast<int>(i - 1);
      col.b_index = static_cast<int>(j - 1);
      col.score = m.score(ia[i - 1], ib[j - 1]);
      --i;
      --j;
    } else if (state == 1) {
      prev = backX[i * W + j];
      col.b_index = static_cast<int>(j - 1);
      col.score = prev == 1 ? ext : open;
      --j;
    } else {
      prev = backY[i * W + j];
      col.a_index = static_cast<int>(i - 1);
      col.score = prev == 2 ? ext : open;
      --i;
    }
    columns.push_back(col);
    state = prev;
  }
  result.columns.assign(columns.rbegin(), columns.rend());
  return result;
}

ScaledScores scale_scores(const std::vector<double>& raw) {
  if (raw.empty()) throw ValidationError("scale_scores requires a non-empty collection");
  ScaledScores out;
  out.min = *std::min_element(raw.begin(), raw.end());
  out.max = *std::max_element(raw.begin(), raw.end());
  out.scaled.reserve(raw.size());
  if (out.max > out.min) {
    const double range = out.max - out.min;
    for (double v : raw) out.scaled.push_back((v - out.min) / range);
  } else {
    out.scaled.assign(raw.size(), 0.5);
  }
  return out;
}

namespace {
template <typename T, typename Eq>
double ned_impl(const std::vector<T>& a, const std::vector<T>& b, NedNorm norm, Eq eq) {
  if (a.empty() || b.empty())
    throw ValidationError("ned_similarity requires non-empty sequences");
  const std::size_t n = a.size(), m = b.size();
  std::vector<std::size_t> prev(m + 1), cur(m + 1);
  for (std::size_t j = 0; j <= m; ++j) prev[j] = j;
  for (std::size_t i = 1; i <= n; ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= m; ++j) {
      std::size_t sub = prev[j - 1] + (eq(a[i - 1], b[j - 1]) ? 0 : 1);
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
    }
    std::swap(prev, cur);
  }
  auto d = static_cast<double>(prev[m]);
  if (norm == NedNorm::kMaxLength)
    return 1.0 - d / static_cast<double>(std::max(n, m));
  // Yujian & Bo normalized distance: 2d / (|a| + |b| + d).
  double denom = static_cast<double>(n + m) + d;
  return 1.0 - (denom == 0.0 ? 0.0 : 2.0 * d / denom);
}
}  // namespace

double ned_similarity(const std::vector<phon::Segment>& a,
                      const std::vector<phon::Segment>& b, NedNorm norm) {
  return ned_impl(a, b, norm, [](const phon::Segment& x, const phon::Segment& y) {
    return x.symbol == y.symbol;
  });
}

double ned_similarity(const std::vector<std::string>& a, const std::vector<std::string>& b,
                      NedNorm norm) {
  return ned_impl(a, b, norm,
                  [](const std::string& x, const std::string& y) { return x == y; });
}

}  // namespace borrowdet::pmialign
