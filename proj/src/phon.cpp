#include "borrowdet/phon.hpp"

#include <algorithm>
#include <cstdio>

#include "borrowdet/common.hpp"

namespace borrowdet::phon {

const std::vector<std::string>& asjp_inventory() {
  static const std::vector<std::string> inv = {
      "p", "b", "f", "v", "m", "w", "8", "t", "d", "s", "z", "c", "n", "r",
      "l", "S", "Z", "C", "j", "T", "5", "y", "k", "g", "x", "N", "q", "X",
      "h", "7", "L", "4", "G", "!", "i", "e", "E", "3", "a", "u", "o"};
  return inv;
}

bool is_asjp_symbol(const std::string& symbol) {
  const auto& inv = asjp_inventory();
  return std::find(inv.begin(), inv.end(), symbol) != inv.end();
}

std::size_t utf8_codepoint_length(unsigned char lead) {
  if (lead < 0x80) return 1;
  if ((lead >> 5) == 0x6) return 2;
  if ((lead >> 4) == 0xe) return 3;
  if ((lead >> 3) == 0x1e) return 4;
  return 1;  // invalid byte, treat as a single unit
}

std::vector<std::string> utf8_codepoints(const std::string& text) {
  std::vector<std::string> cps;
  std::size_t i = 0;
  while (i < text.size()) {
    std::size_t n = std::min(utf8_codepoint_length(static_cast<unsigned char>(text[i])),
                             text.size() - i);
    cps.push_back(text.substr(i, n));
    i += n;
  }
  return cps;
}

namespace {

std::uint32_t utf8_decode_one(const std::string& cp) {
  if (cp.empty()) return 0;
  auto b0 = static_cast<unsigned char>(cp[0]);
  if (b0 < 0x80) return b0;
  std::uint32_t v = 0;
  int cont = 0;
  if ((b0 >> 5) == 0x6) {
    v = b0 & 0x1f;
    cont = 1;
  } else if ((b0 >> 4) == 0xe) {
    v = b0 & 0x0f;
    cont = 2;
  } else {
    v = b0 & 0x07;
    cont = 3;
  }
  for (int k = 1; k <= cont && k < static_cast<int>(cp.size()); ++k)
    v = (v << 6) | (static_cast<unsigned char>(cp[k]) & 0x3f);
  return v;
}

std::string describe_codepoint(const std::string& cp) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "U+%04X", utf8_decode_one(cp));
  return "'" + cp + "' (" + buf + ")";
}

}  // namespace

FeatureTable load_feature_table(const std::string& path) {
  auto lines = read_lines(path);
  if (lines.empty()) throw ValidationError(path + ": empty feature table file");
  auto header = split(lines[0], '\t');
  if (header.empty() || header[0] != "SYMBOL")
    throw ValidationError(path + ":1: expected header starting with SYMBOL");

  FeatureTable table;
  for (std::size_t li = 1; li < lines.size(); ++li) {
    if (lines[li].empty()) continue;
    auto where = path + ":" + std::to_string(li + 1);
    auto cols = split(lines[li], '\t');
    if (cols.size() != 1 + kFeatureDim)
      throw ValidationError(where + ": expected symbol + " + std::to_string(kFeatureDim) +
                            " feature values, got " + std::to_string(cols.size() - 1));
    const std::string& symbol = cols[0];
    if (symbol.empty()) throw ValidationError(where + ": empty symbol");
    if (table.contains(symbol))
      throw ValidationError(where + ": duplicate symbol '" + symbol + "'");
    FeatureVector vec{};
    for (int f = 0; f < kFeatureDim; ++f) {
      long v = parse_long(cols[f + 1], where);
      if (v < 0 || v > 2)
        throw ValidationError(where + ": feature value " + std::to_string(v) +
                              " outside {0,1,2}");
      vec[f] = static_cast<std::uint8_t>(v);
    }
    table.entries.emplace(symbol, vec);
    table.max_symbol_bytes = std::max(table.max_symbol_bytes, symbol.size());
  }
  if (table.entries.empty())
    throw ValidationError(path + ": feature table has a header but no symbol rows");
  return table;
}

AsjpMapping load_asjp_mapping(const std::string& path) {
  auto lines = read_lines(path);
  AsjpMapping mapping;
  bool saw_header = false;
  for (std::size_t li = 0; li < lines.size(); ++li) {
    const std::string& line = lines[li];
    if (line.empty()) continue;
    auto where = path + ":" + std::to_string(li + 1);
    if (line.rfind("#rule", 0) == 0) {
      auto cols = split(line, '\t');
      if (cols.size() != 3)
        throw ValidationError(where + ": rule lines are '#rule<TAB>strip|reject<TAB>chars'");
      AsjpMapping::Rule rule;
      if (cols[1] == "strip")
        rule.action = AsjpMapping::Rule::Action::kStrip;
      else if (cols[1] == "reject")
        rule.action = AsjpMapping::Rule::Action::kReject;
      else
        throw ValidationError(where + ": unknown rule action '" + cols[1] + "'");
      rule.codepoints = utf8_codepoints(cols[2]);
      if (rule.codepoints.empty()) throw ValidationError(where + ": empty rule class");
      mapping.rules.push_back(std::move(rule));
      continue;
    }
    if (line[0] == '#') continue;
    auto cols = split(line, '\t');
    if (!saw_header) {
      if (cols.size() < 2 || cols[0] != "IPA" || cols[1] != "ASJP")
        throw ValidationError(where + ": expected header 'IPA<TAB>ASJP'");
      saw_header = true;
      continue;
    }
    if (cols.size() != 2)
      throw ValidationError(where + ": expected two columns IPA<TAB>ASJP");
    if (!is_asjp_symbol(cols[1]))
      throw ValidationError(where + ": '" + cols[1] + "' is not an ASJP symbol");
    if (mapping.entries.count(cols[0]))
      throw ValidationError(where + ": duplicate IPA symbol '" + cols[0] + "'");
    mapping.entries.emplace(cols[0], cols[1]);
  }
  if (!saw_header) throw ValidationError(path + ": missing 'IPA<TAB>ASJP' header");
  return mapping;
}

std::vector<Segment> tokenize_ipa(const std::string& form, const FeatureTable& table) {
  if (form.empty()) throw ValidationError("cannot tokenize an empty form");
  std::vector<Segment> segments;
  std::size_t pos = 0;
  std::size_t cp_offset = 0;
  while (pos < form.size()) {
    std::size_t longest = std::min(table.max_symbol_bytes, form.size() - pos);
    std::string matched;
    for (std::size_t len = longest; len >= 1; --len) {
      std::string candidate = form.substr(pos, len);
      if (table.contains(candidate)) {
        matched = std::move(candidate);
        break;
      }
    }
    if (matched.empty()) {
      std::size_t n = std::min(utf8_codepoint_length(static_cast<unsigned char>(form[pos])),
                               form.size() - pos);
      throw ValidationError("unknown IPA symbol " + describe_codepoint(form.substr(pos, n)) +
                            " at offset " + std::to_string(cp_offset) + " in form '" + form +
                            "'");
    }
    Segment seg;
    seg.symbol = matched;
    seg.features = table.entries.at(matched);
    segments.push_back(std::move(seg));
    cp_offset += utf8_codepoints(matched).size();
    pos += matched.size();
  }
  return segments;
}

std::optional<std::string> asjp_for_symbol(const std::string& symbol,
                                           const AsjpMapping& mapping) {
  auto it = mapping.entries.find(symbol);
  if (it != mapping.entries.end()) return it->second;

  // Fallback: apply the rule list to the symbol's codepoints, then retry.
  auto cps = utf8_codepoints(symbol);
  std::string stripped;
  for (const auto& cp : cps) {
    bool removed = false;
    for (const auto& rule : mapping.rules) {
      if (std::find(rule.codepoints.begin(), rule.codepoints.end(), cp) ==
          rule.codepoints.end())
        continue;
      if (rule.action == AsjpMapping::Rule::Action::kReject)
        throw ValidationError("IPA symbol '" + symbol + "' contains rejected codepoint " +
                              describe_codepoint(cp));
      removed = true;
      break;
    }
    if (!removed) stripped += cp;
  }
  if (stripped.empty()) return std::nullopt;  // pure-diacritic segment, dropped
  auto it2 = mapping.entries.find(stripped);
  if (it2 != mapping.entries.end()) return it2->second;
  throw ValidationError("no ASJP mapping for IPA symbol '" + symbol + "'" +
                        (stripped == symbol ? "" : " (stripped to '" + stripped + "')"));
}

std::string to_asjp(const std::vector<Segment>& segments, const AsjpMapping& mapping) {
  std::string out;
  for (const auto& seg : segments) {
    auto sym = asjp_for_symbol(seg.symbol, mapping);
    if (sym) out += *sym;
  }
  return out;
}

void annotate_asjp(std::vector<Segment>& segments, const AsjpMapping& mapping) {
  for (auto& seg : segments) {
    auto sym = asjp_for_symbol(seg.symbol, mapping);
    seg.asjp = sym.value_or("");
  }
}

}  // namespace borrowdet::phon
