#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

namespace borrowdet::phon {

inline constexpr int kFeatureDim = 39;

// Ternary articulatory features: 0 = does not apply, 1 = not applicable,
// 2 = applies.
using FeatureVector = std::array<std::uint8_t, kFeatureDim>;

// The 41-symbol ASJP inventory (34 consonants + 7 vowels), in the order
// used by the bundled PMI matrix.
const std::vector<std::string>& asjp_inventory();
bool is_asjp_symbol(const std::string& symbol);

struct FeatureTable {
  std::unordered_map<std::string, FeatureVector> entries;
  std::size_t max_symbol_bytes = 0;

  bool contains(const std::string& symbol) const { return entries.count(symbol) != 0; }
};

struct AsjpMapping {
  std::unordered_map<std::string, std::string> entries;  // IPA symbol -> ASJP symbol
  struct Rule {
    enum class Action { kStrip, kReject };
    Action action;
    std::vector<std::string> codepoints;  // class members, one UTF-8 codepoint each
  };
  std::vector<Rule> rules;  // applied in file order
};

struct Segment {
  std::string symbol;
  FeatureVector features{};
  std::string asjp;  // empty until annotated; stays empty for dropped segments
};

// TSV with header `SYMBOL<TAB>F1...F39`; all malformations reported with a
// 1-based line number.
FeatureTable load_feature_table(const std::string& path);

// TSV with header `IPA<TAB>ASJP`, plus `#rule<TAB>strip|reject<TAB><chars>`
// fallback lines for unmapped diacritics.
AsjpMapping load_asjp_mapping(const std::string& path);

// Greedy longest-match segmentation over the table's key set. Joining the
// returned symbols reproduces the input exactly; an unmatched position is a
// hard error naming the codepoint and its codepoint offset.
std::vector<Segment> tokenize_ipa(const std::string& form, const FeatureTable& table);

// Maps one tokenized symbol to ASJP. nullopt means the segment is dropped
// (a strip rule removed everything); unmapped symbols with no applicable
// rule throw.
std::optional<std::string> asjp_for_symbol(const std::string& symbol,
                                           const AsjpMapping& mapping);

// One ASJP symbol per surviving input segment, concatenated.
std::string to_asjp(const std::vector<Segment>& segments, const AsjpMapping& mapping);

// Fills Segment::asjp in place (empty string for dropped segments).
void annotate_asjp(std::vector<Segment>& segments, const AsjpMapping& mapping);

// UTF-8 helpers shared by the tokenizer and rule matching.
std::size_t utf8_codepoint_length(unsigned char lead);
std::vector<std::string> utf8_codepoints(const std::string& text);

}  // namespace borrowdet::phon
