#include "borrowdet/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "borrowdet/common.hpp"
#include "borrowdet/rng.hpp"

namespace borrowdet::corpus {

std::string role_name(LanguageRole role) {
  switch (role) {
    case LanguageRole::kDonor: return "donor";
    case LanguageRole::kRecipient: return "recipient";
    case LanguageRole::kUnrestricted: return "unrestricted";
  }
  return "?";
}

const WordForm* Wordlist::by_id(const std::string& id) const {
  auto it = id_index.find(id);
  return it == id_index.end() ? nullptr : &forms[it->second];
}

std::vector<std::string> Wordlist::languages_with_role(LanguageRole role) const {
  std::vector<std::string> out;
  for (const auto& [lang, r] : languages)
    if (r == role) out.push_back(lang);
  return out;
}

void Wordlist::rebuild_index() {
  id_index.clear();
  for (std::size_t i = 0; i < forms.size(); ++i) id_index.emplace(forms[i].id, i);
}

double ColexNetwork::proportion(const std::string& a, const std::string& b) const {
  auto key = a <= b ? std::make_pair(a, b) : std::make_pair(b, a);
  auto it = pairs.find(key);
  return it == pairs.end() ? 0.0 : it->second;
}

std::vector<std::string> ColexNetwork::neighbors(const std::string& concept_id) const {
  std::vector<std::string> out;
  for (const auto& [key, _] : pairs) {
    if (key.first == concept_id) out.push_back(key.second);
    else if (key.second == concept_id) out.push_back(key.first);
  }
  return out;
}

std::string clean_form(const std::string& raw) {
  std::string out;
  out.reserve(raw.size());
  for (char c : raw)
    if (c != '+' && c != '_') out.push_back(c);
  if (out.empty())
    throw ValidationError("form '" + raw + "' is empty after separator cleanup");
  return out;
}

namespace {

int find_column(const std::vector<std::string>& header, const std::string& name) {
  auto it = std::find(header.begin(), header.end(), name);
  return it == header.end() ? -1 : static_cast<int>(it - header.begin());
}

std::optional<bool> parse_borrowed(const std::string& cell, const std::string& where) {
  if (cell.empty()) return std::nullopt;
  if (cell == "true" || cell == "1") return true;
  if (cell == "false" || cell == "0") return false;
  throw ValidationError(where + ": BORROWED must be one of {true,false,1,0}, got '" +
                        cell + "'");
}

}  // namespace

Wordlist load_wordlist(const std::string& path, const phon::FeatureTable& features,
                       const phon::AsjpMapping& mapping, const LoadOptions& options) {
  auto lines = read_lines(path);
  if (lines.empty()) throw ValidationError(path + ": empty wordlist file");
  auto header = split(lines[0], '\t');
  const int col_id = find_column(header, "ID");
  const int col_lang = find_column(header, "LANGUAGE");
  const int col_concept = find_column(header, "CONCEPT");
  const int col_form = find_column(header, "FORM");
  for (auto [col, name] : {std::pair{col_id, "ID"}, {col_lang, "LANGUAGE"},
                           {col_concept, "CONCEPT"}, {col_form, "FORM"}})
    if (col < 0) throw ValidationError(path + ": missing required column " + name);
  const int col_family = find_column(header, "FAMILY");
  const int col_borrowed = find_column(header, "BORROWED");
  const int col_donor = find_column(header, "DONOR_LANGUAGE");

  Wordlist wordlist;
  wordlist.languages = options.roles;
  for (std::size_t li = 1; li < lines.size(); ++li) {
    if (lines[li].empty()) continue;
    auto where = path + ":" + std::to_string(li + 1);
    auto cols = split(lines[li], '\t');
    if (cols.size() < header.size())
      throw ValidationError(where + ": expected " + std::to_string(header.size()) +
                            " columns, got " + std::to_string(cols.size()));
    WordForm form;
    form.id = cols[col_id];
    form.language = cols[col_lang];
    form.concept_id = cols[col_concept];
    if (form.id.empty()) throw ValidationError(where + ": empty ID");
    if (wordlist.id_index.count(form.id))
      throw ValidationError(where + ": duplicate ID '" + form.id + "'");
    form.family = (col_family >= 0 && !cols[col_family].empty()) ? cols[col_family]
                                                                 : form.language;
    try {
      form.raw_form = clean_form(cols[col_form]);
      form.segments = phon::tokenize_ipa(form.raw_form, features);
      phon::annotate_asjp(form.segments, mapping);
      for (const auto& seg : form.segments) form.asjp += seg.asjp;
    } catch (const ValidationError& e) {
      if (options.skip_unknown_symbols &&
          std::string(e.what()).find("unknown IPA symbol") != std::string::npos) {
        if (options.skipped_log)
          options.skipped_log->push_back(where + ": skipped '" + form.id +
                                         "': " + e.what());
        continue;
      }
      throw ValidationError(where + ": " + e.what());
    }
    if (col_borrowed >= 0) form.gold_borrowed = parse_borrowed(cols[col_borrowed], where);
    if (col_donor >= 0 && !cols[col_donor].empty()) {
      form.gold_donor_language = cols[col_donor];
      if (form.gold_borrowed.has_value() && !*form.gold_borrowed)
        throw ValidationError(where + ": DONOR_LANGUAGE set but BORROWED is false");
      form.gold_borrowed = true;
    }
    if (!wordlist.languages.count(form.language))
      wordlist.languages.emplace(form.language, options.default_role);
    wordlist.concepts.insert(form.concept_id);
    wordlist.id_index.emplace(form.id, wordlist.forms.size());
    wordlist.forms.push_back(std::move(form));
  }
  return wordlist;
}

void write_wordlist(const Wordlist& wordlist, const std::string& path) {
  std::ostringstream out;
  out << "ID\tLANGUAGE\tFAMILY\tCONCEPT\tFORM\tBORROWED\tDONOR_LANGUAGE\n";
  for (const auto& form : wordlist.forms) {
    out << form.id << '\t' << form.language << '\t' << form.family << '\t'
        << form.concept_id << '\t' << form.raw_form << '\t';
    if (form.gold_borrowed.has_value()) out << (*form.gold_borrowed ? "true" : "false");
    out << '\t' << form.gold_donor_language.value_or("") << '\n';
  }
  write_file(path, out.str());
}

ColexNetwork load_colex(const std::string& path, double min_proportion) {
  auto lines = read_lines(path);
  if (lines.empty()) throw ValidationError(path + ": empty colexification file");
  auto header = split(lines[0], '\t');
  const int col_a = find_column(header, "CONCEPT_A");
  const int col_b = find_column(header, "CONCEPT_B");
  const int col_p = find_column(header, "PROPORTION");
  if (col_a < 0 || col_b < 0 || col_p < 0)
    throw ValidationError(path + ": expected columns CONCEPT_A, CONCEPT_B, PROPORTION");

  ColexNetwork network;
  for (std::size_t li = 1; li < lines.size(); ++li) {
    if (lines[li].empty()) continue;
    auto where = path + ":" + std::to_string(li + 1);
    auto cols = split(lines[li], '\t');
    if (cols.size() < header.size())
      throw ValidationError(where + ": short row");
    double p = parse_double(cols[col_p], where);
    if (p < 0.0 || p > 1.0)
      throw ValidationError(where + ": proportion " + format_double(p) +
                            " outside [0,1]");
    if (p < min_proportion) continue;
    auto key = cols[col_a] <= cols[col_b] ? std::make_pair(cols[col_a], cols[col_b])
                                          : std::make_pair(cols[col_b], cols[col_a]);
    auto [it, inserted] = network.pairs.emplace(key, p);
    if (!inserted && it->second != p)
      throw ValidationError(where + ": conflicting proportions for pair " + key.first +
                            "/" + key.second);
  }
  return network;
}

std::vector<Split> make_splits(const Wordlist& wordlist, int n_folds, std::uint64_t seed) {
  if (n_folds < 2) throw ValidationError("n_folds must be at least 2");
  if (static_cast<std::size_t>(n_folds) > wordlist.concepts.size())
    throw ValidationError("n_folds (" + std::to_string(n_folds) +
                          ") exceeds the number of concepts (" +
                          std::to_string(wordlist.concepts.size()) + ")");

  // Concept groups in sorted order, then shuffled, so the result depends
  // only on content and seed, not file order.
  std::map<std::string, std::vector<std::string>> by_concept;
  for (const auto& form : wordlist.forms) by_concept[form.concept_id].push_back(form.id);
  std::vector<std::string> concepts;
  for (const auto& [concept_name, _] : by_concept) concepts.push_back(concept_name);

  Rng rng(seed);
  rng.shuffle(concepts);
  std::vector<std::vector<std::string>> folds(n_folds);
  std::size_t pointer = 0;
  for (const auto& concept_name : concepts) {
    auto ids = by_concept[concept_name];
    std::sort(ids.begin(), ids.end());
    rng.shuffle(ids);
    for (auto& id : ids) {
      folds[pointer % n_folds].push_back(std::move(id));
      ++pointer;
    }
  }

  std::vector<Split> splits(n_folds);
  for (int f = 0; f < n_folds; ++f) {
    std::sort(folds[f].begin(), folds[f].end());
    splits[f].test_ids = folds[f];
    for (int g = 0; g < n_folds; ++g)
      if (g != f)
        splits[f].train_ids.insert(splits[f].train_ids.end(), folds[g].begin(),
                                   folds[g].end());
    std::sort(splits[f].train_ids.begin(), splits[f].train_ids.end());
  }
  return splits;
}

void write_split_manifest(const std::vector<Split>& splits, const std::string& path) {
  std::ostringstream out;
  out << "FOLD\tROLE\tID\n";
  for (std::size_t f = 0; f < splits.size(); ++f) {
    for (const auto& id : splits[f].train_ids) out << f << "\ttrain\t" << id << '\n';
    for (const auto& id : splits[f].test_ids) out << f << "\ttest\t" << id << '\n';
  }
  write_file(path, out.str());
}

std::vector<Split> read_split_manifest(const std::string& path) {
  auto lines = read_lines(path);
  if (lines.empty() || split(lines[0], '\t') != std::vector<std::string>{"FOLD", "ROLE", "ID"})
    throw ValidationError(path + ": expected header FOLD<TAB>ROLE<TAB>ID");
  std::vector<Split> splits;
  for (std::size_t li = 1; li < lines.size(); ++li) {
    if (lines[li].empty()) continue;
    auto where = path + ":" + std::to_string(li + 1);
    auto cols = split(lines[li], '\t');
    if (cols.size() != 3) throw ValidationError(where + ": expected 3 columns");
    auto fold = static_cast<std::size_t>(parse_long(cols[0], where));
    if (fold >= splits.size()) splits.resize(fold + 1);
    if (cols[1] == "train") splits[fold].train_ids.push_back(cols[2]);
    else if (cols[1] == "test") splits[fold].test_ids.push_back(cols[2]);
    else throw ValidationError(where + ": ROLE must be train or test");
  }
  return splits;
}

Wordlist remove_borrowings(const Wordlist& wordlist, double fraction, std::uint64_t seed) {
  if (fraction < 0.0 || fraction > 1.0)
    throw ValidationError("fraction must lie in [0,1]");
  bool any_gold = std::any_of(wordlist.forms.begin(), wordlist.forms.end(),
                              [](const WordForm& f) { return f.gold_borrowed.has_value(); });
  if (!any_gold)
    throw ValidationError("remove_borrowings requires gold borrowing annotations");

  std::vector<std::size_t> borrowed;
  for (std::size_t i = 0; i < wordlist.forms.size(); ++i)
    if (wordlist.forms[i].gold_borrowed.value_or(false)) borrowed.push_back(i);

  auto n_remove = static_cast<std::size_t>(
      std::lround(fraction * static_cast<double>(borrowed.size())));
  Rng rng(seed);
  rng.shuffle(borrowed);
  borrowed.resize(n_remove);
  std::sort(borrowed.begin(), borrowed.end());

  Wordlist out;
  out.languages = wordlist.languages;
  std::size_t next_removed = 0;
  for (std::size_t i = 0; i < wordlist.forms.size(); ++i) {
    if (next_removed < borrowed.size() && borrowed[next_removed] == i) {
      ++next_removed;
      continue;
    }
    out.concepts.insert(wordlist.forms[i].concept_id);
    out.id_index.emplace(wordlist.forms[i].id, out.forms.size());
    out.forms.push_back(wordlist.forms[i]);
  }
  return out;
}

}  // namespace borrowdet::corpus
