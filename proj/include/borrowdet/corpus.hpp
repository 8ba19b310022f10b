#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "borrowdet/phon.hpp"

namespace borrowdet::corpus {

enum class LanguageRole { kDonor, kRecipient, kUnrestricted };

std::string role_name(LanguageRole role);

struct WordForm {
  std::string id;
  std::string language;
  std::string family;  // defaults to the language name when absent
  std::string concept_id;
  std::string raw_form;  // separator-cleaned IPA
  std::vector<phon::Segment> segments;
  std::string asjp;  // concatenated ASJP conversion of the segments
  std::optional<bool> gold_borrowed;
  std::optional<std::string> gold_donor_language;

  bool operator==(const WordForm& other) const {
    return id == other.id && language == other.language && family == other.family &&
           concept_id == other.concept_id && raw_form == other.raw_form &&
           gold_borrowed == other.gold_borrowed &&
           gold_donor_language == other.gold_donor_language;
  }
};

struct Wordlist {
  std::vector<WordForm> forms;
  std::map<std::string, LanguageRole> languages;
  std::set<std::string> concepts;
  std::unordered_map<std::string, std::size_t> id_index;

  const WordForm* by_id(const std::string& id) const;
  std::vector<std::string> languages_with_role(LanguageRole role) const;
  void rebuild_index();

  bool operator==(const Wordlist& other) const {
    return forms == other.forms && languages == other.languages &&
           concepts == other.concepts;
  }
};

struct ColexNetwork {
  // Canonical key: lexicographically ordered concept pair.
  std::map<std::pair<std::string, std::string>, double> pairs;

  double proportion(const std::string& a, const std::string& b) const;
  std::vector<std::string> neighbors(const std::string& concept_id) const;
};

struct LoadOptions {
  std::map<std::string, LanguageRole> roles;          // explicit assignments
  LanguageRole default_role = LanguageRole::kUnrestricted;
  bool skip_unknown_symbols = false;                  // skip the row and log instead of failing
  std::vector<std::string>* skipped_log = nullptr;    // messages for skipped rows
};

// Removes the multi-word separators '+' and '_'; everything else is kept
// byte-identical. Empty results are an error.
std::string clean_form(const std::string& raw);

// TSV columns: ID, LANGUAGE, FAMILY?, CONCEPT, FORM, BORROWED?, DONOR_LANGUAGE?.
Wordlist load_wordlist(const std::string& path, const phon::FeatureTable& features,
                       const phon::AsjpMapping& mapping, const LoadOptions& options);

void write_wordlist(const Wordlist& wordlist, const std::string& path);

// TSV columns CONCEPT_A, CONCEPT_B, PROPORTION; only pairs with
// proportion >= min_proportion are retained.
ColexNetwork load_colex(const std::string& path, double min_proportion);

struct Split {
  std::vector<std::string> train_ids;
  std::vector<std::string> test_ids;
};

// Concept-stratified folds: each concept's forms are dealt round-robin
// through a fold pointer that carries over between concepts, so fold sizes
// stay within one of each other and same-concept forms spread as evenly as
// the counts allow. Deterministic under seed.
std::vector<Split> make_splits(const Wordlist& wordlist, int n_folds, std::uint64_t seed);

void write_split_manifest(const std::vector<Split>& splits, const std::string& path);
std::vector<Split> read_split_manifest(const std::string& path);

// Removes round(fraction * |gold-borrowed forms|) borrowed forms uniformly
// at random; every surviving form is untouched.
Wordlist remove_borrowings(const Wordlist& wordlist, double fraction, std::uint64_t seed);

}  // namespace borrowdet::corpus
