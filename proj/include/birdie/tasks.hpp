#pragma once

#include <algorithm>
#include <cctype>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "birdie/error.hpp"
#include "birdie/objectives.hpp"
#include "birdie/rng.hpp"
#include "birdie/vocab.hpp"

namespace birdie {

// ---------------------------------------------------------------------------
// Phonebook retrieval.

struct PhonebookSpec {
  std::size_t num_entries = 20;
  std::size_t num_queries = 1;
  std::uint64_t seed = 0;

  void validate() const {
    if (num_entries == 0) throw Error("phonebook: need at least one entry");
    if (num_queries == 0 || num_queries > 32) throw Error("phonebook: num_queries must be in 1..32");
    if (num_queries > num_entries) throw Error("phonebook: more queries than entries");
  }
};

struct PhonebookEntry {
  std::string name;
  std::string number;
};

struct Phonebook {
  std::vector<PhonebookEntry> entries;
  std::vector<std::size_t> queries;  // entry indices, in question order
  std::string prompt;
  std::vector<std::string> answers;

  std::string answer_text() const {
    std::string s;
    for (std::size_t i = 0; i < answers.size(); ++i) s += (i ? ", " : "") + answers[i];
    return s;
  }
};

namespace detail {

inline std::string syllables(Rng& rng, std::size_t n) {
  static constexpr std::string_view kCons = "bdfghjklmnprstvwz";
  static constexpr std::string_view kVowels = "aeiou";
  std::string s;
  for (std::size_t i = 0; i < n; ++i) {
    s += kCons[rng.index(kCons.size())];
    s += kVowels[rng.index(kVowels.size())];
  }
  s[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(s[0])));
  return s;
}

inline std::string join_names(const std::vector<std::string>& names) {
  if (names.size() == 1) return names[0];
  if (names.size() == 2) return names[0] + " and " + names[1];
  std::string s;
  for (std::size_t i = 0; i + 1 < names.size(); ++i) s += names[i] + ", ";
  return s + "and " + names.back();
}

}  // namespace detail

// Consonant-vowel first and last name.
inline std::string make_name(Rng& rng) {
  return detail::syllables(rng, 2) + " " + detail::syllables(rng, 2 + rng.index(2));
}

inline std::string make_phone_number(Rng& rng) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%03d-%03d-%04d", static_cast<int>(rng.uniform_int(0, 999)),
                static_cast<int>(rng.uniform_int(0, 999)), static_cast<int>(rng.uniform_int(0, 9999)));
  return buf;
}

inline Phonebook gen_phonebook(const PhonebookSpec& spec) {
  spec.validate();
  Rng rng(Rng::mix(spec.seed ^ 0x70686f6e65ULL));
  Phonebook pb;
  std::set<std::string> names, numbers;
  for (std::size_t i = 0; i < spec.num_entries; ++i) {
    std::string name;
    for (int attempt = 0;; ++attempt) {
      if (attempt == 100) throw Error("phonebook: could not draw a unique name after 100 tries");
      name = make_name(rng);
      if (names.insert(name).second) break;
    }
    std::string number;
    do {
      number = make_phone_number(rng);
    } while (!numbers.insert(number).second);
    pb.entries.push_back({name, number});
  }
  std::vector<std::size_t> idx(spec.num_entries);
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  rng.shuffle(std::span<std::size_t>(idx));
  pb.queries.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(spec.num_queries));
  std::vector<std::string> qnames;
  for (const auto q : pb.queries) {
    qnames.push_back(pb.entries[q].name);
    pb.answers.push_back(pb.entries[q].number);
  }
  const std::string question = "What are the phone numbers for " + detail::join_names(qnames) + "?";
  std::string p = question + " Find them in the phonebook below.\n\nPhonebook:\n";
  for (const auto& e : pb.entries) p += e.name + ": " + e.number + "\n";
  p += "\n" + question + " Find them in the phonebook above.\n";
  pb.prompt = std::move(p);
  return pb;
}

inline TransformedSample phonebook_sample(const Phonebook& pb) {
  TransformedSample s;
  s.input_ids = encode(pb.prompt);
  s.target_ids = encode(pb.answer_text());
  s.target_ids.push_back(vocab::kDone);
  s.prefix_len = s.input_ids.size();
  return s;
}

// Every NNN-NNN-NNNN occurrence in order.
inline std::vector<std::string> extract_numbers(std::string_view text) {
  std::vector<std::string> out;
  const auto digit = [&](std::size_t i) { return std::isdigit(static_cast<unsigned char>(text[i])) != 0; };
  std::size_t i = 0;
  while (i + 12 <= text.size()) {
    bool ok = (i == 0 || !digit(i - 1)) && (i + 12 == text.size() || !digit(i + 12));
    for (std::size_t k = 0; ok && k < 12; ++k) ok = (k == 3 || k == 7) ? text[i + k] == '-' : digit(i + k);
    if (ok) {
      out.emplace_back(text.substr(i, 12));
      i += 12;
    } else {
      ++i;
    }
  }
  return out;
}

struct PhonebookScore {
  std::vector<bool> ordered;    // i-th extracted number equals the i-th answer
  std::vector<bool> unordered;  // answer appears anywhere in the output
  double accuracy = 0;
  bool all_correct = false;
  double unordered_accuracy = 0;
  bool unordered_all_correct = false;
};

inline PhonebookScore score_phonebook(std::string_view output, const std::vector<std::string>& answers) {
  PhonebookScore s;
  const auto found = extract_numbers(output);
  const std::set<std::string> found_set(found.begin(), found.end());
  std::size_t ok = 0, uok = 0;
  for (std::size_t i = 0; i < answers.size(); ++i) {
    s.ordered.push_back(i < found.size() && found[i] == answers[i]);
    s.unordered.push_back(found_set.count(answers[i]) > 0);
    ok += s.ordered.back();
    uok += s.unordered.back();
  }
  const double n = answers.empty() ? 1.0 : static_cast<double>(answers.size());
  s.accuracy = static_cast<double>(ok) / n;
  s.unordered_accuracy = static_cast<double>(uok) / n;
  s.all_correct = ok == answers.size();
  s.unordered_all_correct = uok == answers.size();
  return s;
}

// ---------------------------------------------------------------------------
// Greedy-decoding accuracy.

using Decoder = std::function<TokenSeq(std::span<const TokenId> prompt, std::size_t max_new)>;

// Fraction of target positions the output reproduces exactly (missing
// positions count as wrong).
inline double token_accuracy(std::span<const TokenId> output, std::span<const TokenId> target) {
  if (target.empty()) return 1.0;
  std::size_t ok = 0;
  for (std::size_t i = 0; i < target.size(); ++i) ok += i < output.size() && output[i] == target[i];
  return static_cast<double>(ok) / static_cast<double>(target.size());
}

// Held-out samples drawn from `source` (returns a document for an index)
// and transformed by each config. Returns the pooled token accuracy per
// config.
inline std::vector<double> eval_selective_copy(const Decoder& decode, std::span<const ObjectiveConfig> configs,
                                               const std::function<TokenSeq(std::size_t, Rng&)>& source,
                                               std::size_t samples_per_config, std::uint64_t seed) {
  std::vector<double> out;
  for (std::size_t c = 0; c < configs.size(); ++c) {
    Rng rng(Rng::mix(seed + 0x9e37 * (c + 1)));
    std::size_t hit = 0, total = 0;
    for (std::size_t k = 0; k < samples_per_config; ++k) {
      const TokenSeq doc = source(k, rng);
      const TransformedSample s = transform(doc, configs[c], rng);
      const TokenSeq got = decode(s.input_ids, s.target_ids.size());
      hit += static_cast<std::size_t>(std::llround(token_accuracy(got, s.target_ids) * static_cast<double>(s.target_ids.size())));
      total += s.target_ids.size();
    }
    out.push_back(total ? static_cast<double>(hit) / static_cast<double>(total) : 0.0);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Story infilling.

struct InfillingItem {
  std::vector<std::string> entries;  // exactly one is "(blank)"
  std::map<std::string, std::string> choices;  // "A".."D"
  std::string label;

  static constexpr std::string_view kBlank = "(blank)";

  void validate() const {
    const auto blanks = std::count(entries.begin(), entries.end(), std::string(kBlank));
    if (blanks != 1) throw Error("infilling item must have exactly one (blank) entry");
    if (choices.size() != 4 || !choices.count("A") || !choices.count("B") || !choices.count("C") || !choices.count("D")) {
      throw Error("infilling item needs choices A, B, C and D");
    }
    if (!choices.count(label)) throw Error("infilling label '" + label + "' is not one of the choices");
  }

  std::size_t blank_index() const {
    return static_cast<std::size_t>(std::find(entries.begin(), entries.end(), std::string(kBlank)) - entries.begin());
  }

  // Numbered story, blank included, followed by the question.
  std::string context() const {
    std::string s = "Consider the following sequence of events, then select a choice that best fills in the missing entry:\n";
    for (std::size_t i = 0; i < entries.size(); ++i) s += std::to_string(i + 1) + ". " + entries[i] + "\n";
    return s + "Which choice best fills in the missing entry?\n";
  }
};

inline void to_json(nlohmann::json& j, const InfillingItem& it) {
  j = {{"entries", it.entries}, {"choices", it.choices}, {"label", it.label}};
}

inline void from_json(const nlohmann::json& j, InfillingItem& it) {
  j.at("entries").get_to(it.entries);
  j.at("choices").get_to(it.choices);
  j.at("label").get_to(it.label);
  it.validate();
}

inline std::vector<InfillingItem> load_infilling(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open infilling file '" + path + "'");
  nlohmann::json j;
  try {
    in >> j;
    return j.get<std::vector<InfillingItem>>();
  } catch (const nlohmann::json::exception& e) {
    throw Error("infilling file '" + path + "': " + e.what());
  }
}

inline void save_infilling(const std::string& path, const std::vector<InfillingItem>& items) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write '" + path + "'");
  out << nlohmann::json(items).dump(2) << "\n";
}

// Mean per-token loss of `choice` given `context`.
using ChoiceScorer = std::function<double(const TokenSeq& context, const TokenSeq& choice)>;

struct InfillingResult {
  std::string chosen;
  std::map<std::string, double> losses;
};

// Lowest mean loss wins; ties go to the earliest label.
inline InfillingResult score_infilling(const ChoiceScorer& scorer, const InfillingItem& item) {
  item.validate();
  const TokenSeq ctx = encode(item.context());
  InfillingResult r;
  double best = 0;
  for (const auto& [label, text] : item.choices) {
    const double l = scorer(ctx, encode(text));
    r.losses[label] = l;
    if (r.chosen.empty() || l < best) {
      best = l;
      r.chosen = label;
    }
  }
  return r;
}

// ---------------------------------------------------------------------------
// Answer matching.

namespace detail {

inline std::string lower_collapse(std::string_view s) {
  std::string out;
  bool space = false;
  for (const char ch : s) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isspace(c)) {
      space = !out.empty();
      continue;
    }
    if (space) out += ' ';
    space = false;
    out += static_cast<char>(std::tolower(c));
  }
  return out;
}

inline std::vector<std::string> f1_tokens(std::string_view s) {
  std::string clean;
  for (const char ch : s) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::ispunct(c)) continue;
    clean += static_cast<char>(std::tolower(c));
  }
  std::istringstream is(clean);
  std::vector<std::string> out;
  for (std::string w; is >> w;) out.push_back(w);
  return out;
}

}  // namespace detail

inline bool contains_label(std::string_view output, const std::vector<std::string>& labels) {
  const std::string out = detail::lower_collapse(output);
  for (const auto& l : labels) {
    const std::string nl = detail::lower_collapse(l);
    if (!nl.empty() && out.find(nl) != std::string::npos) return true;
  }
  return false;
}

inline double token_f1(std::string_view output, std::string_view label) {
  const auto a = detail::f1_tokens(output), b = detail::f1_tokens(label);
  if (a.empty() || b.empty()) return a.empty() && b.empty() ? 1.0 : 0.0;
  std::map<std::string, int> count;
  for (const auto& w : b) ++count[w];
  std::size_t common = 0;
  for (const auto& w : a) {
    auto it = count.find(w);
    if (it != count.end() && it->second > 0) {
      --it->second;
      ++common;
    }
  }
  if (common == 0) return 0.0;
  const double p = static_cast<double>(common) / static_cast<double>(a.size());
  const double r = static_cast<double>(common) / static_cast<double>(b.size());
  return 2 * p * r / (p + r);
}

inline double token_f1(std::string_view output, const std::vector<std::string>& labels) {
  double best = 0;
  for (const auto& l : labels) best = std::max(best, token_f1(output, l));
  return best;
}

}  // namespace birdie
