// SPDX-License-Identifier: Apache-2.0
#include "dsner/gazetteer.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>

#include "dsner/error.hpp"

namespace dsner {

namespace {

std::vector<std::string> split_spaces(std::string_view s) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && s[i] == ' ') ++i;
    std::size_t j = i;
    while (j < s.size() && s[j] != ' ') ++j;
    if (j > i) out.emplace_back(s.substr(i, j - i));
    i = j;
  }
  return out;
}

std::string join(const std::vector<std::string>& parts) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i) out += ' ';
    out += parts[i];
  }
  return out;
}

const std::vector<std::size_t> kNoCandidates;

}  // namespace

std::string ascii_lower(std::string_view s) {
  std::string out(s);
  for (auto& c : out) {
    if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
  }
  return out;
}

bool Gazetteer::add(std::vector<std::string> phrase, std::string type) {
  if (phrase.empty()) throw SchemaError("gazetteer entry with empty phrase");
  if (type.empty()) throw SchemaError("gazetteer entry '" + join(phrase) + "' has no type");
  auto& bucket = by_first_[phrase.front()];
  for (std::size_t idx : bucket) {
    if (entries_[idx].phrase == phrase && entries_[idx].type == type) return false;
  }
  const std::size_t idx = entries_.size();
  bucket.push_back(idx);
  by_first_lower_[ascii_lower(phrase.front())].push_back(idx);
  entries_.push_back({std::move(phrase), std::move(type)});
  return true;
}

Gazetteer Gazetteer::parse(std::string_view text, const std::string& source) {
  Gazetteer gaz;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string_view::npos) throw ParseError(source, line_no, "expected 'phrase<TAB>type'");
    const auto type = line.substr(tab + 1);
    if (type.find('\t') != std::string_view::npos) {
      throw ParseError(source, line_no, "more than 2 columns");
    }
    auto phrase = split_spaces(line.substr(0, tab));
    if (phrase.empty()) throw ParseError(source, line_no, "empty phrase");
    if (type.empty()) throw ParseError(source, line_no, "empty type");
    gaz.add(std::move(phrase), std::string(type));
  }
  return gaz;
}

Gazetteer Gazetteer::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse(buf.str(), path.filename().string());
}

const std::vector<std::size_t>& Gazetteer::candidates(const std::string& token,
                                                      bool case_sensitive) const {
  const auto& index = case_sensitive ? by_first_ : by_first_lower_;
  auto it = index.find(case_sensitive ? token : ascii_lower(token));
  return it == index.end() ? kNoCandidates : it->second;
}

std::vector<std::string> Gazetteer::types() const {
  std::vector<std::string> out;
  for (const auto& e : entries_) {
    if (std::find(out.begin(), out.end(), e.type) == out.end()) out.push_back(e.type);
  }
  return out;
}

std::vector<LabelAssignment> match_gazetteer(std::span<const Sentence> corpus,
                                             const Gazetteer& gaz, const TagScheme& scheme,
                                             bool case_sensitive) {
  std::vector<int> entry_class(gaz.size());
  for (std::size_t k = 0; k < gaz.size(); ++k) {
    auto cls = scheme.find(gaz.entries()[k].type);
    if (!cls || *cls == TagScheme::kOutside) {
      throw SchemaError("gazetteer type '" + gaz.entries()[k].type + "' is not in the tag scheme");
    }
    entry_class[k] = *cls;
  }

  auto token_eq = [case_sensitive](const std::string& a, const std::string& b) {
    return case_sensitive ? a == b : ascii_lower(a) == ascii_lower(b);
  };

  std::vector<LabelAssignment> out;
  out.reserve(corpus.size());
  for (const auto& s : corpus) {
    std::vector<int> labels(s.size(), TagScheme::kOutside);
    std::size_t i = 0;
    while (i < s.size()) {
      std::size_t best_len = 0;
      std::size_t best_entry = 0;
      // Buckets are in entry order, so strict '>' keeps the earliest entry on ties.
      for (std::size_t idx : gaz.candidates(s.tokens[i], case_sensitive)) {
        const auto& phrase = gaz.entries()[idx].phrase;
        if (phrase.size() <= best_len || i + phrase.size() > s.size()) continue;
        bool ok = true;
        for (std::size_t k = 1; k < phrase.size() && ok; ++k) ok = token_eq(phrase[k], s.tokens[i + k]);
        if (ok) {
          best_len = phrase.size();
          best_entry = idx;
        }
      }
      if (best_len == 0) {
        ++i;
        continue;
      }
      std::fill_n(labels.begin() + static_cast<std::ptrdiff_t>(i), best_len, entry_class[best_entry]);
      i += best_len;
    }
    out.push_back(LabelAssignment::from_labels(std::move(labels)));
  }
  return out;
}

std::vector<AmbiguousPhrase> ambiguity_report(const Gazetteer& gaz) {
  std::map<std::string, std::vector<std::string>> by_phrase;
  std::vector<std::string> order;
  for (const auto& e : gaz.entries()) {
    const auto key = join(e.phrase);
    auto [it, inserted] = by_phrase.try_emplace(key);
    if (inserted) order.push_back(key);
    if (std::find(it->second.begin(), it->second.end(), e.type) == it->second.end()) {
      it->second.push_back(e.type);
    }
  }
  std::vector<AmbiguousPhrase> out;
  for (const auto& key : order) {
    const auto& types = by_phrase[key];
    if (types.size() > 1) out.push_back({key, types});
  }
  std::stable_sort(out.begin(), out.end(), [](const auto& a, const auto& b) {
    return a.types.size() > b.types.size();
  });
  return out;
}

}  // namespace dsner
