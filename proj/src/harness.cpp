// SPDX-License-Identifier: Apache-2.0
#include "dsner/harness.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <set>

#include "dsner/error.hpp"
#include "dsner/evaluation.hpp"

namespace dsner {

std::string capitalize(const std::string& word) {
  std::string out = word;
  if (!out.empty()) out[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(out[0])));
  return out;
}

std::string decapitalize(const std::string& word) {
  std::string out = word;
  if (!out.empty()) out[0] = static_cast<char>(std::tolower(static_cast<unsigned char>(out[0])));
  return out;
}

GrammarSpec GrammarSpec::from_bench(const BenchRecipe& bench) {
  GrammarSpec g;
  g.context_vocab = bench.context_vocab;
  g.entity_types = bench.entity_types;
  g.length = bench.length;
  g.held_out_fraction = bench.held_out_fraction;
  return g;
}

namespace {

constexpr std::string_view kOnsets = "bdfgklmnprstvz";
constexpr std::string_view kVowels = "aeiou";
const std::vector<std::string> kTypeNames = {"PER", "ORG", "LOC", "MISC"};

std::string pseudo_word(Rng& rng, std::size_t syllables) {
  std::string w;
  for (std::size_t s = 0; s < syllables; ++s) {
    w += kOnsets[uniform_index(rng, kOnsets.size())];
    w += kVowels[uniform_index(rng, kVowels.size())];
  }
  if (uniform01(rng) < 0.5) w += kOnsets[uniform_index(rng, kOnsets.size())];
  return w;
}

std::vector<double> zipf_cdf(std::size_t n, double s, const std::vector<std::uint8_t>& skip) {
  std::vector<double> cdf(n);
  double acc = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    if (skip.empty() || !skip[r]) acc += 1.0 / std::pow(static_cast<double>(r + 1), s);
    cdf[r] = acc;
  }
  for (auto& c : cdf) c /= acc;
  return cdf;
}

std::size_t sample_cdf(const std::vector<double>& cdf, Rng& rng) {
  const double u = uniform01(rng);
  const auto it = std::upper_bound(cdf.begin(), cdf.end(), u);
  return std::min(static_cast<std::size_t>(it - cdf.begin()), cdf.size() - 1);
}

}  // namespace

SyntheticGrammar::SyntheticGrammar(const GrammarSpec& spec, std::uint64_t seed) : spec_(spec) {
  const std::size_t E = spec.entity_types;
  if (E == 0) throw ParameterError("grammar needs at least one entity type");
  if (spec.length < 3) throw ParameterError("grammar sequence length must be at least 3");
  const std::size_t cue_words = E * spec.cues_per_type + spec.shared_cues * 2;
  if (spec.context_vocab <= cue_words) {
    throw ParameterError("context vocabulary too small for " + std::to_string(cue_words) + " cue words");
  }
  std::vector<std::string> names;
  for (std::size_t t = 0; t < E; ++t) {
    names.push_back(t < kTypeNames.size() ? kTypeNames[t] : "T" + std::to_string(t));
  }
  scheme_ = TagScheme(names);

  Rng rng = make_rng(seed, 0);
  std::set<std::string> used;
  auto fresh = [&](std::size_t syllables) {
    for (;;) {
      std::string w = pseudo_word(rng, syllables);
      if (used.insert(w).second) return w;
    }
  };

  lexicons_.resize(E);
  for (std::size_t t = 0; t < E; ++t) {
    std::vector<std::uint8_t> held(spec.lexicon_size, 0);
    for (std::size_t r = 0; r < spec.lexicon_size; ++r) {
      lexicons_[t].push_back(capitalize(fresh(2 + uniform_index(rng, 2))));
    }
    const auto n_held = static_cast<std::size_t>(
        std::llround(spec.held_out_fraction * static_cast<double>(spec.lexicon_size)));
    std::vector<std::size_t> ranks(spec.lexicon_size);
    for (std::size_t r = 0; r < ranks.size(); ++r) ranks[r] = r;
    shuffle_in_place(ranks, rng);
    for (std::size_t k = 0; k < n_held && k < ranks.size(); ++k) held[ranks[k]] = 1;
    const auto full = zipf_cdf(spec.lexicon_size, spec.zipf_exponent, {});
    const auto seen = zipf_cdf(spec.lexicon_size, spec.zipf_exponent, held);
    lexicon_cdf_.push_back(full);
    lexicon_cdf_.push_back(seen);
    for (std::size_t r = 0; r < spec.lexicon_size; ++r) {
      const auto& w = lexicons_[t][r];
      words_[w] = {WordInfo::Kind::kEntity, static_cast<int>(t + 1), held[r] != 0};
      weights_[w] = 1.0 / std::pow(static_cast<double>(r + 1), spec.zipf_exponent);
    }
  }

  for (std::size_t g = 0; g < E; ++g) {
    cues_.emplace_back();
    cue_types_.push_back({static_cast<int>(g + 1)});
    for (std::size_t k = 0; k < spec.cues_per_type; ++k) cues_.back().push_back(fresh(2));
  }
  for (std::size_t s = 0; s < spec.shared_cues; ++s) {
    cues_.emplace_back();
    cue_types_.push_back({static_cast<int>(s % E + 1), static_cast<int>((s + 1) % E + 1)});
    for (int k = 0; k < 2; ++k) cues_.back().push_back(fresh(2));
  }
  for (std::size_t g = 0; g < cues_.size(); ++g) {
    for (const auto& w : cues_[g]) {
      words_[w] = {WordInfo::Kind::kCue, static_cast<int>(g), false};
      weights_[w] = 1.0;
    }
  }
  while (fillers_.size() + cue_words < spec.context_vocab) {
    fillers_.push_back(fresh(1 + uniform_index(rng, 2)));
    words_[fillers_.back()] = {WordInfo::Kind::kFiller, 0, false};
    weights_[fillers_.back()] = 1.0;
  }

  // Each mention is a cue slot followed by one or two entity slots, so two
  // mentions are never adjacent.
  for (std::size_t k = 0; k < spec.templates; ++k) {
    std::vector<std::vector<Slot>> items;
    std::size_t used_len = 0;
    std::size_t mentions = 0;
    if (spec.entity_slots && uniform01(rng) >= 0.05) mentions = 1 + uniform_index(rng, 3);
    for (std::size_t m = 0; m < mentions; ++m) {
      const int type = static_cast<int>(1 + uniform_index(rng, E));
      const std::size_t span = uniform01(rng) < spec.two_token_rate ? 2 : 1;
      if (used_len + span + 1 > spec.length) break;
      int group = type - 1;
      if (spec.shared_cues > 0 && uniform01(rng) < 0.25) {
        std::vector<int> options;
        for (std::size_t g = E; g < cues_.size(); ++g) {
          const auto& ts = cue_types_[g];
          if (std::find(ts.begin(), ts.end(), type) != ts.end()) options.push_back(static_cast<int>(g));
        }
        if (!options.empty()) group = options[uniform_index(rng, options.size())];
      }
      std::vector<Slot> item{{SlotKind::kCue, group}};
      for (std::size_t j = 0; j < span; ++j) item.push_back({SlotKind::kEntity, type});
      used_len += item.size();
      items.push_back(std::move(item));
    }
    while (used_len < spec.length) {
      items.push_back({{SlotKind::kFiller, 0}});
      ++used_len;
    }
    shuffle_in_place(items, rng);
    std::vector<Slot> tmpl;
    for (const auto& it : items) tmpl.insert(tmpl.end(), it.begin(), it.end());
    templates_.push_back(std::move(tmpl));
  }
}

SyntheticCorpus SyntheticGrammar::generate(std::size_t n, std::uint64_t seed,
                                           bool include_held_out) const {
  if (n == 0) throw ParameterError("generate needs at least one sequence");
  Rng rng = make_rng(seed, 1);
  SyntheticCorpus out;
  out.sentences.reserve(n);
  out.gold.reserve(n);
  for (std::size_t s = 0; s < n; ++s) {
    const auto& tmpl = templates_[uniform_index(rng, templates_.size())];
    std::vector<std::string> tokens;
    std::vector<int> gold;
    for (const auto& slot : tmpl) {
      switch (slot.kind) {
        case SlotKind::kFiller:
          tokens.push_back(fillers_[uniform_index(rng, fillers_.size())]);
          gold.push_back(TagScheme::kOutside);
          break;
        case SlotKind::kCue: {
          const auto& g = cues_[static_cast<std::size_t>(slot.group)];
          tokens.push_back(g[uniform_index(rng, g.size())]);
          gold.push_back(TagScheme::kOutside);
          break;
        }
        case SlotKind::kEntity: {
          const auto t = static_cast<std::size_t>(slot.group - 1);
          const auto& cdf = lexicon_cdf_[2 * t + (include_held_out ? 0 : 1)];
          tokens.push_back(lexicons_[t][sample_cdf(cdf, rng)]);
          gold.push_back(slot.group);
          break;
        }
      }
    }
    if (!TagScheme::is_entity(gold.front())) tokens.front() = capitalize(tokens.front());
    out.sentences.push_back(Sentence::from_tokens("synth:" + std::to_string(s), std::move(tokens)));
    out.gold.push_back(std::move(gold));
  }
  return out;
}

double SyntheticGrammar::expected_entity_fraction() const {
  double acc = 0.0;
  for (const auto& t : templates_) {
    const auto ent = std::count_if(t.begin(), t.end(),
                                   [](const Slot& s) { return s.kind == SlotKind::kEntity; });
    acc += static_cast<double>(ent) / static_cast<double>(t.size());
  }
  return acc / static_cast<double>(templates_.size());
}

std::optional<WordInfo> SyntheticGrammar::lookup(const std::string& word) const {
  if (auto it = words_.find(word); it != words_.end()) return it->second;
  if (is_capitalized(word)) {
    auto it = words_.find(decapitalize(word));
    if (it != words_.end() && it->second.kind != WordInfo::Kind::kEntity) return it->second;
  }
  return std::nullopt;
}

std::vector<std::string> SyntheticGrammar::same_category(const std::string& word) const {
  const auto info = lookup(word);
  if (!info) return {};
  std::vector<std::string> out;
  switch (info->kind) {
    case WordInfo::Kind::kEntity:
      return lexicons_[static_cast<std::size_t>(info->group - 1)];
    case WordInfo::Kind::kCue:
      out = cues_[static_cast<std::size_t>(info->group)];
      break;
    case WordInfo::Kind::kFiller:
      out = fillers_;
      break;
  }
  if (is_capitalized(word)) {
    for (auto& w : out) w = capitalize(w);
  }
  return out;
}

double SyntheticGrammar::word_weight(const std::string& word) const {
  const auto info = lookup(word);
  if (!info) return 0.0;
  auto it = weights_.find(word);
  if (it == weights_.end()) it = weights_.find(decapitalize(word));
  return it == weights_.end() ? 0.0 : it->second;
}

const std::vector<std::string>& SyntheticGrammar::lexicon(int entity_class) const {
  if (entity_class < 1 || static_cast<std::size_t>(entity_class) > lexicons_.size()) {
    throw ParameterError("no lexicon for class " + std::to_string(entity_class));
  }
  return lexicons_[static_cast<std::size_t>(entity_class - 1)];
}

Gazetteer SyntheticGrammar::make_gazetteer(double miss_rate, double confuse_rate,
                                           std::uint64_t seed) const {
  Rng rng = make_rng(seed, 2);
  Gazetteer gaz;
  const std::size_t E = lexicons_.size();
  for (std::size_t t = 0; t < E; ++t) {
    for (const auto& w : lexicons_[t]) {
      const double u = uniform01(rng);
      if (u < miss_rate) continue;
      std::size_t type = t;
      if (u < miss_rate + confuse_rate && E > 1) type = (t + 1 + uniform_index(rng, E - 1)) % E;
      gaz.add({w}, scheme_.name(static_cast<int>(type + 1)));
    }
  }
  return gaz;
}

void NoiseSpec::validate() const {
  if (!(deletion_rate >= 0.0 && deletion_rate < 1.0) && deletion_rate != 1.0) {
    throw ParameterError("deletion rate must lie in [0, 1]");
  }
  if (!(flip_rate >= 0.0 && flip_rate <= 1.0)) throw ParameterError("flip rate must lie in [0, 1]");
  if (deletion_rate + flip_rate > 1.0 + 1e-12) {
    throw ParameterError("deletion and flip rates must not sum above 1");
  }
}

NoisyLabels inject_noise(const std::vector<std::vector<int>>& gold, std::size_t entity_types,
                         const NoiseSpec& spec) {
  spec.validate();
  Rng rng = make_rng(spec.seed, 3);
  NoisyLabels out;
  out.labels = gold;
  out.mask.reserve(gold.size());
  for (std::size_t s = 0; s < gold.size(); ++s) {
    auto& row = out.labels[s];
    std::vector<std::uint8_t> mask(row.size(), 0);
    for (const auto& span : decode_entities(gold[s])) {
      ++out.spans;
      const double u = uniform01(rng);
      int replacement = span.type;
      if (u < spec.deletion_rate) {
        replacement = TagScheme::kOutside;
        ++out.deleted;
      } else if (u < spec.deletion_rate + spec.flip_rate && entity_types > 1) {
        const auto shift = 1 + uniform_index(rng, entity_types - 1);
        replacement = static_cast<int>((static_cast<std::size_t>(span.type) - 1 + shift) % entity_types) + 1;
        ++out.flipped;
      }
      if (replacement == span.type) continue;
      for (int i = span.start; i < span.end; ++i) {
        row[static_cast<std::size_t>(i)] = replacement;
        mask[static_cast<std::size_t>(i)] = 1;
      }
    }
    out.mask.push_back(std::move(mask));
  }
  return out;
}

std::vector<LabelAssignment> Benchmark::noisy_assignments() const {
  std::vector<LabelAssignment> out;
  out.reserve(noise.labels.size());
  for (const auto& row : noise.labels) out.push_back(LabelAssignment::from_labels(row));
  return out;
}

double Benchmark::corruption_rate() const {
  std::size_t total = 0, bad = 0;
  for (const auto& m : noise.mask) {
    total += m.size();
    bad += static_cast<std::size_t>(std::count(m.begin(), m.end(), 1));
  }
  return total ? static_cast<double>(bad) / static_cast<double>(total) : 0.0;
}

Benchmark make_benchmark(const BenchRecipe& bench, std::uint64_t seed) {
  SyntheticGrammar grammar(GrammarSpec::from_bench(bench), derive_seed(seed, 10));
  auto train = grammar.generate(bench.train_size, derive_seed(seed, 11), false);
  auto test = grammar.generate(bench.test_size, derive_seed(seed, 12), true);
  for (std::size_t i = 0; i < test.sentences.size(); ++i) test.sentences[i].id = "test:" + std::to_string(i);
  for (std::size_t i = 0; i < train.sentences.size(); ++i) train.sentences[i].id = "train:" + std::to_string(i);
  NoiseSpec ns{bench.deletion_rate, bench.flip_rate, derive_seed(seed, 13)};
  auto noise = inject_noise(train.gold, grammar.scheme().entity_count(), ns);
  return {std::move(grammar), std::move(train), std::move(test), std::move(noise)};
}

}  // namespace dsner
