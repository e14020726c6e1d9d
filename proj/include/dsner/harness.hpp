// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <tuple>
#include <unordered_map>
#include <vector>

#include "dsner/corpus.hpp"
#include "dsner/gazetteer.hpp"
#include "dsner/recipe.hpp"
#include "dsner/rng.hpp"
#include "dsner/tagger.hpp"

namespace dsner {

struct GrammarSpec {
  std::size_t context_vocab = 100;  // cue + filler words
  std::size_t entity_types = 4;
  std::size_t lexicon_size = 150;  // words per entity type
  std::size_t length = 12;
  std::size_t templates = 64;
  std::size_t cues_per_type = 4;
  std::size_t shared_cues = 4;      // each precedes two types
  double held_out_fraction = 0.2;   // lexicon words absent from training draws
  double zipf_exponent = 1.0;
  double two_token_rate = 0.4;      // mentions of two lexicon words
  bool entity_slots = true;

  static GrammarSpec from_bench(const BenchRecipe& bench);
};

// Word categories: one per entity type (the lexicons), one per cue group, and
// one filler group. A word belongs to exactly one category.
struct WordInfo {
  enum class Kind { kEntity, kCue, kFiller };
  Kind kind = Kind::kFiller;
  int group = 0;  // entity class for kEntity, cue group for kCue
  bool held_out = false;
};

struct SyntheticCorpus {
  std::vector<Sentence> sentences;
  std::vector<std::vector<int>> gold;
};

class SyntheticGrammar {
 public:
  enum class SlotKind { kFiller, kCue, kEntity };
  struct Slot {
    SlotKind kind = SlotKind::kFiller;
    int group = 0;
  };

  SyntheticGrammar(const GrammarSpec& spec, std::uint64_t seed);

  const GrammarSpec& spec() const { return spec_; }
  const TagScheme& scheme() const { return scheme_; }
  const std::vector<std::vector<Slot>>& templates() const { return templates_; }

  // Training draws skip held-out lexicon words; test draws use the whole
  // lexicon. Throws ParameterError when n == 0.
  SyntheticCorpus generate(std::size_t n, std::uint64_t seed, bool include_held_out) const;

  // Expected entity-token fraction implied by the templates.
  double expected_entity_fraction() const;

  // Category of a surface form; nullopt for words outside the grammar.
  std::optional<WordInfo> lookup(const std::string& word) const;
  // Surface forms sharing the category of `word` (capitalization preserved).
  std::vector<std::string> same_category(const std::string& word) const;
  double word_weight(const std::string& word) const;

  const std::vector<std::string>& lexicon(int entity_class) const;
  // Gazetteer over every lexicon word with `miss_rate` of words left out and
  // `confuse_rate` of words listed under a wrong type.
  Gazetteer make_gazetteer(double miss_rate, double confuse_rate, std::uint64_t seed) const;

 private:
  GrammarSpec spec_;
  TagScheme scheme_;
  std::vector<std::vector<std::string>> lexicons_;  // index = entity class - 1
  std::vector<std::vector<double>> lexicon_cdf_;
  std::vector<std::vector<std::string>> cues_;      // index = cue group
  std::vector<std::vector<int>> cue_types_;         // entity classes each cue group precedes
  std::vector<std::string> fillers_;
  std::vector<std::vector<Slot>> templates_;
  std::unordered_map<std::string, WordInfo> words_;
  std::unordered_map<std::string, double> weights_;
};

std::string capitalize(const std::string& word);
std::string decapitalize(const std::string& word);

struct NoiseSpec {
  double deletion_rate = 0.2;
  double flip_rate = 0.3;
  std::uint64_t seed = 0;

  void validate() const;  // ParameterError
};

struct NoisyLabels {
  std::vector<std::vector<int>> labels;
  std::vector<std::vector<std::uint8_t>> mask;  // 1 where the label changed
  std::size_t spans = 0;
  std::size_t deleted = 0;
  std::size_t flipped = 0;
};

// Span-level corruption. Each gold span is deleted with probability
// deletion_rate, otherwise retyped uniformly with probability flip_rate.
NoisyLabels inject_noise(const std::vector<std::vector<int>>& gold, std::size_t entity_types,
                         const NoiseSpec& spec);

// A synthetic train/test split with noisy training labels.
struct Benchmark {
  SyntheticGrammar grammar;
  SyntheticCorpus train;
  SyntheticCorpus test;
  NoisyLabels noise;

  std::vector<LabelAssignment> noisy_assignments() const;
  double corruption_rate() const;  // corrupted tokens / training tokens
};

Benchmark make_benchmark(const BenchRecipe& bench, std::uint64_t seed);

struct ArmResult {
  std::string name;
  std::vector<double> f1;  // one per seed
  double median = 0.0;
  double mean = 0.0;
  double stddev = 0.0;     // sample standard deviation
};

struct AbReport {
  std::string protocol;
  std::vector<std::uint64_t> seeds;
  std::vector<ArmResult> arms;
  std::map<std::string, double> metrics;

  const ArmResult& arm(const std::string& name) const;
  std::string to_table() const;
  std::string to_kv() const;
};

double median_of(std::vector<double> v);
double stddev_of(const std::vector<double>& v);
ArmResult summarize_arm(std::string name, std::vector<double> f1);

const std::vector<std::string>& ab_protocols();

// Trains and caches the models the protocols compare, so protocols sharing a
// seed reuse runs. Single-threaded and deterministic.
class Lab {
 public:
  explicit Lab(TrainRecipe recipe);
  ~Lab();
  Lab(const Lab&) = delete;
  Lab& operator=(const Lab&) = delete;

  const TrainRecipe& recipe() const { return recipe_; }
  const Benchmark& bench() const { return bench_; }
  const Vocabulary& vocab() const { return vocab_; }

  struct RobustRun {
    TaggerModel model;
    double f1 = 0.0;
    std::size_t zeroed = 0;            // included tokens with w_i = 0 at the end
    std::size_t zeroed_corrupted = 0;  // of those, tokens the noise mask marks
  };
  struct EnsembleRun {
    std::vector<double> member_f1;
    TaggerModel distilled;
    double distilled_f1 = 0.0;
    double final_kl = 0.0;
  };

  // variant: "gce+removal" (the recipe), "gce" (tau = 0) or "ce" (tau = 0).
  const RobustRun& robust(std::uint64_t seed, const std::string& variant);
  // Members use seeds seed + k and share the encoder initialization of `seed`.
  const EnsembleRun& ensemble(std::uint64_t seed);
  double self_train_f1(std::uint64_t seed, bool use_augmentation);

  double f1(const TaggerModel& model) const;

 private:
  const RobustRun& member(std::uint64_t base, std::size_t k, const std::string& variant);

  TrainRecipe recipe_;
  Benchmark bench_;
  Vocabulary vocab_;
  std::vector<LabelAssignment> noisy_;
  std::map<std::tuple<std::uint64_t, std::size_t, std::string>, RobustRun> robust_;
  std::map<std::uint64_t, EnsembleRun> ensembles_;
  std::map<std::pair<std::uint64_t, bool>, double> self_trained_;
};

AbReport run_ab(const std::string& protocol, Lab& lab, const std::vector<std::uint64_t>& seeds);

// Runs one protocol over `seeds`. Arms share the benchmark split and seeds;
// only the treatment differs. Throws ParameterError for unknown protocols.
AbReport run_ab(const std::string& protocol, const TrainRecipe& recipe,
                const std::vector<std::uint64_t>& seeds);

}  // namespace dsner
