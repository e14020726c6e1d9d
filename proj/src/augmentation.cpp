// SPDX-License-Identifier: Apache-2.0
#include "dsner/augmentation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <csignal>
#include <numeric>

#include <sys/wait.h>
#include <unistd.h>

#include "json.hpp"

#include "dsner/checkpoint.hpp"
#include "dsner/error.hpp"
#include "dsner/harness.hpp"
#include "dsner/util.hpp"

namespace dsner {

bool is_subword_piece(std::string_view token) { return token.size() > 2 && token.starts_with("##"); }

MaskedSequence mask_sequence(const Sentence& sentence, double rate, Rng& rng) {
  if (sentence.size() == 0) throw ParameterError("cannot mask an empty sentence");
  if (!(rate > 0.0 && rate < 1.0)) throw ParameterError("mask rate must lie in (0, 1)");
  const std::size_t n = sentence.size();
  const auto count = std::clamp<std::size_t>(
      static_cast<std::size_t>(std::llround(rate * static_cast<double>(n))), 1, n);
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  for (std::size_t j = 0; j < count; ++j) std::swap(idx[j], idx[j + uniform_index(rng, n - j)]);
  idx.resize(count);
  std::sort(idx.begin(), idx.end());
  MaskedSequence m{sentence, std::move(idx), sentence.tokens};
  for (auto p : m.positions) m.view[p] = std::string(kMaskToken);
  return m;
}

void MlmDistribution::validate(std::size_t positions) const {
  if (candidates.size() != positions) {
    throw SchemaError("masked-LM answered " + std::to_string(candidates.size()) +
                      " positions, expected " + std::to_string(positions));
  }
  for (const auto& list : candidates) {
    if (list.empty()) throw SchemaError("masked-LM returned an empty candidate list");
    for (std::size_t r = 0; r < list.size(); ++r) {
      if (!(list[r].prob > 0.0) || !std::isfinite(list[r].prob)) {
        throw SchemaError("masked-LM candidate '" + list[r].token + "' has non-positive probability");
      }
      if (r > 0 && list[r].prob > list[r - 1].prob) {
        throw SchemaError("masked-LM candidates are not in descending order");
      }
    }
  }
}

AugmentedSequence sample_replacements(const MaskedSequence& masked, const MlmDistribution& dist,
                                      std::size_t top_k, Rng& rng) {
  if (top_k < 1) throw ParameterError("top_k must be at least 1");
  dist.validate(masked.positions.size());
  const Sentence& orig = masked.original;
  AugmentedSequence out{orig, std::vector<Provenance>(orig.size(), Provenance::kUnmasked),
                        std::vector<int>(orig.size(), 0)};
  std::vector<std::size_t> eligible;
  for (std::size_t k = 0; k < masked.positions.size(); ++k) {
    const std::size_t pos = masked.positions[k];
    const auto& list = dist.candidates[k];
    const bool cap = orig.is_capitalized[pos] != 0;
    const bool sub = orig.is_subword[pos] != 0;
    eligible.clear();
    double mass = 0.0;
    for (std::size_t r = 0; r < std::min(top_k, list.size()); ++r) {
      const auto& c = list[r];
      if (is_capitalized(c.token) != cap || is_subword_piece(c.token) != sub) continue;
      eligible.push_back(r);
      mass += c.prob;
    }
    if (eligible.empty()) {
      out.provenance[pos] = Provenance::kKept;
      continue;
    }
    double u = uniform01(rng) * mass;
    std::size_t pick = eligible.back();
    for (auto r : eligible) {
      u -= list[r].prob;
      if (u < 0.0) {
        pick = r;
        break;
      }
    }
    out.sentence.tokens[pos] = list[pick].token;
    out.provenance[pos] = Provenance::kReplaced;
    out.rank[pos] = static_cast<int>(pick + 1);
  }
  return out;
}

namespace {

constexpr std::string_view kBoundary = "<s>";

const std::string& context_at(const std::vector<std::string>& view, std::ptrdiff_t i) {
  static const std::string boundary(kBoundary);
  if (i < 0 || i >= static_cast<std::ptrdiff_t>(view.size())) return boundary;
  return view[static_cast<std::size_t>(i)];
}

std::string pair_key(const std::string& a, const std::string& b) { return a + '\x1f' + b; }

}  // namespace

CorpusMlm::CorpusMlm(std::span<const Sentence> corpus, std::size_t max_candidates)
    : max_candidates_(max_candidates) {
  for (const auto& s : corpus) {
    for (std::size_t i = 0; i < s.size(); ++i) {
      const auto p = static_cast<std::ptrdiff_t>(i);
      const auto& w = s.tokens[i];
      const auto& l = context_at(s.tokens, p - 1);
      const auto& r = context_at(s.tokens, p + 1);
      both_[pair_key(l, r)][w] += 1.0;
      left_[l][w] += 1.0;
      right_[r][w] += 1.0;
      unigram_[w] += 1.0;
      total_ += 1.0;
    }
  }
  top_unigrams_.assign(unigram_.begin(), unigram_.end());
  std::sort(top_unigrams_.begin(), top_unigrams_.end(), [](const auto& a, const auto& b) {
    return a.second != b.second ? a.second > b.second : a.first < b.first;
  });
  if (top_unigrams_.size() > max_candidates_) top_unigrams_.resize(max_candidates_);
}

MlmDistribution CorpusMlm::query(const MaskedSequence& masked) {
  if (total_ <= 0.0) throw SchemaError("corpus masked-LM was fitted on an empty corpus");
  MlmDistribution dist;
  for (auto pos : masked.positions) {
    const auto p = static_cast<std::ptrdiff_t>(pos);
    const auto& l = context_at(masked.view, p - 1);
    const auto& r = context_at(masked.view, p + 1);
    std::unordered_map<std::string, double> score;
    auto mix = [&](const Counts& table, const std::string& key, double lambda) {
      const auto it = table.find(key);
      if (it == table.end()) return;
      double sum = 0.0;
      for (const auto& [w, c] : it->second) sum += c;
      for (const auto& [w, c] : it->second) score[w] += lambda * c / sum;
    };
    const bool lm = l == kMaskToken, rm = r == kMaskToken;
    if (!lm && !rm) mix(both_, pair_key(l, r), 0.6);
    if (!lm) mix(left_, l, 0.15);
    if (!rm) mix(right_, r, 0.15);
    for (const auto& [w, c] : top_unigrams_) score[w] += 0.1 * c / total_;
    std::vector<Candidate> list;
    list.reserve(score.size());
    for (const auto& [w, s] : score) list.push_back({w, s});
    std::sort(list.begin(), list.end(), [](const Candidate& a, const Candidate& b) {
      return a.prob != b.prob ? a.prob > b.prob : a.token < b.token;
    });
    if (list.size() > max_candidates_) list.resize(max_candidates_);
    double sum = 0.0;
    for (const auto& c : list) sum += c.prob;
    for (auto& c : list) c.prob /= sum;
    dist.candidates.push_back(std::move(list));
  }
  return dist;
}

OracleMlm::OracleMlm(const SyntheticGrammar& grammar, std::size_t max_candidates, std::uint64_t seed)
    : grammar_(grammar), max_candidates_(max_candidates), seed_(seed) {
  if (max_candidates < 1) throw ParameterError("oracle needs at least one candidate");
}

MlmDistribution OracleMlm::query(const MaskedSequence& masked) {
  std::string joined = join(masked.view, " ");
  const std::uint64_t h = fnv1a64(reinterpret_cast<const std::uint8_t*>(joined.data()), joined.size());
  MlmDistribution dist;
  for (auto pos : masked.positions) {
    const std::string& original = masked.original.tokens[pos];
    auto pool = grammar_.same_category(original);
    if (pool.empty()) throw SchemaError("oracle masked-LM does not know '" + original + "'");
    // Weighted draw without replacement stands in for context sensitivity.
    Rng rng = make_rng(seed_ ^ h, pos);
    std::vector<Candidate> list;
    std::vector<double> w(pool.size());
    for (std::size_t i = 0; i < pool.size(); ++i) w[i] = grammar_.word_weight(pool[i]);
    while (list.size() < max_candidates_ && !pool.empty()) {
      const double total = std::accumulate(w.begin(), w.end(), 0.0);
      double u = uniform01(rng) * total;
      std::size_t k = pool.size() - 1;
      for (std::size_t i = 0; i < pool.size(); ++i) {
        u -= w[i];
        if (u < 0.0) {
          k = i;
          break;
        }
      }
      list.push_back({pool[k], w[k]});
      pool.erase(pool.begin() + static_cast<std::ptrdiff_t>(k));
      w.erase(w.begin() + static_cast<std::ptrdiff_t>(k));
    }
    std::stable_sort(list.begin(), list.end(),
                     [](const Candidate& a, const Candidate& b) { return a.prob > b.prob; });
    double sum = 0.0;
    for (const auto& c : list) sum += c.prob;
    for (auto& c : list) c.prob /= sum;
    dist.candidates.push_back(std::move(list));
  }
  return dist;
}

ExternalMlm::ExternalMlm(const std::string& command) {
  int in_pipe[2], out_pipe[2];
  if (pipe(in_pipe) != 0 || pipe(out_pipe) != 0) throw IoError("cannot create pipes for masked-LM adapter");
  pid_ = fork();
  if (pid_ < 0) throw IoError("cannot fork masked-LM adapter");
  if (pid_ == 0) {
    dup2(in_pipe[0], STDIN_FILENO);
    dup2(out_pipe[1], STDOUT_FILENO);
    close(in_pipe[0]);
    close(in_pipe[1]);
    close(out_pipe[0]);
    close(out_pipe[1]);
    execl("/bin/sh", "sh", "-c", command.c_str(), static_cast<char*>(nullptr));
    _exit(127);
  }
  close(in_pipe[0]);
  close(out_pipe[1]);
  to_child_ = in_pipe[1];
  from_child_ = out_pipe[0];
  std::signal(SIGPIPE, SIG_IGN);
}

ExternalMlm::~ExternalMlm() {
  if (to_child_ >= 0) close(to_child_);
  if (from_child_ >= 0) close(from_child_);
  if (pid_ > 0) waitpid(pid_, nullptr, 0);
}

std::unique_ptr<ExternalMlm> ExternalMlm::from_environment() {
  const char* cmd = std::getenv("DSNER_MLM_ADAPTER");
  if (cmd == nullptr || *cmd == '\0') {
    throw ConfigError("augment.adapter = external needs DSNER_MLM_ADAPTER to name the adapter executable");
  }
  return std::make_unique<ExternalMlm>(cmd);
}

MlmDistribution ExternalMlm::query(const MaskedSequence& masked) {
  nlohmann::json req;
  req["tokens"] = masked.view;
  req["mask"] = masked.positions;
  const std::string line = req.dump() + "\n";
  std::size_t sent = 0;
  while (sent < line.size()) {
    const auto w = write(to_child_, line.data() + sent, line.size() - sent);
    if (w <= 0) throw IoError("masked-LM adapter closed its input");
    sent += static_cast<std::size_t>(w);
  }
  std::size_t nl;
  while ((nl = buffer_.find('\n')) == std::string::npos) {
    char chunk[4096];
    const auto r = read(from_child_, chunk, sizeof chunk);
    if (r <= 0) throw IoError("masked-LM adapter closed its output");
    buffer_.append(chunk, static_cast<std::size_t>(r));
  }
  const std::string reply = buffer_.substr(0, nl);
  buffer_.erase(0, nl + 1);
  MlmDistribution dist;
  try {
    const auto j = nlohmann::json::parse(reply);
    for (const auto& list : j.at("candidates")) {
      std::vector<Candidate> cands;
      for (const auto& c : list) cands.push_back({c.at(0).get<std::string>(), c.at(1).get<double>()});
      dist.candidates.push_back(std::move(cands));
    }
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("malformed masked-LM reply: ") + e.what());
  }
  dist.validate(masked.positions.size());
  return dist;
}

AugmentedCorpus augment_corpus(std::span<const Sentence> corpus, MlmAdapter& adapter, double rate,
                               std::size_t top_k, std::uint64_t base_seed, std::ostream* audit) {
  if (top_k < 1) throw ParameterError("top_k must be at least 1");
  AugmentedCorpus out;
  out.pairs.resize(corpus.size());
  for (std::size_t s = 0; s < corpus.size(); ++s) {
    Rng rng = make_rng(base_seed ^ s, 0);
    try {
      const MaskedSequence masked = mask_sequence(corpus[s], rate, rng);
      const MlmDistribution dist = adapter.query(masked);
      AugmentedSequence aug = sample_replacements(masked, dist, top_k, rng);
      if (audit) {
        for (auto pos : masked.positions) {
          *audit << corpus[s].id << '\t' << pos << '\t' << corpus[s].tokens[pos] << '\t'
                 << aug.sentence.tokens[pos] << '\t'
                 << (aug.provenance[pos] == Provenance::kReplaced ? "replaced" : "kept") << '\t'
                 << aug.rank[pos] << '\n';
        }
      }
      aug.sentence.id = corpus[s].id + "+aug";
      out.pairs[s] = std::move(aug);
    } catch (const Error& e) {
      ++out.skipped;
      out.warnings.push_back("skipped " + corpus[s].id + ": " + e.what());
    }
  }
  return out;
}

}  // namespace dsner
