// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

#include "dsner/augmentation.hpp"
#include "dsner/ensemble.hpp"
#include "dsner/error.hpp"
#include "dsner/evaluation.hpp"
#include "dsner/harness.hpp"
#include "dsner/self_training.hpp"
#include "dsner/util.hpp"

namespace dsner {

double median_of(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

double stddev_of(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

ArmResult summarize_arm(std::string name, std::vector<double> f1) {
  ArmResult a;
  a.name = std::move(name);
  a.median = median_of(f1);
  a.mean = f1.empty() ? 0.0 : std::accumulate(f1.begin(), f1.end(), 0.0) / static_cast<double>(f1.size());
  a.stddev = stddev_of(f1);
  a.f1 = std::move(f1);
  return a;
}

const ArmResult& AbReport::arm(const std::string& name) const {
  for (const auto& a : arms) {
    if (a.name == name) return a;
  }
  throw ParameterError("report for '" + protocol + "' has no arm '" + name + "'");
}

std::string AbReport::to_table() const {
  std::ostringstream out;
  char line[256];
  out << "protocol " << protocol << '\n';
  std::snprintf(line, sizeof line, "%-18s %8s %8s %8s  %s\n", "arm", "median", "mean", "std", "per-seed f1");
  out << line;
  for (const auto& a : arms) {
    std::string seeds;
    for (double f : a.f1) {
      char buf[16];
      std::snprintf(buf, sizeof buf, " %.4f", f);
      seeds += buf;
    }
    std::snprintf(line, sizeof line, "%-18s %8.4f %8.4f %8.4f %s\n", a.name.c_str(), a.median, a.mean,
                  a.stddev, seeds.c_str());
    out << line;
  }
  for (const auto& [k, v] : metrics) {
    std::snprintf(line, sizeof line, "%-28s %.6f\n", k.c_str(), v);
    out << line;
  }
  return out.str();
}

std::string AbReport::to_kv() const {
  std::ostringstream out;
  out << "protocol=" << protocol << '\n';
  std::vector<std::string> s;
  for (auto x : seeds) s.push_back(std::to_string(x));
  out << "seeds=" << join(s, ",") << '\n';
  for (const auto& a : arms) {
    std::vector<std::string> f;
    for (double x : a.f1) f.push_back(format_double(x));
    out << "arm." << a.name << ".f1=" << join(f, ",") << '\n'
        << "arm." << a.name << ".median=" << format_double(a.median) << '\n'
        << "arm." << a.name << ".mean=" << format_double(a.mean) << '\n'
        << "arm." << a.name << ".std=" << format_double(a.stddev) << '\n';
  }
  for (const auto& [k, v] : metrics) out << "metric." << k << '=' << format_double(v) << '\n';
  return out.str();
}

const std::vector<std::string>& ab_protocols() {
  static const std::vector<std::string> names = {"gce_vs_ce", "removal_on_off", "ensemble_variance",
                                                 "st_on_off", "aug_on_off"};
  return names;
}

Lab::Lab(TrainRecipe recipe)
    : recipe_(std::move(recipe)),
      bench_(make_benchmark(recipe_.bench, recipe_.seed)),
      vocab_(Vocabulary::build(bench_.train.sentences)),
      noisy_(bench_.noisy_assignments()) {}

Lab::~Lab() = default;

double Lab::f1(const TaggerModel& model) const {
  std::vector<std::vector<int>> pred;
  pred.reserve(bench_.test.sentences.size());
  for (const auto& s : bench_.test.sentences) pred.push_back(decode_argmax(predict(model, s).probs));
  return score_corpus(pred, bench_.test.gold).f1;
}

const Lab::RobustRun& Lab::member(std::uint64_t base, std::size_t k, const std::string& variant) {
  const auto key = std::make_tuple(base, k, variant);
  if (auto it = robust_.find(key); it != robust_.end()) return it->second;
  const std::uint64_t seed = base + k;
  RobustConfig cfg = RobustConfig::from_recipe(recipe_, seed);
  if (variant == "ce") {
    cfg.loss = LossKind::kCe;
    cfg.tau = 0.0;
  } else if (variant == "gce") {
    cfg.tau = 0.0;
  } else if (variant != "gce+removal") {
    throw ParameterError("unknown robust variant '" + variant + "'");
  }
  TaggerModel init = initial_model(recipe_.model, bench_.grammar.scheme(), vocab_, base, seed);
  RobustResult res = train_robust(std::move(init), bench_.train.sentences, noisy_, cfg);
  RobustRun run{std::move(res.model), 0.0, 0, 0};
  run.f1 = f1(run.model);
  for (std::size_t s = 0; s < res.assignments.size(); ++s) {
    const auto& a = res.assignments[s];
    for (std::size_t i = 0; i < a.size(); ++i) {
      if (a.included[i] && !a.weight[i]) {
        ++run.zeroed;
        run.zeroed_corrupted += bench_.noise.mask[s][i];
      }
    }
  }
  return robust_.emplace(key, std::move(run)).first->second;
}

const Lab::RobustRun& Lab::robust(std::uint64_t seed, const std::string& variant) {
  return member(seed, 0, variant);
}

const Lab::EnsembleRun& Lab::ensemble(std::uint64_t seed) {
  if (auto it = ensembles_.find(seed); it != ensembles_.end()) return it->second;
  std::vector<TaggerModel> members;
  EnsembleRun run;
  for (std::size_t k = 0; k < recipe_.ensemble.members; ++k) {
    const RobustRun& m = member(seed, k, "gce+removal");
    run.member_f1.push_back(m.f1);
    members.push_back(m.model);
  }
  DistillConfig dc;
  dc.epochs = recipe_.ensemble.epochs;
  dc.batch_size = recipe_.robust.batch_size;
  dc.lr = recipe_.ensemble_lr();
  dc.seed = seed;
  TaggerModel init = initial_model(recipe_.model, bench_.grammar.scheme(), vocab_, seed, seed);
  DistillResult d = distill(members, std::move(init), bench_.train.sentences, dc);
  run.final_kl = d.final_kl;
  run.distilled = std::move(d.model);
  run.distilled_f1 = f1(run.distilled);
  return ensembles_.emplace(seed, std::move(run)).first->second;
}

double Lab::self_train_f1(std::uint64_t seed, bool use_augmentation) {
  const auto key = std::make_pair(seed, use_augmentation);
  if (auto it = self_trained_.find(key); it != self_trained_.end()) return it->second;
  const EnsembleRun& ens = ensemble(seed);
  std::vector<std::optional<AugmentedSequence>> pairs;
  if (use_augmentation) {
    std::unique_ptr<MlmAdapter> adapter;
    if (recipe_.augment.adapter == "oracle") {
      adapter = std::make_unique<OracleMlm>(bench_.grammar);
    } else if (recipe_.augment.adapter == "external") {
      adapter = ExternalMlm::from_environment();
    } else {
      adapter = std::make_unique<CorpusMlm>(bench_.train.sentences);
    }
    pairs = augment_corpus(bench_.train.sentences, *adapter, recipe_.augment.mask_rate,
                           recipe_.augment.top_k, derive_seed(seed, 20))
                .pairs;
  }
  SelfTrainConfig sc;
  sc.iterations = recipe_.self_train.iterations;
  sc.batch_size = recipe_.self_train.batch_size;
  sc.lr = recipe_.self_train_lr();
  sc.confidence_margin = recipe_.self_train.confidence_margin;
  sc.use_augmentation = use_augmentation;
  sc.per_batch_frequencies = recipe_.self_train.per_batch_frequencies;
  sc.seed = seed;
  SelfTrainResult st = self_train(ens.distilled, bench_.train.sentences, pairs, sc);
  const double score = f1(st.model);
  self_trained_.emplace(key, score);
  return score;
}

namespace {

void removal_metrics(AbReport& report, Lab& lab, const std::vector<std::uint64_t>& seeds) {
  std::vector<double> precision;
  for (auto s : seeds) {
    const auto& r = lab.robust(s, "gce+removal");
    precision.push_back(r.zeroed ? static_cast<double>(r.zeroed_corrupted) / static_cast<double>(r.zeroed)
                                 : 0.0);
  }
  const double base = lab.bench().corruption_rate();
  report.metrics["corruption_rate"] = base;
  report.metrics["removal_precision_median"] = median_of(precision);
  report.metrics["removal_enrichment"] = base > 0.0 ? median_of(precision) / base : 0.0;
}

}  // namespace

AbReport run_ab(const std::string& protocol, Lab& lab, const std::vector<std::uint64_t>& seeds) {
  const auto& names = ab_protocols();
  if (std::find(names.begin(), names.end(), protocol) == names.end()) {
    throw ParameterError("unknown protocol '" + protocol + "' (expected one of " + join(names, ", ") + ")");
  }
  if (seeds.empty()) throw ParameterError("a protocol needs at least one seed");
  AbReport report;
  report.protocol = protocol;
  report.seeds = seeds;
  auto robust_arm = [&](const std::string& variant) {
    std::vector<double> f;
    for (auto s : seeds) f.push_back(lab.robust(s, variant).f1);
    return summarize_arm(variant, f);
  };
  if (protocol == "gce_vs_ce" || protocol == "removal_on_off") {
    report.arms.push_back(robust_arm("gce+removal"));
    report.arms.push_back(robust_arm(protocol == "gce_vs_ce" ? "ce" : "gce"));
    report.metrics["delta_median"] = report.arms[0].median - report.arms[1].median;
    removal_metrics(report, lab, seeds);
  } else if (protocol == "ensemble_variance") {
    std::vector<double> members, distilled, kl;
    for (auto s : seeds) {
      const auto& e = lab.ensemble(s);
      members.insert(members.end(), e.member_f1.begin(), e.member_f1.end());
      distilled.push_back(e.distilled_f1);
      kl.push_back(e.final_kl);
    }
    report.arms.push_back(summarize_arm("member", members));
    report.arms.push_back(summarize_arm("distilled", distilled));
    report.metrics["member_std"] = report.arms[0].stddev;
    report.metrics["distilled_std"] = report.arms[1].stddev;
    report.metrics["distill_kl_median"] = median_of(kl);
  } else {
    std::vector<double> ens, noaug, aug;
    for (auto s : seeds) {
      ens.push_back(lab.ensemble(s).distilled_f1);
      if (protocol == "aug_on_off") noaug.push_back(lab.self_train_f1(s, false));
      aug.push_back(lab.self_train_f1(s, protocol == "aug_on_off" || lab.recipe().self_train.use_augmentation));
    }
    report.arms.push_back(summarize_arm("ensemble", ens));
    if (protocol == "aug_on_off") {
      report.arms.push_back(summarize_arm("self_train_noaug", noaug));
      report.arms.push_back(summarize_arm("self_train_aug", aug));
      report.metrics["delta_aug_vs_noaug"] = report.arms[2].median - report.arms[1].median;
      report.metrics["delta_noaug_vs_ensemble"] = report.arms[1].median - report.arms[0].median;
    } else {
      report.arms.push_back(summarize_arm("self_train", aug));
      report.metrics["delta_median"] = report.arms[1].median - report.arms[0].median;
    }
  }
  return report;
}

AbReport run_ab(const std::string& protocol, const TrainRecipe& recipe,
                const std::vector<std::uint64_t>& seeds) {
  const auto& names = ab_protocols();
  if (std::find(names.begin(), names.end(), protocol) == names.end()) {
    throw ParameterError("unknown protocol '" + protocol + "'");
  }
  Lab lab(recipe);
  return run_ab(protocol, lab, seeds);
}

}  // namespace dsner
