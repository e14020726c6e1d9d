// SPDX-License-Identifier: Apache-2.0
#include "dsner/recipe.hpp"

#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>

#include "dsner/checkpoint.hpp"
#include "dsner/error.hpp"
#include "dsner/util.hpp"

namespace dsner {

std::string to_string(LossKind kind) {
  switch (kind) {
    case LossKind::kCe: return "ce";
    case LossKind::kMae: return "mae";
    case LossKind::kGce: return "gce";
  }
  return "gce";
}

LossKind loss_kind_from_string(std::string_view name) {
  if (name == "ce") return LossKind::kCe;
  if (name == "mae") return LossKind::kMae;
  if (name == "gce") return LossKind::kGce;
  throw ConfigError("unknown loss '" + std::string(name) + "' (expected ce, mae or gce)");
}

namespace {

struct Binding {
  std::string key;
  std::function<std::string(const TrainRecipe&)> get;
  std::function<void(TrainRecipe&, std::string_view)> set;
};

template <class T>
Binding bind_double(std::string key, T TrainRecipe::*section, double T::*field) {
  return {std::move(key),
          [=](const TrainRecipe& r) { return format_double(r.*section.*field); },
          [=](TrainRecipe& r, std::string_view v) { r.*section.*field = parse_double(v); }};
}

std::size_t to_size(std::string_view v) {
  const long long x = parse_int(v);
  if (x < 0) throw ParameterError("expected a non-negative integer, got '" + std::string(v) + "'");
  return static_cast<std::size_t>(x);
}

template <class T>
Binding bind_size(std::string key, T TrainRecipe::*section, std::size_t T::*field) {
  return {std::move(key),
          [=](const TrainRecipe& r) { return std::to_string(r.*section.*field); },
          [=](TrainRecipe& r, std::string_view v) { r.*section.*field = to_size(v); }};
}

template <class T>
Binding bind_int(std::string key, T TrainRecipe::*section, int T::*field) {
  return {std::move(key),
          [=](const TrainRecipe& r) { return std::to_string(r.*section.*field); },
          [=](TrainRecipe& r, std::string_view v) {
            r.*section.*field = static_cast<int>(to_size(v));
          }};
}

template <class T>
Binding bind_bool(std::string key, T TrainRecipe::*section, bool T::*field) {
  return {std::move(key),
          [=](const TrainRecipe& r) { return std::string(r.*section.*field ? "true" : "false"); },
          [=](TrainRecipe& r, std::string_view v) { r.*section.*field = parse_bool(v); }};
}

template <class T>
Binding bind_string(std::string key, T TrainRecipe::*section, std::string T::*field) {
  return {std::move(key), [=](const TrainRecipe& r) { return r.*section.*field; },
          [=](TrainRecipe& r, std::string_view v) { r.*section.*field = std::string(v); }};
}

const std::vector<Binding>& bindings() {
  static const std::vector<Binding> table = [] {
    using R = TrainRecipe;
    std::vector<Binding> b;
    b.push_back({"seed", [](const R& r) { return std::to_string(r.seed); },
                 [](R& r, std::string_view v) { r.seed = to_size(v); }});

    b.push_back(bind_bool("data.synthetic", &R::data, &DataConfig::synthetic));
    b.push_back(bind_string("data.train", &R::data, &DataConfig::train));
    b.push_back(bind_string("data.test", &R::data, &DataConfig::test));
    b.push_back(bind_string("data.gazetteer", &R::data, &DataConfig::gazetteer));
    b.push_back(bind_string("data.types", &R::data, &DataConfig::types));
    b.push_back(bind_string("data.features", &R::data, &DataConfig::features));
    b.push_back(bind_bool("data.case_sensitive", &R::data, &DataConfig::case_sensitive));

    b.push_back({"model.encoder", [](const R& r) { return to_string(r.model.kind); },
                 [](R& r, std::string_view v) {
                   try {
                     r.model.kind = encoder_kind_from_string(std::string(v));
                   } catch (const Error& e) {
                     throw ConfigError(e.what());
                   }
                 }});
    b.push_back(bind_int("model.hidden", &R::model, &EncoderSpec::hidden));
    b.push_back(bind_int("model.layers", &R::model, &EncoderSpec::layers));
    b.push_back(bind_int("model.heads", &R::model, &EncoderSpec::heads));
    b.push_back(bind_int("model.ffn", &R::model, &EncoderSpec::ffn));
    b.push_back(bind_int("model.max_length", &R::model, &EncoderSpec::max_length));
    b.push_back(bind_double("model.dropout", &R::model, &EncoderSpec::dropout));
    b.push_back(bind_int("model.feature_dim", &R::model, &EncoderSpec::feature_dim));

    b.push_back({"robust.loss", [](const R& r) { return to_string(r.robust.loss); },
                 [](R& r, std::string_view v) { r.robust.loss = loss_kind_from_string(v); }});
    b.push_back(bind_double("robust.q", &R::robust, &RobustRecipe::q));
    b.push_back(bind_double("robust.tau", &R::robust, &RobustRecipe::tau));
    b.push_back(bind_size("robust.epochs", &R::robust, &RobustRecipe::epochs));
    b.push_back(bind_size("robust.weight_update_period", &R::robust,
                          &RobustRecipe::weight_update_period));
    b.push_back(bind_double("robust.drop_rate", &R::robust, &RobustRecipe::drop_rate));
    b.push_back(bind_size("robust.batch_size", &R::robust, &RobustRecipe::batch_size));
    b.push_back(bind_double("robust.lr", &R::robust, &RobustRecipe::lr));
    b.push_back(bind_double("robust.protect_fraction", &R::robust, &RobustRecipe::protect_fraction));

    b.push_back(bind_size("ensemble.members", &R::ensemble, &EnsembleRecipe::members));
    b.push_back(bind_size("ensemble.epochs", &R::ensemble, &EnsembleRecipe::epochs));
    b.push_back(bind_double("ensemble.lr_ratio", &R::ensemble, &EnsembleRecipe::lr_ratio));
    b.push_back(bind_size("ensemble.threads", &R::ensemble, &EnsembleRecipe::threads));

    b.push_back(bind_double("augment.mask_rate", &R::augment, &AugmentRecipe::mask_rate));
    b.push_back(bind_size("augment.top_k", &R::augment, &AugmentRecipe::top_k));
    b.push_back(bind_string("augment.adapter", &R::augment, &AugmentRecipe::adapter));

    b.push_back(bind_size("self_train.iterations", &R::self_train, &SelfTrainRecipe::iterations));
    b.push_back(bind_double("self_train.lr_ratio", &R::self_train, &SelfTrainRecipe::lr_ratio));
    b.push_back(bind_double("self_train.confidence_margin", &R::self_train,
                            &SelfTrainRecipe::confidence_margin));
    b.push_back(bind_bool("self_train.use_augmentation", &R::self_train,
                          &SelfTrainRecipe::use_augmentation));
    b.push_back(bind_bool("self_train.per_batch_frequencies", &R::self_train,
                          &SelfTrainRecipe::per_batch_frequencies));
    b.push_back(bind_size("self_train.batch_size", &R::self_train, &SelfTrainRecipe::batch_size));

    b.push_back(bind_size("bench.train_size", &R::bench, &BenchRecipe::train_size));
    b.push_back(bind_size("bench.test_size", &R::bench, &BenchRecipe::test_size));
    b.push_back(bind_size("bench.length", &R::bench, &BenchRecipe::length));
    b.push_back(bind_size("bench.context_vocab", &R::bench, &BenchRecipe::context_vocab));
    b.push_back(bind_size("bench.entity_types", &R::bench, &BenchRecipe::entity_types));
    b.push_back(bind_double("bench.deletion_rate", &R::bench, &BenchRecipe::deletion_rate));
    b.push_back(bind_double("bench.flip_rate", &R::bench, &BenchRecipe::flip_rate));
    b.push_back(bind_double("bench.held_out_fraction", &R::bench, &BenchRecipe::held_out_fraction));
    return b;
  }();
  return table;
}

const Binding& find_binding(std::string_view key) {
  for (const auto& b : bindings()) {
    if (b.key == key) return b;
  }
  throw ConfigError("unknown config key '" + std::string(key) + "'");
}

}  // namespace

void TrainRecipe::set(std::string_view key, std::string_view value) {
  const Binding& b = find_binding(key);
  try {
    b.set(*this, trim(value));
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError("bad value for '" + std::string(key) + "': " + e.what());
  }
}

std::string TrainRecipe::get(std::string_view key) const { return find_binding(key).get(*this); }

const std::vector<std::string>& TrainRecipe::keys() {
  static const std::vector<std::string> k = [] {
    std::vector<std::string> out;
    for (const auto& b : bindings()) out.push_back(b.key);
    return out;
  }();
  return k;
}

std::map<std::string, std::string> TrainRecipe::to_map() const {
  std::map<std::string, std::string> m;
  for (const auto& b : bindings()) m[b.key] = b.get(*this);
  return m;
}

std::string TrainRecipe::to_text() const {
  std::ostringstream out;
  std::string section;
  for (const auto& b : bindings()) {
    const auto dot = b.key.find('.');
    const std::string sec = dot == std::string::npos ? "" : b.key.substr(0, dot);
    const std::string name = dot == std::string::npos ? b.key : b.key.substr(dot + 1);
    if (sec != section) {
      out << "\n[" << sec << "]\n";
      section = sec;
    }
    out << name << " = " << b.get(*this) << '\n';
  }
  return out.str();
}

void TrainRecipe::validate() const {
  try {
    model.validate();
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
  auto require = [](bool ok, const std::string& what) {
    if (!ok) throw ConfigError(what);
  };
  require(robust.q > 0.0 && robust.q <= 1.0, "robust.q must lie in (0, 1]");
  require(robust.tau >= 0.0 && robust.tau < 1.0, "robust.tau must lie in [0, 1)");
  require(robust.epochs >= 1, "robust.epochs must be at least 1");
  require(robust.weight_update_period >= 1, "robust.weight_update_period must be at least 1");
  require(robust.drop_rate >= 0.0 && robust.drop_rate < 1.0, "robust.drop_rate must lie in [0, 1)");
  require(robust.batch_size >= 1, "robust.batch_size must be at least 1");
  require(robust.lr >= 0.0, "robust.lr must be non-negative");
  require(robust.protect_fraction >= 0.0 && robust.protect_fraction <= 1.0,
          "robust.protect_fraction must lie in [0, 1]");
  require(ensemble.members >= 1, "ensemble.members must be at least 1");
  require(ensemble.lr_ratio >= 0.0, "ensemble.lr_ratio must be non-negative");
  require(ensemble.threads >= 1, "ensemble.threads must be at least 1");
  require(augment.mask_rate > 0.0 && augment.mask_rate < 1.0, "augment.mask_rate must lie in (0, 1)");
  require(augment.top_k >= 1, "augment.top_k must be at least 1");
  require(augment.adapter == "corpus" || augment.adapter == "oracle" || augment.adapter == "external",
          "augment.adapter must be corpus, oracle or external");
  require(self_train.lr_ratio >= 0.0, "self_train.lr_ratio must be non-negative");
  require(self_train.batch_size >= 1, "self_train.batch_size must be at least 1");
  require(bench.deletion_rate >= 0.0 && bench.deletion_rate < 1.0,
          "bench.deletion_rate must lie in [0, 1)");
  require(bench.flip_rate >= 0.0 && bench.flip_rate < 1.0, "bench.flip_rate must lie in [0, 1)");
  require(bench.deletion_rate + bench.flip_rate <= 1.0,
          "bench.deletion_rate + bench.flip_rate must not exceed 1");
  require(bench.entity_types >= 1, "bench.entity_types must be at least 1");
}

TrainRecipe parse_recipe(std::string_view text, const std::string& source) {
  TrainRecipe r;
  std::string section;
  std::size_t line_no = 0;
  for (const auto& raw : split(text, '\n')) {
    ++line_no;
    std::string_view line = raw;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ParseError(source, line_no, "unterminated section header");
      section = std::string(trim(line.substr(1, line.size() - 2)));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) throw ParseError(source, line_no, "expected key = value");
    const std::string key = std::string(trim(line.substr(0, eq)));
    const std::string full = section.empty() ? key : section + "." + key;
    try {
      r.set(full, line.substr(eq + 1));
    } catch (const ConfigError& e) {
      throw ConfigError(source + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  r.validate();
  return r;
}

TrainRecipe load_recipe(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open config " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_recipe(buf.str(), path.string());
}

void apply_overrides(TrainRecipe& recipe, const std::vector<std::string>& overrides) {
  for (const auto& o : overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos) throw ConfigError("override '" + o + "' is not KEY=VALUE");
    recipe.set(trim(std::string_view(o).substr(0, eq)), std::string_view(o).substr(eq + 1));
  }
  recipe.validate();
}

std::string recipe_hash(const TrainRecipe& recipe) {
  const std::string text = recipe.to_text();
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(fnv1a64(reinterpret_cast<const std::uint8_t*>(text.data()), text.size())));
  return buf;
}

}  // namespace dsner
