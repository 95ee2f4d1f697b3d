#include "dnnshield/attacks.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "dnnshield/errors.hpp"
#include "dnnshield/rng.hpp"

namespace dnnshield {

using json = nlohmann::json;

namespace {

json record_to_json(const AttackRecord& r) {
  return {{"step", r.step}, {"train_acc", r.train_acc}, {"test_acc", r.test_acc}, {"similarity", r.similarity}};
}

void require_keys(const ModelGraph& model, const char* attack) {
  if (model.keys().empty())
    throw InapplicableError(std::string(attack) + ": model '" + model.name() + "' carries no protection keys");
}

void require_hadamard_only(const ModelGraph& model, const char* attack) {
  require_keys(model, attack);
  if (!model.keys().ids(ProtectionKind::Permutation).empty())
    throw InapplicableError(std::string(attack) + " is not defined for Permutation keys");
}

std::size_t key_entry_count(const KeyEntry& e) {
  return e.kind() == ProtectionKind::Hadamard ? e.hadamard().values.size() : e.permutation().shifts.size();
}

AttackResult start(const char* attack, const ModelGraph& model, std::uint64_t seed) {
  AttackResult r;
  r.attack = attack;
  r.model = model.name();
  r.seed = seed;
  r.metric = metric_name(model.keys());
  return r;
}

std::size_t find_protection_layer(const ModelGraph& model, const std::string& key_id) {
  for (std::size_t i = 0; i < model.num_layers(); ++i) {
    const auto& d = model.layer(i).desc;
    if (is_protection(d.kind) && d.key_id == key_id) return i;
  }
  throw KeyError("no protection layer uses key '" + key_id + "'");
}

}  // namespace

std::string AttackResult::to_csv() const {
  std::ostringstream os;
  os.precision(10);
  os << "step,train_acc,test_acc,similarity\n";
  for (const auto& r : records) os << r.step << ',' << r.train_acc << ',' << r.test_acc << ',' << r.similarity << '\n';
  return os.str();
}

json AttackResult::to_json() const {
  json recs = json::array();
  for (const auto& r : records) recs.push_back(record_to_json(r));
  return {{"attack", attack},   {"model", model},   {"seed", seed},
          {"metric", metric},   {"baseline", record_to_json(baseline)},
          {"records", recs},    {"summary", summary}};
}

std::string AttackResult::file_stem() const { return attack + "_" + model + "_" + std::to_string(seed); }

double key_similarity(const KeyRegistry& reference, const KeyRegistry& current) {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& ref : reference.entries()) {
    if (!current.contains(ref.id)) continue;
    const auto& cur = current.get(ref.id);
    if (cur.kind() != ref.kind()) continue;
    if (ref.kind() == ProtectionKind::Hadamard)
      sum += cosine_similarity(ref.hadamard().values.values(), cur.hadamard().values.values());
    else
      sum += pac_metric(ref.permutation(), cur.permutation());
    ++n;
  }
  if (n == 0) throw VerificationImpossibleError("no key in common with the reference registry");
  return sum / static_cast<double>(n);
}

std::string metric_name(const KeyRegistry& keys) {
  const bool h = !keys.ids(ProtectionKind::Hadamard).empty();
  const bool p = !keys.ids(ProtectionKind::Permutation).empty();
  if (h && p) return "cosine+pac";
  return p ? "pac" : "cosine";
}

AttackRecord measure(const ModelGraph& model, const KeyRegistry& reference, const AttackData& data,
                     std::size_t step) {
  AttackRecord r;
  r.step = step;
  const double nan = std::numeric_limits<double>::quiet_NaN();
  r.train_acc = data.train ? evaluate(model, *data.train, data.train_limit) : nan;
  r.test_acc = data.test ? evaluate(model, *data.test, data.test_limit) : nan;
  r.similarity = reference.empty() ? nan : key_similarity(reference, model.keys());
  return r;
}

ProtectionKey random_key_like(const KeyEntry& entry, std::uint64_t seed) {
  if (entry.kind() == ProtectionKind::Hadamard)
    return generate_hadamard_key(entry.hadamard().values.shape(), entry.meta.low, entry.meta.high, seed);
  const auto& p = entry.permutation();
  return generate_permutation_key(p.shifts.size(), p.channel_size, seed);
}

AttackResult attack_random_key_replace(const ModelGraph& model, const AttackData& data, std::size_t trials,
                                       std::uint64_t seed) {
  require_keys(model, "random key replacement");
  if (trials == 0) throw ParameterError("random key replacement needs at least one trial");
  AttackResult result = start("random_key_replace", model, seed);
  const KeyRegistry reference = model.keys();
  result.baseline = measure(model, reference, data, 0);

  ModelGraph work = model;
  Rng rng(seed);
  std::vector<double> train_accs, test_accs;
  for (std::size_t t = 1; t <= trials; ++t) {
    for (auto& e : work.keys().entries()) e.key = random_key_like(e, rng.fork());
    auto rec = measure(work, reference, data, t);
    train_accs.push_back(rec.train_acc);
    test_accs.push_back(rec.test_acc);
    result.records.push_back(rec);
  }
  result.summary = {{"trials", trials},
                    {"baseline_train_acc", result.baseline.train_acc},
                    {"baseline_test_acc", result.baseline.test_acc},
                    {"mean_train_acc", mean_of(train_accs)},
                    {"mean_test_acc", mean_of(test_accs)},
                    {"max_test_acc", *std::max_element(test_accs.begin(), test_accs.end())}};
  return result;
}

AttackResult attack_incremental_replace(const ModelGraph& model, const AttackData& data, std::size_t max_values,
                                        std::uint64_t seed, std::size_t values_per_step) {
  require_keys(model, "incremental replacement");
  if (values_per_step == 0) throw ParameterError("incremental replacement needs values_per_step >= 1");
  AttackResult result = start("incremental_replace", model, seed);
  const KeyRegistry reference = model.keys();
  result.baseline = measure(model, reference, data, 0);
  result.records.push_back(result.baseline);

  ModelGraph work = model;
  auto& entries = work.keys().entries();
  // Flat index over the concatenated keys.
  std::vector<std::pair<std::size_t, std::size_t>> slots;
  for (std::size_t k = 0; k < entries.size(); ++k)
    for (std::size_t j = 0; j < key_entry_count(entries[k]); ++j) slots.emplace_back(k, j);

  Rng rng(seed);
  // Partial Fisher-Yates: the first `steps` slots become a uniform sample without repeats.
  const std::size_t steps = std::min(max_values, slots.size());
  for (std::size_t i = 0; i < steps; ++i) {
    const auto j = static_cast<std::size_t>(rng.uniform_int(static_cast<std::int64_t>(i),
                                                            static_cast<std::int64_t>(slots.size() - 1)));
    std::swap(slots[i], slots[j]);
  }
  for (std::size_t s = 0; s < steps; ++s) {
    auto& e = entries[slots[s].first];
    const std::size_t j = slots[s].second;
    if (e.kind() == ProtectionKind::Hadamard) {
      e.hadamard().values[j] = rng.uniform(e.meta.low, e.meta.high);
    } else {
      auto& p = e.permutation();
      p.shifts[j] = rng.uniform_int(1, static_cast<std::int64_t>(p.channel_size) - 1);
    }
    if ((s + 1) % values_per_step == 0 || s + 1 == steps) result.records.push_back(measure(work, reference, data, s + 1));
  }
  result.summary = {{"replaced_values", steps},
                    {"values_per_step", values_per_step},
                    {"total_values", slots.size()},
                    {"final_test_acc", result.records.back().test_acc},
                    {"final_similarity", result.records.back().similarity}};
  return result;
}

AttackResult attack_key_noise(const ModelGraph& model, const AttackData& data, const NoiseSchedule& schedule,
                              std::uint64_t seed) {
  require_keys(model, "key noise");
  if (!(schedule.hadamard_low < schedule.hadamard_high))
    throw ParameterError("key noise needs low < high");
  AttackResult result = start("key_noise", model, seed);
  const KeyRegistry reference = model.keys();
  result.baseline = measure(model, reference, data, 0);
  result.records.push_back(result.baseline);

  const bool has_perm = !model.keys().ids(ProtectionKind::Permutation).empty();
  const bool has_had = !model.keys().ids(ProtectionKind::Hadamard).empty();
  const std::size_t steps =
      std::max(has_had ? schedule.hadamard_steps : 0, has_perm ? schedule.permutation_steps : 0);

  ModelGraph work = model;
  Rng rng(seed);
  std::vector<std::pair<std::size_t, std::size_t>> perm_slots;
  for (std::size_t k = 0; k < work.keys().size(); ++k) {
    const auto& e = work.keys().entries()[k];
    if (e.kind() == ProtectionKind::Permutation)
      for (std::size_t c = 0; c < e.permutation().shifts.size(); ++c) perm_slots.emplace_back(k, c);
  }

  for (std::size_t s = 1; s <= steps; ++s) {
    for (auto& e : work.keys().entries()) {
      if (e.kind() != ProtectionKind::Hadamard || s > schedule.hadamard_steps) continue;
      for (auto& v : e.hadamard().values.storage()) v += rng.uniform(schedule.hadamard_low, schedule.hadamard_high);
    }
    if (!perm_slots.empty() && s <= schedule.permutation_steps) {
      const auto pick = perm_slots[static_cast<std::size_t>(
          rng.uniform_int(0, static_cast<std::int64_t>(perm_slots.size()) - 1))];
      auto& p = work.keys().entries()[pick.first].permutation();
      auto& shift = p.shifts[pick.second];
      shift = shift + 1 > static_cast<std::int64_t>(p.channel_size) - 1 ? 1 : shift + 1;
    }
    result.records.push_back(measure(work, reference, data, s));
  }
  result.summary = {{"steps", steps},
                    {"final_test_acc", result.records.back().test_acc},
                    {"final_similarity", result.records.back().similarity}};
  return result;
}

const char* to_string(PruneScope scope) { return scope == PruneScope::AllParams ? "all_params" : "key_only"; }

PruneScope prune_scope_from_string(const std::string& name) {
  if (name == "all_params") return PruneScope::AllParams;
  if (name == "key_only") return PruneScope::KeyOnly;
  throw UsageError("unknown pruning scope '" + name + "' (expected all_params or key_only)");
}

namespace {

void prune_group(std::vector<double*>& values, double fraction) {
  const auto count = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(values.size()) + 1e-9));
  if (count == 0) return;
  std::vector<std::size_t> order(values.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  // Ties broken by position so the mask is deterministic.
  std::nth_element(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(count - 1), order.end(),
                   [&](std::size_t a, std::size_t b) {
                     const double x = std::abs(*values[a]), y = std::abs(*values[b]);
                     return x < y || (x == y && a < b);
                   });
  for (std::size_t i = 0; i < count; ++i) *values[order[i]] = 0.0;
}

void collect(Tensor& t, std::vector<double*>& out) {
  for (auto& v : t.storage()) out.push_back(&v);
}

}  // namespace

void prune_in_place(ModelGraph& model, PruneScope scope, double fraction, bool per_tensor) {
  if (!(fraction >= 0.0 && fraction <= 1.0)) throw ParameterError("pruning fraction must lie in [0, 1]");
  require_hadamard_only(model, "pruning");
  std::vector<std::vector<double*>> groups;
  auto add = [&](Tensor& t) {
    if (t.empty()) return;
    if (per_tensor || groups.empty()) groups.emplace_back();
    collect(t, groups.back());
  };
  if (scope == PruneScope::AllParams) {
    for (std::size_t i = 0; i < model.num_layers(); ++i) {
      add(model.layer(i).weight);
      add(model.layer(i).bias);
    }
  }
  for (auto& e : model.keys().entries()) add(e.hadamard().values);
  for (auto& g : groups) prune_group(g, fraction);
}

std::vector<double> default_prune_levels() {
  std::vector<double> levels;
  for (int p = 5; p <= 90; p += 5) levels.push_back(p / 100.0);
  return levels;
}

AttackResult attack_prune(const ModelGraph& model, const AttackData& data, PruneScope scope,
                          const std::vector<double>& levels, bool per_tensor) {
  require_hadamard_only(model, "pruning");
  AttackResult result = start(scope == PruneScope::AllParams ? "prune_all_params" : "prune_key_only", model, 0);
  const KeyRegistry reference = model.keys();
  result.baseline = measure(model, reference, data, 0);
  std::vector<double> level_pct, accs, sims;
  for (double level : levels) {
    ModelGraph work = model;
    prune_in_place(work, scope, level, per_tensor);
    auto rec = measure(work, reference, data, static_cast<std::size_t>(std::lround(level * 100.0)));
    result.records.push_back(rec);
    accs.push_back(rec.test_acc);
    sims.push_back(rec.similarity);
  }
  json s = {{"scope", to_string(scope)}, {"per_tensor", per_tensor}};
  if (levels.size() >= 2) {
    s["spearman_level_test_acc"] = spearman(std::span<const double>(levels), accs);
    s["spearman_level_similarity"] = spearman(std::span<const double>(levels), sims);
  }
  // First level at which the key cosine falls below 0.85, if any.
  s["first_level_below_0_85"] = nullptr;
  for (std::size_t i = 0; i < levels.size(); ++i)
    if (sims[i] < 0.85) {
      s["first_level_below_0_85"] = levels[i];
      s["test_acc_at_that_level"] = accs[i];
      break;
    }
  result.summary = s;
  return result;
}

const char* to_string(FinetuneScenario s) {
  return s == FinetuneScenario::AllParamsAndKeys ? "all_params_and_keys" : "keys_only";
}

FinetuneScenario finetune_scenario_from_string(const std::string& name) {
  if (name == "all_params_and_keys") return FinetuneScenario::AllParamsAndKeys;
  if (name == "keys_only") return FinetuneScenario::KeysOnly;
  throw UsageError("unknown fine-tuning scenario '" + name + "' (expected all_params_and_keys or keys_only)");
}

AttackResult attack_finetune(const ModelGraph& model, const Dataset& attacker, const AttackData& data,
                             FinetuneScenario scenario, double lr_factor, int epochs, const TrainConfig& base) {
  require_keys(model, "fine-tuning");
  if (epochs < 0) throw ParameterError("fine-tuning epochs must be >= 0");
  if (!(lr_factor > 0.0)) throw ParameterError("learning-rate factor must be positive");
  AttackResult result = start("finetune", model, base.seed);
  const KeyRegistry reference = model.keys();
  result.baseline = measure(model, reference, data, 0);
  result.records.push_back(result.baseline);

  ModelGraph work = model;
  if (epochs > 0) {
    TrainConfig cfg = base;
    cfg.learning_rate = base.learning_rate * lr_factor;
    cfg.epochs = epochs;
    cfg.eval_set = nullptr;
    cfg.train_params = scenario == FinetuneScenario::AllParamsAndKeys;
    cfg.trainable_keys = work.keys().ids(ProtectionKind::Hadamard);
    if (!cfg.train_params && cfg.trainable_keys.empty())
      throw InapplicableError("keys-only fine-tuning needs at least one Hadamard key");
    Trainer trainer(work, cfg);
    for (int e = 1; e <= epochs; ++e) {
      trainer.run_epoch(attacker);
      result.records.push_back(measure(work, reference, data, static_cast<std::size_t>(e)));
    }
  }
  const auto& last = result.records.back();
  result.summary = {{"scenario", to_string(scenario)},
                    {"lr_factor", lr_factor},
                    {"epochs", epochs},
                    {"final_similarity", last.similarity},
                    {"attacker_acc", evaluate(work, attacker)},
                    {"delta_train_acc", last.train_acc - result.baseline.train_acc},
                    {"delta_test_acc", last.test_acc - result.baseline.test_acc}};
  result.result_model = std::move(work);
  return result;
}

ModelGraph attack_merge_fc(const ModelGraph& model, const std::string& key_id, MergeDirection direction) {
  const std::size_t p = find_protection_layer(model, key_id);
  const auto& entry = model.keys().get(key_id);
  if (entry.kind() != ProtectionKind::Hadamard)
    throw InapplicableError("only Hadamard layers can be merged into a dense layer");
  const Tensor& k = entry.hadamard().values;

  const bool into_prev = direction == MergeDirection::IntoPreceding;
  if (into_prev && p == 0) throw MergeBlockedError("key '" + key_id + "' has no preceding layer");
  if (!into_prev && p + 1 >= model.num_layers()) throw MergeBlockedError("key '" + key_id + "' has no following layer");
  const std::size_t target = into_prev ? p - 1 : p + 1;
  const LayerKind tk = model.layer(target).desc.kind;
  if (tk == LayerKind::Conv2d)
    throw MergeBlockedError("key '" + key_id + "' sits next to a convolution; a varying key cannot be folded "
                            "into shared filter weights");
  if (tk != LayerKind::Linear)
    throw MergeBlockedError("key '" + key_id + "' is separated from the dense layer by a " + to_string(tk) +
                            " layer");

  ModelGraph out = model;
  Layer& l = out.layer(target);
  const std::size_t rows = l.weight.dim(0), cols = l.weight.dim(1);
  if (into_prev) {
    if (rows != k.size()) throw DimensionError("key size does not match the preceding layer's outputs");
    for (std::size_t j = 0; j < rows; ++j) {
      for (std::size_t c = 0; c < cols; ++c) l.weight[j * cols + c] *= k[j];
      l.bias[j] *= k[j];
    }
  } else {
    if (cols != k.size()) throw DimensionError("key size does not match the following layer's inputs");
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < cols; ++j) l.weight[r * cols + j] *= k[j];
  }
  out.erase_layer(p);
  out.keys().remove(key_id);
  out.validate();
  return out;
}

ConvMergeReport attack_conv_merge_attempt(const Layer& conv, const HadamardKey& key) {
  if (conv.desc.kind != LayerKind::Conv2d) throw InputError("conv merge attempt needs a Conv2d layer");
  const Tensor& k = key.values;
  if (k.rank() != 3 || k.dim(0) != conv.desc.out_channels)
    throw DimensionError("key shape " + shape_to_string(k.shape()) + " does not follow a convolution with " +
                         std::to_string(conv.desc.out_channels) + " output channels");
  const std::size_t channels = k.dim(0), plane = k.dim(1) * k.dim(2);
  ConvMergeReport report;
  for (std::size_t c = 0; c < channels; ++c) {
    const double first = k[c * plane];
    for (std::size_t q = 1; q < plane; ++q) {
      if (k[c * plane + q] != first) {
        report.channel = c;
        report.p = 0;
        report.q = q;
        return report;
      }
    }
  }
  report.feasible = true;
  report.filter = conv.weight;
  report.bias = conv.bias;
  const std::size_t per_out = conv.weight.size() / channels;
  for (std::size_t c = 0; c < channels; ++c) {
    const double s = k[c * plane];
    for (std::size_t i = 0; i < per_out; ++i) report.filter[c * per_out + i] *= s;
    report.bias[c] *= s;
  }
  return report;
}

namespace {

std::vector<std::string> substitution_targets(const ModelGraph& model, const SubstituteOptions& options) {
  std::vector<std::string> ids = options.key_ids.empty() ? model.keys().ids(ProtectionKind::Hadamard) : options.key_ids;
  if (ids.empty()) throw InapplicableError("dense substitution needs at least one Hadamard layer");
  for (const auto& id : ids)
    if (model.keys().get(id).kind() != ProtectionKind::Hadamard)
      throw InapplicableError("key '" + id + "' is not a Hadamard key");
  return ids;
}

std::size_t dense_size(std::size_t n) { return n * n + n; }

}  // namespace

double substitution_overhead(const ModelGraph& model) {
  const double before = static_cast<double>(model.parameter_count());
  if (before == 0.0) throw InputError("model has no parameters");
  double added = 0.0;
  for (const auto& id : model.keys().ids(ProtectionKind::Hadamard))
    added += static_cast<double>(dense_size(model.keys().get(id).hadamard().values.size()));
  return (before + added) / before;
}

ModelGraph substitute_dense(const ModelGraph& model, const SubstituteOptions& options, std::uint64_t seed) {
  const auto ids = substitution_targets(model, options);
  std::size_t added = 0;
  for (const auto& id : ids) added += dense_size(model.keys().get(id).hadamard().values.size());
  if (added > options.max_new_parameters)
    throw ParameterError("dense substitution needs " + std::to_string(added) + " new parameters, budget is " +
                         std::to_string(options.max_new_parameters));

  ModelGraph out = model;
  Rng rng(seed);
  for (const auto& id : ids) {
    const std::size_t p = find_protection_layer(out, id);
    const Tensor key = out.keys().get(id).hadamard().values;
    const std::size_t n = key.size();
    Layer dense;
    dense.desc = LayerDescriptor::linear(n, n, out.layer(p).desc.block);
    if (key.rank() > 1) dense.desc.out_shape = key.shape();
    dense.weight = Tensor({n, n});
    dense.bias = Tensor({n});
    out.replace_layer(p, std::move(dense));
    out.keys().remove(id);
    if (options.init == SubstituteInit::Diagonal) {
      for (std::size_t j = 0; j < n; ++j) out.layer(p).weight[j * n + j] = key[j];
    } else {
      out.initialize_layer(p, rng.fork());
    }
  }
  out.validate();
  return out;
}

AttackResult attack_substitute_fc(const ModelGraph& model, const Dataset& attacker, const AttackData& data,
                                  const SubstituteOptions& options, const TrainConfig& base) {
  if (options.epochs < 0) throw ParameterError("substitution epochs must be >= 0");
  const auto ids = substitution_targets(model, options);
  AttackResult result = start("substitute_fc", model, base.seed);
  result.metric = "diagonal_cosine";
  result.baseline = measure(model, model.keys(), data, 0);

  ModelGraph work = substitute_dense(model, options, base.seed);
  std::vector<std::pair<std::size_t, Tensor>> replaced;
  for (const auto& id : ids) {
    const std::size_t p = find_protection_layer(model, id);
    // Layer indices are unchanged: each protection layer was swapped one-for-one.
    replaced.emplace_back(p, model.keys().get(id).hadamard().values);
  }
  auto diag_similarity = [&](const ModelGraph& m) {
    double sum = 0.0;
    for (const auto& [p, key] : replaced) {
      const std::size_t n = key.size();
      std::vector<double> diag(n);
      for (std::size_t j = 0; j < n; ++j) diag[j] = m.layer(p).weight[j * n + j];
      sum += cosine_similarity(diag, key.values());
    }
    return sum / static_cast<double>(replaced.size());
  };
  auto record = [&](std::size_t step) {
    AttackRecord r = measure(work, KeyRegistry{}, data, step);
    r.similarity = diag_similarity(work);
    return r;
  };
  result.records.push_back(record(0));

  TrainConfig cfg = base;
  cfg.epochs = options.epochs;
  cfg.eval_set = nullptr;
  cfg.train_params = true;
  cfg.trainable_keys.clear();
  if (options.epochs > 0) {
    Trainer trainer(work, cfg);
    for (int e = 1; e <= options.epochs; ++e) {
      trainer.run_epoch(attacker);
      result.records.push_back(record(static_cast<std::size_t>(e)));
    }
  }
  const auto& last = result.records.back();
  result.summary = {{"init", options.init == SubstituteInit::Diagonal ? "diagonal" : "random"},
                    {"epochs", options.epochs},
                    {"substituted", ids},
                    {"parameters_before", model.parameter_count()},
                    {"parameters_after", work.parameter_count()},
                    {"overhead_factor", static_cast<double>(work.parameter_count()) /
                                            static_cast<double>(model.parameter_count())},
                    {"attacker_acc", evaluate(work, attacker)},
                    {"final_train_acc", last.train_acc},
                    {"final_test_acc", last.test_acc},
                    {"baseline_train_acc", result.baseline.train_acc},
                    {"baseline_test_acc", result.baseline.test_acc}};
  result.result_model = std::move(work);
  return result;
}

namespace {

std::vector<double> average_ranks(std::span<const double> v) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(v.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t t = i; t <= j; ++t) ranks[order[t]] = r;
    i = j + 1;
  }
  return ranks;
}

}  // namespace

double spearman(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) throw InputError("spearman needs two equal-length series of >= 2 values");
  const auto rx = average_ranks(x), ry = average_ranks(y);
  const double mx = mean_of(rx), my = mean_of(ry);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

}  // namespace dnnshield
