#include "dnnshield/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <numeric>
#include <sstream>

#include "dnnshield/checkpoint.hpp"
#include "dnnshield/errors.hpp"
#include "dnnshield/kernels.hpp"
#include "dnnshield/rng.hpp"

namespace dnnshield {

const char* to_string(OptimizerKind kind) { return kind == OptimizerKind::Adam ? "adam" : "sgd"; }

OptimizerKind optimizer_from_string(const std::string& name) {
  if (name == "adam") return OptimizerKind::Adam;
  if (name == "sgd") return OptimizerKind::SGD;
  throw ParameterError("unknown optimizer '" + name + "'");
}

std::string TrainLog::to_csv() const {
  std::ostringstream os;
  os.precision(17);
  os << "epoch,loss,train_acc,seconds\n";
  for (const auto& e : epochs) os << e.epoch << ',' << e.loss << ',' << e.train_acc << ',' << e.seconds << '\n';
  return os.str();
}

double mean_of(std::span<const double> v) {
  if (v.empty()) return 0.0;
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double variance_of(std::span<const double> v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return s / static_cast<double>(v.size() - 1);
}

Tensor gather_rows(const Tensor& samples, std::span<const std::size_t> rows) {
  Shape shape = samples.shape();
  const std::size_t stride = samples.size() / shape[0];
  shape[0] = rows.size();
  Tensor out(shape);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r] >= samples.dim(0)) throw InputError("row " + std::to_string(rows[r]) + " out of range");
    std::memcpy(out.data() + r * stride, samples.data() + rows[r] * stride, stride * sizeof(double));
  }
  return out;
}

namespace {

std::size_t argmax_row(const double* row, std::size_t n) {
  std::size_t best = 0;
  for (std::size_t j = 1; j < n; ++j) {
    if (row[j] > row[best]) best = j;
  }
  return best;
}

void check_config(const TrainConfig& cfg) {
  if (!(cfg.learning_rate >= 0.0) || !std::isfinite(cfg.learning_rate)) {
    throw ParameterError("learning rate must be a finite value >= 0");
  }
  if (cfg.epochs < 1) throw ParameterError("epochs must be >= 1");
  if (cfg.batch_size == 0) throw ParameterError("batch size must be positive");
}

}  // namespace

Trainer::Trainer(ModelGraph& model, TrainConfig cfg) : model_(model), cfg_(std::move(cfg)) {
  if (!(cfg_.learning_rate >= 0.0) || !std::isfinite(cfg_.learning_rate)) {
    throw ParameterError("learning rate must be a finite value >= 0");
  }
  if (cfg_.batch_size == 0) throw ParameterError("batch size must be positive");
  model_.validate();
  grads_ = model_.make_gradients(false);
  for (const auto& id : cfg_.trainable_keys) {
    const auto& e = model_.keys().get(id);
    if (e.kind() != ProtectionKind::Hadamard) {
      throw InapplicableError("key '" + id + "' is a permutation key; integer shifts cannot be optimised");
    }
    grads_.keys.emplace(id, Tensor(e.hadamard().values.shape()));
    m_k_.emplace(id, Tensor(e.hadamard().values.shape()));
    v_k_.emplace(id, Tensor(e.hadamard().values.shape()));
  }
  const std::size_t n = model_.num_layers();
  m_w_.resize(n);
  v_w_.resize(n);
  m_b_.resize(n);
  v_b_.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& l = model_.layer(i);
    if (!has_parameters(l.desc.kind)) continue;
    m_w_[i] = Tensor(l.weight.shape());
    v_w_[i] = Tensor(l.weight.shape());
    m_b_[i] = Tensor(l.bias.shape());
    v_b_[i] = Tensor(l.bias.shape());
  }
}

std::string Trainer::frozen_key_checksum() const {
  KeyRegistry frozen;
  for (const auto& e : model_.keys().entries()) {
    if (std::find(cfg_.trainable_keys.begin(), cfg_.trainable_keys.end(), e.id) == cfg_.trainable_keys.end()) {
      frozen.add(e);
    }
  }
  return key_digest(frozen);
}

void Trainer::assert_optimizer_excludes_frozen_keys() const {
  for (const auto& [id, g] : grads_.keys) {
    if (std::find(cfg_.trainable_keys.begin(), cfg_.trainable_keys.end(), id) == cfg_.trainable_keys.end()) {
      throw StateError("key '" + id + "' entered the optimizer without being marked trainable");
    }
  }
}

void Trainer::step(const Gradients& grads, std::size_t) {
  ++t_;
  const double lr = cfg_.learning_rate;
  const bool adam = cfg_.optimizer == OptimizerKind::Adam;
  const double b1 = cfg_.beta1, b2 = cfg_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  auto update = [&](Tensor& p, const Tensor& g, Tensor& m, Tensor& v) {
    double* pd = p.data();
    const double* gd = g.data();
    const std::size_t n = p.size();
    if (!adam) {
      for (std::size_t i = 0; i < n; ++i) pd[i] -= lr * gd[i];
      return;
    }
    double* md = m.data();
    double* vd = v.data();
#pragma omp parallel for simd schedule(static) if (n > (1u << 15))
    for (std::size_t i = 0; i < n; ++i) {
      md[i] = b1 * md[i] + (1.0 - b1) * gd[i];
      vd[i] = b2 * vd[i] + (1.0 - b2) * gd[i] * gd[i];
      pd[i] -= lr * (md[i] / c1) / (std::sqrt(vd[i] / c2) + cfg_.adam_eps);
    }
  };
  if (cfg_.train_params) {
    for (std::size_t i = 0; i < model_.num_layers(); ++i) {
      auto& l = model_.layer(i);
      if (!has_parameters(l.desc.kind)) continue;
      update(l.weight, grads.weight[i], m_w_[i], v_w_[i]);
      update(l.bias, grads.bias[i], m_b_[i], v_b_[i]);
    }
  }
  for (const auto& [id, g] : grads.keys) {
    update(model_.keys().get(id).hadamard().values, g, m_k_.at(id), v_k_.at(id));
  }
}

EpochRecord Trainer::run_epoch(const Dataset& data) {
  data.validate();
  if (data.sample_shape() != model_.input_shape()) {
    throw DimensionError("dataset samples " + shape_to_string(data.sample_shape()) + " do not fit model input " +
                         shape_to_string(model_.input_shape()));
  }
  if (data.classes != model_.classes()) {
    throw InputError("model has " + std::to_string(model_.classes()) + " outputs but the dataset has " +
                     std::to_string(data.classes) + " classes");
  }
  const auto start = std::chrono::steady_clock::now();
  ++epoch_;
  const std::string before = frozen_key_checksum();

  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(cfg_.seed ^ (0x9E3779B97F4A7C15ULL * static_cast<std::uint64_t>(epoch_)));
  for (std::size_t i = order.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i) - 1));
    std::swap(order[i - 1], order[j]);
  }

  BackwardOptions opts;
  opts.param_grads = cfg_.train_params;
  opts.key_grads = !cfg_.trainable_keys.empty();
  Tape tape;
  double loss_sum = 0.0;
  std::size_t correct = 0;
  std::vector<int> labels;
  for (std::size_t b = 0; b < order.size(); b += cfg_.batch_size) {
    const std::size_t e = std::min(order.size(), b + cfg_.batch_size);
    const std::span<const std::size_t> rows(order.data() + b, e - b);
    labels.resize(rows.size());
    for (std::size_t r = 0; r < rows.size(); ++r) labels[r] = data.labels[rows[r]];
    assert_optimizer_excludes_frozen_keys();
    const Tensor logits = model_.forward(gather_rows(data.samples, rows), tape);
    const auto lr = kernels::softmax_cross_entropy(logits, labels);
    if (!std::isfinite(lr.loss)) throw DivergenceError("training loss became non-finite", model_.epoch() + 1);
    const std::size_t k = logits.dim(1);
    for (std::size_t r = 0; r < rows.size(); ++r) {
      if (static_cast<int>(argmax_row(logits.data() + r * k, k)) == labels[r]) ++correct;
    }
    loss_sum += lr.loss * static_cast<double>(rows.size());
    grads_.zero();
    model_.backward(tape, lr.dlogits, grads_, opts);
    step(grads_, rows.size());
  }
  if (frozen_key_checksum() != before) throw StateError("a frozen key changed during training");
  model_.set_epoch(model_.epoch() + 1);

  EpochRecord rec;
  rec.epoch = model_.epoch();
  rec.loss = loss_sum / static_cast<double>(data.size());
  rec.train_acc = static_cast<double>(correct) / static_cast<double>(data.size());
  rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  if (cfg_.eval_set) rec.eval_acc = evaluate(model_, *cfg_.eval_set);
  return rec;
}

TrainLog train(ModelGraph& model, const Dataset& data, const TrainConfig& cfg,
               const std::function<void(const EpochRecord&, const ModelGraph&)>& on_epoch) {
  check_config(cfg);
  Trainer trainer(model, cfg);
  TrainLog log;
  for (int e = 0; e < cfg.epochs; ++e) {
    log.epochs.push_back(trainer.run_epoch(data));
    if (on_epoch) on_epoch(log.epochs.back(), model);
  }
  return log;
}

std::vector<int> predict(const ModelGraph& model, const Tensor& samples) {
  constexpr std::size_t kBatch = 250;
  const std::size_t n = samples.dim(0);
  std::vector<int> out(n);
  std::vector<std::size_t> rows;
  for (std::size_t b = 0; b < n; b += kBatch) {
    const std::size_t e = std::min(n, b + kBatch);
    rows.resize(e - b);
    std::iota(rows.begin(), rows.end(), b);
    const Tensor logits = model.forward(gather_rows(samples, rows));
    const std::size_t k = logits.dim(1);
    for (std::size_t r = 0; r < rows.size(); ++r) out[b + r] = static_cast<int>(argmax_row(logits.data() + r * k, k));
  }
  return out;
}

double evaluate(const ModelGraph& model, const Dataset& data, std::size_t limit) {
  const std::size_t n = limit ? std::min(limit, data.size()) : data.size();
  if (n == 0) throw InputError("cannot evaluate on an empty dataset");
  const Dataset view = n == data.size() ? data : data.slice(0, n);
  const auto pred = predict(model, view.samples);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < n; ++i) correct += pred[i] == view.labels[i];
  return static_cast<double>(correct) / static_cast<double>(n);
}

nlohmann::json OverheadReport::to_json() const {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& v : variants) {
    j.push_back({{"variant", v.name}, {"seconds", v.seconds}, {"mean", v.mean}, {"variance", v.variance},
                 {"ratio", v.ratio}});
  }
  return j;
}

OverheadReport measure_runtime_overhead(const ArchitectureConfig& arch, const Dataset& data, const TrainConfig& cfg,
                                        std::uint64_t seed) {
  if (cfg.epochs < 3) throw ParameterError("runtime overhead needs at least 3 epochs per variant");
  const ModelGraph base = build_model(arch, seed);
  std::vector<std::pair<std::string, ModelGraph>> models;
  models.emplace_back("unprotected", base);
  models.emplace_back("control", base);
  PlacementPolicy policy;
  policy.seed = seed;
  policy.kind = ProtectionKind::Hadamard;
  models.emplace_back("hadamard", insert_protection_layers(base, policy));
  policy.kind = ProtectionKind::Permutation;
  try {
    models.emplace_back("permutation", insert_protection_layers(base, policy));
  } catch (const PolicyError&) {
    // No convolution to protect.
  }
  TrainConfig c = cfg;
  c.eval_set = nullptr;
  std::vector<Trainer> trainers;
  trainers.reserve(models.size());
  for (auto& [name, m] : models) trainers.emplace_back(m, c);

  OverheadReport report;
  report.variants.resize(models.size());
  for (std::size_t v = 0; v < models.size(); ++v) report.variants[v].name = models[v].first;
  for (int e = 0; e < cfg.epochs; ++e) {
    for (std::size_t r = 0; r < models.size(); ++r) {
      const std::size_t v = (r + static_cast<std::size_t>(e)) % models.size();
      report.variants[v].seconds.push_back(trainers[v].run_epoch(data).seconds);
    }
  }
  for (auto& v : report.variants) {
    v.mean = mean_of(v.seconds);
    v.variance = variance_of(v.seconds);
  }
  for (auto& v : report.variants) v.ratio = v.mean / report.variants[0].mean;
  return report;
}

TrainLog refine(ModelGraph& model, const Dataset& new_data, bool replace_head, const TrainConfig& cfg) {
  const std::string before = key_digest(model.keys());
  if (replace_head) {
    const std::size_t out = model.output_layer_index();
    const auto& old = model.layer(out).desc;
    if (old.kind != LayerKind::Linear) throw InputError("refinement expects a Linear output layer");
    auto desc = LayerDescriptor::linear(old.in_features, new_data.classes, old.block);
    Layer head{desc, Tensor({new_data.classes, old.in_features}), Tensor({new_data.classes})};
    model.replace_layer(out, std::move(head));
    model.initialize_layer(out, cfg.seed ^ 0xC0FFEEULL);
  } else if (model.classes() != new_data.classes) {
    throw InputError("model has " + std::to_string(model.classes()) + " outputs, new task has " +
                     std::to_string(new_data.classes) + " classes; refine with a replaced head");
  }
  auto log = train(model, new_data, cfg);
  if (key_digest(model.keys()) != before) throw StateError("keys changed during refinement");
  return log;
}

std::vector<PlacementResult> run_placement_sweep(const ArchitectureConfig& arch, const Dataset& train_set,
                                                 const Dataset& eval_set, const TrainConfig& cfg,
                                                 std::uint64_t seed) {
  const ModelGraph base = build_model(arch, seed);
  const auto positions = protectable_layers(base);
  if (positions.empty() || positions.size() > 10) {
    throw PolicyError("placement sweep needs between 1 and 10 protectable positions");
  }
  std::vector<PlacementResult> results;
  for (std::size_t mask = 1; mask < (std::size_t{1} << positions.size()); ++mask) {
    PlacementPolicy policy;
    policy.kind = ProtectionKind::Hadamard;
    policy.mode = PlacementPolicy::Mode::Explicit;
    policy.seed = seed;
    PlacementResult r;
    for (std::size_t m = 0; m < positions.size(); ++m) {
      if (mask & (std::size_t{1} << m)) {
        policy.layer_indices.push_back(positions[m]);
        r.subset.push_back(position_key_id(m));
      }
    }
    ModelGraph model = insert_protection_layers(base, policy);
    TrainConfig c = cfg;
    c.eval_set = &eval_set;
    for (const auto& e : train(model, train_set, c).epochs) r.accuracies.push_back(*e.eval_acc);
    r.mean = mean_of(r.accuracies);
    r.variance = variance_of(r.accuracies);
    results.push_back(std::move(r));
  }
  return results;
}

}  // namespace dnnshield
