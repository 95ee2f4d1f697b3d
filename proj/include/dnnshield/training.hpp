#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dnnshield/architecture.hpp"
#include "dnnshield/data.hpp"
#include "dnnshield/model.hpp"

namespace dnnshield {

enum class OptimizerKind { Adam, SGD };
const char* to_string(OptimizerKind kind);
OptimizerKind optimizer_from_string(const std::string& name);

struct TrainConfig {
  OptimizerKind optimizer = OptimizerKind::Adam;
  double learning_rate = 0.001;
  int epochs = 10;
  std::size_t batch_size = 64;
  std::uint64_t seed = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  // Update Linear/Conv2d parameters. Off for key-only fine-tuning.
  bool train_params = true;
  // Hadamard keys an attack has marked trainable. Empty during normal training.
  std::vector<std::string> trainable_keys;
  // Evaluated after every epoch when set.
  const Dataset* eval_set = nullptr;
};

struct EpochRecord {
  int epoch = 0;
  double loss = 0.0;
  double train_acc = 0.0;  // running accuracy over the epoch's minibatches
  double seconds = 0.0;
  std::optional<double> eval_acc;
};

struct TrainLog {
  std::vector<EpochRecord> epochs;
  std::string to_csv() const;
};

// Optimizer state bound to one model. Keys stay outside the parameter set
// unless listed in TrainConfig::trainable_keys; every other key is checksummed
// around each epoch and a change raises StateError.
class Trainer {
 public:
  Trainer(ModelGraph& model, TrainConfig cfg);

  EpochRecord run_epoch(const Dataset& data);
  const TrainConfig& config() const noexcept { return cfg_; }

 private:
  void step(const Gradients& grads, std::size_t batch);
  void assert_optimizer_excludes_frozen_keys() const;
  std::string frozen_key_checksum() const;

  ModelGraph& model_;
  TrainConfig cfg_;
  Gradients grads_;
  std::vector<Tensor> m_w_, v_w_, m_b_, v_b_;
  std::map<std::string, Tensor> m_k_, v_k_;
  std::uint64_t t_ = 0;
  int epoch_ = 0;
};

// Runs cfg.epochs epochs; on_epoch (if set) sees the model after each one.
TrainLog train(ModelGraph& model, const Dataset& data, const TrainConfig& cfg,
               const std::function<void(const EpochRecord&, const ModelGraph&)>& on_epoch = {});

// Argmax accuracy. limit > 0 evaluates the first `limit` samples only.
double evaluate(const ModelGraph& model, const Dataset& data, std::size_t limit = 0);
std::vector<int> predict(const ModelGraph& model, const Tensor& samples);

// Copies of the given rows as one batch.
Tensor gather_rows(const Tensor& samples, std::span<const std::size_t> rows);

struct RuntimeVariant {
  std::string name;
  std::vector<double> seconds;
  double mean = 0.0;
  double variance = 0.0;
  double ratio = 1.0;  // mean / mean of the unprotected variant
};

struct OverheadReport {
  std::vector<RuntimeVariant> variants;  // unprotected, control, hadamard, permutation
  nlohmann::json to_json() const;
};

// Seconds per epoch for the unprotected, a second unprotected (control),
// the Hadamard-protected and the Permutation-protected variant of one
// architecture, trained from the same initialisation. Epochs run round-robin
// across variants so drift in machine speed hits all of them alike.
OverheadReport measure_runtime_overhead(const ArchitectureConfig& arch, const Dataset& data, const TrainConfig& cfg,
                                        std::uint64_t seed);

// Continues training a protected model on a new task. replace_head swaps the
// output layer for a freshly initialised one sized to new_data.classes.
TrainLog refine(ModelGraph& model, const Dataset& new_data, bool replace_head, const TrainConfig& cfg);

struct PlacementResult {
  std::vector<std::string> subset;  // key ids, e.g. {"P1","P3"}
  std::vector<double> accuracies;   // eval accuracy after each epoch
  double mean = 0.0;
  double variance = 0.0;
};

// Trains every nonempty subset of the protectable positions (15 for the CNN)
// with Hadamard layers from one initialisation and reports the mean and
// variance of the per-epoch evaluation accuracy.
std::vector<PlacementResult> run_placement_sweep(const ArchitectureConfig& arch, const Dataset& train_set,
                                                 const Dataset& eval_set, const TrainConfig& cfg,
                                                 std::uint64_t seed);

double mean_of(std::span<const double> v);
double variance_of(std::span<const double> v);

}  // namespace dnnshield
