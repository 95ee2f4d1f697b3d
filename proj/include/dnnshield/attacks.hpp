#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dnnshield/data.hpp"
#include "dnnshield/model.hpp"
#include "dnnshield/training.hpp"
#include "dnnshield/verification.hpp"

namespace dnnshield {

// Datasets an attack evaluates on. Limits > 0 evaluate the first samples only.
struct AttackData {
  const Dataset* train = nullptr;
  const Dataset* test = nullptr;
  std::size_t train_limit = 0;
  std::size_t test_limit = 0;
};

struct AttackRecord {
  std::size_t step = 0;
  double train_acc = 0.0;
  double test_acc = 0.0;
  double similarity = 0.0;
};

struct AttackResult {
  std::string attack;
  std::string model;
  std::uint64_t seed = 0;
  std::string metric;  // "cosine", "pac" or "cosine+pac"
  AttackRecord baseline;
  std::vector<AttackRecord> records;
  nlohmann::json summary = nlohmann::json::object();
  std::optional<ModelGraph> result_model;

  std::string to_csv() const;
  nlohmann::json to_json() const;
  std::string file_stem() const;  // <attack>_<model>_<seed>
};

// Mean per-key similarity of `current` against `reference`, matched by id:
// cosine for Hadamard keys, PAC for Permutation keys.
double key_similarity(const KeyRegistry& reference, const KeyRegistry& current);
std::string metric_name(const KeyRegistry& keys);

// Train/test accuracy and key similarity of a model against reference keys.
AttackRecord measure(const ModelGraph& model, const KeyRegistry& reference, const AttackData& data,
                     std::size_t step = 0);

// Fresh key of the same kind, shape and range as `entry`.
ProtectionKey random_key_like(const KeyEntry& entry, std::uint64_t seed);

AttackResult attack_random_key_replace(const ModelGraph& model, const AttackData& data, std::size_t trials,
                                       std::uint64_t seed);

// Replaces up to max_values randomly chosen key values one at a time and
// measures after every values_per_step replacements (and after the last).
AttackResult attack_incremental_replace(const ModelGraph& model, const AttackData& data, std::size_t max_values,
                                        std::uint64_t seed, std::size_t values_per_step = 1);

struct NoiseSchedule {
  std::size_t hadamard_steps = 10;
  double hadamard_low = -0.2;
  double hadamard_high = 0.2;
  std::size_t permutation_steps = 100;
};

// Cumulative noise: Hadamard keys receive U(low, high) on every value per
// step; Permutation keys get one random shift incremented by one per step,
// wrapping from n-1 to 1.
AttackResult attack_key_noise(const ModelGraph& model, const AttackData& data, const NoiseSchedule& schedule,
                              std::uint64_t seed);

enum class PruneScope { AllParams, KeyOnly };
const char* to_string(PruneScope scope);
PruneScope prune_scope_from_string(const std::string& name);

// Zeroes the lowest-|value| fraction of the scope. Global: one ranking over
// the whole scope. Per-tensor: each tensor (and key) ranked on its own.
void prune_in_place(ModelGraph& model, PruneScope scope, double fraction, bool per_tensor = false);

std::vector<double> default_prune_levels();  // 0.05, 0.10, ..., 0.90

// One record per level, each pruned independently from the intact model.
AttackResult attack_prune(const ModelGraph& model, const AttackData& data, PruneScope scope,
                          const std::vector<double>& levels = default_prune_levels(), bool per_tensor = false);

enum class FinetuneScenario { AllParamsAndKeys, KeysOnly };
const char* to_string(FinetuneScenario s);
FinetuneScenario finetune_scenario_from_string(const std::string& name);

// Fine-tunes a copy on `attacker` (held-out data) with every Hadamard key
// trainable. Records per epoch: original-train accuracy, attacker-set
// accuracy, key cosine. The tuned model is returned in result_model.
AttackResult attack_finetune(const ModelGraph& model, const Dataset& attacker, const AttackData& data,
                             FinetuneScenario scenario, double lr_factor, int epochs, const TrainConfig& base);

// Folds a Hadamard layer into the adjacent Linear layer and removes it.
ModelGraph attack_merge_fc(const ModelGraph& model, const std::string& key_id, MergeDirection direction);

struct ConvMergeReport {
  bool feasible = false;
  // Infeasible: channel and two flat in-channel positions with different key values.
  std::size_t channel = 0, p = 0, q = 0;
  // Feasible: filter and bias scaled per output channel.
  Tensor filter, bias;
};

ConvMergeReport attack_conv_merge_attempt(const Layer& conv, const HadamardKey& key);

enum class SubstituteInit { Diagonal, Random };

struct SubstituteOptions {
  SubstituteInit init = SubstituteInit::Random;
  int epochs = 25;
  std::vector<std::string> key_ids;  // empty: every Hadamard layer
  std::size_t max_new_parameters = 20'000'000;
};

// Parameter count after replacing every Hadamard layer of `model` by a dense
// N x N layer (plus bias), divided by the count before.
double substitution_overhead(const ModelGraph& model);

ModelGraph substitute_dense(const ModelGraph& model, const SubstituteOptions& options, std::uint64_t seed);

// Replaces Hadamard layers by trainable dense layers and fine-tunes all
// parameters on `attacker`. Similarity column: cosine between the dense
// layer's diagonal and the replaced key (mean over layers).
AttackResult attack_substitute_fc(const ModelGraph& model, const Dataset& attacker, const AttackData& data,
                                  const SubstituteOptions& options, const TrainConfig& base);

// Spearman rank correlation with average ranks for ties.
double spearman(std::span<const double> x, std::span<const double> y);

}  // namespace dnnshield
