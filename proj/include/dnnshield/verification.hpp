#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dnnshield/model.hpp"

namespace dnnshield {

inline constexpr double kCosineEpsilon = 1e-8;
inline constexpr double kDivisorEpsilon = 1e-8;
inline constexpr double kDefaultThreshold = 0.8;

// (a.b) / max(|a||b|, 1e-8).
double cosine_similarity(std::span<const double> a, std::span<const double> b);

// Per-channel PAC between two permutation-layer outputs laid out as
// [channels, n]. For each channel, every circular shift of `sus` is scored by
// cosine against `ref`; r is the smallest min(left, right) shift distance
// among the maximisers, and the channel score is clamp(1 - r/(n/2), 0, 1).
std::vector<double> pac_channel_scores(std::span<const double> ref, std::span<const double> sus,
                                       std::size_t channels, std::size_t n);

// Mean channel PAC on the probe 0..n-1 passed through both keys.
double pac_metric(const PermutationKey& ref, const PermutationKey& sus);

// Probe tensor [channels, 1, n] with values 0..n-1 in every channel.
Tensor pac_probe(std::size_t channels, std::size_t n);

enum class MergeDirection { IntoPreceding, IntoFollowing };
const char* to_string(MergeDirection d);
MergeDirection merge_direction_from_string(const std::string& name);

struct MergedKeyEstimate {
  Tensor values;                     // one factor per key entry; 0 where flagged
  std::vector<std::size_t> flagged;  // entries with no usable divisor
};

// Recovers a key merged into a Linear layer by dividing suspect by original
// weights. IntoPreceding: factor j from row j (and bias j). IntoFollowing:
// factor i from column i; the bias carries no information. Candidates beyond
// three standard deviations of their mean are discarded before averaging.
MergedKeyEstimate extract_merged_key(const Tensor& w_orig, const Tensor& b_orig, const Tensor& w_sus,
                                     const Tensor& b_sus, MergeDirection direction = MergeDirection::IntoPreceding);

// Cosine between an estimate and the true key over the unflagged entries.
double masked_cosine(const MergedKeyEstimate& estimate, std::span<const double> key);

struct SplitRun {
  std::size_t begin = 0;  // first layer index of the run
  std::size_t end = 0;    // one past the last
};

// Maximal runs of two or more consecutive Hadamard layers.
std::vector<SplitRun> detect_split_layers(const ModelGraph& model);

// Each run replaced by one Hadamard layer whose key is the product of the
// run's keys; the folded key keeps the first layer's id.
ModelGraph fold_split_layers(const ModelGraph& model);

struct ExtractionRequest {
  std::string key_id;           // key in the reference registry
  std::size_t suspect_layer = 0;  // Linear layer of the suspect that absorbed it
  MergeDirection direction = MergeDirection::IntoPreceding;
};

struct VerifyOptions {
  double threshold = kDefaultThreshold;
  std::vector<ExtractionRequest> extractions;
  // Needed for extraction: the owner's model holding the original weights.
  const ModelGraph* reference_model = nullptr;
  bool fold_splits = true;
};

struct VerificationEntry {
  std::string key_id;
  std::string matched;  // suspect key id, or "layer <i>" for an extraction
  std::string metric;   // "cosine" or "pac"
  std::string source;   // "key" or "extracted"
  double score = 0.0;
  std::size_t flagged = 0;
};

struct VerificationReport {
  std::vector<VerificationEntry> entries;
  double aggregate = 0.0;
  double threshold = kDefaultThreshold;
  bool decision = false;
};

// Throws VerificationImpossibleError when nothing can be compared.
VerificationReport verify_ownership(const KeyRegistry& reference, const ModelGraph& suspect,
                                    const VerifyOptions& options = {});

nlohmann::json report_to_json(const VerificationReport& report);
std::string report_to_table(const VerificationReport& report);

}  // namespace dnnshield
