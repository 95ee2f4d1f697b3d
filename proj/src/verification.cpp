#include "dnnshield/verification.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <set>
#include <sstream>

#include "dnnshield/errors.hpp"
#include "dnnshield/layers.hpp"

namespace dnnshield {

double cosine_similarity(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    throw InputError("cosine similarity needs equal lengths, got " + std::to_string(a.size()) + " and " +
                     std::to_string(b.size()));
  }
  if (a.empty()) throw InputError("cosine similarity of empty vectors");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  return dot / std::max(std::sqrt(na) * std::sqrt(nb), kCosineEpsilon);
}

std::vector<double> pac_channel_scores(std::span<const double> ref, std::span<const double> sus,
                                       std::size_t channels, std::size_t n) {
  if (n < 2) throw InputError("PAC needs at least 2 elements per channel");
  if (ref.size() != channels * n || sus.size() != channels * n) {
    throw InputError("PAC outputs must hold " + std::to_string(channels) + " channels of " + std::to_string(n) +
                     " values");
  }
  const double k = static_cast<double>(n) / 2.0;
  std::vector<double> scores(channels);
#pragma omp parallel for schedule(static) if (channels * n * n > (1u << 16))
  for (std::size_t c = 0; c < channels; ++c) {
    const double* r = ref.data() + c * n;
    const double* s = sus.data() + c * n;
    std::vector<double> rotated(n);
    double best = -2.0;
    std::size_t best_r = n;
    for (std::size_t t = 0; t < n; ++t) {
      // rotated = s circularly shifted right by t
      for (std::size_t i = 0; i < n; ++i) rotated[(i + t) % n] = s[i];
      const double cs = cosine_similarity({r, n}, rotated);
      const std::size_t dist = std::min(t, n - t);
      if (cs > best || (cs == best && dist < best_r)) {
        best = cs;
        best_r = dist;
      }
    }
    scores[c] = std::clamp(1.0 - static_cast<double>(best_r) / k, 0.0, 1.0);
  }
  return scores;
}

Tensor pac_probe(std::size_t channels, std::size_t n) {
  Tensor probe({channels, 1, n});
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t i = 0; i < n; ++i) probe[c * n + i] = static_cast<double>(i);
  }
  return probe;
}

double pac_metric(const PermutationKey& ref, const PermutationKey& sus) {
  if (ref.shifts.size() != sus.shifts.size()) {
    throw InputError("PAC keys cover " + std::to_string(ref.shifts.size()) + " and " +
                     std::to_string(sus.shifts.size()) + " channels");
  }
  if (ref.channel_size != sus.channel_size) {
    throw InputError("PAC keys have channel sizes " + std::to_string(ref.channel_size) + " and " +
                     std::to_string(sus.channel_size));
  }
  const std::size_t c = ref.shifts.size(), n = ref.channel_size;
  if (c == 0) throw InputError("PAC of empty keys");
  const Tensor probe = pac_probe(c, n);
  const Tensor a = permutation_forward(probe, ref);
  const Tensor b = permutation_forward(probe, sus);
  const auto scores = pac_channel_scores(a.values(), b.values(), c, n);
  double sum = 0.0;
  for (double s : scores) sum += s;
  return sum / static_cast<double>(c);
}

const char* to_string(MergeDirection d) {
  return d == MergeDirection::IntoPreceding ? "into_preceding" : "into_following";
}

MergeDirection merge_direction_from_string(const std::string& name) {
  if (name == "into_preceding") return MergeDirection::IntoPreceding;
  if (name == "into_following") return MergeDirection::IntoFollowing;
  throw InputError("unknown merge direction '" + name + "'");
}

namespace {

// Mean of the candidates that lie within three standard deviations of their mean.
double filtered_mean(const std::vector<double>& c) {
  double mean = 0.0;
  for (double v : c) mean += v;
  mean /= static_cast<double>(c.size());
  double var = 0.0;
  for (double v : c) var += (v - mean) * (v - mean);
  const double limit = 3.0 * std::sqrt(var / static_cast<double>(c.size()));
  double sum = 0.0;
  std::size_t kept = 0;
  for (double v : c) {
    if (std::abs(v - mean) <= limit) {
      sum += v;
      ++kept;
    }
  }
  return kept ? sum / static_cast<double>(kept) : mean;
}

}  // namespace

MergedKeyEstimate extract_merged_key(const Tensor& w_orig, const Tensor& b_orig, const Tensor& w_sus,
                                     const Tensor& b_sus, MergeDirection direction) {
  if (w_orig.rank() != 2) throw DimensionError("extraction expects [out,in] weights, got " + shape_to_string(w_orig.shape()));
  require_same_shape(w_orig.shape(), w_sus.shape(), "extraction weights");
  const std::size_t out = w_orig.dim(0), in = w_orig.dim(1);
  const bool preceding = direction == MergeDirection::IntoPreceding;
  if (preceding) {
    if (b_orig.size() != out || b_sus.size() != out) {
      throw DimensionError("extraction biases must have " + std::to_string(out) + " entries");
    }
  }
  const std::size_t entries = preceding ? out : in;
  const std::size_t span = preceding ? in : out;
  MergedKeyEstimate est{Tensor({entries}), {}};
  std::vector<double> cand;
  for (std::size_t e = 0; e < entries; ++e) {
    cand.clear();
    for (std::size_t t = 0; t < span; ++t) {
      const std::size_t idx = preceding ? e * in + t : t * in + e;
      if (std::abs(w_orig[idx]) > kDivisorEpsilon) cand.push_back(w_sus[idx] / w_orig[idx]);
    }
    std::optional<double> from_w, from_b;
    if (!cand.empty()) from_w = filtered_mean(cand);
    if (preceding && std::abs(b_orig[e]) > kDivisorEpsilon) from_b = b_sus[e] / b_orig[e];
    if (from_w && from_b) {
      est.values[e] = 0.5 * (*from_w + *from_b);
    } else if (from_w || from_b) {
      est.values[e] = from_w ? *from_w : *from_b;
    } else {
      est.flagged.push_back(e);
    }
  }
  return est;
}

double masked_cosine(const MergedKeyEstimate& estimate, std::span<const double> key) {
  if (key.size() != estimate.values.size()) {
    throw InputError("estimate has " + std::to_string(estimate.values.size()) + " entries, key has " +
                     std::to_string(key.size()));
  }
  std::vector<double> a, b;
  std::size_t f = 0;
  for (std::size_t i = 0; i < key.size(); ++i) {
    if (f < estimate.flagged.size() && estimate.flagged[f] == i) {
      ++f;
      continue;
    }
    a.push_back(estimate.values[i]);
    b.push_back(key[i]);
  }
  if (a.empty()) throw VerificationImpossibleError("every extracted key entry is flagged");
  return cosine_similarity(a, b);
}

std::vector<SplitRun> detect_split_layers(const ModelGraph& model) {
  std::vector<SplitRun> runs;
  std::size_t i = 0;
  while (i < model.num_layers()) {
    if (model.layer(i).desc.kind != LayerKind::Hadamard) {
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j < model.num_layers() && model.layer(j).desc.kind == LayerKind::Hadamard) ++j;
    if (j - i >= 2) runs.push_back({i, j});
    i = j;
  }
  return runs;
}

ModelGraph fold_split_layers(const ModelGraph& model) {
  const auto runs = detect_split_layers(model);
  if (runs.empty()) return model;
  ModelGraph out = model;
  for (auto it = runs.rbegin(); it != runs.rend(); ++it) {
    const auto first_id = *out.layer(it->begin).desc.key_id;
    Tensor folded = out.keys().get(first_id).hadamard().values;
    for (std::size_t l = it->begin + 1; l < it->end; ++l) {
      const auto id = *out.layer(l).desc.key_id;
      const auto& k = out.keys().get(id).hadamard().values;
      require_same_shape(folded.shape(), k.shape(), "split Hadamard keys");
      for (std::size_t i = 0; i < folded.size(); ++i) folded[i] *= k[i];
    }
    for (std::size_t l = it->end; l-- > it->begin + 1;) {
      out.keys().remove(*out.layer(l).desc.key_id);
      out.erase_layer(l);
    }
    out.keys().get(first_id).hadamard().values = std::move(folded);
  }
  return out;
}

namespace {

std::size_t reference_linear(const ModelGraph& ref, const std::string& key_id, MergeDirection dir) {
  for (auto p : ref.protection_layer_indices(ProtectionKind::Hadamard)) {
    if (*ref.layer(p).desc.key_id != key_id) continue;
    if (dir == MergeDirection::IntoPreceding) {
      if (p > 0 && ref.layer(p - 1).desc.kind == LayerKind::Linear) return p - 1;
    } else {
      for (std::size_t j = p + 1; j < ref.num_layers(); ++j) {
        if (ref.layer(j).desc.kind == LayerKind::Linear) return j;
        if (has_parameters(ref.layer(j).desc.kind)) break;
      }
    }
    throw InputError("reference key '" + key_id + "' has no adjacent Linear layer " + to_string(dir));
  }
  throw InputError("reference model has no Hadamard layer with key '" + key_id + "'");
}

bool comparable(const KeyEntry& a, const KeyEntry& b) {
  if (a.kind() != b.kind()) return false;
  if (a.kind() == ProtectionKind::Hadamard) return a.hadamard().values.size() == b.hadamard().values.size();
  return a.permutation().shifts.size() == b.permutation().shifts.size() &&
         a.permutation().channel_size == b.permutation().channel_size;
}

VerificationEntry compare(const KeyEntry& ref, const KeyEntry& sus) {
  VerificationEntry e;
  e.key_id = ref.id;
  e.matched = sus.id;
  e.source = "key";
  if (ref.kind() == ProtectionKind::Hadamard) {
    e.metric = "cosine";
    e.score = cosine_similarity(ref.hadamard().values.values(), sus.hadamard().values.values());
  } else {
    e.metric = "pac";
    e.score = pac_metric(ref.permutation(), sus.permutation());
  }
  return e;
}

}  // namespace

VerificationReport verify_ownership(const KeyRegistry& reference, const ModelGraph& suspect,
                                    const VerifyOptions& options) {
  const ModelGraph folded = options.fold_splits ? fold_split_layers(suspect) : suspect;
  VerificationReport report;
  report.threshold = options.threshold;
  std::set<std::string> handled;

  for (const auto& req : options.extractions) {
    if (!options.reference_model) throw InputError("key extraction needs the reference model");
    const auto& ref_key = reference.get(req.key_id).hadamard();
    const auto& ref_model = *options.reference_model;
    const auto& orig = ref_model.layer(reference_linear(ref_model, req.key_id, req.direction));
    if (req.suspect_layer >= folded.num_layers() || folded.layer(req.suspect_layer).desc.kind != LayerKind::Linear) {
      throw InputError("suspect layer " + std::to_string(req.suspect_layer) + " is not a Linear layer");
    }
    const auto& sus = folded.layer(req.suspect_layer);
    if (sus.weight.shape() != orig.weight.shape()) {
      throw DimensionError("suspect layer " + std::to_string(req.suspect_layer) + " has weights " +
                           shape_to_string(sus.weight.shape()) + ", reference has " +
                           shape_to_string(orig.weight.shape()));
    }
    const auto est = extract_merged_key(orig.weight, orig.bias, sus.weight, sus.bias, req.direction);
    VerificationEntry e;
    e.key_id = req.key_id;
    e.matched = "layer " + std::to_string(req.suspect_layer);
    e.metric = "cosine";
    e.source = "extracted";
    e.flagged = est.flagged.size();
    e.score = masked_cosine(est, ref_key.values.values());
    report.entries.push_back(e);
    handled.insert(req.key_id);
  }

  std::set<std::string> used;
  const auto& sus_keys = folded.keys();
  for (const auto& ref : reference.entries()) {
    if (handled.count(ref.id)) continue;
    const KeyEntry* match = nullptr;
    if (sus_keys.contains(ref.id) && comparable(ref, sus_keys.get(ref.id)) && !used.count(ref.id)) {
      match = &sus_keys.get(ref.id);
    } else {
      for (const auto& s : sus_keys.entries()) {
        if (!used.count(s.id) && !reference.contains(s.id) && comparable(ref, s)) {
          match = &s;
          break;
        }
      }
    }
    if (!match) continue;
    used.insert(match->id);
    report.entries.push_back(compare(ref, *match));
  }

  if (report.entries.empty()) {
    throw VerificationImpossibleError("suspect model exposes no key comparable to the reference and no extraction "
                                      "was requested");
  }
  double sum = 0.0;
  for (const auto& e : report.entries) sum += e.score;
  report.aggregate = sum / static_cast<double>(report.entries.size());
  report.decision = report.aggregate >= report.threshold;
  return report;
}

nlohmann::json report_to_json(const VerificationReport& report) {
  nlohmann::json entries = nlohmann::json::array();
  for (const auto& e : report.entries) {
    entries.push_back({{"key_id", e.key_id},
                       {"matched", e.matched},
                       {"metric", e.metric},
                       {"source", e.source},
                       {"score", e.score},
                       {"flagged", e.flagged}});
  }
  return {{"entries", entries},
          {"aggregate", report.aggregate},
          {"threshold", report.threshold},
          {"decision", report.decision}};
}

std::string report_to_table(const VerificationReport& report) {
  std::ostringstream os;
  os << std::left << std::setw(10) << "key" << std::setw(14) << "matched" << std::setw(8) << "metric"
     << std::setw(11) << "source" << std::right << std::setw(10) << "score" << std::setw(9) << "flagged" << '\n';
  os << std::fixed << std::setprecision(6);
  for (const auto& e : report.entries) {
    os << std::left << std::setw(10) << e.key_id << std::setw(14) << e.matched << std::setw(8) << e.metric
       << std::setw(11) << e.source << std::right << std::setw(10) << e.score << std::setw(9) << e.flagged << '\n';
  }
  os << "aggregate " << report.aggregate << "  threshold " << report.threshold << "  decision "
     << (report.decision ? "yes" : "no") << '\n';
  return os.str();
}

}  // namespace dnnshield
