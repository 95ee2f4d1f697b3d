#include <doctest.h>

#include <cmath>

#include "dnnshield/architecture.hpp"
#include "dnnshield/attacks.hpp"
#include "dnnshield/errors.hpp"
#include "dnnshield/verification.hpp"
#include "../support/gradcheck.hpp"

using namespace dnnshield;
using dnnshield::testing::random_tensor;

namespace {

// Exhaustive PAC: rotate the suspect probe output by every t and keep the
// alignment distance of the best cosine, written without the library's code.
double pac_oracle(const PermutationKey& a, const PermutationKey& b) {
  const std::size_t n = a.channel_size;
  double total = 0.0;
  for (std::size_t c = 0; c < a.shifts.size(); ++c) {
    std::vector<double> ra(n), rb(n);
    for (std::size_t i = 0; i < n; ++i) {
      ra[(i + static_cast<std::size_t>(a.shifts[c])) % n] = static_cast<double>(i);
      rb[(i + static_cast<std::size_t>(b.shifts[c])) % n] = static_cast<double>(i);
    }
    double best = -2.0;
    std::size_t best_r = n;
    for (std::size_t t = 0; t < n; ++t) {
      double dot = 0.0, na = 0.0, nb = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const double x = ra[i], y = rb[(i + n - t) % n];
        dot += x * y;
        na += x * x;
        nb += y * y;
      }
      const double cos = dot / std::max(std::sqrt(na) * std::sqrt(nb), 1e-8);
      const std::size_t r = std::min(t, n - t);
      if (cos > best + 1e-12 || (std::abs(cos - best) <= 1e-12 && r < best_r)) {
        best = std::max(best, cos);
        best_r = r;
      }
    }
    const double k = static_cast<double>(n) / 2.0;
    total += std::clamp(1.0 - static_cast<double>(best_r) / k, 0.0, 1.0);
  }
  return total / static_cast<double>(a.shifts.size());
}

ModelGraph trained_like_fcn(std::uint64_t seed, bool post_activation = false) {
  PlacementPolicy p;
  p.seed = seed;
  p.post_activation = post_activation;
  return insert_protection_layers(build_model(fcn_architecture({20}), seed + 100), p);
}

}  // namespace

TEST_CASE("cosine similarity basics") {
  const std::vector<double> a = {1, 2, 3}, neg = {-1, -2, -3}, orth = {3, 0, -1}, zero = {0, 0, 0};
  CHECK(cosine_similarity(a, a) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(cosine_similarity(a, neg) == doctest::Approx(-1.0).epsilon(1e-15));
  CHECK(cosine_similarity(a, orth) == 0.0);
  CHECK(cosine_similarity(zero, a) == 0.0);
  CHECK_THROWS_AS(cosine_similarity(a, std::vector<double>{1, 2}), InputError);
}

TEST_CASE("cosine similarity is symmetric and scale-invariant up to sign") {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    Rng rng(seed);
    const Tensor a = random_tensor({30}, rng), b = random_tensor({30}, rng);
    double c = rng.uniform(-5, 5);
    if (std::abs(c) < 1e-3) c = 1.0;
    Tensor cb = b;
    for (auto& v : cb.storage()) v *= c;
    const double base = cosine_similarity(a.values(), b.values());
    CHECK(cosine_similarity(b.values(), a.values()) == doctest::Approx(base).epsilon(1e-14));
    CHECK(cosine_similarity(a.values(), cb.values()) == doctest::Approx((c > 0 ? 1 : -1) * base).epsilon(1e-12));
  }
}

TEST_CASE("PAC matches the exhaustive oracle on 100 random key pairs") {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    Rng rng(seed);
    const auto n = static_cast<std::size_t>(rng.uniform_int(2, 64));
    const auto c = static_cast<std::size_t>(rng.uniform_int(1, 6));
    const auto a = generate_permutation_key(c, n, rng.next_u64());
    const auto b = generate_permutation_key(c, n, rng.next_u64());
    CAPTURE(n);
    CHECK(pac_metric(a, b) == pac_oracle(a, b));
    CHECK(pac_metric(a, b) == pac_metric(b, a));
    CHECK(pac_metric(a, a) == 1.0);
  }
}

TEST_CASE("PAC of keys one shift apart with n = 16 is 0.875") {
  PermutationKey a{{1, 5, 14}, 16}, b{{2, 4, 15}, 16};
  CHECK(pac_metric(a, b) == 0.875);
  CHECK(pac_oracle(a, b) == 0.875);
}

TEST_CASE("PAC of unrelated keys sits near one half") {
  double sum = 0.0;
  for (std::uint64_t s = 0; s < 10; ++s)
    sum += pac_metric(generate_permutation_key(64, 784, 2 * s), generate_permutation_key(64, 784, 2 * s + 1));
  CHECK(std::abs(sum / 10.0 - 0.5) <= 0.1);
}

TEST_CASE("one corrupted probe value moves a channel score by at most 1/k") {
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    Rng rng(seed);
    const std::size_t n = 20, c = 3;
    const auto ka = generate_permutation_key(c, n, rng.next_u64());
    const auto kb = generate_permutation_key(c, n, rng.next_u64());
    const Tensor probe = pac_probe(c, n);
    const Tensor ya = permutation_forward(probe, ka);
    Tensor yb = permutation_forward(probe, kb);
    const auto clean = pac_channel_scores(ya.values(), yb.values(), c, n);
    const auto ch = static_cast<std::size_t>(rng.uniform_int(0, c - 1));
    const auto pos = static_cast<std::size_t>(rng.uniform_int(0, n - 1));
    yb[ch * n + pos] = rng.uniform(0, static_cast<double>(n));
    const auto dirty = pac_channel_scores(ya.values(), yb.values(), c, n);
    for (std::size_t i = 0; i < c; ++i) CHECK(std::abs(dirty[i] - clean[i]) <= 1.0 / (n / 2.0) + 1e-12);
  }
}

TEST_CASE("PAC does not depend on which output is searched") {
  Rng rng(2);
  const auto a = generate_permutation_key(4, 33, 1), b = generate_permutation_key(4, 33, 2);
  const Tensor probe = pac_probe(4, 33);
  const Tensor ya = permutation_forward(probe, a), yb = permutation_forward(probe, b);
  CHECK(pac_channel_scores(ya.values(), yb.values(), 4, 33) == pac_channel_scores(yb.values(), ya.values(), 4, 33));
}

TEST_CASE("extraction inverts an exact merge in both directions") {
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    Rng rng(seed);
    const Tensor w = random_tensor({6, 9}, rng), b = random_tensor({6}, rng);
    const Tensor kp = random_tensor({6}, rng), kf = random_tensor({9}, rng);
    Tensor wp = w, bp = b, wf = w;
    for (std::size_t j = 0; j < 6; ++j) {
      for (std::size_t i = 0; i < 9; ++i) wp[j * 9 + i] *= kp[j];
      bp[j] *= kp[j];
    }
    for (std::size_t j = 0; j < 6; ++j)
      for (std::size_t i = 0; i < 9; ++i) wf[j * 9 + i] *= kf[i];
    const auto ep = extract_merged_key(w, b, wp, bp, MergeDirection::IntoPreceding);
    const auto ef = extract_merged_key(w, b, wf, b, MergeDirection::IntoFollowing);
    CHECK(ep.flagged.empty());
    CHECK(ef.flagged.empty());
    for (std::size_t j = 0; j < 6; ++j) CHECK(std::abs(ep.values[j] - kp[j]) <= 1e-10);
    for (std::size_t i = 0; i < 9; ++i) CHECK(std::abs(ef.values[i] - kf[i]) <= 1e-10);
    CHECK(masked_cosine(ep, kp.values()) == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("the outlier filter absorbs a few perturbed weights") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    const std::size_t out = 32, in = 64;
    const Tensor w = random_tensor({out, in}, rng), b = random_tensor({out}, rng), k = random_tensor({out}, rng);
    Tensor ws = w, bs = b;
    for (std::size_t j = 0; j < out; ++j) {
      for (std::size_t i = 0; i < in; ++i) ws[j * in + i] *= k[j];
      bs[j] *= k[j];
    }
    for (std::size_t i = 0; i < ws.size(); ++i)
      if (rng.uniform01() < 0.05) ws[i] *= 1.10;
    const auto est = extract_merged_key(w, b, ws, bs);
    CHECK(masked_cosine(est, k.values()) > 0.99);
  }
}

TEST_CASE("zero divisors are flagged and skipped") {
  Tensor w({2, 2}, std::vector<double>{0, 0, 1, 2});
  Tensor b({2}, std::vector<double>{0, 1});
  Tensor ws({2, 2}, std::vector<double>{0, 0, 3, 6});
  Tensor bs({2}, std::vector<double>{0, 3});
  const auto est = extract_merged_key(w, b, ws, bs);
  CHECK(est.flagged == std::vector<std::size_t>{0});
  CHECK(est.values[1] == doctest::Approx(3.0));
  CHECK(masked_cosine(est, std::vector<double>{-5.0, 2.0}) == doctest::Approx(1.0));
}

TEST_CASE("extraction against an unrelated model gives a low cosine") {
  double worst = 0.0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    const Tensor w1 = random_tensor({128, 64}, rng), b1 = random_tensor({128}, rng);
    const Tensor w2 = random_tensor({128, 64}, rng), b2 = random_tensor({128}, rng);
    const Tensor k = random_tensor({128}, rng);
    worst = std::max(worst, std::abs(masked_cosine(extract_merged_key(w1, b1, w2, b2), k.values())));
  }
  CHECK(worst < 0.5);
}

TEST_CASE("split layers fold into their product") {
  using D = LayerDescriptor;
  Rng rng(8);
  const Tensor k = random_tensor({4}, rng, 0.1, 1.0);
  Tensor root = k;
  for (auto& v : root.storage()) v = std::sqrt(v);
  ModelGraph m("split", {3}, {D::linear(3, 4), D::protection(ProtectionKind::Hadamard, "A"),
                              D::protection(ProtectionKind::Hadamard, "B"), D::linear(4, 2)});
  m.keys().add({"A", HadamardKey{root}, {}});
  m.keys().add({"B", HadamardKey{root}, {}});
  m.initialize(1);
  const auto runs = detect_split_layers(m);
  REQUIRE(runs.size() == 1);
  CHECK(runs[0].begin == 1);
  CHECK(runs[0].end == 3);
  const ModelGraph f = fold_split_layers(m);
  CHECK(f.num_layers() == 3);
  CHECK(f.keys().ids() == std::vector<std::string>{"A"});
  CHECK(cosine_similarity(f.keys().get("A").hadamard().values.values(), k.values()) ==
        doctest::Approx(1.0).epsilon(1e-14));
  const Tensor x = random_tensor({5, 3}, rng);
  const Tensor y0 = m.forward(x), y1 = f.forward(x);
  for (std::size_t i = 0; i < y0.size(); ++i) CHECK(std::abs(y0[i] - y1[i]) <= 1e-12);

  const ModelGraph single = trained_like_fcn(1);
  CHECK(detect_split_layers(single).empty());
  CHECK(fold_split_layers(single).descriptors() == single.descriptors());

  KeyRegistry ref;
  ref.add({"P1", HadamardKey{k}, {}});
  const auto rep = verify_ownership(ref, m);
  CHECK(rep.entries.size() == 1);
  CHECK(rep.entries[0].score == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("verify_ownership decisions") {
  const ModelGraph owner = trained_like_fcn(3);
  const auto copy = verify_ownership(owner.keys(), owner);
  CHECK(copy.decision);
  for (const auto& e : copy.entries) CHECK(e.score == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(copy.aggregate == doctest::Approx(1.0).epsilon(1e-14));

  ModelGraph fake = owner;
  for (auto& e : fake.keys().entries()) e.key = random_key_like(e, 4242);
  CHECK_FALSE(verify_ownership(owner.keys(), fake).decision);

  const ModelGraph bare = build_model(fcn_architecture({20}), 1);
  CHECK_THROWS_AS(verify_ownership(owner.keys(), bare), VerificationImpossibleError);

  const auto js = report_to_json(copy);
  CHECK(js["decision"] == true);
  CHECK(report_to_table(copy).find("P1") != std::string::npos);
}

TEST_CASE("no false positives over 100 unrelated random keys") {
  const ModelGraph owner = trained_like_fcn(5);
  ModelGraph suspect = owner;
  for (std::uint64_t t = 0; t < 100; ++t) {
    for (auto& e : suspect.keys().entries()) e.key = random_key_like(e, 1000 + t);
    const auto r = verify_ownership(owner.keys(), suspect);
    CHECK_FALSE(r.decision);
    for (const auto& e : r.entries) CHECK(e.score < kDefaultThreshold);
  }
}

TEST_CASE("verification recovers merged keys through extraction") {
  for (auto dir : {MergeDirection::IntoPreceding, MergeDirection::IntoFollowing}) {
    // Folding into the next layer needs the key after the activation.
    const ModelGraph owner = trained_like_fcn(9, dir == MergeDirection::IntoFollowing);
    ModelGraph stolen = attack_merge_fc(owner, "P1", dir);
    stolen = attack_merge_fc(stolen, "P2", dir);
    CHECK(stolen.keys().empty());
    VerifyOptions opt;
    opt.reference_model = &owner;
    // Unprotected layout for a flat input: fc1, relu, fc2, relu, fc3.
    const std::size_t fc1 = 0, fc2 = 2, fc3 = 4;
    opt.extractions = {{"P1", dir == MergeDirection::IntoPreceding ? fc1 : fc2, dir},
                       {"P2", dir == MergeDirection::IntoPreceding ? fc2 : fc3, dir}};
    const auto r = verify_ownership(owner.keys(), stolen, opt);
    CHECK(r.decision);
    for (const auto& e : r.entries) CHECK(e.score == doctest::Approx(1.0).epsilon(1e-10));
  }
}
