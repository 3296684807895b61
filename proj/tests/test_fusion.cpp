#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "support.hpp"
#include "vlc/error.hpp"
#include "vlc/fusion.hpp"

using namespace vlc;
using namespace vlc::fusion;

namespace {

std::vector<knowledge::Inference> sentences(std::initializer_list<const char*> texts) {
  std::vector<knowledge::Inference> out;
  for (const char* t : texts) {
    knowledge::Inference i;
    i.sentence = t;
    out.push_back(i);
  }
  return out;
}

void check_vector(const std::vector<double>& got, const std::vector<double>& want, double tol) {
  REQUIRE(got.size() == want.size());
  for (std::size_t i = 0; i < got.size(); ++i) CHECK(std::abs(got[i] - want[i]) <= tol);
}

}  // namespace

TEST_CASE("fuse with no inferences attends only to the question") {
  std::mt19937_64 rng(1);
  const auto p = FusionParameters::random(4, 4, 2, rng);
  const auto out = fuse(testing::random_vector(4, rng), {}, p);
  CHECK(out.attention.weights == std::vector<double>{1.0});
  CHECK(out.fused.allFinite());
}

TEST_CASE("identical candidates receive uniform attention") {
  std::mt19937_64 rng(2);
  const auto p = FusionParameters::random(6, 8, 2, rng);
  const Vector v = testing::random_vector(6, rng);
  const std::vector<Vector> c(4, v);
  const auto out = fuse(v, c, p);
  for (double w : out.attention.weights) CHECK(w == doctest::Approx(0.2).epsilon(1e-12));
}

TEST_CASE("fuse equals the step-by-step oracle") {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    std::mt19937_64 rng(seed);
    auto p = FusionParameters::random(4, 4, 2, rng);
    p.output_bias = testing::random_vector(4, rng);
    const Vector q = testing::random_vector(4, rng);
    const std::vector<Vector> c{testing::random_vector(4, rng), testing::random_vector(4, rng),
                                testing::random_vector(4, rng)};
    const auto got = fuse(q, c, p);
    const auto want = testing::oracle_fuse(q, c, p);
    check_vector(std::vector<double>(got.fused.data(), got.fused.data() + got.fused.size()), want.fused, 1e-10);
    check_vector(got.attention.weights, want.attention, 1e-10);
  }
}

TEST_CASE("fuse rejects mismatched dimensions") {
  std::mt19937_64 rng(3);
  const auto p = FusionParameters::random(4, 4, 2, rng);
  const std::vector<Vector> c{Vector::Ones(5)};
  CHECK_THROWS_AS(fuse(Vector::Ones(4), c, p), DimensionError);
  CHECK_THROWS_AS(fuse(Vector::Ones(3), {}, p), DimensionError);
  CHECK_THROWS_AS(FusionParameters::zeros(4, 6, 4), ConfigError);
}

TEST_CASE("attention is a distribution of length k+1 and permutes with the inferences") {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 50; ++trial) {
    const int k = trial % 6;
    const auto p = FusionParameters::random(5, 8, 4, rng);
    const Vector q = testing::random_vector(5, rng);
    std::vector<Vector> c;
    for (int i = 0; i < k; ++i) c.push_back(testing::random_vector(5, rng));
    const auto out = fuse(q, c, p);
    CHECK(out.attention.size() == static_cast<std::size_t>(k + 1));
    CHECK(out.attention.valid());

    std::vector<std::size_t> perm(static_cast<std::size_t>(k));
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<Vector> shuffled;
    for (auto i : perm) shuffled.push_back(c[i]);
    const auto again = fuse(q, shuffled, p);
    CHECK((again.fused - out.fused).cwiseAbs().maxCoeff() < 1e-12);
    for (std::size_t i = 0; i < perm.size(); ++i)
      CHECK(again.attention.weights[i] == doctest::Approx(out.attention.weights[perm[i]]).epsilon(1e-12));
    CHECK(again.attention.weights.back() == doctest::Approx(out.attention.weights.back()).epsilon(1e-12));
  }
}

TEST_CASE("weak labels reproduce the normalized 0.05 / 0.8 vectors") {
  const StopWords stop;
  const std::vector<corpus::AnswerCount> answers{{"store", 10}};
  const double lo = 1.0 / 21.0, hi = 16.0 / 21.0;

  const auto one = weak_labels(sentences({"a", "at the store", "b", "c", "d"}), answers, stop);
  check_vector(one.weights, {lo, hi, lo, lo, lo, lo}, 1e-12);

  const auto none = weak_labels(sentences({"a", "b", "c", "d", "e"}), answers, stop);
  check_vector(none.weights, {lo, lo, lo, lo, lo, hi}, 1e-12);

  const auto all = weak_labels(sentences({"store", "store a", "store b", "store c", "the store"}), answers, stop);
  const double h = 0.8 / 4.05, l = 0.05 / 4.05;
  check_vector(all.weights, {h, h, h, h, h, l}, 1e-12);
  CHECK(h == doctest::Approx(0.1975).epsilon(1e-3));
  CHECK(l == doctest::Approx(0.0123).epsilon(1e-2));
}

TEST_CASE("weak labels ignore answer order and stopwords") {
  const StopWords stop;
  const auto infs = sentences({"the cat sat", "a dog ran", "of the mat"});
  const std::vector<corpus::AnswerCount> a{{"dog", 4}, {"the mat", 6}};
  const std::vector<corpus::AnswerCount> b{{"the mat", 6}, {"dog", 4}};
  CHECK(weak_labels(infs, a, stop).weights == weak_labels(infs, b, stop).weights);
  const auto w = weak_labels(infs, {{"the", 10}}, stop);
  CHECK(w.weights.back() > w.weights.front());
  CHECK(w.valid());
}

TEST_CASE("attention loss identities") {
  const AttentionDistribution label{{0.1, 0.6, 0.3}};
  double entropy = 0.0;
  for (double w : label.weights) entropy -= w * std::log(w);
  CHECK(attention_loss(label, label) == doctest::Approx(entropy));

  const AttentionDistribution uniform{std::vector<double>(6, 1.0 / 6.0)};
  const AttentionDistribution any{{0.05, 0.5, 0.05, 0.2, 0.1, 0.1}};
  CHECK(attention_loss(uniform, any) == doctest::Approx(std::log(6.0)));

  double last = attention_loss(label, label);
  for (double off : {0.2, 0.4, 0.55}) {
    const AttentionDistribution moved{{0.1 + off, 0.6 - off, 0.3}};
    const double l = attention_loss(moved, label);
    CHECK(l > last);
    last = l;
  }
  CHECK(attention_loss(AttentionDistribution{{1.0, 0.0}}, AttentionDistribution{{0.5, 0.5}}) ==
        doctest::Approx(-0.5 * std::log(kProbabilityFloor)));
  CHECK_THROWS_AS(attention_loss(label, uniform), DimensionError);
}

TEST_CASE("fuse_backward linearity and value independence of the attention path") {
  std::mt19937_64 rng(9);
  const auto p = FusionParameters::random(4, 6, 3, rng);
  const Vector q = testing::random_vector(4, rng);
  const std::vector<Vector> c{testing::random_vector(4, rng), testing::random_vector(4, rng)};
  FusionCache cache;
  const auto out = fuse(q, c, p, &cache);

  const auto zero = fuse_backward(p, cache, Vector::Zero(6), {});
  for (int h = 0; h < 3; ++h) {
    CHECK(zero.params.query[h].isZero(0));
    CHECK(zero.params.key[h].isZero(0));
    CHECK(zero.params.value[h].isZero(0));
  }
  CHECK(zero.params.output.isZero(0));
  CHECK(zero.question.isZero(0));

  const auto att = fuse_backward(p, cache, Vector::Zero(6),
                                 attention_loss_gradient(out.attention, AttentionDistribution{{0.2, 0.5, 0.3}}));
  for (int h = 0; h < 3; ++h) {
    CHECK(att.params.value[h].isZero(0));
    CHECK_FALSE(att.params.key[h].isZero(0));
  }
  CHECK_THROWS(fuse_backward(p, FusionCache{}, Vector::Zero(6), {}));
}

TEST_CASE("fusion gradients match central differences across seeds") {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const int k = static_cast<int>(seed % 6);
    const auto r = testing::check_fusion_gradients(seed, 4, 4, 2, k, seed % 2 ? 1.0 : 3.0);
    INFO("seed " << seed << " worst " << r.worst_relative << " at " << r.worst_name);
    CHECK(r.worst_relative < testing::kGradTolerance);
  }
}
