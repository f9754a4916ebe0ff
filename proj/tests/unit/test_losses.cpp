#include <cmath>
#include <cstring>

#include "doctest.h"
#include "layoutsynth/losses.hpp"
#include "layoutsynth/ops.hpp"
#include "support/oracles.hpp"

using namespace layoutsynth;

namespace {

Tensor<double> vec(std::vector<double> v) {
  const std::size_t n = v.size();
  return Tensor<double>(Shape{n}, std::move(v));
}

template <typename T>
bool bit_equal(const Tensor<T>& a, const Tensor<T>& b) {
  return a.shape() == b.shape() &&
         std::memcmp(a.data().data(), b.data().data(), a.numel() * sizeof(T)) == 0;
}

DiscriminatorOutput<double> scores(std::vector<double> img, std::vector<std::vector<double>> obj) {
  DiscriminatorOutput<double> out;
  out.image_scores = vec(std::move(img));
  for (auto& o : obj) out.object_scores.push_back(o.empty() ? Tensor<double>() : vec(std::move(o)));
  return out;
}

}  // namespace

TEST_SUITE("losses") {
  TEST_CASE("hinge zero regions") {
    const auto real = hinge_term(vec({1.0, 2.0, 0.5, -1.0}), true);
    CHECK(real[0] == 0.0);
    CHECK(real[1] == 0.0);
    CHECK(real[2] == 0.5);
    CHECK(real[3] == 2.0);
    const auto fake = hinge_term(vec({-1.0, -3.0, 0.25, 1.0}), false);
    CHECK(fake[0] == 0.0);
    CHECK(fake[1] == 0.0);
    CHECK(fake[2] == 1.25);
    CHECK(fake[3] == 2.0);
  }

  TEST_CASE("combined worked example") {
    // Image hinge 1, object hinges 0.4 and 0.6 with lambda 0.1.
    const auto l = combined_adv(vec({0.0}), vec({0.6, 0.4}), 0.1, true);
    CHECK(l.item() == doctest::Approx(0.6).epsilon(1e-15));
    const auto f = combined_adv(vec({0.0}), vec({-0.6, -0.4}), 0.1, false);
    CHECK(f.item() == doctest::Approx(0.6).epsilon(1e-15));
  }

  TEST_CASE("no objects leaves only the image term") {
    CHECK(combined_adv(vec({-0.5}), Tensor<double>(), 0.1, true).item() ==
          doctest::Approx(0.15).epsilon(1e-15));
    CHECK(combined_adv(vec({-0.5}), Tensor<double>(), 0.1, true).item() ==
          semi_weighted_adv(vec({-0.5}), Tensor<double>(), {}, 0.1, true).item());
  }

  TEST_CASE("unit confidences reproduce the combined loss bit for bit") {
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
      const std::size_t m = 1 + seed % 8;
      const auto img = oracle::random_tensor<double>({1}, seed, -2, 2);
      const auto obj = oracle::random_tensor<double>({m}, seed + 1000, -2, 2);
      const std::vector<double> ones(m, 1.0);
      for (const bool real : {true, false}) {
        const auto a = combined_adv(img, obj, 0.1, real);
        const auto b = semi_weighted_adv(img, obj, ones, 0.1, real);
        CHECK(bit_equal(a, b));
      }
    }
  }

  TEST_CASE("confidences weight object terms") {
    const auto l = semi_weighted_adv(vec({1.0}), vec({0.6, 0.4}), std::vector<double>{0.5, 1.0}, 0.1, true);
    CHECK(l.item() == doctest::Approx((0.5 * 0.4 + 0.6) / 2).epsilon(1e-15));
    CHECK_THROWS_AS(semi_weighted_adv(vec({1.0}), vec({0.6, 0.4}), std::vector<double>{0.49, 1.0}, 0.1, true),
                    ContractError);
    CHECK_NOTHROW(semi_weighted_adv(vec({1.0}), vec({0.6, 0.4}), std::vector<double>{0.3, 1.0}, 0.1, true, 0.2));
    CHECK_THROWS_AS(semi_weighted_adv(vec({1.0}), vec({0.6, 0.4}), std::vector<double>{1.0}, 0.1, true),
                    DimensionError);
  }

  TEST_CASE("discriminator loss sums the batch") {
    const auto real = scores({0.0, 2.0}, {{0.6, 0.4}, {}});
    const auto fake = scores({0.0, -2.0}, {{-0.6, -0.4}, {}});
    const auto l = discriminator_loss(real, fake, 0.1);
    CHECK(l.item() == doctest::Approx(0.6 + 0.0 + 0.6 + 0.0).epsilon(1e-15));
    const ConfidenceBatch ones{{1.0, 1.0}, {}};
    CHECK(bit_equal(discriminator_loss(real, fake, 0.1, &ones), l));
    const ConfidenceBatch half{{0.5, 0.5}, {}};
    CHECK(discriminator_loss(real, fake, 0.1, &half).item() ==
          doctest::Approx(2 * (0.1 + 0.25)).epsilon(1e-15));
  }

  TEST_CASE("generator loss terms") {
    const FeatureExtractor<double> fx;
    const auto gt = oracle::random_tensor<double>({2, 3, 8, 8}, 3);
    const auto s = scores({0.5, -0.5}, {{1.0, 3.0}, {}});
    LossConfig cfg;
    const auto same = generator_loss(gt, gt, s, fx, cfg);
    CHECK(same.recon == 0.0);
    CHECK(same.percep == 0.0);
    CHECK(same.adversarial == doctest::Approx(0.1 * 0.5 + 2.0 + 0.1 * -0.5).epsilon(1e-15));
    CHECK(same.total.item() == doctest::Approx(-same.adversarial).epsilon(1e-15));

    const auto syn = oracle::random_tensor<double>({2, 3, 8, 8}, 4);
    const auto terms = generator_loss(syn, gt, s, fx, cfg);
    const auto l1 = per_sample_l1(syn, gt);
    double hand = 0;
    for (std::size_t n = 0; n < 2; ++n) {
      double acc = 0;
      for (std::size_t k = 0; k < 192; ++k) acc += std::abs(syn[n * 192 + k] - gt[n * 192 + k]);
      CHECK(l1[n] == doctest::Approx(acc / 192).epsilon(1e-14));
      hand += acc / 192;
    }
    CHECK(terms.recon == doctest::Approx(hand / 2).epsilon(1e-14));
    CHECK(terms.percep > 0.0);
    CHECK(terms.total.item() ==
          doctest::Approx(-(terms.adversarial - 2 * terms.recon - 2 * terms.percep)).epsilon(1e-12));
  }
}
