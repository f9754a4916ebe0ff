#include <cmath>
#include <cstring>

#include <Eigen/Dense>

#include "doctest.h"
#include "layoutsynth/networks.hpp"
#include "layoutsynth/nn.hpp"
#include "layoutsynth/ops.hpp"
#include "support/oracles.hpp"
#include "support/suites.hpp"

using namespace layoutsynth;

namespace {

template <typename T>
bool bit_equal(const Tensor<T>& a, const Tensor<T>& b) {
  return a.shape() == b.shape() &&
         std::memcmp(a.data().data(), b.data().data(), a.numel() * sizeof(T)) == 0;
}

struct Batch {
  std::vector<Layout> layouts;
  std::vector<StyleCodes> styles;
};

Batch make_batch(const NetworkConfig& cfg, std::size_t n, std::size_t fg, std::uint64_t seed) {
  Batch b;
  for (std::size_t i = 0; i < n; ++i) {
    b.layouts.push_back(with_background(suites::random_layout(
        fg, cfg.resolution, cfg.resolution, cfg.num_categories, split_seed(seed, i))));
    b.styles.push_back(sample_styles(b.layouts.back(), cfg.d_img, cfg.d_obj, split_seed(seed, 100 + i)));
  }
  return b;
}

template <typename T>
double top_singular_value(const Tensor<T>& w) {
  const Eigen::Index rows = static_cast<Eigen::Index>(w.dim(0));
  const Eigen::Index cols = static_cast<Eigen::Index>(w.numel() / w.dim(0));
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = w[r * cols + c];
  return Eigen::JacobiSVD<Eigen::MatrixXd>(m).singularValues()(0);
}

}  // namespace

TEST_SUITE("networks") {
  TEST_CASE("config validation") {
    NetworkConfig c;
    CHECK_NOTHROW(validate(c));
    c.resolution = 24;
    CHECK_THROWS_AS(validate(c), ConfigError);
    c = NetworkConfig{};
    c.mask_size = 4;
    CHECK_THROWS_AS(validate(c), ConfigError);
    c = NetworkConfig{};
    c.pyramid_levels = 4;
    CHECK_THROWS_AS(validate(c), ConfigError);
    CHECK(stage_count(NetworkConfig{}) == 3);
  }

  TEST_CASE("generator output shapes at R = 32") {
    NetworkConfig cfg;
    cfg.d_img = cfg.d_embed = cfg.d_obj = 16;
    cfg.gen_channels = 16;
    cfg.mask_size = 16;
    cfg.mask_channels = 4;
    const Generator<float> gen(cfg, 1);
    const Batch b = make_batch(cfg, 2, 3, 5);
    NoGradGuard ng;
    const auto out = gen.forward(b.layouts, b.styles);
    CHECK(out.images.shape() == Shape{2, 3, 32, 32});
    REQUIRE(out.label_maps.size() == 4);
    std::size_t h = 4;
    for (const auto& m : out.label_maps) {
      CHECK(m.shape() == Shape{2, 5, h, h});
      for (const float v : m.data()) CHECK((v >= 0.0f && v <= 1.0f));
      h *= 2;
    }
    for (const float v : out.images.data()) CHECK((v >= -1.0f && v <= 1.0f));
    REQUIRE(out.masks.size() == 2);
    CHECK(out.masks[0].shape() == Shape{4, 32, 32});
    CHECK(out.raw_masks[0].shape() == Shape{4, 16, 16});
    CHECK(out.label_images[0].size() == 32u * 32u);
  }

  TEST_CASE("generator is deterministic and style sensitive") {
    const NetworkConfig cfg = suites::tiny_network();
    const Generator<double> g1(cfg, 3), g2(cfg, 3);
    Batch b = make_batch(cfg, 2, 2, 9);
    NoGradGuard ng;
    const auto a = g1.forward(b.layouts, b.styles);
    const auto c = g2.forward(b.layouts, b.styles);
    CHECK(bit_equal(a.images, c.images));
    resample_image(b.styles[0], 1234);
    const auto d = g1.forward(b.layouts, b.styles);
    CHECK_FALSE(bit_equal(a.images, d.images));
  }

  TEST_CASE("empty layouts synthesize") {
    const NetworkConfig cfg = suites::tiny_network();
    const Generator<double> gen(cfg, 4);
    const Batch b = make_batch(cfg, 2, 0, 1);
    NoGradGuard ng;
    const auto out = gen.forward(b.layouts, b.styles);
    CHECK(out.masks[0].shape() == Shape{1, 16, 16});
    for (const double v : out.images.data()) CHECK(std::isfinite(v));
  }

  TEST_CASE("alpha = 0 resampling one object leaves other masks bit-identical") {
    const NetworkConfig cfg = suites::tiny_network();
    const Generator<double> gen(cfg, 5);
    Batch b = make_batch(cfg, 1, 3, 21);
    NoGradGuard ng;
    const GeneratorOptions zero{true};
    const auto before = gen.forward(b.layouts, b.styles, zero);
    resample_instance(b.styles[0], 2, 999);
    const auto after = gen.forward(b.layouts, b.styles, zero);
    const std::size_t plane = 16 * 16;
    for (std::size_t i = 0; i < 4; ++i) {
      const bool same = std::memcmp(before.masks[0].data().data() + i * plane,
                                    after.masks[0].data().data() + i * plane,
                                    plane * sizeof(double)) == 0;
      CHECK(same == (i != 2));
    }
  }

  TEST_CASE("pyramid levels are monotone in box size") {
    CHECK(assign_pyramid_level({0, 0, 1, 1}, 32, 2) == 0);
    CHECK(assign_pyramid_level({0, 0, 32, 32}, 32, 2) == 1);
    CHECK(assign_pyramid_level({0, 0, 16, 16}, 32, 2) == 0);
    CHECK(assign_pyramid_level({0, 0, 31, 31}, 32, 2) == 0);
    std::size_t prev = 0;
    for (std::size_t side = 1; side <= 64; ++side) {
      const std::size_t l = assign_pyramid_level({0, 0, side, side}, 64, 3);
      CHECK(l >= prev);
      prev = l;
    }
    CHECK(prev == 2);
  }

  TEST_CASE("discriminator scores foreground objects only") {
    const NetworkConfig cfg = suites::tiny_network();
    const Discriminator<double> disc(cfg, 6);
    const Batch b = make_batch(cfg, 3, 2, 31);
    std::vector<Layout> lays = b.layouts;
    Layout empty;
    empty.height = empty.width = 16;
    lays[1] = with_background(empty);
    const auto images = oracle::random_tensor<double>({3, 3, 16, 16}, 7);
    NoGradGuard ng;
    const auto out = disc.forward(images, lays);
    CHECK(out.image_scores.shape() == Shape{3});
    CHECK(out.object_scores[0].numel() == 2);
    CHECK_FALSE(out.object_scores[1].defined());
    CHECK(out.object_scores[2].numel() == 2);
    const auto again = disc.forward(images, lays);
    CHECK(bit_equal(out.image_scores, again.image_scores));
  }

  TEST_CASE("object score is linear in the class embedding row") {
    const NetworkConfig cfg = suites::tiny_network();
    Discriminator<double> disc(cfg, 8);
    Layout l;
    l.height = l.width = 16;
    l.boxes = {{3, {0.1, 0.1, 0.8, 0.9}, std::nullopt}};
    const std::vector<Layout> lays{l};
    const auto images = oracle::random_tensor<double>({1, 3, 16, 16}, 9);
    NoGradGuard ng;
    auto& embed = disc.params().get("disc.obj.embed").value;
    const std::size_t width = embed.dim(1);
    const std::vector<double> row(embed.data().begin() + 3 * width,
                                  embed.data().begin() + 4 * width);
    const auto score_with = [&](double factor) {
      for (std::size_t k = 0; k < width; ++k) embed.mutable_data()[3 * width + k] = factor * row[k];
      return disc.forward(images, lays).object_scores[0][0];
    };
    const double p0 = score_with(0), p1 = score_with(1), p2 = score_with(2);
    CHECK(p2 - p1 == doctest::Approx(p1 - p0).epsilon(1e-10));
    CHECK(std::abs(p1 - p0) > 1e-8);
  }

  TEST_CASE("orthogonal init") {
    const auto w = orthogonal_init<double>({4, 2, 3, 3}, 10);
    const auto flat = reshape(w, {4, 18});
    const auto ww = oracle::matmul(flat, transpose(flat));
    for (std::size_t i = 0; i < 4; ++i)
      for (std::size_t j = 0; j < 4; ++j) CHECK(ww[i * 4 + j] == doctest::Approx(i == j ? 1.0 : 0.0).epsilon(1e-12));
    const auto tall = orthogonal_init<double>({6, 3}, 11);
    const auto tt = oracle::matmul(transpose(tall), tall);
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t j = 0; j < 3; ++j) CHECK(tt[i * 3 + j] == doctest::Approx(i == j ? 1.0 : 0.0).epsilon(1e-12));
    CHECK(bit_equal(orthogonal_init<double>({6, 3}, 11), tall));
  }

  TEST_CASE("spectral normalization bounds the top singular value") {
    const auto w = oracle::random_tensor<double>({8, 3, 3, 3}, 12, -2, 2);
    PowerIterationState<double> st = init_power_state(w, 13);
    const auto wn = spectral_normalize(w, st, 200);
    CHECK(top_singular_value(wn) == doctest::Approx(1.0).epsilon(1e-8));
    const NetworkConfig cfg = suites::tiny_network();
    Discriminator<double> disc(cfg, 14);
    disc.params().refresh_spectral(100);
    for (const auto& p : disc.params().params()) {
      if (!p.spectral) continue;
      CHECK(top_singular_value(disc.params().weight(p.name)) <= 1.0 + 1e-6);
    }
  }

  TEST_CASE("adam first step moves by lr in the gradient sign") {
    Tensor<double> p({3}, std::vector<double>{1.0, -2.0, 0.5});
    p.set_requires_grad(true);
    {
      Tape<double> tape;
      TapeScope<double> scope(tape);
      const Tensor<double> loss = sum(mul(p, Tensor<double>({3}, std::vector<double>{2.0, -3.0, 0.0})));
      backward(tape, loss);
    }
    AdamState<double> st;
    std::vector<Tensor<double>> params{p};
    adam_step(std::span<Tensor<double>>(params), st, AdamConfig{0.01, 0.0, 0.999, 1e-8});
    CHECK(p[0] == doctest::Approx(1.0 - 0.01).epsilon(1e-9));
    CHECK(p[1] == doctest::Approx(-2.0 + 0.01).epsilon(1e-9));
    CHECK(p[2] == 0.5);
    CHECK(st.step == 1);
  }

  TEST_CASE("feature extractor is fixed") {
    const FeatureExtractor<double> a, b;
    const auto x = oracle::random_tensor<double>({1, 3, 8, 8}, 15);
    const auto fa = a.forward(x), fb = b.forward(x);
    REQUIRE(fa.size() == 3);
    for (std::size_t k = 0; k < 3; ++k) CHECK(bit_equal(fa[k], fb[k]));
    CHECK(fa[2].dim(2) == 2);
  }
}
