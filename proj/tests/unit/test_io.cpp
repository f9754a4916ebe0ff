#include <cstring>
#include <filesystem>

#include "doctest.h"
#include "layoutsynth/checkpoint.hpp"
#include "layoutsynth/config.hpp"
#include "layoutsynth/image_io.hpp"
#include "layoutsynth/ops.hpp"

using namespace layoutsynth;
namespace fs = std::filesystem;

namespace {

CheckpointData sample_checkpoint() {
  CheckpointData d;
  d.tensors.push_back({"gen.fc.weight", {2, 3}, {1.5f, -2.0f, 0.0f, 3.25f, 1e-7f, -0.0f}});
  d.tensors.push_back({"gen.fc.bias", {3}, {0.1f, 0.2f, 0.3f}});
  d.metadata = R"({"step":7})";
  return d;
}

}  // namespace

TEST_SUITE("io") {
  TEST_CASE("checkpoint encode and decode round trip") {
    const CheckpointData d = sample_checkpoint();
    const auto bytes = encode_checkpoint(d);
    CHECK(std::memcmp(bytes.data(), "ISLA", 4) == 0);
    CHECK(bytes[4] == kCheckpointVersion);
    const CheckpointData back = decode_checkpoint(bytes);
    CHECK(back == d);
    CHECK(encode_checkpoint(back) == bytes);
  }

  TEST_CASE("checkpoint errors are typed") {
    auto bytes = encode_checkpoint(sample_checkpoint());
    auto bad_magic = bytes;
    bad_magic[0] = 'X';
    CHECK_THROWS_AS(decode_checkpoint(bad_magic), CheckpointFormatError);
    auto bad_version = bytes;
    bad_version[4] = 99;
    CHECK_THROWS_AS(decode_checkpoint(bad_version), CheckpointVersionError);
    for (const std::size_t cut : {std::size_t{2}, std::size_t{10}, bytes.size() / 2, bytes.size() - 1}) {
      std::vector<std::uint8_t> shorter(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(cut));
      CHECK_THROWS_AS(decode_checkpoint(shorter), CheckpointError);
    }
    std::vector<std::uint8_t> half(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(bytes.size() - 3));
    CHECK_THROWS_AS(decode_checkpoint(half), CheckpointTruncatedError);
    CHECK_THROWS_AS(load_checkpoint_file("/nonexistent/ckpt.isla"), CheckpointError);
  }

  TEST_CASE("checkpoint file round trip") {
    const fs::path p = fs::temp_directory_path() / "layoutsynth_test_ckpt.isla";
    save_checkpoint_file(p.string(), sample_checkpoint());
    CHECK(load_checkpoint_file(p.string()) == sample_checkpoint());
    fs::remove(p);
  }

  TEST_CASE("png round trip") {
    Image8 rgb{5, 3, 3, {}};
    for (std::size_t k = 0; k < 45; ++k) rgb.pixels.push_back(static_cast<std::uint8_t>(k * 5));
    CHECK(decode_png(encode_png(rgb)) == rgb);
    Image8 gray{4, 2, 1, {0, 255, 1, 2, 3, 4, 128, 9}};
    CHECK(decode_png(encode_png(gray)) == gray);
    CHECK_THROWS_AS(decode_png({1, 2, 3}), ImageIoError);
  }

  TEST_CASE("byte mapping") {
    CHECK(to_byte(-1.0) == 0);
    CHECK(to_byte(1.0) == 255);
    CHECK(to_byte(5.0) == 255);
    CHECK(to_byte(-5.0) == 0);
    for (int b = 0; b < 256; ++b) CHECK(to_byte(from_byte(static_cast<std::uint8_t>(b))) == b);
    Image8 img{2, 2, 3, {0, 10, 20, 30, 40, 50, 60, 70, 80, 90, 100, 255}};
    const auto t = rgb_to_tensor<double>(img);
    CHECK(t.shape() == Shape{3, 2, 2});
    CHECK(tensor_to_rgb(reshape(t, {1, 3, 2, 2}), 0) == img);
  }

  TEST_CASE("run config round trip and strictness") {
    RunConfig c;
    c.seed = 99;
    c.model.mask_size = 16;
    c.loss.lambda = 0.25;
    c.semi.noise.jitter_sigma = 0.02;
    const RunConfig back = parse_run_config(to_json(c));
    CHECK(to_json(back) == to_json(c));
    CHECK(back.model == c.model);
    CHECK(back.loss == c.loss);
    CHECK(parse_run_config("{}").model == NetworkConfig{});
    CHECK_THROWS_AS(parse_run_config(R"({"model":{"resolutoin":32}})"), ConfigError);
    CHECK_THROWS_AS(parse_run_config(R"({"bogus":1})"), ConfigError);
    CHECK_THROWS_AS(parse_run_config(R"({"model":{"resolution":"big"}})"), ConfigError);
    CHECK_THROWS_AS(parse_run_config(R"({"model":{"resolution":48}})"), ConfigError);
    CHECK_THROWS_AS(parse_run_config("{"), ConfigError);
    try {
      parse_run_config(R"({"model":{"resolutoin":32}})");
    } catch (const ConfigError& e) {
      CHECK(std::string(e.what()).find("model.resolutoin") != std::string::npos);
    }
  }
}
