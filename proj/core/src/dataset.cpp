#include "layoutsynth/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>

#include "json.hpp"
#include "layoutsynth/layout_io.hpp"
#include "layoutsynth/rng.hpp"

namespace layoutsynth {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

constexpr int kPlacementAttempts = 200;

std::string padded(std::size_t i) {
  std::ostringstream s;
  s.width(4);
  s.fill('0');
  s << i;
  return s.str();
}

struct Placed {
  ShapeGeometry geometry;
  std::size_t label;
  std::array<double, 3> color;
  PixelRect rect;
};

bool overlaps(const PixelRect& a, const PixelRect& b) {
  return a.r0 < b.r1 && b.r0 < a.r1 && a.c0 < b.c1 && b.c0 < a.c1;
}

PixelRect tight_rect(const std::vector<std::uint8_t>& mask, std::size_t r) {
  PixelRect rect{r, r, 0, 0};
  for (std::size_t y = 0; y < r; ++y)
    for (std::size_t x = 0; x < r; ++x) {
      if (!mask[y * r + x]) continue;
      rect.r0 = std::min(rect.r0, y);
      rect.c0 = std::min(rect.c0, x);
      rect.r1 = std::max(rect.r1, y + 1);
      rect.c1 = std::max(rect.c1, x + 1);
    }
  return rect;
}

Sample render_sample(const DatasetConfig& cfg, std::size_t id, std::uint64_t seed) {
  Prng rng(seed);
  const std::size_t r = cfg.resolution;
  const double rd = static_cast<double>(r);
  const auto& specs = shape_specs();
  const auto m = static_cast<std::size_t>(rng.uniform_int(
      static_cast<std::int64_t>(cfg.min_objects), static_cast<std::int64_t>(cfg.max_objects)));

  std::vector<Placed> placed;
  for (std::size_t k = 0; k < m; ++k) {
    const auto label =
        static_cast<std::size_t>(rng.uniform_int(1, static_cast<std::int64_t>(specs.size())));
    const ShapeSpec& spec = specs[label - 1];
    std::array<double, 3> color{};
    for (std::size_t c = 0; c < 3; ++c) {
      color[c] = std::clamp(spec.color[c] + rng.uniform(-cfg.color_jitter, cfg.color_jitter),
                            0.0, 1.0);
    }
    bool ok = false;
    for (int attempt = 0; attempt < kPlacementAttempts && !ok; ++attempt) {
      ShapeGeometry g;
      g.kind = spec.kind;
      const double side = rng.uniform(cfg.min_size, cfg.max_size) * rd;
      const double aspect = g.kind == ShapeKind::kCircle ? 1.0 : rng.uniform(0.8, 1.25);
      g.hx = 0.5 * side * std::sqrt(aspect);
      g.hy = 0.5 * side / std::sqrt(aspect);
      g.cx = rng.uniform(g.hx, rd - g.hx);
      g.cy = rng.uniform(g.hy, rd - g.hy);
      const auto mask = rasterize(g, r);
      const PixelRect rect = tight_rect(mask, r);
      if (rect.r1 <= rect.r0 || rect.c1 <= rect.c0) continue;
      if (!cfg.allow_overlap &&
          std::any_of(placed.begin(), placed.end(),
                      [&](const Placed& p) { return overlaps(p.rect, rect); })) {
        continue;
      }
      placed.push_back({g, label, color, rect});
      ok = true;
    }
    if (!ok) break;  // lattice too crowded for another disjoint shape
  }

  Sample s;
  s.id = id;
  s.image = Image8{r, r, 3, std::vector<std::uint8_t>(r * r * 3)};
  s.layout.height = r;
  s.layout.width = r;

  // Smooth background: linear blend between two nearby grays along a random
  // direction.
  std::array<double, 3> c0{}, c1{};
  const double base = 0.45 + rng.uniform(-0.05, 0.05);
  for (std::size_t c = 0; c < 3; ++c) {
    c0[c] = base + rng.uniform(-0.03, 0.03);
    c1[c] = c0[c] + rng.uniform(-0.08, 0.08);
  }
  const double theta = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const double ux = std::cos(theta), uy = std::sin(theta);
  std::vector<double> rgb(r * r * 3);
  for (std::size_t y = 0; y < r; ++y)
    for (std::size_t x = 0; x < r; ++x) {
      const double t = std::clamp(
          0.5 + ((x + 0.5 - rd / 2) * ux + (y + 0.5 - rd / 2) * uy) / rd, 0.0, 1.0);
      for (std::size_t c = 0; c < 3; ++c) {
        rgb[(y * r + x) * 3 + c] = (1 - t) * c0[c] + t * c1[c];
      }
    }

  for (const Placed& p : placed) {
    const auto mask = rasterize(p.geometry, r);
    for (std::size_t q = 0; q < r * r; ++q) {
      if (!mask[q]) continue;
      for (std::size_t c = 0; c < 3; ++c) rgb[q * 3 + c] = p.color[c];
    }
    Image8 gt{r, r, 1, std::vector<std::uint8_t>(r * r)};
    for (std::size_t q = 0; q < r * r; ++q) gt.pixels[q] = mask[q] ? 255 : 0;
    s.gt_masks.push_back(std::move(gt));
    LabeledBox lb;
    lb.label = p.label;
    lb.box = Box{p.rect.c0 / rd, p.rect.r0 / rd, p.rect.c1 / rd, p.rect.r1 / rd};
    s.layout.boxes.push_back(lb);
  }
  for (std::size_t q = 0; q < rgb.size(); ++q) {
    s.image.pixels[q] = static_cast<std::uint8_t>(std::round(std::clamp(rgb[q], 0.0, 1.0) * 255));
  }
  return s;
}

json read_json(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

}  // namespace

const std::vector<ShapeSpec>& shape_specs() {
  static const std::vector<ShapeSpec> specs = {
      {"circle", ShapeKind::kCircle, {0.85, 0.25, 0.2}},
      {"square", ShapeKind::kSquare, {0.2, 0.7, 0.3}},
      {"triangle", ShapeKind::kTriangle, {0.25, 0.35, 0.85}},
      {"diamond", ShapeKind::kDiamond, {0.9, 0.8, 0.2}},
  };
  return specs;
}

void validate(const DatasetConfig& c) {
  if (c.resolution < 8) throw ConfigError("data.resolution must be >= 8");
  if (c.num_samples == 0) throw ConfigError("data.num_samples must be >= 1");
  if (c.min_objects > c.max_objects) {
    throw ConfigError("data.min_objects must not exceed data.max_objects");
  }
  if (c.max_objects > kDefaultMaxObjects) {
    throw ConfigError("data.max_objects must be <= " + std::to_string(kDefaultMaxObjects));
  }
  if (!(c.min_size > 0 && c.min_size <= c.max_size && c.max_size <= 1)) {
    throw ConfigError("data sizes must satisfy 0 < min_size <= max_size <= 1");
  }
  if (!(c.color_jitter >= 0 && c.color_jitter <= 0.5)) {
    throw ConfigError("data.color_jitter must be in [0, 0.5]");
  }
}

bool ShapeGeometry::contains(double x, double y) const {
  const double dx = x - cx, dy = y - cy;
  switch (kind) {
    case ShapeKind::kCircle:
      return (dx * dx) / (hx * hx) + (dy * dy) / (hy * hy) <= 1.0;
    case ShapeKind::kSquare:
      return std::abs(dx) <= hx && std::abs(dy) <= hy;
    case ShapeKind::kTriangle: {
      // Apex at the top center, base along the bottom edge.
      if (dy < -hy || dy > hy) return false;
      const double half_width = hx * (dy + hy) / (2 * hy);
      return std::abs(dx) <= half_width;
    }
    case ShapeKind::kDiamond:
      return std::abs(dx) / hx + std::abs(dy) / hy <= 1.0;
  }
  return false;
}

std::vector<std::uint8_t> rasterize(const ShapeGeometry& shape, std::size_t resolution) {
  std::vector<std::uint8_t> mask(resolution * resolution, 0);
  for (std::size_t y = 0; y < resolution; ++y)
    for (std::size_t x = 0; x < resolution; ++x)
      mask[y * resolution + x] = shape.contains(x + 0.5, y + 0.5) ? 1 : 0;
  return mask;
}

Dataset make_dataset(const DatasetConfig& config, std::uint64_t seed) {
  validate(config);
  Dataset d;
  d.categories = builtin_category_set("shapes");
  d.resolution = config.resolution;
  d.seed = seed;
  for (std::size_t i = 0; i < config.num_samples; ++i) {
    d.samples.push_back(render_sample(config, i, split_seed(seed, i)));
  }
  return d;
}

void save_dataset(const Dataset& dataset, const std::string& dir) {
  const fs::path root(dir);
  std::error_code ec;
  for (const char* sub : {"images", "masks", "layouts"}) {
    fs::create_directories(root / sub, ec);
    if (ec) throw DataError("cannot create " + (root / sub).string() + ": " + ec.message());
  }
  json index;
  index["format"] = "layoutsynth-shapes";
  index["version"] = 1;
  index["resolution"] = dataset.resolution;
  index["seed"] = dataset.seed;
  index["categories"] = dataset.categories.name;
  index["category_names"] = dataset.categories.names;
  json samples = json::array();
  for (const Sample& s : dataset.samples) {
    const std::string stem = padded(s.id);
    json js;
    js["id"] = s.id;
    js["image"] = "images/" + stem + ".png";
    js["layout"] = "layouts/" + stem + ".json";
    js["split"] = s.split;
    json masks = json::array();
    for (std::size_t i = 0; i < s.gt_masks.size(); ++i) {
      const std::string name = "masks/" + stem + "_" + std::to_string(i) + ".png";
      write_png((root / name).string(), s.gt_masks[i]);
      masks.push_back(name);
    }
    js["masks"] = std::move(masks);
    write_png((root / js["image"].get<std::string>()).string(), s.image);
    save_layout_file((root / js["layout"].get<std::string>()).string(),
                     LayoutDocument{s.layout, dataset.categories, std::nullopt});
    samples.push_back(std::move(js));
  }
  index["samples"] = std::move(samples);
  std::ofstream out(root / "index.json", std::ios::binary);
  if (!out) throw DataError("cannot write " + (root / "index.json").string());
  out << index.dump(2) << "\n";
}

Dataset load_dataset(const std::string& dir) {
  const fs::path root(dir);
  const json index = read_json(root / "index.json");
  Dataset d;
  try {
    if (index.at("format").get<std::string>() != "layoutsynth-shapes") {
      throw DataError("unsupported dataset format in " + (root / "index.json").string());
    }
    d.resolution = index.at("resolution").get<std::size_t>();
    d.seed = index.at("seed").get<std::uint64_t>();
    d.categories = builtin_category_set(index.at("categories").get<std::string>());
    for (const json& js : index.at("samples")) {
      Sample s;
      s.id = js.at("id").get<std::size_t>();
      s.split = js.value("split", std::string("train"));
      s.image = read_png((root / js.at("image").get<std::string>()).string());
      const auto doc = load_layout_file((root / js.at("layout").get<std::string>()).string());
      s.layout = doc.layout;
      for (const json& jm : js.at("masks")) {
        s.gt_masks.push_back(read_png((root / jm.get<std::string>()).string()));
      }
      if (s.image.width != d.resolution || s.image.height != d.resolution ||
          s.image.channels != 3) {
        throw DataError("sample " + std::to_string(s.id) + ": image is not " +
                        std::to_string(d.resolution) + "x" + std::to_string(d.resolution) +
                        " RGB");
      }
      if (s.gt_masks.size() != s.layout.boxes.size()) {
        throw DataError("sample " + std::to_string(s.id) + ": mask count differs from box count");
      }
      d.samples.push_back(std::move(s));
    }
  } catch (const json::exception& e) {
    throw DataError((root / "index.json").string() + ": " + e.what());
  } catch (const ImageIoError& e) {
    throw DataError(e.what());
  } catch (const LayoutParseError& e) {
    throw DataError(e.what());
  } catch (const std::invalid_argument& e) {
    throw DataError(e.what());
  }
  return d;
}

template <std::floating_point T>
Tensor<T> sample_image(const Sample& sample) {
  return rgb_to_tensor<T>(sample.image);
}

Layout simulate_detections(const Layout& layout, const DetectionNoise& noise,
                           std::uint64_t seed) {
  Prng rng(seed);
  Layout out = layout;
  out.boxes.clear();
  for (const LabeledBox& b : layout.boxes) {
    const bool drop = rng.uniform() < noise.drop_prob;
    double c[4] = {b.box.x0, b.box.y0, b.box.x1, b.box.y1};
    for (double& v : c) v = std::clamp(v + noise.jitter_sigma * rng.normal(), 0.0, 1.0);
    // An axis that collapses under jitter keeps its original extent.
    if (!(c[0] < c[2])) {
      c[0] = b.box.x0;
      c[2] = b.box.x1;
    }
    if (!(c[1] < c[3])) {
      c[1] = b.box.y0;
      c[3] = b.box.y1;
    }
    if (drop) continue;
    const double orig[4] = {b.box.x0, b.box.y0, b.box.x1, b.box.y1};
    double shift = 0;
    for (int k = 0; k < 4; ++k) shift = std::max(shift, std::abs(c[k] - orig[k]));
    LabeledBox d = b;
    d.box = Box{c[0], c[1], c[2], c[3]};
    d.confidence = std::clamp(1.0 - noise.kappa * shift, noise.tau, 1.0);
    out.boxes.push_back(d);
  }
  return out;
}

DatasetSplit split_dataset(std::size_t n, double supervised_fraction, std::uint64_t seed) {
  if (!(supervised_fraction >= 0.0 && supervised_fraction <= 1.0)) {
    throw ContractError("split_dataset: fraction must be in [0, 1]");
  }
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Prng rng(seed);
  for (std::size_t i = n; i > 1; --i) {
    const auto j = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i - 1)));
    std::swap(order[i - 1], order[j]);
  }
  const auto k = static_cast<std::size_t>(std::llround(supervised_fraction * static_cast<double>(n)));
  DatasetSplit s;
  s.supervised.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k));
  s.unlabeled.assign(order.begin() + static_cast<std::ptrdiff_t>(k), order.end());
  std::sort(s.supervised.begin(), s.supervised.end());
  std::sort(s.unlabeled.begin(), s.unlabeled.end());
  return s;
}

template Tensor<float> sample_image<float>(const Sample&);
template Tensor<double> sample_image<double>(const Sample&);

}  // namespace layoutsynth
