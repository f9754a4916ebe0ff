#include "layoutsynth/layout.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <stdexcept>

#include "layoutsynth/rng.hpp"
#include "layoutsynth/tensor.hpp"

namespace layoutsynth {

std::optional<std::size_t> CategorySet::index_of(std::string_view category) const {
  for (std::size_t i = 0; i < names.size(); ++i)
    if (names[i] == category) return i;
  return std::nullopt;
}

CategorySet make_category_set(std::string name, std::vector<std::string> names) {
  if (names.empty() || names.front() != "background") {
    throw std::invalid_argument("category set must start with \"background\"");
  }
  std::set<std::string> seen;
  for (const auto& n : names) {
    if (!seen.insert(n).second) {
      throw std::invalid_argument("duplicate category name \"" + n + "\"");
    }
  }
  return CategorySet{std::move(name), std::move(names)};
}

const CategorySet& builtin_category_set(std::string_view name) {
  static const CategorySet shapes = make_category_set(
      "shapes", {"background", "circle", "square", "triangle", "diamond"});
  if (name == shapes.name) return shapes;
  throw std::invalid_argument("unknown category set \"" + std::string(name) + "\"");
}

std::vector<Violation> validate(const Layout& layout, std::size_t num_categories,
                                std::size_t max_objects) {
  constexpr auto kLayoutLevel = std::numeric_limits<std::size_t>::max();
  std::vector<Violation> out;
  if (layout.height == 0 || layout.width == 0) {
    out.push_back({kLayoutLevel, "lattice must be at least 1x1"});
  }
  if (layout.foreground_count() > max_objects) {
    out.push_back({kLayoutLevel, "too many boxes: " +
                                     std::to_string(layout.foreground_count()) +
                                     " > " + std::to_string(max_objects)});
  }
  for (std::size_t i = 0; i < layout.boxes.size(); ++i) {
    const auto& b = layout.boxes[i];
    const bool is_background = layout.includes_background && i == 0;
    const double coords[] = {b.box.x0, b.box.y0, b.box.x1, b.box.y1};
    if (!std::all_of(std::begin(coords), std::end(coords),
                     [](double v) { return std::isfinite(v); })) {
      out.push_back({i, "non-finite coordinate"});
      continue;
    }
    if (!(b.box.x0 < b.box.x1) || !(b.box.y0 < b.box.y1)) {
      out.push_back({i, "empty box"});
    }
    if (std::any_of(std::begin(coords), std::end(coords),
                    [](double v) { return v < 0.0 || v > 1.0; })) {
      out.push_back({i, "coordinates outside [0,1]"});
    }
    if (b.label >= num_categories) {
      out.push_back({i, "label out of range"});
    } else if (!is_background && b.label == kBackgroundLabel) {
      out.push_back({i, "background label on a foreground box"});
    }
    if (is_background && (b.label != kBackgroundLabel || b.box != Box{})) {
      out.push_back({i, "background instance must cover the lattice"});
    }
    if (b.confidence && !(*b.confidence >= 0.0 && *b.confidence <= 1.0)) {
      out.push_back({i, "confidence outside [0,1]"});
    }
  }
  return out;
}

Layout with_background(const Layout& layout) {
  if (layout.includes_background) {
    throw ContractError("with_background: background instance already present");
  }
  Layout out = layout;
  out.boxes.insert(out.boxes.begin(), LabeledBox{kBackgroundLabel, Box{}, {}});
  out.includes_background = true;
  return out;
}

namespace {

std::pair<std::size_t, std::size_t> edge_pixels(double lo, double hi,
                                                std::size_t n) {
  const auto to_line = [n](double v) {
    const double r = std::round(v * static_cast<double>(n));
    return static_cast<std::size_t>(std::clamp(r, 0.0, static_cast<double>(n)));
  };
  std::size_t a = to_line(lo), b = to_line(hi);
  if (b <= a) {
    if (a >= n) a = n - 1;
    b = a + 1;
  }
  return {a, b};
}

}  // namespace

PixelRect box_to_pixels(const Box& box, std::size_t height, std::size_t width) {
  if (height == 0 || width == 0) {
    throw ContractError("box_to_pixels needs a non-empty lattice");
  }
  const auto [r0, r1] = edge_pixels(box.y0, box.y1, height);
  const auto [c0, c1] = edge_pixels(box.x0, box.x1, width);
  return PixelRect{r0, c0, r1, c1};
}

std::vector<std::int32_t> occupancy_map(const Layout& layout, std::size_t height,
                                        std::size_t width) {
  std::vector<std::int32_t> occ(height * width, 0);
  for (const auto& b : layout.boxes) {
    const PixelRect r = box_to_pixels(b.box, height, width);
    for (std::size_t y = r.r0; y < r.r1; ++y)
      for (std::size_t x = r.c0; x < r.c1; ++x) ++occ[y * width + x];
  }
  return occ;
}

namespace {

void draw_row(std::uint64_t seed, std::size_t dim, double* out) {
  Prng rng(seed);
  for (std::size_t k = 0; k < dim; ++k) out[k] = rng.normal();
}

}  // namespace

StyleCodes sample_styles(const Layout& layout, std::size_t d_img,
                         std::size_t d_obj, std::uint64_t seed,
                         const std::vector<std::uint64_t>& object_seeds) {
  if (!layout.includes_background) {
    throw ContractError("sample_styles expects a layout with background");
  }
  const std::size_t m = layout.instance_count();
  if (!object_seeds.empty() && object_seeds.size() != m) {
    throw ContractError("sample_styles: " + std::to_string(object_seeds.size()) +
                        " object seeds for " + std::to_string(m) + " instances");
  }
  StyleCodes s;
  s.d_img = d_img;
  s.d_obj = d_obj;
  s.seed = seed;
  s.z_img.resize(d_img);
  draw_row(split_seed(seed, 0), d_img, s.z_img.data());
  s.z_obj.resize(m * d_obj);
  s.object_seeds.resize(m);
  for (std::size_t i = 0; i < m; ++i) {
    s.object_seeds[i] = object_seeds.empty() ? split_seed(seed, i + 1) : object_seeds[i];
    draw_row(s.object_seeds[i], d_obj, s.z_obj.data() + i * d_obj);
  }
  return s;
}

void resample_instance(StyleCodes& styles, std::size_t instance,
                       std::uint64_t new_seed) {
  if (instance >= styles.instances()) {
    throw ContractError("resample_instance: instance index out of range");
  }
  styles.object_seeds[instance] = new_seed;
  draw_row(new_seed, styles.d_obj, styles.z_obj.data() + instance * styles.d_obj);
}

void resample_image(StyleCodes& styles, std::uint64_t new_seed) {
  styles.seed = new_seed;
  draw_row(split_seed(new_seed, 0), styles.d_img, styles.z_img.data());
}

}  // namespace layoutsynth
