#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace layoutsynth {

// Ordered category names. Index 0 is always the background class.
struct CategorySet {
  std::string name;
  std::vector<std::string> names;

  std::size_t size() const { return names.size(); }
  std::optional<std::size_t> index_of(std::string_view category) const;
};

inline constexpr std::size_t kBackgroundLabel = 0;

// Throws std::invalid_argument when names are empty, duplicated, or the first
// name is not "background".
CategorySet make_category_set(std::string name, std::vector<std::string> names);

// Built-in sets addressable from layout files by name ("shapes").
const CategorySet& builtin_category_set(std::string_view name);

// Normalized box on the unit square: 0 <= x0 < x1 <= 1, same for y.
struct Box {
  double x0 = 0, y0 = 0, x1 = 1, y1 = 1;
  bool operator==(const Box&) const = default;
};

struct LabeledBox {
  std::size_t label = 0;
  Box box;
  // Detection confidence; absent for annotated boxes.
  std::optional<double> confidence;
  bool operator==(const LabeledBox&) const = default;
};

inline constexpr std::size_t kDefaultMaxObjects = 8;

struct Layout {
  std::vector<LabeledBox> boxes;
  std::size_t height = 0;
  std::size_t width = 0;
  // Set by with_background(); boxes[0] is then the full-lattice background.
  bool includes_background = false;

  std::size_t instance_count() const { return boxes.size(); }
  std::size_t foreground_count() const {
    return boxes.size() - (includes_background ? 1 : 0);
  }
  bool operator==(const Layout&) const = default;
};

struct Violation {
  std::size_t box_index;  // SIZE_MAX for layout-level violations
  std::string message;
};

// Checks every invariant and reports all violations.
std::vector<Violation> validate(const Layout& layout, std::size_t num_categories,
                                std::size_t max_objects = kDefaultMaxObjects);

// Prepends the background instance covering the whole lattice. Throws
// ContractError if the layout already includes it.
Layout with_background(const Layout& layout);

// Half-open integer rect [r0, r1) x [c0, c1).
struct PixelRect {
  std::size_t r0 = 0, c0 = 0, r1 = 0, c1 = 0;
  std::size_t height() const { return r1 - r0; }
  std::size_t width() const { return c1 - c0; }
  bool contains(std::size_t r, std::size_t c) const {
    return r >= r0 && r < r1 && c >= c0 && c < c1;
  }
  bool operator==(const PixelRect&) const = default;
};

// Rounds each edge to the nearest lattice line, then enforces a minimum side
// of one pixel inside the lattice.
PixelRect box_to_pixels(const Box& box, std::size_t height, std::size_t width);

// Number of instance rects covering each pixel, row-major [H x W].
std::vector<std::int32_t> occupancy_map(const Layout& layout, std::size_t height,
                                        std::size_t width);

// Image and per-instance latent codes, stored in double precision and
// converted to the network scalar on use.
struct StyleCodes {
  std::size_t d_img = 0;
  std::size_t d_obj = 0;
  std::vector<double> z_img;               // [d_img]
  std::vector<double> z_obj;               // [instances x d_obj]
  std::uint64_t seed = 0;                  // image seed
  std::vector<std::uint64_t> object_seeds; // one per instance row

  std::size_t instances() const { return object_seeds.size(); }
  bool operator==(const StyleCodes&) const = default;
};

inline constexpr std::size_t kDefaultLatentDim = 128;

// Draws z_img from split_seed(seed, 0) and instance row i from
// split_seed(seed, i + 1), unless explicit per-object seeds are given.
StyleCodes sample_styles(const Layout& layout, std::size_t d_img,
                         std::size_t d_obj, std::uint64_t seed,
                         const std::vector<std::uint64_t>& object_seeds = {});

// Redraws instance row i from a new seed; every other row is untouched.
void resample_instance(StyleCodes& styles, std::size_t instance,
                       std::uint64_t new_seed);

// Redraws z_img from a new image seed, keeping every instance row.
void resample_image(StyleCodes& styles, std::uint64_t new_seed);

}  // namespace layoutsynth
