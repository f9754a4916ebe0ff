#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "layoutsynth/layout.hpp"

namespace layoutsynth {

// Malformed layout document. field() is a JSON path such as "boxes[2].label";
// line() is 1-based and 0 when the error is not tied to a text position.
class LayoutParseError : public std::runtime_error {
 public:
  LayoutParseError(std::string field, std::size_t line, const std::string& what)
      : std::runtime_error(what), field_(std::move(field)), line_(line) {}
  const std::string& field() const { return field_; }
  std::size_t line() const { return line_; }

 private:
  std::string field_;
  std::size_t line_;
};

struct StyleSeeds {
  std::uint64_t seed = 0;
  // One seed per instance including the background at index 0; empty means
  // derive from `seed`.
  std::vector<std::uint64_t> per_object_seeds;
  bool operator==(const StyleSeeds&) const = default;
};

struct LayoutDocument {
  Layout layout;  // foreground boxes only
  CategorySet categories;
  std::optional<StyleSeeds> style;
};

// Parses the UTF-8 JSON layout format:
//   {"lattice":[H,W], "categories":"<set>", "boxes":[{"label":"circle",
//    "box":[x0,y0,x1,y1], "confidence":p?}...],
//    "style":{"seed":u64, "per_object_seeds":[u64...]}?}
// Unknown fields, unknown category names and (unless check_invariants is
// false) invariant violations are reported as LayoutParseError.
LayoutDocument parse_layout(std::string_view text, bool check_invariants = true);

std::string serialize_layout(const LayoutDocument& doc);

// Reads/writes a layout document file.
LayoutDocument load_layout_file(const std::string& path);
void save_layout_file(const std::string& path, const LayoutDocument& doc);

// The seeds actually used for synthesis: explicit ones when present,
// otherwise derived from the image seed.
StyleSeeds effective_seeds(const Layout& with_bg, const StyleSeeds& requested);

}  // namespace layoutsynth
