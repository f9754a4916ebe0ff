#include "layoutsynth/layout_io.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"
#include "layoutsynth/rng.hpp"

namespace layoutsynth {
namespace {

using nlohmann::json;

[[noreturn]] void fail(const std::string& field, const std::string& msg) {
  throw LayoutParseError(field, 0, field + ": " + msg);
}

void reject_unknown(const json& obj, const std::set<std::string>& allowed,
                    const std::string& where) {
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    if (!allowed.count(it.key())) {
      fail(where.empty() ? it.key() : where + "." + it.key(), "unknown field");
    }
  }
}

std::uint64_t read_u64(const json& v, const std::string& field) {
  if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<std::int64_t>() >= 0)) {
    fail(field, "expected an unsigned integer");
  }
  return v.get<std::uint64_t>();
}

}  // namespace

LayoutDocument parse_layout(std::string_view text, bool check_invariants) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    const std::size_t pos = std::min<std::size_t>(e.byte, text.size());
    const std::size_t line =
        1 + static_cast<std::size_t>(std::count(text.begin(), text.begin() + pos, '\n'));
    throw LayoutParseError("", line, "line " + std::to_string(line) + ": " + e.what());
  }
  if (!doc.is_object()) fail("$", "expected a JSON object");
  reject_unknown(doc, {"lattice", "categories", "boxes", "style"}, "");

  LayoutDocument out;
  if (!doc.contains("lattice")) fail("lattice", "missing");
  const json& lattice = doc["lattice"];
  if (!lattice.is_array() || lattice.size() != 2 || !lattice[0].is_number_unsigned() ||
      !lattice[1].is_number_unsigned()) {
    fail("lattice", "expected [H, W] positive integers");
  }
  out.layout.height = lattice[0].get<std::size_t>();
  out.layout.width = lattice[1].get<std::size_t>();

  if (!doc.contains("categories") || !doc["categories"].is_string()) {
    fail("categories", "expected a category set name");
  }
  try {
    out.categories = builtin_category_set(doc["categories"].get<std::string>());
  } catch (const std::invalid_argument& e) {
    fail("categories", e.what());
  }

  if (!doc.contains("boxes") || !doc["boxes"].is_array()) {
    fail("boxes", "expected an array");
  }
  const json& boxes = doc["boxes"];
  for (std::size_t i = 0; i < boxes.size(); ++i) {
    const std::string where = "boxes[" + std::to_string(i) + "]";
    const json& b = boxes[i];
    if (!b.is_object()) fail(where, "expected an object");
    reject_unknown(b, {"label", "box", "confidence"}, where);
    if (!b.contains("label") || !b["label"].is_string()) {
      fail(where + ".label", "expected a category name");
    }
    const auto name = b["label"].get<std::string>();
    const auto label = out.categories.index_of(name);
    if (!label) fail(where + ".label", "unknown category \"" + name + "\"");
    if (!b.contains("box") || !b["box"].is_array() || b["box"].size() != 4 ||
        !std::all_of(b["box"].begin(), b["box"].end(),
                     [](const json& v) { return v.is_number(); })) {
      fail(where + ".box", "expected [x0, y0, x1, y1]");
    }
    LabeledBox lb;
    lb.label = *label;
    lb.box = Box{b["box"][0].get<double>(), b["box"][1].get<double>(),
                 b["box"][2].get<double>(), b["box"][3].get<double>()};
    if (b.contains("confidence")) {
      if (!b["confidence"].is_number()) fail(where + ".confidence", "expected a number");
      lb.confidence = b["confidence"].get<double>();
    }
    out.layout.boxes.push_back(lb);
  }

  if (doc.contains("style")) {
    const json& s = doc["style"];
    if (!s.is_object()) fail("style", "expected an object");
    reject_unknown(s, {"seed", "per_object_seeds"}, "style");
    StyleSeeds seeds;
    if (!s.contains("seed")) fail("style.seed", "missing");
    seeds.seed = read_u64(s["seed"], "style.seed");
    if (s.contains("per_object_seeds")) {
      const json& p = s["per_object_seeds"];
      if (!p.is_array()) fail("style.per_object_seeds", "expected an array");
      for (std::size_t i = 0; i < p.size(); ++i) {
        seeds.per_object_seeds.push_back(
            read_u64(p[i], "style.per_object_seeds[" + std::to_string(i) + "]"));
      }
      if (seeds.per_object_seeds.size() != out.layout.boxes.size() + 1) {
        fail("style.per_object_seeds",
             "expected " + std::to_string(out.layout.boxes.size() + 1) +
                 " seeds (background first)");
      }
    }
    out.style = seeds;
  }

  const auto violations = check_invariants
                              ? validate(out.layout, out.categories.size())
                              : std::vector<Violation>{};
  if (!violations.empty()) {
    const auto& v = violations.front();
    const std::string field = v.box_index < out.layout.boxes.size()
                                  ? "boxes[" + std::to_string(v.box_index) + "]"
                                  : std::string("$");
    fail(field, v.message);
  }
  return out;
}

std::string serialize_layout(const LayoutDocument& doc) {
  json out;
  out["lattice"] = {doc.layout.height, doc.layout.width};
  out["categories"] = doc.categories.name;
  json boxes = json::array();
  const std::size_t first = doc.layout.includes_background ? 1 : 0;
  for (std::size_t i = first; i < doc.layout.boxes.size(); ++i) {
    const auto& b = doc.layout.boxes[i];
    json jb;
    jb["label"] = doc.categories.names.at(b.label);
    jb["box"] = {b.box.x0, b.box.y0, b.box.x1, b.box.y1};
    if (b.confidence) jb["confidence"] = *b.confidence;
    boxes.push_back(std::move(jb));
  }
  out["boxes"] = std::move(boxes);
  if (doc.style) {
    json s;
    s["seed"] = doc.style->seed;
    if (!doc.style->per_object_seeds.empty()) {
      s["per_object_seeds"] = doc.style->per_object_seeds;
    }
    out["style"] = std::move(s);
  }
  return out.dump(2) + "\n";
}

LayoutDocument load_layout_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LayoutParseError("", 0, "cannot open layout file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_layout(ss.str());
}

void save_layout_file(const std::string& path, const LayoutDocument& doc) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write layout file " + path);
  out << serialize_layout(doc);
}

StyleSeeds effective_seeds(const Layout& with_bg, const StyleSeeds& requested) {
  StyleSeeds out = requested;
  if (out.per_object_seeds.empty()) {
    for (std::size_t i = 0; i < with_bg.instance_count(); ++i) {
      out.per_object_seeds.push_back(split_seed(requested.seed, i + 1));
    }
  }
  return out;
}

}  // namespace layoutsynth
