#include "layoutsynth/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "json.hpp"
#include "layoutsynth/ops.hpp"
#include "layoutsynth/rng.hpp"

namespace layoutsynth {
namespace {

using nlohmann::ordered_json;

Tensor<float> as_single(const Tensor<float>& x) {
  if (x.rank() == 3) return reshape(x, Shape{1, x.dim(0), x.dim(1), x.dim(2)});
  if (x.rank() == 4 && x.dim(0) == 1) return x;
  throw DimensionError("expected an image [3 x H x W] or [1 x 3 x H x W], got " +
                       to_string(x.shape()));
}

std::span<const float> plane(const Tensor<float>& stack, std::size_t k) {
  const std::size_t n = stack.dim(stack.rank() - 2) * stack.dim(stack.rank() - 1);
  return stack.data().subspan(k * n, n);
}

bool same_bits(std::span<const float> a, std::span<const float> b) {
  return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(float)) == 0;
}

std::vector<float> gray_plane(const Image8& image) {
  std::vector<float> out(image.pixels.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = image.pixels[i] / 255.0f;
  return out;
}

// Walks the dataset in consecutive batches, handing out layouts (with
// background) and per-sample styles.
template <typename Fn>
void for_each_batch(const Dataset& dataset, std::uint64_t seed, std::size_t d_img,
                    std::size_t d_obj, Fn&& fn) {
  for (std::size_t begin = 0; begin < dataset.samples.size(); begin += kEvalBatch) {
    const std::size_t end = std::min(begin + kEvalBatch, dataset.samples.size());
    std::vector<const Sample*> samples;
    std::vector<Layout> layouts;
    std::vector<StyleCodes> styles;
    for (std::size_t i = begin; i < end; ++i) {
      const Sample& s = dataset.samples[i];
      samples.push_back(&s);
      layouts.push_back(with_background(s.layout));
      styles.push_back(sample_styles(layouts.back(), d_img, d_obj, split_seed(seed, s.id)));
    }
    fn(std::span<const Sample* const>(samples), std::span<const Layout>(layouts),
       std::span<const StyleCodes>(styles));
  }
}

std::array<double, 2> mask_centroid(std::span<const float> mask, std::size_t r) {
  double sx = 0, sy = 0, total = 0;
  for (std::size_t y = 0; y < r; ++y) {
    for (std::size_t x = 0; x < r; ++x) {
      const double m = mask[y * r + x];
      sx += m * (x + 0.5);
      sy += m * (y + 0.5);
      total += m;
    }
  }
  if (total <= 0) return {0, 0};
  return {sx / total, sy / total};
}

std::array<double, 2> box_center(const Box& b, std::size_t r) {
  return {(b.x0 + b.x1) / 2 * static_cast<double>(r), (b.y0 + b.y1) / 2 * static_cast<double>(r)};
}

}  // namespace

ImageModel generator_image_model(const Generator<float>& gen, const GeneratorOptions& options) {
  return [&gen, options](std::span<const Layout> layouts, std::span<const StyleCodes> styles) {
    NoGradGuard guard;
    return gen.forward(layouts, styles, options).images;
  };
}

MaskModel generator_mask_model(const Generator<float>& gen, const GeneratorOptions& options) {
  return [&gen, options](std::span<const Sample* const>, std::span<const Layout> layouts,
                         std::span<const StyleCodes> styles) {
    NoGradGuard guard;
    return gen.forward(layouts, styles, options).masks;
  };
}

MaskModel oracle_mask_model() {
  return [](std::span<const Sample* const> samples, std::span<const Layout> layouts,
            std::span<const StyleCodes>) {
    std::vector<Tensor<float>> out;
    for (std::size_t n = 0; n < samples.size(); ++n) {
      const Sample& s = *samples[n];
      const std::size_t r = layouts[n].height;
      std::vector<float> data(r * r, 1.0f);
      for (const auto& m : s.gt_masks) {
        const auto g = gray_plane(m);
        data.insert(data.end(), g.begin(), g.end());
      }
      out.emplace_back(Shape{s.gt_masks.size() + 1, r, r}, std::move(data));
    }
    return out;
  };
}

MaskModel full_box_mask_model() {
  return [](std::span<const Sample* const>, std::span<const Layout> layouts,
            std::span<const StyleCodes>) {
    std::vector<Tensor<float>> out;
    for (const auto& layout : layouts) {
      const std::size_t h = layout.height, w = layout.width;
      Tensor<float> t(Shape{layout.boxes.size(), h, w});
      auto d = t.mutable_data();
      for (std::size_t k = 0; k < layout.boxes.size(); ++k) {
        const PixelRect rect = box_to_pixels(layout.boxes[k].box, h, w);
        for (std::size_t y = rect.r0; y < rect.r1; ++y) {
          for (std::size_t x = rect.c0; x < rect.c1; ++x) d[(k * h + y) * w + x] = 1.0f;
        }
      }
      out.push_back(std::move(t));
    }
    return out;
  };
}

double diversity_proxy(const Tensor<float>& a, const Tensor<float>& b,
                       const FeatureExtractor<float>& extractor) {
  const Tensor<float> xa = as_single(a), xb = as_single(b);
  if (xa.shape() != xb.shape()) {
    throw DimensionError("diversity_proxy inputs differ in shape: " + to_string(xa.shape()) +
                         " vs " + to_string(xb.shape()));
  }
  NoGradGuard guard;
  const auto fa = extractor.forward(xa);
  const auto fb = extractor.forward(xb);
  double total = 0;
  for (std::size_t s = 0; s < fa.size(); ++s) {
    const std::size_t c = fa[s].dim(1);
    const std::size_t hw = fa[s].dim(2) * fa[s].dim(3);
    const auto pa = fa[s].data(), pb = fb[s].data();
    double stage = 0;
    for (std::size_t p = 0; p < hw; ++p) {
      double na = 0, nb = 0;
      for (std::size_t k = 0; k < c; ++k) {
        na += static_cast<double>(pa[k * hw + p]) * pa[k * hw + p];
        nb += static_cast<double>(pb[k * hw + p]) * pb[k * hw + p];
      }
      na = std::sqrt(na) + 1e-10;
      nb = std::sqrt(nb) + 1e-10;
      double d = 0;
      for (std::size_t k = 0; k < c; ++k) {
        const double diff = pa[k * hw + p] / na - pb[k * hw + p] / nb;
        d += diff * diff;
      }
      stage += d;
    }
    total += stage / static_cast<double>(hw);
  }
  return total / static_cast<double>(fa.size());
}

DiversityResult diversity_score(const ImageModel& model, std::span<const Layout> layouts,
                                std::size_t k, std::uint64_t seed, std::size_t d_img,
                                std::size_t d_obj, const FeatureExtractor<float>& extractor) {
  if (k < 2) throw ContractError("diversity_score needs at least 2 styles per layout");
  if (layouts.empty()) throw ContractError("diversity_score needs at least one layout");
  DiversityResult out;
  for (std::size_t l = 0; l < layouts.size(); ++l) {
    const Layout layout =
        layouts[l].includes_background ? layouts[l] : with_background(layouts[l]);
    const std::vector<Layout> batch(k, layout);
    std::vector<StyleCodes> styles;
    for (std::size_t j = 0; j < k; ++j) {
      styles.push_back(
          sample_styles(layout, d_img, d_obj, split_seed(split_seed(seed, l), j)));
    }
    const Tensor<float> images = model(batch, styles);
    const std::size_t per = images.numel() / k;
    const Shape one{1, images.dim(1), images.dim(2), images.dim(3)};
    std::vector<Tensor<float>> singles;
    for (std::size_t j = 0; j < k; ++j) {
      const auto d = images.data().subspan(j * per, per);
      singles.emplace_back(one, std::vector<float>(d.begin(), d.end()));
    }
    double sum = 0;
    std::size_t pairs = 0;
    for (std::size_t a = 0; a < k; ++a) {
      for (std::size_t b = a + 1; b < k; ++b) {
        sum += diversity_proxy(singles[a], singles[b], extractor);
        ++pairs;
      }
    }
    out.per_layout.push_back(sum / static_cast<double>(pairs));
  }
  double mean = 0;
  for (const double v : out.per_layout) mean += v;
  mean /= static_cast<double>(out.per_layout.size());
  double var = 0;
  for (const double v : out.per_layout) var += (v - mean) * (v - mean);
  out.mean = mean;
  out.std = std::sqrt(var / static_cast<double>(out.per_layout.size()));
  return out;
}

double mask_iou(std::span<const float> a, std::span<const float> b, double threshold) {
  if (a.size() != b.size()) {
    throw DimensionError("mask_iou inputs differ in size: " + std::to_string(a.size()) +
                         " vs " + std::to_string(b.size()));
  }
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const bool x = a[i] >= threshold, y = b[i] >= threshold;
    inter += x && y;
    uni += x || y;
  }
  if (uni == 0) return 1.0;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

std::vector<float> crop_resize(std::span<const float> plane, std::size_t height,
                               std::size_t width, const PixelRect& rect, std::size_t size) {
  if (plane.size() != height * width) throw DimensionError("crop_resize plane size mismatch");
  if (rect.r1 > height || rect.c1 > width || rect.height() == 0 || rect.width() == 0) {
    throw ContractError("crop_resize rect outside the plane or empty");
  }
  Tensor<float> crop(Shape{rect.height(), rect.width()});
  auto d = crop.mutable_data();
  for (std::size_t y = 0; y < rect.height(); ++y) {
    for (std::size_t x = 0; x < rect.width(); ++x) {
      d[y * rect.width() + x] = plane[(rect.r0 + y) * width + rect.c0 + x];
    }
  }
  NoGradGuard guard;
  const auto out = bilinear_resize(crop, size, size);
  return std::vector<float>(out.data().begin(), out.data().end());
}

MeanIouReport mean_iou_report(const MaskModel& model, const Dataset& dataset,
                              std::uint64_t seed, std::size_t d_img, std::size_t d_obj) {
  const std::size_t r = dataset.resolution;
  const std::size_t categories = dataset.categories.size();
  std::vector<double> sums(categories, 0.0);
  std::vector<std::size_t> counts(categories, 0);
  MeanIouReport out;
  double total = 0;
  for_each_batch(dataset, seed, d_img, d_obj,
                 [&](std::span<const Sample* const> samples, std::span<const Layout> layouts,
                     std::span<const StyleCodes> styles) {
                   const auto masks = model(samples, layouts, styles);
                   if (masks.size() != samples.size()) {
                     throw DimensionError("mask model returned the wrong batch size");
                   }
                   for (std::size_t n = 0; n < samples.size(); ++n) {
                     const Sample& s = *samples[n];
                     if (masks[n].shape() != Shape{layouts[n].boxes.size(), r, r}) {
                       throw DimensionError("mask model returned masks of shape " +
                                            to_string(masks[n].shape()));
                     }
                     for (std::size_t k = 0; k < s.layout.boxes.size(); ++k) {
                       const auto& box = s.layout.boxes[k];
                       const PixelRect rect = box_to_pixels(box.box, r, r);
                       const auto gen =
                           crop_resize(plane(masks[n], k + 1), r, r, rect, kIouCropSize);
                       const auto gt = crop_resize(gray_plane(s.gt_masks.at(k)), r, r, rect,
                                                   kIouCropSize);
                       const double iou = mask_iou(gen, gt);
                       sums.at(box.label) += iou;
                       ++counts.at(box.label);
                       total += iou;
                       ++out.instances;
                     }
                   }
                 });
  for (std::size_t c = 1; c < categories; ++c) {
    out.per_category.push_back(
        {dataset.categories.names[c], counts[c] ? sums[c] / static_cast<double>(counts[c]) : 0.0,
         counts[c]});
  }
  out.mean_iou = out.instances ? total / static_cast<double>(out.instances) : 0.0;
  return out;
}

double reconstruction_l1(const ImageModel& model, const Dataset& dataset, std::uint64_t seed,
                         std::size_t d_img, std::size_t d_obj) {
  double total = 0;
  for_each_batch(dataset, seed, d_img, d_obj,
                 [&](std::span<const Sample* const> samples, std::span<const Layout> layouts,
                     std::span<const StyleCodes> styles) {
                   const Tensor<float> images = model(layouts, styles);
                   const std::size_t per = images.numel() / samples.size();
                   for (std::size_t n = 0; n < samples.size(); ++n) {
                     const Tensor<float> real = sample_image<float>(*samples[n]);
                     if (real.numel() != per) {
                       throw DimensionError("synthesized image size differs from the dataset");
                     }
                     const auto fake = images.data().subspan(n * per, per);
                     double s = 0;
                     for (std::size_t i = 0; i < per; ++i) {
                       s += std::abs(static_cast<double>(fake[i]) - real.data()[i]);
                     }
                     total += s / static_cast<double>(per);
                   }
                 });
  return total / static_cast<double>(dataset.samples.size());
}

LocalityReport locality_probe(const Generator<float>& gen, const Layout& layout,
                              std::size_t instance, std::uint64_t seed,
                              std::uint64_t resample_seed) {
  if (instance >= layout.boxes.size()) {
    throw ContractError("locality_probe instance " + std::to_string(instance) +
                        " out of range for " + std::to_string(layout.boxes.size()) + " boxes");
  }
  const NetworkConfig& cfg = gen.config();
  const std::size_t row = instance + 1;
  const std::vector<Layout> layouts{with_background(layout)};
  const StyleCodes base = sample_styles(layouts[0], cfg.d_img, cfg.d_obj, seed);
  StyleCodes obj = base;
  resample_instance(obj, row, resample_seed);
  StyleCodes img = base;
  resample_image(img, resample_seed);

  NoGradGuard guard;
  const GeneratorOptions zero{.alpha_zero = true};
  const auto run = [&](const StyleCodes& s, const GeneratorOptions& o) {
    return gen.forward(layouts, std::span<const StyleCodes>(&s, 1), o);
  };
  const auto a0 = run(base, zero);
  const auto a1 = run(obj, zero);
  const auto a2 = run(img, zero);

  LocalityReport out;
  out.instance = instance;
  out.object_resample_exact = true;
  out.image_resample_exact = true;
  const std::size_t rows = layouts[0].boxes.size();
  for (std::size_t k = 0; k < rows; ++k) {
    const bool same2 = same_bits(plane(a0.masks[0], k), plane(a2.masks[0], k)) &&
                       same_bits(plane(a0.shape_masks[0], k), plane(a2.shape_masks[0], k)) &&
                       same_bits(plane(a0.raw_masks[0], k), plane(a2.raw_masks[0], k));
    out.image_resample_exact = out.image_resample_exact && same2;
    if (k == row) continue;
    const bool same1 = same_bits(plane(a0.masks[0], k), plane(a1.masks[0], k)) &&
                       same_bits(plane(a0.shape_masks[0], k), plane(a1.shape_masks[0], k)) &&
                       same_bits(plane(a0.raw_masks[0], k), plane(a1.raw_masks[0], k));
    out.object_resample_exact = out.object_resample_exact && same1;
  }

  const auto f0 = run(base, {});
  const auto f1 = run(obj, {});
  const std::size_t r = cfg.resolution;
  const PixelRect rect = box_to_pixels(layout.boxes[instance].box, r, r);
  double in = 0, outside = 0;
  std::size_t n_in = 0, n_out = 0;
  for (std::size_t c = 0; c < 3; ++c) {
    for (std::size_t y = 0; y < r; ++y) {
      for (std::size_t x = 0; x < r; ++x) {
        const std::size_t i = (c * r + y) * r + x;
        const double d = std::abs(static_cast<double>(f0.images.data()[i]) - f1.images.data()[i]);
        if (rect.contains(y, x)) {
          in += d;
          ++n_in;
        } else {
          outside += d;
          ++n_out;
        }
      }
    }
  }
  out.change_inside = n_in ? in / static_cast<double>(n_in) : 0.0;
  out.change_outside = n_out ? outside / static_cast<double>(n_out) : 0.0;
  out.inside_fraction = in + outside > 0 ? in / (in + outside) : 0.0;
  return out;
}

Layout apply_edit(const Layout& layout, const LayoutEdit& edit) {
  if (layout.includes_background) throw ContractError("apply_edit expects foreground boxes");
  Layout out = layout;
  using Kind = LayoutEdit::Kind;
  if (edit.kind == Kind::kIdentity) return out;
  if (edit.kind == Kind::kAdd) {
    out.boxes.push_back({edit.label, edit.box, std::nullopt});
    return out;
  }
  if (edit.instance >= out.boxes.size()) {
    throw ContractError("edit instance " + std::to_string(edit.instance) + " out of range");
  }
  auto& b = out.boxes[edit.instance];
  if (edit.kind == Kind::kRelabel) {
    b.label = edit.label;
  } else {
    b.box = edit.box;
  }
  return out;
}

LayoutProbeReport layout_probe(const Generator<float>& gen, const Layout& layout,
                               const LayoutEdit& edit, std::uint64_t seed) {
  using Kind = LayoutEdit::Kind;
  const NetworkConfig& cfg = gen.config();
  const std::size_t r = cfg.resolution;
  const Layout edited = apply_edit(layout, edit);
  const std::vector<Layout> before{with_background(layout)};
  const std::vector<Layout> after{with_background(edited)};
  const StyleCodes s0 = sample_styles(before[0], cfg.d_img, cfg.d_obj, seed);
  std::vector<std::uint64_t> seeds = s0.object_seeds;
  if (edit.kind == Kind::kAdd) seeds.push_back(edit.new_seed);
  const StyleCodes s1 = sample_styles(after[0], cfg.d_img, cfg.d_obj, seed, seeds);

  NoGradGuard guard;
  const auto run = [&](const std::vector<Layout>& l, const StyleCodes& s,
                       const GeneratorOptions& o) {
    return gen.forward(l, std::span<const StyleCodes>(&s, 1), o);
  };
  const auto b = run(before, s0, {});
  const auto a = run(after, s1, {});
  const auto bz = run(before, s0, {.alpha_zero = true});
  const auto az = run(after, s1, {.alpha_zero = true});

  LayoutProbeReport out;
  out.images_identical = same_bits(b.images.data(), a.images.data());
  const bool has_target = edit.kind != Kind::kIdentity && edit.kind != Kind::kAdd;
  const std::size_t target = edit.instance + 1;
  double iou = 0;
  std::size_t count = 0;
  out.unedited_shape_masks_exact = true;
  for (std::size_t k = 1; k < before[0].boxes.size(); ++k) {
    if (has_target && k == target) continue;
    iou += mask_iou(plane(b.masks[0], k), plane(a.masks[0], k));
    ++count;
    out.unedited_shape_masks_exact =
        out.unedited_shape_masks_exact &&
        same_bits(plane(bz.raw_masks[0], k), plane(az.raw_masks[0], k)) &&
        same_bits(plane(bz.shape_masks[0], k), plane(az.shape_masks[0], k));
  }
  out.unedited_mask_iou = count ? iou / static_cast<double>(count) : 1.0;
  if (has_target) {
    const auto c0 = box_center(layout.boxes[edit.instance].box, r);
    const auto c1 = box_center(edited.boxes[edit.instance].box, r);
    const auto m0 = mask_centroid(plane(b.masks[0], target), r);
    const auto m1 = mask_centroid(plane(a.masks[0], target), r);
    out.box_shift = {c1[0] - c0[0], c1[1] - c0[1]};
    out.mask_shift = {m1[0] - m0[0], m1[1] - m0[1]};
  }
  return out;
}

Image8 draw_layout(const Layout& layout, std::size_t resolution) {
  Image8 img{resolution, resolution, 3,
             std::vector<std::uint8_t>(resolution * resolution * 3, 255)};
  for (const auto& b : layout.boxes) {
    if (layout.includes_background && b.label == kBackgroundLabel) continue;
    const PixelRect rect = box_to_pixels(b.box, resolution, resolution);
    const auto color = palette_color(b.label);
    for (std::size_t y = rect.r0; y < rect.r1; ++y) {
      for (std::size_t x = rect.c0; x < rect.c1; ++x) {
        const bool edge = y == rect.r0 || y + 1 == rect.r1 || x == rect.c0 || x + 1 == rect.c1;
        if (!edge) continue;
        for (std::size_t c = 0; c < 3; ++c) img.pixels[(y * resolution + x) * 3 + c] = color[c];
      }
    }
  }
  return img;
}

Image8 contact_sheet(std::span<const ContactRow> rows, std::size_t resolution) {
  constexpr std::size_t kGutter = 2;
  constexpr std::size_t kColumns = 4;
  const std::size_t step = resolution + kGutter;
  Image8 sheet{kGutter + kColumns * step, kGutter + rows.size() * step, 3, {}};
  sheet.pixels.assign(sheet.width * sheet.height * 3, 128);
  const auto blit = [&](const Image8& tile, std::size_t row, std::size_t col) {
    if (tile.width != resolution || tile.height != resolution) {
      throw DimensionError("contact sheet tile has the wrong size");
    }
    for (std::size_t y = 0; y < resolution; ++y) {
      for (std::size_t x = 0; x < resolution; ++x) {
        for (std::size_t c = 0; c < 3; ++c) {
          const std::uint8_t v =
              tile.pixels[(y * resolution + x) * tile.channels + (tile.channels == 3 ? c : 0)];
          const std::size_t sy = kGutter + row * step + y, sx = kGutter + col * step + x;
          sheet.pixels[(sy * sheet.width + sx) * 3 + c] = v;
        }
      }
    }
  };
  for (std::size_t i = 0; i < rows.size(); ++i) {
    blit(draw_layout(rows[i].layout, resolution), i, 0);
    blit(label_map_to_rgb(rows[i].label_map, resolution, resolution), i, 1);
    blit(rows[i].image, i, 2);
    blit(rows[i].ground_truth, i, 3);
  }
  return sheet;
}

std::string report_json(const EvalReport& report) {
  ordered_json j;
  if (!report.config_json.empty()) j["config"] = ordered_json::parse(report.config_json);
  j["model"] = report.model;
  j["inception_score"] = kNotAvailableClassifier;
  j["fid"] = kNotAvailableClassifier;
  if (report.reconstruction_l1) j["reconstruction_l1"] = *report.reconstruction_l1;
  ordered_json iou;
  iou["threshold"] = 0.5;
  iou["crop_size"] = kIouCropSize;
  iou["mean"] = report.iou.mean_iou;
  iou["instances"] = report.iou.instances;
  iou["per_category"] = ordered_json::array();
  for (const auto& c : report.iou.per_category) {
    iou["per_category"].push_back(
        {{"category", c.category}, {"mean", c.mean_iou}, {"instances", c.instances}});
  }
  j["mask_iou"] = iou;
  if (report.diversity) {
    j["diversity"] = {{"layouts", report.diversity_layouts},
                      {"styles_per_layout", report.diversity_styles},
                      {"mean", report.diversity->mean},
                      {"std", report.diversity->std},
                      {"per_layout", report.diversity->per_layout}};
  }
  if (!report.locality.empty()) {
    ordered_json loc = ordered_json::array();
    for (const auto& l : report.locality) {
      loc.push_back({{"instance", l.instance},
                     {"object_resample_exact", l.object_resample_exact},
                     {"image_resample_exact", l.image_resample_exact},
                     {"change_inside", l.change_inside},
                     {"change_outside", l.change_outside},
                     {"inside_fraction", l.inside_fraction}});
    }
    j["locality"] = loc;
  }
  return j.dump(2) + "\n";
}

}  // namespace layoutsynth
