#include "layoutsynth/networks.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <map>

#include "layoutsynth/isla.hpp"
#include "layoutsynth/ops.hpp"
#include "layoutsynth/rng.hpp"

namespace layoutsynth {

void validate(const NetworkConfig& c) {
  if (c.resolution < 16 || !std::has_single_bit(c.resolution)) {
    throw ConfigError("model.resolution must be a power of two >= 16, got " +
                      std::to_string(c.resolution));
  }
  if (c.num_categories < 2) throw ConfigError("model.num_categories must be >= 2");
  if (c.d_img == 0 || c.d_embed == 0 || c.d_obj == 0) {
    throw ConfigError("model latent dimensions must be positive");
  }
  if (c.gen_channels == 0 || c.mask_channels == 0 || c.disc_channels == 0) {
    throw ConfigError("model channel counts must be positive");
  }
  if (c.mask_size < 8 || !std::has_single_bit(c.mask_size)) {
    throw ConfigError("model.mask_size must be a power of two >= 8, got " +
                      std::to_string(c.mask_size));
  }
  if (c.roi_size == 0) throw ConfigError("model.roi_size must be positive");
  if (c.pyramid_levels < 1 || c.pyramid_levels > stage_count(c)) {
    throw ConfigError("model.pyramid_levels must be in [1, " +
                      std::to_string(stage_count(c)) + "]");
  }
}

std::size_t stage_count(const NetworkConfig& c) {
  return static_cast<std::size_t>(std::countr_zero(c.resolution / 4));
}

std::size_t generator_channels(const NetworkConfig& c, std::size_t stage) {
  return std::max(c.gen_channels >> stage, std::min<std::size_t>(c.gen_channels, 8));
}

std::size_t discriminator_channels(const NetworkConfig& c, std::size_t block) {
  return c.disc_channels << std::min<std::size_t>(block, 3);
}

std::size_t assign_pyramid_level(const PixelRect& rect, std::size_t resolution,
                                 std::size_t levels) {
  if (levels == 0) throw ContractError("assign_pyramid_level needs >= 1 level");
  const double side = std::sqrt(static_cast<double>(rect.height() * rect.width()));
  const double top = static_cast<double>(levels - 1);
  const double v = std::floor(std::log2(side / static_cast<double>(resolution)) + top);
  return static_cast<std::size_t>(std::clamp(v, 0.0, top));
}

namespace {

// Registers parameters with per-parameter seeds drawn in registration order.
template <std::floating_point T>
class Registrar {
 public:
  Registrar(ParameterStore<T>& store, std::uint64_t seed) : store_(store), seed_(seed) {}

  void weight(const std::string& name, Shape shape) {
    store_.add(name, std::move(shape), ParameterStore<T>::Init::kOrthogonal, next(), true);
  }
  void embedding(const std::string& name, Shape shape) {
    store_.add(name, std::move(shape), ParameterStore<T>::Init::kOrthogonal, next(), false);
  }
  void bias(const std::string& name, std::size_t n) {
    store_.add(name, Shape{n}, ParameterStore<T>::Init::kZeros, next(), false);
  }
  void scalar(const std::string& name) {
    store_.add(name, Shape{1}, ParameterStore<T>::Init::kZeros, next(), false);
  }
  void conv(const std::string& name, std::size_t out, std::size_t in, std::size_t k) {
    weight(name + ".weight", Shape{out, in, k, k});
    bias(name + ".bias", out);
  }
  void linear(const std::string& name, std::size_t in, std::size_t out) {
    weight(name + ".weight", Shape{in, out});
    bias(name + ".bias", out);
  }

 private:
  std::uint64_t next() { return split_seed(seed_, counter_++); }

  ParameterStore<T>& store_;
  std::uint64_t seed_;
  std::uint64_t counter_ = 0;
};

std::string stage_name(std::size_t k) { return "isla.s" + std::to_string(k); }
std::string block_name(std::size_t k) { return "gen.block" + std::to_string(k); }

template <std::floating_point T>
Tensor<T> spatial_mean(const Tensor<T>& x) {
  const std::size_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  return scale(reduce_sum(reshape(x, Shape{n, c, hw}), 2), 1.0 / static_cast<double>(hw));
}

}  // namespace

// ---------------------------------------------------------------------------
// Generator

template <std::floating_point T>
Generator<T>::Generator(const NetworkConfig& config, std::uint64_t seed) : config_(config) {
  validate(config_);
  Registrar<T> reg(params_, seed);
  const std::size_t joint = config_.d_embed + config_.d_obj;
  const std::size_t stages = stage_count(config_);
  const std::size_t dl = config_.num_categories;
  reg.embedding("isla.embed", Shape{dl, config_.d_embed});

  const std::size_t cm = config_.mask_channels;
  reg.linear("gen.maskgen.fc", joint, cm * 16);
  const std::size_t mask_stages =
      static_cast<std::size_t>(std::countr_zero(config_.mask_size / 4));
  for (std::size_t k = 0; k < mask_stages; ++k) {
    reg.conv("gen.maskgen.conv" + std::to_string(k), cm, cm, 3);
  }
  reg.conv("gen.maskgen.out", 1, cm, 3);

  reg.linear("gen.fc", config_.d_img, generator_channels(config_, 0) * 16);
  for (std::size_t k = 0; k < stages; ++k) {
    const std::size_t cin = generator_channels(config_, k);
    const std::size_t cout = generator_channels(config_, k + 1);
    const std::string s = stage_name(k), b = block_name(k);
    reg.conv(s + ".tomask", dl, cin, 3);
    reg.weight(s + ".n1.proj", Shape{joint, 2 * cin});
    reg.scalar(s + ".n1.alpha");
    reg.weight(s + ".n2.proj", Shape{joint, 2 * cout});
    reg.scalar(s + ".n2.alpha");
    reg.conv(b + ".conv1", cout, cin, 3);
    reg.conv(b + ".conv2", cout, cout, 3);
    reg.conv(b + ".skip", cout, cin, 1);
  }
  const std::size_t cr = generator_channels(config_, stages);
  reg.conv("isla.out.tomask", dl, cr, 3);
  reg.conv("gen.torgb", 3, cr, 3);
}

template <std::floating_point T>
Tensor<T> Generator<T>::linear(const Tensor<T>& x, const std::string& name) const {
  return add(matmul(x, params_.weight(name + ".weight")), params_.weight(name + ".bias"));
}

template <std::floating_point T>
Tensor<T> Generator<T>::conv(const Tensor<T>& x, const std::string& name) const {
  const Tensor<T> w = params_.weight(name + ".weight");
  return add(conv2d(x, w, 1, w.dim(2) / 2), params_.weight(name + ".bias"));
}

template <std::floating_point T>
Tensor<T> Generator<T>::joint_encoding(const Layout& layout, const StyleCodes& styles) const {
  if (!layout.includes_background) {
    throw ContractError("generator expects layouts with the background instance");
  }
  if (styles.instances() != layout.instance_count() || styles.d_obj != config_.d_obj ||
      styles.d_img != config_.d_img) {
    throw DimensionError("generator: style codes do not match the layout/config (" +
                         std::to_string(styles.instances()) + " rows for " +
                         std::to_string(layout.instance_count()) + " instances)");
  }
  return joint_encode(embed_labels(layout, params_.weight("isla.embed")),
                      object_codes<T>(styles));
}

template <std::floating_point T>
Tensor<T> Generator<T>::instance_masks(const Tensor<T>& joint) const {
  const std::size_t k = joint.dim(0), cm = config_.mask_channels;
  Tensor<T> h = relu(linear(joint, "gen.maskgen.fc"));
  h = reshape(h, Shape{k, cm, 4, 4});
  const std::size_t mask_stages =
      static_cast<std::size_t>(std::countr_zero(config_.mask_size / 4));
  for (std::size_t s = 0; s < mask_stages; ++s) {
    h = relu(conv(upsample_nearest2x(h), "gen.maskgen.conv" + std::to_string(s)));
  }
  h = sigmoid(conv(h, "gen.maskgen.out"));
  return reshape(h, Shape{k, config_.mask_size, config_.mask_size});
}

template <std::floating_point T>
Tensor<T> Generator<T>::isla_layer(const Tensor<T>& x, const std::string& prefix,
                                   std::span<const Layout> layouts,
                                   const std::vector<Tensor<T>>& joints,
                                   const std::vector<Tensor<T>>& raw,
                                   const std::vector<Tensor<T>>& feature_masks,
                                   const GeneratorOptions& options,
                                   std::vector<Tensor<T>>* blended,
                                   std::vector<Tensor<T>>* placed) const {
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const Tensor<T> proj = params_.weight(prefix + ".proj");
  const Tensor<T> alpha =
      options.alpha_zero ? Tensor<T>::scalar(T(0)) : params_.weight(prefix + ".alpha");
  std::vector<Tensor<T>> gammas, betas;
  for (std::size_t i = 0; i < n; ++i) {
    const Tensor<T> ms = place_masks(raw[i], layouts[i], h, w);
    const Tensor<T> m = blend_masks(ms, feature_masks[i], alpha);
    const AffineField<T> f = compose_isla(m, affine_table(joints[i], proj), layouts[i]);
    gammas.push_back(reshape(f.gamma, Shape{1, c, h, w}));
    betas.push_back(reshape(f.beta, Shape{1, c, h, w}));
    if (blended) blended->push_back(m);
    if (placed) placed->push_back(ms);
  }
  return isla_apply(x, concat<T>(std::span<const Tensor<T>>(gammas), 0),
                    concat<T>(std::span<const Tensor<T>>(betas), 0));
}

template <std::floating_point T>
GeneratorOutput<T> Generator<T>::forward(std::span<const Layout> layouts,
                                         std::span<const StyleCodes> styles,
                                         const GeneratorOptions& options) const {
  const std::size_t n = layouts.size();
  if (n == 0 || styles.size() != n) {
    throw DimensionError("generator: " + std::to_string(n) + " layouts and " +
                         std::to_string(styles.size()) + " style sets");
  }
  GeneratorOutput<T> out;
  std::vector<Tensor<T>> joints;
  std::vector<Tensor<T>> codes;
  for (std::size_t i = 0; i < n; ++i) {
    joints.push_back(joint_encoding(layouts[i], styles[i]));
    codes.push_back(image_code<T>(styles[i]));
  }
  const Tensor<T> raw_all = instance_masks(concat<T>(std::span<const Tensor<T>>(joints), 0));
  std::size_t offset = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t m = layouts[i].instance_count();
    out.raw_masks.push_back(slice(raw_all, 0, offset, offset + m));
    offset += m;
  }

  const std::size_t dl = config_.num_categories;
  Tensor<T> x = linear(concat<T>(std::span<const Tensor<T>>(codes), 0), "gen.fc");
  x = reshape(x, Shape{n, generator_channels(config_, 0), 4, 4});
  const std::size_t stages = stage_count(config_);
  for (std::size_t k = 0; k < stages; ++k) {
    const std::string s = stage_name(k), b = block_name(k);
    const std::size_t hh = x.dim(2), ww = x.dim(3);
    const Tensor<T> label_map = to_label_map(x, params_.weight(s + ".tomask.weight"),
                                             params_.weight(s + ".tomask.bias"));
    out.label_maps.push_back(label_map);
    std::vector<Tensor<T>> mf1, mf2;
    for (std::size_t i = 0; i < n; ++i) {
      const Tensor<T> map_i = reshape(slice(label_map, 0, i, i + 1), Shape{dl, hh, ww});
      mf1.push_back(instance_masks_from_label_map(map_i, layouts[i]));
      mf2.push_back(clip_to_boxes(upsample_nearest2x(mf1.back()), layouts[i]));
    }
    const bool last = k + 1 == stages;
    Tensor<T> h = isla_layer(x, s + ".n1", layouts, joints, out.raw_masks, mf1, options,
                             nullptr, nullptr);
    h = conv(upsample_nearest2x(relu(h)), b + ".conv1");
    h = isla_layer(h, s + ".n2", layouts, joints, out.raw_masks, mf2, options,
                   last ? &out.masks : nullptr, last ? &out.shape_masks : nullptr);
    h = conv(relu(h), b + ".conv2");
    x = add(h, conv(upsample_nearest2x(x), b + ".skip"));
  }
  out.label_maps.push_back(to_label_map(x, params_.weight("isla.out.tomask.weight"),
                                        params_.weight("isla.out.tomask.bias")));
  out.images = tanh(conv(relu(x), "gen.torgb"));
  for (std::size_t i = 0; i < n; ++i) {
    out.label_images.push_back(instance_label_map(out.masks[i], layouts[i]));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Discriminator

template <std::floating_point T>
Discriminator<T>::Discriminator(const NetworkConfig& config, std::uint64_t seed)
    : config_(config) {
  validate(config_);
  Registrar<T> reg(params_, seed);
  const std::size_t stages = stage_count(config_);
  std::size_t cin = 3;
  for (std::size_t k = 0; k < stages; ++k) {
    const std::size_t cout = discriminator_channels(config_, k);
    const std::string b = "disc.block" + std::to_string(k);
    reg.conv(b + ".conv1", cout, cin, 3);
    reg.conv(b + ".conv2", cout, cout, 3);
    reg.conv(b + ".skip", cout, cin, 1);
    cin = cout;
  }
  reg.conv("disc.final.conv1", cin, cin, 3);
  reg.conv("disc.final.conv2", cin, cin, 3);
  reg.conv("disc.final.skip", cin, cin, 1);
  reg.linear("disc.img.fc", cin, 1);

  const std::size_t cobj = discriminator_channels(config_, config_.pyramid_levels);
  for (std::size_t l = 0; l < config_.pyramid_levels; ++l) {
    const std::string b = "disc.obj" + std::to_string(l);
    const std::size_t cl = discriminator_channels(config_, l);
    reg.conv(b + ".conv1", cobj, cl, 3);
    reg.conv(b + ".conv2", cobj, cobj, 3);
    reg.conv(b + ".skip", cobj, cl, 1);
  }
  reg.linear("disc.obj.fc", cobj, 1);
  reg.embedding("disc.obj.embed", Shape{config_.num_categories, cobj});
}

template <std::floating_point T>
Tensor<T> Discriminator<T>::conv(const Tensor<T>& x, const std::string& name) const {
  const Tensor<T> w = params_.weight(name + ".weight");
  return add(conv2d(x, w, 1, w.dim(2) / 2), params_.weight(name + ".bias"));
}

template <std::floating_point T>
Tensor<T> Discriminator<T>::res_block(const Tensor<T>& x, const std::string& name,
                                      bool down, bool pre_activation) const {
  Tensor<T> h = conv(pre_activation ? relu(x) : x, name + ".conv1");
  h = conv(relu(h), name + ".conv2");
  if (down) h = avg_pool2x(h);
  // The first block pools before its shortcut conv, the others after.
  Tensor<T> skip = x;
  if (!pre_activation) {
    skip = conv(down ? avg_pool2x(x) : x, name + ".skip");
  } else {
    skip = conv(x, name + ".skip");
    if (down) skip = avg_pool2x(skip);
  }
  return add(h, skip);
}

template <std::floating_point T>
DiscriminatorOutput<T> Discriminator<T>::forward(const Tensor<T>& images,
                                                 std::span<const Layout> layouts) const {
  const std::size_t r = config_.resolution;
  if (images.rank() != 4 || images.dim(1) != 3 || images.dim(2) != r || images.dim(3) != r) {
    throw DimensionError("discriminator expects [N x 3 x " + std::to_string(r) + " x " +
                         std::to_string(r) + "], got " + to_string(images.shape()));
  }
  const std::size_t n = images.dim(0);
  if (layouts.size() != n) {
    throw DimensionError("discriminator: " + std::to_string(layouts.size()) +
                         " layouts for " + std::to_string(n) + " images");
  }
  const std::size_t stages = stage_count(config_);
  const std::size_t levels = config_.pyramid_levels;
  std::vector<Tensor<T>> pyramid;
  Tensor<T> x = images;
  for (std::size_t k = 0; k < stages; ++k) {
    x = res_block(x, "disc.block" + std::to_string(k), true, k > 0);
    if (k < levels) pyramid.push_back(x);
  }
  x = res_block(x, "disc.final", false, true);

  DiscriminatorOutput<T> out;
  const Tensor<T> pooled = spatial_mean(relu(x));
  out.image_scores = reshape(add(matmul(pooled, params_.weight("disc.img.fc.weight")),
                                 params_.weight("disc.img.fc.bias")),
                             Shape{n});

  // Object head: gather instances per pyramid level, score them together.
  struct Ref {
    std::size_t sample, level, row;
  };
  std::vector<std::vector<Ref>> refs(n);
  std::vector<std::vector<Tensor<T>>> crops(levels);
  std::vector<std::vector<std::size_t>> labels(levels);
  out.levels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const Layout& lay = layouts[i];
    std::vector<Tensor<T>> per_level(levels);
    for (std::size_t j = lay.includes_background ? 1 : 0; j < lay.boxes.size(); ++j) {
      const auto& b = lay.boxes[j];
      const std::size_t l = assign_pyramid_level(box_to_pixels(b.box, r, r), r, levels);
      const Tensor<T>& feat = pyramid[l];
      const std::size_t c = feat.dim(1), fh = feat.dim(2), fw = feat.dim(3);
      if (!per_level[l].defined()) {
        per_level[l] = reshape(slice(feat, 0, i, i + 1), Shape{c, fh, fw});
      }
      const RoiBox roi{b.box.x0 * fw, b.box.y0 * fh, b.box.x1 * fw, b.box.y1 * fh};
      const std::size_t k = config_.roi_size;
      crops[l].push_back(reshape(roi_align(per_level[l], roi, k), Shape{1, c, k, k}));
      labels[l].push_back(b.label);
      refs[i].push_back({i, l, crops[l].size() - 1});
      out.levels[i].push_back(l);
    }
  }

  std::vector<Tensor<T>> features;
  std::vector<std::size_t> level_offset(levels, 0);
  std::vector<std::size_t> all_labels;
  std::size_t total = 0;
  for (std::size_t l = 0; l < levels; ++l) {
    level_offset[l] = total;
    if (crops[l].empty()) continue;
    Tensor<T> h = concat<T>(std::span<const Tensor<T>>(crops[l]), 0);
    h = res_block(h, "disc.obj" + std::to_string(l), false, true);
    features.push_back(spatial_mean(relu(h)));
    all_labels.insert(all_labels.end(), labels[l].begin(), labels[l].end());
    total += crops[l].size();
  }
  out.object_scores.resize(n);
  if (total == 0) return out;

  const Tensor<T> f = concat<T>(std::span<const Tensor<T>>(features), 0);
  const Tensor<T> e = params_.weight("disc.obj.embed");
  Tensor<T> onehot(Shape{total, config_.num_categories});
  auto oh = onehot.mutable_data();
  for (std::size_t q = 0; q < total; ++q) oh[q * config_.num_categories + all_labels[q]] = T(1);
  const Tensor<T> projection = reduce_sum(mul(f, matmul(onehot, e)), 1);
  const Tensor<T> realness = reshape(add(matmul(f, params_.weight("disc.obj.fc.weight")),
                                         params_.weight("disc.obj.fc.bias")),
                                     Shape{total});
  const Tensor<T> scores = add(realness, projection);
  for (std::size_t i = 0; i < n; ++i) {
    if (refs[i].empty()) continue;
    std::vector<Tensor<T>> mine;
    for (const Ref& ref : refs[i]) {
      const std::size_t q = level_offset[ref.level] + ref.row;
      mine.push_back(slice(scores, 0, q, q + 1));
    }
    out.object_scores[i] = concat<T>(std::span<const Tensor<T>>(mine), 0);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Feature extractor

template <std::floating_point T>
FeatureExtractor<T>::FeatureExtractor(std::uint64_t seed) {
  const std::size_t shapes[3][2] = {{8, 3}, {16, 8}, {16, 16}};
  for (std::size_t k = 0; k < 3; ++k) {
    kernels_.push_back(orthogonal_init<T>(Shape{shapes[k][0], shapes[k][1], 3, 3},
                                          split_seed(seed, k), std::sqrt(2.0)));
  }
}

template <std::floating_point T>
std::vector<Tensor<T>> FeatureExtractor<T>::forward(const Tensor<T>& images) const {
  if (images.rank() != 4 || images.dim(1) != 3 || images.dim(2) % 4 != 0 ||
      images.dim(3) % 4 != 0) {
    throw DimensionError("feature extractor expects [N x 3 x H x W] with H, W "
                         "divisible by 4, got " + to_string(images.shape()));
  }
  std::vector<Tensor<T>> stages;
  Tensor<T> x = images;
  for (std::size_t k = 0; k < kernels_.size(); ++k) {
    if (k > 0) x = avg_pool2x(x);
    x = relu(conv2d(x, kernels_[k], 1, 1));
    stages.push_back(x);
  }
  return stages;
}

template class Generator<float>;
template class Generator<double>;
template class Discriminator<float>;
template class Discriminator<double>;
template class FeatureExtractor<float>;
template class FeatureExtractor<double>;

}  // namespace layoutsynth
