#include "layoutsynth/trainer.hpp"

#include <numeric>

#include "json.hpp"
#include "layoutsynth/isla.hpp"
#include "layoutsynth/losses.hpp"
#include "layoutsynth/ops.hpp"

namespace layoutsynth {
namespace {

using nlohmann::ordered_json;

// Stream identifiers for split_seed(run_seed, stream).
constexpr std::uint64_t kGeneratorStream = 1;
constexpr std::uint64_t kDiscriminatorStream = 2;
constexpr std::uint64_t kTrainStream = 3;
constexpr std::uint64_t kSplitStream = 4;
constexpr std::uint64_t kDetectionStream = 5;

double mean_of(const Tensor<float>& t) {
  if (!t.defined() || t.numel() == 0) return 0.0;
  double s = 0;
  for (const float v : t.data()) s += v;
  return s / static_cast<double>(t.numel());
}

std::pair<double, std::size_t> sum_objects(const DiscriminatorOutput<float>& d) {
  double s = 0;
  std::size_t n = 0;
  for (const auto& t : d.object_scores) {
    if (!t.defined()) continue;
    for (const float v : t.data()) s += v;
    n += t.numel();
  }
  return {s, n};
}

void append_store(const ParameterStore<float>& store, std::vector<NamedTensor>& out) {
  for (const auto& p : store.params()) {
    out.push_back({p.name, p.value.shape(),
                   std::vector<float>(p.value.data().begin(), p.value.data().end())});
  }
  for (const auto& p : store.params()) {
    if (!p.spectral) continue;
    out.push_back({p.name + ".sn_u", Shape{p.power.u.size()}, p.power.u});
    out.push_back({p.name + ".sn_v", Shape{p.power.v.size()}, p.power.v});
  }
}

void append_adam(const std::string& prefix, const ParameterStore<float>& store,
                 const AdamState<float>& adam, std::vector<NamedTensor>& out) {
  const auto& params = store.params();
  for (std::size_t k = 0; k < params.size(); ++k) {
    const auto& p = params[k];
    const std::size_t n = p.value.numel();
    out.push_back({prefix + p.name + ".m", p.value.shape(),
                   adam.m.empty() ? std::vector<float>(n, 0.0f) : adam.m[k]});
    out.push_back({prefix + p.name + ".v", p.value.shape(),
                   adam.v.empty() ? std::vector<float>(n, 0.0f) : adam.v[k]});
  }
}

// Copies parameter values and spectral vectors from `tensors` (looked up by
// name) into the store.
void load_store(ParameterStore<float>& store, const std::vector<NamedTensor>& tensors) {
  std::map<std::string, const NamedTensor*> by_name;
  for (const auto& t : tensors) by_name[t.name] = &t;
  const auto fetch = [&](const std::string& name, std::size_t n) -> const NamedTensor& {
    const auto it = by_name.find(name);
    if (it == by_name.end()) throw CheckpointMismatchError("checkpoint lacks tensor " + name);
    if (it->second->data.size() != n) {
      throw CheckpointMismatchError("tensor " + name + " has " +
                                    std::to_string(it->second->data.size()) +
                                    " values, model expects " + std::to_string(n));
    }
    return *it->second;
  };
  for (auto& p : store.params()) {
    const auto& t = fetch(p.name, p.value.numel());
    if (t.shape != p.value.shape()) {
      throw CheckpointMismatchError("tensor " + p.name + " has shape " + to_string(t.shape) +
                                    ", model expects " + to_string(p.value.shape()));
    }
    std::copy(t.data.begin(), t.data.end(), p.value.mutable_data().begin());
    if (p.spectral) {
      p.power.u = fetch(p.name + ".sn_u", p.power.u.size()).data;
      p.power.v = fetch(p.name + ".sn_v", p.power.v.size()).data;
    }
  }
}

}  // namespace

std::uint64_t generator_init_seed(std::uint64_t run_seed) {
  return split_seed(run_seed, kGeneratorStream);
}

std::uint64_t discriminator_init_seed(std::uint64_t run_seed) {
  return split_seed(run_seed, kDiscriminatorStream);
}

std::vector<TrainingExample> make_examples(const Dataset& dataset, const RunConfig& config,
                                           TrainMode mode) {
  if (dataset.resolution != config.model.resolution) {
    throw ConfigError("dataset resolution " + std::to_string(dataset.resolution) +
                      " differs from model.resolution " +
                      std::to_string(config.model.resolution));
  }
  if (dataset.samples.empty()) throw DataError("dataset has no samples");
  std::vector<TrainingExample> out;
  std::vector<bool> unlabeled(dataset.samples.size(), false);
  if (mode == TrainMode::kSemi) {
    const auto split = split_dataset(dataset.samples.size(), config.semi.supervised_fraction,
                                     split_seed(config.seed, kSplitStream));
    for (const auto i : split.unlabeled) unlabeled[i] = true;
  }
  const std::uint64_t detect_seed = split_seed(config.seed, kDetectionStream);
  for (std::size_t i = 0; i < dataset.samples.size(); ++i) {
    const Sample& s = dataset.samples[i];
    TrainingExample ex;
    ex.id = s.id;
    ex.image = sample_image<float>(s);
    ex.layout = s.layout;
    if (unlabeled[i]) {
      ex.layout = simulate_detections(s.layout, config.semi.noise, split_seed(detect_seed, s.id));
      ex.detected = true;
    }
    out.push_back(std::move(ex));
  }
  return out;
}

std::string StepMetrics::to_json() const {
  ordered_json j;
  j["step"] = step;
  j["d_loss"] = d_loss;
  j["g_loss"] = g_loss;
  j["g_adv"] = g_adv;
  j["recon"] = recon;
  j["percep"] = percep;
  j["p_img_real"] = p_img_real;
  j["p_img_fake"] = p_img_fake;
  j["p_obj_real"] = p_obj_real;
  j["p_obj_fake"] = p_obj_fake;
  j["alpha_mean"] = alpha_mean;
  return j.dump();
}

Trainer::Trainer(const RunConfig& config, std::vector<TrainingExample> examples)
    : config_(config),
      examples_(std::move(examples)),
      gen_(config.model, generator_init_seed(config.seed)),
      disc_(config.model, discriminator_init_seed(config.seed)),
      rng_(split_seed(config.seed, kTrainStream)) {
  validate(config_);
  if (examples_.empty()) throw DataError("no training examples");
  const std::size_t r = config_.model.resolution;
  for (const auto& ex : examples_) {
    if (ex.image.shape() != Shape{3, r, r}) {
      throw DimensionError("training image " + std::to_string(ex.id) + " has shape " +
                           to_string(ex.image.shape()));
    }
  }
}

std::vector<std::size_t> Trainer::draw_batch() {
  const std::size_t n = examples_.size();
  const std::size_t b = std::min(config_.optim.batch_size, n);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (std::size_t k = 0; k < b; ++k) {
    const auto j = static_cast<std::size_t>(
        rng_.uniform_int(static_cast<std::int64_t>(k), static_cast<std::int64_t>(n - 1)));
    std::swap(order[k], order[j]);
  }
  order.resize(b);
  return order;
}

StepMetrics Trainer::step() {
  const std::size_t r = config_.model.resolution;
  const auto batch = draw_batch();
  std::vector<Layout> layouts;
  std::vector<StyleCodes> styles;
  std::vector<Tensor<float>> images;
  ConfidenceBatch confidences;
  bool any_detected = false;
  for (const auto i : batch) {
    const TrainingExample& ex = examples_[i];
    layouts.push_back(with_background(ex.layout));
    styles.push_back(sample_styles(layouts.back(), config_.model.d_img, config_.model.d_obj,
                                   rng_.next_u64()));
    images.push_back(reshape(ex.image, Shape{1, 3, r, r}));
    std::vector<double> c;
    if (ex.detected) {
      any_detected = true;
      for (const auto& b : ex.layout.boxes) c.push_back(b.confidence.value_or(1.0));
    }
    confidences.push_back(std::move(c));
  }
  const Tensor<float> real = concat<float>(std::span<const Tensor<float>>(images), 0);

  gen_.params().refresh_spectral(config_.optim.power_iterations);
  disc_.params().refresh_spectral(config_.optim.power_iterations);

  Tape<float> gen_tape;
  GeneratorOutput<float> fake;
  {
    TapeScope<float> scope(gen_tape);
    fake = gen_.forward(layouts, styles);
  }

  StepMetrics m;
  // Discriminator update on the detached fake batch.
  disc_.params().set_requires_grad(true);
  disc_.params().zero_grad();
  {
    Tape<float> tape;
    TapeScope<float> scope(tape);
    const auto dr = disc_.forward(real, layouts);
    const auto df = disc_.forward(fake.images.detach(), layouts);
    const Tensor<float> loss = discriminator_loss(
        dr, df, config_.loss.lambda, any_detected ? &confidences : nullptr,
        config_.semi.noise.tau);
    backward(tape, loss);
    m.d_loss = loss.item();
    m.p_img_real = mean_of(dr.image_scores);
    m.p_img_fake = mean_of(df.image_scores);
    const auto [sr, nr] = sum_objects(dr);
    const auto [sf, nf] = sum_objects(df);
    m.p_obj_real = nr ? sr / static_cast<double>(nr) : 0.0;
    m.p_obj_fake = nf ? sf / static_cast<double>(nf) : 0.0;
  }
  adam_step(disc_.params(), adam_d_, config_.optim.adam);

  // Generator update through the updated critic, reusing the recorded
  // generator graph.
  disc_.params().set_requires_grad(false);
  gen_.params().zero_grad();
  {
    TapeScope<float> scope(gen_tape);
    const auto scores = disc_.forward(fake.images, layouts);
    const auto terms = generator_loss(fake.images, real, scores, extractor_, config_.loss);
    backward(gen_tape, terms.total);
    m.g_loss = terms.total.item();
    m.g_adv = terms.adversarial;
    m.recon = terms.recon;
    m.percep = terms.percep;
  }
  adam_step(gen_.params(), adam_g_, config_.optim.adam);
  disc_.params().set_requires_grad(true);

  double alpha = 0;
  std::size_t alphas = 0;
  for (const auto& p : gen_.params().params()) {
    if (p.name.ends_with(".alpha")) {
      alpha += p.value.item();
      ++alphas;
    }
  }
  m.alpha_mean = alphas ? alpha / static_cast<double>(alphas) : 0.0;
  m.step = ++step_;
  return m;
}

CheckpointData Trainer::checkpoint() const {
  CheckpointData out;
  append_store(gen_.params(), out.tensors);
  append_store(disc_.params(), out.tensors);
  append_adam("adam.", gen_.params(), adam_g_, out.tensors);
  append_adam("adam.", disc_.params(), adam_d_, out.tensors);
  ordered_json meta;
  meta["format_version"] = kCheckpointVersion;
  meta["step"] = step_;
  meta["adam_g_step"] = adam_g_.step;
  meta["adam_d_step"] = adam_d_.step;
  meta["prng"] = rng_.state();
  meta["config"] = ordered_json::parse(to_json(config_));
  out.metadata = meta.dump();
  return out;
}

void Trainer::restore(const CheckpointData& data) {
  const CheckpointData mine = checkpoint();
  if (mine.tensors.size() != data.tensors.size()) {
    throw CheckpointMismatchError("checkpoint has " + std::to_string(data.tensors.size()) +
                                  " tensors, model expects " +
                                  std::to_string(mine.tensors.size()));
  }
  for (std::size_t k = 0; k < mine.tensors.size(); ++k) {
    const auto& a = mine.tensors[k];
    const auto& b = data.tensors[k];
    if (a.name != b.name || a.shape != b.shape) {
      throw CheckpointMismatchError("tensor " + std::to_string(k) + ": checkpoint has " +
                                    b.name + " " + to_string(b.shape) + ", model expects " +
                                    a.name + " " + to_string(a.shape));
    }
  }
  ordered_json meta;
  try {
    meta = ordered_json::parse(data.metadata);
  } catch (const ordered_json::exception& e) {
    throw CheckpointFormatError(std::string("checkpoint metadata: ") + e.what());
  }
  load_store(gen_.params(), data.tensors);
  load_store(disc_.params(), data.tensors);
  const auto restore_adam = [&](const ParameterStore<float>& store, AdamState<float>& adam,
                                std::uint64_t steps) {
    std::map<std::string, const NamedTensor*> by_name;
    for (const auto& t : data.tensors) by_name[t.name] = &t;
    adam.m.clear();
    adam.v.clear();
    adam.step = steps;
    if (steps == 0) return;
    for (const auto& p : store.params()) {
      adam.m.push_back(by_name.at("adam." + p.name + ".m")->data);
      adam.v.push_back(by_name.at("adam." + p.name + ".v")->data);
    }
  };
  try {
    restore_adam(gen_.params(), adam_g_, meta.at("adam_g_step").get<std::uint64_t>());
    restore_adam(disc_.params(), adam_d_, meta.at("adam_d_step").get<std::uint64_t>());
    step_ = meta.at("step").get<std::uint64_t>();
    rng_.set_state(meta.at("prng").get<std::string>());
  } catch (const ordered_json::exception& e) {
    throw CheckpointFormatError(std::string("checkpoint metadata: ") + e.what());
  }
}

Generator<float> load_generator(const CheckpointData& data, RunConfig* config) {
  RunConfig cfg;
  try {
    const auto meta = ordered_json::parse(data.metadata);
    cfg = parse_run_config(meta.at("config").dump());
  } catch (const ordered_json::exception& e) {
    throw CheckpointFormatError(std::string("checkpoint metadata: ") + e.what());
  } catch (const ConfigError& e) {
    throw CheckpointFormatError(std::string("checkpoint config: ") + e.what());
  }
  Generator<float> gen(cfg.model, generator_init_seed(cfg.seed));
  load_store(gen.params(), data.tensors);
  gen.params().set_requires_grad(false);
  if (config) *config = cfg;
  return gen;
}

}  // namespace layoutsynth
