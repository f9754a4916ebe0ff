#include "layoutsynth/losses.hpp"

#include <cmath>

#include "layoutsynth/ops.hpp"

namespace layoutsynth {
namespace {

template <std::floating_point T>
Tensor<T> image_term(const Tensor<T>& p_img, double lambda, bool is_real) {
  if (p_img.numel() != 1) {
    throw DimensionError("adversarial loss expects one image score, got " +
                         to_string(p_img.shape()));
  }
  return scale(sum(hinge_term(p_img, is_real)), lambda);
}

bool has_objects(const auto& p_obj) { return p_obj.defined() && p_obj.numel() > 0; }

// Per-sample [N] mean of |a - b| over everything but the batch axis.
template <std::floating_point T>
Tensor<T> per_sample_abs_sum(const Tensor<T>& a, const Tensor<T>& b) {
  const std::size_t n = a.dim(0);
  return reduce_sum(reshape(abs(sub(a, b)), Shape{n, a.numel() / n}), 1);
}

}  // namespace

template <std::floating_point T>
Tensor<T> hinge_term(const Tensor<T>& scores, bool is_real) {
  return relu(add_scalar(is_real ? scale(scores, -1.0) : scores, 1.0));
}

template <std::floating_point T>
Tensor<T> combined_adv(const Tensor<T>& p_img, const Tensor<T>& p_obj, double lambda,
                       bool is_real) {
  Tensor<T> loss = image_term(p_img, lambda, is_real);
  if (has_objects(p_obj)) loss = add(loss, mean(hinge_term(p_obj, is_real)));
  return loss;
}

template <std::floating_point T>
Tensor<T> semi_weighted_adv(const Tensor<T>& p_img, const Tensor<T>& p_obj,
                            std::span<const double> confidences, double lambda,
                            bool is_real, double tau) {
  Tensor<T> loss = image_term(p_img, lambda, is_real);
  if (!has_objects(p_obj)) {
    if (!confidences.empty()) {
      throw DimensionError("semi_weighted_adv: confidences given without object scores");
    }
    return loss;
  }
  if (confidences.size() != p_obj.numel()) {
    throw DimensionError("semi_weighted_adv: " + std::to_string(confidences.size()) +
                         " confidences for " + std::to_string(p_obj.numel()) + " objects");
  }
  std::vector<T> w(confidences.size());
  for (std::size_t i = 0; i < w.size(); ++i) {
    const double c = confidences[i];
    if (!(c >= tau && c <= 1.0)) {
      throw ContractError("semi_weighted_adv: confidence " + std::to_string(c) +
                          " outside [tau, 1] with tau = " + std::to_string(tau));
    }
    w[i] = static_cast<T>(c);
  }
  const Tensor<T> weights(p_obj.shape(), std::move(w));
  return add(loss, mean(mul(hinge_term(p_obj, is_real), weights)));
}

template <std::floating_point T>
Tensor<T> discriminator_loss(const DiscriminatorOutput<T>& real,
                             const DiscriminatorOutput<T>& fake, double lambda,
                             const ConfidenceBatch* confidences, double tau) {
  const std::size_t n = real.image_scores.numel();
  if (fake.image_scores.numel() != n || real.object_scores.size() != n ||
      fake.object_scores.size() != n) {
    throw DimensionError("discriminator_loss: real and fake batches differ in size");
  }
  if (confidences && confidences->size() != n) {
    throw DimensionError("discriminator_loss: confidence batch size mismatch");
  }
  Tensor<T> total;
  for (std::size_t i = 0; i < n; ++i) {
    const Tensor<T> pr = slice(real.image_scores, 0, i, i + 1);
    const Tensor<T> pf = slice(fake.image_scores, 0, i, i + 1);
    Tensor<T> lr, lf;
    if (confidences && !(*confidences)[i].empty()) {
      const auto& c = (*confidences)[i];
      lr = semi_weighted_adv(pr, real.object_scores[i], c, lambda, true, tau);
      lf = semi_weighted_adv(pf, fake.object_scores[i], c, lambda, false, tau);
    } else {
      lr = combined_adv(pr, real.object_scores[i], lambda, true);
      lf = combined_adv(pf, fake.object_scores[i], lambda, false);
    }
    const Tensor<T> sample = add(lr, lf);
    total = total.defined() ? add(total, sample) : sample;
  }
  return total;
}

template <std::floating_point T>
GeneratorLossTerms<T> generator_loss(const Tensor<T>& syn, const Tensor<T>& gt,
                                     const DiscriminatorOutput<T>& scores,
                                     const FeatureExtractor<T>& extractor,
                                     const LossConfig& config) {
  if (syn.shape() != gt.shape() || syn.rank() != 4) {
    throw DimensionError("generator_loss: synthesized " + to_string(syn.shape()) +
                         " vs ground truth " + to_string(gt.shape()));
  }
  const std::size_t n = syn.dim(0);
  if (scores.image_scores.numel() != n || scores.object_scores.size() != n) {
    throw DimensionError("generator_loss: score batch size mismatch");
  }
  GeneratorLossTerms<T> out;

  Tensor<T> adv;
  for (std::size_t i = 0; i < n; ++i) {
    Tensor<T> p = scale(slice(scores.image_scores, 0, i, i + 1), config.lambda);
    if (has_objects(scores.object_scores[i])) p = add(p, mean(scores.object_scores[i]));
    adv = adv.defined() ? add(adv, p) : p;
  }
  out.adversarial = static_cast<double>(adv.item());

  const double per_image = static_cast<double>(syn.numel() / n);
  const Tensor<T> recon = scale(per_sample_abs_sum(syn, gt), 1.0 / per_image);

  const auto fs = extractor.forward(syn);
  std::vector<Tensor<T>> fg;
  {
    NoGradGuard no_grad;
    fg = extractor.forward(gt);
  }
  Tensor<T> feat;
  double feature_count = 0;
  for (std::size_t s = 0; s < fs.size(); ++s) {
    const Tensor<T> d = per_sample_abs_sum(fs[s], fg[s]);
    feat = feat.defined() ? add(feat, d) : d;
    feature_count += static_cast<double>(fs[s].numel() / n);
  }
  const Tensor<T> percep = scale(feat, 1.0 / feature_count);

  const Tensor<T> recon_sum = sum(recon), percep_sum = sum(percep);
  out.recon = static_cast<double>(recon_sum.item()) / static_cast<double>(n);
  out.percep = static_cast<double>(percep_sum.item()) / static_cast<double>(n);
  out.total = add(add(scale(adv, -1.0), scale(recon_sum, config.recon_weight)),
                  scale(percep_sum, config.perceptual_weight));
  return out;
}

template <std::floating_point T>
std::vector<double> per_sample_l1(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape() || a.rank() == 0) {
    throw DimensionError("per_sample_l1: " + to_string(a.shape()) + " vs " +
                         to_string(b.shape()));
  }
  const std::size_t n = a.dim(0), per = a.numel() / n;
  std::vector<double> out(n, 0.0);
  const auto da = a.data(), db = b.data();
  for (std::size_t i = 0; i < n; ++i) {
    double acc = 0;
    for (std::size_t j = 0; j < per; ++j) {
      acc += std::abs(double(da[i * per + j]) - double(db[i * per + j]));
    }
    out[i] = acc / static_cast<double>(per);
  }
  return out;
}

#define LAYOUTSYNTH_INSTANTIATE_LOSSES(T)                                                 \
  template Tensor<T> hinge_term(const Tensor<T>&, bool);                                  \
  template Tensor<T> combined_adv(const Tensor<T>&, const Tensor<T>&, double, bool);      \
  template Tensor<T> semi_weighted_adv(const Tensor<T>&, const Tensor<T>&,                \
                                       std::span<const double>, double, bool, double);    \
  template Tensor<T> discriminator_loss(const DiscriminatorOutput<T>&,                    \
                                        const DiscriminatorOutput<T>&, double,            \
                                        const ConfidenceBatch*, double);                  \
  template GeneratorLossTerms<T> generator_loss(const Tensor<T>&, const Tensor<T>&,       \
                                                const DiscriminatorOutput<T>&,            \
                                                const FeatureExtractor<T>&,               \
                                                const LossConfig&);                       \
  template std::vector<double> per_sample_l1(const Tensor<T>&, const Tensor<T>&);

LAYOUTSYNTH_INSTANTIATE_LOSSES(float)
LAYOUTSYNTH_INSTANTIATE_LOSSES(double)

}  // namespace layoutsynth
