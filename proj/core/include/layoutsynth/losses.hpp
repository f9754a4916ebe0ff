#pragma once

#include <span>
#include <vector>

#include "layoutsynth/networks.hpp"
#include "layoutsynth/tensor.hpp"

namespace layoutsynth {

inline constexpr double kDefaultLambda = 0.1;
inline constexpr double kDefaultTau = 0.5;

struct LossConfig {
  double lambda = kDefaultLambda;   // image-term weight
  double recon_weight = 1.0;
  double perceptual_weight = 1.0;
  bool operator==(const LossConfig&) const = default;
};

// Elementwise max(0, 1 - p) for real and max(0, 1 + p) for fake scores.
template <std::floating_point T>
Tensor<T> hinge_term(const Tensor<T>& scores, bool is_real);

// lambda * l_img + mean_i l_obj_i for one sample; p_img holds one element and
// p_obj may be undefined or empty (the object term is then dropped).
template <std::floating_point T>
Tensor<T> combined_adv(const Tensor<T>& p_img, const Tensor<T>& p_obj, double lambda,
                       bool is_real);

// lambda * l_img + (1/m) sum_i c_i * l_obj_i. Confidences below tau raise
// ContractError; with all c_i = 1 the result equals combined_adv bit for bit.
template <std::floating_point T>
Tensor<T> semi_weighted_adv(const Tensor<T>& p_img, const Tensor<T>& p_obj,
                            std::span<const double> confidences, double lambda,
                            bool is_real, double tau = kDefaultTau);

// Per-sample object confidences; an empty inner vector means annotated
// (weight 1 without a multiply).
using ConfidenceBatch = std::vector<std::vector<double>>;

// Sum over the batch of the real and fake adversarial terms. When
// confidences are given, they weight the real and fake object terms of the
// corresponding sample.
template <std::floating_point T>
Tensor<T> discriminator_loss(const DiscriminatorOutput<T>& real,
                             const DiscriminatorOutput<T>& fake, double lambda,
                             const ConfidenceBatch* confidences = nullptr,
                             double tau = kDefaultTau);

template <std::floating_point T>
struct GeneratorLossTerms {
  Tensor<T> total;
  double adversarial = 0;  // sum_n (lambda * p_img + mean p_obj)
  double recon = 0;        // batch mean of per-sample mean |syn - gt|
  double percep = 0;       // batch mean of per-sample mean feature |F(syn) - F(gt)|
};

// -sum_n [P_n - w_r * recon_n - w_p * percep_n] with per-sample means for
// the reconstruction and perceptual distances.
template <std::floating_point T>
GeneratorLossTerms<T> generator_loss(const Tensor<T>& syn, const Tensor<T>& gt,
                                     const DiscriminatorOutput<T>& scores,
                                     const FeatureExtractor<T>& extractor,
                                     const LossConfig& config);

// Per-sample mean absolute difference of two image batches [N x ...].
template <std::floating_point T>
std::vector<double> per_sample_l1(const Tensor<T>& a, const Tensor<T>& b);

}  // namespace layoutsynth
