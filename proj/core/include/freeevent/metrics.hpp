#pragma once

#include <vector>

#include "freeevent/image.hpp"
#include "freeevent/switching.hpp"
#include "freeevent/toy_data.hpp"

namespace freeevent {

struct FidelityResult {
  double score = 0.0;
  /// Set when some entity has no detected pixels at all.
  bool missing_entity = false;
};

/// Mean over entities of (pixels labelled as the entity inside its mask) /
/// (all pixels labelled as the entity + eps). `labels[i]` is entity i's
/// palette index. Masks must match the image geometry.
FidelityResult layout_fidelity(const Image& image, const std::vector<EntitySpec>& entities,
                               const std::vector<int>& labels, const ToyLabelModel& model);

/// Box-filter resampling of grayscale to out_h x out_w (any ratio).
std::vector<double> area_resample(const std::vector<double>& gray, int h, int w, int out_h, int out_w);

/// Pearson correlation of the 8x8 area-downsampled grayscale images; 0 when
/// either side is constant.
double structure_correlation(const Image& a, const Image& b);

double pearson(const std::vector<double>& a, const std::vector<double>& b);

struct SignTest {
  int wins = 0;
  int losses = 0;
  int ties = 0;
  /// One-sided P(X >= wins) for X ~ Binomial(wins + losses, 1/2).
  double p_value = 1.0;
};

/// Paired one-sided sign test of "a > b"; ties are dropped.
SignTest sign_test(const std::vector<double>& a, const std::vector<double>& b);

double mean(const std::vector<double>& v);

}  // namespace freeevent
