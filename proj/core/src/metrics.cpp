#include "freeevent/metrics.hpp"

#include <algorithm>
#include <cmath>

#include "freeevent/errors.hpp"

namespace freeevent {

FidelityResult layout_fidelity(const Image& image, const std::vector<EntitySpec>& entities,
                               const std::vector<int>& labels, const ToyLabelModel& model) {
  if (entities.size() != labels.size()) throw ParameterError("layout_fidelity: one label per entity required");
  if (entities.empty()) throw ParameterError("layout_fidelity: no entities");
  const std::vector<int> pixel = model.label_image(image);
  FidelityResult out;
  for (std::size_t e = 0; e < entities.size(); ++e) {
    const Mask& m = entities[e].mask;
    if (m.height != image.height || m.width != image.width)
      throw ShapeError("layout_fidelity: mask and image geometry differ");
    double inside = 0.0, total = 0.0;
    for (std::size_t i = 0; i < pixel.size(); ++i) {
      if (pixel[i] != labels[e]) continue;
      total += 1.0;
      if (m.data[i] >= 0.5) inside += 1.0;
    }
    if (total == 0.0) out.missing_entity = true;
    out.score += inside / (total + kEnergyEps);
  }
  out.score /= static_cast<double>(entities.size());
  return out;
}

std::vector<double> area_resample(const std::vector<double>& gray, int h, int w, int out_h, int out_w) {
  if (static_cast<std::size_t>(h) * w != gray.size() || out_h < 1 || out_w < 1)
    throw ShapeError("area_resample: bad geometry");
  std::vector<double> out(static_cast<std::size_t>(out_h) * out_w, 0.0);
  const double sy = static_cast<double>(h) / out_h, sx = static_cast<double>(w) / out_w;
  for (int oy = 0; oy < out_h; ++oy)
    for (int ox = 0; ox < out_w; ++ox) {
      const double y0 = oy * sy, y1 = y0 + sy, x0 = ox * sx, x1 = x0 + sx;
      double acc = 0.0;
      for (int y = static_cast<int>(std::floor(y0)); y < std::min(h, static_cast<int>(std::ceil(y1))); ++y) {
        const double wy = std::min<double>(y + 1, y1) - std::max<double>(y, y0);
        for (int x = static_cast<int>(std::floor(x0)); x < std::min(w, static_cast<int>(std::ceil(x1))); ++x) {
          const double wx = std::min<double>(x + 1, x1) - std::max<double>(x, x0);
          acc += wy * wx * gray[static_cast<std::size_t>(y) * w + x];
        }
      }
      out[static_cast<std::size_t>(oy) * out_w + ox] = acc / (sy * sx);
    }
  return out;
}

double pearson(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size() || a.empty()) throw ShapeError("pearson: vectors differ in length");
  const double ma = mean(a), mb = mean(b);
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  if (saa <= 0.0 || sbb <= 0.0) return 0.0;
  return sab / std::sqrt(saa * sbb);
}

double structure_correlation(const Image& a, const Image& b) {
  return pearson(area_resample(to_grayscale(a), a.height, a.width, 8, 8),
                 area_resample(to_grayscale(b), b.height, b.width, 8, 8));
}

SignTest sign_test(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw ShapeError("sign_test: samples are not paired");
  SignTest t;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i] > b[i]) ++t.wins;
    else if (a[i] < b[i]) ++t.losses;
    else ++t.ties;
  }
  const int n = t.wins + t.losses;
  if (n == 0) return t;
  double p = 0.0;
  for (int k = t.wins; k <= n; ++k)
    p += std::exp(std::lgamma(n + 1.0) - std::lgamma(k + 1.0) - std::lgamma(n - k + 1.0) - n * std::log(2.0));
  t.p_value = std::min(1.0, p);
  return t;
}

double mean(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

}  // namespace freeevent
