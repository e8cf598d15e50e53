#include "freeevent/switching.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <memory>

#include "freeevent/errors.hpp"

namespace freeevent {

namespace {

std::vector<LayerAddress> energy_layers_of(const GuidanceConfig& cfg, const std::map<LayerAddress, Tensor>& ca) {
  if (!cfg.energy_layers.empty()) return cfg.energy_layers;
  std::vector<LayerAddress> out;
  for (const auto& [a, _] : ca) out.push_back(a);
  return out;
}

int side_of(int positions) {
  const int s = static_cast<int>(std::lround(std::sqrt(static_cast<double>(positions))));
  if (s * s != positions) throw ShapeError("attention map with " + std::to_string(positions) + " positions is not square");
  return s;
}

// Sum over entities of the energy of one layer's probabilities (1 x heads x P x tokens).
ad::Var layer_energy(const ad::Var& probs, const std::vector<EntitySpec>& entities,
                     const std::vector<std::vector<double>>& masks) {
  const Shape& s = probs.shape();
  const int heads = s[1], pos = s[2], tok = s[3];
  std::vector<double> S(entities.size()), M(entities.size());
  double total = 0.0;
  for (std::size_t e = 0; e < entities.size(); ++e) {
    const std::vector<double> c = entity_attention(probs.value().reshaped({heads, pos, tok}), entities[e].span);
    for (int p = 0; p < pos; ++p) {
      S[e] += c[static_cast<std::size_t>(p)];
      M[e] += c[static_cast<std::size_t>(p)] * masks[e][static_cast<std::size_t>(p)];
    }
    const double r = M[e] / (S[e] + kEnergyEps);
    total += (1.0 - r) * (1.0 - r);
  }
  return ad::Var::make(Tensor({1}, total), {probs}, [probs, entities, masks, S, M, heads, pos, tok](ad::Node& n) {
    auto& node = *probs.node();
    if (!node.requires_grad) return;
    Tensor& g = node.grad_buffer();
    const double up = n.grad[0];
    for (std::size_t e = 0; e < entities.size(); ++e) {
      const double denom = S[e] + kEnergyEps;
      const double r = M[e] / denom;
      const double coef = -2.0 * (1.0 - r) / denom / heads * up;
      const TokenSpan& span = entities[e].span;
      for (int p = 0; p < pos; ++p) {
        const double d = coef * (masks[e][static_cast<std::size_t>(p)] - r);
        for (int h = 0; h < heads; ++h)
          for (int j = span.first; j <= span.last; ++j)
            g[(static_cast<std::size_t>(h) * pos + p) * tok + j] += d;
      }
    }
  });
}

void mask_columns(Tensor& ca, const std::vector<std::vector<double>>& masks, const std::vector<TokenSpan>& spans,
                  bool renormalize) {
  const int heads = ca.dim(0), pos = ca.dim(1), tok = ca.dim(2);
  for (std::size_t e = 0; e < spans.size(); ++e)
    for (int hd = 0; hd < heads; ++hd)
      for (int p = 0; p < pos; ++p) {
        const double m = masks[e][static_cast<std::size_t>(p)];
        if (m == 1.0) continue;
        for (int j = spans[e].first; j <= spans[e].last; ++j) ca[(static_cast<std::size_t>(hd) * pos + p) * tok + j] *= m;
      }
  if (!renormalize) return;
  for (int hd = 0; hd < heads; ++hd)
    for (int p = 0; p < pos; ++p) {
      double* row = ca.data() + (static_cast<std::size_t>(hd) * pos + p) * tok;
      double sum = 0.0;
      for (int j = 0; j < tok; ++j) sum += row[j];
      if (sum > 0.0)
        for (int j = 0; j < tok; ++j) row[j] /= sum;
    }
}

void check_spans(const std::vector<TokenSpan>& spans, int tok, const std::string& where) {
  for (const TokenSpan& s : spans)
    if (s.first < 0 || s.last >= tok || s.last < s.first)
      throw IndexError(where + ": token span " + std::to_string(s.first) + "-" + std::to_string(s.last) +
                       " outside " + std::to_string(tok) + " tokens");
}

}  // namespace

void validate_entities(const std::vector<EntitySpec>& entities, int n_tokens, int height, int width) {
  for (std::size_t i = 0; i < entities.size(); ++i) {
    const EntitySpec& e = entities[i];
    const std::string name = "entity " + std::to_string(e.entity_id);
    if (e.span.first < 1 || e.span.last < e.span.first || e.span.last >= n_tokens)
      throw IndexError(name + ": token span " + std::to_string(e.span.first) + "-" + std::to_string(e.span.last) +
                       " outside prompt tokens 1-" + std::to_string(n_tokens - 1));
    if (e.mask.height != height || e.mask.width != width)
      throw ShapeError(name + ": mask is " + std::to_string(e.mask.height) + "x" + std::to_string(e.mask.width) +
                       ", reference is " + std::to_string(height) + "x" + std::to_string(width));
    if (e.mask.binarized().sum() == 0.0) throw DataError(name + ": mask is empty");
    for (std::size_t j = 0; j < i; ++j) {
      const TokenSpan& o = entities[j].span;
      if (e.span.first <= o.last && o.first <= e.span.last)
        throw ParameterError(name + ": token span overlaps entity " + std::to_string(entities[j].entity_id));
    }
  }
}

std::vector<double> resample_mask(const Mask& mask, int h, int w, ResampleMode mode) {
  if (h <= 0 || w <= 0 || h > mask.height || w > mask.width || mask.height % h || mask.width % w)
    throw ShapeError("cannot resample a " + std::to_string(mask.height) + "x" + std::to_string(mask.width) +
                     " mask to " + std::to_string(h) + "x" + std::to_string(w));
  const int fy = mask.height / h, fx = mask.width / w;
  std::vector<double> out(static_cast<std::size_t>(h) * w, 0.0);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double acc = 0.0, mx = 0.0;
      for (int dy = 0; dy < fy; ++dy)
        for (int dx = 0; dx < fx; ++dx) {
          const double v = mask.at(y * fy + dy, x * fx + dx) >= 0.5 ? 1.0 : 0.0;
          acc += v;
          mx = std::max(mx, v);
        }
      out[static_cast<std::size_t>(y) * w + x] = mode == ResampleMode::coverage ? mx : acc / (fy * fx);
    }
  return out;
}

double attention_energy(const std::vector<double>& ca, const std::vector<double>& mask, double eps) {
  if (ca.size() != mask.size())
    throw ShapeError("attention_energy: " + std::to_string(ca.size()) + " attention values vs " +
                     std::to_string(mask.size()) + " mask values");
  double total = 0.0, inside = 0.0;
  for (std::size_t p = 0; p < ca.size(); ++p) {
    if (ca[p] < 0.0) throw DataError("attention_energy: negative attention at position " + std::to_string(p));
    total += ca[p];
    inside += ca[p] * mask[p];
  }
  const double r = inside / (total + eps);
  return (1.0 - r) * (1.0 - r);
}

std::vector<double> entity_attention(const Tensor& ca, const TokenSpan& span) {
  const int heads = ca.dim(0), pos = ca.dim(1), tok = ca.dim(2);
  if (span.first < 0 || span.last >= tok || span.last < span.first)
    throw IndexError("token span " + std::to_string(span.first) + "-" + std::to_string(span.last) + " outside " +
                     std::to_string(tok) + " tokens");
  std::vector<double> out(static_cast<std::size_t>(pos), 0.0);
  for (int h = 0; h < heads; ++h)
    for (int p = 0; p < pos; ++p)
      for (int j = span.first; j <= span.last; ++j)
        out[static_cast<std::size_t>(p)] += ca[(static_cast<std::size_t>(h) * pos + p) * tok + j];
  for (double& v : out) v /= heads;
  return out;
}

double total_energy(const AttentionTrace& trace, const std::vector<EntitySpec>& entities, const GuidanceConfig& cfg) {
  const auto layers = energy_layers_of(cfg, trace.ca);
  if (layers.empty()) throw AddressError("total_energy: trace holds no cross-attention maps");
  double acc = 0.0;
  for (const LayerAddress& a : layers) {
    const auto it = trace.ca.find(a);
    if (it == trace.ca.end()) throw AddressError("total_energy: no cross-attention recorded at " + to_string(a));
    const int side = side_of(it->second.dim(1));
    for (const EntitySpec& e : entities)
      acc += attention_energy(entity_attention(it->second, e.span), resample_mask(e.mask, side, side, ResampleMode::area));
  }
  return acc / static_cast<double>(layers.size());
}

EnergyGradient energy_and_gradient(const LatentTensor& z_t, int t, const PromptEmbedding& prompt,
                                   const std::vector<EntitySpec>& entities, const GuidanceConfig& cfg,
                                   const UNet& net, double energy_scale) {
  if (z_t.rank() != 3) throw ShapeError("energy_gradient: latent must be C x H x W");
  const ad::Var z(z_t.reshaped({1, z_t.dim(0), z_t.dim(1), z_t.dim(2)}), true);
  const ad::Var text(prompt.embeddings.reshaped({1, prompt.n_tokens(), prompt.embeddings.dim(1)}));
  std::map<LayerAddress, ad::Var> captured;
  net.forward(z, {t}, text, nullptr, nullptr, &captured);

  std::vector<LayerAddress> layers;
  if (cfg.energy_layers.empty()) {
    for (const auto& [a, _] : captured) layers.push_back(a);
  } else {
    layers = cfg.energy_layers;
  }
  if (layers.empty()) throw AddressError("energy_gradient: network has no cross-attention layers");

  std::vector<ad::Var> terms;
  std::vector<double> values;
  for (const LayerAddress& a : layers) {
    const auto it = captured.find(a);
    if (it == captured.end()) {
      net.layer(a);  // throws with the list of valid addresses when absent
      throw AddressError("energy layer " + to_string(a) + " has no cross-attention");
    }
    const int side = side_of(it->second.shape()[2]);
    std::vector<std::vector<double>> masks;
    for (const EntitySpec& e : entities) masks.push_back(resample_mask(e.mask, side, side, ResampleMode::area));
    terms.push_back(layer_energy(it->second, entities, masks));
    values.push_back(terms.back().value()[0]);
  }
  ad::Var energy = ad::scale(ad::mean_of(terms), energy_scale);
  ad::backward(energy);

  EnergyGradient out;
  out.energy = energy.value()[0];
  out.grad = z.grad().empty() ? Tensor::zeros_like(z_t) : z.grad().reshaped(z_t.shape());
  if (!out.grad.all_finite() || !std::isfinite(out.energy)) {
    std::string where;
    for (std::size_t i = 0; i < layers.size(); ++i) {
      const auto& g = captured.at(layers[i]).grad();
      if (!std::isfinite(values[i]) || (!g.empty() && !g.all_finite())) where += " " + to_string(layers[i]);
    }
    throw NumericError("energy gradient at t=" + std::to_string(t) + " is not finite" +
                       (where.empty() ? std::string(" (upstream of cross-attention)") : "; offending layers:" + where));
  }
  return out;
}

LatentTensor energy_gradient(const LatentTensor& z_t, int t, const PromptEmbedding& prompt,
                             const std::vector<EntitySpec>& entities, const GuidanceConfig& cfg, const UNet& net) {
  return energy_and_gradient(z_t, t, prompt, entities, cfg, net).grad;
}

LatentTensor guidance_update(const LatentTensor& z_t, const LatentTensor& grad, int t, const GuidanceConfig& cfg,
                             const NoiseSchedule& s) {
  require_same_shape(z_t, grad, "guidance_update");
  const double sigma = sigma_t(t, s);
  const double k = sigma * sigma * cfg.eta;
  LatentTensor out = z_t;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= k * grad[i];
  return out;
}

void regulate_cross_attention(Tensor& ca, const std::vector<EntitySpec>& entities, int h, int w, bool renormalize) {
  if (ca.rank() != 3 || ca.dim(1) != h * w)
    throw ShapeError("regulate_cross_attention: map " + shape_string(ca.shape()) + " does not have " +
                     std::to_string(h) + "x" + std::to_string(w) + " positions");
  std::vector<TokenSpan> spans;
  std::vector<std::vector<double>> masks;
  for (const EntitySpec& e : entities) {
    spans.push_back(e.span);
    masks.push_back(resample_mask(e.mask, h, w, ResampleMode::coverage));
  }
  check_spans(spans, ca.dim(2), "regulate_cross_attention");
  mask_columns(ca, masks, spans, renormalize);
}

CrossAttentionTransform make_regulation_transform(const std::vector<EntitySpec>& entities, const UNet& net,
                                                  bool renormalize) {
  // Resolution -> per-entity coverage masks.
  auto masks = std::make_shared<std::map<int, std::vector<std::vector<double>>>>();
  for (const LayerInfo& l : net.layers()) {
    if (!l.attention || masks->count(l.resolution)) continue;
    auto& per = (*masks)[l.resolution];
    for (const EntitySpec& e : entities)
      per.push_back(resample_mask(e.mask, l.resolution, l.resolution, ResampleMode::coverage));
  }
  std::vector<TokenSpan> spans;
  for (const EntitySpec& e : entities) spans.push_back(e.span);
  return [masks, spans, renormalize](const LayerAddress& a, Tensor& ca) {
    const auto it = masks->find(side_of(ca.dim(1)));
    if (it == masks->end()) throw ShapeError("no regulation masks for layer " + to_string(a));
    check_spans(spans, ca.dim(2), "regulation at " + to_string(a));
    mask_columns(ca, it->second, spans, renormalize);
  };
}

double attention_leakage(const AttentionTrace& trace, const std::vector<EntitySpec>& entities) {
  if (trace.ca.empty() || entities.empty()) return 0.0;
  double acc = 0.0;
  int n = 0;
  for (const auto& [a, ca] : trace.ca) {
    const int side = side_of(ca.dim(1));
    for (const EntitySpec& e : entities) {
      const auto c = entity_attention(ca, e.span);
      const auto m = resample_mask(e.mask, side, side, ResampleMode::coverage);
      double total = 0.0, outside = 0.0;
      for (std::size_t p = 0; p < c.size(); ++p) {
        total += c[p];
        outside += c[p] * (1.0 - m[p]);
      }
      acc += outside / (total + kEnergyEps);
      ++n;
    }
  }
  return acc / n;
}

}  // namespace freeevent
