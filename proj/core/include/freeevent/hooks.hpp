#pragma once

#include <compare>
#include <functional>
#include <map>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "freeevent/tensor.hpp"

namespace freeevent {

enum class Section { encoder, mid, decoder };

/// One U-Net layer: (section, block, layer). Printed as "enc0:0", "mid0:0", "dec2:1".
struct LayerAddress {
  Section section = Section::encoder;
  int block = 0;
  int layer = 0;

  auto operator<=>(const LayerAddress&) const = default;
};

std::string to_string(const LayerAddress& address);
/// Accepts "dec2:1", "decoder2:1", "mid:0" and "mid0:0".
LayerAddress parse_layer_address(std::string_view text);

/// Parses "dec1:[1,2]" style groups into addresses.
std::vector<LayerAddress> parse_layer_group(std::string_view text);

enum class Quantity { f, sa, ca };
std::string_view to_string(Quantity q);

/// Recorded per-layer quantities of one U-Net pass. f is C x h x w, sa is
/// heads x hw x hw and ca is heads x hw x n_tokens (post-softmax rows).
struct AttentionTrace {
  std::map<LayerAddress, Tensor> f;
  std::map<LayerAddress, Tensor> sa;
  std::map<LayerAddress, Tensor> ca;

  bool empty() const { return f.empty() && sa.empty() && ca.empty(); }
  std::size_t record_count() const { return f.size() + sa.size() + ca.size(); }
  const std::map<LayerAddress, Tensor>& of(Quantity q) const;
  std::map<LayerAddress, Tensor>& of(Quantity q);

  friend bool operator==(const AttentionTrace&, const AttentionTrace&) = default;
};

/// Callback applied to each cross-attention map after softmax and before the
/// weighted sum. The tensor is heads x hw x n_tokens and is edited in place.
using CrossAttentionTransform = std::function<void(const LayerAddress&, Tensor&)>;

struct InterventionSet {
  std::set<std::pair<LayerAddress, Quantity>> record;
  std::map<LayerAddress, Tensor> replace_f;
  std::map<LayerAddress, Tensor> replace_sa;
  CrossAttentionTransform transform_ca;

  bool empty() const { return record.empty() && replace_f.empty() && replace_sa.empty() && !transform_ca; }
  bool modifies() const { return !replace_f.empty() || !replace_sa.empty() || static_cast<bool>(transform_ca); }
  void record_at(const LayerAddress& address, Quantity q) { record.emplace(address, q); }
  bool records(const LayerAddress& address, Quantity q) const { return record.count({address, q}) != 0; }
};

}  // namespace freeevent
