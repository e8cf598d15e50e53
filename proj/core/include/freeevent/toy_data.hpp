#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "freeevent/image.hpp"
#include "freeevent/switching.hpp"
#include "freeevent/train.hpp"

namespace freeevent {

// Toy shapes domain: 16x16 RGB images on a black background. An entity's
// identity is its color word, its pose is its shape.

inline constexpr int kToyImageSize = 16;

struct ToyColor {
  std::string name;
  std::array<double, 3> rgb;
};
const std::vector<ToyColor>& toy_palette();
int toy_color_index(std::string_view name);  // ParameterError when unknown

enum class ToyShape { disk, square, bar, pillar, ring, cross, ell, tee, wedge, frame };
inline constexpr int kToyShapeCount = 10;
std::string_view to_string(ToyShape shape);
ToyShape parse_toy_shape(std::string_view name);

/// Half-open pixel box [x0, x1) x [y0, y1).
struct Box {
  int x0 = 0, y0 = 0, x1 = 0, y1 = 0;
  int width() const { return x1 - x0; }
  int height() const { return y1 - y0; }
  friend bool operator==(const Box&, const Box&) = default;
};

struct ToyEntity {
  ToyShape shape = ToyShape::disk;
  int color = 0;  // index into toy_palette()
  Box box;
};

struct ToyScene {
  int size = kToyImageSize;
  std::vector<ToyEntity> entities;  // later entities are drawn on top
};

struct RenderedScene {
  Image image;
  std::vector<Mask> masks;  // visible pixels of each entity
};

/// Shape coverage of a box, before occlusion.
Mask shape_mask(ToyShape shape, const Box& box, int size);
RenderedScene render_scene(const ToyScene& scene);

/// "red disk and blue bar" style caption; `spans` index the embedded prompt
/// (start token = 0), one per entity.
struct Caption {
  std::vector<int> token_ids;  // without the start token
  std::vector<TokenSpan> spans;
};
Caption caption_for(const ToyScene& scene, bool with_prefix = false);
/// Same as caption_for but with colors replaced (entity order preserved).
Caption caption_with_colors(const ToyScene& scene, const std::vector<int>& colors);

/// Random 1-3 entity scenes with captions; deterministic in `seed`.
ToyDataset make_shapes_dataset(int count, std::uint64_t seed);

/// Jittered rendering of one of the built-in event templates.
ToyScene toy_event_scene(int event_class, std::uint64_t seed);
inline constexpr int kToyEventClasses = 10;
std::string toy_event_name(int event_class);

/// Writes manifest.tsv plus images/ and masks/ for n_classes x n_refs samples.
void make_toy_benchmark(const std::filesystem::path& root, int n_classes, int n_refs, std::uint64_t seed);

/// Entity colors swapped for others not present in the scene, deterministic in `seed`.
std::vector<int> switched_colors(const ToyScene& scene, std::uint64_t seed);

/// The shipped ablation scenario: a two-entity reference and a target prompt
/// that switches both entities' colors.
struct ToyScenario {
  ToyScene reference_scene;
  RenderedScene reference;
  Caption target;
  std::vector<EntitySpec> entities;
  std::vector<int> target_colors;
};
ToyScenario toy_ablation_scenario();

/// Entity specs binding each caption span to the rendered masks.
std::vector<EntitySpec> entities_for(const RenderedScene& rendered, const Caption& caption);

/// Nearest-palette pixel classifier. Dark pixels and pixels far from every
/// palette color are background (-1).
class ToyLabelModel {
public:
  explicit ToyLabelModel(double max_distance = 0.45, double dark_threshold = 0.25)
      : max_distance_(max_distance), dark_threshold_(dark_threshold) {}
  int classify(double r, double g, double b) const;
  std::vector<int> label_image(const Image& image) const;
  /// Palette index of the color word inside the span of `token_ids` (which
  /// include the start token); ParameterError when the span has none.
  int entity_label(const std::vector<int>& token_ids, const TokenSpan& span) const;

private:
  double max_distance_;
  double dark_threshold_;
};

}  // namespace freeevent
