#include "freeevent/toy_data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <set>

#include "freeevent/errors.hpp"

namespace freeevent {

namespace {

constexpr std::array<std::string_view, kToyShapeCount> kShapeNames = {
    "disk", "square", "bar", "pillar", "ring", "cross", "ell", "tee", "wedge", "frame"};

struct TemplateEntity {
  ToyShape shape;
  Box box;
};

// Event layouts on the 16x16 canvas.
const std::vector<std::pair<std::string, std::vector<TemplateEntity>>>& templates() {
  using S = ToyShape;
  static const std::vector<std::pair<std::string, std::vector<TemplateEntity>>> t = {
      {"ride", {{S::disk, {5, 1, 10, 6}}, {S::bar, {2, 9, 14, 12}}}},
      {"stand-by", {{S::pillar, {3, 2, 6, 13}}, {S::square, {9, 7, 14, 12}}}},
      {"carry", {{S::disk, {2, 2, 6, 6}}, {S::disk, {10, 2, 14, 6}}, {S::bar, {2, 10, 14, 12}}}},
      {"throw", {{S::cross, {1, 1, 7, 7}}, {S::ring, {8, 8, 14, 14}}}},
      {"lean", {{S::ell, {2, 3, 8, 12}}, {S::tee, {9, 3, 14, 9}}}},
      {"kick", {{S::wedge, {1, 4, 7, 12}}, {S::pillar, {9, 1, 12, 10}}, {S::disk, {10, 11, 14, 15}}}},
      {"enclose", {{S::frame, {1, 1, 15, 15}}, {S::disk, {5, 5, 11, 11}}}},
      {"dance", {{S::square, {6, 1, 10, 5}}, {S::square, {1, 6, 5, 10}}, {S::square, {11, 6, 15, 10}},
                 {S::square, {6, 11, 10, 15}}}},
      {"table", {{S::bar, {2, 2, 14, 4}}, {S::pillar, {3, 5, 5, 14}}, {S::pillar, {11, 5, 13, 14}}}},
      {"juggle", {{S::ring, {1, 8, 7, 14}}, {S::bar, {7, 2, 15, 4}}, {S::cross, {9, 8, 14, 13}}}},
  };
  return t;
}

Box shifted(Box b, int dx, int dy, int size) {
  dx = std::clamp(dx, -b.x0, size - b.x1);
  dy = std::clamp(dy, -b.y0, size - b.y1);
  return {b.x0 + dx, b.y0 + dy, b.x1 + dx, b.y1 + dy};
}

Box random_box(ToyShape shape, int size, std::mt19937_64& rng) {
  auto uni = [&](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };
  int w = uni(4, 8), h = uni(4, 8);
  if (shape == ToyShape::bar) {
    w = uni(7, 12);
    h = uni(2, 3);
  } else if (shape == ToyShape::pillar) {
    w = uni(2, 3);
    h = uni(7, 12);
  } else if (shape == ToyShape::ring || shape == ToyShape::frame) {
    w = uni(5, 9);
    h = uni(5, 9);
  }
  const int x0 = uni(0, size - w), y0 = uni(0, size - h);
  return {x0, y0, x0 + w, y0 + h};
}

std::string sample_name(int i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "s%05d.png", i);
  return buf;
}

}  // namespace

const std::vector<ToyColor>& toy_palette() {
  static const std::vector<ToyColor> p = {
      {"red", {1.0, 0.0, 0.0}},  {"green", {0.0, 1.0, 0.0}}, {"blue", {0.0, 0.0, 1.0}},
      {"yellow", {1.0, 1.0, 0.0}}, {"cyan", {0.0, 1.0, 1.0}}, {"magenta", {1.0, 0.0, 1.0}},
  };
  return p;
}

int toy_color_index(std::string_view name) {
  const auto& p = toy_palette();
  for (std::size_t i = 0; i < p.size(); ++i)
    if (p[i].name == name) return static_cast<int>(i);
  throw ParameterError("unknown toy color '" + std::string(name) + "'");
}

std::string_view to_string(ToyShape shape) { return kShapeNames[static_cast<std::size_t>(shape)]; }

ToyShape parse_toy_shape(std::string_view name) {
  for (std::size_t i = 0; i < kShapeNames.size(); ++i)
    if (kShapeNames[i] == name) return static_cast<ToyShape>(i);
  throw ParameterError("unknown toy shape '" + std::string(name) + "'");
}

Mask shape_mask(ToyShape shape, const Box& b, int size) {
  Mask m(size, size);
  const double cx = 0.5 * (b.x0 + b.x1), cy = 0.5 * (b.y0 + b.y1);
  const double rx = 0.5 * b.width(), ry = 0.5 * b.height();
  const int tx = std::max(1, b.width() / 3), ty = std::max(1, b.height() / 3);
  for (int y = std::max(0, b.y0); y < std::min(size, b.y1); ++y)
    for (int x = std::max(0, b.x0); x < std::min(size, b.x1); ++x) {
      const double u = (x + 0.5 - cx) / rx, v = (y + 0.5 - cy) / ry;
      const int lx = x - b.x0, ly = y - b.y0;
      bool in = false;
      switch (shape) {
        case ToyShape::disk: in = u * u + v * v <= 1.0; break;
        case ToyShape::square:
        case ToyShape::bar:
        case ToyShape::pillar: in = true; break;
        case ToyShape::ring: {
          const double iu = (x + 0.5 - cx) / std::max(0.5, rx - 1.5), iv = (y + 0.5 - cy) / std::max(0.5, ry - 1.5);
          in = u * u + v * v <= 1.0 && iu * iu + iv * iv > 1.0;
          break;
        }
        case ToyShape::cross:
          in = std::abs(x + 0.5 - cx) <= 0.5 * tx + 0.01 || std::abs(y + 0.5 - cy) <= 0.5 * ty + 0.01;
          break;
        case ToyShape::ell: in = lx < tx || ly >= b.height() - ty; break;
        case ToyShape::tee: in = ly < ty || std::abs(x + 0.5 - cx) <= 0.5 * tx + 0.01; break;
        case ToyShape::wedge: in = (lx + 0.5) * b.height() <= (ly + 0.5) * b.width() + 1e-9; break;
        case ToyShape::frame: in = lx == 0 || ly == 0 || lx == b.width() - 1 || ly == b.height() - 1; break;
      }
      if (in) m.at(y, x) = 1.0;
    }
  return m;
}

RenderedScene render_scene(const ToyScene& scene) {
  RenderedScene out{Image(scene.size, scene.size, 3, 0.0), {}};
  std::vector<int> owner(static_cast<std::size_t>(scene.size) * scene.size, -1);
  for (std::size_t e = 0; e < scene.entities.size(); ++e) {
    const Mask m = shape_mask(scene.entities[e].shape, scene.entities[e].box, scene.size);
    for (std::size_t i = 0; i < m.data.size(); ++i)
      if (m.data[i] > 0.5) owner[i] = static_cast<int>(e);
  }
  for (std::size_t e = 0; e < scene.entities.size(); ++e) {
    Mask m(scene.size, scene.size);
    const auto& rgb = toy_palette().at(static_cast<std::size_t>(scene.entities[e].color)).rgb;
    for (std::size_t i = 0; i < owner.size(); ++i) {
      if (owner[i] != static_cast<int>(e)) continue;
      m.data[i] = 1.0;
      for (int c = 0; c < 3; ++c) out.image.data[i * 3 + static_cast<std::size_t>(c)] = rgb[static_cast<std::size_t>(c)];
    }
    out.masks.push_back(std::move(m));
  }
  return out;
}

Caption caption_with_colors(const ToyScene& scene, const std::vector<int>& colors) {
  if (colors.size() != scene.entities.size())
    throw ParameterError("caption_with_colors: " + std::to_string(colors.size()) + " colors for " +
                         std::to_string(scene.entities.size()) + " entities");
  const Vocabulary& vocab = toy_vocabulary();
  Caption c;
  for (std::size_t e = 0; e < scene.entities.size(); ++e) {
    if (e > 0) c.token_ids.push_back(vocab.id("and"));
    const int first = static_cast<int>(c.token_ids.size()) + 1;
    c.token_ids.push_back(vocab.id(toy_palette().at(static_cast<std::size_t>(colors.at(e))).name));
    c.token_ids.push_back(vocab.id(to_string(scene.entities[e].shape)));
    c.spans.push_back({first, first + 1});
  }
  return c;
}

Caption caption_for(const ToyScene& scene, bool with_prefix) {
  std::vector<int> colors;
  for (const ToyEntity& e : scene.entities) colors.push_back(e.color);
  Caption c = caption_with_colors(scene, colors);
  if (with_prefix) {
    const Vocabulary& vocab = toy_vocabulary();
    c.token_ids.insert(c.token_ids.begin(), {vocab.id("a"), vocab.id("photo"), vocab.id("of")});
    for (TokenSpan& s : c.spans) {
      s.first += 3;
      s.last += 3;
    }
  }
  return c;
}

ToyDataset make_shapes_dataset(int count, std::uint64_t seed) {
  if (count < 1) throw ParameterError("make_shapes_dataset: count must be positive");
  std::mt19937_64 rng(seed);
  auto uni = [&](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };
  ToyDataset ds;
  while (static_cast<int>(ds.samples.size()) < count) {
    ToyScene scene;
    const int n = uni(1, 3);
    std::vector<int> colors(toy_palette().size());
    for (std::size_t i = 0; i < colors.size(); ++i) colors[i] = static_cast<int>(i);
    std::shuffle(colors.begin(), colors.end(), rng);
    for (int e = 0; e < n; ++e) {
      const auto shape = static_cast<ToyShape>(uni(0, kToyShapeCount - 1));
      scene.entities.push_back({shape, colors[static_cast<std::size_t>(e)], random_box(shape, scene.size, rng)});
    }
    const bool prefix = uni(0, 9) < 3;
    RenderedScene r = render_scene(scene);
    // Reject heavy occlusion: every entity keeps at least 60% of its pixels.
    bool ok = true;
    for (std::size_t e = 0; e < scene.entities.size(); ++e) {
      const double full = shape_mask(scene.entities[e].shape, scene.entities[e].box, scene.size).sum();
      if (r.masks[e].sum() < 0.6 * full) ok = false;
    }
    if (!ok) continue;
    LabeledImage s;
    s.name = sample_name(static_cast<int>(ds.samples.size()));
    s.image = std::move(r.image);
    s.token_ids = caption_for(scene, prefix).token_ids;
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

std::string toy_event_name(int event_class) {
  return templates().at(static_cast<std::size_t>(event_class)).first;
}

ToyScene toy_event_scene(int event_class, std::uint64_t seed) {
  const auto& tpl = templates().at(static_cast<std::size_t>(event_class)).second;
  std::mt19937_64 rng(seed);
  auto uni = [&](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };
  ToyScene scene;
  std::vector<int> colors(toy_palette().size());
  for (std::size_t i = 0; i < colors.size(); ++i) colors[i] = static_cast<int>(i);
  std::shuffle(colors.begin(), colors.end(), rng);
  const int gdx = uni(-2, 2), gdy = uni(-2, 2);
  for (std::size_t e = 0; e < tpl.size(); ++e) {
    Box b = tpl[e].box;
    // size jitter keeps thin shapes thin
    const int grow_x = tpl[e].box.width() > 3 ? uni(-1, 1) : 0;
    const int grow_y = tpl[e].box.height() > 3 ? uni(-1, 1) : 0;
    b.x1 = std::clamp(b.x1 + grow_x, b.x0 + 2, scene.size);
    b.y1 = std::clamp(b.y1 + grow_y, b.y0 + 2, scene.size);
    b = shifted(b, gdx + uni(-1, 1), gdy + uni(-1, 1), scene.size);
    scene.entities.push_back({tpl[e].shape, colors[e], b});
  }
  return scene;
}

std::vector<int> switched_colors(const ToyScene& scene, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const int n_colors = static_cast<int>(toy_palette().size());
  std::set<int> used;
  for (const ToyEntity& e : scene.entities) used.insert(e.color);
  std::vector<int> out;
  for (const ToyEntity& e : scene.entities) {
    std::vector<int> options;
    for (int c = 0; c < n_colors; ++c)
      if (!used.count(c) && std::find(out.begin(), out.end(), c) == out.end()) options.push_back(c);
    // crowded scene: settle for any color other than the entity's own
    if (options.empty())
      for (int c = 0; c < n_colors; ++c)
        if (c != e.color && std::find(out.begin(), out.end(), c) == out.end()) options.push_back(c);
    if (options.empty()) throw ParameterError("switched_colors: too many entities for the palette");
    out.push_back(options[std::uniform_int_distribution<std::size_t>(0, options.size() - 1)(rng)]);
  }
  return out;
}

void make_toy_benchmark(const std::filesystem::path& root, int n_classes, int n_refs, std::uint64_t seed) {
  if (n_classes < 1 || n_classes > kToyEventClasses || n_refs < 1)
    throw ParameterError("toy benchmark needs 1-" + std::to_string(kToyEventClasses) + " classes and >= 1 reference");
  std::filesystem::create_directories(root / "images");
  std::filesystem::create_directories(root / "masks");
  std::ofstream manifest(root / "manifest.tsv");
  if (!manifest) throw IoError("cannot write " + (root / "manifest.tsv").string());
  manifest << "# sample_id\timage\tevent_class\t(noun_tokens\tx0:y0:x1:y1\tmask)...\n";
  std::mt19937_64 rng(seed);
  for (int c = 0; c < n_classes; ++c)
    for (int r = 0; r < n_refs; ++r) {
      char id[32];
      std::snprintf(id, sizeof id, "c%02d_r%03d", c, r);
      const ToyScene scene = toy_event_scene(c, rng());
      const RenderedScene rendered = render_scene(scene);
      const Caption cap = caption_for(scene);
      const std::string image = "images/" + std::string(id) + ".png";
      write_png(root / image, rendered.image);
      manifest << id << '\t' << image << '\t' << toy_event_name(c);
      for (std::size_t e = 0; e < scene.entities.size(); ++e) {
        const std::string mask = "masks/" + std::string(id) + "_e" + std::to_string(e + 1) + ".png";
        write_mask_png(root / mask, rendered.masks[e]);
        const Box& b = scene.entities[e].box;
        const TokenSpan& s = cap.spans[e];
        manifest << '\t' << cap.token_ids[static_cast<std::size_t>(s.first - 1)] << ' '
                 << cap.token_ids[static_cast<std::size_t>(s.last - 1)] << '\t' << b.x0 << ':' << b.y0 << ':' << b.x1
                 << ':' << b.y1 << '\t' << mask;
      }
      manifest << '\n';
    }
  if (!manifest) throw IoError("failed writing " + (root / "manifest.tsv").string());
}

std::vector<EntitySpec> entities_for(const RenderedScene& rendered, const Caption& caption) {
  if (rendered.masks.size() != caption.spans.size())
    throw ParameterError("entities_for: " + std::to_string(rendered.masks.size()) + " masks vs " +
                         std::to_string(caption.spans.size()) + " spans");
  std::vector<EntitySpec> out;
  for (std::size_t e = 0; e < caption.spans.size(); ++e)
    out.push_back({static_cast<int>(e) + 1, caption.spans[e], rendered.masks[e]});
  return out;
}

ToyScenario toy_ablation_scenario() {
  ToyScenario s;
  s.reference_scene.entities = {
      {ToyShape::disk, toy_color_index("red"), {5, 1, 11, 7}},
      {ToyShape::bar, toy_color_index("blue"), {2, 10, 14, 13}},
  };
  s.reference = render_scene(s.reference_scene);
  s.target_colors = {toy_color_index("green"), toy_color_index("yellow")};
  s.target = caption_with_colors(s.reference_scene, s.target_colors);
  s.entities = entities_for(s.reference, s.target);
  return s;
}

int ToyLabelModel::classify(double r, double g, double b) const {
  if (std::max({r, g, b}) < dark_threshold_) return -1;
  const auto& p = toy_palette();
  int best = -1;
  double best_d = max_distance_ * max_distance_;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double d = (r - p[i].rgb[0]) * (r - p[i].rgb[0]) + (g - p[i].rgb[1]) * (g - p[i].rgb[1]) +
                     (b - p[i].rgb[2]) * (b - p[i].rgb[2]);
    if (d < best_d) {
      best_d = d;
      best = static_cast<int>(i);
    }
  }
  return best;
}

std::vector<int> ToyLabelModel::label_image(const Image& image) const {
  if (image.channels != 3) throw ShapeError("toy label model expects RGB images");
  std::vector<int> out(static_cast<std::size_t>(image.height) * image.width);
  for (int y = 0; y < image.height; ++y)
    for (int x = 0; x < image.width; ++x)
      out[static_cast<std::size_t>(y) * image.width + x] = classify(image.at(y, x, 0), image.at(y, x, 1), image.at(y, x, 2));
  return out;
}

int ToyLabelModel::entity_label(const std::vector<int>& token_ids, const TokenSpan& span) const {
  const Vocabulary& vocab = toy_vocabulary();
  for (int j = span.first; j <= span.last && j < static_cast<int>(token_ids.size()); ++j) {
    const std::string& w = vocab.word(token_ids[static_cast<std::size_t>(j)]);
    for (std::size_t i = 0; i < toy_palette().size(); ++i)
      if (toy_palette()[i].name == w) return static_cast<int>(i);
  }
  throw ParameterError("entity span " + std::to_string(span.first) + "-" + std::to_string(span.last) +
                       " names no toy color");
}

}  // namespace freeevent
