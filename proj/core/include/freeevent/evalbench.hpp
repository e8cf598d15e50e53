#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "freeevent/image.hpp"
#include "freeevent/switching.hpp"
#include "freeevent/toy_data.hpp"

namespace freeevent {

struct EventEntity {
  std::vector<int> nouns;  // token ids
  Box bbox;
  std::filesystem::path mask;
};

struct EventSample {
  std::string sample_id;
  std::filesystem::path image;
  std::string event_class;
  std::vector<EventEntity> entities;
};

struct BenchmarkIngest {
  std::vector<EventSample> samples;
  /// One line per rejected manifest row.
  std::vector<std::string> errors;
};

/// Reads root/manifest.tsv: sample_id, image, event_class, then repeated
/// (noun token ids, x0:y0:x1:y1, mask) triples. Paths are relative to root.
/// Malformed rows are reported and skipped.
BenchmarkIngest ingest_benchmark(const std::filesystem::path& root);

/// Target prompt for a sample: its entities' noun tokens joined by "and".
/// With `switch_colors`, every color word is replaced by a color absent from
/// the sample (deterministic in `seed`).
Caption benchmark_caption(const EventSample& sample, bool switch_colors, std::uint64_t seed);
/// Binds caption spans to the sample's masks in entity order.
std::vector<EntitySpec> benchmark_entities(const EventSample& sample, const Caption& caption);

using ImageEncoder = std::function<std::vector<double>(const Image&)>;

/// Registers (or replaces) a named encoder. "downsample16" is built in.
void register_encoder(const std::string& name, ImageEncoder encoder);
std::vector<std::string> encoder_names();
/// L2-normalized embedding; ConfigError for an unregistered encoder.
std::vector<double> embed_image(const Image& image, std::string_view encoder = "downsample16");

/// Grayscale, 16x16 area downsample, subtract mean, L2-normalize. A constant
/// image maps to the normalized all-ones vector.
std::vector<double> downsample_features(const Image& image);

struct RetrievalItem {
  std::vector<double> vector;
  std::string id;  // true reference id for targets, own id for references
  std::string event_class;
};

struct RetrievalReport {
  std::map<int, double> recall_at;
  std::map<std::string, std::map<int, double>> per_class;
  std::map<std::string, int> per_class_queries;
  int n_queries = 0;
};

/// Ranks same-class references by cosine similarity (ties by ascending id)
/// and counts targets whose reference lands in the top k. Evaluation may use
/// `jobs` threads; the result does not depend on it.
RetrievalReport recall_at_k(const std::vector<RetrievalItem>& targets, const std::vector<RetrievalItem>& references,
                            const std::vector<int>& ks, int jobs = 1);

/// Same-class reference ids in ranked order for one target.
std::vector<std::string> rank_references(const RetrievalItem& target, const std::vector<RetrievalItem>& references);

std::string format_report_table(const RetrievalReport& report);
/// "recall@1=0.95" style lines, then "class.<name>.recall@k=" lines.
std::string format_report_kv(const RetrievalReport& report);

/// Recall@1/5/10 of the published full method on its benchmark, kept for reference.
inline constexpr double kPublishedRecallAt1 = 41.12;
inline constexpr double kPublishedRecallAt5 = 63.02;
inline constexpr double kPublishedRecallAt10 = 72.74;

}  // namespace freeevent
