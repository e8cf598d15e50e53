#include "freeevent/evalbench.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <mutex>
#include <numeric>
#include <set>
#include <sstream>
#include <thread>

#include "freeevent/errors.hpp"
#include "freeevent/metrics.hpp"

namespace freeevent {

namespace {

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream is(line);
  while (std::getline(is, cur, '\t')) out.push_back(cur);
  return out;
}

Box parse_box(const std::string& s) {
  Box b;
  char c1 = 0, c2 = 0, c3 = 0;
  std::istringstream is(s);
  if (!(is >> b.x0 >> c1 >> b.y0 >> c2 >> b.x1 >> c3 >> b.y1) || c1 != ':' || c2 != ':' || c3 != ':' ||
      is.peek() != std::char_traits<char>::eof())
    throw DataError("malformed bounding box '" + s + "'");
  return b;
}

struct Registry {
  std::mutex mutex;
  std::map<std::string, ImageEncoder, std::less<>> encoders{{"downsample16", downsample_features}};
};

Registry& registry() {
  static Registry r;
  return r;
}

double cosine(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw ShapeError("retrieval vectors differ in dimension");
  double ab = 0.0, aa = 0.0, bb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  if (aa == 0.0 || bb == 0.0) return 0.0;
  return ab / std::sqrt(aa * bb);
}

}  // namespace

BenchmarkIngest ingest_benchmark(const std::filesystem::path& root) {
  std::ifstream in(root / "manifest.tsv");
  if (!in) throw IoError("no manifest.tsv under " + root.string());
  BenchmarkIngest out;
  std::set<std::string> seen;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    const std::string where = "manifest.tsv:" + std::to_string(lineno);
    try {
      const auto cols = split_tabs(line);
      if (cols.size() < 6 || (cols.size() - 3) % 3 != 0)
        throw DataError("expected sample_id, image, event_class and (nouns, box, mask) triples");
      EventSample s{cols[0], root / cols[1], cols[2], {}};
      if (s.sample_id.empty()) throw DataError("empty sample_id");
      if (s.event_class.empty()) throw DataError("empty event_class");
      if (seen.count(s.sample_id)) throw DataError("duplicate sample_id '" + s.sample_id + "'");
      if (!std::filesystem::exists(s.image)) throw DataError("missing image " + cols[1]);
      const Image image = read_png(s.image);
      for (std::size_t c = 3; c < cols.size(); c += 3) {
        EventEntity e;
        std::istringstream nouns(cols[c]);
        int id = 0;
        while (nouns >> id) e.nouns.push_back(id);
        if (e.nouns.empty() || !nouns.eof()) throw DataError("malformed noun tokens '" + cols[c] + "'");
        e.bbox = parse_box(cols[c + 1]);
        if (e.bbox.x0 < 0 || e.bbox.y0 < 0 || e.bbox.x1 > image.width || e.bbox.y1 > image.height ||
            e.bbox.x1 <= e.bbox.x0 || e.bbox.y1 <= e.bbox.y0)
          throw DataError("bounding box " + cols[c + 1] + " outside the image");
        e.mask = root / cols[c + 2];
        if (!std::filesystem::exists(e.mask)) throw DataError("missing mask " + cols[c + 2]);
        const Mask m = read_mask(e.mask);
        if (m.height != image.height || m.width != image.width)
          throw DataError("mask " + cols[c + 2] + " does not match the image size");
        s.entities.push_back(std::move(e));
      }
      seen.insert(s.sample_id);
      out.samples.push_back(std::move(s));
    } catch (const Error& e) {
      out.errors.push_back(where + ": " + e.what());
    }
  }
  if (out.samples.empty())
    throw DataError("benchmark " + root.string() + " has no valid samples" +
                    (out.errors.empty() ? std::string() : " (first problem: " + out.errors.front() + ")"));
  return out;
}

void register_encoder(const std::string& name, ImageEncoder encoder) {
  Registry& r = registry();
  std::lock_guard lock(r.mutex);
  r.encoders[name] = std::move(encoder);
}

std::vector<std::string> encoder_names() {
  Registry& r = registry();
  std::lock_guard lock(r.mutex);
  std::vector<std::string> out;
  for (const auto& [name, _] : r.encoders) out.push_back(name);
  return out;
}

std::vector<double> embed_image(const Image& image, std::string_view encoder) {
  ImageEncoder fn;
  {
    Registry& r = registry();
    std::lock_guard lock(r.mutex);
    const auto it = r.encoders.find(encoder);
    if (it == r.encoders.end()) {
      std::string known;
      for (const auto& [name, _] : r.encoders) known += (known.empty() ? "" : ", ") + name;
      throw ConfigError("unknown image encoder '" + std::string(encoder) + "' (registered: " + known + ")");
    }
    fn = it->second;
  }
  std::vector<double> v = fn(image);
  double n = 0.0;
  for (double x : v) n += x * x;
  n = std::sqrt(n);
  if (n == 0.0 || !std::isfinite(n)) throw NumericError("encoder '" + std::string(encoder) + "' returned a zero or non-finite vector");
  for (double& x : v) x /= n;
  return v;
}

std::vector<double> downsample_features(const Image& image) {
  std::vector<double> v = area_resample(to_grayscale(image), image.height, image.width, 16, 16);
  const double m = mean(v);
  double n = 0.0;
  for (double& x : v) {
    x -= m;
    n += x * x;
  }
  if (n < 1e-24) return std::vector<double>(v.size(), 1.0 / std::sqrt(static_cast<double>(v.size())));
  n = std::sqrt(n);
  for (double& x : v) x /= n;
  return v;
}

std::vector<std::string> rank_references(const RetrievalItem& target, const std::vector<RetrievalItem>& references) {
  std::vector<std::pair<double, const std::string*>> pool;
  for (const RetrievalItem& r : references)
    if (r.event_class == target.event_class) pool.emplace_back(cosine(target.vector, r.vector), &r.id);
  std::sort(pool.begin(), pool.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return *a.second < *b.second;
  });
  std::vector<std::string> out;
  out.reserve(pool.size());
  for (const auto& [_, id] : pool) out.push_back(*id);
  return out;
}

RetrievalReport recall_at_k(const std::vector<RetrievalItem>& targets, const std::vector<RetrievalItem>& references,
                            const std::vector<int>& ks, int jobs) {
  if (ks.empty()) throw ParameterError("recall_at_k: no k values");
  for (int k : ks)
    if (k < 1) throw ParameterError("recall_at_k: k must be positive");
  const int kmax = *std::max_element(ks.begin(), ks.end());
  std::map<std::string, int> pool_size;
  for (const RetrievalItem& r : references) ++pool_size[r.event_class];
  for (const RetrievalItem& t : targets) pool_size.try_emplace(t.event_class, 0);

  // Rank of the true reference for each target (0-based).
  std::vector<int> rank(targets.size(), -1);
  std::vector<std::string> failure(targets.size());
  auto work = [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      const RetrievalItem& t = targets[i];
      if (pool_size.at(t.event_class) < kmax) {
        failure[i] = "class '" + t.event_class + "' has fewer than " + std::to_string(kmax) + " references";
        continue;
      }
      const auto ranked = rank_references(t, references);
      const auto it = std::find(ranked.begin(), ranked.end(), t.id);
      if (it == ranked.end()) {
        failure[i] = "true reference '" + t.id + "' is not in class '" + t.event_class + "'";
        continue;
      }
      rank[i] = static_cast<int>(it - ranked.begin());
    }
  };
  const int n_jobs = std::max(1, std::min<int>(jobs, static_cast<int>(targets.size())));
  if (n_jobs == 1) {
    work(0, targets.size());
  } else {
    std::vector<std::thread> threads;
    const std::size_t chunk = (targets.size() + n_jobs - 1) / n_jobs;
    for (int j = 0; j < n_jobs; ++j)
      threads.emplace_back(work, std::min(targets.size(), j * chunk), std::min(targets.size(), (j + 1) * chunk));
    for (auto& th : threads) th.join();
  }
  for (const std::string& f : failure)
    if (!f.empty()) throw DataError("recall_at_k: " + f);

  RetrievalReport report;
  report.n_queries = static_cast<int>(targets.size());
  for (int k : ks) report.recall_at[k] = 0.0;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    const std::string& c = targets[i].event_class;
    ++report.per_class_queries[c];
    for (int k : ks) {
      report.per_class[c].try_emplace(k, 0.0);
      if (rank[i] < k) {
        report.recall_at[k] += 1.0;
        report.per_class[c][k] += 1.0;
      }
    }
  }
  for (auto& [k, v] : report.recall_at) v = targets.empty() ? 0.0 : v / static_cast<double>(targets.size());
  for (auto& [c, m] : report.per_class)
    for (auto& [k, v] : m) v /= report.per_class_queries[c];
  return report;
}

std::string format_report_table(const RetrievalReport& report) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(2);
  os << std::left << std::setw(14) << "class" << std::right << std::setw(8) << "queries";
  for (const auto& [k, _] : report.recall_at) os << std::setw(10) << ("R@" + std::to_string(k));
  os << '\n';
  for (const auto& [c, m] : report.per_class) {
    os << std::left << std::setw(14) << c << std::right << std::setw(8) << report.per_class_queries.at(c);
    for (const auto& [k, v] : m) os << std::setw(10) << 100.0 * v;
    os << '\n';
  }
  os << std::left << std::setw(14) << "all" << std::right << std::setw(8) << report.n_queries;
  for (const auto& [k, v] : report.recall_at) os << std::setw(10) << 100.0 * v;
  os << '\n';
  return os.str();
}

std::string format_report_kv(const RetrievalReport& report) {
  std::ostringstream os;
  os << std::setprecision(10);
  os << "n_queries=" << report.n_queries << '\n';
  for (const auto& [k, v] : report.recall_at) os << "recall@" << k << '=' << v << '\n';
  for (const auto& [c, m] : report.per_class)
    for (const auto& [k, v] : m) os << "class." << c << ".recall@" << k << '=' << v << '\n';
  return os.str();
}

Caption benchmark_caption(const EventSample& s, bool switch_colors, std::uint64_t seed) {
  const Vocabulary& vocab = toy_vocabulary();
  std::vector<std::vector<int>> nouns;
  for (const EventEntity& e : s.entities) nouns.push_back(e.nouns);
  if (switch_colors) {
    std::vector<int> present;
    for (const auto& n : nouns)
      for (int id : n)
        for (std::size_t c = 0; c < toy_palette().size(); ++c)
          if (toy_palette()[c].name == vocab.word(id)) present.push_back(static_cast<int>(c));
    ToyScene scene;
    for (int c : present) scene.entities.push_back({ToyShape::disk, c, {}});
    const std::vector<int> swapped = switched_colors(scene, seed);
    std::size_t next = 0;
    for (auto& n : nouns)
      for (int& id : n)
        for (std::size_t c = 0; c < toy_palette().size(); ++c)
          if (toy_palette()[c].name == vocab.word(id)) {
            id = vocab.id(toy_palette()[static_cast<std::size_t>(swapped[next++])].name);
            break;
          }
  }
  Caption cap;
  for (std::size_t e = 0; e < nouns.size(); ++e) {
    if (e > 0) cap.token_ids.push_back(vocab.id("and"));
    const int first = static_cast<int>(cap.token_ids.size()) + 1;
    cap.token_ids.insert(cap.token_ids.end(), nouns[e].begin(), nouns[e].end());
    cap.spans.push_back({first, static_cast<int>(cap.token_ids.size())});
  }
  return cap;
}

std::vector<EntitySpec> benchmark_entities(const EventSample& s, const Caption& caption) {
  if (caption.spans.size() != s.entities.size())
    throw ParameterError("sample " + s.sample_id + ": caption has " + std::to_string(caption.spans.size()) +
                         " spans for " + std::to_string(s.entities.size()) + " entities");
  std::vector<EntitySpec> out;
  for (std::size_t e = 0; e < s.entities.size(); ++e)
    out.push_back({static_cast<int>(e) + 1, caption.spans[e], read_mask(s.entities[e].mask)});
  return out;
}

}  // namespace freeevent
