#include "freeevent/train.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <random>
#include <sstream>

#include "freeevent/errors.hpp"
#include "freeevent/weights_io.hpp"

namespace freeevent {

namespace {

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream is(s);
  while (std::getline(is, cur, sep)) out.push_back(cur);
  return out;
}

std::vector<int> parse_ids(const std::string& field, const std::string& where) {
  std::vector<int> ids;
  std::istringstream is(field);
  std::string tok;
  while (is >> tok) {
    try {
      std::size_t used = 0;
      ids.push_back(std::stoi(tok, &used));
      if (used != tok.size()) throw std::invalid_argument(tok);
    } catch (const std::exception&) {
      throw DataError(where + ": malformed token id '" + tok + "'");
    }
  }
  return ids;
}

struct Example {
  LatentTensor z0;
  PromptEmbedding prompt;
};

struct Batch {
  Tensor z_t;
  Tensor eps;
  std::vector<int> t;
  Tensor text;
};

// Adam with bias correction.
class Adam {
public:
  explicit Adam(const std::vector<ad::Var>& params) {
    for (const auto& p : params) {
      m_.emplace_back(p.value().shape());
      v_.emplace_back(p.value().shape());
    }
  }

  void step(std::vector<ad::Var>& params, double lr, double clip) {
    double sq = 0.0;
    for (const auto& p : params)
      if (!p.grad().empty())
        for (double g : p.grad().storage()) sq += g * g;
    const double norm = std::sqrt(sq);
    const double factor = (clip > 0.0 && norm > clip) ? clip / norm : 1.0;
    ++t_;
    const double bc1 = 1.0 - std::pow(b1_, t_), bc2 = 1.0 - std::pow(b2_, t_);
    for (std::size_t i = 0; i < params.size(); ++i) {
      if (params[i].grad().empty()) continue;
      const Tensor& g = params[i].grad();
      Tensor& w = params[i].mutable_value();
      for (std::size_t j = 0; j < w.size(); ++j) {
        const double gj = g[j] * factor;
        m_[i][j] = b1_ * m_[i][j] + (1.0 - b1_) * gj;
        v_[i][j] = b2_ * v_[i][j] + (1.0 - b2_) * gj * gj;
        w[j] -= lr * (m_[i][j] / bc1) / (std::sqrt(v_[i][j] / bc2) + 1e-8);
      }
    }
  }

private:
  std::vector<Tensor> m_, v_;
  double b1_ = 0.9, b2_ = 0.999;
  int t_ = 0;
};

Batch make_batch(const std::vector<const Example*>& items, bool null_prompt, const PromptEmbedding& null_embedding,
                 const NoiseSchedule& sched, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> tdist(1, sched.T);
  std::normal_distribution<double> normal(0.0, 1.0);
  const Shape& zs = items.front()->z0.shape();
  const int n = static_cast<int>(items.size());
  const PromptEmbedding& first = null_prompt ? null_embedding : items.front()->prompt;
  const int n_tok = first.n_tokens(), d = first.embeddings.dim(1);
  Batch b{Tensor({n, zs[0], zs[1], zs[2]}), Tensor({n, zs[0], zs[1], zs[2]}), {}, Tensor({n, n_tok, d})};
  const std::size_t per = items.front()->z0.size();
  for (int s = 0; s < n; ++s) {
    const Example& ex = *items[static_cast<std::size_t>(s)];
    const int t = tdist(rng);
    b.t.push_back(t);
    const double a = std::sqrt(sched.alpha_bar_at(t)), sb = std::sqrt(1.0 - sched.alpha_bar_at(t));
    for (std::size_t i = 0; i < per; ++i) {
      const double e = normal(rng);
      b.eps[s * per + i] = e;
      b.z_t[s * per + i] = a * ex.z0[i] + sb * e;
    }
    const PromptEmbedding& pe = null_prompt ? null_embedding : ex.prompt;
    std::copy(pe.embeddings.storage().begin(), pe.embeddings.storage().end(),
              b.text.data() + static_cast<std::size_t>(s) * n_tok * d);
  }
  return b;
}

double batch_loss(const UNet& net, const Batch& b) {
  const ad::Var pred = net.forward(ad::Var(b.z_t), b.t, ad::Var(b.text), nullptr, nullptr, nullptr);
  return ad::mse(pred, ad::Var(b.eps)).value()[0];
}

}  // namespace

ToyDataset load_toy_dataset(const std::filesystem::path& root) {
  const auto labels = root / "labels.tsv";
  std::ifstream in(labels);
  if (!in) throw IoError("dataset " + root.string() + " has no labels.tsv");
  ToyDataset ds;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    const auto cols = split(line, '\t');
    const std::string where = labels.string() + ":" + std::to_string(lineno);
    if (cols.size() < 2) throw DataError(where + ": expected filename and token ids");
    LabeledImage s;
    s.name = cols[0];
    s.image = read_png(root / "images" / cols[0]);
    s.token_ids = parse_ids(cols[1], where);
    if (cols.size() > 2) {
      std::istringstream ms(cols[2]);
      std::string m;
      while (ms >> m) s.masks.push_back(m);
    }
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

void save_toy_dataset(const std::filesystem::path& root, const ToyDataset& dataset) {
  std::filesystem::create_directories(root / "images");
  std::ofstream out(root / "labels.tsv");
  if (!out) throw IoError("cannot write " + (root / "labels.tsv").string());
  for (const LabeledImage& s : dataset.samples) {
    write_png(root / "images" / s.name, s.image);
    out << s.name << '\t';
    for (std::size_t i = 0; i < s.token_ids.size(); ++i) out << (i ? " " : "") << s.token_ids[i];
    if (!s.masks.empty()) {
      out << '\t';
      for (std::size_t i = 0; i < s.masks.size(); ++i) out << (i ? " " : "") << s.masks[i];
    }
    out << '\n';
  }
}

Weights initial_weights(const UNetConfig& architecture, std::uint64_t seed) {
  return quantized_f32(UNet::initialize(architecture, seed).weights());
}

std::vector<double> smooth_losses(const std::vector<double>& losses, double decay) {
  std::vector<double> out;
  out.reserve(losses.size());
  double ema = 0.0, weight = 0.0;
  for (double l : losses) {
    ema = decay * ema + (1.0 - decay) * l;
    weight = decay * weight + (1.0 - decay);
    out.push_back(ema / weight);
  }
  return out;
}

TrainResult train_toy(const ToyDataset& dataset, const TrainOptions& opt, const Weights* init) {
  if (dataset.samples.empty()) throw DataError("train_toy: empty dataset");
  if (opt.steps < 0 || opt.batch_size < 1) throw ParameterError("train_toy: steps >= 0 and batch_size >= 1 required");

  TrainResult result;
  result.weights = init ? quantized_f32(*init) : initial_weights(opt.architecture, opt.seed);
  UNet net = UNet::from_weights(result.weights);
  const NoiseSchedule sched = build_schedule(opt.T, opt.beta_start, opt.beta_end, 1);

  std::vector<Example> examples;
  examples.reserve(dataset.samples.size());
  for (const LabeledImage& s : dataset.samples) {
    LatentTensor z0 = encode_image(s.image, opt.autoencoder);
    if (z0.shape() != Shape{net.config().latent_channels, net.config().latent_size, net.config().latent_size})
      throw DataError("train_toy: sample " + s.name + " encodes to " + shape_string(z0.shape()) +
                      ", which does not match the architecture");
    examples.push_back({std::move(z0), embed_prompt(s.token_ids, net.text_encoder())});
  }
  const PromptEmbedding null_embedding = embed_prompt({}, net.text_encoder());

  // Hold out up to 10% (max 64) for the before/after comparison.
  const std::size_t n_all = examples.size();
  const std::size_t n_hold = n_all >= 10 ? std::min<std::size_t>(64, n_all / 10) : 0;
  const std::size_t n_train = n_all - n_hold;

  std::mt19937_64 eval_rng(opt.seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<Batch> heldout;
  for (std::size_t i = 0; i < n_all && (n_hold == 0 ? i < n_all : true); ++i) {
    const std::size_t idx = n_hold ? n_train + i : i;
    if (idx >= n_all) break;
    heldout.push_back(make_batch({&examples[idx]}, false, null_embedding, sched, eval_rng));
    if (heldout.size() >= 64) break;
  }
  auto heldout_loss = [&](const UNet& model) {
    double acc = 0.0;
    for (const Batch& b : heldout) acc += batch_loss(model, b);
    return acc / static_cast<double>(heldout.size());
  };
  result.heldout_loss_initial = heldout_loss(net);
  if (opt.steps == 0) {
    result.heldout_loss_final = result.heldout_loss_initial;
    return result;
  }

  std::map<int, std::vector<std::size_t>> buckets;
  for (std::size_t i = 0; i < n_train; ++i) buckets[examples[i].prompt.n_tokens()].push_back(i);

  net.set_trainable(true);
  Adam adam(net.parameters());
  std::mt19937_64 rng(opt.seed);
  std::uniform_int_distribution<std::size_t> pick(0, n_train - 1);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  result.loss_history.reserve(static_cast<std::size_t>(opt.steps));
  double ema = 0.0, ema_w = 0.0;

  for (int step = 0; step < opt.steps; ++step) {
    const auto& bucket = buckets[examples[pick(rng)].prompt.n_tokens()];
    std::uniform_int_distribution<std::size_t> in_bucket(0, bucket.size() - 1);
    std::vector<const Example*> items;
    for (int i = 0; i < opt.batch_size; ++i) items.push_back(&examples[bucket[in_bucket(rng)]]);
    const bool drop = unit(rng) < opt.null_prompt_rate;
    const Batch b = make_batch(items, drop, null_embedding, sched, rng);

    for (auto& p : net.parameters()) p.zero_grad();
    const ad::Var pred = net.forward(ad::Var(b.z_t), b.t, ad::Var(b.text), nullptr, nullptr, nullptr);
    const ad::Var loss = ad::mse(pred, ad::Var(b.eps));
    const double lv = loss.value()[0];
    if (!std::isfinite(lv)) throw TrainingError("train_toy: non-finite loss at step " + std::to_string(step));
    ad::backward(loss);

    const double warm = opt.warmup_steps > 0 ? std::min(1.0, (step + 1.0) / opt.warmup_steps) : 1.0;
    const double progress = static_cast<double>(step) / opt.steps;
    const double lr = opt.learning_rate * warm * (0.1 + 0.9 * 0.5 * (1.0 + std::cos(std::numbers::pi * progress)));
    adam.step(net.parameters(), lr, opt.grad_clip);

    result.loss_history.push_back(lv);
    ema = 0.98 * ema + 0.02 * lv;
    ema_w = 0.98 * ema_w + 0.02;
    if (opt.on_report && opt.report_every > 0 && (step + 1) % opt.report_every == 0) opt.on_report(step + 1, ema / ema_w);
  }
  net.set_trainable(false);
  result.weights = quantized_f32(net.weights());
  result.heldout_loss_final = heldout_loss(UNet::from_weights(result.weights));
  return result;
}

}  // namespace freeevent
