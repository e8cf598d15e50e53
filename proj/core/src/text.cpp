#include "freeevent/text.hpp"

#include <cmath>
#include <random>
#include <sstream>

#include "freeevent/errors.hpp"

namespace freeevent {

Vocabulary::Vocabulary(std::vector<std::string> words) : words_(std::move(words)) {
  for (std::size_t i = 0; i < words_.size(); ++i)
    if (!index_.emplace(words_[i], static_cast<int>(i)).second)
      throw ParameterError("duplicate vocabulary word '" + words_[i] + "'");
}

int Vocabulary::id(std::string_view word) const {
  auto it = index_.find(std::string(word));
  if (it == index_.end()) throw VocabularyError("unknown word '" + std::string(word) + "'");
  return it->second;
}

bool Vocabulary::contains(std::string_view word) const { return index_.count(std::string(word)) != 0; }

const std::string& Vocabulary::word(int id) const {
  if (id < 0 || id >= size()) throw VocabularyError("token id " + std::to_string(id) + " outside vocabulary");
  return words_[static_cast<std::size_t>(id)];
}

std::vector<int> Vocabulary::tokenize(std::string_view text) const {
  std::istringstream is{std::string(text)};
  std::vector<int> ids;
  std::string tok;
  while (is >> tok) {
    if (tok.size() > 1 && tok[0] == '#') {
      int raw = 0;
      try {
        raw = std::stoi(tok.substr(1));
      } catch (const std::exception&) {
        throw VocabularyError("malformed raw token '" + tok + "'");
      }
      if (raw < 0 || raw >= size()) throw VocabularyError("token id " + tok + " outside vocabulary");
      ids.push_back(raw);
    } else {
      ids.push_back(id(tok));
    }
  }
  return ids;
}

std::string Vocabulary::detokenize(const std::vector<int>& ids) const {
  std::string out;
  for (int id : ids) {
    if (!out.empty()) out += ' ';
    out += word(id);
  }
  return out;
}

const Vocabulary& toy_vocabulary() {
  static const Vocabulary vocab({
      "<sot>", "a", "photo", "of", "and", "with", "the", "on", "near",
      // entity identities
      "red", "green", "blue", "yellow", "cyan", "magenta",
      // shape / pose words
      "disk", "square", "bar", "pillar", "ring", "cross", "ell", "tee", "wedge", "frame",
  });
  return vocab;
}

TextEncoder TextEncoder::seeded(int vocab_size, int d_text, std::uint64_t seed) {
  if (vocab_size < 1 || d_text < 2) throw ParameterError("text encoder needs vocab_size >= 1 and d_text >= 2");
  TextEncoder enc;
  enc.vocab_size = vocab_size;
  enc.d_text = d_text;
  enc.table = Tensor({vocab_size, d_text});
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (double& v : enc.table.storage()) v = normal(rng);
  return enc;
}

PromptEmbedding embed_prompt(const std::vector<int>& token_ids, const TextEncoder& encoder) {
  PromptEmbedding p;
  p.token_ids.reserve(token_ids.size() + 1);
  p.token_ids.push_back(kStartToken);
  for (int id : token_ids) {
    if (id < 0 || id >= encoder.vocab_size)
      throw VocabularyError("token id " + std::to_string(id) + " outside vocabulary of " +
                            std::to_string(encoder.vocab_size));
    p.token_ids.push_back(id);
  }
  const int n = p.n_tokens(), d = encoder.d_text;
  p.embeddings = Tensor({n, d});
  for (int pos = 0; pos < n; ++pos) {
    const int id = p.token_ids[static_cast<std::size_t>(pos)];
    for (int j = 0; j < d; ++j) {
      const int pair = j / 2;
      const double freq = std::pow(100.0, -2.0 * pair / d);
      const double pe = (j % 2 == 0) ? std::sin(pos * freq) : std::cos(pos * freq);
      p.embeddings[static_cast<std::size_t>(pos) * d + j] =
          encoder.table[static_cast<std::size_t>(id) * d + j] + 0.5 * pe;
    }
  }
  return p;
}

}  // namespace freeevent
