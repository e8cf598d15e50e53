#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "freeevent/tensor.hpp"

namespace freeevent {

/// Word <-> id table. Id 0 is the start-of-text token that every embedded
/// prompt begins with; an empty prompt embeds to that token alone.
class Vocabulary {
public:
  explicit Vocabulary(std::vector<std::string> words);

  int size() const noexcept { return static_cast<int>(words_.size()); }
  int id(std::string_view word) const;  // VocabularyError when unknown
  bool contains(std::string_view word) const;
  const std::string& word(int id) const;

  /// Splits on whitespace; "#<n>" denotes a raw id.
  std::vector<int> tokenize(std::string_view text) const;
  std::string detokenize(const std::vector<int>& ids) const;

private:
  std::vector<std::string> words_;
  std::unordered_map<std::string, int> index_;
};

/// The built-in vocabulary of the toy shapes domain.
const Vocabulary& toy_vocabulary();

inline constexpr int kStartToken = 0;

struct PromptEmbedding {
  std::vector<int> token_ids;  // including the leading start token
  Tensor embeddings;           // n_tokens x d_text
  int n_tokens() const { return static_cast<int>(token_ids.size()); }
};

/// Frozen lookup table plus sinusoidal positions; stand-in for a pretrained
/// text encoder.
struct TextEncoder {
  int vocab_size = 0;
  int d_text = 0;
  Tensor table;  // vocab_size x d_text

  static TextEncoder seeded(int vocab_size, int d_text, std::uint64_t seed);
};

/// Prepends the start token, looks up rows and adds positional encodings.
PromptEmbedding embed_prompt(const std::vector<int>& token_ids, const TextEncoder& encoder);

}  // namespace freeevent
