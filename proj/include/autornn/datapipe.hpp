#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "autornn/matrix.hpp"
#include "autornn/rng.hpp"

namespace autornn {

inline constexpr int kPadId = 0;
inline constexpr int kBosId = 1;
inline constexpr int kEosId = 2;
inline constexpr int kUnkId = 3;
inline constexpr int kNumSpecialTokens = 4;
inline constexpr int kMaxCaptionTokens = 16;  // interior length cap

enum class Split { kTrain, kVal, kTest };
std::string split_name(Split s);

struct RawCaptionRecord {
  std::string image_id;
  Split split = Split::kTrain;
  std::vector<std::string> captions;
  std::optional<std::vector<double>> feature;
};

class Vocabulary {
 public:
  Vocabulary() = default;

  int size() const { return static_cast<int>(id_to_token_.size()); }
  int min_count() const { return min_count_; }
  int id_of(const std::string& token) const;  // kUnkId for OOV
  const std::string& token_of(int id) const { return id_to_token_.at(id); }

  std::string to_json() const;  // {token: id} including specials
  static Vocabulary from_json(const std::string& text);

  friend Vocabulary build_vocab(const std::vector<std::vector<std::string>>& corpus, int min_count);

 private:
  std::map<std::string, int> token_to_id_;
  std::vector<std::string> id_to_token_;
  int min_count_ = 5;
};

struct EncodedExample {
  std::string image_id;
  std::vector<int> ids;  // BOS ... EOS after truncation
  std::vector<double> feature;

  int length() const { return static_cast<int>(ids.size()); }
};

// Lowercase, delete everything outside [a-z ], whitespace-split.
std::vector<std::string> preprocess_caption(const std::string& raw);

// Retains tokens with corpus count >= min_count; ids assigned after the four
// specials by (count desc, token lex asc).
Vocabulary build_vocab(const std::vector<std::vector<std::string>>& corpus, int min_count = 5);

// Ids with UNK fallback, interior truncated to kMaxCaptionTokens, BOS/EOS framing.
std::vector<int> encode_tokens(const std::vector<std::string>& tokens, const Vocabulary& vocab);

struct SyntheticSceneSpec {
  std::vector<std::string> objects = {"ball", "box", "cat", "dog", "tree", "car"};
  std::vector<std::string> attributes = {"red", "blue", "green", "small"};
  std::vector<std::string> relations = {"on", "under", "near"};
  int scene_size_min = 2;
  int scene_size_max = 2;
  double feature_noise = 0.0;

  // Per-slot one-hot blocks keep the grammar injective on noise-free scenes.
  int feature_dim() const {
    return scene_size_max *
           static_cast<int>(objects.size() + attributes.size() + relations.size());
  }
};

// Deterministic under seed. Captions follow the template
// "a <attr> <obj> [<rel> a <attr> <obj> ...]"; splits hash 80/10/10.
std::vector<RawCaptionRecord> synth_generate(const SyntheticSceneSpec& spec, int n, uint64_t seed);

// Karpathy-style schema: {"images":[{"filename"|"imgid", "split",
// "sentences":[{"raw": ...}]}]}. Features are loaded from an optional
// blob+manifest sidecar keyed by image_id.
std::vector<RawCaptionRecord> ingest_karpathy_json(const std::string& path,
                                                   const std::string& feature_prefix = "");

// One caption per training example; references stay grouped by image for eval.
std::vector<EncodedExample> encode_records(const std::vector<RawCaptionRecord>& records,
                                           Split split, const Vocabulary& vocab);

// image_id -> tokenized references, for metric evaluation.
std::map<std::string, std::vector<std::vector<std::string>>> reference_groups(
    const std::vector<RawCaptionRecord>& records, Split split);

struct Batch {
  std::vector<std::string> image_ids;
  std::vector<std::vector<int>> ids;  // B rows padded to batch max length
  Matrix features;                    // B x feature_dim
  Matrix mask;                        // B x T, 1 on real tokens
};

// Epoch-seeded shuffle; last partial batch kept.
std::vector<Batch> batch_iter(const std::vector<EncodedExample>& examples, int batch_size,
                              uint64_t seed, int epoch);

uint64_t fnv1a64(const std::string& s);

}  // namespace autornn
