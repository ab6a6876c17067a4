#include "autornn/datapipe.hpp"

#include <algorithm>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

#include "autornn/checkpoint.hpp"

namespace autornn {

std::string split_name(Split s) {
  switch (s) {
    case Split::kTrain: return "train";
    case Split::kVal: return "val";
    case Split::kTest: return "test";
  }
  return "?";
}

uint64_t fnv1a64(const std::string& s) {
  uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

std::vector<std::string> preprocess_caption(const std::string& raw) {
  std::string cleaned;
  cleaned.reserve(raw.size());
  for (char ch : raw) {
    if (ch >= 'A' && ch <= 'Z') cleaned.push_back(static_cast<char>(ch - 'A' + 'a'));
    else if ((ch >= 'a' && ch <= 'z') || ch == ' ' || ch == '\t' || ch == '\n')
      cleaned.push_back(ch);
    // everything else is deleted in place, merging fragments within a word
  }
  std::vector<std::string> tokens;
  std::string cur;
  for (char ch : cleaned) {
    if (ch == ' ' || ch == '\t' || ch == '\n') {
      if (!cur.empty()) tokens.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.push_back(ch);
    }
  }
  if (!cur.empty()) tokens.push_back(std::move(cur));
  return tokens;
}

int Vocabulary::id_of(const std::string& token) const {
  auto it = token_to_id_.find(token);
  return it == token_to_id_.end() ? kUnkId : it->second;
}

Vocabulary build_vocab(const std::vector<std::vector<std::string>>& corpus, int min_count) {
  if (corpus.empty()) throw std::invalid_argument("build_vocab: empty corpus");
  std::map<std::string, int64_t> counts;
  for (const auto& caption : corpus)
    for (const auto& tok : caption) ++counts[tok];

  std::vector<std::pair<std::string, int64_t>> retained;
  for (const auto& [tok, c] : counts)
    if (c >= min_count) retained.emplace_back(tok, c);
  std::sort(retained.begin(), retained.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });

  Vocabulary v;
  v.min_count_ = min_count;
  v.id_to_token_ = {"<pad>", "<bos>", "<eos>", "<unk>"};
  for (int i = 0; i < kNumSpecialTokens; ++i) v.token_to_id_[v.id_to_token_[i]] = i;
  for (const auto& [tok, c] : retained) {
    v.token_to_id_[tok] = static_cast<int>(v.id_to_token_.size());
    v.id_to_token_.push_back(tok);
  }
  return v;
}

std::string Vocabulary::to_json() const {
  nlohmann::json j;
  j["min_count"] = min_count_;
  nlohmann::json toks = nlohmann::json::object();
  for (const auto& [tok, id] : token_to_id_) toks[tok] = id;
  j["tokens"] = toks;
  return j.dump(2);
}

Vocabulary Vocabulary::from_json(const std::string& text) {
  nlohmann::json j = nlohmann::json::parse(text);
  Vocabulary v;
  v.min_count_ = j.value("min_count", 5);
  const auto& toks = j.at("tokens");
  v.id_to_token_.resize(toks.size());
  for (auto it = toks.begin(); it != toks.end(); ++it) {
    const int id = it.value().get<int>();
    v.token_to_id_[it.key()] = id;
    v.id_to_token_.at(id) = it.key();
  }
  return v;
}

std::vector<int> encode_tokens(const std::vector<std::string>& tokens, const Vocabulary& vocab) {
  std::vector<int> ids;
  ids.push_back(kBosId);
  const int interior = std::min<int>(static_cast<int>(tokens.size()), kMaxCaptionTokens);
  for (int i = 0; i < interior; ++i) ids.push_back(vocab.id_of(tokens[i]));
  ids.push_back(kEosId);
  return ids;
}

namespace {

Split split_by_hash(const std::string& image_id) {
  const uint64_t h = fnv1a64(image_id) % 100;
  if (h < 80) return Split::kTrain;
  if (h < 90) return Split::kVal;
  return Split::kTest;
}

}  // namespace

std::vector<RawCaptionRecord> synth_generate(const SyntheticSceneSpec& spec, int n, uint64_t seed) {
  if (n < 1) throw std::invalid_argument("synth_generate: n must be >= 1");
  if (spec.objects.empty() || spec.attributes.empty())
    throw std::invalid_argument("synth_generate: empty symbol vocabulary");
  if (spec.scene_size_min < 1 || spec.scene_size_max < spec.scene_size_min)
    throw std::invalid_argument("synth_generate: bad scene size range");
  if (spec.scene_size_max > 1 && spec.relations.empty())
    throw std::invalid_argument("synth_generate: relations required for multi-object scenes");

  Rng rng(seed);
  const int na = static_cast<int>(spec.attributes.size());
  const int no = static_cast<int>(spec.objects.size());
  const int nr = static_cast<int>(spec.relations.size());
  const int block = na + no + nr;

  std::vector<RawCaptionRecord> records;
  records.reserve(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    RawCaptionRecord rec;
    char buf[24];
    std::snprintf(buf, sizeof(buf), "synth_%06d", i);
    rec.image_id = buf;
    rec.split = split_by_hash(rec.image_id);

    const int k = spec.scene_size_min + rng.uniform_int(spec.scene_size_max - spec.scene_size_min + 1);
    std::vector<double> feature(static_cast<size_t>(spec.feature_dim()), 0.0);
    std::string caption;
    for (int s = 0; s < k; ++s) {
      const int a = rng.uniform_int(na);
      const int o = rng.uniform_int(no);
      if (!caption.empty()) caption += ' ';
      caption += "a " + spec.attributes[a] + " " + spec.objects[o];
      const int base = s * block;
      feature[base + a] = 1.0;
      feature[base + na + o] = 1.0;
      if (s + 1 < k) {
        const int r = rng.uniform_int(nr);
        caption += " " + spec.relations[r];
        feature[base + na + no + r] = 1.0;
      }
    }
    if (spec.feature_noise > 0.0)
      for (auto& v : feature) v += spec.feature_noise * rng.normal();

    rec.captions.push_back(caption);
    rec.feature = std::move(feature);
    records.push_back(std::move(rec));
  }
  return records;
}

std::vector<RawCaptionRecord> ingest_karpathy_json(const std::string& path,
                                                   const std::string& feature_prefix) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw std::runtime_error("malformed JSON in " + path + " at byte " + std::to_string(e.byte) +
                             ": " + e.what());
  }

  ParamMap features;
  if (!feature_prefix.empty()) features = load_params(feature_prefix);

  std::vector<RawCaptionRecord> records;
  for (const auto& img : j.at("images")) {
    RawCaptionRecord rec;
    if (img.contains("filename")) rec.image_id = img.at("filename").get<std::string>();
    else if (img.contains("imgid")) rec.image_id = std::to_string(img.at("imgid").get<int64_t>());
    else throw std::runtime_error("image record without filename or imgid");
    if (!img.contains("split")) throw std::runtime_error("image " + rec.image_id + ": missing split");
    const std::string sp = img.at("split").get<std::string>();
    if (sp == "train" || sp == "restval") rec.split = Split::kTrain;
    else if (sp == "val") rec.split = Split::kVal;
    else if (sp == "test") rec.split = Split::kTest;
    else throw std::runtime_error("image " + rec.image_id + ": unknown split \"" + sp + "\"");
    for (const auto& sent : img.at("sentences"))
      rec.captions.push_back(sent.at("raw").get<std::string>());
    if (rec.captions.empty()) throw std::runtime_error("image " + rec.image_id + ": no captions");
    if (auto it = features.find(rec.image_id); it != features.end())
      rec.feature = it->second.data;
    records.push_back(std::move(rec));
  }
  return records;
}

std::vector<EncodedExample> encode_records(const std::vector<RawCaptionRecord>& records,
                                           Split split, const Vocabulary& vocab) {
  std::vector<EncodedExample> out;
  for (const auto& rec : records) {
    if (rec.split != split) continue;
    if (!rec.feature)
      throw std::runtime_error("record " + rec.image_id + " has no feature vector; cannot train on it");
    for (const auto& caption : rec.captions) {
      EncodedExample ex;
      ex.image_id = rec.image_id;
      ex.ids = encode_tokens(preprocess_caption(caption), vocab);
      ex.feature = *rec.feature;
      out.push_back(std::move(ex));
    }
  }
  return out;
}

std::map<std::string, std::vector<std::vector<std::string>>> reference_groups(
    const std::vector<RawCaptionRecord>& records, Split split) {
  std::map<std::string, std::vector<std::vector<std::string>>> out;
  for (const auto& rec : records) {
    if (rec.split != split) continue;
    for (const auto& caption : rec.captions) out[rec.image_id].push_back(preprocess_caption(caption));
  }
  return out;
}

std::vector<Batch> batch_iter(const std::vector<EncodedExample>& examples, int batch_size,
                              uint64_t seed, int epoch) {
  if (batch_size < 1) throw std::invalid_argument("batch_iter: batch_size must be >= 1");
  std::vector<int> order(examples.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  Rng rng(seed ^ (0x9e3779b97f4a7c15ull * static_cast<uint64_t>(epoch + 1)));
  rng.shuffle(order);

  std::vector<Batch> batches;
  for (size_t start = 0; start < order.size(); start += static_cast<size_t>(batch_size)) {
    const size_t end = std::min(order.size(), start + static_cast<size_t>(batch_size));
    Batch b;
    int max_len = 0;
    for (size_t k = start; k < end; ++k)
      max_len = std::max(max_len, examples[order[k]].length());
    const int B = static_cast<int>(end - start);
    const int feat_dim = examples.empty() ? 0 : static_cast<int>(examples[order[start]].feature.size());
    b.features = Matrix(B, feat_dim);
    b.mask = Matrix(B, max_len);
    for (size_t k = start; k < end; ++k) {
      const auto& ex = examples[order[k]];
      const int row = static_cast<int>(k - start);
      b.image_ids.push_back(ex.image_id);
      std::vector<int> padded(static_cast<size_t>(max_len), kPadId);
      for (int t = 0; t < ex.length(); ++t) {
        padded[static_cast<size_t>(t)] = ex.ids[static_cast<size_t>(t)];
        b.mask.at(row, t) = 1.0;
      }
      b.ids.push_back(std::move(padded));
      for (int f = 0; f < feat_dim; ++f) b.features.at(row, f) = ex.feature[static_cast<size_t>(f)];
    }
    batches.push_back(std::move(b));
  }
  return batches;
}

}  // namespace autornn
