// Command-line front end: preprocess | search | derive | train | evaluate |
// count-params | report. One JSON config drives the whole pipeline; dot-path
// --set overrides take precedence. Exit codes: 0 ok, 1 usage, 2 data error,
// 3 numerical divergence.
#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include "autornn/checkpoint.hpp"
#include "autornn/controller.hpp"
#include "autornn/datapipe.hpp"
#include "autornn/evalgen.hpp"
#include "autornn/genotype.hpp"
#include "autornn/search.hpp"
#include "autornn/supernet.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace autornn;

namespace {

struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct DivergenceError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open " + path);
  std::ostringstream out;
  out << f.rdbuf();
  return out.str();
}

void write_file(const std::string& path, const std::string& text) {
  fs::create_directories(fs::path(path).parent_path().empty() ? "." : fs::path(path).parent_path().string());
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot write " + path);
  f << text;
}

std::string hex64(uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

// ---------------------------------------------------------------- run config

struct RunConfig {
  std::string task = "synthetic";
  uint64_t seed = 7;
  std::string work_dir = "runs/toy";
  std::string profile = "toy";

  // data
  std::string karpathy_json, feature_prefix;
  int synth_n = 600;
  double synth_noise = 0.0;
  int vocab_min_count = -1;  // -1: 1 for synthetic, 5 for karpathy

  MacroConfig macro;
  NodeSemantics semantics = NodeSemantics::kGated;
  SearchConfig search;
  ControllerConfig controller;

  // retrain schedule
  int train_batch_size = 16;
  int warmup_steps = 200;
  int train_epochs = 20;
  double lr_scale = 1.0;
  int eval_every_steps = 50;

  // scst stage
  bool scst_enabled = false;
  ScstConfig scst;

  // decoding
  int beam_size = 3;
  bool length_normalize = true;

  json raw;  // post-override document, for hashing/echo
};

template <typename T>
void maybe(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

RunConfig parse_config(json j) {
  RunConfig c;
  maybe(j, "profile", c.profile);
  if (c.profile == "paper") {
    c.train_batch_size = 50;
    c.warmup_steps = 10000;
    c.train_epochs = 100;
    c.macro = MacroConfig{};  // published dims
  } else {
    c.macro.embed_size = 32;
    c.macro.hidden_size = 32;
    c.macro.unrestricted_dims = true;
  }

  maybe(j, "task", c.task);
  if (c.task != "synthetic" && c.task != "karpathy_json")
    throw DataError("config: task must be synthetic or karpathy_json");
  if (!j.contains("seed")) throw DataError("config: seed is mandatory");
  c.seed = j.at("seed").get<uint64_t>();
  maybe(j, "work_dir", c.work_dir);

  if (j.contains("data")) {
    const json& d = j["data"];
    maybe(d, "karpathy_json", c.karpathy_json);
    maybe(d, "feature_prefix", c.feature_prefix);
    maybe(d, "synth_n", c.synth_n);
    maybe(d, "synth_noise", c.synth_noise);
    maybe(d, "vocab_min_count", c.vocab_min_count);
  }
  if (c.vocab_min_count < 0) c.vocab_min_count = c.task == "synthetic" ? 1 : 5;

  if (j.contains("macro")) {
    const json& m = j["macro"];
    maybe(m, "n_blocks", c.macro.n_blocks);
    maybe(m, "embed_size", c.macro.embed_size);
    maybe(m, "hidden_size", c.macro.hidden_size);
    maybe(m, "label_smoothing", c.macro.label_smoothing);
    maybe(m, "init_hidden_each_epoch", c.macro.init_hidden_each_epoch);
    maybe(m, "tie_embeddings", c.macro.tie_embeddings);
    maybe(m, "controller_hidden", c.macro.controller_hidden);
    maybe(m, "unrestricted_dims", c.macro.unrestricted_dims);
  }
  {
    auto v = validate(c.macro);
    if (!v.empty()) throw DataError("config: macro: " + v.front());
  }
  if (j.contains("semantics")) {
    auto s = semantics_from_name(j["semantics"].get<std::string>());
    if (!s) throw DataError("config: unknown semantics");
    c.semantics = *s;
  }

  c.search.n_blocks = c.macro.n_blocks;
  c.search.seed = c.seed;
  if (j.contains("search")) {
    const json& s = j["search"];
    maybe(s, "epochs", c.search.epochs);
    maybe(s, "batch_size", c.search.batch_size);
    maybe(s, "theta_batches_per_phase", c.search.theta_batches_per_phase);
    maybe(s, "traces_per_update", c.search.traces_per_update);
    maybe(s, "reward_subsample", c.search.reward_subsample);
    maybe(s, "baseline_decay", c.search.baseline_decay);
    maybe(s, "derive_samples", c.search.derive_samples);
    maybe(s, "omega_lr", c.search.omega_lr);
    maybe(s, "controller_lr", c.search.controller_lr);
    maybe(s, "entropy_weight", c.search.entropy_weight);
    if (s.contains("reward_mode")) {
      auto m = reward_mode_from_name(s["reward_mode"].get<std::string>());
      if (!m) throw DataError("config: unknown reward_mode");
      c.search.reward_mode = *m;
    }
  }
  {
    auto v = validate(c.search);
    if (!v.empty()) throw DataError("config: search: " + v.front());
  }

  c.controller.n_max = c.search.n_blocks;
  c.controller.hidden = c.macro.controller_hidden;
  if (j.contains("controller")) {
    const json& t = j["controller"];
    maybe(t, "hidden", c.controller.hidden);
    maybe(t, "embed", c.controller.embed);
    maybe(t, "temperature", c.controller.temperature);
    maybe(t, "tanh_constant", c.controller.tanh_constant);
    maybe(t, "search_macro", c.controller.search_macro);
  }

  if (j.contains("schedule")) {
    const json& s = j["schedule"];
    maybe(s, "batch_size", c.train_batch_size);
    maybe(s, "warmup_steps", c.warmup_steps);
    maybe(s, "epochs", c.train_epochs);
    maybe(s, "lr_scale", c.lr_scale);
    maybe(s, "eval_every_steps", c.eval_every_steps);
  }
  if (c.train_batch_size < 1) throw DataError("config: schedule.batch_size must be >= 1");

  c.scst.seed = c.seed ^ 0x5c57;
  if (j.contains("scst")) {
    const json& s = j["scst"];
    maybe(s, "enabled", c.scst_enabled);
    maybe(s, "steps", c.scst.steps);
    maybe(s, "batch_size", c.scst.batch_size);
    maybe(s, "lr", c.scst.lr);
  }
  if (j.contains("beam")) {
    maybe(j["beam"], "size", c.beam_size);
    maybe(j["beam"], "length_normalize", c.length_normalize);
  }
  c.raw = std::move(j);
  return c;
}

RunConfig load_config(const std::string& path, const std::vector<std::string>& overrides) {
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::exception& e) {
    throw DataError("config " + path + ": " + e.what());
  }
  for (const std::string& ov : overrides) {
    const auto eq = ov.find('=');
    if (eq == std::string::npos) throw CLI::ValidationError("--set expects key.path=value");
    std::string pointer = "/" + ov.substr(0, eq);
    for (auto& ch : pointer)
      if (ch == '.') ch = '/';
    json value;
    try {
      value = json::parse(ov.substr(eq + 1));
    } catch (const json::exception&) {
      value = ov.substr(eq + 1);  // bare string
    }
    j[json::json_pointer(pointer)] = value;
  }
  return parse_config(std::move(j));
}

// ----------------------------------------------------------- artifact plumbing

std::string path_in(const RunConfig& c, const std::string& name) {
  return (fs::path(c.work_dir) / name).string();
}

void write_manifest(const RunConfig& c, const std::string& stage,
                    const std::vector<std::string>& inputs,
                    const std::vector<std::string>& outputs, double seconds) {
  json m;
  m["stage"] = stage;
  m["config_hash"] = hex64(fnv1a64(c.raw.dump()));
  json in = json::object();
  for (const auto& p : inputs)
    if (fs::exists(p)) in[p] = hex64(fnv1a64(read_file(p)));
  m["inputs"] = in;
  m["outputs"] = outputs;
  m["wall_time_sec"] = seconds;  // informational; excluded from hashed content
  write_file(path_in(c, stage + ".manifest.json"), m.dump(2) + "\n");
}

void save_examples(const std::string& path, const std::vector<EncodedExample>& examples) {
  std::ostringstream out;
  for (const auto& ex : examples) {
    json j{{"image_id", ex.image_id}, {"ids", ex.ids}, {"feature", ex.feature}};
    out << j.dump() << "\n";
  }
  write_file(path, out.str());
}

std::vector<EncodedExample> load_examples(const std::string& path) {
  std::istringstream in(read_file(path));
  std::vector<EncodedExample> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    json j = json::parse(line);
    EncodedExample ex;
    ex.image_id = j.at("image_id").get<std::string>();
    ex.ids = j.at("ids").get<std::vector<int>>();
    ex.feature = j.at("feature").get<std::vector<double>>();
    out.push_back(std::move(ex));
  }
  if (out.empty()) throw DataError("no examples in " + path);
  return out;
}

void save_refs(const std::string& path, const std::map<std::string, RefGroup>& refs) {
  json j = json::object();
  for (const auto& [id, group] : refs) j[id] = group;
  write_file(path, j.dump() + "\n");
}

std::map<std::string, RefGroup> load_refs(const std::string& path) {
  json j = json::parse(read_file(path));
  std::map<std::string, RefGroup> out;
  for (auto it = j.begin(); it != j.end(); ++it) out[it.key()] = it.value().get<RefGroup>();
  return out;
}

struct Preprocessed {
  Vocabulary vocab;
  int feature_dim = 0;
  std::vector<EncodedExample> train, val, test;
  std::map<std::string, RefGroup> train_refs, val_refs, test_refs;
};

Preprocessed load_preprocessed(const RunConfig& c, bool want_test = false) {
  Preprocessed p;
  p.vocab = Vocabulary::from_json(read_file(path_in(c, "vocab.json")));
  p.feature_dim = json::parse(read_file(path_in(c, "meta.json"))).at("feature_dim").get<int>();
  p.train = load_examples(path_in(c, "train.jsonl"));
  p.val = load_examples(path_in(c, "val.jsonl"));
  p.train_refs = load_refs(path_in(c, "refs.train.json"));
  p.val_refs = load_refs(path_in(c, "refs.val.json"));
  if (want_test) {
    p.test = load_examples(path_in(c, "test.jsonl"));
    p.test_refs = load_refs(path_in(c, "refs.test.json"));
  }
  return p;
}

ParamMap load_checkpoint(const RunConfig& c, const std::string& name) {
  const std::string prefix = path_in(c, name);
  if (!fs::exists(prefix + ".json") || !fs::exists(prefix + ".bin"))
    throw DataError("missing checkpoint " + prefix + " (run the earlier pipeline stage first)");
  return load_params(prefix);
}

// Fresh bank plus controller wired from the run config, with weights loaded
// from the search checkpoints.
struct SearchState {
  SharedParamBank bank;
  Controller controller;
};

SearchState load_search_state(const RunConfig& c, const Preprocessed& p) {
  Rng brng(c.seed);
  SharedParamBank bank = init_bank(c.search.n_blocks, c.macro, c.semantics, p.vocab.size(),
                                   p.feature_dim, brng);
  ParamMap omega = load_checkpoint(c, "search.omega");
  for (auto& [k, m] : bank.tensors) {
    auto it = omega.find(k);
    if (it == omega.end() || it->second.rows != m.rows || it->second.cols != m.cols)
      throw DataError("search.omega checkpoint does not match the configured bank at key " + k);
    m = it->second;
  }
  Rng crng(c.seed ^ 0x7e7a);
  Controller ctrl(c.controller, crng);
  ParamMap theta = load_checkpoint(c, "search.theta");
  for (auto& [k, m] : ctrl.params()) {
    auto it = theta.find(k);
    if (it == theta.end() || it->second.rows != m.rows || it->second.cols != m.cols)
      throw DataError("search.theta checkpoint does not match the configured controller at key " + k);
    m = it->second;
  }
  return SearchState{std::move(bank), std::move(ctrl)};
}

// ---------------------------------------------------------------- svg curves

std::string curve_svg(const std::vector<std::pair<double, double>>& train_loss,
                      const std::vector<std::pair<double, double>>& val_loss) {
  const double W = 640, H = 400, ml = 50, mb = 30, mt = 10, mr = 10;
  double xmax = 1, ymax = 1e-9;
  for (const auto* s : {&train_loss, &val_loss})
    for (auto [x, y] : *s) {
      xmax = std::max(xmax, x);
      ymax = std::max(ymax, y);
    }
  auto px = [&](double x) { return ml + (W - ml - mr) * x / xmax; };
  auto py = [&](double y) { return H - mb - (H - mb - mt) * y / ymax; };
  auto polyline = [&](const std::vector<std::pair<double, double>>& s, const char* color) {
    if (s.empty()) return std::string();
    std::ostringstream o;
    o << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
    for (auto [x, y] : s) o << px(x) << "," << py(y) << " ";
    o << "\"/>\n";
    return o.str();
  };
  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 " << W << " " << H << "\">\n"
      << "<rect width=\"" << W << "\" height=\"" << H << "\" fill=\"white\"/>\n"
      << "<line x1=\"" << ml << "\" y1=\"" << H - mb << "\" x2=\"" << W - mr << "\" y2=\""
      << H - mb << "\" stroke=\"black\"/>\n"
      << "<line x1=\"" << ml << "\" y1=\"" << mt << "\" x2=\"" << ml << "\" y2=\"" << H - mb
      << "\" stroke=\"black\"/>\n"
      << "<text x=\"" << W / 2 << "\" y=\"" << H - 8 << "\" font-size=\"12\">step</text>\n"
      << "<text x=\"8\" y=\"" << H / 2 << "\" font-size=\"12\">loss</text>\n"
      << polyline(train_loss, "#1f77b4") << polyline(val_loss, "#d62728") << "</svg>\n";
  return svg.str();
}

// ----------------------------------------------------------------- helpers

std::vector<std::pair<std::string, std::vector<double>>> unique_images(
    const std::vector<EncodedExample>& examples) {
  std::vector<std::pair<std::string, std::vector<double>>> out;
  std::set<std::string> seen;
  for (const auto& ex : examples)
    if (seen.insert(ex.image_id).second) out.emplace_back(ex.image_id, ex.feature);
  return out;
}

MetricReport decode_and_score(ChildModel& child, const std::vector<EncodedExample>& examples,
                              const std::map<std::string, RefGroup>& refs, const Vocabulary& vocab,
                              const BeamConfig& beam, std::vector<json>* dump) {
  ChildSequenceModel decoder(child);
  std::vector<TokenSeq> cands;
  std::vector<RefGroup> groups;
  for (const auto& [image_id, feature] : unique_images(examples)) {
    auto rit = refs.find(image_id);
    if (rit == refs.end()) throw DataError("no references for image " + image_id);
    std::vector<int> ids = beam.beam == 1 ? greedy_decode(decoder, feature, beam.max_len)
                                          : beam_decode(decoder, feature, beam);
    TokenSeq tokens = ids_to_tokens(ids, vocab);
    if (dump) {
      std::string caption;
      for (const auto& t : tokens) caption += (caption.empty() ? "" : " ") + t;
      dump->push_back(json{{"image_id", image_id}, {"caption", caption}, {"ids", ids}});
    }
    cands.push_back(std::move(tokens));
    groups.push_back(rit->second);
  }
  return evaluate_all(cands, groups);
}

double token_accuracy(ChildModel& child, const std::vector<EncodedExample>& examples,
                      double smoothing, int batch_size) {
  double hits = 0.0, total = 0.0;
  for (const Batch& batch : batch_iter(examples, batch_size, 0, 0)) {
    Tape tape;
    SequenceResult res = child.sequence_forward(tape, batch, smoothing);
    for (size_t t = 0; t < res.logits.size(); ++t) {
      const Matrix& lg = tape.value(res.logits[t]);
      for (int b = 0; b < lg.rows; ++b) {
        if (batch.mask.at(b, static_cast<int>(t) + 1) == 0.0) continue;
        int best = 0;
        for (int v = 1; v < lg.cols; ++v)
          if (lg.at(b, v) > lg.at(b, best)) best = v;
        total += 1.0;
        if (best == batch.ids[static_cast<size_t>(b)][t + 1]) hits += 1.0;
      }
    }
  }
  return total > 0.0 ? hits / total : 0.0;
}

double mean_val_loss(ChildModel& child, const std::vector<EncodedExample>& examples,
                     double smoothing, int batch_size) {
  double lw = 0.0, w = 0.0;
  for (const Batch& batch : batch_iter(examples, batch_size, 0, 0)) {
    Tape tape;
    SequenceResult res = child.sequence_forward(tape, batch, smoothing);
    lw += tape.value(res.loss).data[0] * res.total_weight;
    w += res.total_weight;
  }
  return lw / w;
}

std::string fmt_m(int64_t v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.1fM", static_cast<double>(v) / 1e6);
  return buf;
}

// ---------------------------------------------------------------- subcommands

int cmd_preprocess(const RunConfig& c) {
  const auto t0 = std::chrono::steady_clock::now();
  std::vector<RawCaptionRecord> records;
  int feature_dim = 0;
  if (c.task == "synthetic") {
    SyntheticSceneSpec spec;
    spec.feature_noise = c.synth_noise;
    records = synth_generate(spec, c.synth_n, c.seed);
    feature_dim = spec.feature_dim();
  } else {
    if (c.karpathy_json.empty()) throw DataError("karpathy_json task needs data.karpathy_json");
    records = ingest_karpathy_json(c.karpathy_json, c.feature_prefix);
    for (const auto& r : records)
      if (r.feature) feature_dim = static_cast<int>(r.feature->size());
  }
  if (records.empty()) throw DataError("empty corpus");

  std::vector<std::vector<std::string>> corpus;
  int truncated = 0;
  for (const auto& r : records) {
    for (const auto& cap : r.captions) {
      auto toks = preprocess_caption(cap);
      if (static_cast<int>(toks.size()) > kMaxCaptionTokens) ++truncated;
      if (r.split == Split::kTrain) corpus.push_back(std::move(toks));
    }
  }
  Vocabulary vocab = build_vocab(corpus, c.vocab_min_count);

  auto train = encode_records(records, Split::kTrain, vocab);
  auto val = encode_records(records, Split::kVal, vocab);
  auto test = encode_records(records, Split::kTest, vocab);
  write_file(path_in(c, "vocab.json"), vocab.to_json() + "\n");
  save_examples(path_in(c, "train.jsonl"), train);
  save_examples(path_in(c, "val.jsonl"), val);
  save_examples(path_in(c, "test.jsonl"), test);
  save_refs(path_in(c, "refs.train.json"), reference_groups(records, Split::kTrain));
  save_refs(path_in(c, "refs.val.json"), reference_groups(records, Split::kVal));
  save_refs(path_in(c, "refs.test.json"), reference_groups(records, Split::kTest));
  json meta{{"feature_dim", feature_dim},
            {"vocab_size", vocab.size()},
            {"truncated_captions", truncated},
            {"examples", {{"train", train.size()}, {"val", val.size()}, {"test", test.size()}}}};
  write_file(path_in(c, "meta.json"), meta.dump(2) + "\n");
  {
    std::ostringstream splits;
    splits << "train " << train.size() << "\nval " << val.size() << "\ntest " << test.size() << "\n";
    write_file(path_in(c, "splits.txt"), splits.str());
  }

  std::cout << "vocab size " << vocab.size() << " (min count " << c.vocab_min_count << ")\n"
            << "examples train/val/test " << train.size() << "/" << val.size() << "/"
            << test.size() << "\n"
            << "captions truncated to " << kMaxCaptionTokens << " tokens: " << truncated << "\n";
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  write_manifest(c, "preprocess", {c.karpathy_json},
                 {path_in(c, "vocab.json"), path_in(c, "train.jsonl"), path_in(c, "val.jsonl"),
                  path_in(c, "test.jsonl"), path_in(c, "meta.json")},
                 secs);
  return 0;
}

int cmd_search(const RunConfig& c) {
  const auto t0 = std::chrono::steady_clock::now();
  Preprocessed p = load_preprocessed(c);

  Rng brng(c.seed);
  SharedParamBank bank =
      init_bank(c.search.n_blocks, c.macro, c.semantics, p.vocab.size(), p.feature_dim, brng);
  Rng crng(c.seed ^ 0x7e7a);
  Controller ctrl(c.controller, crng);

  SearchData data;
  data.train = &p.train;
  data.val = &p.val;
  data.val_refs = &p.val_refs;
  data.vocab = &p.vocab;

  fs::create_directories(c.work_dir);
  const std::string log_path = path_in(c, "search.log.jsonl");
  std::ofstream log(log_path, std::ios::binary);
  if (!log) throw DataError("cannot write " + log_path);
  SearchResult res;
  try {
    res = run_search(c.search, bank, ctrl, data, log, path_in(c, "search"));
  } catch (const std::runtime_error& e) {
    if (std::string(e.what()).find("diverged") != std::string::npos) throw DivergenceError(e.what());
    throw;
  }
  log.close();

  std::cout << "search finished: " << res.phase1_steps << " shared-weight steps, "
            << res.phase2_updates << " policy updates, final baseline " << res.baseline << "\n";
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  write_manifest(c, "search", {path_in(c, "train.jsonl"), path_in(c, "val.jsonl")},
                 {log_path, path_in(c, "search.omega.bin"), path_in(c, "search.theta.bin")}, secs);
  return 0;
}

int cmd_derive(const RunConfig& c, int samples_override) {
  const auto t0 = std::chrono::steady_clock::now();
  Preprocessed p = load_preprocessed(c);
  SearchState st = load_search_state(c, p);
  const int k = samples_override > 0 ? samples_override : c.search.derive_samples;

  Rng rng(c.seed ^ 0xd317e);
  DeriveResult res =
      derive(st.controller, st.bank, k, p.val, p.val_refs, p.vocab, c.search.reward_mode, rng);

  write_file(path_in(c, "derived.genotype.json"),
             genotype_to_json(res.best.genotype, c.macro, c.semantics) + "\n");

  // All K candidates, best first; rank 1 is the emitted genotype.
  std::vector<int> order(res.candidates.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    const auto& ca = res.candidates[static_cast<size_t>(a)];
    const auto& cb = res.candidates[static_cast<size_t>(b)];
    if (ca.reward != cb.reward) return ca.reward > cb.reward;
    return ca.params_touched < cb.params_touched;
  });
  std::ostringstream csv;
  csv << "rank,sample_index,reward,cider,bleu4,bleu1,rouge_l,loss,params,wall_time_sec,genotype\n";
  for (size_t r = 0; r < order.size(); ++r) {
    const auto& cand = res.candidates[static_cast<size_t>(order[r])];
    json g = json::parse(genotype_to_json(cand.genotype, c.macro, c.semantics));
    std::string cell = g["nodes"].dump();
    for (size_t i = 0; i < cell.size(); ++i)
      if (cell[i] == '"') cell.insert(i++, 1, '"');
    csv << r + 1 << "," << order[r] << "," << cand.reward << "," << cand.metrics.cider << ","
        << cand.metrics.bleu4 << "," << cand.metrics.bleu1 << "," << cand.metrics.rouge_l << ","
        << cand.loss << "," << cand.params_touched << "," << cand.wall_time_sec << ",\"" << cell
        << "\"\n";
  }
  write_file(path_in(c, "candidates.csv"), csv.str());

  std::cout << "derived genotype (reward " << res.best.reward << ", mode "
            << reward_mode_name(c.search.reward_mode) << ") -> "
            << path_in(c, "derived.genotype.json") << "\n";
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  write_manifest(c, "derive", {path_in(c, "search.omega.bin"), path_in(c, "search.theta.bin")},
                 {path_in(c, "derived.genotype.json"), path_in(c, "candidates.csv")}, secs);
  return 0;
}

int cmd_train(const RunConfig& c, const std::string& genotype_path, bool from_bank) {
  const auto t0 = std::chrono::steady_clock::now();
  Preprocessed p = load_preprocessed(c);
  const std::string gpath =
      genotype_path.empty() ? path_in(c, "derived.genotype.json") : genotype_path;
  ParsedGenotype parsed;
  try {
    parsed = genotype_from_json(read_file(gpath));
  } catch (const std::runtime_error& e) {
    throw DataError(std::string("genotype ") + gpath + ": " + e.what());
  }

  // Standalone parameter set: fresh init by default, or extracted from the
  // search bank to keep the shared weights.
  ParamMap params;
  {
    Rng rng(c.seed ^ 0x12a1);
    SharedParamBank bank = init_bank(parsed.genotype.n_blocks, parsed.macro, parsed.semantics,
                                     p.vocab.size(), p.feature_dim, rng);
    if (from_bank) {
      SearchState st = load_search_state(c, p);
      ChildModel shared(parsed.genotype, &st.bank.tensors, st.bank.macro, st.bank.semantics,
                        st.bank.vocab_size, st.bank.feature_dim);
      params = shared.extract();
    } else {
      ChildModel fresh(parsed.genotype, &bank.tensors, parsed.macro, parsed.semantics,
                       p.vocab.size(), p.feature_dim);
      params = fresh.extract();
    }
  }
  ChildModel child(parsed.genotype, &params, parsed.macro, parsed.semantics, p.vocab.size(),
                   p.feature_dim);

  OptimizerConfig ocfg;
  ocfg.clip_norm = 5.0;
  Optimizer opt(ocfg);
  std::ostringstream curves;
  curves << "step,epoch,train_loss,val_loss,val_acc,val_cider\n";
  std::vector<std::pair<double, double>> train_curve, val_curve;
  int64_t step = 0;

  auto eval_row = [&](int epoch, double train_loss) {
    const double vl = mean_val_loss(child, p.val, parsed.macro.label_smoothing, c.train_batch_size);
    const double acc = token_accuracy(child, p.val, parsed.macro.label_smoothing, c.train_batch_size);
    BeamConfig greedy;
    greedy.beam = 1;
    MetricReport m = decode_and_score(child, p.val, p.val_refs, p.vocab, greedy, nullptr);
    curves << step << "," << epoch << "," << train_loss << "," << vl << "," << acc << ","
           << m.cider << "\n";
    val_curve.emplace_back(static_cast<double>(step), vl);
    std::cout << "step " << step << " train " << train_loss << " val " << vl << " acc " << acc
              << " cider " << m.cider << "\n";
  };

  for (int epoch = 0; epoch < c.train_epochs; ++epoch) {
    for (const Batch& batch : batch_iter(p.train, c.train_batch_size, c.seed, epoch)) {
      Tape tape;
      SequenceResult res = child.sequence_forward(tape, batch, parsed.macro.label_smoothing);
      const double loss = tape.value(res.loss).data[0];
      if (!std::isfinite(loss))
        throw DivergenceError("training loss diverged at step " + std::to_string(step) +
                              "; try a smaller lr_scale or more warmup");
      tape.backward(res.loss);
      ++step;
      const double lr = c.lr_scale * noam_lr(step, parsed.macro.hidden_size, c.warmup_steps);
      opt.step(params, tape.param_grads(), lr);
      train_curve.emplace_back(static_cast<double>(step), loss);
      if (step % c.eval_every_steps == 0) {
        eval_row(epoch, loss);
      } else {
        curves << step << "," << epoch << "," << loss << ",,,\n";
      }
    }
  }
  eval_row(c.train_epochs - 1, train_curve.empty() ? 0.0 : train_curve.back().second);

  if (c.scst_enabled) {
    ScstConfig scfg = c.scst;
    ScstStats stats = scst_finetune(child, p.train, p.train_refs, p.vocab, scfg);
    std::cout << "scst: mean sampled reward " << stats.mean_sampled_reward << ", greedy baseline "
              << stats.mean_greedy_reward << "\n";
    eval_row(c.train_epochs - 1, train_curve.empty() ? 0.0 : train_curve.back().second);
  }

  save_params(path_in(c, "model"), params);
  write_file(path_in(c, "model.genotype.json"),
             genotype_to_json(parsed.genotype, parsed.macro, parsed.semantics) + "\n");
  write_file(path_in(c, "curves.csv"), curves.str());
  write_file(path_in(c, "curves.svg"), curve_svg(train_curve, val_curve));

  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  write_manifest(c, "train", {gpath, path_in(c, "train.jsonl")},
                 {path_in(c, "model.bin"), path_in(c, "curves.csv"), path_in(c, "curves.svg")},
                 secs);
  return 0;
}

int cmd_evaluate(const RunConfig& c, const std::string& split, int beam_override) {
  const auto t0 = std::chrono::steady_clock::now();
  Preprocessed p = load_preprocessed(c, /*want_test=*/true);
  ParsedGenotype parsed = genotype_from_json(read_file(path_in(c, "model.genotype.json")));
  ParamMap params = load_checkpoint(c, "model");
  ChildModel child(parsed.genotype, &params, parsed.macro, parsed.semantics, p.vocab.size(),
                   p.feature_dim);

  const std::vector<EncodedExample>* examples = nullptr;
  const std::map<std::string, RefGroup>* refs = nullptr;
  if (split == "val") {
    examples = &p.val;
    refs = &p.val_refs;
  } else if (split == "test") {
    examples = &p.test;
    refs = &p.test_refs;
  } else {
    throw DataError("unknown split " + split + " (use val or test)");
  }
  if (examples->empty()) throw DataError("split " + split + " is empty");

  BeamConfig beam;
  beam.beam = beam_override > 0 ? beam_override : c.beam_size;
  beam.length_normalize = c.length_normalize;
  std::vector<json> dump;
  MetricReport report = decode_and_score(child, *examples, *refs, p.vocab, beam, &dump);

  std::ostringstream decodes;
  for (const auto& d : dump) decodes << d.dump() << "\n";
  write_file(path_in(c, "decodes." + split + ".jsonl"), decodes.str());
  write_file(path_in(c, "report." + split + ".json"), report.to_json_percent() + "\n");
  write_file(path_in(c, "report." + split + ".csv"), report.to_csv_percent() + "\n");
  std::cout << report.to_json_percent() << "\n";

  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  write_manifest(c, "evaluate", {path_in(c, "model.bin")},
                 {path_in(c, "report." + split + ".json"),
                  path_in(c, "decodes." + split + ".jsonl")},
                 secs);
  return 0;
}

int cmd_count_params(const std::string& genotype_path) {
  ParsedGenotype parsed;
  try {
    parsed = genotype_from_json(read_file(genotype_path));
  } catch (const std::runtime_error& e) {
    throw DataError(std::string("genotype ") + genotype_path + ": " + e.what());
  }
  const ParamCount pc = param_count(parsed.genotype, parsed.macro, parsed.semantics);

  // Published reference sizes for the recurrent cell at these dims.
  struct Ref {
    int n, hidden;
    double params_m, size_m;
  };
  static const Ref kCellRefs[] = {{6, 512, 3.5, 14.0},  {8, 512, 4.5, 18.0},  {10, 512, 5.5, 22.0},
                                  {6, 1024, 14.0, 56.0}, {8, 1024, 18.0, 72.0}, {10, 1024, 22.0, 88.0}};
  static const Ref kLstmRefs[] = {{0, 512, 2.0, 8.0}, {0, 1024, 8.0, 32.0}};

  std::cout << "cell (" << semantics_name(parsed.semantics) << ", N=" << parsed.genotype.n_blocks
            << ", embed=" << parsed.macro.embed_size << ", hidden=" << parsed.macro.hidden_size
            << "): " << fmt_m(pc.cell) << " params, " << fmt_m(pc.cell_bytes) << " size";
  for (const Ref& r : kCellRefs)
    if (parsed.semantics == NodeSemantics::kGated && r.n == parsed.genotype.n_blocks &&
        r.hidden == parsed.macro.hidden_size && parsed.macro.embed_size == parsed.macro.hidden_size)
      std::cout << "  [reference " << r.params_m << "M / " << r.size_m << "M]";
  std::cout << "\n";

  const int64_t lstm = lstm_param_count(parsed.macro);
  std::cout << "lstm reference (embed=" << parsed.macro.embed_size
            << ", hidden=" << parsed.macro.hidden_size << "): " << fmt_m(lstm) << " params, "
            << fmt_m(lstm * 4) << " size";
  for (const Ref& r : kLstmRefs)
    if (r.hidden == parsed.macro.hidden_size && parsed.macro.embed_size == parsed.macro.hidden_size)
      std::cout << "  [reference " << r.params_m << "M / " << r.size_m << "M]";
  std::cout << "\n";
  return 0;
}

int cmd_report(const RunConfig& c) {
  std::ostringstream md;
  md << "# Run report\n\n";
  const std::string meta_path = path_in(c, "meta.json");
  if (fs::exists(meta_path)) {
    json meta = json::parse(read_file(meta_path));
    md << "## Data\n\nvocab size " << meta["vocab_size"] << ", examples "
       << meta["examples"]["train"] << "/" << meta["examples"]["val"] << "/"
       << meta["examples"]["test"] << " (train/val/test), truncated captions "
       << meta["truncated_captions"] << "\n\n";
  }
  const std::string cand_path = path_in(c, "candidates.csv");
  if (fs::exists(cand_path)) {
    md << "## Derived candidates\n\n```\n" << read_file(cand_path) << "```\n\n";
  }
  for (const char* split : {"val", "test"}) {
    const std::string rp = path_in(c, std::string("report.") + split + ".json");
    if (fs::exists(rp)) md << "## Metrics (" << split << ")\n\n" << read_file(rp) << "\n";
  }
  const std::string out = path_in(c, "report.md");
  write_file(out, md.str());
  std::cout << md.str();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"architecture search for recurrent caption decoders"};
  app.require_subcommand(1);

  std::string config_path = "config.json";
  std::vector<std::string> overrides;
  app.add_option("--config", config_path, "run configuration JSON");
  app.add_option("--set", overrides, "dot-path config override, e.g. --set search.epochs=5");

  auto* prep = app.add_subcommand("preprocess", "build vocabulary and encoded splits");
  auto* search = app.add_subcommand("search", "two-phase architecture search");
  auto* derive_cmd = app.add_subcommand("derive", "sample and pick the best genotype");
  int derive_k = 0;
  derive_cmd->add_option("--samples", derive_k, "override derive sample count");
  auto* train = app.add_subcommand("train", "retrain a genotype from scratch");
  std::string genotype_path;
  bool from_bank = false;
  train->add_option("--genotype", genotype_path, "genotype JSON (default: derived)");
  train->add_flag("--from-bank", from_bank, "start from extracted shared weights");
  auto* eval = app.add_subcommand("evaluate", "decode a split and score it");
  std::string split = "val";
  int beam_override = 0;
  eval->add_option("--split", split, "val or test");
  eval->add_option("--beam", beam_override, "beam width override (1 = greedy)");
  auto* count = app.add_subcommand("count-params", "parameter accounting for a genotype");
  std::string count_genotype;
  count->add_option("genotype", count_genotype, "genotype JSON path")->required();
  auto* report = app.add_subcommand("report", "assemble a markdown report from run artifacts");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    if (count->parsed()) return cmd_count_params(count_genotype);
    RunConfig cfg = load_config(config_path, overrides);
    if (prep->parsed()) return cmd_preprocess(cfg);
    if (search->parsed()) return cmd_search(cfg);
    if (derive_cmd->parsed()) return cmd_derive(cfg, derive_k);
    if (train->parsed()) return cmd_train(cfg, genotype_path, from_bank);
    if (eval->parsed()) return cmd_evaluate(cfg, split, beam_override);
    if (report->parsed()) return cmd_report(cfg);
  } catch (const DivergenceError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const DataError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
