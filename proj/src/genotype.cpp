#include "autornn/genotype.hpp"

#include <algorithm>
#include <set>
#include <stdexcept>

#include <json.hpp>

namespace autornn {

std::string semantics_name(NodeSemantics s) {
  return s == NodeSemantics::kPlain ? "plain" : "gated";
}

std::optional<NodeSemantics> semantics_from_name(const std::string& name) {
  if (name == "plain") return NodeSemantics::kPlain;
  if (name == "gated") return NodeSemantics::kGated;
  return std::nullopt;
}

std::vector<std::string> validate(const CellGenotype& g) {
  std::vector<std::string> violations;
  if (g.n_blocks < 1) violations.push_back("n_blocks must be >= 1");
  if (static_cast<int>(g.nodes.size()) != g.n_blocks)
    violations.push_back("node list length must equal n_blocks");
  const int n = static_cast<int>(g.nodes.size());
  for (int i = 1; i <= n; ++i) {
    const auto& nd = g.nodes[i - 1];
    if (i == 1) {
      if (nd.prev.has_value()) violations.push_back("node 1 must have no prev");
      continue;
    }
    if (!nd.prev.has_value()) {
      violations.push_back("node " + std::to_string(i) + ": missing prev");
      continue;
    }
    if (*nd.prev < 1 || *nd.prev > g.n_blocks)
      violations.push_back("node " + std::to_string(i) + ": prev out of range 1..n_blocks");
    if (*nd.prev >= i)
      violations.push_back("node " + std::to_string(i) + ": prev must be < node index");
  }
  return violations;
}

namespace {
bool in_set(int v, std::initializer_list<int> opts) {
  return std::find(opts.begin(), opts.end(), v) != opts.end();
}
}  // namespace

std::vector<std::string> validate(const MacroConfig& m) {
  std::vector<std::string> violations;
  if (!in_set(m.n_blocks, {6, 8, 10, 12}) && !m.unrestricted_dims)
    violations.push_back("n_blocks not in {6,8,10,12}");
  if (m.n_blocks < 1) violations.push_back("n_blocks must be positive");
  if (!m.unrestricted_dims) {
    if (!in_set(m.embed_size, {200, 512, 1000, 2048})) violations.push_back("embed_size not in option set");
    if (!in_set(m.hidden_size, {200, 512, 1000, 2048}))
      violations.push_back("hidden_size not in option set");
    if (!in_set(m.controller_hidden, {100, 200, 512, 1024}))
      violations.push_back("controller_hidden not in option set");
  }
  if (m.embed_size < 1 || m.hidden_size < 1 || m.controller_hidden < 1)
    violations.push_back("dimensions must be positive");
  if (m.label_smoothing != 0.0 && m.label_smoothing != 0.1)
    violations.push_back("label_smoothing not in {0, 0.1}");
  return violations;
}

std::vector<int> leaf_set(const CellGenotype& g) {
  std::set<int> referenced;
  for (const auto& nd : g.nodes)
    if (nd.prev) referenced.insert(*nd.prev);
  std::vector<int> leaves;
  for (int i = 1; i <= g.n_blocks; ++i)
    if (!referenced.count(i)) leaves.push_back(i);
  return leaves;
}

ParamCount param_count(const CellGenotype& g, const MacroConfig& macro, NodeSemantics sem,
                       int vocab_size) {
  const int64_t e = macro.embed_size, h = macro.hidden_size;
  const int64_t per_matrix_mult = (sem == NodeSemantics::kGated) ? 2 : 1;
  ParamCount pc;
  pc.cell = per_matrix_mult * (e * h + h * h);        // node 1: W^x and W^h_1
  pc.cell += per_matrix_mult * (g.n_blocks - 1) * h * h;  // one connection matrix per node >= 2
  pc.cell_bytes = pc.cell * 4;
  if (vocab_size > 0) {
    pc.embed = static_cast<int64_t>(vocab_size) * e;
    pc.proj = macro.tie_embeddings ? 0 : h * static_cast<int64_t>(vocab_size);
  }
  return pc;
}

int64_t lstm_param_count(const MacroConfig& macro) {
  const int64_t e = macro.embed_size, h = macro.hidden_size;
  return 4 * (e * h + h * h);
}

LstmCell::LstmCell(const MacroConfig& macro, Rng& rng, bool with_bias)
    : hidden_(macro.hidden_size), with_bias_(with_bias) {
  params_.emplace("lstm.w_ih", rng.uniform_matrix(macro.embed_size, 4 * hidden_, -0.04, 0.04));
  params_.emplace("lstm.w_hh", rng.uniform_matrix(hidden_, 4 * hidden_, -0.04, 0.04));
  if (with_bias_) params_.emplace("lstm.bias", Matrix(1, 4 * hidden_));
}

std::pair<ValueId, ValueId> LstmCell::step(Tape& tape, ValueId x, ValueId h, ValueId c) const {
  ValueId gates = tape.add(tape.matmul(x, tape.param(&params_.at("lstm.w_ih"), "lstm.w_ih")),
                           tape.matmul(h, tape.param(&params_.at("lstm.w_hh"), "lstm.w_hh")));
  if (with_bias_) gates = tape.add_row(gates, tape.param(&params_.at("lstm.bias"), "lstm.bias"));
  const int H = hidden_;
  ValueId i = tape.activation(tape.slice_cols(gates, 0, H), ActivationKind::kSigmoid);
  ValueId f = tape.activation(tape.slice_cols(gates, H, 2 * H), ActivationKind::kSigmoid);
  ValueId o = tape.activation(tape.slice_cols(gates, 2 * H, 3 * H), ActivationKind::kSigmoid);
  ValueId gt = tape.activation(tape.slice_cols(gates, 3 * H, 4 * H), ActivationKind::kTanh);
  ValueId c_next = tape.add(tape.hadamard(f, c), tape.hadamard(i, gt));
  ValueId h_next = tape.hadamard(o, tape.activation(c_next, ActivationKind::kTanh));
  return {h_next, c_next};
}

CellGenotype random_genotype(Rng& rng, int n_blocks) {
  if (n_blocks < 1) throw std::invalid_argument("random_genotype: n_blocks must be >= 1");
  CellGenotype g;
  g.n_blocks = n_blocks;
  for (int i = 1; i <= n_blocks; ++i) {
    NodeDecision nd;
    if (i >= 2) nd.prev = 1 + rng.uniform_int(i - 1);
    nd.act = static_cast<ActivationKind>(rng.uniform_int(kNumActivations));
    g.nodes.push_back(nd);
  }
  return g;
}

namespace {

nlohmann::json macro_to_json_obj(const MacroConfig& m) {
  return {{"n_blocks", m.n_blocks},
          {"embed_size", m.embed_size},
          {"hidden_size", m.hidden_size},
          {"label_smoothing", m.label_smoothing},
          {"init_hidden_each_epoch", m.init_hidden_each_epoch},
          {"tie_embeddings", m.tie_embeddings},
          {"controller_hidden", m.controller_hidden},
          {"unrestricted_dims", m.unrestricted_dims}};
}

MacroConfig macro_from_json_obj(const nlohmann::json& j) {
  // Missing keys fall back to the defaults so hand-written files stay short.
  MacroConfig m;
  m.n_blocks = j.value("n_blocks", m.n_blocks);
  m.embed_size = j.value("embed_size", m.embed_size);
  m.hidden_size = j.value("hidden_size", m.hidden_size);
  m.label_smoothing = j.value("label_smoothing", m.label_smoothing);
  m.init_hidden_each_epoch = j.value("init_hidden_each_epoch", m.init_hidden_each_epoch);
  m.tie_embeddings = j.value("tie_embeddings", m.tie_embeddings);
  m.controller_hidden = j.value("controller_hidden", m.controller_hidden);
  m.unrestricted_dims = j.value("unrestricted_dims", m.unrestricted_dims);
  return m;
}

}  // namespace

std::string genotype_to_json(const CellGenotype& g, const MacroConfig& macro, NodeSemantics sem) {
  auto violations = validate(g);
  if (!violations.empty())
    throw std::runtime_error("genotype_to_json: invalid genotype: " + violations.front());
  nlohmann::json nodes = nlohmann::json::array();
  for (const auto& nd : g.nodes) {
    nlohmann::json node;
    node["prev"] = nd.prev ? nlohmann::json(*nd.prev) : nlohmann::json(nullptr);
    node["act"] = activation_name(nd.act);
    nodes.push_back(node);
  }
  nlohmann::json j = {{"n_blocks", g.n_blocks},
                      {"nodes", nodes},
                      {"macro", macro_to_json_obj(macro)},
                      {"semantics", semantics_name(sem)}};
  return j.dump(2);
}

ParsedGenotype genotype_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw std::runtime_error(std::string("genotype JSON parse error: ") + e.what());
  }
  ParsedGenotype out;
  out.genotype.n_blocks = j.at("n_blocks").get<int>();
  int index = 0;
  for (const auto& node : j.at("nodes")) {
    ++index;
    NodeDecision nd;
    if (!node.contains("prev"))
      throw std::runtime_error("node " + std::to_string(index) + ": missing prev field");
    if (!node.at("prev").is_null()) nd.prev = node.at("prev").get<int>();
    else if (index != 1)
      throw std::runtime_error("node " + std::to_string(index) + ": missing prev");
    const std::string act_name = node.at("act").get<std::string>();
    auto kind = activation_from_name(act_name);
    if (!kind) throw std::runtime_error("unknown activation \"" + act_name + "\"");
    nd.act = *kind;
    out.genotype.nodes.push_back(nd);
  }
  if (j.contains("macro")) out.macro = macro_from_json_obj(j.at("macro"));
  if (j.contains("semantics")) {
    auto sem = semantics_from_name(j.at("semantics").get<std::string>());
    if (!sem) throw std::runtime_error("unknown semantics value");
    out.semantics = *sem;
  }
  auto violations = validate(out.genotype);
  if (!violations.empty()) {
    std::string msg = "invalid genotype:";
    for (const auto& v : violations) msg += " [" + v + "]";
    throw std::runtime_error(msg);
  }
  return out;
}

}  // namespace autornn
