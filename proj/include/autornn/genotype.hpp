#pragma once

#include <optional>
#include <string>
#include <vector>

#include "autornn/activations.hpp"
#include "autornn/optim.hpp"
#include "autornn/rng.hpp"
#include "autornn/tape.hpp"

namespace autornn {

// One block of the sampled recurrent-cell DAG. Node indices are 1-based
// everywhere, including serialized forms. Node 1 has no predecessor.
struct NodeDecision {
  std::optional<int> prev;  // in 1..i-1 for node i >= 2
  ActivationKind act = ActivationKind::kTanh;

  bool operator==(const NodeDecision&) const = default;
};

struct CellGenotype {
  int n_blocks = 0;
  std::vector<NodeDecision> nodes;  // nodes[i-1] describes node i

  bool operator==(const CellGenotype&) const = default;
};

// Per-node execution semantics. `plain` is the printed recurrence; `gated`
// adds a sigmoid highway gate per node (two matrices per connection), which
// is what the reported model sizes correspond to.
enum class NodeSemantics { kPlain, kGated };

std::string semantics_name(NodeSemantics s);
std::optional<NodeSemantics> semantics_from_name(const std::string& name);

struct MacroConfig {
  int n_blocks = 6;
  int embed_size = 512;
  int hidden_size = 512;
  double label_smoothing = 0.0;
  bool init_hidden_each_epoch = true;
  bool tie_embeddings = false;
  int controller_hidden = 100;
  // Lifts the option-set restriction so desk-scale dims are allowed.
  bool unrestricted_dims = false;

  bool operator==(const MacroConfig&) const = default;
};

// Empty list means valid.
std::vector<std::string> validate(const CellGenotype& g);
std::vector<std::string> validate(const MacroConfig& m);

// Nodes never referenced as any other node's predecessor.
std::vector<int> leaf_set(const CellGenotype& g);

struct ParamCount {
  int64_t cell = 0;       // connection + input matrices
  int64_t embed = 0;      // token embedding table
  int64_t proj = 0;       // output projection (0 when tied)
  int64_t cell_bytes = 0; // cell * 4, float32 sizing convention
};

// vocab/feature dims are not part of MacroConfig; pass 0 to skip the
// embedding/projection lines and count the cell only.
ParamCount param_count(const CellGenotype& g, const MacroConfig& macro, NodeSemantics sem,
                       int vocab_size = 0);

int64_t lstm_param_count(const MacroConfig& macro);

// Standard 4-gate LSTM used as the size/quality baseline. Bias-free by
// default so execution matches the reported counts; biases behind a flag.
class LstmCell {
 public:
  LstmCell(const MacroConfig& macro, Rng& rng, bool with_bias = false);

  // One step for a batch: x is B x embed, h/c are B x hidden.
  // Returns (h_id, c_id) on the tape.
  std::pair<ValueId, ValueId> step(Tape& tape, ValueId x, ValueId h, ValueId c) const;

  ParamMap& params() { return params_; }
  const ParamMap& params() const { return params_; }
  int hidden() const { return hidden_; }

 private:
  int hidden_;
  bool with_bias_;
  ParamMap params_;
};

// Uniform over valid genotypes: prev[i] uniform in 1..i-1, activation
// uniform over the eight kinds.
CellGenotype random_genotype(Rng& rng, int n_blocks);

// Genotype JSON schema:
// {"n_blocks": N, "nodes": [{"prev": int|null, "act": "tanh"}, ...],
//  "macro": {...}, "semantics": "plain"|"gated"}
std::string genotype_to_json(const CellGenotype& g, const MacroConfig& macro, NodeSemantics sem);

struct ParsedGenotype {
  CellGenotype genotype;
  MacroConfig macro;
  NodeSemantics semantics = NodeSemantics::kPlain;
};

// Throws std::runtime_error with the violation list on invalid input.
ParsedGenotype genotype_from_json(const std::string& text);

}  // namespace autornn
