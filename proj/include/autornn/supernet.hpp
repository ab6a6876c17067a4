#pragma once

#include <string>
#include <vector>

#include "autornn/datapipe.hpp"
#include "autornn/genotype.hpp"
#include "autornn/optim.hpp"
#include "autornn/tape.hpp"

namespace autornn {

// The shared parameter store: every candidate connection matrix for all
// (node, predecessor) pairs up to n_max, plus embeddings and projections.
// Checkpoint keys: cell.w_x, cell.w_h.1, cell.w_h.<i>.<j>, ".gate" twins,
// embed, proj (absent when tied), tie_adapter (tied with hidden != embed),
// feat_proj.
struct SharedParamBank {
  int n_max = 0;
  MacroConfig macro;
  NodeSemantics semantics = NodeSemantics::kPlain;
  int vocab_size = 0;
  int feature_dim = 0;
  ParamMap tensors;
};

SharedParamBank init_bank(int n_max, const MacroConfig& macro, NodeSemantics semantics,
                          int vocab_size, int feature_dim, Rng& rng);

struct SequenceResult {
  ValueId loss;                  // scalar, mean over non-pad target positions
  std::vector<ValueId> logits;   // one B x vocab matrix per prediction step
  double total_weight = 0.0;     // number of scored positions
};

// A genotype bound to a parameter store. The store may be the shared bank or
// an extracted standalone copy; both run the identical code path, which is
// what makes the equivalence contract bit-exact.
class ChildModel {
 public:
  ChildModel(CellGenotype genotype, ParamMap* params, MacroConfig macro, NodeSemantics semantics,
             int vocab_size, int feature_dim);

  // h_1 = act_1(x W^x + h_prev W^h_1); h_i = act_i(h_prev(i) W^h_{i,prev});
  // gated adds the per-node sigmoid highway. Returns the leaf mean.
  ValueId cell_step(Tape& tape, ValueId x, ValueId h_prev) const;

  // B x F image features -> B x embed step-0 input.
  ValueId feature_input(Tape& tape, ValueId features) const;
  ValueId embed_rows(Tape& tape, const std::vector<int>& ids) const;
  ValueId output_logits(Tape& tape, ValueId h) const;

  // Teacher-forced pass over a batch: the projected feature is consumed at
  // t = 0, then token embeddings; label-smoothed cross-entropy.
  SequenceResult sequence_forward(Tape& tape, const Batch& batch, double smoothing) const;

  // Exactly the bank entries this genotype's forward touches.
  std::vector<std::string> touched_keys() const;
  // Deep copy of the touched entries; a ChildModel over the copy is
  // bit-identical to this one.
  ParamMap extract() const;

  const CellGenotype& genotype() const { return genotype_; }
  const MacroConfig& macro() const { return macro_; }
  ParamMap& params() { return *params_; }
  int vocab_size() const { return vocab_size_; }

 private:
  const Matrix& tensor(const std::string& key) const;

  CellGenotype genotype_;
  ParamMap* params_;
  MacroConfig macro_;
  NodeSemantics semantics_;
  int vocab_size_;
  int feature_dim_;
  std::vector<int> leaves_;
};

}  // namespace autornn
