#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "caf/config_text.hpp"
#include "caf/layers.hpp"
#include "caf/tensor.hpp"

namespace caf {

class Rng;

enum class Modality { audio, visual, text };
std::string to_string(Modality m);
Modality parse_modality(const std::string& s);

enum class HeadKind { conv_attention, mlp_baseline, attention_only, conv_only };
std::string to_string(HeadKind h);
HeadKind parse_head(const std::string& s);

/// One encoder output fed into the fusion head.
struct StreamSpec {
  std::string name;
  Modality modality = Modality::audio;
  std::size_t input_dim = 0;

  friend bool operator==(const StreamSpec&, const StreamSpec&) = default;
};

/// `name:modality:dim` entries separated by commas.
std::string format_streams(const std::vector<StreamSpec>& streams);
std::vector<StreamSpec> parse_streams(const std::string& text);

struct FusionConfig {
  std::vector<StreamSpec> streams;  // stacking order
  std::size_t d_common = 16;
  std::size_t n_conv_blocks = 2;
  std::size_t conv_kernel = 3;
  bool use_batchnorm = true;
  Activation activation = Activation::swish;
  HeadKind head = HeadKind::conv_attention;
  std::size_t num_classes = 6;
  bool attn_softmax = false;
  std::size_t proj_layers = 1;  // affine+activation layers per stream projection
  std::size_t attn_layers = 1;  // affine layers in the attention scorer

  std::size_t num_streams() const { return streams.size(); }
  bool has_attention() const { return head == HeadKind::conv_attention || head == HeadKind::attention_only; }
  bool has_conv_branch() const { return head == HeadKind::conv_attention || head == HeadKind::conv_only; }

  /// Throws UsageError on zero streams, duplicate names, zero extents or an even kernel.
  void validate() const;

  KeyValueText to_kv() const;
  /// Missing keys fall back to the defaults above; `streams` is required.
  static FusionConfig from_kv(const KeyValueText& kv);

  friend bool operator==(const FusionConfig&, const FusionConfig&) = default;
};

/// Every intermediate of one forward pass, kept for the backward pass.
struct ForwardTrace {
  Mode mode = Mode::eval;
  std::size_t batch = 0;

  std::vector<Tensor> projections;   // per stream, [B,d]
  Tensor depth_concat;               // [B, M*d], streams side by side along depth
  Tensor stream_stack;               // [B, d, M], streams as a length-M sequence
  Tensor attn_weights;               // [B, M]
  Tensor attn_feature;               // [B, d]
  std::vector<Tensor> conv_outputs;  // block outputs, each [B, d, M]
  Tensor conv_feature;               // [B, d]
  Tensor mlp_hidden;                 // [B, d], mlp_baseline only
  Tensor fusion;                     // [B, d]
  Tensor logits;                     // [B, C]

  // Layer caches. Activation inputs are stored to differentiate through them.
  struct ProjStep {
    LinearLayer::Cache linear;
    Tensor pre_activation;
  };
  struct ConvStep {
    Conv1dLayer::Cache conv;
    BatchNorm1dLayer::Cache bn;
    Tensor pre_activation;
  };
  std::vector<std::vector<ProjStep>> proj_steps;
  std::vector<ProjStep> attn_steps;  // last step has no activation
  Tensor attn_scores;                // scorer output before the optional softmax
  std::vector<ConvStep> conv_steps;
  ProjStep mlp_step;
  LinearLayer::Cache out_cache;
};

struct BackwardResult {
  std::vector<Tensor> stream_grads;  // per stream, [B, input_dim]
  Tensor fusion_grad;                // [B,d]
  Tensor conv_grad;                  // gradient reaching the conv-branch output (empty if absent)
  Tensor attn_grad;                  // gradient reaching the attention-branch output (empty if absent)
};

struct ConvBlock {
  Conv1dLayer conv;
  BatchNorm1dLayer bn;  // unused when batchnorm is disabled
};

/// A named tensor slot in declaration order; the checkpoint layout follows it.
struct StateEntry {
  std::string name;
  Tensor* tensor;
};

/// Convolution-plus-attention fusion head and its ablation baselines.
///
/// Each stream is projected to depth d. The projections are laid side by side
/// (B, M*d) for the attention scorer and stacked as a length-M sequence
/// (B, d, M) for both branches. The attention branch scores the M streams
/// from the concatenation and takes the weighted combination of the stacked
/// vectors; the convolution branch runs N conv/BN/activation blocks over the
/// stream axis and mean-pools it. Their sum feeds a linear classifier.
class FusionModel {
 public:
  static FusionModel build(const FusionConfig& config, Rng& rng);

  const FusionConfig& config() const { return config_; }

  /// Pure forward pass. Train mode uses batch statistics but does not touch
  /// the running estimates; see update_running_stats.
  ForwardTrace forward(const std::vector<Tensor>& batch, Mode mode) const;
  void update_running_stats(const ForwardTrace& trace);

  /// Accumulates parameter gradients from a train-mode trace.
  BackwardResult backward(const ForwardTrace& trace, const Tensor& logit_grad);

  /// Eval-mode argmax per sample, lowest index on ties.
  std::vector<std::size_t> predict(const std::vector<Tensor>& batch) const;

  std::vector<Param*> params();
  std::vector<const Param*> params() const;
  std::size_t parameter_count() const;
  void zero_grad();

  /// Parameters and BatchNorm running statistics in declaration order.
  std::vector<StateEntry> state();

  std::vector<std::vector<LinearLayer>>& projections() { return projections_; }
  std::vector<LinearLayer>& attn_scorer() { return attn_; }
  std::vector<ConvBlock>& conv_blocks() { return conv_blocks_; }
  LinearLayer& mlp_hidden() { return mlp_hidden_; }
  LinearLayer& classifier() { return fc_out_; }

 private:
  FusionConfig config_;
  std::vector<std::vector<LinearLayer>> projections_;
  std::vector<LinearLayer> attn_;
  std::vector<ConvBlock> conv_blocks_;
  LinearLayer mlp_hidden_;
  LinearLayer fc_out_;
};

std::size_t argmax_row(const Tensor& logits, std::size_t row);

}  // namespace caf
