#include "caf/fusion_model.hpp"

#include <cmath>
#include <set>

#include "caf/error.hpp"
#include "caf/rng.hpp"

namespace caf {

std::string to_string(Modality m) {
  switch (m) {
    case Modality::audio: return "audio";
    case Modality::visual: return "visual";
    case Modality::text: return "text";
  }
  return "?";
}

Modality parse_modality(const std::string& s) {
  if (s == "audio") return Modality::audio;
  if (s == "visual") return Modality::visual;
  if (s == "text") return Modality::text;
  throw UsageError("unknown modality '" + s + "' (expected audio, visual or text)");
}

std::string to_string(HeadKind h) {
  switch (h) {
    case HeadKind::conv_attention: return "conv_attention";
    case HeadKind::mlp_baseline: return "mlp_baseline";
    case HeadKind::attention_only: return "attention_only";
    case HeadKind::conv_only: return "conv_only";
  }
  return "?";
}

HeadKind parse_head(const std::string& s) {
  if (s == "conv_attention") return HeadKind::conv_attention;
  if (s == "mlp_baseline") return HeadKind::mlp_baseline;
  if (s == "attention_only") return HeadKind::attention_only;
  if (s == "conv_only") return HeadKind::conv_only;
  throw UsageError("unknown head '" + s + "' (expected conv_attention, mlp_baseline, attention_only or conv_only)");
}

std::string format_streams(const std::vector<StreamSpec>& streams) {
  std::string out;
  for (std::size_t i = 0; i < streams.size(); ++i) {
    if (i) out += ',';
    out += streams[i].name + ':' + to_string(streams[i].modality) + ':' + std::to_string(streams[i].input_dim);
  }
  return out;
}

std::vector<StreamSpec> parse_streams(const std::string& text) {
  std::vector<StreamSpec> out;
  if (trim(text).empty()) return out;
  for (const auto& item : split(text, ',')) {
    const auto parts = split(trim(item), ':');
    if (parts.size() != 3) throw UsageError("stream entry must be name:modality:dim, got '" + item + "'");
    StreamSpec s;
    s.name = trim(parts[0]);
    s.modality = parse_modality(trim(parts[1]));
    const std::string dim = trim(parts[2]);
    try {
      std::size_t used = 0;
      const long long v = std::stoll(dim, &used);
      if (used != dim.size() || v <= 0) throw std::invalid_argument(dim);
      s.input_dim = static_cast<std::size_t>(v);
    } catch (const std::exception&) {
      throw UsageError("stream '" + s.name + "': input_dim must be a positive integer, got '" + dim + "'");
    }
    out.push_back(std::move(s));
  }
  return out;
}

void FusionConfig::validate() const {
  if (streams.empty()) throw UsageError("fusion config: at least one stream is required");
  std::set<std::string> names;
  for (const auto& s : streams) {
    if (s.name.empty()) throw UsageError("fusion config: empty stream name");
    if (s.name.find_first_of(":,= \t") != std::string::npos) {
      throw UsageError("fusion config: stream name '" + s.name + "' contains a reserved character");
    }
    if (!names.insert(s.name).second) throw UsageError("fusion config: duplicate stream '" + s.name + "'");
    if (s.input_dim == 0) throw UsageError("fusion config: stream '" + s.name + "' has input_dim 0");
  }
  if (d_common == 0) throw UsageError("fusion config: d_common must be positive");
  if (num_classes == 0) throw UsageError("fusion config: num_classes must be positive");
  if (conv_kernel == 0 || conv_kernel % 2 == 0) {
    throw UsageError("fusion config: conv_kernel must be odd and positive, got " + std::to_string(conv_kernel));
  }
  if (proj_layers == 0) throw UsageError("fusion config: proj_layers must be at least 1");
  if (attn_layers == 0) throw UsageError("fusion config: attn_layers must be at least 1");
}

KeyValueText FusionConfig::to_kv() const {
  KeyValueText kv;
  kv.set("streams", format_streams(streams));
  kv.set("d_common", std::to_string(d_common));
  kv.set("n_conv_blocks", std::to_string(n_conv_blocks));
  kv.set("conv_kernel", std::to_string(conv_kernel));
  kv.set("use_batchnorm", use_batchnorm ? "true" : "false");
  kv.set("activation", to_string(activation));
  kv.set("head", to_string(head));
  kv.set("num_classes", std::to_string(num_classes));
  kv.set("attn_softmax", attn_softmax ? "true" : "false");
  kv.set("proj_layers", std::to_string(proj_layers));
  kv.set("attn_layers", std::to_string(attn_layers));
  return kv;
}

namespace {

std::size_t get_extent(const KeyValueText& kv, const std::string& key, std::size_t fallback) {
  const auto v = kv.get_int(key, static_cast<std::int64_t>(fallback));
  if (v < 0) throw UsageError("config key '" + key + "' must be non-negative");
  return static_cast<std::size_t>(v);
}

}  // namespace

FusionConfig FusionConfig::from_kv(const KeyValueText& kv) {
  FusionConfig c;
  c.streams = parse_streams(kv.get_string("streams", ""));
  c.d_common = get_extent(kv, "d_common", c.d_common);
  c.n_conv_blocks = get_extent(kv, "n_conv_blocks", c.n_conv_blocks);
  c.conv_kernel = get_extent(kv, "conv_kernel", c.conv_kernel);
  c.use_batchnorm = kv.get_bool("use_batchnorm", c.use_batchnorm);
  c.activation = parse_activation(kv.get_string("activation", to_string(c.activation)));
  c.head = parse_head(kv.get_string("head", to_string(c.head)));
  c.num_classes = get_extent(kv, "num_classes", c.num_classes);
  c.attn_softmax = kv.get_bool("attn_softmax", c.attn_softmax);
  c.proj_layers = get_extent(kv, "proj_layers", c.proj_layers);
  c.attn_layers = get_extent(kv, "attn_layers", c.attn_layers);
  return c;
}

// ---------------------------------------------------------------------------

FusionModel FusionModel::build(const FusionConfig& config, Rng& rng) {
  config.validate();
  FusionModel m;
  m.config_ = config;
  const std::size_t d = config.d_common;
  const std::size_t streams = config.num_streams();

  for (const auto& s : config.streams) {
    std::vector<LinearLayer> stack;
    for (std::size_t l = 0; l < config.proj_layers; ++l) {
      stack.emplace_back("proj." + s.name + "." + std::to_string(l), l == 0 ? s.input_dim : d, d, rng);
    }
    m.projections_.push_back(std::move(stack));
  }
  if (config.has_attention()) {
    for (std::size_t l = 0; l < config.attn_layers; ++l) {
      const bool last = l + 1 == config.attn_layers;
      m.attn_.emplace_back("attn." + std::to_string(l), streams * d, last ? streams : streams * d, rng);
    }
  }
  if (config.has_conv_branch()) {
    for (std::size_t k = 0; k < config.n_conv_blocks; ++k) {
      const std::string prefix = "conv." + std::to_string(k);
      ConvBlock block;
      block.conv = Conv1dLayer(prefix + ".conv", d, d, config.conv_kernel, (config.conv_kernel - 1) / 2, rng);
      if (config.use_batchnorm) block.bn = BatchNorm1dLayer(prefix + ".bn", d);
      m.conv_blocks_.push_back(std::move(block));
    }
  }
  if (config.head == HeadKind::mlp_baseline) m.mlp_hidden_ = LinearLayer("mlp.hidden", streams * d, d, rng);
  m.fc_out_ = LinearLayer("fc_out", d, config.num_classes, rng);
  return m;
}

namespace {

Tensor softmax_rows(const Tensor& x) {
  const std::size_t rows = x.extent(0), cols = x.extent(1);
  Tensor out(x.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    double mx = x[r * cols];
    for (std::size_t c = 1; c < cols; ++c) mx = std::max(mx, x[r * cols + c]);
    double z = 0.0;
    for (std::size_t c = 0; c < cols; ++c) z += (out[r * cols + c] = std::exp(x[r * cols + c] - mx));
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] /= z;
  }
  return out;
}

}  // namespace

ForwardTrace FusionModel::forward(const std::vector<Tensor>& batch, Mode mode) const {
  const auto& cfg = config_;
  const std::size_t streams = cfg.num_streams();
  const std::size_t d = cfg.d_common;
  if (batch.size() != streams) {
    throw UsageError("forward: expected " + std::to_string(streams) + " stream tensors, got " +
                     std::to_string(batch.size()));
  }
  const std::size_t rows = batch.empty() || batch[0].rank() == 0 ? 0 : batch[0].extent(0);
  for (std::size_t m = 0; m < streams; ++m) {
    const Shape want{rows, cfg.streams[m].input_dim};
    if (batch[m].shape() != want) {
      throw UsageError("forward: stream '" + cfg.streams[m].name + "' expects " + shape_string(want) + ", got " +
                       shape_string(batch[m].shape()));
    }
  }

  ForwardTrace tr;
  tr.mode = mode;
  tr.batch = rows;

  tr.proj_steps.resize(streams);
  for (std::size_t m = 0; m < streams; ++m) {
    Tensor x = batch[m];
    for (const auto& layer : projections_[m]) {
      ForwardTrace::ProjStep step;
      step.pre_activation = layer.forward(x, &step.linear);
      x = activate(cfg.activation, step.pre_activation);
      tr.proj_steps[m].push_back(std::move(step));
    }
    tr.projections.push_back(std::move(x));
  }

  tr.depth_concat = Tensor({rows, streams * d});
  tr.stream_stack = Tensor({rows, d, streams});
  for (std::size_t m = 0; m < streams; ++m) {
    const Tensor& p = tr.projections[m];
    for (std::size_t b = 0; b < rows; ++b)
      for (std::size_t i = 0; i < d; ++i) {
        tr.depth_concat[b * streams * d + m * d + i] = p[b * d + i];
        tr.stream_stack[(b * d + i) * streams + m] = p[b * d + i];
      }
  }

  if (cfg.has_attention()) {
    Tensor h = tr.depth_concat;
    for (std::size_t l = 0; l < attn_.size(); ++l) {
      ForwardTrace::ProjStep step;
      step.pre_activation = attn_[l].forward(h, &step.linear);
      const bool last = l + 1 == attn_.size();
      h = last ? step.pre_activation : activate(cfg.activation, step.pre_activation);
      tr.attn_steps.push_back(std::move(step));
    }
    tr.attn_scores = h;
    tr.attn_weights = cfg.attn_softmax ? softmax_rows(h) : h;
    tr.attn_feature =
        matmul_batched(tr.stream_stack, tr.attn_weights.reshaped({rows, streams, 1})).reshaped({rows, d});
  }

  if (cfg.has_conv_branch()) {
    Tensor x = tr.stream_stack;
    for (const auto& block : conv_blocks_) {
      ForwardTrace::ConvStep step;
      Tensor c = block.conv.forward(x, &step.conv);
      step.pre_activation = cfg.use_batchnorm ? block.bn.forward(c, mode, &step.bn) : std::move(c);
      x = activate(cfg.activation, step.pre_activation);
      tr.conv_outputs.push_back(x);
      tr.conv_steps.push_back(std::move(step));
    }
    tr.conv_feature = adaptive_avg_pool(x);
  }

  switch (cfg.head) {
    case HeadKind::conv_attention: tr.fusion = add(tr.conv_feature, tr.attn_feature); break;
    case HeadKind::attention_only: tr.fusion = tr.attn_feature; break;
    case HeadKind::conv_only: tr.fusion = tr.conv_feature; break;
    case HeadKind::mlp_baseline:
      tr.mlp_step.pre_activation = mlp_hidden_.forward(tr.depth_concat, &tr.mlp_step.linear);
      tr.mlp_hidden = activate(cfg.activation, tr.mlp_step.pre_activation);
      tr.fusion = tr.mlp_hidden;
      break;
  }
  tr.logits = fc_out_.forward(tr.fusion, &tr.out_cache);
  return tr;
}

void FusionModel::update_running_stats(const ForwardTrace& trace) {
  if (trace.mode != Mode::train || !config_.use_batchnorm) return;
  for (std::size_t k = 0; k < trace.conv_steps.size() && k < conv_blocks_.size(); ++k) {
    conv_blocks_[k].bn.update_running(trace.conv_steps[k].bn);
  }
}

BackwardResult FusionModel::backward(const ForwardTrace& tr, const Tensor& logit_grad) {
  if (tr.mode != Mode::train) throw UsageError("backward: trace comes from an eval-mode forward");
  const auto& cfg = config_;
  const std::size_t streams = cfg.num_streams();
  const std::size_t d = cfg.d_common;
  const std::size_t rows = tr.batch;
  if (logit_grad.shape() != tr.logits.shape()) {
    throw UsageError("backward: logit gradient " + shape_string(logit_grad.shape()) + " vs logits " +
                     shape_string(tr.logits.shape()));
  }
  if (tr.proj_steps.size() != streams) throw UsageError("backward: trace does not match this model");

  BackwardResult res;
  res.fusion_grad = fc_out_.backward(tr.out_cache, logit_grad);

  Tensor d_concat({rows, streams * d});
  Tensor d_stack({rows, d, streams});

  switch (cfg.head) {
    case HeadKind::conv_attention:
      res.conv_grad = res.fusion_grad;
      res.attn_grad = res.fusion_grad;
      break;
    case HeadKind::attention_only: res.attn_grad = res.fusion_grad; break;
    case HeadKind::conv_only: res.conv_grad = res.fusion_grad; break;
    case HeadKind::mlp_baseline: {
      const Tensor dpre = activate_backward(cfg.activation, tr.mlp_step.pre_activation, res.fusion_grad);
      accumulate(d_concat, mlp_hidden_.backward(tr.mlp_step.linear, dpre));
      break;
    }
  }

  if (!res.attn_grad.empty()) {
    const Tensor g = res.attn_grad.reshaped({rows, d, 1});
    // d(weights)[b,m] = sum_i g[b,i] * stack[b,i,m]
    Tensor d_weights = matmul_batched(transpose_last2(tr.stream_stack), g).reshaped({rows, streams});
    accumulate(d_stack, matmul_batched(g, tr.attn_weights.reshaped({rows, 1, streams})));

    Tensor dh = d_weights;
    if (cfg.attn_softmax) {
      const Tensor& s = tr.attn_weights;
      for (std::size_t b = 0; b < rows; ++b) {
        double dot = 0.0;
        for (std::size_t m = 0; m < streams; ++m) dot += d_weights[b * streams + m] * s[b * streams + m];
        for (std::size_t m = 0; m < streams; ++m)
          dh[b * streams + m] = s[b * streams + m] * (d_weights[b * streams + m] - dot);
      }
    }
    for (std::size_t l = attn_.size(); l-- > 0;) {
      const auto& step = tr.attn_steps[l];
      const bool last = l + 1 == attn_.size();
      const Tensor dpre = last ? dh : activate_backward(cfg.activation, step.pre_activation, dh);
      dh = attn_[l].backward(step.linear, dpre);
    }
    accumulate(d_concat, dh);
  }

  if (!res.conv_grad.empty()) {
    Tensor dx = adaptive_avg_pool_backward(res.conv_grad, streams);
    for (std::size_t k = conv_blocks_.size(); k-- > 0;) {
      auto& block = conv_blocks_[k];
      const auto& step = tr.conv_steps[k];
      Tensor dpre = activate_backward(cfg.activation, step.pre_activation, dx);
      if (cfg.use_batchnorm) dpre = block.bn.backward(step.bn, dpre);
      dx = block.conv.backward(step.conv, dpre);
    }
    accumulate(d_stack, dx);
  }

  for (std::size_t m = 0; m < streams; ++m) {
    Tensor g({rows, d});
    for (std::size_t b = 0; b < rows; ++b)
      for (std::size_t i = 0; i < d; ++i)
        g[b * d + i] = d_concat[b * streams * d + m * d + i] + d_stack[(b * d + i) * streams + m];
    for (std::size_t l = projections_[m].size(); l-- > 0;) {
      const auto& step = tr.proj_steps[m][l];
      g = projections_[m][l].backward(step.linear, activate_backward(cfg.activation, step.pre_activation, g));
    }
    res.stream_grads.push_back(std::move(g));
  }
  return res;
}

std::size_t argmax_row(const Tensor& logits, std::size_t row) {
  const std::size_t cols = logits.extent(1);
  std::size_t best = 0;
  for (std::size_t c = 1; c < cols; ++c) {
    if (logits[row * cols + c] > logits[row * cols + best]) best = c;
  }
  return best;
}

std::vector<std::size_t> FusionModel::predict(const std::vector<Tensor>& batch) const {
  const ForwardTrace tr = forward(batch, Mode::eval);
  std::vector<std::size_t> out(tr.batch);
  for (std::size_t b = 0; b < tr.batch; ++b) out[b] = argmax_row(tr.logits, b);
  return out;
}

std::vector<Param*> FusionModel::params() {
  std::vector<Param*> out;
  auto add_all = [&out](auto&& ps) {
    for (auto* p : ps) out.push_back(p);
  };
  for (auto& stack : projections_)
    for (auto& l : stack) add_all(l.params());
  for (auto& l : attn_) add_all(l.params());
  for (auto& b : conv_blocks_) {
    add_all(b.conv.params());
    if (config_.use_batchnorm) add_all(b.bn.params());
  }
  if (config_.head == HeadKind::mlp_baseline) add_all(mlp_hidden_.params());
  add_all(fc_out_.params());
  return out;
}

std::vector<const Param*> FusionModel::params() const {
  std::vector<const Param*> out;
  for (auto* p : const_cast<FusionModel*>(this)->params()) out.push_back(p);
  return out;
}

std::size_t FusionModel::parameter_count() const {
  std::size_t n = 0;
  for (const auto* p : params()) n += p->value.size();
  return n;
}

void FusionModel::zero_grad() {
  for (auto* p : params()) p->zero_grad();
}

std::vector<StateEntry> FusionModel::state() {
  std::vector<StateEntry> out;
  auto add_params = [&out](auto&& ps) {
    for (auto* p : ps) out.push_back({p->name, &p->value});
  };
  for (auto& stack : projections_)
    for (auto& l : stack) add_params(l.params());
  for (auto& l : attn_) add_params(l.params());
  for (auto& b : conv_blocks_) {
    add_params(b.conv.params());
    if (config_.use_batchnorm) {
      add_params(b.bn.params());
      const std::string prefix = b.bn.gamma.name.substr(0, b.bn.gamma.name.rfind('.'));
      out.push_back({prefix + ".running_mean", &b.bn.running_mean});
      out.push_back({prefix + ".running_var", &b.bn.running_var});
    }
  }
  if (config_.head == HeadKind::mlp_baseline) add_params(mlp_hidden_.params());
  add_params(fc_out_.params());
  return out;
}

}  // namespace caf
