#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "fiberlab/tensor.hpp"

namespace fiberlab::net {

enum class LayerKind : std::uint8_t { dense = 0, relu = 1, softmax_gate_mixture = 2 };

std::string to_string(LayerKind kind);

// A softmax_gate_mixture layer routes each row through E experts and mixes
// their outputs with softmax(x Wg + bg). Each expert is a dense+relu stack
// over widths in -> expert_hidden... -> out.
struct LayerSpec {
  LayerKind kind = LayerKind::dense;
  std::size_t in = 0;
  std::size_t out = 0;
  std::size_t experts = 0;
  std::vector<std::size_t> expert_hidden;

  static LayerSpec dense(std::size_t in, std::size_t out) { return {LayerKind::dense, in, out, 0, {}}; }
  static LayerSpec relu(std::size_t width) { return {LayerKind::relu, width, width, 0, {}}; }
  static LayerSpec gate(std::size_t in, std::size_t out, std::size_t experts, std::vector<std::size_t> hidden = {}) {
    return {LayerKind::softmax_gate_mixture, in, out, experts, std::move(hidden)};
  }

  void validate() const;
  // Shapes of this layer's parameter tensors, in storage order.
  std::vector<std::vector<std::size_t>> parameter_shapes() const;

  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

using ParamStore = std::vector<std::vector<Tensor>>;

// Immutable feed-forward network. Parameters live behind a shared pointer so
// copies are cheap; updates build a new Network.
class Network {
 public:
  Network() = default;
  // Glorot-uniform dense weights from `seed`, zero biases.
  static Network initialize(std::vector<LayerSpec> layers, std::uint64_t seed);
  // Explicit parameters; shapes are checked against the specs.
  Network(std::vector<LayerSpec> layers, ParamStore params, std::uint64_t seed = 0);

  const std::vector<LayerSpec>& layers() const { return layers_; }
  const ParamStore& params() const { return *params_; }
  std::shared_ptr<const ParamStore> shared_params() const { return params_; }
  std::uint64_t seed() const { return seed_; }
  std::size_t input_width() const;
  std::size_t output_width() const;
  std::size_t parameter_count() const;

  Network with_params(ParamStore params) const { return Network(layers_, std::move(params), seed_); }

 private:
  std::vector<LayerSpec> layers_;
  std::shared_ptr<const ParamStore> params_ = std::make_shared<const ParamStore>();
  std::uint64_t seed_ = 0;
};

// Forward record of one dense+relu expert stack.
struct StackRecord {
  std::vector<Tensor> inputs;  // input to each dense
  std::vector<Tensor> pre;     // pre-activation of each dense
  Tensor output;
};

struct LayerRecord {
  Tensor input;
  Tensor alpha;                      // gating weights (B x E)
  std::vector<StackRecord> experts;  // gating only
};

// Everything backward() needs: the parameters used, each layer's input and
// intermediate values, and the output.
struct Tape {
  std::vector<LayerSpec> layers;
  std::shared_ptr<const ParamStore> params;
  std::vector<LayerRecord> records;
  Tensor input;
  Tensor output;

  bool recorded() const { return params != nullptr && !records.empty() && records.size() == layers.size(); }
};

struct Gradients {
  ParamStore params;  // same layout as Network::params()
  Tensor input;       // d loss / d batch; empty unless requested
};

struct ForwardResult {
  Tensor output;
  Tape tape;
};

// batch is (B, input_width) with B >= 1 and finite entries.
ForwardResult forward(const Network& net, const Tensor& batch);
// Forward without recording a tape.
Tensor predict(const Network& net, const Tensor& batch);
// Recompute the forward pass from the tape's input and parameters.
Tensor replay(const Tape& tape);

// Throws UsageError for a tape that was not produced by forward().
Gradients backward(const Tape& tape, const Tensor& loss_grad, bool want_input_grad = false);

// Zero-filled gradients shaped like net's parameters.
Gradients zero_gradients(const Network& net);
void accumulate(Gradients& into, const Gradients& from);

// p <- p - lr * g. Throws NumericError naming the layer on a non-finite gradient.
Network sgd_step(const Network& net, const Gradients& grads, double lr);
// Same rule for a free-standing tensor (label table, readout weights).
void sgd_update(Tensor& param, const Tensor& grad, double lr);
// Adds lambda * W to the gradient of every weight matrix (biases are left alone).
void add_weight_decay(Gradients& grads, const Network& net, double lambda);

// Linear readout: logits = x W + b, W is (latent_dim x n_classes).
struct ReadoutHead {
  Tensor weight;
  std::vector<double> bias;

  std::size_t latent_dim() const { return weight.rows(); }
  std::size_t classes() const { return weight.cols(); }
  void validate() const;
  void logits(std::span<const double> x, std::span<double> out) const;
  // argmax with ties broken toward the lowest class index
  int predict(std::span<const double> x) const;
};

ReadoutHead head_from_dense(const Network& net, std::size_t layer_index);

// "VLHN" checkpoint format.
void write_checkpoint(std::ostream& out, const Network& net);
Network read_checkpoint(std::istream& in);
void save_checkpoint(const std::filesystem::path& path, const Network& net);
Network load_checkpoint(const std::filesystem::path& path);

}  // namespace fiberlab::net
