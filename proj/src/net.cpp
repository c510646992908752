#include "fiberlab/net.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

#include "fiberlab/binary_io.hpp"
#include "fiberlab/errors.hpp"
#include "fiberlab/rng.hpp"

namespace fiberlab::net {

namespace {

constexpr std::uint16_t kCheckpointVersion = 1;

// y = x W + b. Rows of x that are exactly zero contribute nothing, so they
// are skipped; the accumulation order is otherwise fixed (i ascending).
Tensor dense_forward(const Tensor& x, const Tensor& w, const Tensor& b) {
  const std::size_t B = x.rows(), in = w.rows(), out = w.cols();
  Tensor y({B, out});
  for (std::size_t r = 0; r < B; ++r) {
    double* yr = y.row(r).data();
    const double* xr = x.row(r).data();
    std::copy(b.data(), b.data() + out, yr);
    for (std::size_t i = 0; i < in; ++i) {
      const double xi = xr[i];
      if (xi == 0.0) continue;
      const double* wi = w.data() + i * out;
      for (std::size_t o = 0; o < out; ++o) yr[o] += xi * wi[o];
    }
  }
  return y;
}

void dense_backward(const Tensor& x, const Tensor& w, const Tensor& g, Tensor& dw, Tensor& db, Tensor* dx) {
  const std::size_t B = x.rows(), in = w.rows(), out = w.cols();
  for (std::size_t r = 0; r < B; ++r) {
    const double* gr = g.row(r).data();
    const double* xr = x.row(r).data();
    for (std::size_t o = 0; o < out; ++o) db[o] += gr[o];
    for (std::size_t i = 0; i < in; ++i) {
      const double xi = xr[i];
      if (xi == 0.0) continue;
      double* dwi = dw.data() + i * out;
      for (std::size_t o = 0; o < out; ++o) dwi[o] += xi * gr[o];
    }
    if (dx != nullptr) {
      double* dxr = dx->row(r).data();
      for (std::size_t i = 0; i < in; ++i) {
        const double* wi = w.data() + i * out;
        double acc = 0.0;
        for (std::size_t o = 0; o < out; ++o) acc += gr[o] * wi[o];
        dxr[i] += acc;
      }
    }
  }
}

Tensor relu(const Tensor& x) {
  Tensor y = x;
  for (double& v : y.values()) v = v > 0.0 ? v : 0.0;
  return y;
}

Tensor relu_backward(const Tensor& pre, const Tensor& g) {
  Tensor d = g;
  for (std::size_t i = 0; i < d.size(); ++i)
    if (!(pre[i] > 0.0)) d[i] = 0.0;
  return d;
}

void softmax_rows(Tensor& t) {
  for (std::size_t r = 0; r < t.rows(); ++r) {
    auto row = t.row(r);
    const double m = *std::max_element(row.begin(), row.end());
    double z = 0.0;
    for (double& v : row) {
      v = std::exp(v - m);
      z += v;
    }
    for (double& v : row) v /= z;
  }
}

std::vector<std::size_t> expert_widths(const LayerSpec& spec) {
  std::vector<std::size_t> w{spec.in};
  w.insert(w.end(), spec.expert_hidden.begin(), spec.expert_hidden.end());
  w.push_back(spec.out);
  return w;
}

// Dense+relu stack; params[first + 2k] is W_k, params[first + 2k + 1] is b_k.
StackRecord stack_forward(const std::vector<Tensor>& params, std::size_t first, std::size_t depth, const Tensor& x) {
  StackRecord rec;
  Tensor h = x;
  for (std::size_t k = 0; k < depth; ++k) {
    Tensor pre = dense_forward(h, params[first + 2 * k], params[first + 2 * k + 1]);
    rec.inputs.push_back(std::move(h));
    h = relu(pre);
    rec.pre.push_back(std::move(pre));
  }
  rec.output = std::move(h);
  return rec;
}

void stack_backward(const std::vector<Tensor>& params, std::vector<Tensor>& grads, std::size_t first,
                    const StackRecord& rec, Tensor g, Tensor* dx) {
  for (std::size_t k = rec.pre.size(); k-- > 0;) {
    g = relu_backward(rec.pre[k], g);
    const Tensor& w = params[first + 2 * k];
    if (k > 0) {
      Tensor dh({g.rows(), w.rows()});
      dense_backward(rec.inputs[k], w, g, grads[first + 2 * k], grads[first + 2 * k + 1], &dh);
      g = std::move(dh);
    } else {
      dense_backward(rec.inputs[k], w, g, grads[first + 2 * k], grads[first + 2 * k + 1], dx);
    }
  }
}

Tensor layer_forward(const LayerSpec& spec, const std::vector<Tensor>& params, const Tensor& x, LayerRecord* rec) {
  switch (spec.kind) {
    case LayerKind::dense:
      return dense_forward(x, params[0], params[1]);
    case LayerKind::relu:
      return relu(x);
    case LayerKind::softmax_gate_mixture: {
      Tensor alpha = dense_forward(x, params[0], params[1]);
      softmax_rows(alpha);
      const std::size_t depth = spec.expert_hidden.size() + 1;
      Tensor y({x.rows(), spec.out});
      std::vector<StackRecord> experts;
      for (std::size_t e = 0; e < spec.experts; ++e) {
        StackRecord er = stack_forward(params, 2 + e * 2 * depth, depth, x);
        for (std::size_t r = 0; r < x.rows(); ++r) {
          const double a = alpha(r, e);
          const auto src = er.output.row(r);
          auto dst = y.row(r);
          for (std::size_t o = 0; o < spec.out; ++o) dst[o] += a * src[o];
        }
        experts.push_back(std::move(er));
      }
      if (rec != nullptr) {
        rec->alpha = std::move(alpha);
        rec->experts = std::move(experts);
      }
      return y;
    }
  }
  throw UsageError("unknown layer kind");
}

void check_batch(const Network& net, const Tensor& batch) {
  if (batch.rank() != 2 || batch.rows() < 1) throw DomainError("forward: batch must be a (B, width) matrix with B >= 1");
  if (batch.cols() != net.input_width())
    throw DomainError("forward: batch width " + std::to_string(batch.cols()) + " does not match network input width " +
                      std::to_string(net.input_width()));
  if (!batch.all_finite()) throw DomainError("forward: batch contains non-finite values");
}

}  // namespace

std::string to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::dense:
      return "dense";
    case LayerKind::relu:
      return "relu";
    case LayerKind::softmax_gate_mixture:
      return "softmax_gate_mixture";
  }
  return "unknown";
}

void LayerSpec::validate() const {
  if (in == 0 || out == 0) throw DomainError("layer " + to_string(kind) + ": widths must be positive");
  if (kind == LayerKind::relu && in != out) throw DomainError("relu layer: in and out widths must match");
  if (kind == LayerKind::softmax_gate_mixture) {
    if (experts < 2) throw DomainError("softmax_gate_mixture: requires at least 2 experts");
    for (std::size_t h : expert_hidden)
      if (h == 0) throw DomainError("softmax_gate_mixture: expert widths must be positive");
  }
}

std::vector<std::vector<std::size_t>> LayerSpec::parameter_shapes() const {
  switch (kind) {
    case LayerKind::dense:
      return {{in, out}, {out}};
    case LayerKind::relu:
      return {};
    case LayerKind::softmax_gate_mixture: {
      std::vector<std::vector<std::size_t>> shapes{{in, experts}, {experts}};
      const auto widths = expert_widths(*this);
      for (std::size_t e = 0; e < experts; ++e)
        for (std::size_t k = 0; k + 1 < widths.size(); ++k) {
          shapes.push_back({widths[k], widths[k + 1]});
          shapes.push_back({widths[k + 1]});
        }
      return shapes;
    }
  }
  return {};
}

Network Network::initialize(std::vector<LayerSpec> layers, std::uint64_t seed) {
  ParamStore params;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    layers[l].validate();
    Rng rng = Rng::derive(seed, l);
    std::vector<Tensor> p;
    for (const auto& shape : layers[l].parameter_shapes()) {
      Tensor t(shape);
      if (shape.size() == 2) {
        const double limit = std::sqrt(6.0 / static_cast<double>(shape[0] + shape[1]));
        for (double& v : t.values()) v = rng.uniform(-limit, limit);
      }
      p.push_back(std::move(t));
    }
    params.push_back(std::move(p));
  }
  return Network(std::move(layers), std::move(params), seed);
}

Network::Network(std::vector<LayerSpec> layers, ParamStore params, std::uint64_t seed)
    : layers_(std::move(layers)), seed_(seed) {
  if (params.size() != layers_.size()) throw DomainError("network: parameter list does not match layer count");
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    layers_[l].validate();
    if (l > 0 && layers_[l - 1].out != layers_[l].in)
      throw DomainError("network: layer " + std::to_string(l) + " input width " + std::to_string(layers_[l].in) +
                        " does not match previous output " + std::to_string(layers_[l - 1].out));
    const auto shapes = layers_[l].parameter_shapes();
    if (shapes.size() != params[l].size())
      throw DomainError("network: layer " + std::to_string(l) + " has wrong parameter count");
    for (std::size_t k = 0; k < shapes.size(); ++k)
      if (params[l][k].shape() != shapes[k])
        throw DomainError("network: layer " + std::to_string(l) + " parameter " + std::to_string(k) + " has wrong shape");
  }
  params_ = std::make_shared<const ParamStore>(std::move(params));
}

std::size_t Network::input_width() const { return layers_.empty() ? 0 : layers_.front().in; }
std::size_t Network::output_width() const { return layers_.empty() ? 0 : layers_.back().out; }

std::size_t Network::parameter_count() const {
  std::size_t n = 0;
  for (const auto& layer : *params_)
    for (const auto& t : layer) n += t.size();
  return n;
}

ForwardResult forward(const Network& net, const Tensor& batch) {
  check_batch(net, batch);
  ForwardResult res;
  Tape& tape = res.tape;
  tape.layers = net.layers();
  tape.params = net.shared_params();
  tape.input = batch;
  Tensor h = batch;
  for (std::size_t l = 0; l < net.layers().size(); ++l) {
    LayerRecord rec;
    Tensor next = layer_forward(net.layers()[l], net.params()[l], h, &rec);
    rec.input = std::move(h);
    tape.records.push_back(std::move(rec));
    h = std::move(next);
  }
  tape.output = h;
  res.output = std::move(h);
  return res;
}

Tensor predict(const Network& net, const Tensor& batch) {
  check_batch(net, batch);
  Tensor h = batch;
  for (std::size_t l = 0; l < net.layers().size(); ++l) h = layer_forward(net.layers()[l], net.params()[l], h, nullptr);
  return h;
}

Tensor replay(const Tape& tape) {
  if (!tape.recorded()) throw UsageError("replay: tape was not recorded by forward()");
  Tensor h = tape.input;
  for (std::size_t l = 0; l < tape.layers.size(); ++l) h = layer_forward(tape.layers[l], (*tape.params)[l], h, nullptr);
  return h;
}

Gradients backward(const Tape& tape, const Tensor& loss_grad, bool want_input_grad) {
  if (!tape.recorded()) throw UsageError("backward: tape is stale or was not recorded by forward()");
  if (!loss_grad.same_shape(tape.output)) throw DomainError("backward: loss gradient shape does not match output");

  const ParamStore& params = *tape.params;
  Gradients grads;
  for (const auto& layer : params) {
    std::vector<Tensor> g;
    for (const auto& t : layer) g.emplace_back(t.shape());
    grads.params.push_back(std::move(g));
  }

  Tensor g = loss_grad;
  for (std::size_t l = tape.layers.size(); l-- > 0;) {
    const LayerSpec& spec = tape.layers[l];
    const LayerRecord& rec = tape.records[l];
    const bool need_dx = l > 0 || want_input_grad;
    Tensor dx;
    if (need_dx) dx = Tensor({rec.input.rows(), spec.in});
    switch (spec.kind) {
      case LayerKind::dense:
        dense_backward(rec.input, params[l][0], g, grads.params[l][0], grads.params[l][1], need_dx ? &dx : nullptr);
        break;
      case LayerKind::relu:
        dx = relu_backward(rec.input, g);
        break;
      case LayerKind::softmax_gate_mixture: {
        const std::size_t B = g.rows(), E = spec.experts;
        const std::size_t depth = spec.expert_hidden.size() + 1;
        Tensor dlogits({B, E});
        for (std::size_t r = 0; r < B; ++r) {
          double mix = 0.0;
          for (std::size_t e = 0; e < E; ++e) {
            double da = 0.0;
            const auto ye = rec.experts[e].output.row(r);
            const auto gr = g.row(r);
            for (std::size_t o = 0; o < spec.out; ++o) da += gr[o] * ye[o];
            dlogits(r, e) = da;
            mix += rec.alpha(r, e) * da;
          }
          for (std::size_t e = 0; e < E; ++e) dlogits(r, e) = rec.alpha(r, e) * (dlogits(r, e) - mix);
        }
        dense_backward(rec.input, params[l][0], dlogits, grads.params[l][0], grads.params[l][1],
                       need_dx ? &dx : nullptr);
        for (std::size_t e = 0; e < E; ++e) {
          Tensor ge = g;
          for (std::size_t r = 0; r < B; ++r) {
            const double a = rec.alpha(r, e);
            for (double& v : ge.row(r)) v *= a;
          }
          stack_backward(params[l], grads.params[l], 2 + e * 2 * depth, rec.experts[e], std::move(ge),
                         need_dx ? &dx : nullptr);
        }
        break;
      }
    }
    if (need_dx) g = std::move(dx);
  }
  if (want_input_grad) grads.input = std::move(g);
  return grads;
}

Gradients zero_gradients(const Network& net) {
  Gradients grads;
  for (const auto& layer : net.params()) {
    std::vector<Tensor> g;
    for (const auto& t : layer) g.emplace_back(t.shape());
    grads.params.push_back(std::move(g));
  }
  return grads;
}

void accumulate(Gradients& into, const Gradients& from) {
  if (into.params.size() != from.params.size()) throw DomainError("accumulate: layer count mismatch");
  for (std::size_t l = 0; l < into.params.size(); ++l) {
    if (into.params[l].size() != from.params[l].size()) throw DomainError("accumulate: parameter count mismatch");
    for (std::size_t k = 0; k < into.params[l].size(); ++k) {
      Tensor& a = into.params[l][k];
      const Tensor& b = from.params[l][k];
      if (!a.same_shape(b)) throw DomainError("accumulate: shape mismatch");
      for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
    }
  }
}

Network sgd_step(const Network& net, const Gradients& grads, double lr) {
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw DomainError("sgd_step: learning rate must be finite and >= 0");
  const ParamStore& params = net.params();
  if (grads.params.size() != params.size()) throw DomainError("sgd_step: gradient layer count mismatch");
  ParamStore next = params;
  for (std::size_t l = 0; l < params.size(); ++l) {
    if (grads.params[l].size() != params[l].size()) throw DomainError("sgd_step: gradient count mismatch at layer " + std::to_string(l));
    for (std::size_t k = 0; k < params[l].size(); ++k) {
      const Tensor& g = grads.params[l][k];
      if (!g.same_shape(params[l][k])) throw DomainError("sgd_step: gradient shape mismatch at layer " + std::to_string(l));
      if (!g.all_finite())
        throw NumericError("sgd_step: non-finite gradient in layer " + std::to_string(l) + " (" +
                           to_string(net.layers()[l].kind) + "), parameter " + std::to_string(k));
      Tensor& p = next[l][k];
      for (std::size_t i = 0; i < p.size(); ++i) p[i] -= lr * g[i];
    }
  }
  return net.with_params(std::move(next));
}

void add_weight_decay(Gradients& grads, const Network& net, double lambda) {
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw DomainError("add_weight_decay: lambda must be finite and >= 0");
  if (lambda == 0.0) return;
  const ParamStore& params = net.params();
  if (grads.params.size() != params.size()) throw DomainError("add_weight_decay: gradient layer count mismatch");
  for (std::size_t l = 0; l < params.size(); ++l)
    for (std::size_t k = 0; k < params[l].size(); ++k) {
      const Tensor& w = params[l][k];
      if (w.rank() != 2) continue;
      Tensor& g = grads.params[l][k];
      for (std::size_t i = 0; i < w.size(); ++i) g[i] += lambda * w[i];
    }
}

void sgd_update(Tensor& param, const Tensor& grad, double lr) {
  if (!param.same_shape(grad)) throw DomainError("sgd_update: shape mismatch");
  if (!grad.all_finite()) throw NumericError("sgd_update: non-finite gradient");
  for (std::size_t i = 0; i < param.size(); ++i) param[i] -= lr * grad[i];
}

void ReadoutHead::validate() const {
  if (weight.rank() != 2) throw DomainError("readout head: weight must be a matrix");
  if (bias.size() != weight.cols()) throw DomainError("readout head: bias length must equal class count");
  if (!weight.all_finite()) throw NumericError("readout head: non-finite weight");
  for (double b : bias)
    if (!std::isfinite(b)) throw NumericError("readout head: non-finite bias");
}

void ReadoutHead::logits(std::span<const double> x, std::span<double> out) const {
  const std::size_t D = weight.rows(), C = weight.cols();
  if (x.size() != D || out.size() != C) throw DomainError("readout head: dimension mismatch");
  std::copy(bias.begin(), bias.end(), out.begin());
  for (std::size_t i = 0; i < D; ++i) {
    const double xi = x[i];
    for (std::size_t c = 0; c < C; ++c) out[c] += xi * weight(i, c);
  }
}

int ReadoutHead::predict(std::span<const double> x) const {
  std::vector<double> z(weight.cols());
  logits(x, z);
  return static_cast<int>(std::max_element(z.begin(), z.end()) - z.begin());
}

ReadoutHead head_from_dense(const Network& net, std::size_t layer_index) {
  if (layer_index >= net.layers().size() || net.layers()[layer_index].kind != LayerKind::dense)
    throw DomainError("head_from_dense: layer is not dense");
  const auto& p = net.params()[layer_index];
  return ReadoutHead{p[0], p[1].values()};
}

// Layout: "VLHN" u16 version, u64 seed, u32 layer count,
//   per layer: u8 kind, u32 in, u32 out, u32 experts, u32 hidden count, u32 hidden...
//   then per layer, per parameter tensor (shapes implied by specs): f64 values.
void write_checkpoint(std::ostream& out, const Network& net) {
  io::write_magic(out, "VLHN");
  io::write_le<std::uint16_t>(out, kCheckpointVersion);
  io::write_le<std::uint64_t>(out, net.seed());
  io::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(net.layers().size()));
  for (const LayerSpec& s : net.layers()) {
    io::write_le<std::uint8_t>(out, static_cast<std::uint8_t>(s.kind));
    io::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(s.in));
    io::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(s.out));
    io::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(s.experts));
    io::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(s.expert_hidden.size()));
    for (std::size_t h : s.expert_hidden) io::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(h));
  }
  for (const auto& layer : net.params())
    for (const auto& t : layer)
      for (double v : t.values()) io::write_le<double>(out, v);
  if (!out) throw IoError("write_checkpoint: stream failure");
}

Network read_checkpoint(std::istream& in) {
  io::expect_magic(in, "VLHN");
  const auto version = io::read_le<std::uint16_t>(in);
  if (version != kCheckpointVersion) throw IoError("VLHN: unsupported version " + std::to_string(version));
  const auto seed = io::read_le<std::uint64_t>(in);
  const auto count = io::read_le<std::uint32_t>(in);
  std::vector<LayerSpec> layers;
  for (std::uint32_t l = 0; l < count; ++l) {
    LayerSpec s;
    const auto kind = io::read_le<std::uint8_t>(in);
    if (kind > 2) throw IoError("VLHN: unknown layer kind " + std::to_string(kind));
    s.kind = static_cast<LayerKind>(kind);
    s.in = io::read_le<std::uint32_t>(in);
    s.out = io::read_le<std::uint32_t>(in);
    s.experts = io::read_le<std::uint32_t>(in);
    const auto hidden = io::read_le<std::uint32_t>(in);
    for (std::uint32_t h = 0; h < hidden; ++h) s.expert_hidden.push_back(io::read_le<std::uint32_t>(in));
    layers.push_back(std::move(s));
  }
  ParamStore params;
  for (const LayerSpec& s : layers) {
    s.validate();
    std::vector<Tensor> p;
    for (const auto& shape : s.parameter_shapes()) {
      Tensor t(shape);
      for (double& v : t.values()) v = io::read_le<double>(in);
      p.push_back(std::move(t));
    }
    params.push_back(std::move(p));
  }
  return Network(std::move(layers), std::move(params), seed);
}

void save_checkpoint(const std::filesystem::path& path, const Network& net) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  write_checkpoint(out, net);
}

Network load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return read_checkpoint(in);
}

}  // namespace fiberlab::net
