#include "fiberlab/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "fiberlab/errors.hpp"

namespace fiberlab::net {

namespace {

void check_temperature(double t) {
  if (!(t > 0.0) || !std::isfinite(t)) throw DomainError("temperature must be positive and finite");
}

void check_matrix(const Tensor& t, const char* what) {
  if (t.rank() != 2) throw DomainError(std::string(what) + " must be a matrix");
}

// Row-normalized copy plus the original norms.
Tensor normalize_rows(const Tensor& x, std::vector<double>& norms, const char* what) {
  Tensor u = x;
  norms.assign(x.rows(), 0.0);
  for (std::size_t r = 0; r < x.rows(); ++r) {
    double s = 0.0;
    for (double v : x.row(r)) s += v * v;
    const double n = std::sqrt(s);
    if (!(n > 0.0) || !std::isfinite(n)) throw NumericError(std::string(what) + ": zero-norm or non-finite row " + std::to_string(r));
    norms[r] = n;
    for (double& v : u.row(r)) v /= n;
  }
  return u;
}

// Gradient w.r.t. the raw row given the gradient w.r.t. its normalized version.
void unnormalize_grad(const Tensor& u, const std::vector<double>& norms, const Tensor& du, Tensor& dx) {
  dx = Tensor(u.shape());
  for (std::size_t r = 0; r < u.rows(); ++r) {
    const auto ur = u.row(r);
    const auto gr = du.row(r);
    double dot = 0.0;
    for (std::size_t c = 0; c < ur.size(); ++c) dot += ur[c] * gr[c];
    auto out = dx.row(r);
    for (std::size_t c = 0; c < ur.size(); ++c) out[c] = (gr[c] - ur[c] * dot) / norms[r];
  }
}

// Cosine-similarity logits u_i . v_j / t.
Tensor similarity(const Tensor& u, const Tensor& v, double t) {
  Tensor s({u.rows(), v.rows()});
  for (std::size_t i = 0; i < u.rows(); ++i)
    for (std::size_t j = 0; j < v.rows(); ++j) {
      double d = 0.0;
      const auto ui = u.row(i), vj = v.row(j);
      for (std::size_t c = 0; c < ui.size(); ++c) d += ui[c] * vj[c];
      s(i, j) = d / t;
    }
  return s;
}

double log_sum_exp(std::span<const double> z) {
  const double m = *std::max_element(z.begin(), z.end());
  double s = 0.0;
  for (double v : z) s += std::exp(v - m);
  return m + std::log(s);
}

void check_labels(std::span<const int> labels, std::size_t rows, std::size_t classes) {
  if (labels.size() != rows) throw DomainError("label count does not match batch size");
  for (int y : labels)
    if (y < 0 || static_cast<std::size_t>(y) >= classes)
      throw DomainError("label " + std::to_string(y) + " outside [0, " + std::to_string(classes) + ")");
}

struct AlignmentPieces {
  Tensor u, w, logits;
  std::vector<double> emb_norms, table_norms;
};

AlignmentPieces alignment_pieces(const Tensor& embeddings, const Tensor& table, std::span<const int> labels, double t) {
  check_temperature(t);
  check_matrix(embeddings, "alignment embeddings");
  check_matrix(table, "alignment label table");
  if (embeddings.cols() != table.cols()) throw DomainError("alignment: embedding and table widths differ");
  check_labels(labels, embeddings.rows(), table.rows());
  AlignmentPieces p;
  p.u = normalize_rows(embeddings, p.emb_norms, "alignment embeddings");
  p.w = normalize_rows(table, p.table_norms, "alignment label table");
  p.logits = similarity(p.u, p.w, t);
  return p;
}

}  // namespace

double loss_reconstruction(const Tensor& x_hat, const Tensor& x, Tensor* grad) {
  if (!x_hat.same_shape(x)) throw DomainError("loss_reconstruction: shape mismatch");
  const double n = static_cast<double>(x.size());
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = x_hat[i] - x[i];
    s += d * d;
  }
  if (grad != nullptr) {
    *grad = Tensor(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) (*grad)[i] = 2.0 * (x_hat[i] - x[i]) / n;
  }
  return s / n;
}

double loss_contrastive(const Tensor& anchors, const Tensor& positives, double temperature, Tensor* grad_anchors,
                        Tensor* grad_positives) {
  check_temperature(temperature);
  check_matrix(anchors, "contrastive anchors");
  check_matrix(positives, "contrastive positives");
  if (!anchors.same_shape(positives)) throw DomainError("loss_contrastive: anchors and positives differ in shape");
  const std::size_t B = anchors.rows();
  std::vector<double> na, np;
  const Tensor u = normalize_rows(anchors, na, "contrastive anchors");
  const Tensor v = normalize_rows(positives, np, "contrastive positives");
  const Tensor s = similarity(u, v, temperature);

  double loss = 0.0;
  Tensor g({B, B});
  for (std::size_t i = 0; i < B; ++i) {
    const auto row = s.row(i);
    const double lse = log_sum_exp(row);
    loss += lse - row[i];
    for (std::size_t j = 0; j < B; ++j) g(i, j) = (std::exp(row[j] - lse) - (i == j ? 1.0 : 0.0)) / static_cast<double>(B);
  }
  loss /= static_cast<double>(B);

  if (grad_anchors != nullptr || grad_positives != nullptr) {
    const std::size_t D = anchors.cols();
    Tensor du({B, D}), dv({B, D});
    for (std::size_t i = 0; i < B; ++i)
      for (std::size_t j = 0; j < B; ++j) {
        const double gij = g(i, j) / temperature;
        if (gij == 0.0) continue;
        for (std::size_t c = 0; c < D; ++c) {
          du(i, c) += gij * v(j, c);
          dv(j, c) += gij * u(i, c);
        }
      }
    if (grad_anchors != nullptr) unnormalize_grad(u, na, du, *grad_anchors);
    if (grad_positives != nullptr) unnormalize_grad(v, np, dv, *grad_positives);
  }
  return loss;
}

double loss_classification(const Tensor& logits, std::span<const int> labels, Tensor* grad) {
  check_matrix(logits, "classification logits");
  const std::size_t B = logits.rows(), C = logits.cols();
  check_labels(labels, B, C);
  double loss = 0.0;
  if (grad != nullptr) *grad = Tensor(logits.shape());
  for (std::size_t i = 0; i < B; ++i) {
    const auto row = logits.row(i);
    const double lse = log_sum_exp(row);
    const auto y = static_cast<std::size_t>(labels[i]);
    loss += lse - row[y];
    if (grad != nullptr)
      for (std::size_t c = 0; c < C; ++c)
        (*grad)(i, c) = (std::exp(row[c] - lse) - (c == y ? 1.0 : 0.0)) / static_cast<double>(B);
  }
  return loss / static_cast<double>(B);
}

AlignmentTerms alignment_terms(const Tensor& embeddings, const Tensor& label_table, std::span<const int> labels,
                               double temperature) {
  const AlignmentPieces p = alignment_pieces(embeddings, label_table, labels, temperature);
  const std::size_t B = embeddings.rows();
  AlignmentTerms terms;
  std::vector<double> column(B);
  for (std::size_t i = 0; i < B; ++i) {
    const auto y = static_cast<std::size_t>(labels[i]);
    terms.image_to_label += log_sum_exp(p.logits.row(i)) - p.logits(i, y);
    for (std::size_t j = 0; j < B; ++j) column[j] = p.logits(j, y);
    terms.label_to_image += log_sum_exp(column) - p.logits(i, y);
  }
  terms.image_to_label /= static_cast<double>(B);
  terms.label_to_image /= static_cast<double>(B);
  return terms;
}

double loss_alignment(const Tensor& embeddings, const Tensor& label_table, std::span<const int> labels,
                      double temperature, Tensor* grad_embeddings, Tensor* grad_table) {
  const AlignmentPieces p = alignment_pieces(embeddings, label_table, labels, temperature);
  const std::size_t B = embeddings.rows(), n = label_table.rows(), D = embeddings.cols();
  const double scale = 0.5 / static_cast<double>(B);

  double i2l = 0.0, l2i = 0.0;
  Tensor g({B, n});
  std::vector<double> column(B);
  for (std::size_t i = 0; i < B; ++i) {
    const auto y = static_cast<std::size_t>(labels[i]);
    const auto row = p.logits.row(i);
    const double lse_row = log_sum_exp(row);
    i2l += lse_row - row[y];
    for (std::size_t k = 0; k < n; ++k) g(i, k) += scale * (std::exp(row[k] - lse_row) - (k == y ? 1.0 : 0.0));

    for (std::size_t j = 0; j < B; ++j) column[j] = p.logits(j, y);
    const double lse_col = log_sum_exp(column);
    l2i += lse_col - p.logits(i, y);
    for (std::size_t j = 0; j < B; ++j) g(j, y) += scale * (std::exp(column[j] - lse_col) - (j == i ? 1.0 : 0.0));
  }

  if (grad_embeddings != nullptr || grad_table != nullptr) {
    Tensor du({B, D}), dw({n, D});
    for (std::size_t i = 0; i < B; ++i)
      for (std::size_t k = 0; k < n; ++k) {
        const double gik = g(i, k) / temperature;
        if (gik == 0.0) continue;
        for (std::size_t c = 0; c < D; ++c) {
          du(i, c) += gik * p.w(k, c);
          dw(k, c) += gik * p.u(i, c);
        }
      }
    if (grad_embeddings != nullptr) unnormalize_grad(p.u, p.emb_norms, du, *grad_embeddings);
    if (grad_table != nullptr) unnormalize_grad(p.w, p.table_norms, dw, *grad_table);
  }
  return 0.5 * (i2l + l2i) / static_cast<double>(B);
}

const char* to_string(LossKind kind) {
  switch (kind) {
    case LossKind::reconstruction:
      return "reconstruction";
    case LossKind::contrastive:
      return "contrastive";
    case LossKind::classification:
      return "classification";
    case LossKind::alignment:
      return "alignment";
  }
  return "unknown";
}

Objective Objective::reconstruction(Tensor target) {
  Objective o;
  o.kind = LossKind::reconstruction;
  o.target = std::move(target);
  return o;
}

Objective Objective::contrastive(Tensor positives, double temperature) {
  Objective o;
  o.kind = LossKind::contrastive;
  o.positives = std::move(positives);
  o.temperature = temperature;
  return o;
}

Objective Objective::classification(std::vector<int> labels) {
  Objective o;
  o.kind = LossKind::classification;
  o.labels = std::move(labels);
  return o;
}

Objective Objective::alignment(std::vector<int> labels, Tensor label_table, double temperature) {
  Objective o;
  o.kind = LossKind::alignment;
  o.labels = std::move(labels);
  o.label_table = std::move(label_table);
  o.temperature = temperature;
  return o;
}

ObjectiveValue evaluate(const Network& net, const Tensor& batch, const Objective& objective) {
  ObjectiveValue res;
  auto fwd = forward(net, batch);
  Tensor g;
  switch (objective.kind) {
    case LossKind::reconstruction:
      res.loss = loss_reconstruction(fwd.output, objective.target, &g);
      res.grads = backward(fwd.tape, g);
      break;
    case LossKind::classification:
      res.loss = loss_classification(fwd.output, objective.labels, &g);
      res.grads = backward(fwd.tape, g);
      break;
    case LossKind::alignment:
      res.loss = loss_alignment(fwd.output, objective.label_table, objective.labels, objective.temperature, &g,
                                &res.table_grad);
      res.grads = backward(fwd.tape, g);
      break;
    case LossKind::contrastive: {
      auto pos = forward(net, objective.positives);
      Tensor gp;
      res.loss = loss_contrastive(fwd.output, pos.output, objective.temperature, &g, &gp);
      res.grads = backward(fwd.tape, g);
      accumulate(res.grads, backward(pos.tape, gp));
      break;
    }
  }
  if (!std::isfinite(res.loss)) throw NumericError(std::string("non-finite ") + to_string(objective.kind) + " loss");
  return res;
}

double objective_loss(const Network& net, const Tensor& batch, const Objective& objective) {
  const Tensor out = predict(net, batch);
  double loss = 0.0;
  switch (objective.kind) {
    case LossKind::reconstruction:
      loss = loss_reconstruction(out, objective.target);
      break;
    case LossKind::classification:
      loss = loss_classification(out, objective.labels);
      break;
    case LossKind::alignment:
      loss = loss_alignment(out, objective.label_table, objective.labels, objective.temperature);
      break;
    case LossKind::contrastive:
      loss = loss_contrastive(out, predict(net, objective.positives), objective.temperature);
      break;
  }
  if (!std::isfinite(loss)) throw NumericError(std::string("non-finite ") + to_string(objective.kind) + " loss");
  return loss;
}

double grad_check(const Network& net, const Tensor& batch, const Objective& objective, double epsilon) {
  if (!(epsilon >= 1e-7 && epsilon <= 1e-3)) throw DomainError("grad_check: epsilon must lie in [1e-7, 1e-3]");
  const ObjectiveValue analytic = evaluate(net, batch, objective);
  double worst = 0.0;
  const auto record = [&](double a, double plus, double minus) {
    if (!std::isfinite(plus) || !std::isfinite(minus)) throw NumericError("grad_check: non-finite perturbed loss");
    const double numeric = (plus - minus) / (2.0 * epsilon);
    worst = std::max(worst, std::abs(a - numeric) / std::max(1.0, std::abs(a)));
  };

  ParamStore params = net.params();
  for (std::size_t l = 0; l < params.size(); ++l)
    for (std::size_t k = 0; k < params[l].size(); ++k)
      for (std::size_t i = 0; i < params[l][k].size(); ++i) {
        const double orig = params[l][k][i];
        params[l][k][i] = orig + epsilon;
        const double plus = objective_loss(net.with_params(params), batch, objective);
        params[l][k][i] = orig - epsilon;
        const double minus = objective_loss(net.with_params(params), batch, objective);
        params[l][k][i] = orig;
        record(analytic.grads.params[l][k][i], plus, minus);
      }

  if (objective.kind == LossKind::alignment) {
    Objective shifted = objective;
    for (std::size_t i = 0; i < objective.label_table.size(); ++i) {
      const double orig = objective.label_table[i];
      shifted.label_table[i] = orig + epsilon;
      const double plus = objective_loss(net, batch, shifted);
      shifted.label_table[i] = orig - epsilon;
      const double minus = objective_loss(net, batch, shifted);
      shifted.label_table[i] = orig;
      record(analytic.table_grad[i], plus, minus);
    }
  }
  return worst;
}

}  // namespace fiberlab::net
