#pragma once

#include <span>

#include "fiberlab/net.hpp"
#include "fiberlab/tensor.hpp"

namespace fiberlab::net {

inline constexpr double kDefaultTemperature = 0.2;

// Each loss returns its scalar value; non-null gradient pointers receive
// d loss / d input with the input's shape.

// Mean over all elements of (x_hat - x)^2.
double loss_reconstruction(const Tensor& x_hat, const Tensor& x, Tensor* grad = nullptr);

// InfoNCE over cosine similarities; row i of `positives` is the positive for
// anchor i and every other row is a negative.
double loss_contrastive(const Tensor& anchors, const Tensor& positives, double temperature = kDefaultTemperature,
                        Tensor* grad_anchors = nullptr, Tensor* grad_positives = nullptr);

// Mean softmax cross-entropy (max-subtracted log-sum-exp).
double loss_classification(const Tensor& logits, std::span<const int> labels, Tensor* grad = nullptr);

struct AlignmentTerms {
  double image_to_label = 0.0;  // each embedding vs. all n table rows
  double label_to_image = 0.0;  // each sample's label row vs. all batch embeddings
};

AlignmentTerms alignment_terms(const Tensor& embeddings, const Tensor& label_table, std::span<const int> labels,
                               double temperature = kDefaultTemperature);

// Mean of the two alignment directions.
double loss_alignment(const Tensor& embeddings, const Tensor& label_table, std::span<const int> labels,
                      double temperature = kDefaultTemperature, Tensor* grad_embeddings = nullptr,
                      Tensor* grad_table = nullptr);

enum class LossKind { reconstruction, contrastive, classification, alignment };

const char* to_string(LossKind kind);

// A loss together with the fixed data it needs besides the network output.
struct Objective {
  LossKind kind = LossKind::reconstruction;
  Tensor target;                    // reconstruction: expected output
  Tensor positives;                 // contrastive: second-view inputs, fed through the same network
  std::vector<int> labels;          // classification, alignment
  Tensor label_table;               // alignment: (n, D) anchors
  double temperature = kDefaultTemperature;

  static Objective reconstruction(Tensor target);
  static Objective contrastive(Tensor positives, double temperature = kDefaultTemperature);
  static Objective classification(std::vector<int> labels);
  static Objective alignment(std::vector<int> labels, Tensor label_table, double temperature = kDefaultTemperature);
};

struct ObjectiveValue {
  double loss = 0.0;
  Gradients grads;
  Tensor table_grad;  // alignment only
};

// Loss and parameter gradients of `objective` for net applied to batch.
ObjectiveValue evaluate(const Network& net, const Tensor& batch, const Objective& objective);
double objective_loss(const Network& net, const Tensor& batch, const Objective& objective);

// Max over all parameters (and the alignment label table) of
// |analytic - central difference| / max(1, |analytic|).
double grad_check(const Network& net, const Tensor& batch, const Objective& objective, double epsilon);

}  // namespace fiberlab::net
