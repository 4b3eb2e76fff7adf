#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "strv/numkit/autodiff.hpp"
#include "strv/numkit/random.hpp"

namespace strv::evalkit {

using numkit::Tensor;
using numkit::Var;

// Linear head c(e) = e W + b over set embeddings (or raw feature rows).
class Classifier {
 public:
  Classifier() = default;
  // Zero-initialized.
  Classifier(std::size_t input_dim, int num_classes);

  std::size_t input_dim() const { return w_.value.rows(); }
  int num_classes() const { return static_cast<int>(w_.value.cols()); }
  std::vector<numkit::NamedParameter> parameters();
  const Tensor& weights() const { return w_.value; }
  const Tensor& bias() const { return b_.value; }

  Var logits(numkit::Tape& tape, Var inputs);
  std::vector<double> logits_value(std::span<const double> input) const;

 private:
  numkit::Parameter w_, b_;
};

struct Prediction {
  std::vector<double> logits;
  std::vector<double> probabilities;
  int predicted = 0;  // argmax, lowest class on ties
};

Prediction from_logits(std::vector<double> logits);
Prediction classify(std::span<const double> embedding, const Classifier& classifier);
// Mean of the members' logits, then softmax and argmax.
Prediction ensemble_predict(const std::vector<std::vector<double>>& embeddings, const Classifier& classifier);

struct EvalReport {
  std::string name;
  int num_classes = 0;
  std::size_t k = 0;  // features behind each prediction
  double accuracy = 0.0;
  double macro_f1 = 0.0;
  double balanced_accuracy = 0.0;
  double auc_macro_ovr = 0.0;
  double qwk = 0.0;
  // Classes whose one-vs-rest AUC is undefined (no positives or no
  // negatives); they are left out of the macro average.
  std::vector<int> auc_excluded;
  std::vector<std::vector<std::size_t>> confusion;  // [true][pred]
  std::vector<std::string> subject_ids;
  std::vector<int> labels;
  std::vector<int> predictions;
  std::vector<std::vector<double>> probabilities;

  bool auc_warning() const { return !auc_excluded.empty(); }
  friend bool operator==(const EvalReport&, const EvalReport&) = default;
};

// probabilities: one row per subject, rows summing to 1.
EvalReport compute_metrics(std::span<const int> labels, std::span<const int> predictions,
                           const std::vector<std::vector<double>>& probabilities, int num_classes);

std::string report_json(const EvalReport& report);
EvalReport parse_report_json(const std::string& text);
std::string confusion_csv(const EvalReport& report);
std::string predictions_csv(const EvalReport& report);
// Aligned plain-text summary.
std::string report_table(const std::vector<EvalReport>& reports);

struct HeadOptions {
  std::size_t epochs = 300;
  double learning_rate = 0.05;
  double l2 = 1e-3;
};

// Full-batch Adam on mean cross-entropy + l2/2 ||W||^2 from zero init.
Classifier fit_linear_head(const Tensor& x, std::span<const int> y, int num_classes, const HeadOptions& options = {});

// Predictions of a linear head on the given rows.
std::vector<Prediction> predict_rows(const Classifier& classifier, const Tensor& x);

// Builds a report from per-subject predictions.
EvalReport report_from_predictions(const std::string& name, std::size_t k, std::span<const std::string> ids,
                                   std::span<const int> labels, const std::vector<Prediction>& predictions,
                                   int num_classes);

}  // namespace strv::evalkit
