#include "strv/evalkit/evalkit.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "strv/errors.hpp"
#include "strv/numkit/optim.hpp"
#include "strv/probe/probe.hpp"

namespace strv::evalkit {

using nlohmann::json;

Classifier::Classifier(std::size_t input_dim, int num_classes)
    : w_(Tensor::matrix(input_dim, num_classes)), b_(Tensor::matrix(1, num_classes)) {
  if (input_dim == 0 || num_classes < 2) throw ContractViolation("classifier needs inputs and at least two classes");
}

std::vector<numkit::NamedParameter> Classifier::parameters() { return {{"classifier.w", &w_}, {"classifier.b", &b_}}; }

Var Classifier::logits(numkit::Tape& tape, Var inputs) {
  if (inputs.value().cols() != input_dim()) throw ContractViolation("classifier input width mismatch");
  return numkit::add_bias(numkit::matmul(inputs, tape.parameter(w_)), tape.parameter(b_));
}

std::vector<double> Classifier::logits_value(std::span<const double> input) const {
  if (input.size() != input_dim()) throw ContractViolation("classifier input width mismatch");
  const std::size_t C = w_.value.cols();
  std::vector<double> out(C, 0.0);
  for (std::size_t k = 0; k < input.size(); ++k) {
    const double a = input[k];
    if (a == 0.0) continue;
    for (std::size_t c = 0; c < C; ++c) out[c] += a * w_.value.at(k, c);
  }
  for (std::size_t c = 0; c < C; ++c) out[c] += b_.value[c];
  return out;
}

Prediction from_logits(std::vector<double> logits) {
  if (logits.empty()) throw ContractViolation("empty logits");
  for (double v : logits) {
    if (!std::isfinite(v)) throw NumericError("non-finite logit");
  }
  Prediction p;
  const double mx = *std::max_element(logits.begin(), logits.end());
  double s = 0.0;
  p.probabilities.resize(logits.size());
  for (std::size_t c = 0; c < logits.size(); ++c) s += (p.probabilities[c] = std::exp(logits[c] - mx));
  for (double& v : p.probabilities) v /= s;
  p.predicted = static_cast<int>(std::max_element(logits.begin(), logits.end()) - logits.begin());
  p.logits = std::move(logits);
  return p;
}

Prediction classify(std::span<const double> embedding, const Classifier& classifier) {
  return from_logits(classifier.logits_value(embedding));
}

Prediction ensemble_predict(const std::vector<std::vector<double>>& embeddings, const Classifier& classifier) {
  if (embeddings.empty()) throw ContractViolation("ensemble needs at least one member");
  if (embeddings.size() == 1) return classify(embeddings.front(), classifier);
  std::vector<double> mean(classifier.num_classes(), 0.0);
  for (const auto& e : embeddings) {
    const auto l = classifier.logits_value(e);
    for (std::size_t c = 0; c < mean.size(); ++c) mean[c] += l[c];
  }
  for (double& v : mean) v /= static_cast<double>(embeddings.size());
  return from_logits(std::move(mean));
}

namespace {

// One-vs-rest AUC from average ranks (Mann-Whitney U), ties counted half.
std::optional<double> auc_ovr(std::span<const int> labels, const std::vector<std::vector<double>>& probs, int c) {
  const std::size_t n = labels.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](auto a, auto b) { return probs[a][c] < probs[b][c]; });
  std::vector<double> rank(n);
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && probs[order[j + 1]][c] == probs[order[i]][c]) ++j;
    const double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t t = i; t <= j; ++t) rank[order[t]] = avg;
    i = j + 1;
  }
  double n_pos = 0, rank_sum = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] == c) {
      n_pos += 1;
      rank_sum += rank[i];
    }
  }
  const double n_neg = static_cast<double>(n) - n_pos;
  if (n_pos == 0 || n_neg == 0) return std::nullopt;
  return (rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg);
}

}  // namespace

EvalReport compute_metrics(std::span<const int> labels, std::span<const int> predictions,
                           const std::vector<std::vector<double>>& probabilities, int C) {
  const std::size_t n = labels.size();
  if (n == 0) throw ContractViolation("metrics need at least one subject");
  if (predictions.size() != n || probabilities.size() != n) throw ContractViolation("metric inputs differ in length");
  if (C < 2) throw ContractViolation("metrics need at least two classes");
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] < 0 || labels[i] >= C || predictions[i] < 0 || predictions[i] >= C) {
      throw ContractViolation("class index out of range");
    }
    if (probabilities[i].size() != static_cast<std::size_t>(C)) throw ContractViolation("probability row width");
    const double s = std::accumulate(probabilities[i].begin(), probabilities[i].end(), 0.0);
    if (std::abs(s - 1.0) > 1e-6) throw ContractViolation("probability rows must sum to 1");
  }
  EvalReport r;
  r.num_classes = C;
  r.labels.assign(labels.begin(), labels.end());
  r.predictions.assign(predictions.begin(), predictions.end());
  r.probabilities = probabilities;
  r.confusion.assign(C, std::vector<std::size_t>(C, 0));
  for (std::size_t i = 0; i < n; ++i) ++r.confusion[labels[i]][predictions[i]];

  std::vector<double> row(C, 0), col(C, 0);
  double correct = 0;
  for (int a = 0; a < C; ++a)
    for (int b = 0; b < C; ++b) {
      row[a] += r.confusion[a][b];
      col[b] += r.confusion[a][b];
      if (a == b) correct += r.confusion[a][b];
    }
  r.accuracy = correct / n;

  double f1_sum = 0, recall_sum = 0;
  int present = 0;
  for (int c = 0; c < C; ++c) {
    const double tp = r.confusion[c][c];
    const double precision = col[c] > 0 ? tp / col[c] : 0.0;
    const double recall = row[c] > 0 ? tp / row[c] : 0.0;
    f1_sum += precision + recall > 0 ? 2 * precision * recall / (precision + recall) : 0.0;
    if (row[c] > 0) {
      recall_sum += recall;
      ++present;
    }
  }
  r.macro_f1 = f1_sum / C;
  r.balanced_accuracy = recall_sum / present;

  double auc_sum = 0;
  int auc_n = 0;
  for (int c = 0; c < C; ++c) {
    if (auto a = auc_ovr(labels, probabilities, c)) {
      auc_sum += *a;
      ++auc_n;
    } else {
      r.auc_excluded.push_back(c);
    }
  }
  r.auc_macro_ovr = auc_n > 0 ? auc_sum / auc_n : 0.5;

  double num = 0, den = 0;
  const double denom_w = static_cast<double>(C - 1) * (C - 1);
  for (int a = 0; a < C; ++a)
    for (int b = 0; b < C; ++b) {
      const double w = static_cast<double>(a - b) * (a - b) / denom_w;
      num += w * r.confusion[a][b] / n;
      den += w * (row[a] / n) * (col[b] / n);
    }
  r.qwk = den == 0.0 ? 1.0 : 1.0 - num / den;
  return r;
}

std::string report_json(const EvalReport& r) {
  json j;
  j["name"] = r.name;
  j["num_classes"] = r.num_classes;
  j["k"] = r.k;
  j["metrics"] = {{"accuracy", r.accuracy},
                  {"macro_f1", r.macro_f1},
                  {"balanced_accuracy", r.balanced_accuracy},
                  {"auc_macro_ovr", r.auc_macro_ovr},
                  {"qwk", r.qwk}};
  j["auc_excluded"] = r.auc_excluded;
  j["auc_warning"] = r.auc_warning();
  j["confusion"] = r.confusion;
  auto subjects = json::array();
  for (std::size_t i = 0; i < r.labels.size(); ++i) {
    subjects.push_back({{"id", i < r.subject_ids.size() ? r.subject_ids[i] : std::string()},
                        {"label", r.labels[i]},
                        {"pred", r.predictions[i]},
                        {"probabilities", r.probabilities[i]}});
  }
  j["subjects"] = subjects;
  return j.dump(1);
}

EvalReport parse_report_json(const std::string& text) {
  EvalReport r;
  try {
    const auto j = json::parse(text);
    r.name = j.at("name").get<std::string>();
    r.num_classes = j.at("num_classes").get<int>();
    r.k = j.at("k").get<std::size_t>();
    const auto& m = j.at("metrics");
    r.accuracy = m.at("accuracy").get<double>();
    r.macro_f1 = m.at("macro_f1").get<double>();
    r.balanced_accuracy = m.at("balanced_accuracy").get<double>();
    r.auc_macro_ovr = m.at("auc_macro_ovr").get<double>();
    r.qwk = m.at("qwk").get<double>();
    r.auc_excluded = j.at("auc_excluded").get<std::vector<int>>();
    r.confusion = j.at("confusion").get<std::vector<std::vector<std::size_t>>>();
    bool any_id = false;
    for (const auto& s : j.at("subjects")) {
      r.subject_ids.push_back(s.at("id").get<std::string>());
      any_id = any_id || !r.subject_ids.back().empty();
      r.labels.push_back(s.at("label").get<int>());
      r.predictions.push_back(s.at("pred").get<int>());
      r.probabilities.push_back(s.at("probabilities").get<std::vector<double>>());
    }
    if (!any_id) r.subject_ids.clear();
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed evaluation report: ") + e.what());
  }
  return r;
}

std::string confusion_csv(const EvalReport& r) {
  std::ostringstream out;
  out << "true\\pred";
  for (int c = 0; c < r.num_classes; ++c) out << ',' << c;
  out << '\n';
  for (int a = 0; a < r.num_classes; ++a) {
    out << a;
    for (int b = 0; b < r.num_classes; ++b) out << ',' << r.confusion[a][b];
    out << '\n';
  }
  return out.str();
}

std::string predictions_csv(const EvalReport& r) {
  std::ostringstream out;
  out.precision(17);
  out << "subject_id,label,pred";
  for (int c = 0; c < r.num_classes; ++c) out << ",prob_" << c;
  out << '\n';
  for (std::size_t i = 0; i < r.labels.size(); ++i) {
    out << (i < r.subject_ids.size() ? r.subject_ids[i] : std::to_string(i)) << ',' << r.labels[i] << ','
        << r.predictions[i];
    for (double p : r.probabilities[i]) out << ',' << p;
    out << '\n';
  }
  return out.str();
}

std::string report_table(const std::vector<EvalReport>& reports) {
  std::ostringstream out;
  out << std::left << std::setw(18) << "method" << std::right << std::setw(6) << "k" << std::setw(8) << "Acc"
      << std::setw(9) << "MacroF1" << std::setw(8) << "BAcc" << std::setw(8) << "AUC" << std::setw(8) << "QWK"
      << '\n';
  out << std::fixed << std::setprecision(3);
  for (const auto& r : reports) {
    out << std::left << std::setw(18) << r.name << std::right << std::setw(6) << r.k << std::setw(8) << r.accuracy
        << std::setw(9) << r.macro_f1 << std::setw(8) << r.balanced_accuracy << std::setw(8) << r.auc_macro_ovr
        << std::setw(8) << r.qwk << (r.auc_warning() ? "  (AUC over present classes)" : "") << '\n';
  }
  return out.str();
}

Classifier fit_linear_head(const Tensor& x, std::span<const int> y, int num_classes, const HeadOptions& options) {
  if (x.rows() != y.size() || x.rows() == 0) throw ContractViolation("head training data is empty or misaligned");
  Classifier head(x.cols(), num_classes);
  numkit::Adam adam({options.learning_rate});
  auto params = head.parameters();
  probe::ProbeParams view;
  for (std::size_t e = 0; e < options.epochs; ++e) {
    view.w = params[0].second->value;
    view.b = params[1].second->value;
    const auto g = probe::loss_and_grad(view, x, y);
    auto& gw = params[0].second->grad;
    auto& gb = params[1].second->grad;
    for (std::size_t i = 0; i < gw.size(); ++i) gw[i] = g.grad_w[i] + options.l2 * view.w[i];
    for (std::size_t i = 0; i < gb.size(); ++i) gb[i] = g.grad_b[i];
    adam.step(params);
  }
  return head;
}

std::vector<Prediction> predict_rows(const Classifier& classifier, const Tensor& x) {
  std::vector<Prediction> out;
  out.reserve(x.rows());
  for (std::size_t i = 0; i < x.rows(); ++i) out.push_back(classify(x.row_span(i), classifier));
  return out;
}

EvalReport report_from_predictions(const std::string& name, std::size_t k, std::span<const std::string> ids,
                                   std::span<const int> labels, const std::vector<Prediction>& predictions,
                                   int num_classes) {
  std::vector<int> pred;
  std::vector<std::vector<double>> probs;
  for (const auto& p : predictions) {
    pred.push_back(p.predicted);
    probs.push_back(p.probabilities);
  }
  auto r = compute_metrics(labels, pred, probs, num_classes);
  r.name = name;
  r.k = k;
  r.subject_ids.assign(ids.begin(), ids.end());
  return r;
}

}  // namespace strv::evalkit
