#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "strv/cohort/cohort.hpp"
#include "strv/evalkit/evalkit.hpp"
#include "strv/numkit/optim.hpp"
#include "strv/numkit/random.hpp"
#include "strv/probe/probe.hpp"
#include "strv/scorer/scorer.hpp"
#include "strv/setenc/setenc.hpp"

namespace strv::retrieval {

using numkit::Rng;
using numkit::Tensor;
using setenc::FeatureSet;

// C(n, k), saturating at `cap` (returns cap when the count would exceed it).
std::uint64_t binomial(std::uint64_t n, std::uint64_t k, std::uint64_t cap = UINT64_MAX);

// n distinct k-subsets of `universe` (ascending indices each), drawn one at a
// time by a partial Fisher-Yates shuffle; repeats are rejected and redrawn.
// The draw is sequential, so a shorter request is a prefix of a longer one
// under the same seed. Throws ContractViolation when n > C(|universe|, k).
std::vector<FeatureSet> sample_sets(const std::vector<std::size_t>& universe, std::size_t k, std::size_t n,
                                    Rng& rng);
std::vector<FeatureSet> sample_sets(std::size_t F, std::size_t k, std::size_t n, Rng& rng);

// Every k-subset of `universe` in lexicographic order.
std::vector<FeatureSet> enumerate_sets(const std::vector<std::size_t>& universe, std::size_t k);

struct RetrievalConfig {
  std::size_t k = 25;
  std::size_t p0 = 5000;
  std::size_t pool_m = 1000;
  std::size_t q = 8;
  std::size_t stage1_epochs = 80;
  std::size_t stage1_sets = 50;
  std::size_t stage2_epochs = 20;
  std::size_t batch_size = 8;
  double lambda_scr = 1.0;
  double learning_rate = 3e-3;
  int probe_steps = 10;
  std::size_t n_support = 24;
  std::size_t n_query = 24;
  std::size_t ensemble_size = 3;
  // Refit the classifier head to convergence on the training subjects'
  // retrieved top-1 embeddings once the joint stage ends.
  bool refit_head = true;
  evalkit::HeadOptions head;
  std::uint64_t seed = 0;
  // Candidate universe; empty means every feature.
  std::vector<std::size_t> subpool;
  setenc::EncoderConfig encoder;
  scorer::ScorerConfig scorer;
};

// Throws ConfigError on inconsistent settings (M > P0, Q > M, k outside the
// universe, zero sizes).
void validate(const RetrievalConfig& config, std::size_t pool_size);

// Pool sizes after clamping P0 to the number of distinct sets in the
// universe and M to P0.
struct EffectiveSizes {
  std::size_t universe = 0;
  std::size_t p0 = 0;
  std::size_t m = 0;
};
EffectiveSizes effective_sizes(const RetrievalConfig& config, std::size_t pool_size);
std::vector<std::size_t> universe_of(const RetrievalConfig& config, std::size_t pool_size);

// Declared audit subpool of n indices: floor(n/2) ground-truth informative
// features (or all of them if fewer) plus uniformly drawn others, ascending.
std::vector<std::size_t> choose_subpool(const cohort::Dataset& data, std::size_t n, std::uint64_t seed);

// Dataset plus each subject's raw context row.
struct TrainingData {
  cohort::Dataset data;
  Tensor contexts;  // N x context_raw
  cohort::NormStats norm;
};

TrainingData make_training_data(const cohort::Cohort& cohort);

struct ModelBundle {
  setenc::SetEncoder encoder;
  scorer::Scorer scorer;
  evalkit::Classifier classifier;
  int num_classes = 0;
  std::size_t k = 0;
  std::vector<std::size_t> subpool;
  cohort::NormStats norm;

  std::vector<numkit::NamedParameter> parameters();
};

// Fresh model sized for the data; tables follow the descriptor roster.
ModelBundle init_model(const TrainingData& data, const RetrievalConfig& config);
void save_model(const std::string& path, const ModelBundle& model);
ModelBundle load_model(const std::string& path);

// Any score over candidate sets of one subject.
using SetScoreFn = std::function<double(const FeatureSet&)>;

// Tape-free scorer for one subject under the model.
class SubjectScorer {
 public:
  SubjectScorer(const ModelBundle& model, const TrainingData& data, std::size_t subject);
  double operator()(const FeatureSet& set) const;
  std::vector<double> embedding(const FeatureSet& set) const;

 private:
  const ModelBundle* model_;
  Tensor hidden_;
  scorer::Scorer::Prepared prepared_;
};

struct CandidatePool {
  std::string subject_id;
  std::vector<FeatureSet> sets;  // descending score, lexicographic ties
  std::vector<double> scores;
  std::map<std::size_t, double> rewards;  // pool position -> probe reward
};

// Samples p0 sets from the universe, scores them and keeps the best m.
CandidatePool build_pool(const std::string& subject_id, const SetScoreFn& score,
                         const std::vector<std::size_t>& universe, std::size_t k, std::size_t p0, std::size_t m,
                         Rng& rng);

// q distinct pool positions chosen uniformly, ascending.
std::vector<std::size_t> choose_supervised(const CandidatePool& pool, std::size_t q, Rng& rng);

struct SelectionResult {
  std::string subject_id;
  FeatureSet s_star;
  double score = 0.0;
  std::vector<FeatureSet> ensemble_sets;  // first min(ensemble, M) pool members

  friend bool operator==(const SelectionResult&, const SelectionResult&) = default;
};

SelectionResult select_top1(const CandidatePool& pool, std::size_t ensemble = 3);

struct HistoryRecord {
  int stage = 0;
  std::size_t epoch = 0;  // 1-based within the stage
  double l_cls = 0.0;
  double l_scr = 0.0;
  double total = 0.0;
  double mean_reward = 0.0;
  std::optional<double> eval_l_scr;  // stage 1: fixed evaluation batch

  friend bool operator==(const HistoryRecord&, const HistoryRecord&) = default;
};

std::string history_jsonl(const std::vector<HistoryRecord>& history);
std::vector<HistoryRecord> parse_history_jsonl(const std::string& text);

// Stage 1: per epoch one support/query draw; per training subject
// stage1_sets random sets, their probe rewards, and one Adam step on the MSE
// between scores and rewards.
std::vector<HistoryRecord> stage1_train(ModelBundle& model, const TrainingData& data, const RetrievalConfig& config);

struct StepLosses {
  double l_cls = 0.0;
  double l_scr = 0.0;
  double total = 0.0;
  double mean_reward = 0.0;
};

// One optimizer step of the joint objective mean_i(L_cls + lambda L_scr) over
// the subjects in `batch`. Pools are built with the current parameters.
StepLosses joint_train_step(ModelBundle& model, numkit::Adam& optimizer, const TrainingData& data,
                            const RetrievalConfig& config, const std::vector<std::size_t>& batch,
                            const cohort::SupportQuery& sq, std::size_t epoch);

// Stage 2: per epoch one support/query draw and one pass over the training
// subjects in shuffled minibatches.
std::vector<HistoryRecord> stage2_train(ModelBundle& model, const TrainingData& data, const RetrievalConfig& config);

// Replaces the classifier with a head fit on the training subjects' retrieved
// top-1 embeddings; encoder and scorer stay fixed.
void refit_classifier(ModelBundle& model, const TrainingData& data, const RetrievalConfig& config);

struct TrainingResult {
  ModelBundle model;
  std::vector<HistoryRecord> history;
};

// Stage 1 then Stage 2. With an output directory, writes stage1.ckpt,
// final.ckpt and history.jsonl there.
TrainingResult run_training(const TrainingData& data, const RetrievalConfig& config,
                            const std::string& out_dir = {});
// Continues from <out_dir>/stage1.ckpt and the stage-1 history lines.
TrainingResult resume_training(const TrainingData& data, const RetrievalConfig& config, const std::string& out_dir);

// Inference: the subject's pool under the model, drawn from a per-subject
// stream, and its top-ranked sets.
struct SubjectRetrieval {
  CandidatePool pool;
  SelectionResult selection;
};
SubjectRetrieval retrieve_subject(const ModelBundle& model, const TrainingData& data, const RetrievalConfig& config,
                                  std::size_t subject);

struct Evaluation {
  evalkit::EvalReport report;
  std::vector<SelectionResult> selections;
};

// Classifies the given subjects from their retrieved sets (top-ensemble logit
// averaging when ensemble_size > 1).
Evaluation evaluate_model(const ModelBundle& model, const TrainingData& data, const RetrievalConfig& config,
                          const std::vector<std::size_t>& subjects, const std::string& name = "retrieval");

// Probe reward with the subject's own fixed support/query draw.
SetScoreFn subject_reward_fn(const TrainingData& data, const RetrievalConfig& config, std::size_t subject);

struct OracleResult {
  std::vector<FeatureSet> sets;  // lexicographic
  std::vector<double> rewards;
  double r_max = 0.0;
  std::size_t argmax = 0;  // first maximal position
};

inline constexpr std::uint64_t kEnumerationBudget = 1000000;

// Rewards of every k-subset of the universe. Throws BudgetExceededError when
// C(|universe|, k) > budget.
OracleResult exhaustive_oracle(const std::vector<std::size_t>& universe, std::size_t k, const SetScoreFn& reward,
                               std::uint64_t budget = kEnumerationBudget);

struct GapStatistics {
  double mean = 0.0;
  // Integral of the empirical tail P(gap > e) over e >= 0.
  double tail_integral = 0.0;
  double p95 = 0.0;
  std::vector<std::pair<double, double>> percentiles;  // (p, value)
  std::vector<std::pair<double, double>> tail_curve;   // (e, P(gap > e)) at each distinct gap
};

// Throws ContractViolation on empty input or negative gaps.
GapStatistics gap_statistics(const std::vector<double>& gaps);

// Fraction of `rewards` strictly below r.
double percentile_rank(const std::vector<double>& rewards, double r);

struct GapRow {
  std::string subject_id;
  double r_star = 0.0;
  double r_max = 0.0;
  double gap = 0.0;
  double percentile = 0.0;
  FeatureSet s_star;
  std::vector<double> rewards;  // the enumerated reward list
};

// Per-subject candidate scorer.
using ScorerFactory = std::function<SetScoreFn(std::size_t subject)>;

// Retrieval against exhaustive enumeration over the configured universe. The
// pool for each subject comes from the same stream retrieve_subject uses.
std::vector<GapRow> audit_gaps(const ScorerFactory& scorer_for, const TrainingData& data,
                               const RetrievalConfig& config, const std::vector<std::size_t>& subjects);
std::vector<GapRow> audit_gaps(const ModelBundle& model, const TrainingData& data, const RetrievalConfig& config,
                               const std::vector<std::size_t>& subjects);

std::string gap_csv(const std::vector<GapRow>& rows);
std::string reward_list_csv(const std::vector<GapRow>& rows, const std::vector<std::size_t>& universe,
                            std::size_t k);
std::string format_set(const FeatureSet& set);  // "3;17;40"
FeatureSet parse_set(const std::string& text);

}  // namespace strv::retrieval
