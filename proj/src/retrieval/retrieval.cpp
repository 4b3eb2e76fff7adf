#include "strv/retrieval/retrieval.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include <json.hpp>

#include "strv/errors.hpp"
#include "strv/numkit/checkpoint.hpp"

namespace strv::retrieval {

namespace {

// Stream tags for derive_seed; each stage and purpose draws from its own tree.
constexpr std::uint64_t kInitStream = 0x696e6974;
constexpr std::uint64_t kStage1 = 1;
constexpr std::uint64_t kStage2 = 2;
constexpr std::uint64_t kEvalBatch = 0x6576616c;
constexpr std::uint64_t kInferStream = 0x696e6672;
constexpr std::uint64_t kOracleStream = 0x6f72636c;
constexpr std::uint64_t kSubpoolStream = 0x7375626c;

constexpr std::size_t kEvalSubjects = 16;
constexpr std::size_t kEvalSetsPerSubject = 8;

struct SetHash {
  std::size_t operator()(const FeatureSet& s) const {
    std::uint64_t h = 1469598103934665603ULL;
    for (auto v : s) {
      h ^= v + 0x9e3779b97f4a7c15ULL;
      h *= 1099511628211ULL;
    }
    return static_cast<std::size_t>(h);
  }
};

std::vector<std::size_t> iota_vec(std::size_t n) {
  std::vector<std::size_t> v(n);
  std::iota(v.begin(), v.end(), 0);
  return v;
}

probe::FitOptions probe_options(const RetrievalConfig& c) {
  probe::FitOptions o;
  o.steps = c.probe_steps;
  return o;
}

std::vector<std::vector<setenc::FeatureToken>> tokens_for(const TrainingData& data, std::size_t subject,
                                                         const std::vector<FeatureSet>& sets) {
  std::vector<std::vector<setenc::FeatureToken>> out;
  out.reserve(sets.size());
  const auto row = data.data.z.row_span(subject);
  for (const auto& s : sets) out.push_back(setenc::tokenize(row, s, data.data.descriptors));
  return out;
}

Tensor context_row(const TrainingData& data, std::size_t subject) {
  return Tensor::row(data.contexts.row_span(subject));
}

template <class T>
std::vector<T> concat(std::vector<T> a, const std::vector<T>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

}  // namespace

std::uint64_t binomial(std::uint64_t n, std::uint64_t k, std::uint64_t cap) {
  if (k > n) return 0;
  k = std::min(k, n - k);
  std::uint64_t r = 1;
  for (std::uint64_t i = 1; i <= k; ++i) {
    // r * (n - k + i) is divisible by i; split i between the two factors.
    const std::uint64_t g = std::gcd(r, i);
    const std::uint64_t t = (n - k + i) / (i / g);
    if (__builtin_mul_overflow(r / g, t, &r) || r > cap) return cap;
  }
  return r;
}

std::vector<FeatureSet> sample_sets(const std::vector<std::size_t>& universe, std::size_t k, std::size_t n,
                                    Rng& rng) {
  const std::size_t F = universe.size();
  if (k == 0 || k > F) throw ContractViolation("set size k must lie in [1, " + std::to_string(F) + "]");
  const auto total = binomial(F, k);
  if (n > total) {
    throw ContractViolation("requested " + std::to_string(n) + " distinct sets but only " + std::to_string(total) +
                            " exist");
  }
  std::vector<std::size_t> scratch = universe;
  std::unordered_set<FeatureSet, SetHash> seen;
  std::vector<FeatureSet> out;
  out.reserve(n);
  seen.reserve(n * 2);
  while (out.size() < n) {
    for (std::size_t j = 0; j < k; ++j) std::swap(scratch[j], scratch[j + numkit::uniform_index(rng, F - j)]);
    FeatureSet s(scratch.begin(), scratch.begin() + k);
    std::sort(s.begin(), s.end());
    if (seen.insert(s).second) out.push_back(std::move(s));
  }
  return out;
}

std::vector<FeatureSet> sample_sets(std::size_t F, std::size_t k, std::size_t n, Rng& rng) {
  return sample_sets(iota_vec(F), k, n, rng);
}

std::vector<FeatureSet> enumerate_sets(const std::vector<std::size_t>& universe, std::size_t k) {
  const std::size_t F = universe.size();
  if (k == 0 || k > F) throw ContractViolation("set size k must lie in [1, " + std::to_string(F) + "]");
  std::vector<std::size_t> u = universe;
  std::sort(u.begin(), u.end());
  std::vector<FeatureSet> out;
  std::vector<std::size_t> pos(k);
  std::iota(pos.begin(), pos.end(), 0);
  while (true) {
    FeatureSet s(k);
    for (std::size_t j = 0; j < k; ++j) s[j] = u[pos[j]];
    out.push_back(std::move(s));
    std::size_t j = k;
    while (j > 0 && pos[j - 1] == F - k + (j - 1)) --j;
    if (j == 0) break;
    ++pos[j - 1];
    for (std::size_t t = j; t < k; ++t) pos[t] = pos[t - 1] + 1;
  }
  return out;
}

std::vector<std::size_t> universe_of(const RetrievalConfig& c, std::size_t pool_size) {
  if (c.subpool.empty()) return iota_vec(pool_size);
  auto u = c.subpool;
  std::sort(u.begin(), u.end());
  if (std::adjacent_find(u.begin(), u.end()) != u.end()) throw ConfigError("subpool has repeated indices");
  if (u.back() >= pool_size) throw ConfigError("subpool index " + std::to_string(u.back()) + " outside the pool");
  return u;
}

void validate(const RetrievalConfig& c, std::size_t pool_size) {
  const auto u = universe_of(c, pool_size);
  if (c.k == 0 || c.k > u.size()) {
    throw ConfigError("k = " + std::to_string(c.k) + " must lie in [1, " + std::to_string(u.size()) + "]");
  }
  if (c.p0 == 0 || c.pool_m == 0 || c.q == 0) throw ConfigError("P0, M and Q must be positive");
  if (c.pool_m > c.p0) throw ConfigError("M must not exceed P0");
  if (c.q > c.pool_m) throw ConfigError("Q must not exceed M");
  if (c.stage1_sets == 0 || c.batch_size == 0) throw ConfigError("stage-1 sets and batch size must be positive");
  if (c.probe_steps < 1) throw ConfigError("probe needs at least one step");
  if (c.n_support == 0 || c.n_query == 0) throw ConfigError("support and query sizes must be positive");
  if (c.ensemble_size == 0) throw ConfigError("ensemble size must be positive");
  if (!(c.learning_rate > 0.0) || c.lambda_scr < 0.0) throw ConfigError("learning rate must be positive, lambda >= 0");
  const auto sizes = effective_sizes(c, pool_size);
  if (c.q > sizes.m) throw ConfigError("Q exceeds the number of distinct candidate sets");
}

EffectiveSizes effective_sizes(const RetrievalConfig& c, std::size_t pool_size) {
  EffectiveSizes e;
  e.universe = c.subpool.empty() ? pool_size : c.subpool.size();
  const auto total = binomial(e.universe, c.k, c.p0);
  e.p0 = static_cast<std::size_t>(std::min<std::uint64_t>(c.p0, total));
  e.m = std::min(c.pool_m, e.p0);
  return e;
}

std::vector<std::size_t> choose_subpool(const cohort::Dataset& data, std::size_t n, std::uint64_t seed) {
  const std::size_t F = data.pool_size();
  if (n == 0 || n > F) throw ConfigError("subpool size must lie in [1, " + std::to_string(F) + "]");
  Rng rng(numkit::derive_seed(seed, {kSubpoolStream}));
  auto informative = data.informative;
  numkit::shuffle(informative, rng);
  const std::size_t n_inf = std::min(informative.size(), n / 2);
  std::vector<std::size_t> out(informative.begin(), informative.begin() + n_inf);
  std::vector<std::size_t> others;
  for (std::size_t f = 0; f < F; ++f) {
    if (!std::binary_search(data.informative.begin(), data.informative.end(), f)) others.push_back(f);
  }
  numkit::shuffle(others, rng);
  const std::size_t n_other = n - n_inf;
  if (n_other > others.size()) throw ConfigError("subpool larger than the available features");
  out.insert(out.end(), others.begin(), others.begin() + n_other);
  std::sort(out.begin(), out.end());
  return out;
}

TrainingData make_training_data(const cohort::Cohort& cohort) {
  TrainingData t;
  t.data = cohort::make_dataset(cohort);
  t.norm = cohort.manifest.norm;
  for (std::size_t i = 0; i < cohort.size(); ++i) {
    const auto row = scorer::encode_context(cohort.subjects[i].volume);
    if (i == 0) t.contexts = Tensor::matrix(cohort.size(), row.cols());
    std::copy(row.data().begin(), row.data().end(), t.contexts.row_span(i).begin());
  }
  return t;
}

std::vector<numkit::NamedParameter> ModelBundle::parameters() {
  return concat(concat(encoder.parameters(), scorer.parameters()), classifier.parameters());
}

ModelBundle init_model(const TrainingData& data, const RetrievalConfig& config) {
  validate(config, data.data.pool_size());
  ModelBundle m;
  auto enc = config.encoder;
  std::size_t rois = 0, feats = 0;
  for (const auto& d : data.data.descriptors) {
    rois = std::max(rois, d.roi_id + 1);
    feats = std::max(feats, d.feature_id + 1);
  }
  enc.num_rois = rois;
  enc.num_features = feats;
  enc.num_families = radiomics::kFamilyCount;
  auto sc = config.scorer;
  sc.context_raw = data.contexts.cols();
  sc.embedding_dim = enc.embedding_dim;
  Rng rng(numkit::derive_seed(config.seed, {kInitStream}));
  m.encoder = setenc::SetEncoder(enc, rng);
  m.scorer = scorer::Scorer(sc, rng);
  m.classifier = evalkit::Classifier(enc.embedding_dim, data.data.num_classes);
  m.num_classes = data.data.num_classes;
  m.k = config.k;
  m.subpool = config.subpool;
  m.norm = data.norm;
  return m;
}

namespace {

std::vector<double> model_meta(const ModelBundle& m) {
  const auto& e = m.encoder.config();
  const auto& s = m.scorer.config();
  return {double(e.embedding_dim), double(e.hidden), double(e.meta_dim), double(e.num_rois), double(e.num_families),
          double(e.num_features),  double(s.context_raw), double(s.context_dim), double(s.hidden),
          double(m.num_classes),   double(m.k)};
}

std::vector<double> as_doubles(const std::vector<std::size_t>& v) { return {v.begin(), v.end()}; }

}  // namespace

void save_model(const std::string& path, const ModelBundle& model) {
  auto& m = const_cast<ModelBundle&>(model);
  std::vector<numkit::NamedTensor> entries;
  entries.push_back({"meta.sizes", Tensor::row(model_meta(m))});
  if (!m.subpool.empty()) entries.push_back({"meta.subpool", Tensor::row(as_doubles(m.subpool))});
  if (!m.norm.empty()) {
    entries.push_back({"norm.mean", Tensor::row(m.norm.mean)});
    entries.push_back({"norm.std", Tensor::row(m.norm.std)});
  }
  for (auto& [name, p] : m.parameters()) entries.push_back({name, p->value});
  numkit::save_checkpoint(path, entries);
}

ModelBundle load_model(const std::string& path) {
  const auto entries = numkit::load_checkpoint(path);
  std::map<std::string, const Tensor*> by_name;
  for (const auto& e : entries) by_name[e.name] = &e.tensor;
  auto get = [&](const std::string& name) -> const Tensor& {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw FormatError("checkpoint " + path + " lacks entry " + name);
    return *it->second;
  };
  const auto& meta = get("meta.sizes");
  if (meta.size() != 11) throw FormatError("checkpoint " + path + " has malformed meta.sizes");
  auto sz = [&](std::size_t i) { return static_cast<std::size_t>(meta[i]); };
  setenc::EncoderConfig enc{sz(0), sz(1), sz(2), sz(3), sz(4), sz(5)};
  scorer::ScorerConfig sc{sz(6), sz(7), sz(0), sz(8)};
  ModelBundle m;
  Rng rng(0);
  m.encoder = setenc::SetEncoder(enc, rng);
  m.scorer = scorer::Scorer(sc, rng);
  m.num_classes = static_cast<int>(meta[9]);
  m.k = sz(10);
  m.classifier = evalkit::Classifier(enc.embedding_dim, m.num_classes);
  if (by_name.count("meta.subpool")) {
    for (double v : get("meta.subpool").data()) m.subpool.push_back(static_cast<std::size_t>(v));
  }
  if (by_name.count("norm.mean")) {
    const auto& mean = get("norm.mean").data();
    const auto& sd = get("norm.std").data();
    m.norm.mean.assign(mean.begin(), mean.end());
    m.norm.std.assign(sd.begin(), sd.end());
  }
  for (auto& [name, p] : m.parameters()) {
    const auto& t = get(name);
    if (!t.same_shape(p->value)) throw FormatError("checkpoint entry " + name + " has the wrong shape");
    p->value = t;
  }
  return m;
}

SubjectScorer::SubjectScorer(const ModelBundle& model, const TrainingData& data, std::size_t subject)
    : model_(&model),
      hidden_(model.encoder.hidden_table(data.data.z.row_span(subject), data.data.descriptors)),
      prepared_(model.scorer.prepare(context_row(data, subject))) {}

double SubjectScorer::operator()(const FeatureSet& set) const {
  double emb[1024];
  const std::size_t d = model_->encoder.config().embedding_dim;
  if (d > 1024) throw ContractViolation("embedding width too large for the fast path");
  model_->encoder.embed_from_hidden(hidden_, set, std::span<double>(emb, d));
  return model_->scorer.score_value(prepared_, std::span<const double>(emb, d));
}

std::vector<double> SubjectScorer::embedding(const FeatureSet& set) const {
  std::vector<double> e(model_->encoder.config().embedding_dim);
  model_->encoder.embed_from_hidden(hidden_, set, e);
  return e;
}

CandidatePool build_pool(const std::string& subject_id, const SetScoreFn& score,
                         const std::vector<std::size_t>& universe, std::size_t k, std::size_t p0, std::size_t m,
                         Rng& rng) {
  if (p0 == 0 || m == 0 || m > p0) throw ContractViolation("pool sizes need 0 < M <= P0");
  auto sets = sample_sets(universe, k, p0, rng);
  std::vector<double> scores(sets.size());
  for (std::size_t j = 0; j < sets.size(); ++j) {
    scores[j] = score(sets[j]);
    if (!std::isfinite(scores[j])) throw NumericError("non-finite candidate score for subject " + subject_id);
  }
  auto order = scorer::rank_order(scores, sets);
  CandidatePool pool;
  pool.subject_id = subject_id;
  order.resize(m);
  for (auto j : order) {
    pool.sets.push_back(std::move(sets[j]));
    pool.scores.push_back(scores[j]);
  }
  return pool;
}

std::vector<std::size_t> choose_supervised(const CandidatePool& pool, std::size_t q, Rng& rng) {
  if (q > pool.sets.size()) throw ContractViolation("Q exceeds the pool size");
  auto pos = iota_vec(pool.sets.size());
  for (std::size_t j = 0; j < q; ++j) std::swap(pos[j], pos[j + numkit::uniform_index(rng, pos.size() - j)]);
  pos.resize(q);
  std::sort(pos.begin(), pos.end());
  return pos;
}

SelectionResult select_top1(const CandidatePool& pool, std::size_t ensemble) {
  if (pool.sets.empty()) throw ContractViolation("cannot select from an empty pool");
  SelectionResult r;
  r.subject_id = pool.subject_id;
  r.s_star = pool.sets.front();
  r.score = pool.scores.front();
  const std::size_t n = std::min(ensemble, pool.sets.size());
  r.ensemble_sets.assign(pool.sets.begin(), pool.sets.begin() + n);
  return r;
}

std::string history_jsonl(const std::vector<HistoryRecord>& history) {
  std::ostringstream out;
  for (const auto& h : history) {
    nlohmann::json j = {{"stage", h.stage},   {"epoch", h.epoch},       {"L_cls", h.l_cls},
                        {"L_scr", h.l_scr},   {"total", h.total},       {"mean_reward", h.mean_reward}};
    if (h.eval_l_scr) j["eval_L_scr"] = *h.eval_l_scr;
    out << j.dump() << '\n';
  }
  return out.str();
}

std::vector<HistoryRecord> parse_history_jsonl(const std::string& text) {
  std::vector<HistoryRecord> out;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      HistoryRecord h;
      h.stage = j.at("stage").get<int>();
      h.epoch = j.at("epoch").get<std::size_t>();
      h.l_cls = j.at("L_cls").get<double>();
      h.l_scr = j.at("L_scr").get<double>();
      h.total = j.at("total").get<double>();
      h.mean_reward = j.at("mean_reward").get<double>();
      if (j.contains("eval_L_scr")) h.eval_l_scr = j.at("eval_L_scr").get<double>();
      out.push_back(h);
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(std::string("malformed history line: ") + e.what());
    }
  }
  return out;
}

std::vector<HistoryRecord> stage1_train(ModelBundle& model, const TrainingData& data, const RetrievalConfig& config) {
  validate(config, data.data.pool_size());
  const auto& ds = data.data;
  const auto universe = universe_of(config, ds.pool_size());
  const auto popt = probe_options(config);
  const std::size_t n_sets = std::min<std::uint64_t>(config.stage1_sets, binomial(universe.size(), config.k));

  // Fixed evaluation batch: its own support/query draw and candidate sets.
  struct EvalItem {
    std::size_t subject;
    std::vector<FeatureSet> sets;
    std::vector<double> rewards;
  };
  std::vector<EvalItem> eval;
  {
    Rng rng(numkit::derive_seed(config.seed, {kStage1, kEvalBatch}));
    const auto sq = cohort::draw_support_query(ds.train, ds.labels, ds.num_classes, config.n_support,
                                               config.n_query, rng);
    const std::size_t n_eval = std::min(kEvalSubjects, ds.train.size());
    const std::size_t per = std::min<std::uint64_t>(kEvalSetsPerSubject, binomial(universe.size(), config.k));
    for (std::size_t t = 0; t < n_eval; ++t) {
      EvalItem item{ds.train[t], sample_sets(universe, config.k, per, rng), {}};
      for (const auto& s : item.sets) {
        item.rewards.push_back(probe::reward_for_set(s, sq.support, sq.query, ds.z, ds.labels, ds.num_classes, popt));
      }
      eval.push_back(std::move(item));
    }
  }
  auto eval_loss = [&] {
    double sum = 0.0;
    std::size_t n = 0;
    for (const auto& item : eval) {
      const SubjectScorer s(model, data, item.subject);
      for (std::size_t j = 0; j < item.sets.size(); ++j, ++n) {
        const double d = s(item.sets[j]) - item.rewards[j];
        sum += d * d;
      }
    }
    return sum / static_cast<double>(n);
  };

  auto params = concat(model.encoder.parameters(), model.scorer.parameters());
  numkit::Adam adam({config.learning_rate});
  std::vector<HistoryRecord> history;
  for (std::size_t epoch = 1; epoch <= config.stage1_epochs; ++epoch) {
    Rng erng(numkit::derive_seed(config.seed, {kStage1, epoch}));
    const auto sq = cohort::draw_support_query(ds.train, ds.labels, ds.num_classes, config.n_support,
                                               config.n_query, erng);
    auto order = ds.train;
    numkit::shuffle(order, erng);
    double loss_sum = 0.0, reward_sum = 0.0;
    std::size_t reward_n = 0;
    for (auto i : order) {
      Rng srng(numkit::derive_seed(config.seed, {kStage1, epoch, i}));
      const auto sets = sample_sets(universe, config.k, n_sets, srng);
      auto target = Tensor::matrix(sets.size(), 1);
      for (std::size_t j = 0; j < sets.size(); ++j) {
        target[j] = probe::reward_for_set(sets[j], sq.support, sq.query, ds.z, ds.labels, ds.num_classes, popt);
        reward_sum += target[j];
        ++reward_n;
      }
      numkit::Tape tape;
      const auto emb = model.encoder.encode(tape, tokens_for(data, i, sets));
      const auto ctx = model.scorer.project_context(tape, tape.constant(context_row(data, i)));
      const auto scores = model.scorer.score(tape, ctx, emb);
      const auto loss = numkit::mse(scores, tape.constant(std::move(target)));
      numkit::zero_grads(params);
      tape.backward(loss);
      adam.step(params);
      loss_sum += loss.value().item();
    }
    HistoryRecord h;
    h.stage = 1;
    h.epoch = epoch;
    h.l_scr = loss_sum / static_cast<double>(order.size());
    h.total = h.l_scr;
    h.mean_reward = reward_sum / static_cast<double>(reward_n);
    h.eval_l_scr = eval_loss();
    history.push_back(h);
  }
  return history;
}

StepLosses joint_train_step(ModelBundle& model, numkit::Adam& optimizer, const TrainingData& data,
                            const RetrievalConfig& config, const std::vector<std::size_t>& batch,
                            const cohort::SupportQuery& sq, std::size_t epoch) {
  if (batch.empty()) throw ContractViolation("empty training batch");
  const auto& ds = data.data;
  const auto universe = universe_of(config, ds.pool_size());
  const auto sizes = effective_sizes(config, ds.pool_size());
  const auto popt = probe_options(config);
  numkit::Tape tape;
  std::optional<numkit::Var> total;
  StepLosses out;
  std::size_t reward_n = 0;
  for (auto i : batch) {
    Rng srng(numkit::derive_seed(config.seed, {kStage2, epoch, i}));
    auto pool = build_pool(ds.ids[i], SubjectScorer(model, data, i), universe, config.k, sizes.p0, sizes.m, srng);
    const auto picked = choose_supervised(pool, config.q, srng);
    std::vector<FeatureSet> sets = {pool.sets.front()};
    auto target = Tensor::matrix(picked.size(), 1);
    for (std::size_t j = 0; j < picked.size(); ++j) {
      sets.push_back(pool.sets[picked[j]]);
      target[j] = probe::reward_for_set(pool.sets[picked[j]], sq.support, sq.query, ds.z, ds.labels, ds.num_classes,
                                        popt);
      out.mean_reward += target[j];
      ++reward_n;
    }
    const auto emb = model.encoder.encode(tape, tokens_for(data, i, sets));
    const std::size_t star[1] = {0};
    const auto logits = model.classifier.logits(tape, numkit::gather_rows(emb, star));
    const int label[1] = {ds.labels[i]};
    const auto l_cls = numkit::softmax_cross_entropy(logits, label);
    std::vector<std::size_t> rows(picked.size());
    std::iota(rows.begin(), rows.end(), 1);
    const auto ctx = model.scorer.project_context(tape, tape.constant(context_row(data, i)));
    const auto scores = model.scorer.score(tape, ctx, numkit::gather_rows(emb, rows));
    const auto l_scr = numkit::mse(scores, tape.constant(std::move(target)));
    const auto li = numkit::add(l_cls, numkit::scale(l_scr, config.lambda_scr));
    total = total ? numkit::add(*total, li) : li;
    out.l_cls += l_cls.value().item();
    out.l_scr += l_scr.value().item();
  }
  const double inv_n = 1.0 / static_cast<double>(batch.size());
  const auto loss = numkit::scale(*total, inv_n);
  auto params = model.parameters();
  numkit::zero_grads(params);
  tape.backward(loss);
  optimizer.step(params);
  out.l_cls *= inv_n;
  out.l_scr *= inv_n;
  out.total = loss.value().item();
  out.mean_reward /= static_cast<double>(reward_n);
  return out;
}

std::vector<HistoryRecord> stage2_train(ModelBundle& model, const TrainingData& data, const RetrievalConfig& config) {
  validate(config, data.data.pool_size());
  const auto& ds = data.data;
  numkit::Adam adam({config.learning_rate});
  std::vector<HistoryRecord> history;
  for (std::size_t epoch = 1; epoch <= config.stage2_epochs; ++epoch) {
    Rng erng(numkit::derive_seed(config.seed, {kStage2, epoch}));
    const auto sq = cohort::draw_support_query(ds.train, ds.labels, ds.num_classes, config.n_support,
                                               config.n_query, erng);
    auto order = ds.train;
    numkit::shuffle(order, erng);
    HistoryRecord h;
    h.stage = 2;
    h.epoch = epoch;
    for (std::size_t b = 0; b < order.size(); b += config.batch_size) {
      const std::vector<std::size_t> batch(order.begin() + b,
                                           order.begin() + std::min(order.size(), b + config.batch_size));
      const auto l = joint_train_step(model, adam, data, config, batch, sq, epoch);
      const double w = static_cast<double>(batch.size()) / static_cast<double>(order.size());
      h.l_cls += w * l.l_cls;
      h.l_scr += w * l.l_scr;
      h.total += w * l.total;
      h.mean_reward += w * l.mean_reward;
    }
    history.push_back(h);
  }
  return history;
}

namespace {

void write_text(const std::filesystem::path& p, const std::string& text) {
  std::ofstream out(p);
  if (!out) throw IoError("cannot write " + p.string());
  out << text;
}

std::string read_text(const std::filesystem::path& p) {
  std::ifstream in(p);
  if (!in) throw IoError("cannot read " + p.string());
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void check_model_matches(const ModelBundle& m, const TrainingData& data, const RetrievalConfig& config) {
  RetrievalConfig trained;
  trained.subpool = m.subpool;
  if (m.k != config.k || universe_of(trained, data.data.pool_size()) != universe_of(config, data.data.pool_size())) {
    throw ConfigError("checkpoint was trained with a different k or subpool");
  }
  if (m.num_classes != data.data.num_classes) throw ConfigError("checkpoint class count does not match the cohort");
}

}  // namespace

TrainingResult run_training(const TrainingData& data, const RetrievalConfig& config, const std::string& out_dir) {
  TrainingResult r{init_model(data, config), {}};
  if (!out_dir.empty()) std::filesystem::create_directories(out_dir);
  r.history = stage1_train(r.model, data, config);
  if (!out_dir.empty()) {
    save_model((std::filesystem::path(out_dir) / "stage1.ckpt").string(), r.model);
    write_text(std::filesystem::path(out_dir) / "history.jsonl", history_jsonl(r.history));
  }
  r.history = concat(r.history, stage2_train(r.model, data, config));
  if (config.refit_head) refit_classifier(r.model, data, config);
  if (!out_dir.empty()) {
    save_model((std::filesystem::path(out_dir) / "final.ckpt").string(), r.model);
    write_text(std::filesystem::path(out_dir) / "history.jsonl", history_jsonl(r.history));
  }
  return r;
}

TrainingResult resume_training(const TrainingData& data, const RetrievalConfig& config, const std::string& out_dir) {
  const std::filesystem::path dir(out_dir);
  TrainingResult r{load_model((dir / "stage1.ckpt").string()), {}};
  check_model_matches(r.model, data, config);
  for (const auto& h : parse_history_jsonl(read_text(dir / "history.jsonl"))) {
    if (h.stage == 1) r.history.push_back(h);
  }
  r.history = concat(r.history, stage2_train(r.model, data, config));
  if (config.refit_head) refit_classifier(r.model, data, config);
  save_model((dir / "final.ckpt").string(), r.model);
  write_text(dir / "history.jsonl", history_jsonl(r.history));
  return r;
}

SubjectRetrieval retrieve_subject(const ModelBundle& model, const TrainingData& data, const RetrievalConfig& config,
                                  std::size_t subject) {
  if (subject >= data.data.size()) throw ContractViolation("subject index out of range");
  check_model_matches(model, data, config);
  const auto universe = universe_of(config, data.data.pool_size());
  const auto sizes = effective_sizes(config, data.data.pool_size());
  Rng rng(numkit::derive_seed(config.seed, {kInferStream, subject}));
  SubjectRetrieval out;
  out.pool = build_pool(data.data.ids[subject], SubjectScorer(model, data, subject), universe, config.k, sizes.p0,
                        sizes.m, rng);
  out.selection = select_top1(out.pool, config.ensemble_size);
  return out;
}

void refit_classifier(ModelBundle& model, const TrainingData& data, const RetrievalConfig& config) {
  const auto& train = data.data.train;
  if (train.empty()) throw ContractViolation("no training subjects");
  auto x = Tensor::matrix(train.size(), model.encoder.config().embedding_dim);
  std::vector<int> y;
  for (std::size_t r = 0; r < train.size(); ++r) {
    const auto sel = retrieve_subject(model, data, config, train[r]).selection;
    const auto e = SubjectScorer(model, data, train[r]).embedding(sel.s_star);
    std::copy(e.begin(), e.end(), x.row_span(r).begin());
    y.push_back(data.data.labels[train[r]]);
  }
  model.classifier = evalkit::fit_linear_head(x, y, data.data.num_classes, config.head);
}

Evaluation evaluate_model(const ModelBundle& model, const TrainingData& data, const RetrievalConfig& config,
                          const std::vector<std::size_t>& subjects, const std::string& name) {
  if (subjects.empty()) throw ContractViolation("no subjects to evaluate");
  Evaluation ev;
  std::vector<evalkit::Prediction> preds;
  std::vector<std::string> ids;
  std::vector<int> labels;
  for (auto i : subjects) {
    auto r = retrieve_subject(model, data, config, i);
    const SubjectScorer s(model, data, i);
    std::vector<std::vector<double>> embs;
    for (const auto& set : r.selection.ensemble_sets) embs.push_back(s.embedding(set));
    preds.push_back(evalkit::ensemble_predict(embs, model.classifier));
    ids.push_back(data.data.ids[i]);
    labels.push_back(data.data.labels[i]);
    ev.selections.push_back(std::move(r.selection));
  }
  ev.report = evalkit::report_from_predictions(name, config.k, ids, labels, preds, data.data.num_classes);
  return ev;
}

SetScoreFn subject_reward_fn(const TrainingData& data, const RetrievalConfig& config, std::size_t subject) {
  const auto& ds = data.data;
  Rng rng(numkit::derive_seed(config.seed, {kOracleStream, subject}));
  auto sq = cohort::draw_support_query(ds.train, ds.labels, ds.num_classes, config.n_support, config.n_query, rng);
  const auto popt = probe_options(config);
  return [&ds, sq = std::move(sq), popt](const FeatureSet& s) {
    return probe::reward_for_set(s, sq.support, sq.query, ds.z, ds.labels, ds.num_classes, popt);
  };
}

OracleResult exhaustive_oracle(const std::vector<std::size_t>& universe, std::size_t k, const SetScoreFn& reward,
                               std::uint64_t budget) {
  const auto count = binomial(universe.size(), k, budget + 1);
  if (count > budget) {
    const auto exact = binomial(universe.size(), k);
    throw BudgetExceededError("C(" + std::to_string(universe.size()) + ", " + std::to_string(k) + ") = " +
                                  (exact == UINT64_MAX ? std::string("more than 2^64") : std::to_string(exact)) +
                                  " sets exceed the enumeration budget of " + std::to_string(budget),
                              exact);
  }
  OracleResult r;
  r.sets = enumerate_sets(universe, k);
  r.rewards.reserve(r.sets.size());
  for (const auto& s : r.sets) r.rewards.push_back(reward(s));
  r.argmax = static_cast<std::size_t>(std::max_element(r.rewards.begin(), r.rewards.end()) - r.rewards.begin());
  r.r_max = r.rewards[r.argmax];
  return r;
}

GapStatistics gap_statistics(const std::vector<double>& gaps) {
  if (gaps.empty()) throw ContractViolation("gap statistics need at least one gap");
  for (double g : gaps) {
    if (!(g >= 0.0)) throw ContractViolation("gaps must be non-negative");
  }
  auto sorted = gaps;
  std::sort(sorted.begin(), sorted.end());
  const std::size_t n = sorted.size();
  const double nd = static_cast<double>(n);
  GapStatistics st;
  st.mean = std::accumulate(gaps.begin(), gaps.end(), 0.0) / nd;
  // P(gap > e) is (n - i) / n on [g_(i), g_(i+1)) for sorted gaps.
  double prev = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    st.tail_integral += (sorted[i] - prev) * (static_cast<double>(n - i) / nd);
    prev = sorted[i];
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (i + 1 < n && sorted[i + 1] == sorted[i]) continue;
    st.tail_curve.emplace_back(sorted[i], static_cast<double>(n - i - 1) / nd);
  }
  auto pct = [&](double p) {
    const double pos = p * (nd - 1.0);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, n - 1);
    return sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - static_cast<double>(lo));
  };
  for (double p : {0.05, 0.25, 0.5, 0.75, 0.9, 0.95, 0.99}) st.percentiles.emplace_back(p, pct(p));
  st.p95 = pct(0.95);
  return st;
}

double percentile_rank(const std::vector<double>& rewards, double r) {
  if (rewards.empty()) throw ContractViolation("empty reward distribution");
  const auto below = std::count_if(rewards.begin(), rewards.end(), [r](double v) { return v < r; });
  return static_cast<double>(below) / static_cast<double>(rewards.size());
}

std::vector<GapRow> audit_gaps(const ScorerFactory& scorer_for, const TrainingData& data,
                               const RetrievalConfig& config, const std::vector<std::size_t>& subjects) {
  const auto universe = universe_of(config, data.data.pool_size());
  const auto sizes = effective_sizes(config, data.data.pool_size());
  std::vector<GapRow> rows;
  for (auto i : subjects) {
    if (i >= data.data.size()) throw ContractViolation("subject index out of range");
    const auto oracle = exhaustive_oracle(universe, config.k, subject_reward_fn(data, config, i));
    Rng rng(numkit::derive_seed(config.seed, {kInferStream, i}));
    const auto pool = build_pool(data.data.ids[i], scorer_for(i), universe, config.k, sizes.p0, sizes.m, rng);
    const auto sel = select_top1(pool, config.ensemble_size);
    const auto it = std::lower_bound(oracle.sets.begin(), oracle.sets.end(), sel.s_star);
    GapRow row;
    row.subject_id = data.data.ids[i];
    row.r_star = oracle.rewards[static_cast<std::size_t>(it - oracle.sets.begin())];
    row.r_max = oracle.r_max;
    row.gap = row.r_max - row.r_star;
    row.percentile = percentile_rank(oracle.rewards, row.r_star);
    row.s_star = sel.s_star;
    row.rewards = oracle.rewards;
    rows.push_back(std::move(row));
  }
  return rows;
}

std::vector<GapRow> audit_gaps(const ModelBundle& model, const TrainingData& data, const RetrievalConfig& config,
                               const std::vector<std::size_t>& subjects) {
  check_model_matches(model, data, config);
  return audit_gaps([&](std::size_t i) -> SetScoreFn { return SubjectScorer(model, data, i); }, data, config,
                    subjects);
}

std::string format_set(const FeatureSet& set) {
  std::string out;
  for (std::size_t j = 0; j < set.size(); ++j) out += (j ? ";" : "") + std::to_string(set[j]);
  return out;
}

FeatureSet parse_set(const std::string& text) {
  FeatureSet s;
  std::istringstream in(text);
  std::string tok;
  while (std::getline(in, tok, ';')) {
    try {
      std::size_t used = 0;
      s.push_back(std::stoul(tok, &used));
      if (used != tok.size()) throw std::invalid_argument(tok);
    } catch (const std::exception&) {
      throw FormatError("malformed feature set: " + text);
    }
  }
  return s;
}

std::string gap_csv(const std::vector<GapRow>& rows) {
  std::ostringstream out;
  out.precision(17);
  out << "subject_id,R_star,R_max,gap,percentile,S_star\n";
  for (const auto& r : rows) {
    out << r.subject_id << ',' << r.r_star << ',' << r.r_max << ',' << r.gap << ',' << r.percentile << ','
        << format_set(r.s_star) << '\n';
  }
  return out.str();
}

std::string reward_list_csv(const std::vector<GapRow>& rows, const std::vector<std::size_t>& universe,
                            std::size_t k) {
  const auto sets = enumerate_sets(universe, k);
  std::ostringstream out;
  out.precision(17);
  out << "subject_id,set,reward\n";
  for (const auto& r : rows) {
    if (r.rewards.size() != sets.size()) throw ContractViolation("reward list does not match the enumeration");
    for (std::size_t j = 0; j < sets.size(); ++j) out << r.subject_id << ',' << format_set(sets[j]) << ',' << r.rewards[j] << '\n';
  }
  return out.str();
}

}  // namespace strv::retrieval
