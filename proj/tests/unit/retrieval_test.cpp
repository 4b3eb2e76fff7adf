#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <map>
#include <set>

#include "strv/errors.hpp"
#include "strv/retrieval/retrieval.hpp"

using namespace strv;
using namespace strv::retrieval;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("strv_retrieval_test_" + name);
  fs::remove_all(dir);
  return dir;
}

const TrainingData& tiny_data() {
  static const TrainingData data = [] {
    cohort::GenerateOptions o;
    o.n_subjects = 36;
    o.dims = {8, 16, 16};
    o.seed = 21;
    auto c = cohort::generate_cohort(o);
    cohort::extract_features(c);
    cohort::split(c, 0.75, 0.25, 21);
    cohort::compute_norm_stats(c);
    return make_training_data(c);
  }();
  return data;
}

RetrievalConfig tiny_config() {
  RetrievalConfig c;
  c.k = 3;
  c.p0 = 60;
  c.pool_m = 20;
  c.q = 4;
  c.stage1_epochs = 2;
  c.stage1_sets = 6;
  c.stage2_epochs = 2;
  c.batch_size = 9;
  c.n_support = 9;
  c.n_query = 9;
  c.seed = 5;
  c.head.epochs = 50;
  return c;
}

CandidatePool pool_of(std::vector<FeatureSet> sets, std::vector<double> scores) {
  CandidatePool p;
  p.subject_id = "s";
  p.sets = std::move(sets);
  p.scores = std::move(scores);
  return p;
}

}  // namespace

TEST(Binomial, ValuesAndSaturation) {
  EXPECT_EQ(binomial(10, 3), 120u);
  EXPECT_EQ(binomial(6, 2), 15u);
  EXPECT_EQ(binomial(15, 3), 455u);
  EXPECT_EQ(binomial(5, 0), 1u);
  EXPECT_EQ(binomial(3, 5), 0u);
  EXPECT_EQ(binomial(207, 25, 1000000), 1000000u);
  EXPECT_EQ(binomial(207, 25), UINT64_MAX);
  EXPECT_EQ(binomial(60, 30), 118264581564861424ull);
}

TEST(SampleSets, OnlyPossibleSet) {
  Rng rng(1);
  const auto s = sample_sets(3, 3, 1, rng);
  ASSERT_EQ(s.size(), 1u);
  EXPECT_EQ(s[0], (FeatureSet{0, 1, 2}));
}

TEST(SampleSets, ExhaustiveCoverage) {
  Rng rng(2);
  const auto s = sample_sets(10, 3, 120, rng);
  std::set<FeatureSet> unique(s.begin(), s.end());
  EXPECT_EQ(unique.size(), 120u);
  for (const auto& set : s) {
    ASSERT_EQ(set.size(), 3u);
    ASSERT_TRUE(std::is_sorted(set.begin(), set.end()));
    ASSERT_LT(set.back(), 10u);
  }
  Rng more(2);
  EXPECT_THROW(sample_sets(10, 3, 121, more), ContractViolation);
}

TEST(SampleSets, UniformOverPairs) {
  Rng rng(3);
  std::map<FeatureSet, int> counts;
  const int draws = 100000;
  for (int i = 0; i < draws; ++i) ++counts[sample_sets(6, 2, 1, rng)[0]];
  ASSERT_EQ(counts.size(), 15u);
  double chi2 = 0;
  const double expected = draws / 15.0;
  for (const auto& [set, n] : counts) chi2 += (n - expected) * (n - expected) / expected;
  EXPECT_LT(chi2, 29.141);  // chi-square critical value, 14 dof, alpha 0.01
}

TEST(SampleSets, ShorterRequestIsPrefix) {
  Rng a(4), b(4);
  const auto small = sample_sets(30, 4, 50, a);
  const auto large = sample_sets(30, 4, 200, b);
  EXPECT_TRUE(std::equal(small.begin(), small.end(), large.begin()));
  const std::vector<std::size_t> universe{3, 9, 12, 40, 41};
  Rng c(5);
  for (const auto& s : sample_sets(universe, 2, 10, c)) {
    for (auto f : s) EXPECT_TRUE(std::find(universe.begin(), universe.end(), f) != universe.end());
  }
}

TEST(EnumerateSets, LexicographicAndComplete) {
  const auto sets = enumerate_sets({1, 4, 6, 9}, 2);
  EXPECT_EQ(sets, (std::vector<FeatureSet>{{1, 4}, {1, 6}, {1, 9}, {4, 6}, {4, 9}, {6, 9}}));
  EXPECT_EQ(enumerate_sets({0, 1, 2, 3, 4, 5, 6, 7, 8, 9}, 3).size(), 120u);
}

TEST(Config, ValidationAndClamping) {
  RetrievalConfig c;
  EXPECT_NO_THROW(validate(c, 207));
  c.pool_m = 6000;
  EXPECT_THROW(validate(c, 207), ConfigError);
  c = {};
  c.q = 2000;
  EXPECT_THROW(validate(c, 207), ConfigError);
  c = {};
  c.k = 208;
  EXPECT_THROW(validate(c, 207), ConfigError);
  c = {};
  c.subpool = {4, 4, 5};
  EXPECT_THROW(validate(c, 207), ConfigError);

  c = {};
  c.k = 3;
  c.subpool = {0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
  const auto e = effective_sizes(c, 207);
  EXPECT_EQ(e.universe, 10u);
  EXPECT_EQ(e.p0, 120u);
  EXPECT_EQ(e.m, 120u);
}

TEST(ChooseSubpool, HalfInformative) {
  const auto& ds = tiny_data().data;
  const auto sub = choose_subpool(ds, 15, 1);
  ASSERT_EQ(sub.size(), 15u);
  EXPECT_TRUE(std::is_sorted(sub.begin(), sub.end()));
  std::size_t planted = 0;
  for (auto f : sub) planted += std::binary_search(ds.informative.begin(), ds.informative.end(), f) ? 1 : 0;
  EXPECT_EQ(planted, 7u);
  EXPECT_EQ(choose_subpool(ds, 15, 1), sub);
  EXPECT_THROW(choose_subpool(ds, 0, 1), ConfigError);
}

TEST(BuildPool, FullPoolIsSortedSample) {
  Rng rng(6);
  auto score = [](const FeatureSet& s) { return std::sin(static_cast<double>(s[0] * 31 + s[1] * 7 + s[2])); };
  const std::vector<std::size_t> universe{0, 1, 2, 3, 4, 5, 6, 7};
  const auto pool = build_pool("s", score, universe, 3, 40, 40, rng);
  ASSERT_EQ(pool.sets.size(), 40u);
  for (std::size_t j = 0; j + 1 < pool.sets.size(); ++j) {
    ASSERT_GE(pool.scores[j], pool.scores[j + 1]);
    ASSERT_EQ(pool.scores[j], score(pool.sets[j]));
  }
  std::set<FeatureSet> unique(pool.sets.begin(), pool.sets.end());
  EXPECT_EQ(unique.size(), 40u);
  Rng again(6);
  auto sample = sample_sets(universe, 3, 40, again);
  std::sort(sample.begin(), sample.end());
  std::vector<FeatureSet> sorted = pool.sets;
  std::sort(sorted.begin(), sorted.end());
  EXPECT_EQ(sorted, sample);

  Rng top(6);
  const auto trimmed = build_pool("s", score, universe, 3, 40, 10, top);
  EXPECT_TRUE(std::equal(trimmed.sets.begin(), trimmed.sets.end(), pool.sets.begin()));
}

TEST(BuildPool, OracleScorerFindsExhaustiveMax) {
  const auto& data = tiny_data();
  RetrievalConfig c = tiny_config();
  c.subpool = {0, 5, 23, 30, 47, 69, 90, 100, 150, 200};
  for (std::size_t i = 0; i < 6; ++i) {
    const auto reward = subject_reward_fn(data, c, i);
    const auto oracle = exhaustive_oracle(c.subpool, 3, reward);
    ASSERT_EQ(oracle.rewards.size(), 120u);
    EXPECT_EQ(*std::max_element(oracle.rewards.begin(), oracle.rewards.end()), oracle.r_max);
    Rng rng(i);
    const auto pool = build_pool(data.data.ids[i], reward, c.subpool, 3, 120, 120, rng);
    const auto sel = select_top1(pool);
    EXPECT_EQ(reward(sel.s_star), oracle.r_max);
  }
}

TEST(AuditGaps, RewardOracleScorerHasZeroGap) {
  const auto& data = tiny_data();
  RetrievalConfig c = tiny_config();
  c.subpool = {0, 5, 23, 30, 47, 69, 90, 100, 150, 200};
  c.p0 = 120;
  c.pool_m = 120;
  std::vector<std::size_t> subjects{0, 3, 7, 11};
  const auto rows = audit_gaps([&](std::size_t i) { return subject_reward_fn(data, c, i); }, data, c, subjects);
  ASSERT_EQ(rows.size(), 4u);
  for (const auto& r : rows) {
    EXPECT_EQ(r.gap, 0.0);
    EXPECT_EQ(r.rewards.size(), 120u);
    EXPECT_EQ(r.percentile, 1.0 - 1.0 / 120.0 * static_cast<double>(std::count(r.rewards.begin(), r.rewards.end(), r.r_max)));
  }
}

TEST(AuditGaps, ModelOverloadMatchesRetrieveSubject) {
  const auto& data = tiny_data();
  auto c = tiny_config();
  c.subpool = {1, 2, 3, 10, 20, 30, 40, 50};
  const auto model = run_training(data, c).model;
  const auto rows = audit_gaps(model, data, c, {0, 1, 2});
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(rows[i].s_star, retrieve_subject(model, data, c, i).selection.s_star);
    EXPECT_GE(rows[i].gap, 0.0);
  }
}

TEST(BuildPool, SelectionInvariantUnderIncreasingTransform) {
  auto score = [](const FeatureSet& s) { return std::cos(0.37 * static_cast<double>(s[0] + 3 * s[1])); };
  auto squashed = [&](const FeatureSet& s) { return std::exp(3.0 * score(s)) - 7.0; };
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng c(seed), d(seed);
    const auto x = build_pool("s", score, {0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11}, 2, 50, 20, c);
    const auto y = build_pool("s", squashed, {0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11}, 2, 50, 20, d);
    EXPECT_EQ(select_top1(x).s_star, select_top1(y).s_star);
    EXPECT_EQ(x.sets, y.sets);
  }
}

TEST(SelectTop1, Examples) {
  const auto one = select_top1(pool_of({{1, 2, 3}}, {0.4}));
  EXPECT_EQ(one.s_star, (FeatureSet{1, 2, 3}));
  EXPECT_EQ(one.ensemble_sets.size(), 1u);

  Rng rng(7);
  auto flat = [](const FeatureSet&) { return 1.0; };
  const auto tied = build_pool("s", flat, {0, 1, 2, 3, 4, 5}, 2, 15, 15, rng);
  EXPECT_EQ(select_top1(tied).s_star, (FeatureSet{0, 1}));

  const auto dec = select_top1(pool_of({{5, 6}, {0, 1}, {2, 3}, {1, 4}}, {0.9, 0.5, 0.3, 0.1}));
  EXPECT_EQ(dec.s_star, (FeatureSet{5, 6}));
  EXPECT_EQ(dec.score, 0.9);
  EXPECT_EQ(dec.ensemble_sets, (std::vector<FeatureSet>{{5, 6}, {0, 1}, {2, 3}}));
  EXPECT_THROW(select_top1(pool_of({}, {})), ContractViolation);
}

TEST(ChooseSupervised, DistinctPositions) {
  const auto pool = pool_of({{0}, {1}, {2}, {3}, {4}, {5}}, {6, 5, 4, 3, 2, 1});
  Rng rng(8);
  for (int t = 0; t < 50; ++t) {
    const auto q = choose_supervised(pool, 4, rng);
    ASSERT_EQ(q.size(), 4u);
    ASSERT_TRUE(std::is_sorted(q.begin(), q.end()));
    ASSERT_EQ(std::set<std::size_t>(q.begin(), q.end()).size(), 4u);
    ASSERT_LT(q.back(), 6u);
  }
  EXPECT_THROW(choose_supervised(pool, 7, rng), ContractViolation);
}

TEST(GapStatistics, HandExamples) {
  const auto zero = gap_statistics({0, 0, 0});
  EXPECT_EQ(zero.mean, 0.0);
  EXPECT_EQ(zero.tail_integral, 0.0);
  const auto st = gap_statistics({0, 0, 0.2});
  EXPECT_NEAR(st.mean, 1.0 / 15.0, 1e-15);
  EXPECT_NEAR(st.tail_integral, 1.0 / 15.0, 1e-15);
  ASSERT_EQ(st.tail_curve.size(), 2u);
  EXPECT_NEAR(st.tail_curve[0].second, 1.0 / 3.0, 1e-15);
  EXPECT_EQ(st.tail_curve[1].second, 0.0);
  EXPECT_THROW(gap_statistics({}), ContractViolation);
  EXPECT_THROW(gap_statistics({0.1, -0.01}), ContractViolation);
}

TEST(GapStatistics, TailIntegralEqualsMean) {
  Rng rng(9);
  for (int t = 0; t < 500; ++t) {
    std::vector<double> gaps(1 + numkit::uniform_index(rng, 200));
    for (auto& g : gaps) g = numkit::uniform_index(rng, 3) == 0 ? 0.0 : -std::log(numkit::uniform01(rng) + 1e-300);
    const auto st = gap_statistics(gaps);
    ASSERT_LE(std::abs(st.mean - st.tail_integral), 1e-12);
    ASSERT_GE(st.p95, st.percentiles[1].second);
  }
}

TEST(PercentileRank, StrictlyBelow) {
  EXPECT_EQ(percentile_rank({1, 2, 3, 4}, 3), 0.5);
  EXPECT_EQ(percentile_rank({1, 2, 3, 4}, 5), 1.0);
  EXPECT_EQ(percentile_rank({1, 1, 1}, 1), 0.0);
}

TEST(ExhaustiveOracle, BudgetRefusal) {
  std::vector<std::size_t> universe(60);
  for (std::size_t i = 0; i < 60; ++i) universe[i] = i;
  auto never = [](const FeatureSet&) -> double { throw std::logic_error("must not be called"); };
  try {
    exhaustive_oracle(universe, 5, never);
    FAIL() << "expected BudgetExceededError";
  } catch (const BudgetExceededError& e) {
    EXPECT_EQ(e.count(), 5461512u);
    EXPECT_NE(std::string(e.what()).find("5461512"), std::string::npos);
  }
}

TEST(Formats, SetsHistoryAndCsv) {
  EXPECT_EQ(format_set({3, 17, 40}), "3;17;40");
  EXPECT_EQ(parse_set("3;17;40"), (FeatureSet{3, 17, 40}));
  EXPECT_THROW(parse_set("3;x"), FormatError);

  std::vector<HistoryRecord> h{{1, 1, 0.0, 0.25, 0.25, -1.1, 0.3}, {2, 1, 1.05, 0.02, 1.07, -0.9, std::nullopt}};
  EXPECT_EQ(parse_history_jsonl(history_jsonl(h)), h);
  EXPECT_THROW(parse_history_jsonl("{not json}\n"), FormatError);

  GapRow row{"s001", -0.5, -0.4, 0.1, 0.75, {1, 2, 3}, {}};
  const auto csv = gap_csv({row});
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "subject_id,R_star,R_max,gap,percentile,S_star");
  EXPECT_NE(csv.find("s001,-0.5,-0.40000000000000002,0.10000000000000001,0.75,1;2;3"), std::string::npos);
}

TEST(Training, LambdaZeroTotalIsClassificationLoss) {
  const auto& data = tiny_data();
  auto c = tiny_config();
  c.lambda_scr = 0.0;
  auto model = init_model(data, c);
  numkit::Adam adam({c.learning_rate});
  Rng rng(10);
  const auto& ds = data.data;
  const auto sq = cohort::draw_support_query(ds.train, ds.labels, ds.num_classes, 9, 9, rng);
  const std::vector<std::size_t> batch(ds.train.begin(), ds.train.begin() + 4);
  const auto l = joint_train_step(model, adam, data, c, batch, sq, 1);
  EXPECT_EQ(l.total, l.l_cls);
  // Fresh heads are zero, so the first step sees uniform class probabilities.
  EXPECT_NEAR(l.l_cls, std::log(3.0), 1e-12);
  EXPECT_GT(l.l_scr, 0.0);
}

TEST(Training, HistoryCheckpointsAndResume) {
  const auto& data = tiny_data();
  const auto c = tiny_config();
  const auto dir = scratch_dir("resume");
  const auto first = run_training(data, c, dir.string());
  ASSERT_EQ(first.history.size(), c.stage1_epochs + c.stage2_epochs);
  for (std::size_t e = 0; e < first.history.size(); ++e) {
    const auto& h = first.history[e];
    EXPECT_EQ(h.stage, e < c.stage1_epochs ? 1 : 2);
    EXPECT_EQ(h.epoch, e < c.stage1_epochs ? e + 1 : e + 1 - c.stage1_epochs);
    EXPECT_EQ(h.eval_l_scr.has_value(), h.stage == 1);
  }
  EXPECT_TRUE(fs::exists(dir / "stage1.ckpt"));
  EXPECT_TRUE(fs::exists(dir / "final.ckpt"));

  const auto second = resume_training(data, c, dir.string());
  EXPECT_EQ(second.history, first.history);
  auto a = first.model, b = load_model((dir / "final.ckpt").string());
  auto pa = a.parameters(), pb = b.parameters();
  ASSERT_EQ(pa.size(), pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) {
    EXPECT_EQ(pa[i].first, pb[i].first);
    EXPECT_EQ(pa[i].second->value, pb[i].second->value) << pa[i].first;
  }

  auto other = c;
  other.k = 4;
  EXPECT_THROW(resume_training(data, other, dir.string()), ConfigError);
}

TEST(Training, DeterministicSelections) {
  const auto& data = tiny_data();
  const auto c = tiny_config();
  const auto a = run_training(data, c);
  const auto b = run_training(data, c);
  const auto ea = evaluate_model(a.model, data, c, data.data.validation);
  const auto eb = evaluate_model(b.model, data, c, data.data.validation);
  EXPECT_EQ(ea.report, eb.report);
  EXPECT_EQ(ea.selections, eb.selections);
  for (const auto& s : ea.selections) {
    EXPECT_EQ(s.s_star.size(), c.k);
    EXPECT_EQ(s.ensemble_sets.size(), 3u);
    EXPECT_EQ(s.ensemble_sets.front(), s.s_star);
  }
}

TEST(Training, ModelRoundTripScoresIdentically) {
  const auto& data = tiny_data();
  auto c = tiny_config();
  c.subpool = {1, 2, 3, 10, 20, 30, 40, 50};
  const auto trained = run_training(data, c).model;
  const auto dir = scratch_dir("model");
  fs::create_directories(dir);
  save_model((dir / "m.ckpt").string(), trained);
  const auto loaded = load_model((dir / "m.ckpt").string());
  EXPECT_EQ(loaded.subpool, c.subpool);
  EXPECT_EQ(loaded.k, 3u);
  for (std::size_t i = 0; i < 5; ++i) {
    EXPECT_EQ(retrieve_subject(trained, data, c, i).pool.scores, retrieve_subject(loaded, data, c, i).pool.scores);
  }
  auto wrong = c;
  wrong.subpool.clear();
  EXPECT_THROW(retrieve_subject(loaded, data, wrong, 0), ConfigError);
}

TEST(Training, RegressionOnOnePointConverges) {
  const auto& data = tiny_data();
  auto c = tiny_config();
  auto model = init_model(data, c);
  const FeatureSet set{2, 40, 100};
  const double target = -0.8;
  auto params = model.parameters();
  numkit::Adam adam({1e-2});
  double loss = 0;
  for (int step = 0; step < 300; ++step) {
    numkit::Tape tape;
    const auto tokens = setenc::tokenize(data.data.z.row_span(0), set, data.data.descriptors);
    const auto emb = model.encoder.encode(tape, {tokens, tokens, tokens});
    const auto ctx = model.scorer.project_context(tape, tape.constant(Tensor::row(data.contexts.row_span(0))));
    const auto l = numkit::mse(model.scorer.score(tape, ctx, emb), tape.constant(Tensor::matrix(3, 1, target)));
    numkit::zero_grads(params);
    tape.backward(l);
    adam.step(params);
    loss = l.value().item();
  }
  EXPECT_LT(loss, 1e-6);
}
