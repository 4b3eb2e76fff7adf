// Acceptance run: one PASS/FAIL line per criterion. Pass criterion numbers as
// arguments to run a subset.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <json.hpp>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "oracle/metrics_oracle.hpp"
#include "oracle/radiomics_oracle.hpp"
#include "strv/cli/app.hpp"
#include "strv/cli/artifacts.hpp"
#include "strv/errors.hpp"
#include "strv/evalkit/baselines.hpp"
#include "strv/numkit/gradcheck.hpp"
#include "strv/retrieval/retrieval.hpp"

using namespace strv;
using numkit::Rng;
using numkit::Tensor;
using retrieval::FeatureSet;
using retrieval::RetrievalConfig;
using retrieval::TrainingData;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

cohort::Cohort make_cohort(std::uint64_t seed, bool clone = false) {
  cohort::GenerateOptions o;
  o.seed = seed;
  auto c = cohort::generate_cohort(o);
  cohort::extract_features(c);
  if (clone) cohort::apply_clone_transform(c, cohort::default_clone_spec(c.manifest.pool_size()), seed);
  cohort::split(c, 0.7, 0.3, seed);
  cohort::compute_norm_stats(c);
  return c;
}

TrainingData default_data(std::uint64_t seed, bool clone = false) {
  return retrieval::make_training_data(make_cohort(seed, clone));
}

std::vector<std::size_t> all_subjects(const TrainingData& d) {
  std::vector<std::size_t> v(d.data.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = i;
  return v;
}

// ---- 1 ----------------------------------------------------------------------

Outcome radiomics_oracle() {
  std::mt19937_64 rng(20240611);
  std::uniform_int_distribution<std::uint32_t> side(1, 5);
  std::uniform_int_distribution<int> level(0, 63);
  std::uniform_real_distribution<double> density(0.2, 1.0);
  double worst = 0.0;
  for (int t = 0; t < 50; ++t) {
    const radiomics::Dims d{side(rng), side(rng), side(rng)};
    auto v = radiomics::Volume::zeros(d);
    for (auto& x : v.voxels) x = static_cast<float>(level(rng)) / 4.0f;
    auto m = radiomics::Mask::zeros(d);
    std::bernoulli_distribution on(density(rng));
    for (auto& b : m.bits) b = on(rng) ? 1 : 0;
    if (m.empty()) m.bits[0] = 1;

    std::map<oracle::Coord, double> values;
    std::vector<double> list;
    for (std::size_t z = 0; z < d.d; ++z)
      for (std::size_t y = 0; y < d.h; ++y)
        for (std::size_t x = 0; x < d.w; ++x)
          if (m.test(d.index(z, y, x))) {
            const double val = v.voxels[d.index(z, y, x)];
            values[{int(z), int(y), int(x)}] = val;
            list.push_back(val);
          }
    const auto vox = oracle::discretize(values, radiomics::kDefaultBinCount);
    std::vector<double> want;
    for (double f : oracle::first_order(list)) want.push_back(f);
    for (double f : oracle::glcm(vox)) want.push_back(f);
    for (double f : oracle::glrlm(vox)) want.push_back(f);
    for (double f : oracle::gldm(vox)) want.push_back(f);

    radiomics::RoiMaskSet rois;
    rois.add("region", m);
    const auto got = radiomics::extract_subject(v, rois).values;
    if (got.size() != radiomics::kFeaturesPerRoi) return {false, "extractor returned " + std::to_string(got.size())};
    for (std::size_t k = 0; k < got.size(); ++k) {
      worst = std::max(worst, std::abs(got[k] - want[k]) / std::max(1.0, std::abs(want[k])));
    }
  }
  return {worst <= 1e-9, "50 regions x 23 features, max error " + fmt(worst)};
}

// ---- 2 ----------------------------------------------------------------------

Tensor random_matrix(std::size_t r, std::size_t c, Rng& rng) {
  auto t = Tensor::matrix(r, c);
  for (auto& x : t.data()) x = numkit::standard_normal(rng);
  return t;
}

std::vector<std::string> roi_roster() {
  std::vector<std::string> names{"core"};
  for (int i = 0; i < 8; ++i) names.push_back("grid_" + std::to_string(i));
  return names;
}

FeatureSet random_set(std::size_t F, std::size_t k, Rng& rng) {
  return retrieval::sample_sets(F, k, 1, rng)[0];
}

// Relative-error threshold shared by every component; points whose smallest
// |ReLU pre-activation| is below kKinkMargin are redrawn.
constexpr double kGradTol = 1e-4;
constexpr double kKinkMargin = 1e-3;
constexpr int kPoints = 100;

double encoder_points(Rng& rng) {
  const auto table = radiomics::make_descriptor_table(roi_roster());
  double worst = 0.0;
  int done = 0;
  while (done < kPoints) {
    setenc::SetEncoder enc(setenc::EncoderConfig{}, rng);
    const auto z = random_matrix(1, table.size(), rng);
    const std::vector<std::vector<setenc::FeatureToken>> sets{
        setenc::tokenize(z.row_span(0), random_set(table.size(), 5, rng), table),
        setenc::tokenize(z.row_span(0), random_set(table.size(), 5, rng), table)};
    const Tensor proj = numkit::glorot_uniform(64, 1, rng);
    auto loss_on = [&](numkit::Tape& t, const std::vector<std::vector<setenc::FeatureToken>>& s, numkit::Var* leaf) {
      return numkit::mse(numkit::matmul(enc.encode(t, s, leaf), t.constant(proj)),
                         t.constant(Tensor::matrix(2, 1, 0.5)));
    };
    auto params = enc.parameters();
    numkit::zero_grads(params);
    numkit::Tape tape;
    numkit::Var leaf;
    tape.backward(loss_on(tape, sets, &leaf));
    if (tape.min_relu_margin() < kKinkMargin) continue;
    worst = std::max(worst, numkit::finite_difference_check(
                                [&] {
                                  numkit::Tape t;
                                  return t.value(loss_on(t, sets, nullptr)).item();
                                },
                                params, {.epsilon = 1e-5, .coordinates_per_parameter = 4, .seed = std::uint64_t(done)}));
    std::vector<double> point;
    for (const auto& s : sets)
      for (const auto& tok : s) point.push_back(tok.z);
    const Tensor zgrad = tape.grad(leaf);
    worst = std::max(worst, numkit::finite_difference_check(
                                [&](std::span<const double> p) {
                                  auto copy = sets;
                                  std::size_t pos = 0;
                                  for (auto& s : copy)
                                    for (auto& tok : s) tok.z = p[pos++];
                                  numkit::Tape t;
                                  return t.value(loss_on(t, copy, nullptr)).item();
                                },
                                point, zgrad.data(), 1e-6));
    ++done;
  }
  return worst;
}

double scorer_points(Rng& rng) {
  double worst = 0.0;
  int done = 0;
  while (done < kPoints) {
    scorer::Scorer s(scorer::ScorerConfig{}, rng);
    const Tensor raw = random_matrix(1, 128, rng);
    const Tensor emb = random_matrix(4, 64, rng);
    const Tensor target = random_matrix(4, 1, rng);
    auto loss_on = [&](numkit::Tape& t) {
      return numkit::mse(s.score(t, s.project_context(t, t.constant(raw)), t.constant(emb)), t.constant(target));
    };
    auto params = s.parameters();
    numkit::zero_grads(params);
    numkit::Tape tape;
    tape.backward(loss_on(tape));
    if (tape.min_relu_margin() < kKinkMargin) continue;
    worst = std::max(worst, numkit::finite_difference_check(
                                [&] {
                                  numkit::Tape t;
                                  return t.value(loss_on(t)).item();
                                },
                                params, {.epsilon = 1e-5, .coordinates_per_parameter = 4, .seed = std::uint64_t(done)}));
    ++done;
  }
  return worst;
}

double probe_points(Rng& rng) {
  double worst = 0.0;
  for (int p = 0; p < kPoints; ++p) {
    const std::size_t n = 8 + numkit::uniform_index(rng, 24), k = 1 + numkit::uniform_index(rng, 8);
    const int C = 2 + static_cast<int>(numkit::uniform_index(rng, 4));
    const Tensor x = random_matrix(n, k, rng);
    std::vector<int> y(n);
    for (auto& v : y) v = static_cast<int>(numkit::uniform_index(rng, static_cast<std::uint64_t>(C)));
    probe::ProbeParams q{random_matrix(k, C, rng), random_matrix(1, C, rng)};
    const auto g = probe::loss_and_grad(q, x, y);
    std::vector<double> point(q.w.data().begin(), q.w.data().end());
    point.insert(point.end(), q.b.data().begin(), q.b.data().end());
    std::vector<double> grad(g.grad_w.data().begin(), g.grad_w.data().end());
    grad.insert(grad.end(), g.grad_b.data().begin(), g.grad_b.data().end());
    worst = std::max(worst, numkit::finite_difference_check(
                                [&](std::span<const double> v) {
                                  probe::ProbeParams r{Tensor::matrix(k, C), Tensor::matrix(1, C)};
                                  std::copy(v.begin(), v.begin() + static_cast<long>(k * C), r.w.data().begin());
                                  std::copy(v.begin() + static_cast<long>(k * C), v.end(), r.b.data().begin());
                                  return probe::mean_cross_entropy(r, x, y);
                                },
                                point, grad, 1e-6));
  }
  return worst;
}

double classifier_points(Rng& rng) {
  double worst = 0.0;
  for (int p = 0; p < kPoints; ++p) {
    const std::size_t d = 2 + numkit::uniform_index(rng, 30), n = 4 + numkit::uniform_index(rng, 20);
    const int C = 2 + static_cast<int>(numkit::uniform_index(rng, 4));
    evalkit::Classifier head(d, C);
    for (auto& param : head.parameters()) {
      param.second->value = numkit::glorot_uniform(param.second->value.rows(), param.second->value.cols(), rng);
    }
    const Tensor x = random_matrix(n, d, rng);
    std::vector<int> y(n);
    for (auto& v : y) v = static_cast<int>(numkit::uniform_index(rng, static_cast<std::uint64_t>(C)));
    auto params = head.parameters();
    numkit::zero_grads(params);
    numkit::Tape tape;
    tape.backward(numkit::softmax_cross_entropy(head.logits(tape, tape.constant(x)), y));
    worst = std::max(worst, numkit::finite_difference_check(
                                [&] {
                                  numkit::Tape t;
                                  return t.value(numkit::softmax_cross_entropy(head.logits(t, t.constant(x)), y))
                                      .item();
                                },
                                params, {.epsilon = 1e-6, .coordinates_per_parameter = 0, .seed = 0}));
  }
  return worst;
}

Outcome gradient_integrity() {
  Rng rng(2);
  const double e = encoder_points(rng), s = scorer_points(rng), p = probe_points(rng), c = classifier_points(rng);
  const double worst = std::max({e, s, p, c});
  return {worst <= kGradTol, "max relative error: encoder " + fmt(e) + ", scorer " + fmt(s) + ", probe " + fmt(p) +
                                 ", classifier " + fmt(c) + " (100 points each)"};
}

// ---- 3 ----------------------------------------------------------------------

Outcome permutation_invariance() {
  const auto table = radiomics::make_descriptor_table(roi_roster());
  Rng rng(3);
  setenc::SetEncoder enc(setenc::EncoderConfig{}, rng);
  int mismatches = 0;
  for (int t = 0; t < 1000; ++t) {
    const auto z = random_matrix(1, table.size(), rng);
    const std::size_t k = 1 + numkit::uniform_index(rng, 30);
    auto tokens = setenc::tokenize(z.row_span(0), random_set(table.size(), k, rng), table);
    const Tensor base = enc.encode_value(tokens);
    numkit::shuffle(tokens, rng);
    const Tensor fast = enc.encode_value(tokens);
    numkit::Tape tape;
    const Tensor taped = tape.value(enc.encode(tape, {tokens}));
    for (std::size_t i = 0; i < base.size(); ++i) {
      if (base[i] != fast[i] || base[i] != taped[i]) {
        ++mismatches;
        break;
      }
    }
  }
  return {mismatches == 0, "1000 (set, permutation) pairs, " + std::to_string(mismatches) + " non-identical"};
}

// ---- 4 ----------------------------------------------------------------------

Outcome probe_exactness() {
  Rng rng(4);
  double worst_zero = 0.0;
  for (int C = 2; C <= 5; ++C) {
    for (int t = 0; t < 10; ++t) {
      const std::size_t n = 5 + numkit::uniform_index(rng, 30), k = 1 + numkit::uniform_index(rng, 25);
      const Tensor x = random_matrix(n, k, rng);
      std::vector<int> y(n);
      for (auto& v : y) v = static_cast<int>(numkit::uniform_index(rng, static_cast<std::uint64_t>(C)));
      const double r = probe::probe_reward(probe::ProbeParams::zeros(k, C), x, y);
      worst_zero = std::max(worst_zero, std::abs(r + std::log(static_cast<double>(C))));
    }
  }
  int monotone = 0;
  for (int t = 0; t < 50; ++t) {
    const std::size_t n = 6 + numkit::uniform_index(rng, 40), k = 1 + numkit::uniform_index(rng, 25);
    const int C = 2 + static_cast<int>(numkit::uniform_index(rng, 4));
    Tensor x = random_matrix(n, k, rng);
    const double scale = 0.2 + 4.0 * numkit::uniform01(rng);
    for (auto& v : x.data()) v *= scale;
    std::vector<int> y(n);
    for (std::size_t i = 0; i < n; ++i) y[i] = static_cast<int>(i % static_cast<std::size_t>(C));
    double prev = probe::mean_cross_entropy(probe::ProbeParams::zeros(k, C), x, y);
    bool ok = true;
    for (int steps = 1; steps <= 30 && ok; ++steps) {
      const double cur = probe::mean_cross_entropy(probe::fit_probe(x, y, C, {.steps = steps}), x, y);
      ok = cur <= prev;
      prev = cur;
    }
    monotone += ok ? 1 : 0;
  }
  return {worst_zero <= 1e-12 && monotone == 50, "zero-probe |R + ln C| max " + fmt(worst_zero) +
                                                     "; monotone descent on " + std::to_string(monotone) +
                                                     "/50 instances (30 steps)"};
}

// ---- 5 ----------------------------------------------------------------------

Outcome retrieval_oracle_equivalence() {
  const auto data = default_data(5);
  RetrievalConfig c;
  c.seed = 5;
  c.k = 3;
  c.subpool = retrieval::choose_subpool(data.data, 10, 5);
  c.p0 = 120;
  c.pool_m = 120;
  const auto rows = retrieval::audit_gaps(
      [&](std::size_t i) { return retrieval::subject_reward_fn(data, c, i); }, data, c, all_subjects(data));
  std::size_t zero = 0;
  double worst = 0.0;
  for (const auto& r : rows) {
    zero += r.gap == 0.0 ? 1 : 0;
    worst = std::max(worst, r.gap);
    if (r.rewards.size() != 120) return {false, "expected 120 enumerated sets"};
  }
  return {zero == rows.size(), std::to_string(zero) + "/" + std::to_string(rows.size()) +
                                   " subjects with gap 0 over C(10,3)=120 sets; max gap " + fmt(worst)};
}

// ---- 6 and 7 ----------------------------------------------------------------

std::vector<std::vector<double>> g_gap_lists;  // filled by criterion 6

Outcome learned_retrieval_quality() {
  // One cohort, three training seeds of a k=3 model on a 15-index audit
  // subpool; P0 and M clamp to C(15,3) = 455.
  const auto data = default_data(6);
  const auto subpool = retrieval::choose_subpool(data.data, 15, 6);
  std::vector<std::vector<double>> pct(data.data.size());
  g_gap_lists.clear();
  for (std::uint64_t seed : {1, 2, 3}) {
    RetrievalConfig c;
    c.seed = seed;
    c.k = 3;
    c.subpool = subpool;
    const auto model = retrieval::run_training(data, c).model;
    const auto rows = retrieval::audit_gaps(model, data, c, all_subjects(data));
    std::vector<double> gaps;
    for (std::size_t i = 0; i < rows.size(); ++i) {
      pct[i].push_back(rows[i].percentile);
      gaps.push_back(rows[i].gap);
    }
    g_gap_lists.push_back(std::move(gaps));
  }
  std::size_t good = 0;
  for (const auto& p : pct) good += median(p) >= 0.9 ? 1 : 0;
  const double frac = static_cast<double>(good) / static_cast<double>(pct.size());
  return {frac >= 0.8, std::to_string(good) + "/" + std::to_string(pct.size()) +
                           " subjects with median percentile >= 0.9 over 3 seeds (fraction " + fmt(frac) + ")"};
}

Outcome tail_integral_identity() {
  if (g_gap_lists.empty()) learned_retrieval_quality();
  double worst = 0.0;
  for (const auto& gaps : g_gap_lists) {
    const auto s = retrieval::gap_statistics(gaps);
    worst = std::max(worst, std::abs(s.mean - s.tail_integral));
  }
  return {!g_gap_lists.empty() && worst <= 1e-12,
          std::to_string(g_gap_lists.size()) + " gap lists, max |mean - tail integral| " + fmt(worst)};
}

// ---- 8 ----------------------------------------------------------------------

Outcome directional_reproduction() {
  int ours_vs_rs = 0, ours_vs_topk = 0;
  double bacc_sum = 0.0;
  std::ostringstream log;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const auto planted = default_data(seed);
    RetrievalConfig c;
    c.seed = seed;
    c.stage1_epochs = 20;
    c.stage2_epochs = 10;
    c.p0 = 1000;
    c.pool_m = 200;
    const auto model = retrieval::run_training(planted, c).model;
    const double ours = retrieval::evaluate_model(model, planted, c, planted.data.validation).report.balanced_accuracy;
    const double rs =
        evalkit::baseline_random_sets(planted.data, model.encoder, c.k, seed, {}, c.head).balanced_accuracy;
    ours_vs_rs += ours >= rs ? 1 : 0;
    bacc_sum += ours;

    const auto clone = default_data(seed, true);
    RetrievalConfig k3;
    k3.seed = seed;
    k3.k = 3;
    k3.stage1_epochs = 40;
    k3.stage2_epochs = 10;
    k3.p0 = 2000;
    k3.pool_m = 400;
    const auto clone_model = retrieval::run_training(clone, k3).model;
    const double ours3 =
        retrieval::evaluate_model(clone_model, clone, k3, clone.data.validation).report.balanced_accuracy;
    const double topk = evalkit::baseline_marginal_topk(clone.data, 3, seed, {}, k3.head).report.balanced_accuracy;
    ours_vs_topk += ours3 >= topk ? 1 : 0;
    log << "    seed " << seed << ": planted ours " << fmt(ours) << " RS " << fmt(rs) << " | clone ours@3 "
        << fmt(ours3) << " top-k@3 " << fmt(topk) << '\n';
  }
  std::fputs(log.str().c_str(), stdout);
  const double mean_bacc = bacc_sum / 20.0;
  const bool a = ours_vs_rs >= 16, b = ours_vs_topk >= 14, cc = mean_bacc >= 1.0 / 3.0 + 0.15;
  return {a && b && cc, "(a) ours >= RS in " + std::to_string(ours_vs_rs) + "/20 " + (a ? "ok" : "FAIL") +
                            "; (b) clone ours@3 >= top-k@3 in " + std::to_string(ours_vs_topk) + "/20 " +
                            (b ? "ok" : "FAIL") + "; (c) mean BAcc " + fmt(mean_bacc) + " vs 0.4833 " +
                            (cc ? "ok" : "FAIL")};
}

// ---- 9 ----------------------------------------------------------------------

Outcome ensembling_contract() {
  const auto data = default_data(9);
  RetrievalConfig c;
  c.seed = 9;
  c.stage1_epochs = 3;
  c.stage2_epochs = 2;
  c.p0 = 300;
  c.pool_m = 60;
  const auto model = retrieval::run_training(data, c).model;
  int same = 0;
  double worst = 0.0;
  for (std::size_t i = 0; i < 100; ++i) {
    const auto sel = retrieval::retrieve_subject(model, data, c, i).selection;
    const auto e = retrieval::SubjectScorer(model, data, i).embedding(sel.s_star);
    const auto one = evalkit::classify(e, model.classifier);
    const auto three = evalkit::ensemble_predict({e, e, e}, model.classifier);
    same += one.predicted == three.predicted ? 1 : 0;
    for (std::size_t k = 0; k < one.probabilities.size(); ++k) {
      worst = std::max(worst, std::abs(one.probabilities[k] - three.probabilities[k]));
    }
  }
  return {same == 100, std::to_string(same) + "/100 subjects keep their prediction; max probability change " +
                           fmt(worst)};
}

// ---- 10 ---------------------------------------------------------------------

Outcome metric_oracles() {
  std::ifstream in(std::string(STRV_TEST_DATA_DIR) + "/metric_cases.json");
  if (!in) return {false, "metric_cases.json missing"};
  const auto cases = nlohmann::json::parse(in);
  double worst_ref = 0.0, worst_text = 0.0;
  bool perfect = true;
  for (const auto& c : cases) {
    const auto y = c["labels"].get<std::vector<int>>();
    const auto pred = c["predictions"].get<std::vector<int>>();
    const auto prob = c["probabilities"].get<std::vector<std::vector<double>>>();
    const int C = c["num_classes"].get<int>();
    const auto r = evalkit::compute_metrics(y, pred, prob, C);
    const auto o = oracle::textbook_metrics(y, pred, prob, C);
    const double got[] = {r.accuracy, r.macro_f1, r.balanced_accuracy, r.auc_macro_ovr, r.qwk};
    const double ref[] = {c["accuracy"].get<double>(), c["macro_f1"].get<double>(),
                          c["balanced_accuracy"].get<double>(), c["auc_macro_ovr"].get<double>(),
                          c["qwk"].get<double>()};
    const double text[] = {o.accuracy, o.macro_f1, o.balanced_accuracy, o.auc, o.qwk};
    for (int m = 0; m < 5; ++m) {
      worst_ref = std::max(worst_ref, std::abs(got[m] - ref[m]));
      worst_text = std::max(worst_text, std::abs(got[m] - text[m]));
    }
    perfect = perfect && evalkit::compute_metrics(y, y, prob, C).qwk == 1.0;
  }
  return {cases.size() == 25 && worst_ref <= 1e-9 && worst_text <= 1e-9 && perfect,
          std::to_string(cases.size()) + " instances; max error vs reference " + fmt(worst_ref) +
              ", vs textbook formulas " + fmt(worst_text) + "; perfect-agreement QWK = 1: " +
              (perfect ? "yes" : "no")};
}

// ---- 11 ---------------------------------------------------------------------

int run_cli(std::vector<std::string> args) {
  args.insert(args.begin(), "strv");
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  if (code != 0) std::fprintf(stderr, "%s", err.str().c_str());
  return code;
}

Outcome end_to_end_determinism() {
  const auto root = fs::temp_directory_path() / "strv_acceptance_e2e";
  fs::remove_all(root);
  fs::create_directories(root);
  cli::write_file((root / "run.toml").string(),
                  "[retrieval]\nstage1_epochs = 10\nstage2_epochs = 3\np0 = 1000\npool_m = 200\n");
  std::vector<std::string> reports, selections;
  for (const char* name : {"a", "b"}) {
    const auto dir = root / name;
    const auto coh = (dir / "cohort").string(), run = (dir / "run").string();
    if (run_cli({"gen", "--subjects", "120", "--dims", "16x32x32", "--classes", "3", "--seed", "11", "--out", coh}) ||
        run_cli({"extract", "--cohort", coh}) ||
        run_cli({"train", "--cohort", coh, "--out", run, "--config", (root / "run.toml").string(), "--seed", "11"}) ||
        run_cli({"retrieve", "--cohort", coh, "--run", run}) || run_cli({"eval", "--cohort", coh, "--run", run})) {
      return {false, "pipeline command failed"};
    }
    reports.push_back(cli::read_file((dir / "run" / "eval" / "report.json").string()));
    selections.push_back(cli::read_file((dir / "run" / "selections.json").string()));
  }
  const auto ra = evalkit::parse_report_json(reports[0]), rb = evalkit::parse_report_json(reports[1]);
  const auto sa = cli::parse_selections_json(selections[0]), sb = cli::parse_selections_json(selections[1]);
  std::size_t same = 0;
  for (std::size_t i = 0; i < std::min(sa.subjects.size(), sb.subjects.size()); ++i) {
    same += sa.subjects[i].s_star == sb.subjects[i].s_star ? 1 : 0;
  }
  const bool ok = ra == rb && reports[0] == reports[1] && sa.subjects.size() == 120 && same == 120;
  return {ok, std::string("EvalReports ") + (ra == rb ? "identical" : "differ") + "; S* identical for " +
                  std::to_string(same) + "/" + std::to_string(sa.subjects.size()) + " subjects"};
}

struct Criterion {
  int id;
  const char* title;
  double budget_seconds;
  std::function<Outcome()> run;
};

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> criteria{
      {1, "radiomics oracle equivalence", 10, radiomics_oracle},
      {2, "gradient integrity", 60, gradient_integrity},
      {3, "permutation invariance", 5, permutation_invariance},
      {4, "probe exactness", 0, probe_exactness},
      {5, "retrieval-oracle equivalence", 30, retrieval_oracle_equivalence},
      {6, "learned-retrieval quality", 15 * 60, learned_retrieval_quality},
      {7, "tail-integral identity", 0, tail_integral_identity},
      {8, "directional reproduction", 30 * 60, directional_reproduction},
      {9, "ensembling contract", 0, ensembling_contract},
      {10, "metric oracles", 0, metric_oracles},
      {11, "end-to-end determinism", 0, end_to_end_determinism},
  };
  std::set<int> wanted;
  for (int a = 1; a < argc; ++a) wanted.insert(std::atoi(argv[a]));

  int failed = 0;
  for (const auto& c : criteria) {
    if (!wanted.empty() && !wanted.count(c.id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::string timing = fmt(secs) + " s";
    if (c.budget_seconds > 0) {
      const bool in_time = secs < c.budget_seconds;
      timing += in_time ? " (< " + fmt(c.budget_seconds) + " s)" : " (budget " + fmt(c.budget_seconds) + " s exceeded)";
      o.pass = o.pass && in_time;
    }
    failed += o.pass ? 0 : 1;
    std::printf("criterion %2d %-30s %s  %s; %s\n", c.id, c.title, o.pass ? "PASS" : "FAIL", o.detail.c_str(),
                timing.c_str());
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
