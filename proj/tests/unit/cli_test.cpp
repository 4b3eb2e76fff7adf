#include <gtest/gtest.h>

#include <filesystem>
#include <json.hpp>
#include <numeric>
#include <sstream>

#include "strv/cli/app.hpp"
#include "strv/cli/artifacts.hpp"
#include "strv/cli/config.hpp"
#include "strv/cli/evidence.hpp"
#include "strv/errors.hpp"

using namespace strv;
using namespace strv::cli;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  int code;
  std::string out, err;
};

Outcome invoke(std::vector<std::string> args) {
  args.insert(args.begin(), "strv");
  std::ostringstream out, err;
  const int code = run(args, out, err);
  return {code, out.str(), err.str()};
}

fs::path scratch(const std::string& name) {
  const auto p = fs::temp_directory_path() / "strv_cli_test" / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

const char* kSmallConfig = R"(# small run
[retrieval]
k = 3
stage1_epochs = 2
stage1_sets = 6
stage2_epochs = 2
p0 = 60
pool_m = 20
q = 4
n_support = 12
n_query = 12
subpool_size = 12
)";

// gen -> extract -> train -> retrieve -> eval inside `root`.
void pipeline(const fs::path& root) {
  write_file((root / "small.toml").string(), kSmallConfig);
  const auto coh = (root / "coh").string(), run_dir = (root / "run").string();
  const auto small = (root / "small.toml").string();
  ASSERT_EQ(invoke({"gen", "--subjects", "60", "--dims", "8x16x16", "--classes", "3", "--seed", "7", "--out", coh})
                .code,
            0);
  ASSERT_EQ(invoke({"extract", "--cohort", coh}).code, 0);
  ASSERT_EQ(invoke({"train", "--cohort", coh, "--out", run_dir, "--config", small, "--seed", "3"}).code, 0);
  ASSERT_EQ(invoke({"retrieve", "--cohort", coh, "--run", run_dir}).code, 0);
  ASSERT_EQ(invoke({"eval", "--cohort", coh, "--run", run_dir}).code, 0);
}

const fs::path& pipeline_root() {
  static const fs::path root = [] {
    auto r = scratch("pipeline");
    pipeline(r);
    return r;
  }();
  return root;
}

}  // namespace

TEST(ConfigFile, SectionsCommentsAndQuotes) {
  const auto f = ConfigFile::parse(
      "top = 1\n[cohort]\nsubjects = 120  # trailing\ndims = \"16x32x32\"\nname = \"a # b\"\n\n[retrieval]\n"
      "subpool = [3, 1, 4]\nrefit_head = false\nlambda_scr = 0.5\n");
  EXPECT_EQ(*f.get_int("top"), 1);
  EXPECT_EQ(*f.get_uint("cohort.subjects"), 120u);
  EXPECT_EQ(*f.get("cohort.dims"), "16x32x32");
  EXPECT_EQ(*f.get("cohort.name"), "a # b");
  EXPECT_EQ(*f.get_index_list("retrieval.subpool"), (std::vector<std::size_t>{3, 1, 4}));
  EXPECT_FALSE(*f.get_bool("retrieval.refit_head"));
  EXPECT_EQ(*f.get_double("retrieval.lambda_scr"), 0.5);
  EXPECT_FALSE(f.get("retrieval.k").has_value());
  EXPECT_EQ(ConfigFile::parse(f.to_text()).values(), f.values());
}

TEST(ConfigFile, Errors) {
  EXPECT_THROW(ConfigFile::parse("[cohort\nx = 1"), ConfigError);
  EXPECT_THROW(ConfigFile::parse("[]"), ConfigError);
  EXPECT_THROW(ConfigFile::parse("novalue"), ConfigError);
  EXPECT_THROW(ConfigFile::parse(" = 3"), ConfigError);
  const auto f = ConfigFile::parse("[r]\nk = 2.5\nb = maybe\nlist = 1, x");
  EXPECT_THROW(f.get_uint("r.k"), ConfigError);
  EXPECT_THROW(f.get_bool("r.b"), ConfigError);
  EXPECT_THROW(f.get_index_list("r.list"), ConfigError);
  try {
    f.get_uint("r.k");
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("r.k"), std::string::npos);
  }
  EXPECT_THROW(ConfigFile::load("/nonexistent/strv.toml"), IoError);
}

TEST(ConfigFile, RetrievalSectionRoundTrip) {
  retrieval::RetrievalConfig c;
  c.k = 7;
  c.p0 = 123;
  c.pool_m = 45;
  c.q = 6;
  c.probe_steps = 4;
  c.lambda_scr = 0.1;
  c.learning_rate = 1e-3 / 3.0;
  c.refit_head = false;
  c.seed = 99;
  c.subpool = {2, 4, 8, 16};
  c.head.l2 = 0.2;
  const auto back = apply_retrieval_section(ConfigFile::parse(retrieval_section(c).to_text()), {});
  EXPECT_EQ(back.k, 7u);
  EXPECT_EQ(back.p0, 123u);
  EXPECT_EQ(back.pool_m, 45u);
  EXPECT_EQ(back.q, 6u);
  EXPECT_EQ(back.probe_steps, 4);
  EXPECT_EQ(back.lambda_scr, 0.1);
  EXPECT_EQ(back.learning_rate, c.learning_rate);
  EXPECT_FALSE(back.refit_head);
  EXPECT_EQ(back.seed, 99u);
  EXPECT_EQ(back.subpool, c.subpool);
  EXPECT_EQ(back.head.l2, 0.2);
}

TEST(Evidence, DirectionThresholds) {
  EXPECT_EQ(direction_of(1.0), Direction::Neutral);
  EXPECT_EQ(direction_of(1.0000001), Direction::High);
  EXPECT_EQ(direction_of(-1.0), Direction::Neutral);
  EXPECT_EQ(direction_of(-1.5), Direction::Low);
  EXPECT_EQ(direction_of(0.0), Direction::Neutral);
  for (auto d : {Direction::High, Direction::Low, Direction::Neutral}) {
    EXPECT_EQ(parse_direction(direction_name(d)), d);
  }
  EXPECT_THROW(parse_direction("up"), FormatError);
}

TEST(Evidence, RanksByAbsoluteZAndCountsRois) {
  const std::vector<std::string> rois{"core", "left", "right"};
  const auto table = radiomics::make_descriptor_table(rois);
  std::vector<double> z(table.size(), 0.0), raw(table.size());
  std::iota(raw.begin(), raw.end(), 100.0);
  z[3] = 0.5;
  z[30] = -2.0;
  z[50] = 2.0;
  z[60] = 1.2;
  const auto pred = evalkit::from_logits({0.0, 1.0});
  const auto r = make_evidence_report("s007", 1, pred, {3, 30, 50, 60}, raw, z, table, rois);
  ASSERT_EQ(r.entries.size(), 4u);
  EXPECT_EQ(r.entries[0].index, 30u);  // |z| tie broken by index
  EXPECT_EQ(r.entries[1].index, 50u);
  EXPECT_EQ(r.entries[2].index, 60u);
  EXPECT_EQ(r.entries[3].index, 3u);
  EXPECT_EQ(r.entries[0].direction, Direction::Low);
  EXPECT_EQ(r.entries[1].direction, Direction::High);
  EXPECT_EQ(r.entries[3].direction, Direction::Neutral);
  EXPECT_EQ(r.entries[0].raw, 130.0);
  EXPECT_EQ(r.entries[0].roi, "left");
  for (std::size_t j = 0; j < 4; ++j) EXPECT_EQ(r.entries[j].rank, j + 1);
  EXPECT_EQ(r.roi_counts, (std::vector<std::pair<std::string, std::size_t>>{{"core", 1}, {"left", 1}, {"right", 2}}));
  EXPECT_EQ(r.predicted, 1);
  EXPECT_EQ(parse_evidence_json(evidence_json(r)), r);
  EXPECT_NE(evidence_text(r).find("right"), std::string::npos);
  EXPECT_THROW(make_evidence_report("s", 0, pred, {3}, raw, std::vector<double>(3), table, rois), ContractViolation);
}

TEST(Artifacts, PoolScoresAndSelectionsRoundTrip) {
  retrieval::CandidatePool p;
  p.subject_id = "s000";
  p.sets = {{1, 2, 3}, {0, 4, 9}};
  p.scores = {0.1 / 3.0, -1e-17};
  const auto rows = parse_pool_scores_csv(pool_scores_csv({p, p}));
  ASSERT_EQ(rows.size(), 4u);
  EXPECT_EQ(rows[1].rank, 2u);
  EXPECT_EQ(rows[1].set, (retrieval::FeatureSet{0, 4, 9}));
  EXPECT_EQ(rows[0].score, 0.1 / 3.0);
  EXPECT_EQ(rows[1].score, -1e-17);
  EXPECT_THROW(parse_pool_scores_csv("id,rank\n"), FormatError);
  EXPECT_THROW(parse_pool_scores_csv("subject_id,rank,score,set\ns0,x,1,2;3\n"), FormatError);

  SelectionFile f;
  f.k = 2;
  f.roi_names = {"a", "b"};
  f.subjects.push_back({"s000", "train", {1, 5}, 0.25, {{1, 5}, {2, 5}}, {"a", "b"}});
  EXPECT_EQ(parse_selections_json(selections_json(f)), f);
  EXPECT_THROW(parse_selections_json("{\"k\": 2}"), FormatError);
}

TEST(Artifacts, HistogramCountsSumAndMarkTop) {
  std::vector<PoolScoreRow> rows;
  for (int j = 0; j < 37; ++j) rows.push_back({"a", static_cast<std::size_t>(j + 1), std::sin(j * 0.7), {}});
  for (int j = 0; j < 5; ++j) rows.push_back({"b", static_cast<std::size_t>(j + 1), 2.0, {}});
  std::istringstream in(score_histogram_csv(rows, 8));
  std::string line;
  std::getline(in, line);
  std::map<std::string, std::size_t> counts, tops, bins;
  while (std::getline(in, line)) {
    std::vector<std::string> f;
    std::istringstream ls(line);
    std::string tok;
    while (std::getline(ls, tok, ',')) f.push_back(tok);
    ASSERT_EQ(f.size(), 5u);
    counts[f[0]] += std::stoul(f[3]);
    tops[f[0]] += std::stoul(f[4]);
    ++bins[f[0]];
    if (f[4] == "1") {
      EXPECT_GT(std::stoul(f[3]), 0u);
    }
  }
  EXPECT_EQ(counts["a"], 37u);
  EXPECT_EQ(counts["b"], 5u);
  EXPECT_EQ(tops["a"], 1u);
  EXPECT_EQ(tops["b"], 1u);
  EXPECT_EQ(bins["a"], 8u);
  EXPECT_THROW(score_histogram_csv(rows, 0), ConfigError);
}

TEST(Cli, UsageErrorsExitTwoWithHelp) {
  auto r = invoke({"gen", "--bogus", "1", "--out", "x"});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("--subjects"), std::string::npos);
  EXPECT_EQ(invoke({}).code, 2);
  EXPECT_EQ(invoke({"frobnicate"}).code, 2);
  EXPECT_EQ(invoke({"train", "--cohort", "c"}).code, 2);  // --out is required
  EXPECT_EQ(invoke({"export-plots", "--run", "r", "--bins", "0"}).code, 2);
  r = invoke({"--help"});
  EXPECT_EQ(r.code, 0);
  EXPECT_NE(r.out.find("export-plots"), std::string::npos);
}

TEST(Cli, MissingInputsExitOneNamingThePath) {
  const auto dir = scratch("missing");
  const auto ghost = (dir / "ghost").string();
  auto r = invoke({"train", "--cohort", ghost, "--out", (dir / "run").string()});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find(ghost), std::string::npos);
  r = invoke({"export-plots", "--run", dir.string()});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("history.jsonl"), std::string::npos);
  r = invoke({"gen", "--out", (dir / "c").string(), "--config", (dir / "none.toml").string()});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("none.toml"), std::string::npos);
  r = invoke({"gen", "--out", (dir / "c").string(), "--dims", "8x8"});
  EXPECT_EQ(r.code, 1);
}

TEST(Cli, UnextractedCohortIsDomainError) {
  const auto dir = scratch("raw");
  ASSERT_EQ(invoke({"gen", "--subjects", "12", "--dims", "8x16x16", "--out", (dir / "c").string()}).code, 0);
  EXPECT_TRUE(fs::exists(dir / "c" / "manifest.json"));
  const auto r = invoke({"train", "--cohort", (dir / "c").string(), "--out", (dir / "run").string()});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("extract"), std::string::npos);
}

TEST(Cli, PipelineWritesDeclaredArtifacts) {
  const auto& root = pipeline_root();
  for (const char* f : {"coh/manifest.json", "coh/features.csv", "coh/descriptors.json", "run/config.toml",
                        "run/stage1.ckpt", "run/final.ckpt", "run/history.jsonl", "run/selections.json",
                        "run/pool_scores.csv", "run/eval/report.json", "run/eval/confusion.csv",
                        "run/eval/predictions.csv", "run/eval/table.txt"}) {
    EXPECT_TRUE(fs::exists(root / f)) << f;
  }
  const auto cfg = ConfigFile::load((root / "run" / "config.toml").string());
  EXPECT_EQ(*cfg.get_uint("retrieval.k"), 3u);
  EXPECT_EQ(*cfg.get_uint("retrieval.seed"), 3u);
  EXPECT_EQ(cfg.get_index_list("retrieval.subpool")->size(), 12u);

  const auto sel = parse_selections_json(read_file((root / "run" / "selections.json").string()));
  EXPECT_EQ(sel.subjects.size(), 60u);
  EXPECT_EQ(sel.roi_names.size(), 9u);
  const auto report = evalkit::parse_report_json(read_file((root / "run" / "eval" / "report.json").string()));
  EXPECT_EQ(report.k, 3u);
  const auto descriptors =
      radiomics::parse_descriptor_table_json(read_file((root / "coh" / "descriptors.json").string()));
  EXPECT_EQ(descriptors.size(), 207u);
}

TEST(Cli, PipelineIsDeterministic) {
  const auto& a = pipeline_root();
  const auto b = scratch("pipeline_again");
  pipeline(b);
  for (const char* f : {"run/eval/report.json", "run/selections.json", "run/pool_scores.csv", "run/history.jsonl",
                        "coh/features.csv"}) {
    EXPECT_EQ(read_file((a / f).string()), read_file((b / f).string())) << f;
  }
}

TEST(Cli, OracleWritesRewardListPerSubject) {
  const auto& root = pipeline_root();
  const auto out = root / "oracle";
  const auto r = invoke({"oracle", "--cohort", (root / "coh").string(), "--subpool", "10", "--k", "3", "--config",
                      (root / "small.toml").string(), "--p0", "120", "--pool-m", "120", "--out", out.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  std::istringstream rewards(read_file((out / "rewards.csv").string()));
  std::string line;
  std::getline(rewards, line);
  EXPECT_EQ(line, "subject_id,set,reward");
  std::map<std::string, std::size_t> per_subject;
  while (std::getline(rewards, line)) ++per_subject[line.substr(0, line.find(','))];
  EXPECT_EQ(per_subject.size(), 60u);
  for (const auto& [id, n] : per_subject) EXPECT_EQ(n, 120u) << id;
  const auto stats = nlohmann::json::parse(read_file((out / "gap_stats.json").string()));
  EXPECT_EQ(stats["sets_per_subject"].get<std::size_t>(), 120u);
  EXPECT_EQ(stats["mean_gap"].get<double>(), 0.0);  // the reward scores itself over every set
  EXPECT_EQ(stats["scorer"].get<std::string>(), "reward-oracle");

  const auto list = invoke({"oracle", "--cohort", (root / "coh").string(), "--subpool", "0,1,2,3,4", "--k", "2",
                         "--config", (root / "small.toml").string(), "--out", (root / "oracle5").string()});
  ASSERT_EQ(list.code, 0) << list.err;
  const auto s5 = nlohmann::json::parse(read_file((root / "oracle5" / "gap_stats.json").string()));
  EXPECT_EQ(s5["sets_per_subject"].get<std::size_t>(), 10u);
}

TEST(Cli, OracleWithTrainedModel) {
  const auto& root = pipeline_root();
  const auto r = invoke({"oracle", "--cohort", (root / "coh").string(), "--run", (root / "run").string(), "--out",
                      (root / "oracle_model").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto stats = nlohmann::json::parse(read_file((root / "oracle_model" / "gap_stats.json").string()));
  EXPECT_EQ(stats["sets_per_subject"].get<std::size_t>(), 220u);  // C(12, 3)
  EXPECT_EQ(stats["scorer"].get<std::string>(), "model");
  const auto mismatch = invoke({"oracle", "--cohort", (root / "coh").string(), "--run", (root / "run").string(),
                             "--subpool", "10", "--out", (root / "oracle_bad").string()});
  EXPECT_EQ(mismatch.code, 1);
}

TEST(Cli, ReportHasKEntriesAndRoiHistogram) {
  const auto& root = pipeline_root();
  const auto path = root / "reports" / "s001.json";
  const auto r = invoke({"report", "--cohort", (root / "coh").string(), "--run", (root / "run").string(), "--subject",
                      "s001", "--out", path.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto ev = parse_evidence_json(read_file(path.string()));
  EXPECT_EQ(ev.subject_id, "s001");
  EXPECT_EQ(ev.entries.size(), 3u);
  EXPECT_EQ(ev.roi_counts.size(), 9u);
  std::size_t total = 0;
  for (const auto& [roi, n] : ev.roi_counts) total += n;
  EXPECT_EQ(total, 3u);
  for (std::size_t j = 1; j < ev.entries.size(); ++j) {
    EXPECT_GE(std::abs(ev.entries[j - 1].z), std::abs(ev.entries[j].z));
  }
  EXPECT_TRUE(fs::exists(root / "reports" / "s001.txt"));
  EXPECT_NEAR(std::accumulate(ev.probabilities.begin(), ev.probabilities.end(), 0.0), 1.0, 1e-12);

  const auto stdout_json = invoke({"report", "--cohort", (root / "coh").string(), "--run", (root / "run").string(),
                                "--subject", "s001"});
  EXPECT_EQ(parse_evidence_json(stdout_json.out), ev);
  EXPECT_EQ(invoke({"report", "--cohort", (root / "coh").string(), "--run", (root / "run").string(), "--subject",
                 "s999"})
                .code,
            1);
}

TEST(Cli, ExportPlotsMatchesArtifacts) {
  const auto& root = pipeline_root();
  const auto run_dir = root / "run";
  ASSERT_EQ(invoke({"export-plots", "--run", run_dir.string(), "--bins", "10"}).code, 0);
  const auto history = retrieval::parse_history_jsonl(read_file((run_dir / "history.jsonl").string()));
  auto lines = [](const std::string& text) {
    std::vector<std::string> v;
    std::istringstream in(text);
    std::string l;
    while (std::getline(in, l)) v.push_back(l);
    return v;
  };
  const auto curves = lines(read_file((run_dir / "plots" / "training_curves.csv").string()));
  EXPECT_EQ(curves.size(), 1 + history.size());
  EXPECT_EQ(history.size(), 4u);  // 2 + 2 epochs

  const auto roi = lines(read_file((run_dir / "plots" / "roi_counts.csv").string()));
  std::map<std::string, std::size_t> per_subject;
  for (std::size_t j = 1; j < roi.size(); ++j) {
    const auto c1 = roi[j].find(','), c2 = roi[j].rfind(',');
    per_subject[roi[j].substr(0, c1)] += std::stoul(roi[j].substr(c2 + 1));
  }
  EXPECT_EQ(per_subject.size(), 60u);
  for (const auto& [id, n] : per_subject) EXPECT_EQ(n, 3u) << id;

  const auto hist = lines(read_file((run_dir / "plots" / "score_histogram.csv").string()));
  const auto pool = parse_pool_scores_csv(read_file((run_dir / "pool_scores.csv").string()));
  std::size_t counted = 0;
  for (std::size_t j = 1; j < hist.size(); ++j) {
    const auto parts = lines([&] {
      auto s = hist[j];
      std::replace(s.begin(), s.end(), ',', '\n');
      return s;
    }());
    counted += std::stoul(parts[3]);
  }
  EXPECT_EQ(counted, pool.size());
  EXPECT_EQ(hist.size(), 1 + 60 * 10u);
}

TEST(Cli, ResumeMatchesUninterruptedRun) {
  const auto& root = pipeline_root();
  const auto copy = scratch("resume") / "run";
  fs::create_directories(copy);
  for (const char* f : {"config.toml", "stage1.ckpt", "history.jsonl"}) fs::copy_file(root / "run" / f, copy / f);
  const auto r = invoke({"train", "--cohort", (root / "coh").string(), "--out", copy.string(), "--resume"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(read_file((copy / "final.ckpt").string()), read_file((root / "run" / "final.ckpt").string()));
  EXPECT_EQ(read_file((copy / "history.jsonl").string()), read_file((root / "run" / "history.jsonl").string()));
}
