#include "strv/cli/app.hpp"

#include <CLI11.hpp>
#include <algorithm>
#include <filesystem>
#include <iostream>
#include <json.hpp>
#include <optional>
#include <sstream>

#include "strv/cli/artifacts.hpp"
#include "strv/cli/evidence.hpp"
#include "strv/cohort/cohort.hpp"
#include "strv/errors.hpp"
#include "strv/evalkit/baselines.hpp"

namespace strv::cli {

namespace fs = std::filesystem;
using json = nlohmann::json;
using retrieval::RetrievalConfig;

namespace {

std::string join_indices(const std::vector<std::size_t>& v) {
  std::string s = "[";
  for (std::size_t j = 0; j < v.size(); ++j) s += (j ? ", " : "") + std::to_string(v[j]);
  return s + "]";
}

template <class T>
std::string num(T v) {
  std::ostringstream s;
  s.precision(17);
  s << v;
  return s.str();
}

}  // namespace

RetrievalConfig apply_retrieval_section(const ConfigFile& f, RetrievalConfig c) {
  auto size = [&](const char* key, std::size_t& dst) {
    if (auto v = f.get_uint(std::string("retrieval.") + key)) dst = static_cast<std::size_t>(*v);
  };
  size("k", c.k);
  size("p0", c.p0);
  size("pool_m", c.pool_m);
  size("q", c.q);
  size("stage1_epochs", c.stage1_epochs);
  size("stage1_sets", c.stage1_sets);
  size("stage2_epochs", c.stage2_epochs);
  size("batch_size", c.batch_size);
  size("n_support", c.n_support);
  size("n_query", c.n_query);
  size("ensemble", c.ensemble_size);
  size("head_epochs", c.head.epochs);
  size("embedding_dim", c.encoder.embedding_dim);
  size("encoder_hidden", c.encoder.hidden);
  size("context_dim", c.scorer.context_dim);
  size("scorer_hidden", c.scorer.hidden);
  c.scorer.embedding_dim = c.encoder.embedding_dim;
  if (auto v = f.get_int("retrieval.psteps")) c.probe_steps = static_cast<int>(*v);
  if (auto v = f.get_double("retrieval.lambda_scr")) c.lambda_scr = *v;
  if (auto v = f.get_double("retrieval.learning_rate")) c.learning_rate = *v;
  if (auto v = f.get_double("retrieval.head_lr")) c.head.learning_rate = *v;
  if (auto v = f.get_double("retrieval.head_l2")) c.head.l2 = *v;
  if (auto v = f.get_bool("retrieval.refit_head")) c.refit_head = *v;
  if (auto v = f.get_uint("retrieval.seed")) c.seed = *v;
  if (auto v = f.get_index_list("retrieval.subpool")) c.subpool = *v;
  return c;
}

ConfigFile retrieval_section(const RetrievalConfig& c) {
  ConfigFile f;
  auto put = [&](const char* key, const std::string& v) { f.set(std::string("retrieval.") + key, v); };
  put("k", num(c.k));
  put("p0", num(c.p0));
  put("pool_m", num(c.pool_m));
  put("q", num(c.q));
  put("psteps", num(c.probe_steps));
  put("lambda_scr", num(c.lambda_scr));
  put("learning_rate", num(c.learning_rate));
  put("stage1_epochs", num(c.stage1_epochs));
  put("stage1_sets", num(c.stage1_sets));
  put("stage2_epochs", num(c.stage2_epochs));
  put("batch_size", num(c.batch_size));
  put("n_support", num(c.n_support));
  put("n_query", num(c.n_query));
  put("ensemble", num(c.ensemble_size));
  put("refit_head", c.refit_head ? "true" : "false");
  put("head_epochs", num(c.head.epochs));
  put("head_lr", num(c.head.learning_rate));
  put("head_l2", num(c.head.l2));
  put("embedding_dim", num(c.encoder.embedding_dim));
  put("encoder_hidden", num(c.encoder.hidden));
  put("context_dim", num(c.scorer.context_dim));
  put("scorer_hidden", num(c.scorer.hidden));
  put("seed", num(c.seed));
  put("subpool", join_indices(c.subpool));
  return f;
}

namespace {

// Flags shared by every command that consumes a retrieval configuration.
struct RetrievalFlags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> k, p0, pool_m, q;
  std::optional<int> psteps;
  std::optional<double> lambda_scr;
  std::optional<std::string> subpool;  // count or comma-separated list
};

void add_retrieval_flags(CLI::App* app, RetrievalFlags& f, bool with_subpool) {
  app->add_option("--config", f.config, "Config file ([retrieval] section)");
  app->add_option("--seed", f.seed, "Retrieval seed");
  app->add_option("--k", f.k, "Feature-set size");
  app->add_option("--p0", f.p0, "Candidates sampled per subject");
  app->add_option("--pool-m", f.pool_m, "Candidates kept after scoring");
  app->add_option("--q", f.q, "Supervised pool members per subject");
  app->add_option("--psteps", f.psteps, "Probe gradient steps");
  app->add_option("--lambda-scr", f.lambda_scr, "Weight of the scorer loss");
  if (with_subpool) app->add_option("--subpool", f.subpool, "Subpool size or comma-separated feature indices");
}

void require_exists(const fs::path& p) {
  if (!fs::exists(p)) throw IoError("missing input: " + p.string());
}

struct LoadedCohort {
  cohort::Cohort cohort;
  retrieval::TrainingData data;
};

LoadedCohort load_extracted(const std::string& dir) {
  require_exists(fs::path(dir) / "manifest.json");
  LoadedCohort l{cohort::load_cohort(dir), {}};
  if (l.cohort.manifest.norm.empty()) {
    throw ConfigError("cohort " + dir + " has no normalized features; run extract first");
  }
  l.data = retrieval::make_training_data(l.cohort);
  return l;
}

// Defaults < <run>/config.toml < --config < flags; then the subpool is made
// concrete.
RetrievalConfig resolve_config(const RetrievalFlags& f, const std::string& run_dir, RetrievalConfig base,
                               const cohort::Dataset& data) {
  std::optional<std::size_t> subpool_size;
  auto overlay = [&](const ConfigFile& file) {
    base = apply_retrieval_section(file, base);
    if (file.has("retrieval.subpool")) {
      subpool_size.reset();
    } else if (auto n = file.get_uint("retrieval.subpool_size")) {
      subpool_size = static_cast<std::size_t>(*n);
    }
  };
  if (!run_dir.empty() && fs::exists(fs::path(run_dir) / "config.toml")) {
    overlay(ConfigFile::load((fs::path(run_dir) / "config.toml").string()));
  }
  if (!f.config.empty()) {
    require_exists(f.config);
    overlay(ConfigFile::load(f.config));
  }
  if (f.seed) base.seed = *f.seed;
  if (f.k) base.k = *f.k;
  if (f.p0) base.p0 = *f.p0;
  if (f.pool_m) base.pool_m = *f.pool_m;
  if (f.q) base.q = *f.q;
  if (f.psteps) base.probe_steps = *f.psteps;
  if (f.lambda_scr) base.lambda_scr = *f.lambda_scr;
  if (f.subpool) {
    const auto file = ConfigFile::parse("subpool = " + *f.subpool, "--subpool");
    const auto list = *file.get_index_list("subpool");
    if (list.size() == 1 && f.subpool->find(',') == std::string::npos) {
      subpool_size = list[0];
    } else {
      base.subpool = list;
      subpool_size.reset();
    }
  }
  if (subpool_size) base.subpool = retrieval::choose_subpool(data, *subpool_size, base.seed);
  retrieval::validate(base, data.pool_size());
  return base;
}

std::string split_name(const cohort::Cohort& c, std::size_t i) {
  return c.manifest.splits.at(i) == cohort::Split::Train ? "train" : "validation";
}

// ---- commands -------------------------------------------------------------

struct GenArgs {
  std::string config, out;
  std::optional<std::string> dims;
  std::optional<std::size_t> subjects;
  std::optional<int> classes;
  std::optional<std::uint64_t> seed;
  std::optional<double> magnitude;
};

int cmd_gen(const GenArgs& a, std::ostream& out) {
  cohort::GenerateOptions o;
  double magnitude = 1.0;
  std::string dims = radiomics::to_string(o.dims);
  if (!a.config.empty()) {
    require_exists(a.config);
    const auto f = ConfigFile::load(a.config);
    if (auto v = f.get_uint("cohort.subjects")) o.n_subjects = *v;
    if (auto v = f.get_int("cohort.classes")) o.num_classes = static_cast<int>(*v);
    if (auto v = f.get_uint("cohort.seed")) o.seed = *v;
    if (auto v = f.get_double("cohort.magnitude")) magnitude = *v;
    if (auto v = f.get_double("cohort.jitter")) o.magnitude_jitter = *v;
    if (auto v = f.get("cohort.dims")) dims = *v;
  }
  if (a.subjects) o.n_subjects = *a.subjects;
  if (a.classes) o.num_classes = *a.classes;
  if (a.seed) o.seed = *a.seed;
  if (a.magnitude) magnitude = *a.magnitude;
  if (a.dims) dims = *a.dims;
  o.dims = radiomics::parse_dims(dims);
  auto plants = cohort::default_plant_spec(o.num_classes);
  for (auto& p : plants) p.magnitude *= magnitude;
  o.plants = plants;
  const auto c = cohort::generate_cohort(o);
  cohort::save_cohort(c, a.out);
  out << "generated " << c.size() << " subjects (" << radiomics::to_string(o.dims) << ", " << o.num_classes
      << " classes) in " << a.out << '\n';
  return kExitOk;
}

struct ExtractArgs {
  std::string cohort, out;
  double train_fraction = 0.7;
  std::optional<std::uint64_t> seed;
  bool clone = false;
};

std::string wide_feature_csv(const cohort::Cohort& c) {
  std::ostringstream s;
  s.precision(17);
  s << "subject_id,label,split";
  for (std::size_t f = 0; f < c.manifest.pool_size(); ++f) s << ",f" << f;
  s << '\n';
  for (std::size_t i = 0; i < c.size(); ++i) {
    const auto& sub = c.subjects[i];
    s << sub.subject_id << ',' << sub.label << ',' << split_name(c, i);
    for (double v : sub.features->values) s << ',' << v;
    s << '\n';
  }
  return s.str();
}

int cmd_extract(const ExtractArgs& a, std::ostream& out) {
  require_exists(fs::path(a.cohort) / "manifest.json");
  auto c = cohort::load_cohort(a.cohort);
  const auto seed = a.seed.value_or(c.manifest.seed);
  cohort::extract_features(c);
  if (a.clone) cohort::apply_clone_transform(c, cohort::default_clone_spec(c.manifest.pool_size()), seed);
  cohort::split(c, a.train_fraction, 1.0 - a.train_fraction, seed);
  cohort::compute_norm_stats(c);
  const auto dir = a.out.empty() ? a.cohort : a.out;
  cohort::save_cohort(c, dir);
  write_file((fs::path(dir) / "features.csv").string(), wide_feature_csv(c));
  write_file((fs::path(dir) / "descriptors.json").string(), radiomics::descriptor_table_json(c.manifest.descriptors));
  out << "extracted " << c.manifest.pool_size() << " features for " << c.size() << " subjects into " << dir << '\n';
  return kExitOk;
}

struct RunArgs {
  std::string cohort, run, out;
  bool resume = false;
  bool baselines = false;
  std::string subject;
  bool text = false;
  std::size_t bins = 20;
  RetrievalFlags flags;
};

int cmd_train(const RunArgs& a, std::ostream& out) {
  const auto l = load_extracted(a.cohort);
  const auto config = resolve_config(a.flags, a.resume ? a.run : std::string(), {}, l.data.data);
  write_file((fs::path(a.run) / "config.toml").string(), retrieval_section(config).to_text());
  const auto result = a.resume ? retrieval::resume_training(l.data, config, a.run)
                               : retrieval::run_training(l.data, config, a.run);
  out << "trained " << result.history.size() << " epochs; checkpoints in " << a.run << '\n';
  return kExitOk;
}

retrieval::ModelBundle load_run_model(const std::string& run) {
  const auto path = fs::path(run) / "final.ckpt";
  require_exists(path);
  return retrieval::load_model(path.string());
}

int cmd_retrieve(const RunArgs& a, std::ostream& out) {
  const auto l = load_extracted(a.cohort);
  const auto model = load_run_model(a.run);
  const auto config = resolve_config(a.flags, a.run, {}, l.data.data);
  const auto dir = a.out.empty() ? a.run : a.out;
  const auto& ds = l.data.data;

  SelectionFile file;
  file.k = config.k;
  file.roi_names = l.cohort.manifest.roi_names;
  std::vector<retrieval::CandidatePool> pools;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    auto r = retrieval::retrieve_subject(model, l.data, config, i);
    SubjectSelection s{ds.ids[i], split_name(l.cohort, i), r.selection.s_star, r.selection.score,
                       r.selection.ensemble_sets, {}};
    for (auto f : s.s_star) s.rois.push_back(ds.descriptors[f].roi_name);
    file.subjects.push_back(std::move(s));
    pools.push_back(std::move(r.pool));
  }
  write_file((fs::path(dir) / "selections.json").string(), selections_json(file));
  write_file((fs::path(dir) / "pool_scores.csv").string(), pool_scores_csv(pools));
  out << "retrieved S* for " << ds.size() << " subjects into " << dir << '\n';
  return kExitOk;
}

int cmd_eval(const RunArgs& a, std::ostream& out) {
  const auto l = load_extracted(a.cohort);
  const auto model = load_run_model(a.run);
  const auto config = resolve_config(a.flags, a.run, {}, l.data.data);
  const auto dir = fs::path(a.out.empty() ? a.run : a.out) / "eval";
  const auto& ds = l.data.data;
  const auto ev = retrieval::evaluate_model(model, l.data, config, ds.validation);
  write_file((dir / "report.json").string(), evalkit::report_json(ev.report));
  write_file((dir / "confusion.csv").string(), evalkit::confusion_csv(ev.report));
  write_file((dir / "predictions.csv").string(), evalkit::predictions_csv(ev.report));
  std::vector<evalkit::EvalReport> reports{ev.report};
  if (a.baselines) {
    const auto universe = config.subpool;
    reports.push_back(evalkit::baseline_random_sets(ds, model.encoder, config.k, config.seed, universe, config.head));
    reports.push_back(evalkit::baseline_all_radiomics(ds, config.head));
    evalkit::MarginalOptions marginal;
    marginal.n_support = config.n_support;
    marginal.n_query = config.n_query;
    marginal.probe.steps = config.probe_steps;
    reports.push_back(evalkit::baseline_marginal_topk(ds, config.k, config.seed, marginal, config.head).report);
    for (std::size_t r = 1; r < reports.size(); ++r) {
      write_file((dir / ("baseline_" + reports[r].name + ".json")).string(), evalkit::report_json(reports[r]));
    }
  }
  const auto table = evalkit::report_table(reports);
  write_file((dir / "table.txt").string(), table);
  out << table;
  return kExitOk;
}

int cmd_oracle(const RunArgs& a, std::ostream& out) {
  const auto l = load_extracted(a.cohort);
  RetrievalConfig base;
  base.k = 3;
  std::optional<retrieval::ModelBundle> model;
  if (!a.run.empty()) model = load_run_model(a.run);
  const auto config = resolve_config(a.flags, a.run, base, l.data.data);
  if (config.subpool.empty()) throw ConfigError("oracle needs a subpool (--subpool N or a list)");
  const auto& ds = l.data.data;
  std::vector<std::size_t> subjects(ds.size());
  for (std::size_t i = 0; i < subjects.size(); ++i) subjects[i] = i;

  const auto rows = model ? retrieval::audit_gaps(*model, l.data, config, subjects)
                          : retrieval::audit_gaps(
                                [&](std::size_t i) { return retrieval::subject_reward_fn(l.data, config, i); },
                                l.data, config, subjects);
  std::vector<double> gaps;
  std::vector<double> percentiles;
  for (const auto& r : rows) {
    gaps.push_back(r.gap);
    percentiles.push_back(r.percentile);
  }
  const auto stats = retrieval::gap_statistics(gaps);
  const auto top10 = std::count_if(percentiles.begin(), percentiles.end(), [](double p) { return p >= 0.9; });

  json j;
  j["scorer"] = model ? "model" : "reward-oracle";
  j["k"] = config.k;
  j["subpool"] = config.subpool;
  j["sets_per_subject"] = rows.front().rewards.size();
  j["subjects"] = rows.size();
  j["mean_gap"] = stats.mean;
  j["tail_integral"] = stats.tail_integral;
  j["p95"] = stats.p95;
  j["percentiles"] = stats.percentiles;
  j["tail_curve"] = stats.tail_curve;
  j["fraction_top10"] = static_cast<double>(top10) / static_cast<double>(rows.size());

  const fs::path dir(a.out);
  write_file((dir / "gaps.csv").string(), retrieval::gap_csv(rows));
  write_file((dir / "rewards.csv").string(), retrieval::reward_list_csv(rows, config.subpool, config.k));
  write_file((dir / "gap_stats.json").string(), j.dump(1));
  out << "audited " << rows.size() << " subjects over " << rows.front().rewards.size()
      << " sets each; mean gap " << stats.mean << '\n';
  return kExitOk;
}

int cmd_report(const RunArgs& a, std::ostream& out) {
  const auto l = load_extracted(a.cohort);
  const auto model = load_run_model(a.run);
  const auto config = resolve_config(a.flags, a.run, {}, l.data.data);
  const auto& ds = l.data.data;
  const auto it = std::find(ds.ids.begin(), ds.ids.end(), a.subject);
  if (it == ds.ids.end()) throw ConfigError("unknown subject: " + a.subject);
  const auto i = static_cast<std::size_t>(it - ds.ids.begin());

  const auto r = retrieval::retrieve_subject(model, l.data, config, i);
  const retrieval::SubjectScorer scorer(model, l.data, i);
  std::vector<std::vector<double>> embs;
  for (const auto& set : r.selection.ensemble_sets) embs.push_back(scorer.embedding(set));
  const auto pred = evalkit::ensemble_predict(embs, model.classifier);
  const auto report =
      make_evidence_report(ds.ids[i], ds.labels[i], pred, r.selection.s_star, l.cohort.subjects[i].features->values,
                           ds.z.row_span(i), ds.descriptors, l.cohort.manifest.roi_names);
  if (a.out.empty()) {
    out << (a.text ? evidence_text(report) : evidence_json(report) + "\n");
  } else {
    write_file(a.out, evidence_json(report));
    write_file(fs::path(a.out).replace_extension(".txt").string(), evidence_text(report));
    out << evidence_text(report);
  }
  return kExitOk;
}

int cmd_export_plots(const RunArgs& a, std::ostream& out) {
  require_exists(a.run);
  export_plots(a.run, a.bins);
  out << "wrote plot data to " << (fs::path(a.run) / "plots").string() << '\n';
  return kExitOk;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Subject-specific radiomics feature-set retrieval", "strv"};
  app.require_subcommand(1);
  app.failure_message(CLI::FailureMessage::help);

  GenArgs gen;
  auto* g = app.add_subcommand("gen", "Generate a synthetic cohort");
  g->add_option("--config", gen.config, "Config file ([cohort] section)");
  g->add_option("--subjects", gen.subjects, "Number of subjects");
  g->add_option("--dims", gen.dims, "Volume size DxHxW (default 16x32x32)");
  g->add_option("--classes", gen.classes, "Number of classes");
  g->add_option("--seed", gen.seed, "Generation seed");
  g->add_option("--magnitude", gen.magnitude, "Scale of the planted effects");
  g->add_option("--out", gen.out, "Cohort directory")->required();

  ExtractArgs ex;
  auto* e = app.add_subcommand("extract", "Extract radiomics, split and normalize a cohort");
  e->add_option("--cohort", ex.cohort, "Cohort directory")->required();
  e->add_option("--train-fraction", ex.train_fraction, "Training fraction")->capture_default_str();
  e->add_option("--seed", ex.seed, "Split seed (default: the cohort seed)");
  e->add_flag("--clone", ex.clone, "Replace features with the correlated-clone construction");
  e->add_option("--out", ex.out, "Output directory (default: in place)");

  RunArgs tr, re, ev, orc, rep, ep;
  auto* t = app.add_subcommand("train", "Train encoder, scorer and head");
  t->add_option("--cohort", tr.cohort, "Extracted cohort directory")->required();
  t->add_option("--out", tr.run, "Run directory")->required();
  t->add_flag("--resume", tr.resume, "Continue from <out>/stage1.ckpt");
  add_retrieval_flags(t, tr.flags, true);

  auto* r = app.add_subcommand("retrieve", "Retrieve S* for every subject");
  r->add_option("--cohort", re.cohort, "Extracted cohort directory")->required();
  r->add_option("--run", re.run, "Run directory")->required();
  r->add_option("--out", re.out, "Output directory (default: the run)");
  add_retrieval_flags(r, re.flags, false);

  auto* v = app.add_subcommand("eval", "Evaluate on the validation split");
  v->add_option("--cohort", ev.cohort, "Extracted cohort directory")->required();
  v->add_option("--run", ev.run, "Run directory")->required();
  v->add_option("--out", ev.out, "Output directory (default: the run)");
  v->add_flag("--baselines", ev.baselines, "Also report RS, all-radiomics and marginal top-k");
  add_retrieval_flags(v, ev.flags, false);

  auto* o = app.add_subcommand("oracle", "Gap audit against exhaustive enumeration of a subpool");
  o->add_option("--cohort", orc.cohort, "Extracted cohort directory")->required();
  o->add_option("--run", orc.run, "Run directory (default: score with the reward itself)");
  o->add_option("--out", orc.out, "Output directory")->required();
  add_retrieval_flags(o, orc.flags, true);

  auto* p = app.add_subcommand("report", "Evidence report for one subject");
  p->add_option("--cohort", rep.cohort, "Extracted cohort directory")->required();
  p->add_option("--run", rep.run, "Run directory")->required();
  p->add_option("--subject", rep.subject, "Subject id")->required();
  p->add_option("--out", rep.out, "JSON path (a .txt rendering is written beside it)");
  p->add_flag("--text", rep.text, "Print the table instead of JSON");
  add_retrieval_flags(p, rep.flags, false);

  auto* x = app.add_subcommand("export-plots", "Write plot-ready CSVs for a run");
  x->add_option("--run", ep.run, "Run directory")->required();
  x->add_option("--bins", ep.bins, "Histogram bins")->capture_default_str()->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& pe) {
    const int code = app.exit(pe, out, err);
    return code == 0 ? kExitOk : kExitUsageError;
  }

  try {
    if (*g) return cmd_gen(gen, out);
    if (*e) return cmd_extract(ex, out);
    if (*t) return cmd_train(tr, out);
    if (*r) return cmd_retrieve(re, out);
    if (*v) return cmd_eval(ev, out);
    if (*o) return cmd_oracle(orc, out);
    if (*p) return cmd_report(rep, out);
    if (*x) return cmd_export_plots(ep, out);
  } catch (const Error& ex_) {
    err << "error: " << ex_.what() << '\n';
    return kExitDomainError;
  } catch (const fs::filesystem_error& fe) {
    err << "error: " << fe.what() << '\n';
    return kExitDomainError;
  }
  return kExitUsageError;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  return run(static_cast<int>(argv.size()), argv.data(), out, err);
}

}  // namespace strv::cli
