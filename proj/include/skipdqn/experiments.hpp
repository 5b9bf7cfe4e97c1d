#pragma once

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "skipdqn/agent.hpp"
#include "skipdqn/data.hpp"
#include "skipdqn/env.hpp"
#include "skipdqn/eval.hpp"
#include "skipdqn/explain.hpp"
#include "skipdqn/schema.hpp"
#include "skipdqn/util.hpp"

namespace skipdqn {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Data sources

struct DataSource {
  enum class Kind { Synthetic, Mssd };

  std::string name;
  Kind kind = Kind::Synthetic;
  GeneratorConfig generator;
  std::string log_path;     // MSSD session log
  std::string tracks_path;  // optional track-features file
};

inline nlohmann::json to_json(const DataSource& s) {
  nlohmann::json j = {{"name", s.name}, {"kind", s.kind == DataSource::Kind::Synthetic ? "synthetic" : "mssd"}};
  if (s.kind == DataSource::Kind::Synthetic) {
    j["generator"] = to_json(s.generator);
  } else {
    j["log"] = s.log_path;
    j["tracks"] = s.tracks_path;
  }
  return j;
}

// Relative MSSD paths resolve against `data_dir` when it is non-empty.
inline DataSource data_source_from_json(const nlohmann::json& j, const std::string& data_dir = {}) {
  DataSource s;
  s.name = j.at("name").get<std::string>();
  const std::string kind = j.value("kind", std::string("synthetic"));
  auto resolve = [&](std::string p) {
    if (p.empty() || data_dir.empty() || fs::path(p).is_absolute()) return p;
    return (fs::path(data_dir) / p).string();
  };
  if (kind == "synthetic") {
    s.kind = DataSource::Kind::Synthetic;
    s.generator = generator_config_from_json(j.value("generator", nlohmann::json::object()));
  } else if (kind == "mssd") {
    s.kind = DataSource::Kind::Mssd;
    s.log_path = resolve(j.at("log").get<std::string>());
    s.tracks_path = resolve(j.value("tracks", std::string()));
  } else {
    throw Error("unknown data source kind '" + kind + "'");
  }
  return s;
}

inline void check_resolvable(const DataSource& s) {
  if (s.kind != DataSource::Kind::Mssd) return;
  if (!fs::exists(s.log_path)) throw Error("data source '" + s.name + "': missing " + s.log_path);
  if (!s.tracks_path.empty() && !fs::exists(s.tracks_path))
    throw Error("data source '" + s.name + "': missing " + s.tracks_path);
}

inline std::vector<Session> load_source(const DataSource& s, const FeatureSchema& schema,
                                        IngestReport* report = nullptr) {
  if (s.kind == DataSource::Kind::Synthetic) return generate_synthetic(s.generator);
  check_resolvable(s);
  std::ifstream log(s.log_path);
  IngestResult r;
  if (!s.tracks_path.empty()) {
    std::ifstream tracks(s.tracks_path);
    const TrackTable table = read_track_features(tracks);
    r = parse_mssd(log, schema, &table);
  } else {
    r = parse_mssd(log, schema);
  }
  if (report) *report = r.report;
  return std::move(r.sessions);
}

// ---------------------------------------------------------------------------
// Plans

enum class SchemaVariant { Full, Corrected, Custom };

inline std::string_view to_string(SchemaVariant v) {
  switch (v) {
    case SchemaVariant::Full: return "full";
    case SchemaVariant::Corrected: return "corrected";
    case SchemaVariant::Custom: return "custom";
  }
  return "?";
}

inline SchemaVariant parse_schema_variant(std::string_view s) {
  for (auto v : {SchemaVariant::Full, SchemaVariant::Corrected, SchemaVariant::Custom})
    if (to_string(v) == s) return v;
  throw Error("unknown schema variant '" + std::string(s) + "'");
}

struct ExperimentPlan {
  DataSource train;
  std::vector<DataSource> tests;
  SchemaVariant variant = SchemaVariant::Full;
  // Extra exclusions on top of the variant (ftype codes or descriptor names).
  std::vector<std::string> mask;
  nlohmann::json schema_config = nlohmann::json::object();
  std::size_t n_runs = 5;
  AgentConfig agent;  // agent.seed is the base seed; run i uses seed + i
  AttributionConfig attribution;
  std::string out_dir = "runs";

  void validate() const {
    if (n_runs == 0) throw Error("n_runs must be at least 1");
    if (tests.empty()) throw Error("plan has no test sources");
    check_resolvable(train);
    for (const auto& t : tests) check_resolvable(t);
    agent.validate();
  }
};

inline nlohmann::json to_json(const AttributionConfig& c) {
  return {{"n_episodes", c.n_episodes},
          {"n_samples", c.n_samples},
          {"background_size", c.background_size},
          {"background_seed", c.background_seed},
          {"seed", c.seed},
          {"target", to_string(c.target)}};
}

inline AttributionConfig attribution_config_from_json(const nlohmann::json& j) {
  AttributionConfig c;
  c.n_episodes = j.value("n_episodes", c.n_episodes);
  c.n_samples = j.value("n_samples", c.n_samples);
  c.background_size = j.value("background_size", c.background_size);
  c.background_seed = j.value("background_seed", c.background_seed);
  c.seed = j.value("seed", c.seed);
  c.target = parse_explanation_target(j.value("target", std::string("q_margin")));
  return c;
}

// Everything that determines results; out_dir is deliberately absent.
inline nlohmann::json plan_identity(const ExperimentPlan& p) {
  nlohmann::json tests = nlohmann::json::array();
  for (const auto& t : p.tests) tests.push_back(to_json(t));
  return {{"train", to_json(p.train)},
          {"tests", tests},
          {"variant", to_string(p.variant)},
          {"mask", p.mask},
          {"schema_config", p.schema_config},
          {"n_runs", p.n_runs},
          {"agent", to_json(p.agent)},
          {"attribution", to_json(p.attribution)}};
}

inline std::string plan_hash(const ExperimentPlan& p) {
  return to_hex(fnv1a(plan_identity(p).dump()));
}

inline nlohmann::json to_json(const ExperimentPlan& p) {
  nlohmann::json j = plan_identity(p);
  j["out_dir"] = p.out_dir;
  return j;
}

inline ExperimentPlan plan_from_json(const nlohmann::json& j, const std::string& data_dir = {}) {
  ExperimentPlan p;
  p.train = data_source_from_json(j.at("train"), data_dir);
  for (const auto& t : j.at("tests")) p.tests.push_back(data_source_from_json(t, data_dir));
  p.variant = parse_schema_variant(j.value("variant", std::string("full")));
  p.mask = j.value("mask", p.mask);
  p.schema_config = j.value("schema_config", nlohmann::json::object());
  p.n_runs = j.value("n_runs", p.n_runs);
  p.agent = agent_config_from_json(j.value("agent", nlohmann::json::object()));
  p.attribution = attribution_config_from_json(j.value("attribution", nlohmann::json::object()));
  p.out_dir = j.value("out_dir", p.out_dir);
  return p;
}

// ---------------------------------------------------------------------------
// Running

struct MetricSummary {
  Interval maa;
  Interval fpa;
};

inline nlohmann::json to_json(const MetricSummary& m) {
  return {{"maa", to_json(m.maa)}, {"fpa", to_json(m.fpa)}};
}

struct ExperimentResult {
  std::string plan_hash;
  fs::path directory;
  FeatureSchema schema;
  std::vector<std::string> test_names;
  // reports[run][test]
  std::vector<std::vector<EvalReport>> reports;
  std::map<std::string, MetricSummary> per_test;
  MetricSummary pooled;
  std::size_t runs_trained = 0;

  // Per-session MAA averaged over runs, keyed "<test>/<session id>" and
  // ordered by key.
  std::map<std::string, double> session_maa() const {
    std::map<std::string, double> out;
    for (std::size_t t = 0; t < test_names.size(); ++t) {
      for (std::size_t run = 0; run < reports.size(); ++run)
        for (const auto& s : reports[run][t].sessions)
          out[test_names[t] + "/" + s.session_id] += s.maa / static_cast<double>(reports.size());
    }
    return out;
  }
};

namespace detail {

inline void write_json(const fs::path& path, const nlohmann::json& j) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

inline nlohmann::json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read " + path.string());
  return nlohmann::json::parse(in);
}

// Interval over samples; a single sample yields a zero-width interval.
inline Interval interval_of(const std::vector<double>& xs) {
  if (xs.size() >= 2) return confidence_interval(xs, 0.95);
  const double m = xs.empty() ? 0.0 : xs.front();
  return {m, m, m};
}

}  // namespace detail

inline FeatureSchema plan_schema(const ExperimentPlan& plan, const std::vector<Session>& train) {
  SchemaConfig cfg = schema_config_from_json(plan.schema_config);
  FeatureSchema schema = fit_standardizer(build_schema(cfg), train);
  if (plan.variant == SchemaVariant::Corrected) schema = corrected(schema);
  if (!plan.mask.empty()) schema = apply_mask(schema, plan.mask);
  return schema;
}

// Trains plan.n_runs agents and evaluates each on every test source. Reuses
// checkpoints and reports already present under the plan's directory.
inline ExperimentResult run_experiment(const ExperimentPlan& plan) {
  plan.validate();
  ExperimentResult result;
  result.plan_hash = plan_hash(plan);
  result.directory = fs::path(plan.out_dir) / ("plan-" + result.plan_hash);
  fs::create_directories(result.directory);
  detail::write_json(result.directory / "plan.json", to_json(plan));

  const SchemaConfig raw_cfg = schema_config_from_json(plan.schema_config);
  const auto train_sessions = load_source(plan.train, build_schema(raw_cfg));
  result.schema = plan_schema(plan, train_sessions);
  const auto train_encoded = encode_sessions(train_sessions, result.schema);
  std::vector<std::vector<EncodedSession>> test_encoded;
  for (const auto& t : plan.tests) {
    result.test_names.push_back(t.name);
    test_encoded.push_back(encode_sessions(load_source(t, result.schema), result.schema));
  }
  const std::string fingerprint = result.schema.fingerprint();

  for (std::size_t run = 0; run < plan.n_runs; ++run) {
    const fs::path run_dir = result.directory / ("run-" + std::to_string(run));
    fs::create_directories(run_dir);
    AgentConfig cfg = plan.agent;
    cfg.seed = plan.agent.seed + run;
    const fs::path ckpt_path = run_dir / "checkpoint.json";
    Params params;
    if (fs::exists(ckpt_path)) {
      params = load_checkpoint(ckpt_path.string(), fingerprint).params;
    } else {
      TrainResult tr = train(train_encoded, result.schema.active_width(), cfg);
      params = std::move(tr.params);
      save_checkpoint({result.schema, cfg, params}, ckpt_path.string());
      nlohmann::json trace = nlohmann::json::array();
      for (const auto& e : tr.trace)
        trace.push_back({e.episode, e.reward,
                         std::isfinite(e.mean_loss) ? nlohmann::json(e.mean_loss) : nlohmann::json(),
                         e.epsilon});
      detail::write_json(run_dir / "trace.json",
                         {{"columns", {"episode", "reward", "mean_loss", "epsilon"}},
                          {"env_steps", tr.env_steps},
                          {"gradient_steps", tr.gradient_steps},
                          {"rows", trace}});
      ++result.runs_trained;
    }
    std::vector<EvalReport> per_test;
    for (std::size_t t = 0; t < plan.tests.size(); ++t) {
      const fs::path eval_path = run_dir / ("eval-" + plan.tests[t].name + ".json");
      EvalReport rep;
      if (fs::exists(eval_path)) {
        rep = eval_report_from_json(detail::read_json(eval_path));
        if (rep.schema_fingerprint != fingerprint)
          throw Error("stale evaluation report " + eval_path.string());
      } else {
        rep = evaluate(params, test_encoded[t], result.schema, cfg.seed);
        detail::write_json(eval_path, to_json(rep));
      }
      per_test.push_back(std::move(rep));
    }
    result.reports.push_back(std::move(per_test));
  }

  std::vector<double> pooled_maa, pooled_fpa;
  nlohmann::json per_test_json = nlohmann::json::object();
  for (std::size_t t = 0; t < plan.tests.size(); ++t) {
    std::vector<double> maa_runs, fpa_runs;
    for (const auto& run : result.reports) {
      maa_runs.push_back(run[t].mean_maa);
      fpa_runs.push_back(run[t].mean_fpa);
    }
    pooled_maa.insert(pooled_maa.end(), maa_runs.begin(), maa_runs.end());
    pooled_fpa.insert(pooled_fpa.end(), fpa_runs.begin(), fpa_runs.end());
    MetricSummary m{detail::interval_of(maa_runs), detail::interval_of(fpa_runs)};
    result.per_test[plan.tests[t].name] = m;
    per_test_json[plan.tests[t].name] = to_json(m);
  }
  result.pooled = {detail::interval_of(pooled_maa), detail::interval_of(pooled_fpa)};
  detail::write_json(result.directory / "aggregate.json",
                     {{"format", "skipdqn.aggregate"},
                      {"version", 1},
                      {"plan_hash", result.plan_hash},
                      {"schema_fingerprint", fingerprint},
                      {"variant", to_string(plan.variant)},
                      {"mask", plan.mask},
                      {"n_runs", plan.n_runs},
                      {"pooled", to_json(result.pooled)},
                      {"per_test", per_test_json}});
  return result;
}

// ---------------------------------------------------------------------------
// Ablation

// Feature types swept on top of the corrected state (RE and SL are already
// absent there).
inline const std::vector<FType>& ablation_types() {
  static const std::vector<FType> t = {FType::RS, FType::PA, FType::SC, FType::PS, FType::HD,
                                       FType::PT, FType::PR, FType::SH, FType::TR};
  return t;
}

struct AblationResult {
  FType removed = FType::RS;
  MetricSummary metrics;
  StatResult stat;  // baseline minus ablated, per session
  std::string marker;
  double maa_drop = 0.0;
};

struct AblationReport {
  MetricSummary baseline;
  std::string baseline_fingerprint;
  std::vector<AblationResult> arms;
};

inline nlohmann::json to_json(const AblationReport& r) {
  nlohmann::json arms = nlohmann::json::array();
  for (const auto& a : r.arms)
    arms.push_back({{"removed", to_string(a.removed)},
                    {"metrics", to_json(a.metrics)},
                    {"maa_drop", a.maa_drop},
                    {"stat", to_json(a.stat)},
                    {"marker", a.marker}});
  return {{"format", "skipdqn.ablation"},
          {"version", 1},
          {"baseline", to_json(r.baseline)},
          {"baseline_fingerprint", r.baseline_fingerprint},
          {"arms", arms}};
}

inline std::vector<double> aligned_values(const std::map<std::string, double>& ref,
                                          const std::map<std::string, double>& other,
                                          std::vector<double>& ref_out) {
  std::vector<double> out;
  ref_out.clear();
  for (const auto& [key, value] : ref) {
    auto it = other.find(key);
    if (it == other.end()) throw Error("paired test: session '" + key + "' missing from arm");
    ref_out.push_back(value);
    out.push_back(it->second);
  }
  return out;
}

inline AblationReport run_ablation(const ExperimentPlan& base_plan,
                                   const std::vector<FType>& types = ablation_types()) {
  if (base_plan.variant != SchemaVariant::Corrected)
    throw Error("ablation requires a plan on the corrected schema");
  const ExperimentResult baseline = run_experiment(base_plan);
  const auto base_sessions = baseline.session_maa();
  AblationReport report;
  report.baseline = baseline.pooled;
  report.baseline_fingerprint = baseline.schema.fingerprint();
  for (FType t : types) {
    ExperimentPlan arm = base_plan;
    arm.mask.push_back(std::string(to_string(t)));
    const ExperimentResult r = run_experiment(arm);
    std::vector<double> a;
    const std::vector<double> b = aligned_values(base_sessions, r.session_maa(), a);
    AblationResult res;
    res.removed = t;
    res.metrics = r.pooled;
    res.stat = paired_t_test(a, b, "per-session MAA averaged over runs; corrected minus ablated");
    res.marker = significance_marker(res.stat.p_value);
    res.maa_drop = baseline.pooled.maa.mean - r.pooled.maa.mean;
    report.arms.push_back(std::move(res));
  }
  fs::create_directories(base_plan.out_dir);
  detail::write_json(fs::path(base_plan.out_dir) / ("ablation-" + plan_hash(base_plan) + ".json"),
                     to_json(report));
  return report;
}

// ---------------------------------------------------------------------------
// Leakage

struct LeakageReport {
  MetricSummary full;
  MetricSummary corrected;
  std::string full_fingerprint;
  std::string corrected_fingerprint;
  double maa_delta = 0.0;  // full - corrected
  double fpa_delta = 0.0;
  std::size_t re_rank = 0;  // 1-based attribution rank under the full schema
  std::size_t sl_rank = 0;
  AttributionReport attribution;
};

inline nlohmann::json to_json(const LeakageReport& r) {
  nlohmann::json top = nlohmann::json::array();
  for (std::size_t i = 0; i < std::min<std::size_t>(10, r.attribution.rows.size()); ++i)
    top.push_back({{"feature", r.attribution.rows[i].display()},
                   {"mean_abs_shap", r.attribution.rows[i].mean_abs_shap}});
  return {{"format", "skipdqn.leakage"},
          {"version", 1},
          {"full", to_json(r.full)},
          {"corrected", to_json(r.corrected)},
          {"full_fingerprint", r.full_fingerprint},
          {"corrected_fingerprint", r.corrected_fingerprint},
          {"maa_delta", r.maa_delta},
          {"fpa_delta", r.fpa_delta},
          {"re_rank", r.re_rank},
          {"sl_rank", r.sl_rank},
          {"attribution_top", top}};
}

// Attribution of run 0 of an experiment on its first test source.
inline AttributionReport attribute_run(const ExperimentPlan& plan, const ExperimentResult& result) {
  const SchemaConfig raw_cfg = schema_config_from_json(plan.schema_config);
  const auto train_sessions = load_source(plan.train, build_schema(raw_cfg));
  const auto train_encoded = encode_sessions(train_sessions, result.schema);
  const auto test_encoded =
      encode_sessions(load_source(plan.tests.front(), result.schema), result.schema);
  const Checkpoint ckpt = load_checkpoint(
      (result.directory / "run-0" / "checkpoint.json").string(), result.schema.fingerprint());
  const BackgroundSet bg = sample_background(train_encoded, plan.attribution.background_size,
                                             plan.attribution.background_seed);
  return attribute_sessions(ckpt.params, test_encoded, result.schema, bg, plan.attribution);
}

inline LeakageReport run_leakage_report(const ExperimentPlan& plan) {
  ExperimentPlan full = plan;
  full.variant = SchemaVariant::Full;
  ExperimentPlan corr = plan;
  corr.variant = SchemaVariant::Corrected;
  const ExperimentResult rf = run_experiment(full);
  const ExperimentResult rc = run_experiment(corr);
  LeakageReport r;
  r.full = rf.pooled;
  r.corrected = rc.pooled;
  r.full_fingerprint = rf.schema.fingerprint();
  r.corrected_fingerprint = rc.schema.fingerprint();
  r.maa_delta = rf.pooled.maa.mean - rc.pooled.maa.mean;
  r.fpa_delta = rf.pooled.fpa.mean - rc.pooled.fpa.mean;
  r.attribution = attribute_run(full, rf);
  r.re_rank = r.attribution.rank_of("RE");
  r.sl_rank = r.attribution.rank_of("SL");
  fs::create_directories(plan.out_dir);
  detail::write_json(fs::path(plan.out_dir) / ("leakage-" + plan_hash(plan) + ".json"), to_json(r));
  return r;
}

// ---------------------------------------------------------------------------
// Text tables

inline std::string format_interval(const Interval& i) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.3f +/- %.3f", i.mean, i.half_width());
  return buf;
}

inline std::string metrics_table(const std::vector<std::pair<std::string, MetricSummary>>& rows,
                                 const std::vector<std::string>& markers = {}) {
  std::ostringstream out;
  char buf[160];
  std::snprintf(buf, sizeof(buf), "%-24s %-20s %-20s %s\n", "State", "MAA", "FPA", "sig");
  out << buf;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    std::snprintf(buf, sizeof(buf), "%-24s %-20s %-20s %s\n", rows[i].first.c_str(),
                  format_interval(rows[i].second.maa).c_str(),
                  format_interval(rows[i].second.fpa).c_str(),
                  i < markers.size() ? markers[i].c_str() : "");
    out << buf;
  }
  return out.str();
}

inline std::string ablation_table(const AblationReport& r) {
  std::vector<std::pair<std::string, MetricSummary>> rows = {{"Corrected State", r.baseline}};
  std::vector<std::string> markers = {""};
  for (const auto& a : r.arms) {
    rows.emplace_back("- " + std::string(to_string(a.removed)), a.metrics);
    markers.push_back(a.marker);
  }
  return metrics_table(rows, markers);
}

}  // namespace skipdqn
