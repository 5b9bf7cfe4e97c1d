// skipdqn: command-line front end for corpus generation, ingestion,
// training, evaluation, attribution and the ablation/leakage studies.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "skipdqn/skipdqn.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace skipdqn;

namespace {

constexpr const char* kDataDirEnv = "SKIPDQN_DATA_DIR";

struct CommonOptions {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> runs;
  std::string schema = "full";
  std::string out;
  std::string data;
  std::string tracks;
};

void add_common(CLI::App* cmd, CommonOptions& o, bool with_data = true) {
  cmd->add_option("--config", o.config, "JSON configuration file");
  cmd->add_option("--seed", o.seed, "Base random seed");
  cmd->add_option("--out", o.out, "Output directory or file");
  if (with_data) {
    cmd->add_option("--data", o.data,
                    "Session log CSV or a directory holding sessions.csv/tracks.csv "
                    "(default: $SKIPDQN_DATA_DIR)");
    cmd->add_option("--tracks", o.tracks, "Track-features CSV for a two-file log");
  }
}

json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read " + path);
  return json::parse(in);
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
}

std::string default_data_dir() {
  const char* env = std::getenv(kDataDirEnv);
  return env ? env : "";
}

// Resolves --data/--tracks into (log, tracks) paths.
std::pair<std::string, std::string> resolve_data(const CommonOptions& o) {
  std::string data = o.data.empty() ? default_data_dir() : o.data;
  if (data.empty()) throw Error("no --data given and $SKIPDQN_DATA_DIR is unset");
  std::string tracks = o.tracks;
  if (fs::is_directory(data)) {
    const fs::path dir(data);
    if (tracks.empty() && fs::exists(dir / "tracks.csv")) tracks = (dir / "tracks.csv").string();
    data = (dir / "sessions.csv").string();
  }
  return {data, tracks};
}

std::vector<Session> load_sessions(const CommonOptions& o, const FeatureSchema& schema,
                                   IngestReport* report = nullptr) {
  const auto [log, tracks] = resolve_data(o);
  DataSource src;
  src.name = "cli";
  src.kind = DataSource::Kind::Mssd;
  src.log_path = log;
  src.tracks_path = tracks;
  return load_source(src, schema, report);
}

SchemaConfig schema_config_for(const CommonOptions& o) {
  if (o.config.empty()) return {};
  json j = read_json_file(o.config);
  if (j.contains("schema_config")) j = j["schema_config"];
  else if (j.contains("schema")) j = j["schema"];
  else return {};
  return schema_config_from_json(j);
}

FeatureSchema apply_variant(FeatureSchema schema, const std::string& variant) {
  const SchemaVariant v = parse_schema_variant(variant);
  if (v == SchemaVariant::Corrected) return corrected(schema);
  return schema;
}

AgentConfig agent_config_for(const CommonOptions& o) {
  AgentConfig c;
  if (!o.config.empty()) {
    json j = read_json_file(o.config);
    if (j.contains("agent")) c = agent_config_from_json(j["agent"]);
  }
  if (o.seed) c.seed = *o.seed;
  return c;
}

ExperimentPlan plan_for(const CommonOptions& o) {
  if (o.config.empty()) throw Error("this command needs --config <plan.json>");
  ExperimentPlan p = plan_from_json(read_json_file(o.config), default_data_dir());
  if (o.seed) p.agent.seed = *o.seed;
  if (o.runs) p.n_runs = *o.runs;
  if (!o.out.empty()) p.out_dir = o.out;
  return p;
}

void print_eval(const EvalReport& r) {
  std::printf("sessions %zu  MAA %.4f  FPA %.4f  schema %s\n", r.n_sessions(), r.mean_maa,
              r.mean_fpa, r.schema_fingerprint.c_str());
}

void print_report_file(const std::string& path) {
  const json j = read_json_file(path);
  const std::string format = j.value("format", "");
  auto interval = [](const json& i) {
    return Interval{i.at("mean").get<double>(), i.at("lo").get<double>(), i.at("hi").get<double>()};
  };
  auto metrics = [&](const json& m) { return MetricSummary{interval(m.at("maa")), interval(m.at("fpa"))}; };
  std::cout << "== " << path << " (" << format << ")\n";
  if (format == "skipdqn.aggregate") {
    std::vector<std::pair<std::string, MetricSummary>> rows;
    for (const auto& [name, m] : j.at("per_test").items()) rows.emplace_back(name, metrics(m));
    rows.emplace_back("mean across tests", metrics(j.at("pooled")));
    std::cout << metrics_table(rows);
  } else if (format == "skipdqn.ablation") {
    std::vector<std::pair<std::string, MetricSummary>> rows = {{"Corrected State", metrics(j.at("baseline"))}};
    std::vector<std::string> markers = {""};
    for (const auto& a : j.at("arms")) {
      rows.emplace_back("- " + a.at("removed").get<std::string>(), metrics(a.at("metrics")));
      markers.push_back(a.at("marker").get<std::string>());
    }
    std::cout << metrics_table(rows, markers);
  } else if (format == "skipdqn.leakage") {
    std::cout << metrics_table({{"Full State", metrics(j.at("full"))},
                                {"Corrected State", metrics(j.at("corrected"))}});
    std::printf("MAA delta %.4f  FPA delta %.4f  RE rank %d  SL rank %d\n",
                j.at("maa_delta").get<double>(), j.at("fpa_delta").get<double>(),
                j.at("re_rank").get<int>(), j.at("sl_rank").get<int>());
  } else if (format == "skipdqn.eval") {
    print_eval(eval_report_from_json(j));
  } else if (format == "skipdqn.attribution") {
    std::size_t i = 0;
    for (const auto& row : j.at("rows")) {
      if (++i > 20) break;
      std::printf("%3zu  %-40s %.6f\n", i, row.at("feature").get<std::string>().c_str(),
                  row.at("mean_abs_shap").get<double>());
    }
  } else {
    throw Error("don't know how to render format '" + format + "'");
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Offline deep Q-learning for sequential music skip prediction"};
  app.require_subcommand(1);

  // synth
  CommonOptions synth_opts;
  GeneratorConfig gen;
  bool single_file = false;
  std::string label_model = "archetype";
  auto* synth = app.add_subcommand("synth", "Generate a synthetic session corpus in MSSD layout");
  add_common(synth, synth_opts, false);
  synth->add_option("--sessions", gen.n_sessions, "Number of sessions");
  synth->add_flag("--leakage", gen.leakage_mode, "Emit label-leaking reason_end values");
  synth->add_option("--mix", gen.archetype_mix,
                    "Archetype probabilities: listener skipper listen-then-skip skip-then-listen")
      ->expected(4);
  synth->add_option("--label-model", label_model, "archetype | copy-premium");
  synth->add_flag("--single-file", single_file, "Write track features into the session log");

  // ingest
  CommonOptions ingest_opts;
  auto* ingest = app.add_subcommand("ingest", "Validate an MSSD log and report ingestion statistics");
  add_common(ingest, ingest_opts);

  // schema dump
  CommonOptions schema_opts;
  auto* schema_cmd = app.add_subcommand("schema", "Feature schema utilities");
  auto* dump = schema_cmd->add_subcommand("dump", "Print the canonical descriptor layout as JSON");
  add_common(dump, schema_opts, false);
  dump->add_option("--schema", schema_opts.schema, "full | corrected");
  schema_cmd->require_subcommand(1);

  // train
  CommonOptions train_opts;
  std::optional<std::size_t> episodes;
  auto* train_cmd = app.add_subcommand(
      "train", "Train one agent on --data, or run a full experiment plan given by --config");
  add_common(train_cmd, train_opts);
  train_cmd->add_option("--schema", train_opts.schema, "full | corrected");
  train_cmd->add_option("--runs", train_opts.runs, "Runs per plan (plan mode)");
  train_cmd->add_option("--episodes", episodes, "Training episodes");

  // eval
  CommonOptions eval_opts;
  std::string eval_ckpt;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint (MAA/FPA) on a session log");
  add_common(eval_cmd, eval_opts);
  eval_cmd->add_option("--checkpoint", eval_ckpt, "Checkpoint JSON")->required();

  // explain
  CommonOptions explain_opts;
  std::string explain_ckpt, background_data;
  AttributionConfig attr;
  std::string target = "q_margin";
  auto* explain = app.add_subcommand("explain", "Kernel SHAP attribution for a checkpoint");
  add_common(explain, explain_opts);
  explain->add_option("--checkpoint", explain_ckpt, "Checkpoint JSON")->required();
  explain->add_option("--background-data", background_data,
                      "Log to sample the background from (default: --data)");
  explain->add_option("--episodes", attr.n_episodes, "Sessions to explain");
  explain->add_option("--samples", attr.n_samples, "Coalition samples per record");
  explain->add_option("--background", attr.background_size, "Background set size");
  explain->add_option("--target", target, "q_margin | q_skip | chosen_q");

  // ablate / leakage
  CommonOptions ablate_opts, leakage_opts;
  auto* ablate = app.add_subcommand("ablate", "Feature-type ablation sweep on the corrected state");
  add_common(ablate, ablate_opts, false);
  ablate->add_option("--runs", ablate_opts.runs, "Runs per arm");
  auto* leakage = app.add_subcommand("leakage", "Full vs corrected state comparison with attribution");
  add_common(leakage, leakage_opts, false);
  leakage->add_option("--runs", leakage_opts.runs, "Runs per variant");

  // report
  std::vector<std::string> report_files;
  auto* report = app.add_subcommand("report", "Render text tables from JSON artifacts");
  report->add_option("files", report_files, "Artifact JSON files")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (synth->parsed()) {
      if (!synth_opts.config.empty()) {
        json j = read_json_file(synth_opts.config);
        gen = generator_config_from_json(j.contains("generator") ? j["generator"] : j);
      }
      if (synth_opts.seed) gen.seed = *synth_opts.seed;
      if (label_model == "copy-premium") gen.label_model = LabelModel::CopyPremium;
      else if (label_model != "archetype") throw Error("unknown --label-model " + label_model);
      const auto sessions = generate_synthetic(gen);
      const fs::path dir = synth_opts.out.empty() ? fs::path("synthetic") : fs::path(synth_opts.out);
      fs::create_directories(dir);
      std::ofstream log(dir / "sessions.csv");
      if (single_file) {
        write_mssd(sessions, log);
      } else {
        std::ofstream tracks(dir / "tracks.csv");
        write_mssd(sessions, log, &tracks);
      }
      std::ofstream(dir / "generator.json") << to_json(gen).dump(2) << '\n';
      std::printf("wrote %zu sessions to %s\n", sessions.size(), dir.string().c_str());
    } else if (ingest->parsed()) {
      const FeatureSchema schema = build_schema(schema_config_for(ingest_opts));
      IngestReport rep;
      const auto sessions = load_sessions(ingest_opts, schema, &rep);
      const json j = rep.to_json();
      if (!ingest_opts.out.empty()) {
        const fs::path dir(ingest_opts.out);
        fs::create_directories(dir);
        write_text(dir / "ingest_report.json", j.dump(2) + "\n");
        std::ofstream log(dir / "sessions.csv");
        write_mssd(sessions, log);
      }
      std::cout << j.dump(2) << '\n';
    } else if (dump->parsed()) {
      const FeatureSchema schema =
          apply_variant(build_schema(schema_config_for(schema_opts)), schema_opts.schema);
      const std::string text = schema_to_json(schema).dump(2) + "\n";
      if (schema_opts.out.empty()) std::cout << text;
      else write_text(schema_opts.out, text);
    } else if (train_cmd->parsed()) {
      const bool plan_mode = !train_opts.config.empty() &&
                             read_json_file(train_opts.config).contains("train");
      if (plan_mode) {
        ExperimentPlan plan = plan_for(train_opts);
        if (episodes) plan.agent.episodes = *episodes;
        const ExperimentResult r = run_experiment(plan);
        std::vector<std::pair<std::string, MetricSummary>> rows;
        for (const auto& [name, m] : r.per_test) rows.emplace_back(name, m);
        rows.emplace_back("mean across tests", r.pooled);
        std::cout << "plan " << r.plan_hash << " -> " << r.directory.string() << " ("
                  << r.runs_trained << " runs trained)\n"
                  << metrics_table(rows);
      } else {
        const SchemaConfig cfg = schema_config_for(train_opts);
        const auto sessions = load_sessions(train_opts, build_schema(cfg));
        const FeatureSchema schema =
            apply_variant(fit_standardizer(build_schema(cfg), sessions), train_opts.schema);
        AgentConfig agent = agent_config_for(train_opts);
        if (episodes) agent.episodes = *episodes;
        const TrainResult tr = train(sessions, schema, agent);
        const fs::path dir = train_opts.out.empty() ? fs::path("model") : fs::path(train_opts.out);
        fs::create_directories(dir);
        save_checkpoint({schema, agent, tr.params}, (dir / "checkpoint.json").string());
        std::printf("trained %zu episodes (%llu env steps, %llu gradient steps); checkpoint %s\n",
                    tr.trace.size(), static_cast<unsigned long long>(tr.env_steps),
                    static_cast<unsigned long long>(tr.gradient_steps),
                    (dir / "checkpoint.json").string().c_str());
      }
    } else if (eval_cmd->parsed()) {
      const Checkpoint ckpt = load_checkpoint(eval_ckpt);
      const auto sessions = load_sessions(eval_opts, ckpt.schema);
      const EvalReport rep =
          evaluate(ckpt.params, encode_sessions(sessions, ckpt.schema), ckpt.schema, ckpt.config.seed);
      print_eval(rep);
      if (!eval_opts.out.empty()) write_text(eval_opts.out, to_json(rep).dump(2) + "\n");
    } else if (explain->parsed()) {
      const Checkpoint ckpt = load_checkpoint(explain_ckpt);
      attr.target = parse_explanation_target(target);
      if (explain_opts.seed) attr.seed = attr.background_seed = *explain_opts.seed;
      const auto test = encode_sessions(load_sessions(explain_opts, ckpt.schema), ckpt.schema);
      std::vector<EncodedSession> bg_source;
      if (!background_data.empty()) {
        CommonOptions bg_opts = explain_opts;
        bg_opts.data = background_data;
        bg_opts.tracks.clear();
        bg_source = encode_sessions(load_sessions(bg_opts, ckpt.schema), ckpt.schema);
      }
      const BackgroundSet bg = sample_background(background_data.empty() ? test : bg_source,
                                                 attr.background_size, attr.background_seed);
      const AttributionReport rep = attribute_sessions(ckpt.params, test, ckpt.schema, bg, attr);
      const fs::path dir = explain_opts.out.empty() ? fs::path("attribution") : fs::path(explain_opts.out);
      fs::create_directories(dir);
      write_text(dir / "attribution.json", to_json(rep).dump(2) + "\n");
      write_text(dir / "attribution.csv", attribution_csv(rep));
      for (std::size_t i = 0; i < std::min<std::size_t>(15, rep.rows.size()); ++i)
        std::printf("%3zu  %-40s %.6f\n", i + 1, rep.rows[i].display().c_str(), rep.rows[i].mean_abs_shap);
    } else if (ablate->parsed()) {
      ExperimentPlan plan = plan_for(ablate_opts);
      plan.variant = SchemaVariant::Corrected;
      const AblationReport r = run_ablation(plan);
      std::cout << ablation_table(r);
    } else if (leakage->parsed()) {
      const ExperimentPlan plan = plan_for(leakage_opts);
      const LeakageReport r = run_leakage_report(plan);
      std::cout << metrics_table({{"Full State", r.full}, {"Corrected State", r.corrected}});
      std::printf("MAA delta %.4f  FPA delta %.4f  RE rank %zu  SL rank %zu\n", r.maa_delta,
                  r.fpa_delta, r.re_rank, r.sl_rank);
    } else if (report->parsed()) {
      for (const auto& f : report_files) print_report_file(f);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
