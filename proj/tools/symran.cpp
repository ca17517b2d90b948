#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <string>

#include "symran/pipeline/stages.hpp"

using namespace symran;

namespace {

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e)) return 2;
  if (dynamic_cast<const ArtifactError*>(&e)) return 3;
  if (dynamic_cast<const NumericError*>(&e)) return 4;
  return 1;
}

std::uint64_t seed_from_env(std::uint64_t fallback) {
  const char* s = std::getenv("SYMRAN_SEED");
  if (!s || !*s) return fallback;
  char* end = nullptr;
  const unsigned long long v = std::strtoull(s, &end, 10);
  if (*end != '\0') throw ConfigError("SYMRAN_SEED must be an unsigned integer");
  return v;
}

int cmd_run(const std::string& config_path, const std::string& stages_csv, bool quiet) {
  const RunConfig cfg = load_run_config(config_path);
  const auto stages = parse_stages(stages_csv);
  Pipeline p(cfg, quiet ? nullptr : &std::cerr);
  if (!quiet) std::cerr << "[symran] config " << p.hash() << " -> " << cfg.output_dir << '\n';
  p.run(stages);
  return 0;
}

/// IG audit of a saved conceptizer over states sampled from the simulator.
int cmd_audit(const std::string& model_path, std::size_t probes, std::size_t n_ig) {
  const nlohmann::json j = detail::read_json_file(model_path);
  const Conceptizer model = [&] {
    try {
      return Conceptizer::from_json(j.contains("model") ? j.at("model") : j);
    } catch (const nlohmann::json::exception& e) {
      throw ArtifactError(model_path + ": " + e.what());
    }
  }();
  if (probes == 0) throw ConfigError("--probes must be > 0");
  EnvConfig ec;
  ec.task = model.concept_template().task();
  ec.seed = seed_from_env(1);
  Environment env(ec);
  Rng rng = make_rng(ec.seed, 0xA0);
  std::vector<KpmState> states;
  for (std::size_t i = 0; i < probes; ++i) {
    // A few random actions between probes decorrelate consecutive states.
    for (int k = 0; k < 5; ++k) {
      Action a(action_dim(ec.task));
      for (double& v : a) v = uniform01(rng);
      if (ec.task == Task::handover) a[0] = a[0] < 0.1 ? 1.0 : 0.0;
      else {
        double s = 0.0;
        for (double v : a) s += v;
        for (double& v : a) v /= s;
      }
      env.step(a);
    }
    states.push_back(env.state());
  }
  IgConfig ig;
  ig.steps = n_ig;
  const AuditReport rep = audit_support_mask(model, states, ig);
  nlohmann::json out{{"probes", rep.probes},
                     {"n_ig", n_ig},
                     {"off_support_max", rep.off_support_max},
                     {"max_completeness_error", rep.max_completeness_error},
                     {"passed", rep.passed()}};
  std::cout << out.dump(2) << '\n';
  return rep.passed() ? 0 : 4;
}

/// Per-decision latency of the teacher and student artifacts next to a trace corpus.
int cmd_bench(const std::string& corpus_path, std::size_t reps, std::size_t inputs) {
  if (reps == 0) throw ConfigError("--reps must be >= 1");
  const std::filesystem::path dir = std::filesystem::path(corpus_path).parent_path();
  const TraceBuffer buf = read_traces(corpus_path);
  if (buf.empty()) throw ArtifactError(corpus_path + ": empty corpus");
  std::vector<KpmState> corpus;
  for (const auto& r : buf) corpus.push_back(r.s);

  std::vector<TimedPolicy> ps;
  const nlohmann::json tj = detail::read_json_file(dir / "teacher.json");
  std::shared_ptr<const NeuralTeacher> nt;
  if (tj.value("kind", "") == "neural") {
    nt = std::make_shared<const NeuralTeacher>(NeuralTeacher::from_json(tj.at("model")));
    ps.push_back({"teacher", [nt](const KpmState& s) { return nt->act(s).a[0]; }});
  }
  const nlohmann::json pj = detail::read_json_file(dir / "policy.json");
  std::shared_ptr<const Conceptizer> cz;
  if (pj.value("features", "") == "concepts")
    cz = std::make_shared<const Conceptizer>(Conceptizer::from_json(detail::read_json_file(dir / "conceptizer.json").at("model")));
  auto student = std::make_shared<const Student>(Student::from_json(pj, cz));
  ps.push_back({"student", [student](const KpmState& s) { return student->decide(s).a[0]; }});

  const LatencyReport rep = latency_bench(ps, corpus, reps, inputs);
  nlohmann::json out{{"inputs", inputs ? inputs : corpus.size()}, {"reps", reps}, {"low_confidence", rep.low_confidence}};
  for (const auto& r : rep.results) out["median_ns"][r.name] = r.median_ns;
  if (nt) out["ratio"] = rep.speedup("teacher", "student");
  std::cout << out.dump(2) << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"symran: distill neural RAN controllers into shielded symbolic policies"};
  app.require_subcommand(1);

  std::string config_path, stages = "all";
  bool quiet = false;
  auto* run = app.add_subcommand("run", "run pipeline stages for one config");
  run->add_option("--config", config_path, "run config (JSON)")->required();
  run->add_option("--stages", stages, "comma-separated subset of traces,conceptizer,audit,distill,compile,shield,evaluate,report, or all");
  run->add_flag("--quiet", quiet, "no progress log on stderr");

  std::string model_path;
  std::size_t probes = 50, n_ig = 256;
  auto* audit = app.add_subcommand("audit", "integrated-gradients audit of a conceptizer artifact");
  audit->add_option("--model", model_path, "conceptizer.json")->required();
  audit->add_option("--probes", probes, "number of probe states");
  audit->add_option("--n-ig", n_ig, "Riemann steps per attribution");

  std::string corpus_path;
  std::size_t reps = 3, inputs = 100000;
  auto* bench = app.add_subcommand("bench", "latency of teacher and student next to a trace corpus");
  bench->add_option("--corpus", corpus_path, "traces.jsonl inside a run output directory")->required();
  bench->add_option("--reps", reps, "repetitions");
  bench->add_option("--inputs", inputs, "decisions timed per repetition (cycles the corpus)");

  app.add_subcommand("schema", "print the JSON Schema of run configs");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (*run) return cmd_run(config_path, stages, quiet);
    if (*audit) return cmd_audit(model_path, probes, n_ig);
    if (*bench) return cmd_bench(corpus_path, reps, inputs);
    if (app.got_subcommand("schema")) {
      std::cout << run_config_schema().dump(2) << '\n';
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "symran: error: " << e.what() << '\n';
    return exit_code_for(e);
  }
  return 0;
}
