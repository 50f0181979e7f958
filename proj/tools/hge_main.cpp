#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include <CLI11.hpp>

#include "hge/errors.hpp"
#include "hge/harness.hpp"
#include "hge/manifest.hpp"
#include "hge/streams.hpp"
#include "hge/tree.hpp"

namespace fs = std::filesystem;

namespace {

constexpr int kOk = 0;
constexpr int kFailure = 1;
constexpr int kInvalid = 2;
constexpr int kDnf = 3;

std::string slurp(const fs::path& path, const char* key) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw hge::ManifestError(key, "cannot read " + path.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

struct Flags {
  std::string manifest;
  std::string scenario;
  std::string method;
  std::uint64_t seed = 0;
  int seeds = 0;
  int jobs = 0;
  std::string out;
  bool trace = false;
  bool fail_on_dnf = false;
  bool force = false;
};

// Not every subcommand defines every option.
bool given(const CLI::App& cmd, const std::string& name) {
  const CLI::Option* o = cmd.get_option_no_throw(name);
  return o != nullptr && o->count() > 0;
}

hge::Manifest resolve(const Flags& f, const CLI::App& cmd) {
  hge::ManifestOverrides ov;
  if (given(cmd, "--scenario")) ov.scenario = f.scenario;
  if (given(cmd, "--method")) ov.method = f.method;
  if (const char* env = std::getenv("GE_SEED"); env && *env) {
    try {
      std::size_t used = 0;
      ov.seed = std::stoull(env, &used);
      if (used != std::string(env).size()) throw std::invalid_argument(env);
    } catch (const std::exception&) {
      throw hge::ManifestError("GE_SEED", std::string("not an unsigned integer: '") + env + "'");
    }
  }
  if (given(cmd, "--seed")) ov.seed = f.seed;
  if (given(cmd, "--seeds")) ov.seeds = f.seeds;
  if (given(cmd, "--jobs")) ov.jobs = f.jobs;
  if (given(cmd, "--out")) ov.out = f.out;
  if (given(cmd, "--trace")) ov.trace = true;
  if (given(cmd, "--fail-on-dnf")) ov.fail_on_dnf = true;
  const std::string text = f.manifest.empty() ? std::string() : slurp(f.manifest, "manifest");
  return hge::parse_manifest(text, ov);
}

void add_selection(CLI::App* cmd, Flags& f) {
  cmd->add_option("--manifest", f.manifest, "JSON manifest; flags override its keys");
  cmd->add_option("--scenario", f.scenario, "scenario preset");
  cmd->add_option("--method", f.method, "separate, ge, ge-no-review, hge or upper");
  cmd->add_option("--seed", f.seed, "first seed (GE_SEED also sets it)");
}

int run(const Flags& f, const CLI::App& cmd) {
  const hge::Manifest m = resolve(f, cmd);
  const fs::path out = m.out;
  if (fs::exists(out)) {
    if (!f.force) throw hge::ManifestError("out", "output directory " + out.string() + " exists (use --force)");
    fs::remove_all(out);
  }

  const auto reports = hge::run_suite(m.run, m.seed_list(), m.jobs);

  fs::create_directories(out);
  write_file(out / "manifest.json", hge::emit_manifest(m));
  write_file(out / "report.csv", hge::report_csv(reports));
  write_file(out / "aggregate.json", hge::aggregate_json(reports));
  bool dnf = false;
  for (const auto& r : reports) {
    const fs::path dir = out / ("seed-" + std::to_string(r.seed));
    fs::create_directories(dir);
    write_file(dir / "report.json", hge::report_json(r));
    write_file(dir / "tree.dot", hge::to_dot(r.tree, &r.domains));
    write_file(dir / "tree.json", hge::tree_to_json(r.tree, &r.domains));
    if (m.trace) {
      std::ofstream t(dir / "trace.ndjson", std::ios::binary);
      hge::write_trace(t, r.trace);
    }
    dnf = dnf || r.errors.dnf;
    std::cout << hge::to_string(r.method) << " seed " << r.seed << ": experts " << r.expert_count << " fp "
              << r.errors.fp_total << " fn " << r.errors.fn_total << (r.errors.dnf ? " DNF" : "") << " gate "
              << r.gate.gate_accuracy << "% cost " << r.gate.avg_experts_queried << " acc " << r.gate.test_accuracy
              << "%\n";
  }
  std::cout << "wrote " << out.string() << "\n";
  if (dnf && m.fail_on_dnf) {
    std::cerr << "error: at least one run did not finish (expert creation limit exceeded)\n";
    return kDnf;
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Expert gating with hierarchical routing: online runs, baselines and tree export"};
  app.require_subcommand(1);

  Flags run_flags;
  auto* run_cmd = app.add_subcommand("run", "run a scenario over a range of seeds");
  add_selection(run_cmd, run_flags);
  run_cmd->add_option("--seeds", run_flags.seeds, "number of consecutive seeds");
  run_cmd->add_option("--jobs", run_flags.jobs, "parallel seed workers");
  run_cmd->add_option("--out", run_flags.out, "output directory");
  run_cmd->add_flag("--trace", run_flags.trace, "write per-seed trace.ndjson");
  run_cmd->add_flag("--fail-on-dnf", run_flags.fail_on_dnf, "exit 3 if any run did not finish");
  run_cmd->add_flag("--force", run_flags.force, "replace an existing output directory");

  std::string snapshot, dot_out;
  auto* dot_cmd = app.add_subcommand("export-dot", "convert a tree.json snapshot to DOT");
  dot_cmd->add_option("snapshot", snapshot, "tree.json written by run")->required();
  dot_cmd->add_option("-o,--output", dot_out, "write here instead of stdout");

  Flags def_flags;
  auto* def_cmd = app.add_subcommand("defaults", "print the fully resolved manifest");
  add_selection(def_cmd, def_flags);

  Flags sum_flags;
  auto* sum_cmd = app.add_subcommand("checksum", "print the stream checksum for a seed");
  add_selection(sum_cmd, sum_flags);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kInvalid;
  }

  try {
    if (*run_cmd) return run(run_flags, *run_cmd);
    if (*dot_cmd) {
      std::map<hge::ExpertId, int> domains;
      const hge::ExpertTree tree = hge::tree_from_json(slurp(snapshot, "snapshot"), &domains);
      const std::string dot = hge::to_dot(tree, domains.empty() ? nullptr : &domains);
      if (dot_out.empty())
        std::cout << dot;
      else
        write_file(dot_out, dot);
      return kOk;
    }
    if (*def_cmd) {
      std::cout << hge::emit_manifest(resolve(def_flags, *def_cmd));
      return kOk;
    }
    if (*sum_cmd) {
      const hge::Manifest m = resolve(sum_flags, *sum_cmd);
      hge::RunConfig cfg = m.run;
      cfg.stream.seed = m.seed;
      if (cfg.stream.kind == hge::ScenarioKind::Custom)
        cfg.stream.dataset = std::make_shared<const hge::Dataset>(
            hge::load_external(cfg.dataset_path, hge::parse_format(cfg.dataset_format)));
      std::cout << hge::checksum_hex(hge::checksum(hge::make_stream(cfg.stream))) << "\n";
      return kOk;
    }
  } catch (const hge::ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kInvalid;
  } catch (const hge::IngestionError& e) {
    std::cerr << "error: stream.dataset_path: " << e.what() << "\n";
    return kInvalid;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kFailure;
  }
  return kFailure;
}
