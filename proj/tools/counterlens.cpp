// counterlens command-line driver: corpus generation and harvesting, profile ingestion,
// dataset building, evaluation and the prediction server.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"

#include "counterlens/corpus_client.hpp"
#include "counterlens/dataset.hpp"
#include "counterlens/eval.hpp"
#include "counterlens/kernel_synth.hpp"
#include "counterlens/profile_ingest.hpp"
#include "counterlens/server.hpp"

namespace fs = std::filesystem;
using namespace counterlens;

namespace {

std::string read_text(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw ConfigError("cannot open " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

nlohmann::json read_json(const fs::path& p) {
  try {
    return nlohmann::json::parse(read_text(p));
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(p.string() + ": " + e.what());
  }
}

void write_jsonl(const fs::path& p, const std::vector<nlohmann::ordered_json>& records) {
  std::string body;
  for (const auto& r : records) body += r.dump() + "\n";
  write_file_atomic(p, body);
}

// Kernel sources of a directory in name order.
std::vector<fs::path> kernel_files(const fs::path& dir) {
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    const auto ext = e.path().extension();
    if (e.is_regular_file() && (ext == ".hip" || ext == ".cpp" || ext == ".cu")) out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  if (out.empty()) throw ConfigError("no kernel sources in " + dir.string());
  return out;
}

// Structural fingerprint for generator-language code, content hash for anything else.
std::string kernel_fingerprint(const std::string& text) {
  try {
    return fingerprint_of(text);
  } catch (const Error&) {
    return "src-" + source::hex64(source::fnv1a64(text));
  }
}

std::vector<std::vector<std::string>> parse_flag_sets(const std::vector<std::string>& raw) {
  std::vector<std::vector<std::string>> sets;
  for (const auto& r : raw) sets.push_back(BuildConfig::split_flags(r == "none" ? "" : r));
  return sets;
}

// --- generate -------------------------------------------------------------------------------

struct GenerateArgs {
  std::string spec_file;
  KernelGenSpec spec;
  std::string dtype = "double";
  std::size_t count = 1;
  std::string out;
  std::string compile_check;
};

void cmd_generate(const GenerateArgs& a) {
  KernelGenSpec base = a.spec;
  base.dtype = dtype_from_name(a.dtype);
  if (!a.spec_file.empty()) base = KernelGenSpec::from_json(read_json(a.spec_file));
  base.validate();
  fs::create_directories(a.out);

  std::vector<GeneratedKernel> kernels;
  std::vector<std::string> names;
  for (std::size_t i = 0; i < a.count; ++i) {
    auto spec = base;
    spec.seed = base.seed + i;
    kernels.push_back(generate(spec));
    char name[32];
    std::snprintf(name, sizeof name, "kernel_%05zu", i);
    names.emplace_back(name);
  }

  std::vector<std::string> status(kernels.size(), "unknown");
  std::vector<std::string> logs(kernels.size());
  if (!a.compile_check.empty()) {
    std::vector<HarvestedKernel> hk;
    for (std::size_t i = 0; i < kernels.size(); ++i) {
      HarvestedKernel k;
      k.id = names[i];
      k.source = kernels[i].source;
      hk.push_back(std::move(k));
    }
    const auto report = compile_filter(std::move(hk), a.compile_check);
    auto record = [&](const HarvestedKernel& k) {
      const auto i = static_cast<std::size_t>(std::find(names.begin(), names.end(), k.id) - names.begin());
      status[i] = std::string(status_name(k.status()));
      logs[i] = k.failure_log();
    };
    for (const auto& k : report.kept) record(k);
    for (const auto& k : report.excluded) record(k);
    std::cerr << report.summary().dump() << "\n";
  }

  for (std::size_t i = 0; i < kernels.size(); ++i) {
    const auto file = names[i] + ".hip";
    write_file_atomic(fs::path(a.out) / file, kernels[i].source);
    auto side = sidecar_json(kernels[i], file);
    side["compile_status"] = status[i];
    if (!logs[i].empty()) side["compile_log"] = logs[i];
    write_file_atomic(fs::path(a.out) / (names[i] + ".json"), side.dump(2) + "\n");
  }
  std::cout << "wrote " << kernels.size() << " kernels to " << a.out << "\n";
}

// --- harvest / filter -----------------------------------------------------------------------

struct HarvestArgs {
  std::string problems, variants, out, raw_log, model, url;
  std::vector<double> temps{0.7};
  std::size_t concurrency = 4;
};

// Endpoint from COUNTERLENS_HARVEST_URL / COUNTERLENS_HARVEST_MODEL / COUNTERLENS_API_KEY.
ChatEndpoint harvest_endpoint(const HarvestArgs& a) {
  ChatEndpoint e;
  if (const char* v = std::getenv("COUNTERLENS_HARVEST_URL")) e.url = v;
  if (const char* v = std::getenv("COUNTERLENS_HARVEST_MODEL")) e.model = v;
  if (const char* v = std::getenv("COUNTERLENS_API_KEY")) e.api_key = v;
  if (!a.url.empty()) e.url = a.url;
  if (!a.model.empty()) e.model = a.model;
  if (e.url.empty()) throw ConfigError("no endpoint: set COUNTERLENS_HARVEST_URL or pass --url");
  return e;
}

int cmd_harvest(const HarvestArgs& a) {
  const auto endpoint = harvest_endpoint(a);
  const auto jobs = expand_jobs(read_list_file(a.problems), read_list_file(a.variants), a.temps, endpoint.model);
  const auto raw_path = a.raw_log.empty() ? fs::path(a.out).replace_extension(".raw.jsonl") : fs::path(a.raw_log);
  RawLog log(raw_path);
  const auto result = harvest(jobs, ChatClient(endpoint), {a.concurrency, &log, true});
  std::vector<nlohmann::ordered_json> records;
  for (const auto& k : result.kernels) records.push_back(k.to_json());
  write_jsonl(a.out, records);
  for (const auto& e : result.errors) {
    std::cerr << chat_error_kind_name(e.kind()) << " [" << e.job().tag << "]: " << e.what() << "\n";
  }
  std::cout << result.kernels.size() << " kernels, " << result.errors.size() << " errors, " << result.skipped
            << " skipped; raw log " << raw_path.string() << "\n";
  return result.errors.empty() ? 0 : 1;
}

struct FilterArgs {
  std::string in, out, excluded, command;
  std::size_t jobs = 4;
};

void cmd_filter(const FilterArgs& a) {
  std::vector<HarvestedKernel> kernels;
  for (const auto& j : read_jsonl(a.in)) kernels.push_back(HarvestedKernel::from_json(j));
  const auto report = compile_filter(std::move(kernels), a.command, {a.jobs, "kernel.hip"});
  std::vector<nlohmann::ordered_json> kept, excluded;
  for (const auto& k : report.kept) kept.push_back(k.to_json());
  for (const auto& k : report.excluded) excluded.push_back(k.to_json());
  write_jsonl(a.out, kept);
  if (!a.excluded.empty()) write_jsonl(a.excluded, excluded);
  std::cout << report.summary().dump(2) << "\n";
}

// --- ingest / expand ------------------------------------------------------------------------

struct IngestArgs {
  std::string in, mapping, out, ranges;
};

int cmd_ingest(const IngestArgs& a) {
  SchemaMapping mapping;
  if (!a.mapping.empty()) mapping = SchemaMapping::from_json(read_json(a.mapping));
  const auto result = ingest(a.in, mapping, load_ranges(a.ranges));
  std::vector<nlohmann::ordered_json> out;
  for (const auto& r : result.records) {
    nlohmann::ordered_json j = {{"row", r.row}, {"kernel", r.kernel}, {"fingerprint", r.fingerprint}};
    j.update(r.config.to_json());
    j["pre_derived"] = r.pre_derived();
    const auto c = derive_metrics(r);
    nlohmann::ordered_json m = nlohmann::ordered_json::object();
    for (auto id : kAllMetrics) m[std::string(metric_key(id))] = c.get(id) ? nlohmann::ordered_json(*c.get(id)) : nullptr;
    j["metrics"] = m;
    out.push_back(std::move(j));
  }
  write_jsonl(a.out, out);
  for (const auto& d : result.rejected) std::cerr << a.in << ": row " << d.row << ": " << d.message << "\n";
  std::cout << result.records.size() << " records, " << result.rejected.size() << " rejected\n";
  return result.rejected.empty() ? 0 : 1;
}

struct ExpandArgs {
  std::string kernels, out, toolkit;
  std::vector<std::string> flags, archs;
};

void cmd_expand(const ExpandArgs& a) {
  std::vector<KernelRef> refs;
  for (const auto& f : kernel_files(a.kernels)) refs.push_back({f.filename().string(), kernel_fingerprint(read_text(f))});
  const auto jobs = expand_configs(refs, parse_flag_sets(a.flags), a.archs, a.toolkit);
  write_manifest(jobs, a.out);
  std::cout << jobs.size() << " build jobs written to " << a.out << "\n";
}

// --- build-dataset / export -----------------------------------------------------------------

struct BuildArgs {
  std::string kernels, profiles, mapping, out, ranges, toolkit;
  std::vector<std::string> flags, archs{"gfx90a", "gfx942"};
  std::size_t renames = 0;
  double train_ratio = 0.9;
  std::size_t test_count = 4000;
  std::uint64_t seed = 0;
  double efficiency = 0.8;
};

// Profiled records joined with their sources, or oracle labels for every
// kernel x rename x flag set x architecture when no profile file is given.
std::vector<LabeledSample> labeled_samples(const BuildArgs& a, const NormRanges& ranges) {
  std::vector<LabeledSample> out;
  if (!a.profiles.empty()) {
    SchemaMapping mapping;
    if (!a.mapping.empty()) mapping = SchemaMapping::from_json(read_json(a.mapping));
    const auto result = ingest(a.profiles, mapping, ranges);
    for (const auto& d : result.rejected) std::cerr << a.profiles << ": row " << d.row << ": " << d.message << "\n";
    for (const auto& r : result.records) {
      LabeledSample s;
      s.source = read_text(fs::path(a.kernels) / r.kernel);
      s.config = r.config;
      s.counters = derive_metrics(r);
      s.origin = Origin::Custom;
      s.fingerprint = r.fingerprint.empty() ? kernel_fingerprint(s.source) : r.fingerprint;
      out.push_back(std::move(s));
    }
    return out;
  }
  const OracleBackend oracle(shipped_peaks(), a.efficiency, ranges);
  const auto flag_sets = a.flags.empty() ? std::vector<std::vector<std::string>>{{}} : parse_flag_sets(a.flags);
  for (const auto& f : kernel_files(a.kernels)) {
    const auto text = read_text(f);
    const auto fp = kernel_fingerprint(text);
    std::vector<std::string> variants{text};
    for (std::size_t r = 0; r < a.renames; ++r) variants.push_back(rename_variables(text, r + 1).text);
    for (const auto& v : variants) {
      for (const auto& flags : flag_sets) {
        for (const auto& arch : a.archs) {
          out.push_back({v, {arch, flags, a.toolkit}, oracle.counters(v, arch), Origin::Oracle, fp});
        }
      }
    }
  }
  return out;
}

void cmd_build_dataset(const BuildArgs& a) {
  const auto ranges = load_ranges(a.ranges);
  std::vector<TrainingSample> samples;
  for (const auto& s : labeled_samples(a, ranges)) samples.push_back(render_sample(s, ranges));
  const auto manifest = assign_splits(samples, {a.train_ratio, a.test_count, a.seed});
  write_dataset(samples, manifest, a.out);
  const auto c = manifest.counts();
  std::cout << samples.size() << " samples; fingerprints train " << c.at(Split::Train) << ", val "
            << c.at(Split::Val) << ", test " << c.at(Split::Test) << "\n";
}

struct ExportArgs {
  std::string dataset, templ = "llama3", out;
};

void cmd_export(const ExportArgs& a) {
  const auto samples = read_dataset(a.dataset);
  export_dataset(samples, a.templ, a.out);
  std::cout << samples.size() << " records written to " << a.out << "\n";
}

// --- eval / serve ---------------------------------------------------------------------------

struct EvalArgs {
  std::string backend = "oracle", test, out, config, server;
  std::size_t parallelism = 4;
  double epsilon = kDefaultEpsilon;
};

ServerConfig server_config(const std::string& path) {
  auto c = path.empty() ? ServerConfig{} : ServerConfig::load(path);
  c.apply_env();
  return c;
}

void cmd_eval(const EvalArgs& a) {
  const auto config = server_config(a.config);
  const auto ranges = load_ranges(config.ranges_path);
  const auto samples = read_split(a.test);
  EvalOptions opts;
  opts.parallelism = a.parallelism;
  opts.epsilon = a.epsilon;
  EvalReport report;
  if (!a.server.empty()) {
    report = evaluate(ServerClientBackend(a.server, a.backend, config.timeout_ms / 1000.0), samples, ranges, opts);
  } else {
    const auto registry = build_registry(config, ranges);
    const auto backend = registry.find(a.backend);
    if (!backend) throw ConfigError("unknown backend '" + a.backend + "'");
    report = evaluate(*backend, samples, ranges, opts);
  }
  report.write(a.out);
  std::cout << report.to_markdown();
}

void cmd_serve(const std::string& path) {
  const auto config = server_config(path);
  PredictServer server(config);
  std::cout << "listening on " << config.host << ":" << config.port << std::endl;
  server.run();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"counterlens: performance-counter prediction pipeline"};
  app.require_subcommand(1);

  GenerateArgs gen;
  auto* g = app.add_subcommand("generate", "Emit synthetic kernels with metadata sidecars");
  g->add_option("--spec", gen.spec_file, "Kernel spec JSON file (overrides the flags below)");
  g->add_option("--inputs", gen.spec.num_inputs);
  g->add_option("--outputs", gen.spec.num_outputs);
  g->add_option("--loads", gen.spec.num_loads);
  g->add_option("--stores", gen.spec.num_stores);
  g->add_option("--compute", gen.spec.num_compute);
  g->add_option("--elements", gen.spec.element_count);
  g->add_option("--block-size", gen.spec.block_size);
  g->add_option("--dtype", gen.dtype)->check(CLI::IsMember({"float", "double"}));
  g->add_option("--recency-p", gen.spec.recency_p);
  g->add_option("--seed", gen.spec.seed, "Seed of the first kernel; kernel i uses seed + i");
  g->add_option("--count", gen.count)->check(CLI::PositiveNumber);
  g->add_option("--out", gen.out)->required();
  g->add_option("--compile-check", gen.compile_check, "Compiler command template with {src}");

  HarvestArgs hv;
  auto* h = app.add_subcommand("harvest", "Collect kernels from a chat-completion endpoint");
  h->add_option("--problems", hv.problems)->required()->check(CLI::ExistingFile);
  h->add_option("--variants", hv.variants)->required()->check(CLI::ExistingFile);
  h->add_option("--temps", hv.temps)->delimiter(',');
  h->add_option("--out", hv.out)->required();
  h->add_option("--raw-log", hv.raw_log, "Append-only log of raw responses (default <out>.raw.jsonl)");
  h->add_option("--model", hv.model);
  h->add_option("--url", hv.url);
  h->add_option("--concurrency", hv.concurrency)->check(CLI::PositiveNumber);

  FilterArgs fl;
  auto* f = app.add_subcommand("filter", "Drop harvested kernels that do not compile");
  f->add_option("--in", fl.in)->required()->check(CLI::ExistingFile);
  f->add_option("--out", fl.out)->required();
  f->add_option("--excluded", fl.excluded);
  f->add_option("--command", fl.command, "Compiler command template with {src}")->required();
  f->add_option("--jobs", fl.jobs)->check(CLI::PositiveNumber);

  IngestArgs in;
  auto* i = app.add_subcommand("ingest", "Parse profiler CSV/JSONL and derive the 12 metrics");
  i->add_option("--in", in.in)->required()->check(CLI::ExistingFile);
  i->add_option("--mapping", in.mapping, "Column mapping JSON {\"columns\": {file column: field}}");
  i->add_option("--out", in.out)->required();
  i->add_option("--ranges", in.ranges);

  ExpandArgs ex;
  auto* e = app.add_subcommand("expand", "Write the flags x architectures build-job manifest");
  e->add_option("--kernels", ex.kernels)->required()->check(CLI::ExistingDirectory);
  e->add_option("--flags", ex.flags, "One flag set per use; 'none' for the empty set");
  e->add_option("--archs", ex.archs)->delimiter(',')->required();
  e->add_option("--toolkit", ex.toolkit);
  e->add_option("--out", ex.out)->required();

  BuildArgs bd;
  auto* b = app.add_subcommand("build-dataset", "Render labeled samples and write split files");
  b->add_option("--kernels", bd.kernels)->required()->check(CLI::ExistingDirectory);
  b->add_option("--profiles", bd.profiles, "Profile records; oracle labels when omitted");
  b->add_option("--mapping", bd.mapping);
  b->add_option("--flags", bd.flags, "One flag set per use; 'none' for the empty set");
  b->add_option("--archs", bd.archs)->delimiter(',');
  b->add_option("--toolkit", bd.toolkit);
  b->add_option("--renames", bd.renames, "Alpha-renamed variants per kernel");
  b->add_option("--train-ratio", bd.train_ratio);
  b->add_option("--test-count", bd.test_count);
  b->add_option("--seed", bd.seed);
  b->add_option("--efficiency", bd.efficiency);
  b->add_option("--ranges", bd.ranges);
  b->add_option("--out", bd.out)->required();

  ExportArgs xp;
  auto* x = app.add_subcommand("export", "Stamp a chat template onto a dataset");
  x->add_option("--dataset", xp.dataset)->required()->check(CLI::ExistingDirectory);
  x->add_option("--template", xp.templ)->check(CLI::IsMember(export_templates()));
  x->add_option("--out", xp.out)->required();

  EvalArgs ev;
  auto* v = app.add_subcommand("eval", "Score a backend on a test split");
  v->add_option("--backend", ev.backend);
  v->add_option("--test", ev.test)->required()->check(CLI::ExistingFile);
  v->add_option("--out", ev.out)->required();
  v->add_option("--config", ev.config, "Server config naming the backends");
  v->add_option("--server", ev.server, "Evaluate through a running server at this URL");
  v->add_option("--parallelism", ev.parallelism)->check(CLI::PositiveNumber);
  v->add_option("--epsilon", ev.epsilon);

  std::string serve_config;
  auto* s = app.add_subcommand("serve", "Run the prediction server");
  s->add_option("--config", serve_config);

  std::string ranges_out;
  auto* r = app.add_subcommand("ranges", "Print the default normalization ranges");
  r->add_option("--out", ranges_out);

  CLI11_PARSE(app, argc, argv);
  try {
    if (*g) cmd_generate(gen);
    if (*h) return cmd_harvest(hv);
    if (*f) cmd_filter(fl);
    if (*i) return cmd_ingest(in);
    if (*e) cmd_expand(ex);
    if (*b) cmd_build_dataset(bd);
    if (*x) cmd_export(xp);
    if (*v) cmd_eval(ev);
    if (*s) cmd_serve(serve_config);
    if (*r) {
      const auto text = NormRanges::defaults().to_json().dump(2) + "\n";
      if (ranges_out.empty()) {
        std::cout << text;
      } else {
        write_file_atomic(ranges_out, text);
      }
    }
  } catch (const std::exception& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return 2;
  }
  return 0;
}
