#include "nat/cli.hpp"

#include <omp.h>

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <optional>
#include <ostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "nat/bench.hpp"
#include "nat/eval.hpp"
#include "nat/joint_features.hpp"
#include "nat/synth.hpp"
#include "nat/training.hpp"

namespace nat::cli {

using nlohmann::json;

std::filesystem::path output_dir(const RunConfig& cfg) {
  if (const char* env = std::getenv(kOutputDirEnv); env && *env) return env;
  return cfg.out_dir;
}

namespace {

struct Common {
  std::string config;
  std::vector<std::string> sets;
  std::string data;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> threads;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "key=value config file");
  cmd->add_option("--set", c.sets, "override one config key (key=value), repeatable");
  cmd->add_option("--data", c.data, "dataset path, or synth:triadic / synth:barbell");
  cmd->add_option("--out", c.out, "run directory");
  cmd->add_option("--seed", c.seed, "random seed");
  cmd->add_option("--threads", c.threads, "worker threads, 0 = all cores");
}

RunConfig resolve(const Common& c, std::ostream& err) {
  RunConfig cfg = c.config.empty() ? RunConfig{} : load_run_config(c.config);
  try {
    for (const auto& s : c.sets) apply_override(cfg, s);
  } catch (const InputError& e) {
    throw UsageError(e.what());
  }
  if (!c.data.empty()) cfg.data = c.data;
  if (!c.out.empty()) cfg.out_dir = c.out;
  if (c.seed) cfg.seed = *c.seed;
  if (c.threads) cfg.threads = *c.threads;
  try {
    cfg.validate();
  } catch (const InputError& e) {
    throw UsageError(e.what());
  }
  for (const auto& w : cfg.warnings()) err << "warning: " << w << "\n";
  if (cfg.threads > 0) omp_set_num_threads(static_cast<int>(cfg.threads));
  return cfg;
}

void require_data(const RunConfig& cfg) {
  if (cfg.data.empty()) throw UsageError("a dataset is required (--data or data= in the config)");
}

std::filesystem::path prepare_dir(const RunConfig& cfg) {
  const auto dir = output_dir(cfg);
  std::filesystem::create_directories(dir);
  std::ofstream(dir / "config.txt") << to_text(cfg);
  return dir;
}

json report_json(const eval::EvalReport& r) {
  return {{"split", eval::to_string(r.split)}, {"mode", eval::to_string(r.mode)}, {"ap", r.ap},
          {"auc", r.auc},   {"n_pos", r.n_pos},  {"n_neg", r.n_neg},  {"seconds", r.seconds}};
}

void print_reports(std::ostream& out, const std::vector<eval::EvalReport>& reports) {
  out << std::left << std::setw(6) << "split" << std::setw(14) << "mode" << std::setw(9) << "AP" << std::setw(9)
      << "AUC"
      << "links\n";
  for (const auto& r : reports) {
    out << std::setw(6) << eval::to_string(r.split) << std::setw(14) << eval::to_string(r.mode) << std::fixed
        << std::setprecision(4) << std::setw(9) << r.ap << std::setw(9) << r.auc << r.n_pos << "\n";
  }
  out.unsetf(std::ios::fixed);
}

graph::SplitPlan make_plan(const graph::Dataset& ds, const RunConfig& cfg) {
  auto plan = graph::chronological_split(ds, cfg.train_frac, cfg.val_frac);
  if (cfg.mask_p > 0.0) plan = graph::inductive_mask(ds, plan, cfg.mask_p, cfg.seed);
  return plan;
}

cache::CacheConfig cache_for(const RunConfig& cfg, const graph::Dataset& ds, const neural::Model& model) {
  return neural::cache_config_for(cfg.cache_config(ds.num_nodes), model.config());
}

void replay(cache::NCacheStore& store, const neural::Model& model, std::span<const graph::TemporalEdge> edges,
            std::size_t batch) {
  for (std::size_t i = 0; i < edges.size(); i += batch) {
    cache::apply_batch(store, edges.subspan(i, std::min(batch, edges.size() - i)), model);
  }
}

// Fresh store, replay of the unmasked training stream, then val (committed)
// and test.
std::vector<eval::EvalReport> transductive_reports(const graph::Dataset& ds, const graph::SplitPlan& plan,
                                                   const neural::Model& model, const RunConfig& cfg,
                                                   cache::NCacheStore* final_store = nullptr) {
  cache::NCacheStore store(cache_for(cfg, ds, model));
  const auto train = graph::unmasked_edges(graph::train_segment(ds, plan), plan);
  const auto val = graph::unmasked_edges(graph::val_segment(ds, plan), plan);
  const auto test = graph::unmasked_edges(graph::test_segment(ds, plan), plan);
  const auto universe = ds.destination_universe();
  replay(store, model, train, cfg.batch_size);
  std::vector<eval::EvalReport> out;
  eval::StreamOptions opts{cfg.eval_batch_size, true, eval::Split::val, eval::Mode::transductive};
  out.push_back(eval::evaluate_stream(store, model, val, universe, eval::split_seed(cfg.seed, eval::Split::val), opts));
  opts.split = eval::Split::test;
  opts.commit_updates = false;
  for (std::size_t k = 0; k < cfg.eval_seeds; ++k) {
    out.push_back(
        eval::evaluate_stream(store, model, test, universe, eval::split_seed(cfg.seed + k, eval::Split::test), opts));
  }
  if (final_store) *final_store = store;
  return out;
}

void write_jsonl(const std::filesystem::path& path, const std::vector<json>& lines) {
  std::ofstream f(path);
  for (const auto& j : lines) f << j.dump() << "\n";
}

struct TrainOutcome {
  neural::Model model;
  neural::FitResult fit;
};

TrainOutcome train_model(const graph::Dataset& ds, const graph::SplitPlan& plan, const RunConfig& cfg,
                         const std::function<void(const neural::EpochRecord&)>& on_epoch) {
  auto mc = cfg.model_config(ds.d_e);
  neural::set_time_normalization(mc, graph::train_segment(ds, plan));
  neural::Model model(mc, cfg.seed);
  auto result = neural::fit(ds, plan, cfg.cache_config(ds.num_nodes), model, cfg.train_config(), on_epoch);
  return {std::move(model), std::move(result)};
}

int cmd_train(const RunConfig& cfg, std::ostream& out) {
  require_data(cfg);
  const auto ds = load_dataset(cfg);
  const auto plan = make_plan(ds, cfg);
  const auto dir = prepare_dir(cfg);
  {
    std::ofstream f(dir / "split.txt");
    graph::write_split_plan(plan, f);
  }
  std::ofstream metrics(dir / "metrics.jsonl");
  auto trained = train_model(ds, plan, cfg, [&](const neural::EpochRecord& r) {
    const json j = {{"epoch", r.epoch}, {"train_loss", r.train_loss}, {"val_ap", r.val_ap}, {"val_auc", r.val_auc},
                    {"seconds", r.seconds}};
    metrics << j.dump() << "\n" << std::flush;
    out << j.dump() << "\n";
  });
  neural::save_model_file(trained.model, dir / "model.nat");

  cache::NCacheStore store(cache_for(cfg, ds, trained.model));
  auto reports = transductive_reports(ds, plan, trained.model, cfg, &store);
  cache::save_cache_file(store, dir / "cache.nat");
  if (!plan.masked_nodes.empty()) {
    reports.push_back(eval::evaluate_inductive(ds, plan, trained.model, cfg.cache_config(ds.num_nodes), cfg.seed, true,
                                               cfg.eval_batch_size));
  }
  std::vector<json> lines;
  for (const auto& r : reports) lines.push_back(report_json(r));
  write_jsonl(dir / "report.jsonl", lines);
  out << "best epoch " << trained.fit.best_epoch << ", outputs in " << dir.string() << "\n";
  print_reports(out, reports);
  return 0;
}

int cmd_eval(const RunConfig& cfg, const std::string& checkpoint, const std::string& mode,
             const std::string& plan_path, std::ostream& out) {
  require_data(cfg);
  if (mode != "transductive" && mode != "inductive") throw UsageError("mode must be transductive or inductive");
  if (mode == "inductive" && plan_path.empty()) throw UsageError("inductive evaluation needs --split-plan");
  const auto model = neural::load_model_file(checkpoint);
  const auto ds = load_dataset(cfg);
  if (ds.d_e != model.config().d_e) {
    throw InputError("checkpoint expects edge features of width " + std::to_string(model.config().d_e) +
                     ", dataset has " + std::to_string(ds.d_e));
  }
  graph::SplitPlan plan = make_plan(ds, cfg);
  if (!plan_path.empty()) {
    std::ifstream f(plan_path);
    if (!f) throw InputError("cannot open split plan " + plan_path);
    plan = graph::read_split_plan(f);
    if (plan.num_edges != ds.edges.size()) throw InputError("split plan was made for a different dataset");
  }
  std::vector<eval::EvalReport> reports;
  if (mode == "inductive") {
    if (plan.masked_nodes.empty()) throw InputError("split plan masks no nodes; inductive evaluation is undefined");
    reports.push_back(eval::evaluate_inductive(ds, plan, model, cfg.cache_config(ds.num_nodes), cfg.seed, true,
                                               cfg.eval_batch_size));
  } else {
    reports = transductive_reports(ds, plan, model, cfg);
  }
  const auto dir = prepare_dir(cfg);
  std::vector<json> lines;
  for (const auto& r : reports) {
    lines.push_back(report_json(r));
    out << lines.back().dump() << "\n";
  }
  write_jsonl(dir / ("eval_" + mode + ".jsonl"), lines);
  print_reports(out, reports);
  return 0;
}

int cmd_ablate(const RunConfig& cfg, const std::string& flags, std::ostream& out) {
  require_data(cfg);
  const auto ds = load_dataset(cfg);
  const auto plan = make_plan(ds, cfg);
  const auto dir = prepare_dir(cfg);
  std::vector<std::string> variants{"none"};
  std::stringstream ss(flags);
  for (std::string f; std::getline(ss, f, ',');) {
    if (f.empty() || f == "none") continue;
    try {
      neural::Ablations::parse(f);
    } catch (const InputError& e) {
      throw UsageError(e.what());
    }
    variants.push_back(f);
  }
  std::vector<json> lines;
  double base_ap = 0.0;
  out << std::left << std::setw(16) << "variant" << std::setw(9) << "val AP" << std::setw(9) << "test AP"
      << "delta AP\n";
  for (const auto& v : variants) {
    RunConfig c = cfg;
    c.ablations = v;
    const auto trained = train_model(ds, plan, c, {});
    const double ap = trained.fit.test.ap;
    if (v == "none") base_ap = ap;
    const double delta = ap - base_ap;
    lines.push_back({{"variant", v}, {"val_ap", trained.fit.val.ap}, {"test_ap", ap}, {"delta_ap", delta}});
    out << std::setw(16) << v << std::fixed << std::setprecision(4) << std::setw(9) << trained.fit.val.ap
        << std::setw(9) << ap << std::showpos << delta << std::noshowpos << "\n";
    out.unsetf(std::ios::fixed);
  }
  write_jsonl(dir / "ablate.jsonl", lines);
  return 0;
}

int cmd_bench(const RunConfig& cfg, const std::vector<std::size_t>& batch_sizes, std::ostream& out) {
  const RunConfig c = [&] {
    RunConfig r = cfg;
    if (r.data.empty()) r.data = "synth:triadic";
    return r;
  }();
  const auto ds = load_dataset(c);
  const neural::Model model(c.model_config(ds.d_e), c.seed);
  const auto cc = cache_for(c, ds, model);
  std::vector<json> lines;
  for (const auto& r : bench::measure(ds.edges, cc, model, batch_sizes)) {
    lines.push_back({{"kernel", r.kernel}, {"impl", r.impl},      {"batch", r.batch},
                     {"items", r.items},   {"seconds", r.seconds}, {"per_second", r.per_second}});
  }
  lines.push_back({{"kernel", "memory"},
                   {"d0", cc.d0},
                   {"M1", cc.capacity(1)},
                   {"M2", cc.capacity(2)},
                   {"F", cc.F},
                   {"K", cc.K},
                   {"scalars_per_node", bench::scalars_per_node(cc)},
                   {"threads", omp_get_max_threads()}});
  for (const auto& j : lines) out << j.dump() << "\n";
  write_jsonl(prepare_dir(c) / "bench.jsonl", lines);
  return 0;
}

int cmd_synth(const std::string& kind, std::size_t n, std::uint64_t seed, const std::string& path,
              std::ostream& out) {
  if (n < 10) throw UsageError("--n must be at least 10");
  if (kind != "triadic" && kind != "barbell") throw UsageError("--kind must be triadic or barbell");
  const auto ds = synth::generate(kind, n, seed);
  if (path.empty() || path == "-") {
    graph::write_edge_list(ds, out);
  } else {
    graph::save_edge_list(ds, path);
  }
  return 0;
}

int cmd_inspect_cache(const std::string& path, const std::vector<NodeId>& nodes, std::ostream& out) {
  const auto store = cache::load_cache_file(path);
  const auto& c = store.config();
  out << "nodes " << c.num_nodes << " M1 " << c.capacity(1) << " M2 " << c.capacity(2) << " F " << c.F << " d0 "
      << c.d0 << " K " << c.K << " alpha " << c.alpha << " events " << store.event_count() << "\n";
  std::vector<NodeId> show = nodes;
  if (show.empty()) {
    for (NodeId u = 1; u <= std::min<std::size_t>(c.num_nodes, 5); ++u) show.push_back(u);
  }
  for (NodeId u : show) {
    if (u == kEmpty || u > c.num_nodes) throw InputError("node " + std::to_string(u) + " is not in the cache");
    out << cache::describe_node(store, u);
  }
  return 0;
}

int cmd_dump_features(const RunConfig& cfg, const std::string& checkpoint, std::size_t limit, std::ostream& out) {
  require_data(cfg);
  const auto model = neural::load_model_file(checkpoint);
  const auto ds = load_dataset(cfg);
  const auto plan = make_plan(ds, cfg);
  cache::NCacheStore store(cache_for(cfg, ds, model));
  replay(store, model, graph::unmasked_edges(graph::train_segment(ds, plan), plan), cfg.batch_size);
  const auto val = graph::unmasked_edges(graph::val_segment(ds, plan), plan);
  const auto proj = model.projection();
  for (std::size_t i = 0; i < std::min(limit, val.size()); ++i) {
    const auto& e = val[i];
    for (const auto& f : features::build_joint(store, e.src, e.dst, proj)) {
      const json j = {{"link", i}, {"u", e.src}, {"v", e.dst}, {"node", f.node}, {"de", f.de}, {"q", f.q}};
      out << j.dump() << "\n";
    }
  }
  return 0;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"NAT temporal link prediction"};
  app.require_subcommand(1);

  Common train_c, eval_c, ablate_c, bench_c, dump_c;
  auto* train = app.add_subcommand("train", "train a model and report validation/test metrics");
  add_common(train, train_c);

  auto* evalc = app.add_subcommand("eval", "evaluate a checkpoint");
  add_common(evalc, eval_c);
  std::string checkpoint, mode = "transductive", plan_path;
  evalc->add_option("--checkpoint", checkpoint, "model checkpoint")->required();
  evalc->add_option("--mode", mode, "transductive or inductive");
  evalc->add_option("--split-plan", plan_path, "split plan written by train");

  auto* ablate = app.add_subcommand("ablate", "train the baseline and each ablation with a shared seed");
  add_common(ablate, ablate_c);
  std::string flags;
  ablate->add_option("--flags", flags, "comma-separated ablations");

  auto* benchc = app.add_subcommand("bench", "cache kernel throughput and memory per node");
  add_common(benchc, bench_c);
  std::vector<std::size_t> batch_sizes{1, 8, 64};
  benchc->add_option("--batch-sizes", batch_sizes, "batch sizes")->delimiter(',');

  auto* synthc = app.add_subcommand("synth", "write a synthetic edge stream");
  std::string kind = "triadic", synth_out;
  std::size_t n = 0;
  std::uint64_t synth_seed = 0;
  synthc->add_option("--kind", kind, "triadic or barbell");
  synthc->add_option("--n", n, "number of events")->required();
  synthc->add_option("--seed", synth_seed, "random seed");
  synthc->add_option("--out", synth_out, "output file, '-' for stdout");

  auto* inspect = app.add_subcommand("inspect-cache", "list cached keys per hop");
  std::string cache_path;
  std::vector<NodeId> nodes;
  inspect->add_option("--cache", cache_path, "cache checkpoint")->required();
  inspect->add_option("--node", nodes, "node ids")->delimiter(',');

  auto* dump = app.add_subcommand("dump-features", "joint features of the first validation links");
  add_common(dump, dump_c);
  std::string dump_checkpoint;
  std::size_t limit = 10;
  dump->add_option("--checkpoint", dump_checkpoint, "model checkpoint")->required();
  dump->add_option("--limit", limit, "number of links");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err) == 0 ? 0 : 2;
  }

  try {
    if (*train) return cmd_train(resolve(train_c, err), out);
    if (*evalc) return cmd_eval(resolve(eval_c, err), checkpoint, mode, plan_path, out);
    if (*ablate) return cmd_ablate(resolve(ablate_c, err), flags, out);
    if (*benchc) return cmd_bench(resolve(bench_c, err), batch_sizes, out);
    if (*synthc) return cmd_synth(kind, n, synth_seed, synth_out, out);
    if (*inspect) return cmd_inspect_cache(cache_path, nodes, out);
    if (*dump) return cmd_dump_features(resolve(dump_c, err), dump_checkpoint, limit, out);
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}

}  // namespace nat::cli
