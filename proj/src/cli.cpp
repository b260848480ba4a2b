#include "semidpo/cli.hpp"

#include <fmt/format.h>

#include <CLI11.hpp>
#include <algorithm>
#include <fstream>

#include "semidpo/config.hpp"
#include "semidpo/datagen.hpp"
#include "semidpo/dpo.hpp"
#include "semidpo/evalrep.hpp"
#include "semidpo/rewards.hpp"
#include "semidpo/semitrain.hpp"

namespace semidpo {
namespace {

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

struct Options {
  std::string config_file;
  std::string out;
  std::string dataset;
  std::string checkpoint;
  std::string baseline;
  std::string ref;
  std::string csv;
  std::vector<std::string> extras;
};

RunConfig resolve_config(const Options& o) {
  nlohmann::json j = o.config_file.empty() ? nlohmann::json(to_json(RunConfig{}))
                                           : nlohmann::json(to_json(load_config(o.config_file)));
  for (std::size_t i = 0; i < o.extras.size(); ++i) {
    const std::string& a = o.extras[i];
    if (a.rfind("--", 0) != 0 || a.size() == 2)
      throw ConfigError("unexpected argument: " + a);
    const auto eq = a.find('=');
    if (eq != std::string::npos) {
      apply_override(j, a.substr(2, eq - 2), a.substr(eq + 1));
    } else {
      if (i + 1 >= o.extras.size()) throw ConfigError("missing value for " + a);
      apply_override(j, a.substr(2), o.extras[++i]);
    }
  }
  RunConfig c = config_from_json(j);
  c.resolve();
  return c;
}

std::string pick(const std::string& flag, const std::string& fallback, const char* what) {
  const std::string& v = flag.empty() ? fallback : flag;
  if (v.empty()) throw ConfigError(fmt::format("no {} given", what));
  return v;
}

void write_json(const ojson& j, const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open for writing: " + path.string());
  os << j.dump(2) << '\n';
  if (!os) throw IoError("write failed: " + path.string());
}

ojson stamp(const RunConfig& c) {
  ojson j;
  j["tool_version"] = kToolVersion;
  j["config_hash"] = config_hash(c);
  return j;
}

void check_dims(const DatasetHeader& h, const RunConfig& c, const std::string& path) {
  if (h.d != c.arch.d || h.d_c != c.arch.d_c)
    throw ConfigError(fmt::format("{}: dataset dims (d={}, d_c={}) do not match config (d={}, d_c={})",
                                  path, h.d, h.d_c, c.arch.d, c.arch.d_c));
}

DenoiserParams load_params(const std::string& path, const RunConfig& c) {
  Checkpoint ck = load_checkpoint(path);
  if (ck.params.arch != c.arch)
    throw ConfigError(path + ": checkpoint architecture does not match config");
  return std::move(ck.params);
}

// ---------------------------------------------------------------------------

int cmd_gen(const RunConfig& c, const Options& o, std::ostream& out) {
  const fs::path path = pick(o.out, c.paths.dataset, "output path (--out)");
  const auto data = gen_dataset(gen_profile(c), c.workers);
  DatasetHeader h;
  h.K = c.committee.size();
  h.seed = c.gen.seed;
  h.config_hash = config_hash(c);
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  save_dataset(data, h, path);

  out << fmt::format("wrote {} pairs to {}\n", data.size(), path.string());
  const auto stats = conflict_stats(data, c.committee);
  for (std::size_t k = 0; k < stats.size(); ++k)
    out << fmt::format("  dim {} ({}): p_a={:.4f} p_c={:.4f} p_tie={:.4f}\n", k,
                       to_string(c.committee.specs[k].kind), stats[k].p_a, stats[k].p_c,
                       stats[k].p_tie);
  return kExitOk;
}

int cmd_filter(const RunConfig& c, const Options& o, std::ostream& out) {
  const std::string in = pick(o.dataset, c.paths.dataset, "dataset (--dataset)");
  const fs::path dir = pick(o.out, c.paths.out_dir, "output directory (--out)");
  const LoadedDataset ds = load_dataset(in);
  check_dims(ds.header, c, in);
  const auto part = consensus_partition(ds.pairs, c.committee, c.workers);

  fs::create_directories(dir);
  DatasetHeader h = ds.header;
  h.K = c.committee.size();
  h.tool_version = kToolVersion;
  h.config_hash = config_hash(c);
  save_dataset(part.labeled, h, dir / "labeled.jsonl");
  save_dataset(part.unlabeled, h, dir / "unlabeled.jsonl");

  ojson j = stamp(c);
  j["dataset"] = in;
  j["n_total"] = part.stats.n_total;
  j["n_labeled"] = part.stats.n_labeled;
  j["n_unlabeled"] = part.stats.n_unlabeled;
  j["labeled_fraction"] = part.stats.n_total == 0
                              ? 0.0
                              : static_cast<double>(part.stats.n_labeled) / part.stats.n_total;
  j["agree_counts"] = part.stats.agree_counts;
  auto cs = ojson::array();
  for (const auto& s : conflict_stats(ds.pairs, c.committee))
    cs.push_back({{"p_a", s.p_a}, {"p_c", s.p_c}, {"p_tie", s.p_tie}});
  j["conflict_stats"] = cs;
  write_json(j, dir / "filter_stats.json");

  out << fmt::format("labeled {} / {} ({:.4f}), unlabeled {}\n", part.stats.n_labeled,
                     part.stats.n_total, j["labeled_fraction"].get<double>(),
                     part.stats.n_unlabeled);
  return kExitOk;
}

int cmd_train(const RunConfig& c, const Options& o, std::ostream& out) {
  const std::string in = pick(o.dataset, c.paths.dataset, "dataset (--dataset)");
  const fs::path dir = pick(o.out, c.paths.out_dir, "output directory (--out)");
  const LoadedDataset ds = load_dataset(in);
  check_dims(ds.header, c, in);
  const NoiseSchedule sched = make_schedule(c);
  const std::string ref_path = o.ref.empty() ? c.paths.ref_checkpoint : o.ref;
  const DenoiserParams ref =
      ref_path.empty() ? pretrain_reference(c, ds.pairs, sched) : load_params(ref_path, c);

  const PipelineResult res = run_pipeline(c, ds.pairs, ref, dir);
  out << fmt::format("mode={} iterations={} clean={} unlabeled={}\n", c.train.mode,
                     res.iterates.size(), res.partition.n_labeled, res.partition.n_unlabeled);
  for (std::size_t i = 0; i < res.evals.size(); ++i)
    out << fmt::format("  iter{}: aggregate={:.6f}\n", i, res.evals[i].aggregate);
  out << fmt::format("artifacts in {}\n", dir.string());
  return kExitOk;
}

int cmd_diagnose(const RunConfig& c, const Options& o, std::ostream& out) {
  const std::string in = pick(o.dataset, c.paths.dataset, "dataset (--dataset)");
  const std::string ck = pick(o.checkpoint, "", "checkpoint (--checkpoint)");
  const fs::path path = pick(o.out, "", "output path (--out)");
  const LoadedDataset ds = load_dataset(in);
  check_dims(ds.header, c, in);
  const DenoiserParams params = load_params(ck, c);
  const std::string ref_path = o.ref.empty() ? c.paths.ref_checkpoint : o.ref;
  const DenoiserParams ref = ref_path.empty() ? params : load_params(ref_path, c);
  const NoiseSchedule sched = make_schedule(c);

  const std::size_t n = std::min(ds.pairs.size(), c.diagnose.max_pairs);
  const std::span<const PreferencePair> pairs(ds.pairs.data(), n);
  const auto intervals = make_intervals(sched.T, c.threshold.intervals);

  ojson j = stamp(c);
  j["dataset"] = in;
  j["checkpoint"] = ck;
  j["n_pairs"] = n;
  auto dims = ojson::array();
  std::size_t violations = 0;
  for (std::size_t k = 0; k < c.committee.size(); ++k) {
    auto buckets = ojson::array();
    for (std::size_t b = 0; b < intervals.size(); ++b) {
      const int t = 1 + (intervals[b].lo + intervals[b].hi - 1) / 2;
      Rng rng(derive_seed(c.diagnose.seed, k * intervals.size() + b));
      std::vector<Vec> eps(n);
      for (auto& e : eps) e = normal_vector(rng, c.arch.d);
      ojson e;
      e["interval"] = {intervals[b].lo, intervals[b].hi};
      e["t"] = t;
      const auto members = std::count_if(pairs.begin(), pairs.end(), [&](const PreferencePair& p) {
        return k < p.delta_r.size() && p.delta_r[k] != 0.0;
      });
      if (members < 2) {
        e["skipped"] = "fewer than two pairs with a nonzero reward difference";
        buckets.push_back(e);
        continue;
      }
      const VarianceReport r =
          variance_report(params, ref, pairs, k, t, eps, c.train.beta_dpo, sched, c.workers);
      const bool holds = r.var_xi >= r.bound * (1.0 - 1e-12);
      violations += !holds;
      e["var_xi"] = r.var_xi;
      e["intra"] = r.intra;
      e["inter"] = r.inter;
      e["bound"] = r.bound;
      e["p_a"] = r.p_a;
      e["p_c"] = r.p_c;
      e["m_a"] = r.m_a;
      e["m_c"] = r.m_c;
      e["n_a"] = r.n_a;
      e["n_c"] = r.n_c;
      e["bound_holds"] = holds;
      buckets.push_back(e);
    }
    dims.push_back({{"dimension", k},
                    {"kind", to_string(c.committee.specs[k].kind)},
                    {"buckets", buckets}});
  }
  j["dimensions"] = dims;
  j["bound_violations"] = violations;
  write_json(j, path);
  out << fmt::format("variance report for {} dimensions x {} buckets written to {} ({} violations)\n",
                     c.committee.size(), intervals.size(), path.string(), violations);
  if (violations > 0) throw NumericError("variance lower bound violated");
  return kExitOk;
}

int cmd_eval(const RunConfig& c, const Options& o, std::ostream& out) {
  const std::string ck = pick(o.checkpoint, "", "checkpoint (--checkpoint)");
  const fs::path path = pick(o.out, "", "output path (--out)");
  const DenoiserParams params = load_params(ck, c);
  const NoiseSchedule sched = make_schedule(c);
  const auto prompts = eval_prompts(c.eval.n_prompts, c.arch.d_c, c.eval.seed);
  EvalReport rep = evaluate_model(params, c.committee, prompts, c.eval.samples_per_prompt, sched,
                                  c.eval.seed, c.workers);
  if (!o.baseline.empty()) {
    const DenoiserParams base = load_params(o.baseline, c);
    rep.win_rate = compare_models(params, base, c.committee, prompts, c.eval.samples_per_prompt,
                                  sched, c.eval.seed, c.workers);
  }
  ojson j = stamp(c);
  j["checkpoint"] = ck;
  if (!o.baseline.empty()) j["baseline"] = o.baseline;
  j["report"] = to_json(rep);
  write_json(j, path);
  if (!o.csv.empty()) write_eval_csv(rep, c.committee, o.csv);

  out << fmt::format("aggregate={:.6f} over {} samples\n", rep.aggregate, rep.sample_count);
  for (std::size_t k = 0; k < rep.mean_reward.size(); ++k)
    out << fmt::format("  dim {} ({}): mean={:.6f}{}\n", k, to_string(c.committee.specs[k].kind),
                       rep.mean_reward[k],
                       rep.win_rate.empty() ? "" : fmt::format(" win_rate={:.4f}", rep.win_rate[k]));
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Semi-DPO lab: synthetic preference data, consensus filtering and DPO training"};
  app.set_version_flag("--version", std::string(kToolVersion));
  app.require_subcommand(1);

  Options o;
  auto add = [&](const std::string& name, const std::string& desc) {
    CLI::App* s = app.add_subcommand(name, desc);
    s->allow_extras();
    s->add_option("--config", o.config_file, "JSON config file");
    s->add_option("--out", o.out, "output file or directory");
    s->footer("Any other --section.field=value flag overrides that config field.");
    return s;
  };
  CLI::App* gen = add("gen", "generate a synthetic preference dataset");
  CLI::App* filter = add("filter", "split a dataset by committee consensus");
  filter->add_option("--dataset", o.dataset, "input dataset");
  CLI::App* train = add("train", "run the training pipeline");
  train->add_option("--dataset", o.dataset, "input dataset");
  train->add_option("--ref", o.ref, "reference checkpoint (pretrained if omitted)");
  CLI::App* diag = add("diagnose", "write the gradient variance report");
  diag->add_option("--dataset", o.dataset, "input dataset");
  diag->add_option("--checkpoint", o.checkpoint, "model checkpoint");
  diag->add_option("--ref", o.ref, "reference checkpoint (defaults to the model itself)");
  CLI::App* eval = add("eval", "evaluate a checkpoint with the reward committee");
  eval->add_option("--checkpoint", o.checkpoint, "model checkpoint");
  eval->add_option("--baseline", o.baseline, "baseline checkpoint for win rates");
  eval->add_option("--csv", o.csv, "also write a CSV summary");

  try {
    std::vector<std::string> rev(args.rbegin(), args.rend());
    app.parse(rev);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    CLI::App* sub = app.get_subcommands().front();
    o.extras = sub->remaining();
    const RunConfig c = resolve_config(o);
    if (sub == gen) return cmd_gen(c, o, out);
    if (sub == filter) return cmd_filter(c, o, out);
    if (sub == train) return cmd_train(c, o, out);
    if (sub == diag) return cmd_diagnose(c, o, out);
    return cmd_eval(c, o, out);
  } catch (const NumericError& e) {
    err << "numeric failure: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const IoError& e) {
    err << "I/O error: " << e.what() << '\n';
    return kExitIo;
  } catch (const fs::filesystem_error& e) {
    err << "I/O error: " << e.what() << '\n';
    return kExitIo;
  } catch (const std::invalid_argument& e) {
    err << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::out_of_range& e) {
    err << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
}

}  // namespace semidpo
