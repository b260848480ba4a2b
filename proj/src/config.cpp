#include "semidpo/config.hpp"

#include <fmt/format.h>

#include <fstream>
#include <type_traits>

namespace semidpo {

RunConfig::RunConfig() {
  committee.specs = {alignment_reward(), magnitude_reward(1.5), roughness_reward()};
}

void RunConfig::resolve() {
  if (workers < 1) throw ConfigError("workers must be >= 1");
  if (schedule.T < 1) throw ConfigError("schedule.T must be >= 1");
  arch.horizon = schedule.T;
  arch.validate();
  if (committee.size() < 1) throw ConfigError("committee must have at least one reward");
  const auto& t = train;
  if (t.mode != "semi" && t.mode != "clean_only" && t.mode != "dpo_all")
    throw ConfigError("train.mode must be one of semi, clean_only, dpo_all");
  if (t.iterations < 0) throw ConfigError("train.iterations must be >= 0");
  if (t.cold_start_steps < 0 || t.iter_steps < 0) throw ConfigError("train steps must be >= 0");
  if (!(t.lr0 >= 0.0 && t.lr_iter >= 0.0)) throw ConfigError("learning rates must be >= 0");
  if (t.batch < 1) throw ConfigError("train.batch must be >= 1");
  if (!(t.beta_dpo > 0.0)) throw ConfigError("train.beta_dpo must be > 0");
  if (!(t.test_frac > 0.0 && t.test_frac < 1.0)) throw ConfigError("train.test_frac must be in (0,1)");
  if (!(t.warmup_frac >= 0.0 && t.warmup_frac <= 1.0))
    throw ConfigError("train.warmup_frac must be in [0,1]");
  const auto& th = threshold;
  if (th.intervals < 1 || th.intervals > schedule.T)
    throw ConfigError("threshold.intervals must be in [1, T]");
  if (!(th.percentile > 0.0 && th.percentile < 1.0))
    throw ConfigError("threshold.percentile must be in (0,1)");
  if (!(th.acc_floor >= 0.0 && th.acc_floor <= 1.0))
    throw ConfigError("threshold.acc_floor must be in [0,1]");
  if (!(th.raise_step > 0.0 && th.raise_step <= 1.0))
    throw ConfigError("threshold.raise_step must be in (0,1]");
  if (th.draws_per_pair < 1 || th.draws_per_pair > schedule.T)
    throw ConfigError("threshold.draws_per_pair must be in [1, T]");
  if (th.accuracy_draws < 1) throw ConfigError("threshold.accuracy_draws must be >= 1");
  if (pretrain.batch < 1) throw ConfigError("pretrain.batch must be >= 1");
}

nlohmann::ordered_json to_json(const RewardSpec& s) {
  nlohmann::ordered_json j;
  j["kind"] = to_string(s.kind);
  if (s.kind == RewardKind::magnitude) j["radius"] = s.radius;
  if (s.kind == RewardKind::axis) j["u"] = s.axis;
  return j;
}

RewardSpec reward_spec_from_json(const nlohmann::json& j) {
  const RewardKind kind = reward_kind_from_string(j.at("kind").get<std::string>());
  switch (kind) {
    case RewardKind::alignment: return alignment_reward();
    case RewardKind::magnitude: return magnitude_reward(j.value("radius", 1.0));
    case RewardKind::roughness: return roughness_reward();
    case RewardKind::axis: return axis_reward(j.at("u").get<Vec>());
  }
  throw ConfigError("unreachable reward kind");
}

nlohmann::ordered_json to_json(const RunConfig& c) {
  nlohmann::ordered_json j;
  j["seed"] = c.seed;
  j["workers"] = c.workers;
  j["schedule"] = {{"T", c.schedule.T},
                   {"beta_start", c.schedule.beta_start},
                   {"beta_end", c.schedule.beta_end}};
  j["arch"] = {{"d", c.arch.d},
               {"d_c", c.arch.d_c},
               {"time_emb", c.arch.time_emb},
               {"hidden", c.arch.hidden},
               {"activation", to_string(c.arch.activation)}};
  auto comm = nlohmann::ordered_json::array();
  for (const auto& s : c.committee.specs) comm.push_back(to_json(s));
  j["committee"] = comm;
  j["gen"] = {{"n_pairs", c.gen.n_pairs},
              {"concentration", c.gen.concentration},
              {"noise_scale", c.gen.noise_scale},
              {"seed", c.gen.seed}};
  j["pretrain"] = {{"steps", c.pretrain.steps},
                   {"lr", c.pretrain.lr},
                   {"momentum", c.pretrain.momentum},
                   {"batch", c.pretrain.batch}};
  const auto& t = c.train;
  j["train"] = {{"mode", t.mode},
                {"iterations", t.iterations},
                {"cold_start_steps", t.cold_start_steps},
                {"iter_steps", t.iter_steps},
                {"lr0", t.lr0},
                {"lr_iter", t.lr_iter},
                {"momentum", t.momentum},
                {"batch", t.batch},
                {"warmup_frac", t.warmup_frac},
                {"anchor_weight", t.anchor_weight},
                {"pseudo_weight", t.pseudo_weight},
                {"test_frac", t.test_frac},
                {"beta_dpo", t.beta_dpo},
                {"log_every", t.log_every}};
  const auto& th = c.threshold;
  j["threshold"] = {{"intervals", th.intervals},
                    {"percentile", th.percentile},
                    {"acc_floor", th.acc_floor},
                    {"raise_step", th.raise_step},
                    {"draws_per_pair", th.draws_per_pair},
                    {"accuracy_draws", th.accuracy_draws}};
  j["eval"] = {{"n_prompts", c.eval.n_prompts},
               {"samples_per_prompt", c.eval.samples_per_prompt},
               {"seed", c.eval.seed}};
  j["diagnose"] = {{"seed", c.diagnose.seed}, {"max_pairs", c.diagnose.max_pairs}};
  j["paths"] = {{"dataset", c.paths.dataset},
                {"out_dir", c.paths.out_dir},
                {"ref_checkpoint", c.paths.ref_checkpoint}};
  return j;
}

namespace {

template <class T>
void read(const nlohmann::json& j, const char* key, T& dst) {
  if (!j.contains(key)) return;
  const auto& v = j.at(key);
  if constexpr (std::is_unsigned_v<T>)
    if (v.is_number_integer() && !v.is_number_unsigned() && v.get<std::int64_t>() < 0)
      throw ConfigError(std::string("config: '") + key + "' must be non-negative");
  dst = v.get<T>();
}

void reject_unknown(const nlohmann::json& j, std::initializer_list<const char*> keys,
                    const std::string& where) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool known = false;
    for (const char* k : keys) known = known || it.key() == k;
    if (!known) throw ConfigError("unknown config field '" + where + it.key() + "'");
  }
}

}  // namespace

RunConfig config_from_json(const nlohmann::json& j) {
  RunConfig c;
  try {
    reject_unknown(j, {"seed", "workers", "schedule", "arch", "committee", "gen", "pretrain",
                       "train", "threshold", "eval", "diagnose", "paths"},
                   "");
    read(j, "seed", c.seed);
    read(j, "workers", c.workers);
    if (j.contains("schedule")) {
      const auto& s = j.at("schedule");
      reject_unknown(s, {"T", "beta_start", "beta_end"}, "schedule.");
      read(s, "T", c.schedule.T);
      read(s, "beta_start", c.schedule.beta_start);
      read(s, "beta_end", c.schedule.beta_end);
    }
    if (j.contains("arch")) {
      const auto& a = j.at("arch");
      reject_unknown(a, {"d", "d_c", "time_emb", "hidden", "activation"}, "arch.");
      read(a, "d", c.arch.d);
      read(a, "d_c", c.arch.d_c);
      read(a, "time_emb", c.arch.time_emb);
      read(a, "hidden", c.arch.hidden);
      if (a.contains("activation"))
        c.arch.activation = activation_from_string(a.at("activation").get<std::string>());
    }
    if (j.contains("committee")) {
      c.committee.specs.clear();
      for (const auto& s : j.at("committee")) c.committee.specs.push_back(reward_spec_from_json(s));
    }
    if (j.contains("gen")) {
      const auto& g = j.at("gen");
      reject_unknown(g, {"n_pairs", "concentration", "noise_scale", "seed"}, "gen.");
      read(g, "n_pairs", c.gen.n_pairs);
      read(g, "concentration", c.gen.concentration);
      read(g, "noise_scale", c.gen.noise_scale);
      read(g, "seed", c.gen.seed);
    }
    if (j.contains("pretrain")) {
      const auto& p = j.at("pretrain");
      reject_unknown(p, {"steps", "lr", "momentum", "batch"}, "pretrain.");
      read(p, "steps", c.pretrain.steps);
      read(p, "lr", c.pretrain.lr);
      read(p, "momentum", c.pretrain.momentum);
      read(p, "batch", c.pretrain.batch);
    }
    if (j.contains("train")) {
      const auto& t = j.at("train");
      reject_unknown(t, {"mode", "iterations", "cold_start_steps", "iter_steps", "lr0", "lr_iter",
                         "momentum", "batch", "warmup_frac", "anchor_weight", "pseudo_weight",
                         "test_frac", "beta_dpo", "log_every"},
                     "train.");
      read(t, "mode", c.train.mode);
      read(t, "iterations", c.train.iterations);
      read(t, "cold_start_steps", c.train.cold_start_steps);
      read(t, "iter_steps", c.train.iter_steps);
      read(t, "lr0", c.train.lr0);
      read(t, "lr_iter", c.train.lr_iter);
      read(t, "momentum", c.train.momentum);
      read(t, "batch", c.train.batch);
      read(t, "warmup_frac", c.train.warmup_frac);
      read(t, "anchor_weight", c.train.anchor_weight);
      read(t, "pseudo_weight", c.train.pseudo_weight);
      read(t, "test_frac", c.train.test_frac);
      read(t, "beta_dpo", c.train.beta_dpo);
      read(t, "log_every", c.train.log_every);
    }
    if (j.contains("threshold")) {
      const auto& t = j.at("threshold");
      reject_unknown(t, {"intervals", "percentile", "acc_floor", "raise_step", "draws_per_pair",
                         "accuracy_draws"},
                     "threshold.");
      read(t, "intervals", c.threshold.intervals);
      read(t, "percentile", c.threshold.percentile);
      read(t, "acc_floor", c.threshold.acc_floor);
      read(t, "raise_step", c.threshold.raise_step);
      read(t, "draws_per_pair", c.threshold.draws_per_pair);
      read(t, "accuracy_draws", c.threshold.accuracy_draws);
    }
    if (j.contains("eval")) {
      const auto& e = j.at("eval");
      reject_unknown(e, {"n_prompts", "samples_per_prompt", "seed"}, "eval.");
      read(e, "n_prompts", c.eval.n_prompts);
      read(e, "samples_per_prompt", c.eval.samples_per_prompt);
      read(e, "seed", c.eval.seed);
    }
    if (j.contains("diagnose")) {
      const auto& d = j.at("diagnose");
      reject_unknown(d, {"seed", "max_pairs"}, "diagnose.");
      read(d, "seed", c.diagnose.seed);
      read(d, "max_pairs", c.diagnose.max_pairs);
    }
    if (j.contains("paths")) {
      const auto& p = j.at("paths");
      reject_unknown(p, {"dataset", "out_dir", "ref_checkpoint"}, "paths.");
      read(p, "dataset", c.paths.dataset);
      read(p, "out_dir", c.paths.out_dir);
      read(p, "ref_checkpoint", c.paths.ref_checkpoint);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  c.resolve();
  return c;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open config: " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(is);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config " + path.string() + ": " + e.what());
  }
  return config_from_json(j);
}

void save_config(const RunConfig& c, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot open config for writing: " + path.string());
  os << to_json(c).dump(2) << '\n';
}

void apply_override(nlohmann::json& j, const std::string& dotted_path, const std::string& value) {
  nlohmann::json* node = &j;
  std::size_t start = 0;
  while (true) {
    const std::size_t dot = dotted_path.find('.', start);
    const std::string key = dotted_path.substr(start, dot == std::string::npos ? dot : dot - start);
    if (key.empty()) throw ConfigError("bad override path '" + dotted_path + "'");
    if (dot == std::string::npos) {
      nlohmann::json v;
      try {
        v = nlohmann::json::parse(value);
      } catch (const nlohmann::json::exception&) {
        v = value;
      }
      (*node)[key] = v;
      return;
    }
    node = &(*node)[key];
    if (!node->is_object() && !node->is_null())
      throw ConfigError("override path '" + dotted_path + "' crosses a non-object");
    start = dot + 1;
  }
}

std::uint64_t config_hash_value(const RunConfig& c) {
  // File locations and worker count do not change results.
  auto j = to_json(c);
  j.erase("paths");
  j.erase("workers");
  const std::string s = j.dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string config_hash(const RunConfig& c) { return fmt::format("{:016x}", config_hash_value(c)); }

NoiseSchedule make_schedule(const RunConfig& c) {
  return make_schedule(c.schedule.T, c.schedule.beta_start, c.schedule.beta_end);
}

GenProfile gen_profile(const RunConfig& c) {
  GenProfile p;
  p.n_pairs = c.gen.n_pairs;
  p.d = c.arch.d;
  p.d_c = c.arch.d_c;
  p.committee = c.committee;
  p.annotator_concentration = c.gen.concentration;
  p.noise_scale = c.gen.noise_scale;
  p.seed = c.gen.seed;
  return p;
}

}  // namespace semidpo
