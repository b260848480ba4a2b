#include <cmath>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "oracles.hpp"
#include "semidpo/semitrain.hpp"

using namespace semidpo;
namespace fs = std::filesystem;

namespace {

RunConfig small_config(std::uint64_t seed = 1) {
  RunConfig c;
  c.seed = seed;
  c.schedule.T = 20;
  c.arch.hidden = {16};
  c.gen.n_pairs = 400;
  c.gen.seed = seed;
  c.pretrain.steps = 100;
  c.train.iterations = 2;
  c.train.cold_start_steps = 30;
  c.train.iter_steps = 30;
  c.train.batch = 8;
  c.train.test_frac = 0.1;
  c.train.log_every = 10;
  c.threshold.intervals = 5;
  c.threshold.accuracy_draws = 2;
  c.eval.n_prompts = 5;
  c.eval.samples_per_prompt = 2;
  c.resolve();
  return c;
}

DenoiserParams nudged(const DenoiserParams& ref, Rng& rng, double scale = 0.05) {
  DenoiserParams p = ref;
  const Vec n = normal_vector(rng, p.theta.size());
  for (std::size_t i = 0; i < n.size(); ++i) p.theta[i] += scale * n[i];
  return p;
}

std::vector<PreferencePair> random_pairs(Rng& rng, std::size_t n, std::size_t d = 4) {
  std::vector<PreferencePair> out(n);
  for (auto& p : out) {
    p.c = normal_vector(rng, d);
    p.x0_w = normal_vector(rng, d);
    p.x0_l = normal_vector(rng, d);
  }
  return out;
}

ThresholdTable flat_table(const std::vector<Interval>& iv, double tau) {
  ThresholdTable t;
  t.intervals = iv;
  t.tau.assign(iv.size(), tau);
  t.base_tau = t.tau;
  t.accuracy.assign(iv.size(), 1.0);
  t.raises.assign(iv.size(), 0);
  return t;
}

fs::path temp_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "semidpo_unit" / name;
  fs::remove_all(dir);
  return dir;
}

std::vector<std::string> lines_of(const fs::path& p) {
  std::ifstream is(p);
  std::vector<std::string> out;
  for (std::string l; std::getline(is, l);) out.push_back(l);
  return out;
}

}  // namespace

TEST_CASE("intervals: partition of [0, T)") {
  for (auto [T, N] : std::vector<std::pair<int, int>>{{100, 10}, {20, 5}, {7, 3}, {5, 5}}) {
    const auto iv = make_intervals(T, N);
    REQUIRE(iv.size() == static_cast<std::size_t>(N));
    CHECK(iv.front().lo == 0);
    CHECK(iv.back().hi == T);
    for (std::size_t j = 1; j < iv.size(); ++j) CHECK(iv[j].lo == iv[j - 1].hi);
    for (int t = 1; t <= T; ++t) {
      const auto j = interval_of(t, iv);
      CHECK(iv[j].lo <= t - 1);
      CHECK(t - 1 < iv[j].hi);
    }
  }
  const auto iv = make_intervals(100, 10);
  CHECK(interval_of(1, iv) == 0);
  CHECK(interval_of(10, iv) == 0);
  CHECK(interval_of(11, iv) == 1);
  CHECK(interval_of(100, iv) == 9);
  CHECK_THROWS(interval_of(101, iv));
  CHECK_THROWS_AS(make_intervals(5, 6), ConfigError);
  CHECK_THROWS_AS(make_intervals(5, 0), ConfigError);
}

TEST_CASE("nearest_rank") {
  const Vec v{1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
  CHECK(nearest_rank(v, 0.8) == 8.0);
  CHECK(nearest_rank(v, 0.05) == 1.0);
  CHECK(nearest_rank(v, 0.85) == 9.0);
  CHECK(nearest_rank(v, 1.0) == 10.0);
  CHECK(nearest_rank(Vec{4.0}, 0.8) == 4.0);
}

TEST_CASE("build_thresholds: percentile, gate, empty interval") {
  const auto iv = make_intervals(20, 2);  // [0,10), [10,20)
  std::vector<Confidence> conf;
  for (int i = 1; i <= 10; ++i) conf.push_back({i, static_cast<double>(i)});  // interval 0
  const ThresholdParams params;

  SUBCASE("base thresholds; empty interval selects nothing") {
    const auto tab = build_thresholds(iv, conf, Vec{0.9, 0.9}, params);
    CHECK(tab.tau[0] == 8.0);
    CHECK(std::isinf(tab.tau[1]));
    CHECK(tab.raises == std::vector<int>{0, 0});
  }
  SUBCASE("accuracy below the floor raises strictly") {
    const auto tab = build_thresholds(iv, conf, Vec{0.65, 0.9}, params);
    CHECK(tab.base_tau[0] == 8.0);
    CHECK(tab.tau[0] > 8.0);
    CHECK(tab.tau[0] == 9.0);
    CHECK(tab.raises[0] == 1);
  }
  SUBCASE("raises accumulate across cycles") {
    const std::vector<int> prior{1, 0};
    const auto tab = build_thresholds(iv, conf, Vec{0.65, 0.9}, params, prior);
    CHECK(tab.raises[0] == 2);
    CHECK(tab.tau[0] == 9.0);  // 0.90 quantile of ten values
    const std::vector<int> prior3{3, 0};
    const auto top = build_thresholds(iv, conf, Vec{0.65, 0.9}, params, prior3);
    CHECK(top.tau[0] == 10.0);
  }
  SUBCASE("gate at the top of a flat interval still raises") {
    std::vector<Confidence> flat(10, Confidence{3, 2.0});
    const auto tab = build_thresholds(iv, flat, Vec{0.1, 0.9}, params);
    CHECK(tab.tau[0] > tab.base_tau[0]);
  }
  SUBCASE("invalid fractions") {
    CHECK_THROWS_AS(build_thresholds(iv, conf, Vec{0.9, 0.9}, {1.0, 0.7, 0.05}), ConfigError);
    CHECK_THROWS_AS(build_thresholds(iv, conf, Vec{0.9, 0.9}, {0.8, 1.5, 0.05}), ConfigError);
    CHECK_THROWS_AS(build_thresholds(iv, conf, Vec{0.9, 0.9}, {0.8, 0.7, 0.0}), ConfigError);
    CHECK_THROWS_AS(build_thresholds(iv, conf, Vec{1.2, 0.9}, params), ConfigError);
    CHECK_THROWS_AS(build_thresholds(iv, conf, Vec{0.9}, params), std::invalid_argument);
  }
}

TEST_CASE("thresholds: selection share and monotonicity") {
  Rng rng(3);
  const auto iv = make_intervals(100, 10);
  std::vector<PseudoLabelRecord> recs;
  std::exponential_distribution<double> ex(1.0);
  for (int i = 0; i < 777; ++i) {
    PseudoLabelRecord r;
    r.t = uniform_int(rng, 1, 100);
    r.z = (uniform_int(rng, 0, 1) ? 1.0 : -1.0) * std::round(ex(rng) * 4.0) / 4.0;  // many ties
    r.confidence = std::abs(r.z);
    r.interval = interval_of(r.t, iv);
    recs.push_back(r);
  }
  const auto tab = build_thresholds(iv, confidences_of(recs), Vec(10, 0.9), ThresholdParams{});
  decide_pseudo_labels(recs, tab);
  std::vector<std::size_t> n(10, 0), acc(10, 0);
  for (const auto& r : recs) {
    ++n[r.interval];
    acc[r.interval] += r.decision != Decision::reject;
    CHECK((r.decision == Decision::reject) == !(r.confidence > tab.tau[r.interval]));
    if (r.decision == Decision::keep) CHECK(r.z > 0);
    if (r.decision == Decision::swap) CHECK(r.z < 0);
  }
  for (std::size_t j = 0; j < 10; ++j)
    CHECK(static_cast<double>(acc[j]) / n[j] <= 0.2 + 1.0 / n[j]);

  // Raising one interval's tau can only shrink its accepted set.
  auto raised = tab;
  raised.tau[4] += 0.3;
  auto recs2 = recs;
  decide_pseudo_labels(recs2, raised);
  for (std::size_t i = 0; i < recs.size(); ++i) {
    if (recs[i].interval == 4) {
      if (recs2[i].decision != Decision::reject) CHECK(recs[i].decision != Decision::reject);
    } else {
      CHECK(recs2[i].decision == recs[i].decision);
    }
  }
}

TEST_CASE("decide: zero logit always rejects") {
  const auto iv = make_intervals(10, 2);
  std::vector<PseudoLabelRecord> recs(1);
  recs[0].t = 3;
  recs[0].z = 0.0;
  recs[0].confidence = 0.0;
  decide_pseudo_labels(recs, flat_table(iv, -1.0));
  CHECK(recs[0].decision == Decision::reject);
}

TEST_CASE("pseudo labels: frozen equals reference") {
  const auto cfg = small_config();
  const auto sched = make_schedule(cfg);
  Rng rng(4);
  const auto ref = init_params(cfg.arch, rng);
  const auto pairs = random_pairs(rng, 30);
  const auto iv = make_intervals(sched.T, 5);
  Rng r1(9);
  const auto recs = apply_pseudo_labels(pairs, ref, ref, flat_table(iv, 0.0), 4, 5.0, sched, r1);
  REQUIRE(recs.size() == 120);
  for (const auto& r : recs) {
    CHECK(r.z == 0.0);
    CHECK(r.decision == Decision::reject);
  }
  Rng r2(9);
  const Vec acc = measure_interval_accuracy(ref, ref, pairs, iv, 3, 5.0, sched, r2);
  CHECK(acc == Vec(5, 0.0));
}

TEST_CASE("pseudo labels: stratified probes, thresholds, swap correctness, purity") {
  const auto cfg = small_config();
  const auto sched = make_schedule(cfg);
  Rng rng(5);
  const auto ref = init_params(cfg.arch, rng);
  const auto frozen = nudged(ref, rng);
  const auto frozen_copy = frozen;
  const auto pairs = random_pairs(rng, 40);
  const auto iv = make_intervals(sched.T, 5);

  Rng r1(10);
  const auto scored = score_pseudo_labels(pairs, frozen, ref, iv, 4, 5.0, sched, r1);
  REQUIRE(scored.size() == 160);
  for (std::size_t i = 0; i < scored.size(); ++i) {
    const auto& r = scored[i];
    CHECK(r.pair_index == i / 4);
    const int s = static_cast<int>(i % 4);
    CHECK(r.t - 1 >= s * 20 / 4);
    CHECK(r.t - 1 < (s + 1) * 20 / 4);
    CHECK(r.z == margin_logit(frozen, ref, pairs[r.pair_index], r.t, r.eps, 5.0, sched));
    CHECK(r.confidence == std::abs(r.z));
    CHECK(r.decision == Decision::reject);
  }

  SUBCASE("tau = +inf rejects everything; pseudo loss is zero") {
    auto recs = scored;
    decide_pseudo_labels(recs, flat_table(iv, INFINITY));
    std::vector<PseudoLabelRecord> accepted;
    for (const auto& r : recs) {
      CHECK(r.decision == Decision::reject);
      if (r.decision != Decision::reject) accepted.push_back(r);
    }
    CHECK(pseudo_label_loss(frozen, ref, accepted, pairs, 5.0, sched) == 0.0);
  }
  SUBCASE("tau = 0 accepts every nonzero logit; swaps negate exactly") {
    auto recs = scored;
    decide_pseudo_labels(recs, flat_table(iv, 0.0));
    std::size_t swaps = 0;
    for (const auto& r : recs) {
      REQUIRE(r.z != 0.0);
      CHECK(r.decision != Decision::reject);
      const PreferencePair p = pseudo_pair(r, pairs);
      CHECK(p.origin == Origin::pseudo);
      if (r.decision == Decision::swap) {
        ++swaps;
        CHECK(margin_logit(frozen, ref, p, r.t, r.eps, 5.0, sched) == -r.z);
      } else {
        CHECK(margin_logit(frozen, ref, p, r.t, r.eps, 5.0, sched) == r.z);
      }
    }
    CHECK(swaps > 0);
    CHECK(swaps < recs.size());
  }
  SUBCASE("apply_pseudo_labels is score + decide with the same stream") {
    Rng r2(10);
    auto recs = apply_pseudo_labels(pairs, frozen, ref, flat_table(iv, 0.0), 4, 5.0, sched, r2);
    auto want = scored;
    decide_pseudo_labels(want, flat_table(iv, 0.0));
    for (std::size_t i = 0; i < recs.size(); ++i) {
      CHECK(recs[i].z == want[i].z);
      CHECK(recs[i].decision == want[i].decision);
    }
  }
  CHECK(frozen == frozen_copy);

  // negated pair gives the negated logit
  const auto& r = scored[7];
  CHECK(pseudo_logit(frozen, ref, swapped(pairs[r.pair_index]), r.t, r.eps, 5.0, sched) == -r.z);
}

TEST_CASE("pseudo labels: a model overfit to a pair keeps it") {
  const auto cfg = small_config();
  const auto sched = make_schedule(cfg);
  Rng rng(6);
  const auto ref = init_params(cfg.arch, rng);
  auto th = ref;
  const auto pairs = random_pairs(rng, 1);
  const int t = 4;
  const Vec eps = normal_vector(rng, 4);
  MomentumSgd opt(0.0);
  GradVector g;
  const std::vector<NoiseDraw> draw{{t, eps}};
  for (int s = 0; s < 50; ++s) {
    dpo_loss_grad(th, ref, pairs, draw, 5.0, sched, g);
    opt.step(th, g, 0.01);
  }
  const double z = pseudo_logit(th, ref, pairs[0], t, eps, 5.0, sched);
  CHECK(z > 0.0);
  std::vector<PseudoLabelRecord> recs(1);
  recs[0].t = t;
  recs[0].eps = eps;
  recs[0].z = z;
  recs[0].confidence = z;
  recs[0].interval = interval_of(t, make_intervals(sched.T, 5));
  decide_pseudo_labels(recs, flat_table(make_intervals(sched.T, 5), z / 2));
  CHECK(recs[0].decision == Decision::keep);
}

TEST_CASE("measure_interval_accuracy: overfit and stability") {
  const auto cfg = small_config();
  const auto sched = make_schedule(cfg);
  const auto iv = make_intervals(sched.T, 5);
  Rng rng(7);
  const auto ref = init_params(cfg.arch, rng);

  SUBCASE("a model trained on the test pairs ranks them correctly at low noise") {
    auto th = ref;
    const auto pairs = random_pairs(rng, 4);
    MomentumSgd opt(0.9);
    GradVector g;
    std::vector<NoiseDraw> draws(4);
    for (int s = 0; s < 1500; ++s) {
      for (auto& d : draws) d = {uniform_int(rng, 1, sched.T), normal_vector(rng, 4)};
      dpo_loss_grad(th, ref, pairs, draws, 5.0, sched, g);
      opt.step(th, g, 0.01);
    }
    Rng pr(1);
    const Vec acc = measure_interval_accuracy(th, ref, pairs, iv, 50, 5.0, sched, pr);
    // Heavy noise washes the preference out of the logit, so only the cleanest
    // interval is expected to be near perfect.
    CHECK(acc[0] >= 0.95);
    CHECK(acc[0] > acc[4]);
  }
  SUBCASE("disjoint probe sets agree within binomial noise") {
    const auto th = nudged(ref, rng, 0.1);
    const auto pairs = random_pairs(rng, 200);
    Rng a(11), b(12);
    const Vec acc1 = measure_interval_accuracy(th, ref, pairs, iv, 5, 5.0, sched, a);
    const Vec acc2 = measure_interval_accuracy(th, ref, pairs, iv, 5, 5.0, sched, b, 3);
    for (std::size_t j = 0; j < 5; ++j) {
      const double p = 0.5 * (acc1[j] + acc2[j]);
      const double sd = std::sqrt(2.0 * std::max(p * (1 - p), 0.01) / 1000.0);
      CHECK(std::abs(acc1[j] - acc2[j]) <= 3.0 * sd);
    }
  }
  CHECK_THROWS_AS(measure_interval_accuracy(ref, ref, std::vector<PreferencePair>{}, iv, 1, 5.0, sched, rng),
                  std::invalid_argument);
}

TEST_CASE("losses: reference identity and scalar recomputation") {
  const auto cfg = small_config();
  const auto sched = make_schedule(cfg);
  Rng rng(8);
  const auto ref = init_params(cfg.arch, rng);
  const auto th = nudged(ref, rng);
  const auto pairs = random_pairs(rng, 12);
  const auto iv = make_intervals(sched.T, 5);
  Rng sr(3);
  auto recs = score_pseudo_labels(pairs, nudged(ref, rng), ref, iv, 4, 5.0, sched, sr);
  decide_pseudo_labels(recs, flat_table(iv, 0.0));
  std::vector<PseudoLabelRecord> accepted;
  for (const auto& r : recs)
    if (r.decision != Decision::reject) accepted.push_back(r);
  REQUIRE(!accepted.empty());

  SUBCASE("anchor loss") {
    Rng a(1);
    CHECK(std::abs(anchor_loss(ref, ref, pairs, 5.0, sched, a) - std::log(2.0)) <= 1e-12);
    Rng b(2), mirror(2);
    const double got = anchor_loss(th, ref, pairs, 5.0, sched, b);
    double want = 0.0;
    for (const auto& p : pairs) {
      const int t = uniform_int(mirror, 1, sched.T);
      const Vec eps = normal_vector(mirror, 4);
      want += oracle::nls(oracle::logit(th, ref, p, t, eps, 5.0, sched.alpha_bar_at(t))) / 12.0;
    }
    CHECK(got == doctest::Approx(want).epsilon(1e-12));
    CHECK_THROWS_AS(anchor_loss(th, ref, std::vector<PreferencePair>{}, 5.0, sched, b),
                    std::invalid_argument);
  }
  SUBCASE("pseudo-label loss") {
    CHECK(pseudo_label_loss(ref, ref, accepted, pairs, 5.0, sched) == doctest::Approx(std::log(2.0)).epsilon(1e-14));
    double want = 0.0;
    for (const auto& r : accepted) {
      const double z0 = oracle::logit(th, ref, pairs[r.pair_index], r.t, r.eps, 5.0, sched.alpha_bar_at(r.t));
      want += oracle::nls(r.decision == Decision::swap ? -z0 : z0);
    }
    want /= static_cast<double>(accepted.size());
    CHECK(pseudo_label_loss(th, ref, accepted, pairs, 5.0, sched) == doctest::Approx(want).epsilon(1e-12));
  }
  SUBCASE("composite loss") {
    Rng a(4), b(4);
    CHECK(composite_loss(th, ref, pairs, {}, pairs, 5.0, sched, a) ==
          anchor_loss(th, ref, pairs, 5.0, sched, b));
    Rng c(5), d(5);
    const double comp = composite_loss(th, ref, pairs, accepted, pairs, 5.0, sched, c);
    CHECK(comp == doctest::Approx(anchor_loss(th, ref, pairs, 5.0, sched, d) +
                                  pseudo_label_loss(th, ref, accepted, pairs, 5.0, sched))
                      .epsilon(1e-14));
    Rng e(6);
    CHECK(composite_loss(ref, ref, pairs, accepted, pairs, 5.0, sched, e) ==
          doctest::Approx(2.0 * std::log(2.0)).epsilon(1e-13));
  }
}

TEST_CASE("split_clean") {
  Rng rng(9);
  const auto pairs = random_pairs(rng, 100);
  const auto [train, test] = split_clean(pairs, 0.02, 77);
  CHECK(test.size() == 2);
  CHECK(train.size() == 98);
  for (const auto& t : test)
    CHECK(std::find(train.begin(), train.end(), t) == train.end());
  const auto again = split_clean(pairs, 0.02, 77);
  CHECK(again.second == test);
  CHECK(split_clean(pairs, 0.0, 1).second.size() == 1);
  CHECK(split_clean(std::span<const PreferencePair>(pairs.data(), 1), 0.5, 1).second.empty());
}

TEST_CASE("run_pipeline: cold-start run equals plain clean-set DPO") {
  auto cfg = small_config(3);
  cfg.train.mode = "clean_only";
  const auto sched = make_schedule(cfg);
  const auto data = gen_dataset(gen_profile(cfg));
  Rng rng(1);
  const auto ref = init_params(cfg.arch, rng);
  const auto res = run_pipeline(cfg, data, ref);
  REQUIRE(res.iterates.size() == 1);
  CHECK(res.metrics.back()["iteration"] == 0);
  CHECK(res.state.ref_params == ref);

  // Independent plain DPO loop on the clean training split.
  const auto part = consensus_partition(data, cfg.committee);
  const auto [train, test] = split_clean(part.labeled, cfg.train.test_frac, derive_seed(cfg.seed, 101));
  for (const auto& p : train) CHECK(p.origin == Origin::human);
  DenoiserParams th = ref;
  MomentumSgd opt(cfg.train.momentum);
  Rng trng(train_stream_seed(cfg, 0));
  const int steps = cfg.train.cold_start_steps;
  const int warm = std::max(1, static_cast<int>(cfg.train.warmup_frac * steps));
  std::vector<double> losses;
  for (int s = 0; s < steps; ++s) {
    std::vector<PreferencePair> batch;
    std::vector<NoiseDraw> draws;
    for (std::size_t b = 0; b < cfg.train.batch; ++b) {
      batch.push_back(train[static_cast<std::size_t>(uniform_int(trng, 0, static_cast<int>(train.size()) - 1))]);
      const int t = uniform_int(trng, 1, sched.T);
      draws.push_back({t, normal_vector(trng, cfg.arch.d)});
    }
    GradVector g;
    losses.push_back(dpo_loss_grad(th, ref, batch, draws, cfg.train.beta_dpo, sched, g));
    opt.step(th, g, cfg.train.lr0 * std::min(1.0, static_cast<double>(s + 1) / warm));
  }
  REQUIRE(res.trajectory.size() == losses.size());
  for (std::size_t i = 0; i < losses.size(); ++i) {
    CHECK(res.trajectory[i].anchor == losses[i]);
    CHECK(res.trajectory[i].pseudo == 0.0);
  }
  CHECK(res.iterates[0] == th);
}

TEST_CASE("run_pipeline: semi mode artifacts and isolation") {
  const auto cfg = small_config(4);
  const auto data = gen_dataset(gen_profile(cfg));
  const auto sched = make_schedule(cfg);
  const auto ref = pretrain_reference(cfg, data, sched);
  const auto dir = temp_dir("semi");
  const auto res = run_pipeline(cfg, data, ref, dir);
  CHECK(res.iterates.size() == 3);
  CHECK(res.thresholds.size() == 2);
  CHECK(res.pseudo_labels.size() == 2);
  CHECK(res.state.thresholds.has_value());
  CHECK(res.state.ref_params == ref);
  for (int i = 0; i < 3; ++i) CHECK(fs::exists(dir / ("iter" + std::to_string(i) + ".ckpt")));
  CHECK(fs::exists(dir / "ref.ckpt"));
  CHECK(lines_of(dir / "thresholds.jsonl").size() == 2);
  CHECK(load_checkpoint(dir / "iter2.ckpt").params == res.iterates[2]);

  const auto metrics = lines_of(dir / "metrics.jsonl");
  REQUIRE(metrics.size() > 3);
  const auto head = nlohmann::json::parse(metrics.front());
  CHECK(head["record"] == "config");
  CHECK(head["tool_version"] == kToolVersion);
  CHECK(head["config_hash"] == config_hash(cfg));
  CHECK(config_from_json(head["config"]).train.mode == "semi");
  CHECK(nlohmann::json::parse(metrics.back())["iteration"] == 2);

  // Pseudo-label records only point into the unlabeled side.
  const auto part = consensus_partition(data, cfg.committee);
  for (const auto& recs : res.pseudo_labels) {
    CHECK(recs.size() == part.unlabeled.size() * static_cast<std::size_t>(cfg.threshold.draws_per_pair));
    for (const auto& r : recs) {
      REQUIRE(r.pair_index < part.unlabeled.size());
      const auto& src = data[part.unlabeled_source[r.pair_index]];
      CHECK(src == part.unlabeled[r.pair_index]);
      CHECK(std::find(part.labeled.begin(), part.labeled.end(), src) == part.labeled.end());
    }
  }
  // Gated intervals carry a strictly higher tau.
  for (const auto& tab : res.thresholds)
    for (std::size_t j = 0; j < tab.tau.size(); ++j)
      if (tab.accuracy[j] < cfg.threshold.acc_floor && std::isfinite(tab.base_tau[j]))
        CHECK(tab.tau[j] > tab.base_tau[j]);

  // A second run reproduces everything.
  const auto res2 = run_pipeline(cfg, data, ref);
  CHECK(res2.iterates == res.iterates);
}

TEST_CASE("run_pipeline: errors") {
  auto cfg = small_config(5);
  auto data = gen_dataset(gen_profile(cfg));
  Rng rng(1);
  const auto ref = init_params(cfg.arch, rng);
  SUBCASE("empty clean set") {
    cfg.committee = {{alignment_reward()}};
    for (auto& p : data)
      if (reward_diff(cfg.committee, 0, p) > 0) p = swapped(p);
    CHECK_THROWS_AS(run_pipeline(cfg, data, ref), ConfigError);
  }
  SUBCASE("non-finite training aborts with the iteration index") {
    cfg.train.lr0 = 1e300;
    cfg.train.beta_dpo = 1e6;
    try {
      run_pipeline(cfg, data, ref);
      FAIL("expected a numeric error");
    } catch (const NumericError& e) {
      CHECK(std::string(e.what()).rfind("iteration 0", 0) == 0);
    }
  }
}
