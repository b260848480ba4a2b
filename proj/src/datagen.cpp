#include "semidpo/datagen.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <fstream>

#include "json.hpp"
#include "semidpo/parallel.hpp"

namespace semidpo {

void GenProfile::validate() const {
  if (n_pairs < 1) throw ConfigError("gen: n_pairs must be >= 1");
  if (d < 1) throw ConfigError("gen: d must be >= 1");
  if (!(annotator_concentration > 0.0)) throw ConfigError("gen: concentration must be > 0");
  if (!(noise_scale > 0.0)) throw ConfigError("gen: noise_scale must be > 0");
  if (committee.size() < 1) throw ConfigError("gen: committee is empty");
  for (const auto& s : committee.specs)
    if (s.kind == RewardKind::alignment && d_c != d)
      throw ConfigError("gen: alignment reward requires d_c == d");
}

std::optional<PreferencePair> label_pair(const RewardCommittee& committee, Vec c, Vec xa,
                                         Vec xb, const Vec& weights) {
  require_dim(weights.size(), committee.size(), "label_pair weights");
  double sa = 0.0, sb = 0.0;
  for (std::size_t k = 0; k < committee.size(); ++k) {
    sa += weights[k] * reward_eval(committee, k, xa, c);
    sb += weights[k] * reward_eval(committee, k, xb, c);
  }
  if (sa == sb) return std::nullopt;
  PreferencePair p;
  p.c = std::move(c);
  p.x0_w = sa > sb ? std::move(xa) : std::move(xb);
  p.x0_l = sa > sb ? std::move(xb) : std::move(xa);
  p.weights = weights;
  p.delta_r = reward_diffs(committee, p);
  return p;
}

namespace {

Vec draw_dirichlet(Rng& rng, std::size_t K, double alpha) {
  std::gamma_distribution<double> g(alpha, 1.0);
  Vec w(K);
  double s = 0.0;
  for (auto& v : w) {
    v = g(rng);
    s += v;
  }
  if (!(s > 0.0)) return {};
  for (auto& v : w) v /= s;
  return w;
}

struct Candidates {
  Vec c, xa, xb;
};

Candidates draw_candidates(const GenProfile& prof, Rng& rng) {
  const std::size_t K = prof.committee.size();
  Candidates out;
  out.c = normal_vector(rng, prof.d_c);
  const int k1 = uniform_int(rng, 0, static_cast<int>(K) - 1);
  int k2 = k1;
  if (K > 1) {
    k2 = uniform_int(rng, 0, static_cast<int>(K) - 2);
    if (k2 >= k1) ++k2;
  }
  out.xa = plausible_optimum(prof.committee.specs[k1], out.c, prof.d);
  out.xb = plausible_optimum(prof.committee.specs[k2], out.c, prof.d);
  const Vec na = normal_vector(rng, prof.d), nb = normal_vector(rng, prof.d);
  for (std::size_t i = 0; i < prof.d; ++i) {
    out.xa[i] += prof.noise_scale * na[i];
    out.xb[i] += prof.noise_scale * nb[i];
  }
  return out;
}

// Mean |delta r_k| over a pilot draw of candidate pairs. Annotators weigh rewards
// in these units, otherwise the widest-ranging reward decides nearly every label
// regardless of the annotator's weights.
Vec reward_scales(const GenProfile& prof) {
  constexpr int kPilot = 4096;
  const std::size_t K = prof.committee.size();
  Rng rng(derive_seed(prof.seed, ~std::uint64_t{0}));
  Vec sum(K, 0.0);
  for (int i = 0; i < kPilot; ++i) {
    const auto cand = draw_candidates(prof, rng);
    for (std::size_t k = 0; k < K; ++k)
      sum[k] += std::abs(reward_eval(prof.committee, k, cand.xa, cand.c) -
                         reward_eval(prof.committee, k, cand.xb, cand.c));
  }
  for (auto& v : sum) v = v > 0.0 ? v / kPilot : 1.0;
  return sum;
}

PreferencePair gen_pair(const GenProfile& prof, const Vec& scales, std::uint64_t index) {
  Rng rng(derive_seed(prof.seed, index));
  const std::size_t K = prof.committee.size();
  for (int attempt = 0; attempt < 1000; ++attempt) {
    auto cand = draw_candidates(prof, rng);
    const Vec w = draw_dirichlet(rng, K, prof.annotator_concentration);
    if (w.empty() || cand.xa == cand.xb) continue;
    // Effective weights on the raw rewards, renormalized onto the simplex.
    Vec eff(K);
    double total = 0.0;
    for (std::size_t k = 0; k < K; ++k) total += eff[k] = w[k] / scales[k];
    if (!(total > 0.0)) continue;
    for (auto& v : eff) v /= total;
    auto p = label_pair(prof.committee, std::move(cand.c), std::move(cand.xa), std::move(cand.xb), eff);
    if (p && std::none_of(p->delta_r.begin(), p->delta_r.end(), [](double v) { return v == 0.0; }))
      return std::move(*p);
  }
  throw NumericError("gen_dataset: pair " + std::to_string(index) +
                     " hit 1000 consecutive ties");
}

}  // namespace

std::vector<PreferencePair> gen_dataset(const GenProfile& profile, int workers) {
  profile.validate();
  std::vector<PreferencePair> out(profile.n_pairs);
  const Vec scales = reward_scales(profile);
  parallel_for(out.size(), workers, [&](std::size_t i) { out[i] = gen_pair(profile, scales, i); });
  return out;
}

std::vector<ConflictStats> conflict_stats(std::span<const PreferencePair> dataset,
                                          const RewardCommittee& committee) {
  require(!dataset.empty(), "conflict_stats: empty dataset");
  const std::size_t K = committee.size();
  std::vector<std::size_t> a(K, 0), c(K, 0), tie(K, 0);
  for (const auto& p : dataset) {
    for (std::size_t k = 0; k < K; ++k) {
      const double dr = reward_diff(committee, k, p);
      if (dr > 0) ++a[k];
      else if (dr < 0) ++c[k];
      else ++tie[k];
    }
  }
  const double n = static_cast<double>(dataset.size());
  std::vector<ConflictStats> out(K);
  for (std::size_t k = 0; k < K; ++k) out[k] = {a[k] / n, c[k] / n, tie[k] / n};
  return out;
}

// ---------------------------------------------------------------------------

namespace {

void append_array(std::string& s, const Vec& v) {
  s += '[';
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (!std::isfinite(v[i])) throw NumericError("save_dataset: non-finite value");
    if (i) s += ',';
    s += fmt::format("{:.17g}", v[i]);
  }
  s += ']';
}

Vec read_array(const nlohmann::json& j, const char* key, bool required) {
  if (!j.contains(key)) {
    if (required) throw std::invalid_argument(std::string("missing field '") + key + "'");
    return {};
  }
  return j.at(key).get<Vec>();
}

}  // namespace

void save_dataset(std::span<const PreferencePair> dataset, DatasetHeader header,
                  const std::filesystem::path& path) {
  if (!dataset.empty()) {
    header.d = dataset.front().x0_w.size();
    header.d_c = dataset.front().c.size();
    header.K = dataset.front().delta_r.size();
  }
  header.n_pairs = dataset.size();
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open dataset for writing: " + path.string());
  nlohmann::ordered_json h;
  h["format"] = "semidpo-dataset";
  h["version"] = header.version;
  h["d"] = header.d;
  h["d_c"] = header.d_c;
  h["K"] = header.K;
  h["n_pairs"] = header.n_pairs;
  h["seed"] = header.seed;
  h["tool_version"] = header.tool_version;
  h["config_hash"] = header.config_hash;
  os << h.dump() << '\n';
  std::string line;
  for (const auto& p : dataset) {
    line.clear();
    line += "{\"c\":";
    append_array(line, p.c);
    line += ",\"x0_w\":";
    append_array(line, p.x0_w);
    line += ",\"x0_l\":";
    append_array(line, p.x0_l);
    line += ",\"delta_r\":";
    append_array(line, p.delta_r);
    line += ",\"weights\":";
    append_array(line, p.weights);
    line += p.origin == Origin::human ? ",\"origin\":\"human\"}\n" : ",\"origin\":\"pseudo\"}\n";
    os << line;
  }
  if (!os) throw IoError("failed writing dataset: " + path.string());
}

LoadedDataset load_dataset(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open dataset: " + path.string());
  LoadedDataset out;
  std::string line;
  if (!std::getline(is, line)) throw FormatError("dataset is empty: " + path.string());
  try {
    const auto h = nlohmann::json::parse(line);
    if (h.value("format", "") != "semidpo-dataset")
      throw FormatError("not a semidpo dataset: " + path.string());
    out.header.version = h.at("version").get<int>();
    if (out.header.version != kDatasetVersion)
      throw FormatError(fmt::format("dataset format version {} is not supported (expected {}): {}",
                                    out.header.version, kDatasetVersion, path.string()));
    out.header.d = h.at("d").get<std::size_t>();
    out.header.d_c = h.at("d_c").get<std::size_t>();
    out.header.K = h.at("K").get<std::size_t>();
    out.header.n_pairs = h.at("n_pairs").get<std::size_t>();
    out.header.seed = h.at("seed").get<std::uint64_t>();
    out.header.tool_version = h.value("tool_version", "");
    out.header.config_hash = h.value("config_hash", "");
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("dataset header: " + std::string(e.what()));
  }

  out.pairs.reserve(out.header.n_pairs);
  std::size_t index = 0;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      PreferencePair p;
      p.c = read_array(j, "c", true);
      p.x0_w = read_array(j, "x0_w", true);
      p.x0_l = read_array(j, "x0_l", true);
      p.delta_r = read_array(j, "delta_r", false);
      p.weights = read_array(j, "weights", false);
      const std::string origin = j.value("origin", "human");
      if (origin != "human" && origin != "pseudo")
        throw std::invalid_argument("unknown origin '" + origin + "'");
      p.origin = origin == "human" ? Origin::human : Origin::pseudo;
      if (p.x0_w.size() != out.header.d || p.x0_l.size() != out.header.d ||
          p.c.size() != out.header.d_c)
        throw std::invalid_argument("dimensions disagree with header");
      out.pairs.push_back(std::move(p));
    } catch (const std::exception& e) {
      throw FormatError(fmt::format("dataset record {}: parse error: {} ({})", index, e.what(),
                                    path.string()));
    }
    ++index;
  }
  if (out.pairs.size() != out.header.n_pairs)
    throw FormatError(fmt::format("dataset record {}: parse error: file truncated, header "
                                  "declares {} pairs ({})",
                                  out.pairs.size(), out.header.n_pairs, path.string()));
  return out;
}

}  // namespace semidpo
