#include "semidpo/model.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <numbers>

namespace semidpo {

std::string to_string(Activation a) {
  switch (a) {
    case Activation::tanh: return "tanh";
    case Activation::silu: return "silu";
  }
  return "?";
}

Activation activation_from_string(const std::string& s) {
  if (s == "tanh") return Activation::tanh;
  if (s == "silu") return Activation::silu;
  throw ConfigError("unknown activation '" + s + "'");
}

std::size_t Arch::param_count() const {
  std::size_t n = 0;
  for (std::size_t l = 0; l < layer_count(); ++l) n += layer_in(l) * layer_out(l) + layer_out(l);
  return n;
}

void Arch::validate() const {
  if (d == 0) throw ConfigError("arch: d must be >= 1");
  if (time_emb % 2 != 0) throw ConfigError("arch: time_emb must be even");
  if (horizon < 1) throw ConfigError("arch: horizon must be >= 1");
  for (auto w : hidden)
    if (w == 0) throw ConfigError("arch: hidden widths must be >= 1");
}

namespace {

double activate(Activation a, double v) {
  if (a == Activation::tanh) return std::tanh(v);
  return v * sigmoid(v);
}

double activate_grad(Activation a, double pre, double post) {
  if (a == Activation::tanh) return 1.0 - post * post;
  const double s = sigmoid(pre);
  return s * (1.0 + pre * (1.0 - s));
}

void check_params(const DenoiserParams& p) {
  if (p.theta.size() != p.arch.param_count())
    throw std::invalid_argument("theta length does not match arch");
}

}  // namespace

DenoiserParams init_params(const Arch& arch, Rng& rng) {
  arch.validate();
  DenoiserParams p{arch, Vec(arch.param_count(), 0.0)};
  std::size_t off = 0;
  for (std::size_t l = 0; l < arch.layer_count(); ++l) {
    const std::size_t in = arch.layer_in(l), out = arch.layer_out(l);
    std::normal_distribution<double> dist(0.0, 1.0 / std::sqrt(static_cast<double>(in)));
    for (std::size_t i = 0; i < in * out; ++i) p.theta[off + i] = dist(rng);
    off += in * out + out;
  }
  return p;
}

Vec time_embedding(int t, int horizon, std::size_t dim) {
  Vec e(dim);
  const double s = static_cast<double>(t) / static_cast<double>(horizon);
  double w = std::numbers::pi / 2.0;
  for (std::size_t i = 0; i + 1 < dim; i += 2) {
    e[i] = std::sin(w * s);
    e[i + 1] = std::cos(w * s);
    w *= 2.0;
  }
  return e;
}

void forward_cached(const DenoiserParams& params, std::span<const double> x_t, int t,
                    std::span<const double> c, Activations& acts) {
  const Arch& a = params.arch;
  check_params(params);
  require_dim(x_t.size(), a.d, "forward x_t");
  require_dim(c.size(), a.d_c, "forward condition");

  const std::size_t L = a.layer_count();
  acts.post.resize(L + 1);
  acts.pre.resize(L);

  Vec& in = acts.post[0];
  in.resize(a.input_dim());
  std::copy(x_t.begin(), x_t.end(), in.begin());
  std::copy(c.begin(), c.end(), in.begin() + static_cast<std::ptrdiff_t>(a.d));
  const Vec emb = time_embedding(t, a.horizon, a.time_emb);
  std::copy(emb.begin(), emb.end(), in.begin() + static_cast<std::ptrdiff_t>(a.d + a.d_c));

  const double* th = params.theta.data();
  for (std::size_t l = 0; l < L; ++l) {
    const std::size_t nin = a.layer_in(l), nout = a.layer_out(l);
    const double* W = th;
    const double* b = th + nin * nout;
    const Vec& x = acts.post[l];
    Vec& z = acts.pre[l];
    z.resize(nout);
    for (std::size_t o = 0; o < nout; ++o) {
      const double* row = W + o * nin;
      double s = b[o];
      for (std::size_t i = 0; i < nin; ++i) s += row[i] * x[i];
      z[o] = s;
    }
    Vec& y = acts.post[l + 1];
    if (l + 1 == L) {
      y = z;
    } else {
      y.resize(nout);
      for (std::size_t o = 0; o < nout; ++o) y[o] = activate(a.activation, z[o]);
    }
    th += nin * nout + nout;
  }
}

Vec forward(const DenoiserParams& params, std::span<const double> x_t, int t,
            std::span<const double> c) {
  Activations acts;
  forward_cached(params, x_t, t, c, acts);
  return acts.output();
}

void backward_accumulate(const DenoiserParams& params, const Activations& acts,
                         std::span<const double> upstream, double scale,
                         std::span<double> grad) {
  const Arch& a = params.arch;
  require_dim(upstream.size(), a.d, "backward upstream");
  require_dim(grad.size(), params.theta.size(), "backward gradient buffer");

  const std::size_t L = a.layer_count();
  std::vector<std::size_t> offset(L);
  std::size_t off = 0;
  for (std::size_t l = 0; l < L; ++l) {
    offset[l] = off;
    off += a.layer_in(l) * a.layer_out(l) + a.layer_out(l);
  }

  Vec delta(upstream.begin(), upstream.end());
  Vec prev;
  for (std::size_t l = L; l-- > 0;) {
    const std::size_t nin = a.layer_in(l), nout = a.layer_out(l);
    const double* W = params.theta.data() + offset[l];
    double* gW = grad.data() + offset[l];
    double* gb = gW + nin * nout;
    const Vec& x = acts.post[l];
    for (std::size_t o = 0; o < nout; ++o) {
      const double dz = scale * delta[o];
      double* grow = gW + o * nin;
      for (std::size_t i = 0; i < nin; ++i) grow[i] += dz * x[i];
      gb[o] += dz;
    }
    if (l == 0) break;
    prev.assign(nin, 0.0);
    for (std::size_t o = 0; o < nout; ++o) {
      const double* row = W + o * nin;
      const double dz = delta[o];
      for (std::size_t i = 0; i < nin; ++i) prev[i] += row[i] * dz;
    }
    const Vec& zin = acts.pre[l - 1];
    for (std::size_t i = 0; i < nin; ++i) prev[i] *= activate_grad(a.activation, zin[i], x[i]);
    delta.swap(prev);
  }
}

GradVector backward(const DenoiserParams& params, std::span<const double> x_t, int t,
                    std::span<const double> c, std::span<const double> upstream) {
  Activations acts;
  forward_cached(params, x_t, t, c, acts);
  GradVector g{Vec(params.theta.size(), 0.0)};
  backward_accumulate(params, acts, upstream, 1.0, g.g);
  return g;
}

DenoiserParams sgd_step(const DenoiserParams& params, const GradVector& grad, double lr) {
  require_dim(grad.g.size(), params.theta.size(), "sgd_step gradient");
  if (!(lr >= 0.0)) throw std::invalid_argument("sgd_step: lr must be >= 0");
  if (!all_finite(grad.g)) throw NumericError("sgd_step: non-finite gradient entry");
  DenoiserParams out = params;
  for (std::size_t i = 0; i < out.theta.size(); ++i) out.theta[i] -= lr * grad.g[i];
  return out;
}

void MomentumSgd::step(DenoiserParams& params, const GradVector& grad, double lr) {
  require_dim(grad.g.size(), params.theta.size(), "momentum step gradient");
  if (!all_finite(grad.g)) throw NumericError("momentum step: non-finite gradient entry");
  if (velocity_.size() != grad.g.size()) velocity_.assign(grad.g.size(), 0.0);
  for (std::size_t i = 0; i < velocity_.size(); ++i) {
    velocity_[i] = momentum_ * velocity_[i] + grad.g[i];
    params.theta[i] -= lr * velocity_[i];
  }
}

// ---------------------------------------------------------------------------
// Checkpoint I/O. All integers and floats are little-endian.

namespace {

constexpr std::array<char, 8> kMagic{'S', 'D', 'P', 'O', 'C', 'K', 'P', 'T'};

template <class T>
void put_le(std::ostream& os, T v) {
  using U = std::conditional_t<sizeof(T) == 8, std::uint64_t, std::uint32_t>;
  U u = std::bit_cast<U>(v);
  char buf[sizeof(U)];
  for (std::size_t i = 0; i < sizeof(U); ++i) buf[i] = static_cast<char>((u >> (8 * i)) & 0xFF);
  os.write(buf, sizeof(U));
}

template <class T>
T get_le(std::istream& is, const char* field) {
  using U = std::conditional_t<sizeof(T) == 8, std::uint64_t, std::uint32_t>;
  unsigned char buf[sizeof(U)];
  if (!is.read(reinterpret_cast<char*>(buf), sizeof(U)))
    throw FormatError(std::string("checkpoint truncated while reading ") + field);
  U u = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) u |= static_cast<U>(buf[i]) << (8 * i);
  return std::bit_cast<T>(u);
}

}  // namespace

void save_checkpoint(const DenoiserParams& params, const CheckpointMeta& meta,
                     const std::filesystem::path& path) {
  check_params(params);
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open checkpoint for writing: " + path.string());
  const Arch& a = params.arch;
  os.write(kMagic.data(), kMagic.size());
  put_le<std::uint32_t>(os, kCheckpointVersion);
  put_le<std::uint32_t>(os, a.activation == Activation::tanh ? 0u : 1u);
  put_le<std::uint64_t>(os, meta.seed);
  put_le<std::uint64_t>(os, meta.config_hash);
  put_le<std::uint32_t>(os, static_cast<std::uint32_t>(a.d));
  put_le<std::uint32_t>(os, static_cast<std::uint32_t>(a.d_c));
  put_le<std::uint32_t>(os, static_cast<std::uint32_t>(a.time_emb));
  put_le<std::uint32_t>(os, static_cast<std::uint32_t>(a.horizon));
  put_le<std::uint32_t>(os, static_cast<std::uint32_t>(a.hidden.size()));
  for (auto w : a.hidden) put_le<std::uint32_t>(os, static_cast<std::uint32_t>(w));
  put_le<std::uint64_t>(os, static_cast<std::uint64_t>(params.theta.size()));
  for (double v : params.theta) put_le<double>(os, v);
  if (!os) throw IoError("failed writing checkpoint: " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint: " + path.string());
  std::array<char, 8> magic{};
  if (!is.read(magic.data(), magic.size()) || magic != kMagic)
    throw FormatError("not a semidpo checkpoint: " + path.string());
  const auto version = get_le<std::uint32_t>(is, "version");
  if (version != kCheckpointVersion)
    throw FormatError("checkpoint format version " + std::to_string(version) +
                      " is not supported (expected " + std::to_string(kCheckpointVersion) +
                      "): " + path.string());
  Checkpoint ck;
  const auto act = get_le<std::uint32_t>(is, "activation");
  if (act > 1) throw FormatError("checkpoint has unknown activation tag");
  Arch& a = ck.params.arch;
  a.activation = act == 0 ? Activation::tanh : Activation::silu;
  ck.meta.seed = get_le<std::uint64_t>(is, "seed");
  ck.meta.config_hash = get_le<std::uint64_t>(is, "config hash");
  a.d = get_le<std::uint32_t>(is, "d");
  a.d_c = get_le<std::uint32_t>(is, "d_c");
  a.time_emb = get_le<std::uint32_t>(is, "time_emb");
  a.horizon = static_cast<int>(get_le<std::uint32_t>(is, "horizon"));
  const auto nh = get_le<std::uint32_t>(is, "hidden count");
  if (nh > 1024) throw FormatError("checkpoint hidden layer count is implausible");
  a.hidden.resize(nh);
  for (auto& w : a.hidden) w = get_le<std::uint32_t>(is, "hidden width");
  const auto n = get_le<std::uint64_t>(is, "theta length");
  if (n != a.param_count())
    throw FormatError("checkpoint theta length " + std::to_string(n) +
                      " does not match its arch (" + std::to_string(a.param_count()) + ")");
  ck.params.theta.resize(n);
  for (auto& v : ck.params.theta) v = get_le<double>(is, "theta");
  return ck;
}

}  // namespace semidpo
