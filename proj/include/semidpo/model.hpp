#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "semidpo/common.hpp"

namespace semidpo {

enum class Activation { tanh, silu };

std::string to_string(Activation a);
Activation activation_from_string(const std::string& s);

/// Shape of the conditioned noise predictor. Inputs are concatenated as
/// [x_t, c, time_embedding(t / horizon)].
struct Arch {
  std::size_t d = 4;
  std::size_t d_c = 4;
  std::size_t time_emb = 8;  // must be even
  std::vector<std::size_t> hidden{64, 64};
  Activation activation = Activation::tanh;
  int horizon = 100;  // timestep count the embedding is normalized by

  std::size_t input_dim() const { return d + d_c + time_emb; }
  std::size_t layer_count() const { return hidden.size() + 1; }
  std::size_t layer_in(std::size_t l) const { return l == 0 ? input_dim() : hidden[l - 1]; }
  std::size_t layer_out(std::size_t l) const { return l == hidden.size() ? d : hidden[l]; }
  std::size_t param_count() const;
  void validate() const;

  bool operator==(const Arch&) const = default;
};

struct DenoiserParams {
  Arch arch;
  Vec theta;  // per layer: weights (out x in, row-major) then bias (out)

  bool operator==(const DenoiserParams&) const = default;
};

struct GradVector {
  Vec g;
};

/// LeCun-normal weights, zero biases.
DenoiserParams init_params(const Arch& arch, Rng& rng);

/// Sinusoidal features of s = t / horizon: [sin(w0 s), cos(w0 s), sin(w1 s), ...]
/// with w_i = pi * 2^(i-1).
Vec time_embedding(int t, int horizon, std::size_t dim);

/// Per-layer pre- and post-activation values from one forward pass.
struct Activations {
  std::vector<Vec> post;  // post[0] is the network input, post.back() the output
  std::vector<Vec> pre;   // pre[l] is layer l's affine output
  const Vec& output() const { return post.back(); }
};

void forward_cached(const DenoiserParams& params, std::span<const double> x_t, int t,
                    std::span<const double> c, Activations& acts);

Vec forward(const DenoiserParams& params, std::span<const double> x_t, int t,
            std::span<const double> c);

/// grad += scale * d<upstream, output>/d theta, using activations from forward_cached.
void backward_accumulate(const DenoiserParams& params, const Activations& acts,
                         std::span<const double> upstream, double scale,
                         std::span<double> grad);

GradVector backward(const DenoiserParams& params, std::span<const double> x_t, int t,
                    std::span<const double> c, std::span<const double> upstream);

DenoiserParams sgd_step(const DenoiserParams& params, const GradVector& grad, double lr);

/// SGD with heavy-ball momentum; momentum = 0 reduces to sgd_step.
class MomentumSgd {
 public:
  explicit MomentumSgd(double momentum = 0.0) : momentum_(momentum) {}
  void step(DenoiserParams& params, const GradVector& grad, double lr);

 private:
  double momentum_;
  Vec velocity_;
};

struct CheckpointMeta {
  std::uint64_t seed = 0;
  std::uint64_t config_hash = 0;
};

struct Checkpoint {
  DenoiserParams params;
  CheckpointMeta meta;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const DenoiserParams& params, const CheckpointMeta& meta,
                     const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace semidpo
