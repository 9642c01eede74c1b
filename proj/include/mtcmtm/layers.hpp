#pragma once

// Parameterized building blocks of the encoders. Each block has an init_*
// function that registers its tensors under `prefix` and a forward function
// that reads them back through a Forward context.

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "mtcmtm/params.hpp"
#include "mtcmtm/rng.hpp"

namespace mtcmtm {

enum class InitScheme { kaiming_uniform, zeros, ones };

/// kaiming_uniform draws from U(-sqrt(6/fan_in), +sqrt(6/fan_in)).
Tensor init_tensor(InitScheme scheme, Shape shape, std::size_t fan_in, Rng& rng);

/// Fan-in of a weight tensor: rows of a [in, out] dense matrix, or the
/// product of all but the first dimension of a conv kernel.
std::size_t fan_in_of(const Shape& shape);

/// Registers each (name, shape) with `scheme`, drawing in list order from a
/// generator seeded with `seed`.
ParamStore init_params(InitScheme scheme, const std::vector<std::pair<std::string, Shape>>& shapes,
                       std::uint64_t seed);

// dense: x [batch, in] -> x W + b, W [in, out], b [out]
void init_dense(ParamStore& store, const std::string& prefix, std::size_t in, std::size_t out,
                Rng& rng);
Var dense(Forward& fw, const std::string& prefix, const Var& x);

// conv1d layer with bias: w [cout, cin, k], b [cout]
void init_conv1d(ParamStore& store, const std::string& prefix, std::size_t cin, std::size_t cout,
                 std::size_t kernel, Rng& rng);
Var conv1d_layer(Forward& fw, const std::string& prefix, const Var& x, std::size_t stride,
                 std::size_t pad);

// 2-d conv layer with bias: w [cout, cin, k, k], b [cout]
void init_conv2d(ParamStore& store, const std::string& prefix, std::size_t cin, std::size_t cout,
                 std::size_t kernel, Rng& rng);
Var conv2d_layer(Forward& fw, const std::string& prefix, const Var& x, std::size_t stride,
                 std::size_t pad);

inline constexpr double kBatchNormEps = 1e-5;
inline constexpr double kBatchNormMomentum = 0.1;

/// gamma/beta trainable; running_mean/running_var non-trainable.
void init_batchnorm(ParamStore& store, const std::string& prefix, std::size_t channels);
/// x [batch, C, S]. Train mode normalizes with batch moments over (batch, S)
/// and (optionally) updates the running moments; eval mode uses them.
Var batchnorm1d(Forward& fw, const std::string& prefix, const Var& x);

struct CbamConfig {
  std::size_t channels = 32;
  std::size_t reduction = 4;
  std::size_t spatial_kernel = 7;

  std::size_t hidden() const { return channels / reduction; }
  void validate() const;
};

/// Attention maps from the last cbam1d call that received a trace.
struct CbamTrace {
  Tensor channel_attention;  // [batch, C]
  Tensor spatial_attention;  // [batch, S]
};

void init_cbam(ParamStore& store, const std::string& prefix, const CbamConfig& cfg, Rng& rng);
/// Channel attention (shared two-layer MLP over avg- and max-pooled
/// descriptors) followed by spatial attention (conv over the stacked
/// channel-avg and channel-max maps). Both gates are sigmoids.
Var cbam1d(Forward& fw, const std::string& prefix, const CbamConfig& cfg, const Var& x,
           CbamTrace* trace = nullptr);

struct ResidualBlockConfig {
  std::size_t in_channels = 32;
  std::size_t out_channels = 32;
  std::size_t stride = 1;
  std::size_t kernel = 3;
  std::size_t reduction = 4;
  std::size_t spatial_kernel = 7;

  bool projects() const { return in_channels != out_channels || stride != 1; }
  CbamConfig cbam() const { return {out_channels, reduction, spatial_kernel}; }
};

void init_residual_block(ParamStore& store, const std::string& prefix,
                         const ResidualBlockConfig& cfg, Rng& rng);
/// relu(CBAM(BN(conv(relu(BN(conv(x)))))) + shortcut(x)); the shortcut is a
/// strided 1x1 conv when channels or length change, identity otherwise.
Var residual_block(Forward& fw, const std::string& prefix, const ResidualBlockConfig& cfg,
                   const Var& x);

}  // namespace mtcmtm
