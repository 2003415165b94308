#pragma once

#include <cstdint>
#include <string>

#include "condreg/params.hpp"
#include "condreg/volume.hpp"

namespace condreg {

inline constexpr int kFeatureChannels = 8;

/// Encoder-decoder layout. Level l runs at 1/2^l resolution with
/// base_channels * 2^l channels.
struct BackboneConfig {
  int levels = 3;
  int base_channels = 8;
  int blocks_per_level = 1;
  double slope = 0.01;

  void validate() const;
  int channels(int level) const { return base_channels << level; }
};

namespace backbone {

/// Fan-in uniform weights, zero biases.
ParamSlice init(const BackboneConfig& config, std::uint64_t seed);

/// x + conv(leaky(conv(x))) with the two convs named prefix.conv1/.conv2.
Var residual_block(Var x, const VarMap& vars, const std::string& prefix, float slope);

/// (2, D, W, H) pair input -> (8, D, W, H) features.
Var extract(Var pair, const BackboneConfig& config, const VarMap& vars);

/// Stacks fixed and moving as a 2-channel tensor after checking dims and range.
Tensor pair_input(const Volume& fixed, const Volume& moving);

Tensor extract_features(const Volume& fixed, const Volume& moving, const BackboneConfig& config,
                        const ParamSlice& params);

}  // namespace backbone
}  // namespace condreg
