#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "ila/engine/tensor.hpp"
#include "ila/errors.hpp"

namespace ila::models {

enum class Arch {
  kMiniCnn,
  kMiniVgg,
  kMiniResnet,
  kMiniResnetVar1,
  kMiniResnetVar2,
};

inline constexpr std::array<std::string_view, 5> kArchIds{
    "mini_cnn", "mini_vgg", "mini_resnet", "mini_resnet_var1",
    "mini_resnet_var2"};

inline std::string_view arch_id(Arch a) {
  return kArchIds[static_cast<std::size_t>(a)];
}

inline Arch parse_arch(std::string_view id) {
  for (std::size_t i = 0; i < kArchIds.size(); ++i) {
    if (kArchIds[i] == id) return static_cast<Arch>(i);
  }
  throw ConfigError("unknown arch_id '" + std::string(id) +
                    "' (expected mini_cnn, mini_vgg, mini_resnet, "
                    "mini_resnet_var1 or mini_resnet_var2)");
}

/// CIFAR-10 channel statistics used by the fixed normalization layer.
inline constexpr std::array<float, 3> kCifarMean{0.4914f, 0.4822f, 0.4465f};
inline constexpr std::array<float, 3> kCifarStd{0.2470f, 0.2435f, 0.2616f};

struct ModelSpec {
  Arch arch = Arch::kMiniResnet;
  int num_classes = 10;
  float width_multiplier = 1.0f;
  std::array<std::size_t, 3> input_shape{3, 32, 32};
  std::array<float, 3> mean = kCifarMean;
  std::array<float, 3> stddev = kCifarStd;

  void validate() const {
    if (num_classes < 2) throw ConfigError("num_classes must be >= 2");
    if (!(width_multiplier > 0)) {
      throw ConfigError("width_multiplier must be positive");
    }
    if (input_shape != std::array<std::size_t, 3>{3, 32, 32}) {
      throw ConfigError("input_shape must be (3, 32, 32)");
    }
    for (float s : stddev) {
      if (!(s > 0)) throw ConfigError("normalization std must be positive");
    }
  }
};

/// One attackable intermediate output. `features` is the flattened size per
/// image.
struct LayerEndpoint {
  std::size_t index = 0;
  std::string name;
  engine::Shape shape;  // per-image shape before flattening
  std::size_t features = 0;
};

/// Endpoint names published by each architecture, in execution order.
inline std::vector<std::string> endpoint_names(Arch arch) {
  switch (arch) {
    case Arch::kMiniCnn:
      return {"block1", "block2", "block3", "fc1", "linear"};
    case Arch::kMiniVgg:
      return {"stage1", "stage2", "stage3", "pool", "linear"};
    case Arch::kMiniResnet:
      return {"conv", "bn", "layer1", "layer2", "layer3", "layer4", "linear"};
    case Arch::kMiniResnetVar1:
    case Arch::kMiniResnetVar2:
      return {"conv",   "bn",         "layer1",     "layer2",    "layer3",
              "layer4", "fc_extra1", "fc_extra2", "fc_extra3", "linear"};
  }
  throw ConfigError("unknown arch");
}

}  // namespace ila::models
