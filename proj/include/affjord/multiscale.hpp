#pragma once

#include "affjord/cnf_flow.hpp"
#include "affjord/flow_model.hpp"

#include <cstdint>
#include <vector>

namespace affjord {

/// [channels, size, size] tensor stored channel-major, then row-major.
struct ImageTensor {
  std::size_t channels = 0;
  std::size_t size = 0;
  Vector data;

  ImageTensor() = default;
  ImageTensor(std::size_t c, std::size_t s);
  ImageTensor(std::size_t c, std::size_t s, Vector values);

  std::size_t entries() const { return channels * size * size; }
  double& at(std::size_t c, std::size_t y, std::size_t x) { return data(index(c, y, x)); }
  double at(std::size_t c, std::size_t y, std::size_t x) const { return data(index(c, y, x)); }
  /// Channels [begin, begin + count).
  ImageTensor channel_slice(std::size_t begin, std::size_t count) const;

 private:
  Eigen::Index index(std::size_t c, std::size_t y, std::size_t x) const {
    return static_cast<Eigen::Index>((c * size + y) * size + x);
  }
};

/// [c, s, s] -> [4c, s/2, s/2]. Input channel c at (2i + dy, 2j + dx) moves to
/// channel 4c + 2dy + dx at (i, j). Throws DimensionError for odd s.
ImageTensor squeeze(const ImageTensor& t);
/// Exact inverse of squeeze. Throws DimensionError unless channels % 4 == 0.
ImageTensor unsqueeze(const ImageTensor& t);
/// Stacks the channels of a on top of those of b (same spatial size).
ImageTensor concat_channels(const ImageTensor& a, const ImageTensor& b);

struct MultiscaleArchitecture {
  std::size_t channels = 1;
  std::size_t size = 8;
  std::size_t levels = 2;
  std::size_t aug_channels = 1;  // per level; ignored for FFJORD blocks
  Variant variant = Variant::affjord_concat;
  std::vector<std::size_t> hidden{64};
  std::size_t g_hidden = 32;
  std::size_t hyper_inputs = 10;
  Activation activation = Activation::tanh;

  /// Throws DimensionError when size is not divisible by 2^levels.
  void validate() const;
  std::size_t level_channels(std::size_t level) const;  // data channels entering `level`
  std::size_t level_size(std::size_t level) const;
  std::size_t level_aug_channels() const;
  FlowArchitecture block_architecture(std::size_t level) const;
};

/// One dense CNF block per level acting on the flattened level tensor.
struct MultiscaleStack {
  MultiscaleArchitecture arch;
  std::vector<FlowModel> blocks;

  static MultiscaleStack initialize(const MultiscaleArchitecture& arch, std::uint64_t seed,
                                    SolverConfig solver = SolverConfig::rk4(40));
  static MultiscaleStack zeros(const MultiscaleArchitecture& arch,
                               SolverConfig solver = SolverConfig::rk4(40));
};

struct MultiscaleState {
  std::vector<ImageTensor> array_a;  // squeezed augmented channels, one per level
  std::vector<ImageTensor> array_b;  // factored-out data channels, one per level
  std::vector<double> block_logdet;  // per-level trace integrals
  double logdet = 0.0;
};

struct MultiscaleForward {
  Vector output;  // [array_b(0), ..., array_b(L-1), final active tensor]
  double delta_logdet = 0.0;
  MultiscaleState state;
};

/// Per level: append zero augmented channels, run the CNF block, squeeze,
/// move the augmented channels to Array A, move the first half of the data
/// channels to Array B and continue with the rest.
MultiscaleForward pipeline_forward(const MultiscaleStack& stack, const ImageTensor& x);

/// Inverts pipeline_forward level by level using Array A from `state`.
/// Throws StateError when Array A is missing levels.
ImageTensor pipeline_inverse(const MultiscaleStack& stack, const Vector& output,
                             const MultiscaleState& state);

/// Array A depends only on the model; this rebuilds it without a forward pass.
std::vector<ImageTensor> regenerate_array_a(const MultiscaleStack& stack);

}  // namespace affjord
