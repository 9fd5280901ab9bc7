#include "affjord/multiscale.hpp"

#include "affjord/errors.hpp"

#include <cassert>

namespace affjord {

ImageTensor::ImageTensor(std::size_t c, std::size_t s)
    : channels(c), size(s), data(Vector::Zero(static_cast<Eigen::Index>(c * s * s))) {}

ImageTensor::ImageTensor(std::size_t c, std::size_t s, Vector values)
    : channels(c), size(s), data(std::move(values)) {
  if (static_cast<std::size_t>(data.size()) != c * s * s) {
    throw DimensionError("ImageTensor: " + std::to_string(data.size()) + " values for shape [" +
                         std::to_string(c) + "," + std::to_string(s) + "," + std::to_string(s) +
                         "]");
  }
}

ImageTensor ImageTensor::channel_slice(std::size_t begin, std::size_t count) const {
  if (begin + count > channels) throw DimensionError("ImageTensor: channel slice out of range");
  const auto plane = static_cast<Eigen::Index>(size * size);
  return ImageTensor(count, size,
                     data.segment(static_cast<Eigen::Index>(begin) * plane,
                                  static_cast<Eigen::Index>(count) * plane));
}

ImageTensor squeeze(const ImageTensor& t) {
  if (t.size % 2 != 0) {
    throw DimensionError("squeeze: spatial size " + std::to_string(t.size) + " is odd");
  }
  const std::size_t half = t.size / 2;
  ImageTensor out(4 * t.channels, half);
  for (std::size_t c = 0; c < t.channels; ++c) {
    for (std::size_t i = 0; i < half; ++i) {
      for (std::size_t j = 0; j < half; ++j) {
        for (std::size_t dy = 0; dy < 2; ++dy) {
          for (std::size_t dx = 0; dx < 2; ++dx) {
            out.at(4 * c + 2 * dy + dx, i, j) = t.at(c, 2 * i + dy, 2 * j + dx);
          }
        }
      }
    }
  }
  return out;
}

ImageTensor unsqueeze(const ImageTensor& t) {
  if (t.channels % 4 != 0) {
    throw DimensionError("unsqueeze: channel count " + std::to_string(t.channels) +
                         " is not a multiple of 4");
  }
  ImageTensor out(t.channels / 4, 2 * t.size);
  for (std::size_t c = 0; c < out.channels; ++c) {
    for (std::size_t i = 0; i < t.size; ++i) {
      for (std::size_t j = 0; j < t.size; ++j) {
        for (std::size_t dy = 0; dy < 2; ++dy) {
          for (std::size_t dx = 0; dx < 2; ++dx) {
            out.at(c, 2 * i + dy, 2 * j + dx) = t.at(4 * c + 2 * dy + dx, i, j);
          }
        }
      }
    }
  }
  return out;
}

ImageTensor concat_channels(const ImageTensor& a, const ImageTensor& b) {
  if (a.size != b.size) throw DimensionError("concat_channels: spatial sizes differ");
  Vector v(a.data.size() + b.data.size());
  v << a.data, b.data;
  return ImageTensor(a.channels + b.channels, a.size, std::move(v));
}

// ---------------------------------------------------------- architecture

void MultiscaleArchitecture::validate() const {
  if (channels == 0 || size == 0) throw DimensionError("multiscale: empty input shape");
  if (levels == 0) throw DimensionError("multiscale: need at least one level");
  if (levels >= 64 || size % (std::size_t{1} << levels) != 0) {
    throw DimensionError("multiscale: " + std::to_string(levels) +
                         " levels need the size to be divisible by 2^levels, got " +
                         std::to_string(size));
  }
  if (is_augmented(variant) && aug_channels == 0) {
    throw DimensionError("multiscale: augmented blocks need at least one augmented channel");
  }
}

std::size_t MultiscaleArchitecture::level_channels(std::size_t level) const {
  return channels << level;  // each level keeps 2c of the 4c squeezed channels
}

std::size_t MultiscaleArchitecture::level_size(std::size_t level) const { return size >> level; }

std::size_t MultiscaleArchitecture::level_aug_channels() const {
  return is_augmented(variant) ? aug_channels : 0;
}

FlowArchitecture MultiscaleArchitecture::block_architecture(std::size_t level) const {
  const std::size_t s = level_size(level);
  FlowArchitecture a;
  a.variant = variant;
  a.data_dim = level_channels(level) * s * s;
  a.hidden = hidden;
  a.aug_dim = level_aug_channels() * s * s;
  a.g_hidden = g_hidden;
  a.hyper_inputs = std::min(hyper_inputs, a.aug_dim == 0 ? std::size_t{1} : a.aug_dim);
  a.activation = activation;
  return a;
}

MultiscaleStack MultiscaleStack::initialize(const MultiscaleArchitecture& arch, std::uint64_t seed,
                                            SolverConfig solver) {
  arch.validate();
  MultiscaleStack stack{arch, {}};
  for (std::size_t l = 0; l < arch.levels; ++l) {
    stack.blocks.push_back(FlowModel::initialize(arch.block_architecture(l), seed + 7919 * l, solver));
  }
  return stack;
}

MultiscaleStack MultiscaleStack::zeros(const MultiscaleArchitecture& arch, SolverConfig solver) {
  arch.validate();
  MultiscaleStack stack{arch, {}};
  for (std::size_t l = 0; l < arch.levels; ++l) {
    stack.blocks.push_back(FlowModel::zeros(arch.block_architecture(l), solver));
  }
  return stack;
}

namespace {

void check_stack(const MultiscaleStack& stack) {
  stack.arch.validate();
  if (stack.blocks.size() != stack.arch.levels) {
    throw DimensionError("multiscale: stack has " + std::to_string(stack.blocks.size()) +
                         " blocks for " + std::to_string(stack.arch.levels) + " levels");
  }
}

ImageTensor squeezed_aug(const MultiscaleStack& stack, std::size_t level, const Vector& zstar) {
  const std::size_t a = stack.arch.level_aug_channels();
  if (a == 0) return ImageTensor(0, stack.arch.level_size(level) / 2);
  return squeeze(ImageTensor(a, stack.arch.level_size(level), zstar));
}

}  // namespace

MultiscaleForward pipeline_forward(const MultiscaleStack& stack, const ImageTensor& x) {
  check_stack(stack);
  const MultiscaleArchitecture& arch = stack.arch;
  if (x.channels != arch.channels || x.size != arch.size) {
    throw DimensionError("pipeline_forward: input shape does not match the stack");
  }
  MultiscaleForward out;
  ImageTensor active = x;
  std::size_t stored = 0;
  for (std::size_t l = 0; l < arch.levels; ++l) {
    const FlowModel& block = stack.blocks[l];
    const FlowModel exact =
        block.trace_mode() == TraceMode::exact ? block : block.with_trace(TraceMode::exact);
    const FlowForward f = forward_batch(exact, active.data.transpose());
    const double ld = f.delta_logdet(0);
    out.state.block_logdet.push_back(ld);
    out.state.logdet += ld;

    const ImageTensor data = squeeze(ImageTensor(active.channels, active.size,
                                                 f.z_terminal.row(0).transpose()));
    out.state.array_a.push_back(squeezed_aug(stack, l, f.zstar_terminal));
    const std::size_t half = data.channels / 2;
    out.state.array_b.push_back(data.channel_slice(0, half));
    active = data.channel_slice(half, data.channels - half);
    stored += out.state.array_b.back().entries();
    assert(stored + active.entries() == x.entries());
  }
  out.delta_logdet = out.state.logdet;
  out.output.resize(static_cast<Eigen::Index>(x.entries()));
  Eigen::Index pos = 0;
  for (const ImageTensor& b : out.state.array_b) {
    out.output.segment(pos, b.data.size()) = b.data;
    pos += b.data.size();
  }
  out.output.tail(active.data.size()) = active.data;
  return out;
}

ImageTensor pipeline_inverse(const MultiscaleStack& stack, const Vector& output,
                             const MultiscaleState& state) {
  check_stack(stack);
  const MultiscaleArchitecture& arch = stack.arch;
  const std::size_t total = arch.channels * arch.size * arch.size;
  if (static_cast<std::size_t>(output.size()) != total) {
    throw DimensionError("pipeline_inverse: output has the wrong number of entries");
  }
  if (state.array_a.size() < arch.levels) {
    throw StateError("pipeline_inverse: Array A holds " + std::to_string(state.array_a.size()) +
                     " levels, the stack has " + std::to_string(arch.levels));
  }
  // Offsets of each level's Array B block inside `output`.
  std::vector<Eigen::Index> offsets;
  Eigen::Index pos = 0;
  for (std::size_t l = 0; l < arch.levels; ++l) {
    offsets.push_back(pos);
    const std::size_t s = arch.level_size(l) / 2;
    pos += static_cast<Eigen::Index>(2 * arch.level_channels(l) * s * s);
  }
  const std::size_t last = arch.levels - 1;
  ImageTensor active(2 * arch.level_channels(last), arch.level_size(last) / 2,
                     output.tail(output.size() - pos));

  for (std::size_t l = arch.levels; l-- > 0;) {
    const std::size_t c = arch.level_channels(l);
    const std::size_t s = arch.level_size(l);
    const ImageTensor stored(2 * c, s / 2,
                             output.segment(offsets[l], static_cast<Eigen::Index>(2 * c * (s / 2) * (s / 2))));
    const ImageTensor data = unsqueeze(concat_channels(stored, active));
    const ImageTensor& aug_sq = state.array_a[l];
    const std::size_t a = arch.level_aug_channels();
    if (aug_sq.channels != 4 * a || aug_sq.size != s / 2) {
      throw StateError("pipeline_inverse: Array A level " + std::to_string(l) +
                       " has the wrong shape");
    }
    const Vector zstar = a > 0 ? unsqueeze(aug_sq).data : Vector();
    const Matrix x0 = inverse_batch(stack.blocks[l], data.data.transpose(), zstar);
    active = ImageTensor(c, s, x0.row(0).transpose());
  }
  return active;
}

std::vector<ImageTensor> regenerate_array_a(const MultiscaleStack& stack) {
  check_stack(stack);
  std::vector<ImageTensor> out;
  for (std::size_t l = 0; l < stack.arch.levels; ++l) {
    out.push_back(squeezed_aug(stack, l, augmented_terminal(stack.blocks[l])));
  }
  return out;
}

}  // namespace affjord
