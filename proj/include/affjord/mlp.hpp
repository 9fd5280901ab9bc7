#pragma once

#include "affjord/core_math.hpp"

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace affjord {

enum class Activation { tanh, softplus };

Activation parse_activation(const std::string& name);
std::string to_string(Activation a);

/// Flat parameter layout of a dense network. Each layer stores its weight
/// matrix (out x in, row-major) immediately followed by its bias vector.
class MlpLayout {
 public:
  explicit MlpLayout(std::vector<std::size_t> widths);

  const std::vector<std::size_t>& widths() const { return widths_; }
  std::size_t layer_count() const { return widths_.size() - 1; }
  std::size_t input_dim() const { return widths_.front(); }
  std::size_t output_dim() const { return widths_.back(); }
  std::size_t param_count() const { return param_count_; }
  std::size_t weight_offset(std::size_t layer) const { return offsets_[layer]; }
  std::size_t bias_offset(std::size_t layer) const {
    return offsets_[layer] + widths_[layer] * widths_[layer + 1];
  }

 private:
  std::vector<std::size_t> widths_;
  std::vector<std::size_t> offsets_;
  std::size_t param_count_ = 0;
};

/// Batched forward/reverse evaluation of a dense network whose hidden layers
/// apply `Activation` and whose output layer is affine.
///
/// Inputs are stored column-wise (in x B). Optionally the forward pass also
/// pushes k tangent directions per sample through the network (forward-mode
/// Jacobian-vector products). Tangent seeds act on the leading `seed_rows`
/// input coordinates only and are laid out as seed_rows x (k*B) with column
/// j*B + b holding direction j of sample b.
///
/// `backward` then accumulates gradients of
///   sum_b out_bar(:,b) . y_b  +  sum_{j,b} tangent_bar(:,jB+b) . (dy_b/dx) v_{jb}
/// with respect to the inputs and the parameters; the second term needs the
/// activation's second derivative and is what makes divergence terms
/// differentiable.
class MlpTape {
 public:
  MlpTape(const MlpLayout& layout, Activation activation);

  /// `shared` supplies trailing input coordinates common to every column
  /// (time, or an augmented state); they enter the first layer as a bias.
  void forward(std::span<const double> params, const Eigen::MatrixXd& input,
               const Eigen::MatrixXd* seeds = nullptr, std::span<const double> shared = {});

  /// out x B block of network outputs.
  auto output() const { return pre_.back().leftCols(static_cast<Eigen::Index>(batch_)); }
  /// out x (k*B) block of output tangents.
  auto output_tangents() const {
    return pre_.back().rightCols(static_cast<Eigen::Index>(tangent_count_ * batch_));
  }
  std::size_t batch() const { return batch_; }
  std::size_t tangent_count() const { return tangent_count_; }
  bool has_tangents() const { return tangent_count_ > 0; }

  /// `out_bar` may be empty (treated as zero). `tangent_bar` requires a
  /// forward pass with seeds. `input_bar` (nullable) receives the cotangent
  /// of the per-column input, `shared_bar` (nullable) that of the shared
  /// coordinates summed over columns; `param_bar` is accumulated into.
  void backward(std::span<const double> params, const Eigen::MatrixXd& out_bar,
                const Eigen::MatrixXd* tangent_bar, Eigen::MatrixXd* input_bar,
                std::span<double> param_bar, Eigen::VectorXd* shared_bar = nullptr) const;

 private:
  const MlpLayout* layout_;
  Activation activation_;
  std::size_t batch_ = 0;
  std::size_t tangent_count_ = 0;
  std::size_t seed_rows_ = 0;
  // Primal and tangent columns share storage: [primal (B) | tangent blocks (k*B)].
  Eigen::MatrixXd input_;
  Eigen::VectorXd shared_;
  Eigen::MatrixXd seeds_;
  std::vector<Eigen::MatrixXd> act_;        // act_[l]: input to layer l >= 1
  std::vector<Eigen::MatrixXd> pre_;        // pre_[l]: affine output of layer l
  std::vector<Eigen::MatrixXd> slope_;      // activation' at pre_[l], hidden layers (B cols)
  std::vector<Eigen::MatrixXd> curvature_;  // activation'' at pre_[l], hidden layers (B cols)
  // backward() scratch, kept so repeated calls reuse the allocation.
  mutable std::vector<Eigen::MatrixXd> bar_;  // bar_[l]: cotangent of pre_[l]
  mutable Eigen::MatrixXd act_bar_;
  mutable Eigen::ArrayXXd mix_;
};

}  // namespace affjord
