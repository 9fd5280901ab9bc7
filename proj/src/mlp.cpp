#include "affjord/mlp.hpp"

#include "affjord/errors.hpp"

#include <cmath>

namespace affjord {
namespace {

using ConstWeights = Eigen::Map<const Matrix>;
using Weights = Eigen::Map<Matrix>;
using ConstBias = Eigen::Map<const Vector>;
using Bias = Eigen::Map<Vector>;

}  // namespace

Activation parse_activation(const std::string& name) {
  if (name == "tanh") return Activation::tanh;
  if (name == "softplus") return Activation::softplus;
  throw ConfigurationError("unknown activation '" + name + "'");
}

std::string to_string(Activation a) {
  return a == Activation::tanh ? "tanh" : "softplus";
}

MlpLayout::MlpLayout(std::vector<std::size_t> widths) : widths_(std::move(widths)) {
  if (widths_.size() < 2) throw DimensionError("MlpLayout: need at least input and output widths");
  for (std::size_t w : widths_) {
    if (w == 0) throw DimensionError("MlpLayout: zero layer width");
  }
  offsets_.reserve(widths_.size() - 1);
  for (std::size_t l = 0; l + 1 < widths_.size(); ++l) {
    offsets_.push_back(param_count_);
    param_count_ += widths_[l] * widths_[l + 1] + widths_[l + 1];
  }
}

MlpTape::MlpTape(const MlpLayout& layout, Activation activation)
    : layout_(&layout), activation_(activation) {}

void MlpTape::forward(std::span<const double> params, const Eigen::MatrixXd& input,
                      const Eigen::MatrixXd* seeds, std::span<const double> shared) {
  const MlpLayout& layout = *layout_;
  if (params.size() != layout.param_count()) {
    throw DimensionError("MlpTape: parameter vector has " + std::to_string(params.size()) +
                         " entries, layout needs " + std::to_string(layout.param_count()));
  }
  if (static_cast<std::size_t>(input.rows()) + shared.size() != layout.input_dim()) {
    throw DimensionError("MlpTape: input has " + std::to_string(input.rows()) + " + " +
                         std::to_string(shared.size()) + " rows, network expects " +
                         std::to_string(layout.input_dim()));
  }
  const std::size_t layers = layout.layer_count();
  batch_ = static_cast<std::size_t>(input.cols());
  tangent_count_ = 0;
  seed_rows_ = 0;
  if (seeds != nullptr) {
    seed_rows_ = static_cast<std::size_t>(seeds->rows());
    if (seed_rows_ > static_cast<std::size_t>(input.rows()) || batch_ == 0 ||
        static_cast<std::size_t>(seeds->cols()) % batch_ != 0) {
      throw DimensionError("MlpTape: tangent seed block has incompatible shape");
    }
    tangent_count_ = static_cast<std::size_t>(seeds->cols()) / batch_;
  }
  const auto b = static_cast<Eigen::Index>(batch_);
  const auto k = static_cast<Eigen::Index>(tangent_count_);
  const Eigen::Index cols = (1 + k) * b;

  input_ = input;
  shared_ = Eigen::Map<const Eigen::VectorXd>(shared.data(), static_cast<Eigen::Index>(shared.size()));
  if (k > 0) seeds_ = *seeds;
  const Eigen::Index varying = input.rows();
  act_.resize(layers);
  pre_.resize(layers);
  slope_.resize(layers - 1);
  curvature_.resize(layers - 1);

  for (std::size_t l = 0; l < layers; ++l) {
    const auto in = static_cast<Eigen::Index>(layout.widths()[l]);
    const auto out = static_cast<Eigen::Index>(layout.widths()[l + 1]);
    const ConstWeights w(params.data() + layout.weight_offset(l), out, in);
    const ConstBias bias(params.data() + layout.bias_offset(l), out);

    Eigen::MatrixXd& pre = pre_[l];
    pre.resize(out, cols);
    if (l == 0) {
      // The input is only a few rows deep; a coefficient-wise product skips
      // the GEMM kernel's zero fill and packing.
      pre.leftCols(b).noalias() = w.leftCols(varying).lazyProduct(input_);
      if (k > 0) {
        pre.rightCols(k * b).noalias() =
            w.leftCols(static_cast<Eigen::Index>(seed_rows_)).lazyProduct(seeds_);
      }
      if (shared_.size() > 0) {
        const Eigen::VectorXd shifted = bias + w.rightCols(shared_.size()) * shared_;
        pre.leftCols(b).colwise() += shifted;
      } else {
        pre.leftCols(b).colwise() += bias;
      }
    } else {
      pre.noalias() = w * act_[l];
      pre.leftCols(b).colwise() += bias;
    }
    if (l + 1 == layers) break;

    Eigen::MatrixXd& next = act_[l + 1];
    Eigen::MatrixXd& slope = slope_[l];
    Eigen::MatrixXd& curv = curvature_[l];
    next.resize(out, cols);
    const auto x = pre.leftCols(b).array();
    if (activation_ == Activation::tanh) {
      // 1 - 2/(e^{2x} + 1) vectorises where std::tanh does not; absolute error ~1e-16.
      next.leftCols(b).array() = 1.0 - 2.0 / ((2.0 * x).exp() + 1.0);
      slope = (1.0 - next.leftCols(b).array().square()).matrix();
      curv = (-2.0 * next.leftCols(b).array() * slope.array()).matrix();
    } else {
      // softplus(x) = log(1 + e^x), evaluated without overflow.
      next.leftCols(b).array() = x.max(0.0) + (-x.abs()).exp().log1p();
      slope = (1.0 / (1.0 + (-x).exp())).matrix();
      curv = (slope.array() * (1.0 - slope.array())).matrix();
    }
    for (Eigen::Index j = 1; j <= k; ++j) {
      next.middleCols(j * b, b).array() = slope.array() * pre.middleCols(j * b, b).array();
    }
  }
}

void MlpTape::backward(std::span<const double> params, const Eigen::MatrixXd& out_bar,
                       const Eigen::MatrixXd* tangent_bar, Eigen::MatrixXd* input_bar,
                       std::span<double> param_bar, Eigen::VectorXd* shared_bar) const {
  const MlpLayout& layout = *layout_;
  if (param_bar.size() != layout.param_count()) {
    throw DimensionError("MlpTape::backward: parameter cotangent has wrong size");
  }
  if (tangent_bar != nullptr && tangent_count_ == 0) {
    throw DimensionError("MlpTape::backward: tangent cotangent given without forward tangents");
  }
  const std::size_t layers = layout.layer_count();
  const auto b = static_cast<Eigen::Index>(batch_);
  const auto out_dim = static_cast<Eigen::Index>(layout.output_dim());
  const bool tangents = tangent_bar != nullptr;
  const Eigen::Index k = tangents ? static_cast<Eigen::Index>(tangent_count_) : 0;
  const Eigen::Index cols = (1 + k) * b;

  // bar = [primal cotangent | tangent cotangents], matching pre_ columns.
  bar_.resize(layers);
  Eigen::MatrixXd* bar_ptr = &bar_[layers - 1];
  bar_ptr->resize(out_dim, cols);
  Eigen::MatrixXd& top = *bar_ptr;
  if (out_bar.size() == 0) {
    top.leftCols(b).setZero();
  } else {
    if (out_bar.rows() != out_dim || out_bar.cols() != b) {
      throw DimensionError("MlpTape::backward: output cotangent has wrong shape");
    }
    top.leftCols(b) = out_bar;
  }
  if (tangents) {
    if (tangent_bar->rows() != out_dim || tangent_bar->cols() != k * b) {
      throw DimensionError("MlpTape::backward: tangent cotangent has wrong shape");
    }
    top.rightCols(k * b) = *tangent_bar;
  }

  Eigen::MatrixXd& act_bar = act_bar_;
  for (std::size_t l = layers; l-- > 0;) {
    const auto in = static_cast<Eigen::Index>(layout.widths()[l]);
    const auto out = static_cast<Eigen::Index>(layout.widths()[l + 1]);
    const ConstWeights w(params.data() + layout.weight_offset(l), out, in);
    const Eigen::MatrixXd& bar = *bar_ptr;
    Weights dw(param_bar.data() + layout.weight_offset(l), out, in);
    Bias db(param_bar.data() + layout.bias_offset(l), out);

    const Eigen::VectorXd bar_sum = bar.leftCols(b).rowwise().sum();
    db += bar_sum;
    if (l == 0) {
      const Eigen::Index varying = input_.rows();
      const Eigen::Index shared = shared_.size();
      dw.leftCols(varying).noalias() += bar.leftCols(b) * input_.transpose();
      if (tangents) {
        dw.leftCols(static_cast<Eigen::Index>(seed_rows_)).noalias() +=
            bar.rightCols(k * b) * seeds_.transpose();
      }
      if (shared > 0) {
        dw.rightCols(shared).noalias() += bar_sum * shared_.transpose();
        if (shared_bar != nullptr) shared_bar->noalias() = w.rightCols(shared).transpose() * bar_sum;
      } else if (shared_bar != nullptr) {
        shared_bar->resize(0);
      }
      if (input_bar != nullptr) {
        input_bar->noalias() = w.leftCols(varying).transpose() * bar.leftCols(b);
      }
      break;
    }
    dw.noalias() += bar * act_[l].leftCols(cols).transpose();
    act_bar.noalias() = w.transpose() * bar;

    // Back through the activation of layer l-1. The tangent path contributes
    // curvature * sum_j (tangent cotangent_j * tangent pre-activation_j).
    const std::size_t h = l - 1;
    const Eigen::MatrixXd& pre = pre_[h];
    bar_ptr = &bar_[h];
    Eigen::MatrixXd& next = *bar_ptr;
    next.resize(in, cols);
    next.leftCols(b).array() = slope_[h].array() * act_bar.leftCols(b).array();
    if (tangents) {
      Eigen::ArrayXXd& mix = mix_;
      mix = act_bar.middleCols(b, b).array() * pre.middleCols(b, b).array();
      for (Eigen::Index j = 2; j <= k; ++j) {
        mix += act_bar.middleCols(j * b, b).array() * pre.middleCols(j * b, b).array();
      }
      next.leftCols(b).array() += curvature_[h].array() * mix;
      for (Eigen::Index j = 1; j <= k; ++j) {
        next.middleCols(j * b, b).array() = slope_[h].array() * act_bar.middleCols(j * b, b).array();
      }
    }
  }
}

}  // namespace affjord
