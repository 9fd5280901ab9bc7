#include "affjord/toy_data.hpp"

#include "affjord/errors.hpp"
#include "affjord/vector_field.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <random>
#include <sstream>

namespace affjord {
namespace {

// Mass of a 2D standard normal inside the truncation radius.
double truncated_mass() { return -std::expm1(-0.5 * kTruncationRadius * kTruncationRadius); }

bool in_box(const Eigen::Vector2d& p) {
  return std::abs(p.x()) <= kToyBound && std::abs(p.y()) <= kToyBound;
}

GaussianComponent component(double weight, double mx, double my, double sx, double sy) {
  GaussianComponent c;
  c.weight = weight;
  c.mean = {mx, my};
  c.cov = Eigen::Vector2d(sx * sx, sy * sy).asDiagonal();
  return c;
}

Eigen::Vector2d draw_component(const GaussianComponent& c, std::mt19937_64& engine) {
  std::normal_distribution<double> normal(0.0, 1.0);
  const Eigen::Matrix2d chol = c.cov.llt().matrixL();
  for (;;) {
    const Eigen::Vector2d u(normal(engine), normal(engine));
    if (u.norm() <= kTruncationRadius) return c.mean + chol * u;
  }
}

std::size_t pick(const std::vector<GaussianComponent>& comps, std::mt19937_64& engine) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double r = u(engine);
  for (std::size_t i = 0; i + 1 < comps.size(); ++i) {
    r -= comps[i].weight;
    if (r < 0.0) return i;
  }
  return comps.size() - 1;
}

double mixture_log_density(const std::vector<GaussianComponent>& comps,
                           const Eigen::Vector2d& x) {
  // log-sum-exp over components inside their truncated support.
  std::vector<double> terms;
  terms.reserve(comps.size());
  for (const auto& c : comps) {
    const Eigen::Vector2d d = x - c.mean;
    const double maha2 = d.dot(c.cov.ldlt().solve(d));
    if (maha2 > kTruncationRadius * kTruncationRadius) continue;
    terms.push_back(std::log(c.weight) - 0.5 * maha2 - std::log(2.0 * std::numbers::pi) -
                    0.5 * std::log(c.cov.determinant()) - std::log(truncated_mass()));
  }
  if (terms.empty()) return -std::numeric_limits<double>::infinity();
  const double top = *std::max_element(terms.begin(), terms.end());
  double s = 0.0;
  for (double t : terms) s += std::exp(t - top);
  return top + std::log(s);
}

// The glyph raster occupies x in [-4, 4]; cells are square and the top edge sits at y = 4.5.
struct GlyphFrame {
  double cell, left, top;
};

GlyphFrame glyph_frame(const Glyph& g) {
  const double cell = 8.0 / static_cast<double>(g.cols);
  return {cell, -4.0, 4.5};
}

Eigen::Vector2d draw_glyph(const DatasetSpec& spec, const std::vector<std::size_t>& filled,
                           std::mt19937_64& engine) {
  const GlyphFrame frame = glyph_frame(spec.glyph);
  std::uniform_int_distribution<std::size_t> which(0, filled.size() - 1);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> jitter(0.0, spec.noise);
  for (;;) {
    const std::size_t idx = filled[which(engine)];
    const std::size_t r = idx / spec.glyph.cols;
    const std::size_t c = idx % spec.glyph.cols;
    const double x = frame.left + (static_cast<double>(c) + u(engine)) * frame.cell;
    const double y = frame.top - (static_cast<double>(r) + u(engine)) * frame.cell;
    const Eigen::Vector2d p(x + jitter(engine), y + jitter(engine));
    if (in_box(p)) return p;
  }
}

}  // namespace

DatasetFamily parse_dataset_family(const std::string& name) {
  if (name == "gaussian-grid") return DatasetFamily::gaussian_grid;
  if (name == "hash-gaussian") return DatasetFamily::hash_gaussian;
  if (name == "glyph-text") return DatasetFamily::glyph_text;
  if (name == "rings") return DatasetFamily::rings;
  if (name == "checkerboard") return DatasetFamily::checkerboard;
  throw ConfigurationError("unknown dataset family '" + name + "'");
}

std::string to_string(DatasetFamily f) {
  switch (f) {
    case DatasetFamily::gaussian_grid: return "gaussian-grid";
    case DatasetFamily::hash_gaussian: return "hash-gaussian";
    case DatasetFamily::glyph_text: return "glyph-text";
    case DatasetFamily::rings: return "rings";
    case DatasetFamily::checkerboard: return "checkerboard";
  }
  return "?";
}

std::size_t Glyph::filled() const {
  std::size_t n = 0;
  for (auto c : cells) n += c != 0;
  return n;
}

Glyph parse_glyph(const std::string& text) {
  Glyph g;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.rfind("//", 0) == 0) continue;
    if (g.rows == 0) g.cols = line.size();
    if (line.size() != g.cols) {
      throw ParseError("glyph row length " + std::to_string(line.size()) + " differs from " +
                           std::to_string(g.cols),
                       "glyph", line_no);
    }
    for (char ch : line) {
      if (ch == '1' || ch == '#') {
        g.cells.push_back(1);
      } else if (ch == '0' || ch == '.') {
        g.cells.push_back(0);
      } else {
        throw ParseError(std::string("glyph contains invalid character '") + ch + "'", "glyph",
                         line_no);
      }
    }
    ++g.rows;
  }
  return g;
}

Glyph load_glyph(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigurationError("cannot open glyph file '" + path + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_glyph(buf.str());
}

Glyph default_glyph() {
  return parse_glyph(
      "11111010001\n"
      "00100010001\n"
      "00100001010\n"
      "00100000100\n"
      "00100000100\n"
      "00100000100\n"
      "00100000100\n");
}

void DatasetSpec::validate() const {
  auto check_mixture = [](const std::vector<GaussianComponent>& comps, const char* what) {
    if (comps.empty()) throw SpecError(std::string(what) + ": no components");
    double total = 0.0;
    for (const auto& c : comps) {
      if (!(c.weight > 0.0)) throw SpecError(std::string(what) + ": weights must be positive");
      if (c.cov.determinant() <= 0.0 || c.cov(0, 1) != c.cov(1, 0)) {
        throw SpecError(std::string(what) + ": covariance must be symmetric positive definite");
      }
      total += c.weight;
    }
    if (std::abs(total - 1.0) > 1e-9) throw SpecError(std::string(what) + ": weights must sum to 1");
  };
  switch (family) {
    case DatasetFamily::gaussian_grid:
    case DatasetFamily::hash_gaussian:
      check_mixture(components, "mixture");
      break;
    case DatasetFamily::glyph_text:
      if (glyph.rows == 0 || glyph.filled() == 0) throw SpecError("glyph bitmap is empty");
      if (!blobs.empty()) check_mixture(blobs, "glyph blob cluster");
      if (!(glyph_weight > 0.0 && glyph_weight <= 1.0)) {
        throw SpecError("glyph weight must lie in (0, 1]");
      }
      if (glyph_weight < 1.0 && blobs.empty()) throw SpecError("glyph blob cluster is empty");
      break;
    case DatasetFamily::rings:
    case DatasetFamily::checkerboard:
      break;
  }
  if (!(noise >= 0.0) || !std::isfinite(noise)) throw SpecError("noise must be non-negative");
}

DatasetSpec gaussian_grid_spec(std::size_t grid_size, double spacing, double scale) {
  if (grid_size == 0) throw SpecError("gaussian grid needs at least one component");
  DatasetSpec spec;
  spec.family = DatasetFamily::gaussian_grid;
  const double w = 1.0 / static_cast<double>(grid_size * grid_size);
  const double offset = 0.5 * spacing * static_cast<double>(grid_size - 1);
  for (std::size_t i = 0; i < grid_size; ++i) {
    for (std::size_t j = 0; j < grid_size; ++j) {
      spec.components.push_back(component(w, spacing * static_cast<double>(i) - offset,
                                          spacing * static_cast<double>(j) - offset, scale, scale));
    }
  }
  return spec;
}

DatasetSpec gaussian_mixture_spec(std::vector<GaussianComponent> components) {
  DatasetSpec spec;
  spec.family = DatasetFamily::gaussian_grid;
  spec.components = std::move(components);
  return spec;
}

DatasetSpec hash_gaussian_spec() {
  DatasetSpec spec;
  spec.family = DatasetFamily::hash_gaussian;
  const double across = 0.12;
  const double along = 0.9;
  for (double s : {-1.0, 1.0}) {
    spec.components.push_back(component(0.15, s, 0.0, across, along));
    spec.components.push_back(component(0.15, 0.0, s, along, across));
  }
  for (double sx : {-3.0, 3.0}) {
    for (double sy : {-3.0, 3.0}) spec.components.push_back(component(0.1, sx, sy, 0.3, 0.3));
  }
  return spec;
}

DatasetSpec glyph_text_spec(Glyph glyph) {
  DatasetSpec spec;
  spec.family = DatasetFamily::glyph_text;
  spec.glyph = std::move(glyph);
  // Five small Gaussians around (0, -3).
  for (int k = 0; k < 5; ++k) {
    const double a = 2.0 * std::numbers::pi * k / 5.0 + 0.5 * std::numbers::pi;
    spec.blobs.push_back(component(0.2, std::cos(a), -3.0 + 0.9 * std::sin(a), 0.2, 0.2));
  }
  return spec;
}

DatasetSpec rings_spec(double noise) {
  DatasetSpec spec;
  spec.family = DatasetFamily::rings;
  spec.noise = noise;
  return spec;
}

DatasetSpec checkerboard_spec() {
  DatasetSpec spec;
  spec.family = DatasetFamily::checkerboard;
  return spec;
}

DatasetSpec default_spec(DatasetFamily family) {
  switch (family) {
    case DatasetFamily::gaussian_grid: return gaussian_grid_spec();
    case DatasetFamily::hash_gaussian: return hash_gaussian_spec();
    case DatasetFamily::glyph_text: return glyph_text_spec();
    case DatasetFamily::rings: return rings_spec();
    case DatasetFamily::checkerboard: return checkerboard_spec();
  }
  throw SpecError("unknown dataset family");
}

Matrix sample_batch(const DatasetSpec& spec, std::size_t n, std::uint64_t seed) {
  if (n == 0) throw ArgumentError("sample_batch: n must be >= 1");
  spec.validate();
  auto engine = derived_engine(seed, 41);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix out(static_cast<Eigen::Index>(n), 2);

  std::vector<std::size_t> filled;
  if (spec.family == DatasetFamily::glyph_text) {
    for (std::size_t i = 0; i < spec.glyph.cells.size(); ++i) {
      if (spec.glyph.cells[i] != 0) filled.push_back(i);
    }
  }

  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    Eigen::Vector2d p;
    switch (spec.family) {
      case DatasetFamily::gaussian_grid:
      case DatasetFamily::hash_gaussian:
        p = draw_component(spec.components[pick(spec.components, engine)], engine);
        break;
      case DatasetFamily::glyph_text:
        if (spec.glyph_weight >= 1.0 || u(engine) < spec.glyph_weight) {
          p = draw_glyph(spec, filled, engine);
        } else {
          p = draw_component(spec.blobs[pick(spec.blobs, engine)], engine);
        }
        break;
      case DatasetFamily::rings:
        do {
          const double radius = 1.0 + std::floor(4.0 * u(engine));
          const double angle = 2.0 * std::numbers::pi * u(engine);
          p = {(radius + spec.noise * normal(engine)) * std::cos(angle),
               (radius + spec.noise * normal(engine)) * std::sin(angle)};
        } while (!in_box(p));
        break;
      case DatasetFamily::checkerboard: {
        const double x1 = 4.0 * u(engine) - 2.0;
        const double shift = u(engine) < 0.5 ? 0.0 : 2.0;
        const double x2 = u(engine) - shift;
        const long parity = ((static_cast<long>(std::floor(x1)) % 2) + 2) % 2;
        p = {2.0 * x1, 2.0 * (x2 + static_cast<double>(parity))};
        break;
      }
    }
    out.row(i) = p.transpose();
  }
  return out;
}

std::optional<double> true_log_density(const DatasetSpec& spec, const Eigen::Vector2d& point) {
  switch (spec.family) {
    case DatasetFamily::gaussian_grid:
    case DatasetFamily::hash_gaussian:
      spec.validate();
      return mixture_log_density(spec.components, point);
    default:
      return std::nullopt;
  }
}

Standardization Standardization::identity(std::size_t dim) {
  const auto d = static_cast<Eigen::Index>(dim);
  return {Vector::Zero(d), Vector::Ones(d)};
}

Matrix Standardization::apply(const Matrix& x) const {
  if (x.cols() != mean.size()) throw DimensionError("standardization: dimension mismatch");
  Matrix z = x.rowwise() - mean.transpose();
  return z.array().rowwise() / scale.transpose().array();
}

Matrix Standardization::invert(const Matrix& z) const {
  if (z.cols() != mean.size()) throw DimensionError("standardization: dimension mismatch");
  Matrix x = z.array().rowwise() * scale.transpose().array();
  return x.rowwise() + mean.transpose();
}

double Standardization::log_scale_sum() const { return scale.array().log().sum(); }

Standardization fit_standardization(const Matrix& data) {
  if (data.rows() == 0) throw ArgumentError("fit_standardization: empty data");
  Standardization s;
  s.mean = data.colwise().mean().transpose();
  s.scale.resize(data.cols());
  for (Eigen::Index j = 0; j < data.cols(); ++j) {
    const double var = (data.col(j).array() - s.mean(j)).square().mean();
    s.scale(j) = var > 0.0 ? std::sqrt(var) : 1.0;
  }
  return s;
}

}  // namespace affjord
