#include "affjord/checkpoint.hpp"

#include "affjord/errors.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

namespace affjord {
namespace {

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string join(const Vector& v) {
  std::string s;
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    if (i > 0) s += ' ';
    s += fmt(v(i));
  }
  return s;
}

std::string join(const std::vector<std::size_t>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i > 0) s += ',';
    s += std::to_string(v[i]);
  }
  return s;
}

double to_double(const std::string& s, const std::string& key, std::size_t line) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ParseError("checkpoint: '" + s + "' is not a number", key, line);
  }
}

std::size_t to_size(const std::string& s, const std::string& key, std::size_t line) {
  if (s.empty() || s.find_first_not_of("0123456789") != std::string::npos) {
    throw ParseError("checkpoint: '" + s + "' is not a non-negative integer", key, line);
  }
  return std::stoul(s);
}

}  // namespace

std::string serialize_checkpoint(const FlowModel& model, const Standardization& standardization) {
  const FlowArchitecture& a = model.arch();
  const SolverConfig& s = model.solver();
  std::ostringstream out;
  out << "affjord-checkpoint " << kCheckpointVersion << '\n';
  out << "variant " << to_string(a.variant) << '\n';
  out << "data_dim " << a.data_dim << '\n';
  out << "hidden " << join(a.hidden) << '\n';
  out << "aug_dim " << a.aug_dim << '\n';
  out << "hyper_inputs " << a.hyper_inputs << '\n';
  out << "g_hidden " << a.g_hidden << '\n';
  out << "activation " << to_string(a.activation) << '\n';
  out << "solver " << to_string(s.method) << '\n';
  out << "steps " << s.steps << '\n';
  out << "atol " << fmt(s.atol) << '\n';
  out << "rtol " << fmt(s.rtol) << '\n';
  out << "max_steps " << s.max_steps << '\n';
  out << "trace " << to_string(model.trace_mode()) << '\n';
  out << "probes " << model.probes() << '\n';
  out << "horizon " << fmt(model.horizon()) << '\n';
  out << "standardize_mean " << join(standardization.mean) << '\n';
  out << "standardize_scale " << join(standardization.scale) << '\n';
  out << "params " << model.params().size() << '\n';
  for (Eigen::Index i = 0; i < model.params().size(); ++i) out << fmt(model.params()(i)) << '\n';
  out << "end\n";
  return out.str();
}

Checkpoint parse_checkpoint(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  auto next = [&]() -> bool {
    if (!std::getline(in, line)) return false;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    return true;
  };
  if (!next() || line.rfind("affjord-checkpoint ", 0) != 0) {
    throw ParseError("checkpoint: missing header", "header", line_no);
  }
  const std::size_t version = to_size(line.substr(19), "header", line_no);
  if (version != static_cast<std::size_t>(kCheckpointVersion)) {
    throw ParseError("checkpoint: unsupported format version " + std::to_string(version),
                     "header", line_no);
  }

  std::map<std::string, std::pair<std::string, std::size_t>> fields;
  std::size_t param_count = 0;
  bool have_params = false;
  while (next()) {
    const auto space = line.find(' ');
    const std::string key = line.substr(0, space);
    const std::string value = space == std::string::npos ? "" : line.substr(space + 1);
    if (key == "params") {
      param_count = to_size(value, key, line_no);
      have_params = true;
      break;
    }
    fields[key] = {value, line_no};
  }
  if (!have_params) throw ParseError("checkpoint: missing parameter block", "params", line_no);

  auto get = [&](const std::string& key) -> std::pair<std::string, std::size_t> {
    auto it = fields.find(key);
    if (it == fields.end()) throw ParseError("checkpoint: missing field", key, line_no);
    return it->second;
  };
  auto vec = [&](const std::string& key) {
    const auto [value, ln] = get(key);
    std::istringstream vs(value);
    std::vector<double> xs;
    std::string tok;
    while (vs >> tok) xs.push_back(to_double(tok, key, ln));
    return Vector(Eigen::Map<const Vector>(xs.data(), static_cast<Eigen::Index>(xs.size())));
  };

  FlowArchitecture arch;
  SolverConfig solver;
  TraceMode trace = TraceMode::exact;
  std::size_t probes = 1;
  double horizon = 1.0;
  try {
    arch.variant = parse_variant(get("variant").first);
    arch.data_dim = to_size(get("data_dim").first, "data_dim", get("data_dim").second);
    arch.hidden.clear();
    {
      const auto [value, ln] = get("hidden");
      std::istringstream hs(value);
      std::string tok;
      while (std::getline(hs, tok, ',')) arch.hidden.push_back(to_size(tok, "hidden", ln));
    }
    arch.aug_dim = to_size(get("aug_dim").first, "aug_dim", get("aug_dim").second);
    arch.hyper_inputs = to_size(get("hyper_inputs").first, "hyper_inputs", get("hyper_inputs").second);
    arch.g_hidden = to_size(get("g_hidden").first, "g_hidden", get("g_hidden").second);
    arch.activation = parse_activation(get("activation").first);
    solver.method = parse_solver_method(get("solver").first);
    solver.steps = to_size(get("steps").first, "steps", get("steps").second);
    solver.atol = to_double(get("atol").first, "atol", get("atol").second);
    solver.rtol = to_double(get("rtol").first, "rtol", get("rtol").second);
    solver.max_steps = to_size(get("max_steps").first, "max_steps", get("max_steps").second);
    trace = parse_trace_mode(get("trace").first);
    probes = to_size(get("probes").first, "probes", get("probes").second);
    horizon = to_double(get("horizon").first, "horizon", get("horizon").second);
  } catch (const ConfigurationError& e) {
    throw ParseError(std::string("checkpoint: ") + e.what(), "architecture", line_no);
  }
  Standardization st{vec("standardize_mean"), vec("standardize_scale")};
  if (static_cast<std::size_t>(st.mean.size()) != arch.data_dim ||
      st.scale.size() != st.mean.size()) {
    throw ParseError("checkpoint: standardization has the wrong dimension", "standardize_mean",
                     get("standardize_mean").second);
  }

  Vector params(static_cast<Eigen::Index>(param_count));
  for (std::size_t i = 0; i < param_count; ++i) {
    if (!next()) throw ParseError("checkpoint: parameter block truncated", "params", line_no);
    params(static_cast<Eigen::Index>(i)) = to_double(line, "params", line_no);
  }
  if (!next() || line != "end") throw ParseError("checkpoint: missing end marker", "end", line_no);
  if (param_count != arch.param_count()) {
    throw ParseError("checkpoint: " + std::to_string(param_count) +
                         " parameters, architecture needs " + std::to_string(arch.param_count()),
                     "params", line_no);
  }
  FlowModel model(arch, std::move(params), solver, TraceMode::exact, horizon);
  if (trace != TraceMode::exact || probes != 1) model = model.with_trace(trace, probes);
  return {std::move(model), std::move(st)};
}

void write_checkpoint(const std::string& path, const FlowModel& model,
                      const Standardization& standardization) {
  write_file_atomic(path, serialize_checkpoint(model, standardization));
}

Checkpoint read_checkpoint(const std::string& path) { return parse_checkpoint(read_file(path)); }

void write_file_atomic(const std::string& path, const std::string& content) {
  const std::filesystem::path target(path);
  if (target.has_parent_path()) std::filesystem::create_directories(target.parent_path());
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw ConfigurationError("cannot open '" + tmp + "' for writing");
    out << content;
    out.flush();
    if (!out) throw ConfigurationError("failed writing '" + tmp + "'");
  }
  std::filesystem::rename(tmp, target);
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigurationError("cannot open '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

}  // namespace affjord
