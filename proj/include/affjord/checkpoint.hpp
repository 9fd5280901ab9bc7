#pragma once

#include "affjord/flow_model.hpp"
#include "affjord/toy_data.hpp"

#include <string>

namespace affjord {

inline constexpr int kCheckpointVersion = 1;

struct Checkpoint {
  FlowModel model;
  Standardization standardization;
};

/// Versioned text container: a header line, one `key value` line per
/// architecture/solver field, then the flat parameter vector with one
/// %.17g value per line, closed by `end`.
std::string serialize_checkpoint(const FlowModel& model, const Standardization& standardization);
/// Throws ParseError naming the offending line.
Checkpoint parse_checkpoint(const std::string& text);

void write_checkpoint(const std::string& path, const FlowModel& model,
                      const Standardization& standardization);
Checkpoint read_checkpoint(const std::string& path);

/// Writes to `path`.tmp and renames over `path`.
void write_file_atomic(const std::string& path, const std::string& content);
std::string read_file(const std::string& path);

}  // namespace affjord
