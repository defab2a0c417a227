#pragma once

#include <string>
#include <utility>
#include <vector>

#include "geovit/config.hpp"
#include "geovit/errors.hpp"
#include "geovit/params.hpp"

namespace geovit {

/// A saved training state: the run config that shaped the model plus every
/// named parameter block. Values travel as f32, which matches the store's
/// in-memory rounding, so save -> load -> save reproduces the bytes exactly.
struct Checkpoint {
  RunConfig config;
  std::vector<std::pair<std::string, Shape>> shapes;   // insertion order
  std::vector<std::vector<double>> values;             // parallel to shapes
};

void save_checkpoint(const std::string& path, const RunConfig& config, const ParamStore& params);

/// Throws BadMagicError / TruncatedError / ChecksumError / FormatError for
/// the distinct corruption classes, std::runtime_error for a missing file.
Checkpoint read_checkpoint(const std::string& path);

/// Copies every block into the matching parameter of an existing store.
/// Name or shape mismatches in either direction are runtime errors.
void apply_checkpoint(const Checkpoint& ck, ParamStore& params);

}  // namespace geovit
