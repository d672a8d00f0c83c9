#pragma once

#include <string>
#include <vector>

#include "mcs/nn.hpp"
#include "mcs/tensor.hpp"

namespace mcs {

// Flat binary container: magic, little-endian u64 header length, JSON header
// (format version, dtype tag, tensor names/shapes/offsets), then the raw
// float64 payload in header order.
void save_checkpoint(const std::string& path, const ParamList& params,
                     bool includes_predictor = true);

struct CheckpointInfo {
  int format_version = 0;
  bool includes_predictor = true;
};

// Loads values into the given parameter list by name. Every parameter must be
// present with a matching shape, except "pred.*" entries which may be absent
// when allow_missing_predictor is set and the file was written without them.
CheckpointInfo load_checkpoint(const std::string& path, ParamList& params,
                               bool allow_missing_predictor = false);

// SHA-256 hex digest of a file's contents.
std::string sha256_file(const std::string& path);
// SHA-256 hex digest over the concatenated raw values of a parameter list.
std::string sha256_params(const ParamList& params);

}  // namespace mcs
