#pragma once

#include <filesystem>

#include "opcap/training.hpp"

namespace opcap {

/// Binary container: magic, version, a JSON header (config echo, vocabulary
/// and its hash, role masks, epoch/step, optimizer counters) and named
/// float64 arrays for every model parameter and optimizer state tensor.
void save_checkpoint(const std::filesystem::path& path, const TrainState& state);
TrainState load_checkpoint(const std::filesystem::path& path);

}  // namespace opcap
