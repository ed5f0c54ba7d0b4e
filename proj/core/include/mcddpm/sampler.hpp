#pragma once

#include <cstdint>
#include <vector>

#include "mcddpm/data_io.hpp"
#include "mcddpm/tensor.hpp"

namespace mcddpm {

/// One training example: a slice only. Ground truth is never exposed through
/// the training path.
struct SliceRef {
    int record_index = 0;
    int slice_index = 0;
};

/// One uniformly-chosen transverse slice per training volume, shuffled.
/// Deterministic in epoch_seed.
std::vector<SliceRef> plan_epoch(const std::vector<const VolumeRecord*>& train_records,
                                 std::uint64_t epoch_seed);

/// Splits an epoch plan into batches of at most batch_size (final batch may
/// be partial).
std::vector<std::vector<SliceRef>> make_batches(const std::vector<SliceRef>& plan,
                                                int batch_size);

}  // namespace mcddpm
