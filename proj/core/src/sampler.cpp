#include "mcddpm/sampler.hpp"

#include <stdexcept>

#include "mcddpm/random.hpp"

namespace mcddpm {

std::vector<SliceRef> plan_epoch(const std::vector<const VolumeRecord*>& train_records,
                                 std::uint64_t epoch_seed) {
    if (train_records.empty()) throw std::invalid_argument("plan_epoch: empty train split");
    RandomStream rng(derive_seed(epoch_seed, "epoch-plan"));
    std::vector<SliceRef> plan;
    plan.reserve(train_records.size());
    for (std::size_t i = 0; i < train_records.size(); ++i) {
        const int depth = train_records[i]->volume.d;
        plan.push_back({static_cast<int>(i),
                        static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(depth)))});
    }
    // Fisher-Yates shuffle with the same stream
    for (std::size_t i = plan.size(); i > 1; --i) {
        const std::size_t j = rng.uniform_int(i);
        std::swap(plan[i - 1], plan[j]);
    }
    return plan;
}

std::vector<std::vector<SliceRef>> make_batches(const std::vector<SliceRef>& plan,
                                                int batch_size) {
    if (batch_size < 1) throw std::invalid_argument("make_batches: batch_size must be >= 1");
    std::vector<std::vector<SliceRef>> batches;
    for (std::size_t i = 0; i < plan.size(); i += static_cast<std::size_t>(batch_size)) {
        const std::size_t end = std::min(plan.size(), i + static_cast<std::size_t>(batch_size));
        batches.emplace_back(plan.begin() + static_cast<std::ptrdiff_t>(i),
                             plan.begin() + static_cast<std::ptrdiff_t>(end));
    }
    return batches;
}

}  // namespace mcddpm
