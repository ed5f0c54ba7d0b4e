#include "mcddpm/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>
#include <sstream>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "mcddpm/errors.hpp"
#include "mcddpm/inference.hpp"
#include "mcddpm/metrics.hpp"
#include "mcddpm/sampler.hpp"

namespace mcddpm {

void TrainConfig::validate() const {
    if (T < 2) throw std::invalid_argument("config: T must be >= 2");
    if (lambda < 0.0) throw std::invalid_argument("config: lambda must be >= 0");
    if (p_norm != 1 && p_norm != 2) throw std::invalid_argument("config: p must be 1 or 2");
    if (batch_size < 1) throw std::invalid_argument("config: batch_size must be >= 1");
    if (max_epochs < 0) throw std::invalid_argument("config: max_epochs must be >= 0");
    if (lr <= 0.0) throw std::invalid_argument("config: lr must be > 0");
    if (t_test < 1 || t_test > T) throw std::invalid_argument("config: t_test out of [1, T]");
    if (patch_sizes.empty()) throw std::invalid_argument("config: patch_sizes empty");
    if (validate_every < 1) throw std::invalid_argument("config: validate_every must be >= 1");
    if (repeats < 1) throw std::invalid_argument("config: repeats must be >= 1");
}

template <typename S>
S dual_loss(const Tensor<S>& x0, const Tensor<S>& x0_hat, const Tensor<S>& xz_hat, S lambda,
            int p) {
    require_same_shape(x0, x0_hat, "dual_loss");
    require_same_shape(x0, xz_hat, "dual_loss");
    if (p != 1 && p != 2) throw std::invalid_argument("dual_loss: p must be 1 or 2");
    const std::size_t n = x0.data.size();
    double a = 0.0, b = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double d1 = static_cast<double>(x0_hat.data[i]) - static_cast<double>(x0.data[i]);
        const double d2 = static_cast<double>(xz_hat.data[i]) - static_cast<double>(x0.data[i]);
        if (p == 2) {
            a += d1 * d1;
            b += d2 * d2;
        } else {
            a += std::abs(d1);
            b += std::abs(d2);
        }
    }
    return static_cast<S>((a + static_cast<double>(lambda) * b) / static_cast<double>(n));
}

template float dual_loss<float>(const Tensor<float>&, const Tensor<float>&, const Tensor<float>&,
                                float, int);
template double dual_loss<double>(const Tensor<double>&, const Tensor<double>&,
                                  const Tensor<double>&, double, int);

std::string metrics_to_csv(const std::vector<EpochRow>& rows) {
    std::ostringstream os;
    os << "epoch,train_loss,val_recon_error\n";
    char buf[96];
    for (const auto& r : rows) {
        if (r.val_error >= 0.0)
            std::snprintf(buf, sizeof(buf), "%d,%.9g,%.9g\n", r.epoch, r.train_loss, r.val_error);
        else
            std::snprintf(buf, sizeof(buf), "%d,%.9g,\n", r.epoch, r.train_loss);
        os << buf;
    }
    return os.str();
}

Trainer::Trainer(ModelF& model, TrainConfig cfg)
    : model_(model),
      cfg_(std::move(cfg)),
      schedule_(make_linear_schedule(cfg_.T)),
      rng_(derive_seed(cfg_.seed, "trainer")) {
    cfg_.validate();
    typename nn::Adam<float>::Config ac;
    ac.lr = cfg_.lr;
    adam_ = nn::Adam<float>(model_.params(), ac);
}

StepStats Trainer::training_step(const std::vector<Tensor<float>>& batch) {
    std::vector<const Tensor<float>*> ptrs;
    ptrs.reserve(batch.size());
    for (const auto& t : batch) ptrs.push_back(&t);
    return step_impl(ptrs);
}

StepStats Trainer::step_impl(const std::vector<const Tensor<float>*>& batch) {
    if (batch.empty()) throw std::invalid_argument("training_step: empty batch");
    const int B = static_cast<int>(batch.size());
    const int h = batch[0]->dim(0), w = batch[0]->dim(1);
    for (const auto* t : batch)
        if (t->rank() != 2 || t->dim(0) != h || t->dim(1) != w)
            throw std::invalid_argument("training_step: batch slices must share one shape");

    const bool bridged = model_.config().has_bridge();

    struct SampleWork {
        Tensor<float> x0, xz, xp;
        int t = 0;
    };
    std::vector<SampleWork> work(static_cast<std::size_t>(B));
    // All randomness is drawn sequentially up front; the parallel section is
    // purely deterministic compute.
    for (int b = 0; b < B; ++b) {
        auto& sw = work[static_cast<std::size_t>(b)];
        sw.x0 = *batch[static_cast<std::size_t>(b)];
        sw.t = 1 + static_cast<int>(rng_.uniform_int(static_cast<std::uint64_t>(cfg_.T)));
        const auto& ps =
            cfg_.patch_sizes[rng_.uniform_int(static_cast<std::uint64_t>(cfg_.patch_sizes.size()))];
        const PatchMask mask = sample_patch_mask(h, w, ps.first, ps.second, rng_);
        const Tensor<float> noise_p = rng_.gaussian_tensor<float>({h, w});
        sw.xp = q_sample_patched(sw.x0, sw.t, schedule_, mask, noise_p);
        if (bridged) {
            const Tensor<float> noise_z = rng_.gaussian_tensor<float>({h, w});
            const int tz = cfg_.xz_at_max_t ? cfg_.T : sw.t;
            sw.xz = q_sample_full(sw.x0, tz, schedule_, noise_z);
        }
    }

    std::vector<std::unique_ptr<nn::GraphF>> tapes(static_cast<std::size_t>(B));
    std::vector<std::unique_ptr<nn::BoundParams<float>>> bounds(static_cast<std::size_t>(B));
    std::vector<ModelF::SampleLoss> refs(static_cast<std::size_t>(B));

    int nthreads = cfg_.threads;
#ifdef _OPENMP
    if (nthreads <= 0) nthreads = std::min(B, omp_get_max_threads());
#else
    nthreads = 1;
#endif

#ifdef _OPENMP
#pragma omp parallel for schedule(static) num_threads(nthreads)
#endif
    for (int b = 0; b < B; ++b) {
        const auto ub = static_cast<std::size_t>(b);
        tapes[ub] = std::make_unique<nn::GraphF>();
        bounds[ub] = std::make_unique<nn::BoundParams<float>>(*tapes[ub], model_.params());
        refs[ub] = model_.build_sample_loss(*tapes[ub], *bounds[ub], work[ub].x0, work[ub].xz,
                                            work[ub].xp, work[ub].t, static_cast<float>(cfg_.lambda),
                                            cfg_.p_norm, cfg_.stop_context_gradient);
        tapes[ub]->backward(refs[ub].loss, 1.0f / static_cast<float>(B));
    }

    // ordered reduction keeps results independent of thread count
    auto& store = model_.params();
    store.zero_grads();
    StepStats stats;
    for (int b = 0; b < B; ++b) {
        const auto ub = static_cast<std::size_t>(b);
        bounds[ub]->accumulate_grads(store);
        stats.loss += static_cast<double>(tapes[ub]->value(refs[ub].loss).item());
        stats.recon_term += static_cast<double>(tapes[ub]->value(refs[ub].recon_term).item());
        if (refs[ub].bridge_term >= 0)
            stats.bridge_term += static_cast<double>(tapes[ub]->value(refs[ub].bridge_term).item());
    }
    stats.loss /= B;
    stats.recon_term /= B;
    stats.bridge_term /= B;

    if (!std::isfinite(stats.loss)) {
        std::ostringstream os;
        os << "training_step: non-finite loss; t = [";
        for (int b = 0; b < B; ++b) os << (b ? "," : "") << work[static_cast<std::size_t>(b)].t;
        os << "], recon_term = " << stats.recon_term << ", bridge_term = " << stats.bridge_term
           << ", grad norms = [";
        for (int i = 0; i < std::min(store.size(), 8); ++i)
            os << (i ? "," : "") << store.grad_norm(i);
        os << (store.size() > 8 ? ",...]" : "]");
        throw numerical_error(os.str());
    }
    for (int i = 0; i < store.size(); ++i) {
        for (float gv : store.entry(i).grad.data) {
            if (!std::isfinite(gv))
                throw numerical_error("training_step: non-finite gradient in parameter group " +
                                      store.entry(i).name);
        }
    }

    adam_.step(store);
    ++steps_;
    return stats;
}

double Trainer::validate(const std::vector<const VolumeRecord*>& val_records) {
    InferenceConfig ic;
    ic.t_test = cfg_.t_test;
    ic.seed = derive_seed(cfg_.seed, "validation");
    ic.independent_latent_noise = cfg_.independent_latent_noise;
    double sum = 0.0;
    for (const VolumeRecord* rec : val_records) {
        const Volume recon = reconstruct_volume(model_, schedule_, rec->volume, ic);
        sum += reconstruction_error(rec->volume, recon);
    }
    return sum / static_cast<double>(val_records.size());
}

FitResult Trainer::fit(const std::vector<VolumeRecord>& dataset,
                       const std::function<void(const EpochRow&)>& per_epoch, int first_epoch) {
    const auto train = select_split(dataset, Split::kTrain);
    const auto val = select_split(dataset, Split::kVal);
    if (train.empty()) throw std::invalid_argument("fit: empty train split");
    if (first_epoch < 1) throw std::invalid_argument("fit: first_epoch must be >= 1");

    FitResult result;
    auto snapshot_params = [&]() {
        std::vector<Tensor<float>> snap;
        snap.reserve(static_cast<std::size_t>(model_.params().size()));
        for (int i = 0; i < model_.params().size(); ++i)
            snap.push_back(model_.params().entry(i).value);
        return snap;
    };

    for (int epoch = first_epoch; epoch <= cfg_.max_epochs; ++epoch) {
        const auto plan =
            plan_epoch(train, derive_seed(cfg_.seed, "epoch", static_cast<std::uint64_t>(epoch)));
        const auto batches = make_batches(plan, cfg_.batch_size);
        double loss_sum = 0.0;
        std::size_t n_samples = 0;
        for (const auto& batch_refs : batches) {
            std::vector<Tensor<float>> batch;
            batch.reserve(batch_refs.size());
            for (const auto& ref : batch_refs)
                batch.push_back(extract_slice<float>(
                    train[static_cast<std::size_t>(ref.record_index)]->volume, ref.slice_index));
            const StepStats st = training_step(batch);
            loss_sum += st.loss * static_cast<double>(batch.size());
            n_samples += batch.size();
        }

        EpochRow row;
        row.epoch = epoch;
        row.train_loss = loss_sum / static_cast<double>(n_samples);
        const bool last = epoch == cfg_.max_epochs;
        if (!val.empty() && (epoch % cfg_.validate_every == 0 || last)) {
            row.val_error = validate(val);
            if (result.best_epoch < 0 || row.val_error < result.best_val_error) {
                result.best_epoch = epoch;
                result.best_val_error = row.val_error;
                result.best_params = snapshot_params();
            }
            if (last) result.final_val_error = row.val_error;
        }
        result.metrics.push_back(row);
        if (per_epoch) per_epoch(row);
    }
    if (result.best_epoch < 0) {
        // no validation volumes: final parameters are the checkpoint
        result.best_epoch = cfg_.max_epochs;
        result.best_params = snapshot_params();
    }
    return result;
}

}  // namespace mcddpm
