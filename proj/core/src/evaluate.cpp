#include "mcddpm/evaluate.hpp"

#include "mcddpm/errors.hpp"

namespace mcddpm {

DatasetEval evaluate_dataset(const ModelF& model, const NoiseSchedule& schedule,
                             const std::vector<const VolumeRecord*>& records,
                             const EvalConfig& cfg, const std::string& dataset_name,
                             const std::string& checkpoint_id, bool keep_volumes) {
    if (records.empty()) throw std::invalid_argument("evaluate_dataset: no records");

    DatasetEval out;
    std::vector<float> pooled_scores;
    std::vector<std::uint8_t> pooled_truth, pooled_pred;
    double dice_sum = 0.0, auprc_sum = 0.0, recon_sum = 0.0;
    int dice_n = 0, auprc_n = 0, recon_n = 0;

    for (const VolumeRecord* rec : records) {
        VolumeEval ve;
        ve.subject_id = rec->subject_id;
        Volume recon = reconstruct_volume(model, schedule, rec->volume, cfg.inference);
        AnomalyMap residual = residual_map(rec->volume, recon, cfg.p_norm);
        PostprocessResult post = postprocess_anomaly_map(residual, rec->volume, cfg.post);

        // masked voxel streams
        std::vector<float> scores;
        std::vector<std::uint8_t> truth, pred;
        const std::size_t n = rec->volume.data.size();
        for (std::size_t i = 0; i < n; ++i) {
            if (!post.eval_mask.data[i]) continue;
            scores.push_back(post.filtered.data.data[i]);
            pred.push_back(post.segmentation.data[i]);
            truth.push_back(rec->ground_truth ? rec->ground_truth->data[i] : std::uint8_t{0});
        }
        std::size_t pos = 0;
        for (auto t : truth) pos += t != 0;
        if (pos > 0) {
            ve.dice = dice_flat(pred, truth);
            ve.auprc = auprc_flat(scores, truth);
            dice_sum += *ve.dice;
            ++dice_n;
            auprc_sum += *ve.auprc;
            ++auprc_n;
        }
        if (rec->healthy()) {
            ve.recon_error = reconstruction_error(rec->volume, recon);
            recon_sum += *ve.recon_error;
            ++recon_n;
        }
        pooled_scores.insert(pooled_scores.end(), scores.begin(), scores.end());
        pooled_truth.insert(pooled_truth.end(), truth.begin(), truth.end());
        pooled_pred.insert(pooled_pred.end(), pred.begin(), pred.end());

        if (keep_volumes) {
            ve.reconstruction = std::move(recon);
            ve.filtered = std::move(post.filtered);
            ve.segmentation = std::move(post.segmentation);
            ve.eval_mask = std::move(post.eval_mask);
        }
        out.volumes.push_back(std::move(ve));
    }

    EvalRow& row = out.row;
    row.dataset = dataset_name;
    row.theta = cfg.post.theta;
    row.p_norm = cfg.p_norm;
    row.checkpoint_id = checkpoint_id;
    std::size_t pooled_pos = 0;
    for (auto t : pooled_truth) pooled_pos += t != 0;
    if (pooled_pos > 0) {
        row.dice_pooled = dice_flat(pooled_pred, pooled_truth);
        row.auprc_pooled = auprc_flat(pooled_scores, pooled_truth);
    }
    if (dice_n > 0) row.dice_mean = dice_sum / dice_n;
    if (auprc_n > 0) row.auprc_mean = auprc_sum / auprc_n;
    if (recon_n > 0) row.recon_error = recon_sum / recon_n;
    return out;
}

}  // namespace mcddpm
