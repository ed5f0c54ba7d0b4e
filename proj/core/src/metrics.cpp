#include "mcddpm/metrics.hpp"

#include <algorithm>
#include <cstdio>
#include <numeric>
#include <sstream>

#include "mcddpm/errors.hpp"

namespace mcddpm {

double dice_flat(const std::vector<std::uint8_t>& pred, const std::vector<std::uint8_t>& truth) {
    if (pred.size() != truth.size())
        throw std::invalid_argument("dice: size mismatch");
    std::size_t np = 0, nt = 0, ni = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const bool p = pred[i] != 0, t = truth[i] != 0;
        np += p;
        nt += t;
        ni += p && t;
    }
    if (np + nt == 0) return 1.0;
    return 2.0 * static_cast<double>(ni) / static_cast<double>(np + nt);
}

double dice(const BinaryMap& pred, const BinaryMap& truth) {
    if (!pred.same_dims(truth)) throw std::invalid_argument("dice: volume dims mismatch");
    return dice_flat(pred.data, truth.data);
}

double auprc_flat(const std::vector<float>& scores, const std::vector<std::uint8_t>& truth) {
    if (scores.size() != truth.size())
        throw std::invalid_argument("auprc: size mismatch");
    std::size_t total_pos = 0;
    for (auto t : truth) total_pos += t != 0;
    if (total_pos == 0) throw metric_error("auprc: truth contains no positive voxels");

    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

    // Sweep distinct score values in descending order; each group of ties is
    // included atomically (threshold semantics: predicted positive iff
    // score >= tau).
    double area = 0.0;
    double recall_prev = 0.0;
    std::size_t tp = 0, predicted = 0;
    std::size_t i = 0;
    while (i < order.size()) {
        const float tau = scores[order[i]];
        while (i < order.size() && scores[order[i]] == tau) {
            tp += truth[order[i]] != 0;
            ++predicted;
            ++i;
        }
        const double recall = static_cast<double>(tp) / static_cast<double>(total_pos);
        const double precision = static_cast<double>(tp) / static_cast<double>(predicted);
        area += (recall - recall_prev) * precision;
        recall_prev = recall;
    }
    return area;
}

double auprc(const AnomalyMap& scores, const BinaryMap& truth) {
    if (scores.data.h != truth.h || scores.data.w != truth.w || scores.data.d != truth.d)
        throw std::invalid_argument("auprc: volume dims mismatch");
    return auprc_flat(scores.data.data, truth.data);
}

double reconstruction_error(const Volume& v, const Volume& v_hat) {
    require_same_dims(v, v_hat, "reconstruction_error");
    double sum = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < v.data.size(); ++i) {
        if (v.data[i] > 0.0f) {
            sum += std::abs(static_cast<double>(v.data[i]) - static_cast<double>(v_hat.data[i]));
            ++n;
        }
    }
    return n == 0 ? 0.0 : sum / static_cast<double>(n);
}

namespace {

std::string fmt_opt(const std::optional<double>& v, bool percent) {
    if (!v) return "na";
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.4f", percent ? *v * 100.0 : *v);
    return buf;
}

}  // namespace

std::string EvalReport::to_csv() const {
    std::ostringstream os;
    os << "dataset,dice_pooled,dice_mean,auprc,recon_error,theta,p,checkpoint\n";
    for (const auto& r : rows) {
        char theta_buf[16];
        std::snprintf(theta_buf, sizeof(theta_buf), "%.3g", static_cast<double>(r.theta));
        os << r.dataset << ',' << fmt_opt(r.dice_pooled, true) << ','
           << fmt_opt(r.dice_mean, true) << ',' << fmt_opt(r.auprc_pooled, true) << ','
           << fmt_opt(r.recon_error, false) << ',' << theta_buf << ',' << r.p_norm << ','
           << r.checkpoint_id << '\n';
    }
    return os.str();
}

std::string EvalReport::to_table() const {
    std::ostringstream os;
    char line[256];
    std::snprintf(line, sizeof(line), "%-16s %12s %12s %12s %12s %12s %6s %3s\n", "dataset",
                  "dice_pooled", "dice_mean", "auprc", "auprc_mean", "recon_err", "theta", "p");
    os << line;
    for (const auto& r : rows) {
        std::snprintf(line, sizeof(line), "%-16s %12s %12s %12s %12s %12s %6.2f %3d\n",
                      r.dataset.c_str(), fmt_opt(r.dice_pooled, true).c_str(),
                      fmt_opt(r.dice_mean, true).c_str(), fmt_opt(r.auprc_pooled, true).c_str(),
                      fmt_opt(r.auprc_mean, true).c_str(), fmt_opt(r.recon_error, false).c_str(),
                      static_cast<double>(r.theta), r.p_norm);
        os << line;
    }
    return os.str();
}

}  // namespace mcddpm
