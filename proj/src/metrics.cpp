#include "codealign/metrics.hpp"

#include <algorithm>
#include <numeric>

namespace codealign::eval {

using core::DataError;
using core::ShapeError;

double cell_ap(const std::vector<core::DetectionMap>& scores,
               const std::vector<std::vector<double>>& truths) {
    if (scores.size() != truths.size() || scores.empty()) {
        throw ShapeError("cell_ap: score/truth frame counts differ or empty");
    }

    std::vector<double> s;
    std::vector<std::uint8_t> y;
    std::size_t positives = 0;
    for (std::size_t f = 0; f < scores.size(); ++f) {
        const auto& sm = scores[f];
        const auto& tm = truths[f];
        if (sm.scores.size() != tm.size()) throw ShapeError("cell_ap: frame shape mismatch");
        for (std::size_t i = 0; i < tm.size(); ++i) {
            s.push_back(sm.scores[i]);
            const bool pos = tm[i] > 0.5;
            y.push_back(pos ? 1 : 0);
            positives += pos ? 1 : 0;
        }
    }
    if (positives == 0) throw DataError("cell_ap: no positive cells, AP undefined");

    std::vector<std::size_t> order(s.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return s[a] > s[b]; });

    // One PR point per distinct threshold; ties are a single group.
    const double total_pos = static_cast<double>(positives);
    double tp = 0.0, fp = 0.0;
    double prev_recall = 0.0;
    double prev_precision = -1.0;  // sentinel: anchor at the first point's precision
    double area = 0.0;
    std::size_t i = 0;
    while (i < order.size()) {
        std::size_t j = i;
        while (j < order.size() && s[order[j]] == s[order[i]]) {
            if (y[order[j]]) {
                tp += 1.0;
            } else {
                fp += 1.0;
            }
            ++j;
        }
        const double recall = tp / total_pos;
        const double precision = tp / (tp + fp);
        if (prev_precision < 0.0) prev_precision = precision;
        area += (recall - prev_recall) * 0.5 * (precision + prev_precision);
        prev_recall = recall;
        prev_precision = precision;
        i = j;
    }
    return area;
}

double cell_ap(const core::DetectionMap& scores, const std::vector<double>& truth) {
    return cell_ap(std::vector<core::DetectionMap>{scores},
                   std::vector<std::vector<double>>{truth});
}

}  // namespace codealign::eval
