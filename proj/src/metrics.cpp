#include "sclvm/metrics.hpp"

#include "sclvm/common.hpp"

#include <iostream>

namespace sclvm {

ClassificationMetrics precision_recall_f1(const std::vector<int>& predicted,
                                          const std::vector<int>& truth, int positive_id) {
    require(predicted.size() == truth.size(), "prediction and truth counts must match");
    ClassificationMetrics m;
    for (std::size_t i = 0; i < predicted.size(); ++i) {
        const bool p = predicted[i] == positive_id;
        const bool t = truth[i] == positive_id;
        if (p && t) ++m.tp;
        if (p && !t) ++m.fp;
        if (!p && t) ++m.fn;
    }
    if (m.tp + m.fp > 0) {
        m.precision = static_cast<double>(m.tp) / static_cast<double>(m.tp + m.fp);
    } else {
        m.precision_undefined = true;
        std::cerr << "warning: no positive predictions; precision reported as 0\n";
    }
    if (m.tp + m.fn > 0) {
        m.recall = static_cast<double>(m.tp) / static_cast<double>(m.tp + m.fn);
    } else {
        m.recall_undefined = true;
        std::cerr << "warning: no positive ground-truth rows; recall reported as 0\n";
    }
    if (m.precision + m.recall > 0.0)
        m.f1 = 2.0 * m.precision * m.recall / (m.precision + m.recall);
    return m;
}

}  // namespace sclvm
