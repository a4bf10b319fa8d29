#ifndef SCLVM_METRICS_HPP
#define SCLVM_METRICS_HPP

#include <cstdint>
#include <vector>

namespace sclvm {

/// One-vs-rest confusion summary. Zero-denominator precision/recall are
/// reported as 0 with the corresponding flag set.
struct ClassificationMetrics {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    std::int64_t tp = 0;
    std::int64_t fp = 0;
    std::int64_t fn = 0;
    bool precision_undefined = false;
    bool recall_undefined = false;
};

ClassificationMetrics precision_recall_f1(const std::vector<int>& predicted,
                                          const std::vector<int>& truth, int positive_id);

}  // namespace sclvm

#endif
