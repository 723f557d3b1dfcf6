#pragma once

#include <vector>

namespace diffsed {

// One scored detection: normalized boundaries, a distribution over the K
// real classes plus the trailing no-event slot, and a score equal to the
// best real-class probability.
struct EventProposal {
    double onset = 0.0;     // normalized to [0, 1], onset <= offset
    double offset = 0.0;
    std::vector<double> class_probs;   // [K + 1], sums to 1
    double score = 0.0;

    int best_class() const {
        int best = 0;
        for (size_t k = 1; k + 1 < class_probs.size(); ++k)
            if (class_probs[k] > class_probs[best]) best = static_cast<int>(k);
        return best;
    }
};

}  // namespace diffsed
