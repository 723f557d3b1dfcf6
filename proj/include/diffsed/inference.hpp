#pragma once

#include <map>
#include <string>
#include <vector>

#include "diffsed/audio.hpp"
#include "diffsed/diffusion.hpp"
#include "diffsed/metrics.hpp"
#include "diffsed/model.hpp"

namespace diffsed {

// A clip reduced to what the detector consumes.
struct FeatClip {
    std::string clip_id;
    double duration = 0.0;
    MelSpectrogram mel;
    std::vector<EventAnnotation> annotations;   // seconds
};

std::vector<FeatClip> featurize_clips(const std::vector<LabeledClip>& clips,
                                      const StftConfig& cfg, size_t threads);

struct InferParams {
    size_t steps = 1;
    double threshold = 0.5;
    uint64_t seed = 0;
    size_t n_queries = 0;   // 0: use the model's configured count
    ScaleParams scale;
};

// Multi-step denoising inference (no post-processing): Gaussian latents are
// walked down the uniform step plan; each decode feeds DDIM through the
// clean-signal estimate, clamped to [-scale, scale]. Predictions are emitted
// from the final decode, thresholded on score, in clip seconds.
std::vector<std::vector<ScoredEvent>> run_inference(const DetectorModel& model,
                                                    const NoiseSchedule& sched,
                                                    const std::vector<FeatClip>& clips,
                                                    const InferParams& params, size_t threads);

// Assembles metric inputs from per-clip predictions aligned with clips.
std::vector<EvalClip> to_eval_clips(const std::vector<FeatClip>& clips,
                                    const std::vector<std::vector<ScoredEvent>>& preds);

// Predictions JSONL: {"clip_id", "onset", "offset", "label", "score"}.
void write_predictions(const std::string& path, const std::vector<FeatClip>& clips,
                       const std::vector<std::vector<ScoredEvent>>& preds);
std::map<std::string, std::vector<ScoredEvent>> read_predictions(const std::string& path);

}  // namespace diffsed
