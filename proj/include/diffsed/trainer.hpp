#pragma once

#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "diffsed/inference.hpp"
#include "diffsed/matching.hpp"
#include "diffsed/model.hpp"

namespace diffsed {

struct RunConfig {
    Mode mode = Mode::DiffSed;

    // model
    std::vector<size_t> conv_channels = {16, 32};
    size_t d_model = 64;
    size_t enc_layers = 2;
    size_t dec_layers = 2;
    size_t n_heads = 4;
    size_t ff_dim = 128;
    double dropout = 0.0;
    size_t n_queries = 30;
    size_t n_classes = 3;

    // diffusion
    size_t T = 1000;
    double schedule_s = 0.008;
    double scale = 0.4;
    size_t infer_steps = 1;

    // optimization
    size_t epochs = 200;
    double lr = 1e-4;
    size_t batch = 16;
    double lr_decay = 0.01;
    size_t lr_decay_epoch = 150;
    size_t restore_every = 100;   // restore best-so-far weights, reset Adam
    double z0_aux_weight = 1.0;   // clean-query regression on the z0 head
    MatchWeights match;

    // io / misc
    uint64_t seed = 0;
    std::string train_dir;
    std::string val_dir;
    std::string run_dir;
    StftConfig stft;
    MetricParams metrics;
    size_t threads = 0;   // 0 = hardware concurrency

    ModelConfig model_config() const;
    nlohmann::json to_json() const;
    static RunConfig from_json(const nlohmann::json& j);
};

ModelConfig model_config_from_json(const nlohmann::json& j);
nlohmann::json model_config_to_json(const ModelConfig& cfg);
StftConfig stft_config_from_json(const nlohmann::json& j);
nlohmann::json stft_config_to_json(const StftConfig& cfg);

struct EpochRecord {
    size_t epoch = 0;
    double train_loss = 0.0;
    double val_event_f1 = 0.0;
    double val_segment_f1 = 0.0;
    double val_tagging_f1 = 0.0;
    double wall_seconds = 0.0;
};

struct ConvergenceLog {
    std::vector<EpochRecord> records;

    std::string to_csv() const;
    static ConvergenceLog from_csv(const std::string& csv);
};

struct TrainResult {
    ConvergenceLog log;
    double best_event_f1 = 0.0;
    size_t best_epoch = 0;
    std::string checkpoint_path;
};

// Full training run per the harness contract: per batch the audio is encoded
// once per clip, a timestep is drawn, queries are corrupted by the mode's
// branch, decoded, matched, and scored; Adam steps on the reduced gradient.
// Writes checkpoint.bin, convergence.csv and run.json under cfg.run_dir.
// `stop_when` (optional) ends training early once an epoch record satisfies
// it (used by acceptance targets).
TrainResult train_model(const RunConfig& cfg,
                        const std::function<bool(const EpochRecord&)>& stop_when = nullptr);

// Loads a checkpoint written by train_model and rebuilds the model plus the
// schedule/featurization settings it was trained with. Refuses to load when
// the stored arch hash does not match the stored config.
struct LoadedModel {
    DetectorModel model;
    NoiseSchedule schedule;
    ScaleParams scale;
    StftConfig stft;
    nlohmann::json meta;
};
LoadedModel load_model(const std::string& checkpoint_path);

}  // namespace diffsed
