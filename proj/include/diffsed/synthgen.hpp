#pragma once

#include <cstdint>
#include <vector>

#include "diffsed/audio.hpp"

namespace diffsed {

// Synthetic labeled soundscapes: each class is a distinct timbre (pure tone,
// band-limited noise burst, linear chirp), mixed over a white-noise bed at a
// target SNR. Annotations are exact by construction.
struct GeneratorSpec {
    int n_clips = 100;
    double clip_seconds = 10.0;
    int sample_rate = 16000;
    int n_classes = 3;               // <= 3 distinct timbres
    int min_events = 1;              // events per clip, inclusive range
    int max_events = 3;
    double min_event_seconds = 1.0;
    double max_event_seconds = 3.0;
    double snr_db = 20.0;            // event power over background power
    int max_simultaneous = 2;        // cap on overlapping events
    double event_amplitude = 0.4;

    // class timbre parameters
    double tone_hz = 440.0;
    double chirp_lo_hz = 200.0;
    double chirp_hi_hz = 2000.0;
    double noise_band_lo_hz = 2500.0;
    double noise_band_hi_hz = 4500.0;
};

// Deterministic for a fixed (spec, seed). Throws std::invalid_argument when
// the spec is infeasible (events cannot fit the clip, bad ranges).
std::vector<LabeledClip> synth_dataset(const GeneratorSpec& spec, uint64_t seed);

}  // namespace diffsed
