#pragma once

#include <string>
#include <vector>

#include "diffsed/tensor.hpp"

namespace diffsed {

struct Waveform {
    std::vector<double> samples;   // in [-1, 1]
    int sample_rate = 16000;

    double duration() const {
        return static_cast<double>(samples.size()) / sample_rate;
    }
};

struct EventAnnotation {
    double onset = 0.0;    // seconds
    double offset = 0.0;   // seconds; onset < offset
    int label = 0;         // class index in [0, K)
};

struct LabeledClip {
    Waveform waveform;
    std::vector<EventAnnotation> annotations;
    std::string clip_id;
};

// Log-mel features: frames[t * n_mels + m], T = 1 + floor((len - win)/hop).
struct MelSpectrogram {
    Tensor frames;          // [T x F]
    double hop_seconds = 0.0;
    int sample_rate = 16000;

    size_t n_frames() const { return frames.shape()[0]; }
    size_t n_mels() const { return frames.shape()[1]; }
    double frame_time(size_t i) const { return static_cast<double>(i) * hop_seconds; }
};

struct StftConfig {
    int win = 1024;
    int hop = 512;
    int n_fft = 1024;      // power of two
    int n_mels = 64;
    double fmin = 0.0;
    double fmax = 0.0;     // <= 0 means Nyquist
};

// In-place radix-2 FFT (n a power of two) over interleaved complex data.
void fft_radix2(std::vector<double>& re, std::vector<double>& im, bool inverse);

// Triangular mel filterbank on the HTK mel scale; weights[m * (n_fft/2+1) + k].
std::vector<double> mel_filterbank(int n_mels, int n_fft, int sample_rate, double fmin,
                                   double fmax);
double hz_to_mel(double hz);
double mel_to_hz(double mel);

// Hann-windowed magnitude STFT through the mel filterbank, then
// log(x + 1e-6). Throws if the waveform is shorter than one window.
MelSpectrogram stft_logmel(const Waveform& w, const StftConfig& cfg);

}  // namespace diffsed
