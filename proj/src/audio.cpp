#include "diffsed/audio.hpp"

#include <cmath>
#include <stdexcept>

namespace diffsed {

void fft_radix2(std::vector<double>& re, std::vector<double>& im, bool inverse) {
    const size_t n = re.size();
    if (n == 0 || (n & (n - 1)) != 0)
        throw std::invalid_argument("fft_radix2: length must be a power of two");
    if (im.size() != n) throw std::invalid_argument("fft_radix2: re/im length mismatch");

    // bit reversal
    for (size_t i = 1, j = 0; i < n; ++i) {
        size_t bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) {
            std::swap(re[i], re[j]);
            std::swap(im[i], im[j]);
        }
    }
    for (size_t len = 2; len <= n; len <<= 1) {
        const double ang = (inverse ? 2.0 : -2.0) * M_PI / static_cast<double>(len);
        const double wr = std::cos(ang), wi = std::sin(ang);
        for (size_t i = 0; i < n; i += len) {
            double cr = 1.0, ci = 0.0;
            for (size_t j = 0; j < len / 2; ++j) {
                const size_t a = i + j, b = i + j + len / 2;
                const double ur = re[a], ui = im[a];
                const double vr = re[b] * cr - im[b] * ci;
                const double vi = re[b] * ci + im[b] * cr;
                re[a] = ur + vr;
                im[a] = ui + vi;
                re[b] = ur - vr;
                im[b] = ui - vi;
                const double ncr = cr * wr - ci * wi;
                ci = cr * wi + ci * wr;
                cr = ncr;
            }
        }
    }
    if (inverse) {
        for (size_t i = 0; i < n; ++i) {
            re[i] /= static_cast<double>(n);
            im[i] /= static_cast<double>(n);
        }
    }
}

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

std::vector<double> mel_filterbank(int n_mels, int n_fft, int sample_rate, double fmin,
                                   double fmax) {
    const int n_bins = n_fft / 2 + 1;
    std::vector<double> weights(static_cast<size_t>(n_mels) * n_bins, 0.0);
    const double mel_lo = hz_to_mel(fmin), mel_hi = hz_to_mel(fmax);
    std::vector<double> edges(n_mels + 2);
    for (int i = 0; i < n_mels + 2; ++i)
        edges[i] = mel_to_hz(mel_lo + (mel_hi - mel_lo) * i / (n_mels + 1));
    const double bin_hz = static_cast<double>(sample_rate) / n_fft;
    for (int m = 0; m < n_mels; ++m) {
        const double lo = edges[m], mid = edges[m + 1], hi = edges[m + 2];
        for (int k = 0; k < n_bins; ++k) {
            const double f = k * bin_hz;
            double w = 0.0;
            if (f > lo && f < hi)
                w = (f <= mid) ? (f - lo) / (mid - lo) : (hi - f) / (hi - mid);
            weights[static_cast<size_t>(m) * n_bins + k] = w;
        }
    }
    return weights;
}

MelSpectrogram stft_logmel(const Waveform& w, const StftConfig& cfg) {
    if (cfg.win > cfg.n_fft) throw std::invalid_argument("stft: win must be <= n_fft");
    if (cfg.hop > cfg.win) throw std::invalid_argument("stft: hop must be <= win");
    const double fmax = cfg.fmax <= 0.0 ? w.sample_rate / 2.0 : cfg.fmax;
    if (fmax > w.sample_rate / 2.0)
        throw std::invalid_argument("stft: fmax exceeds Nyquist");
    if (static_cast<int>(w.samples.size()) < cfg.win)
        throw std::invalid_argument("stft: waveform shorter than one window");

    const size_t n_frames =
        1 + (w.samples.size() - static_cast<size_t>(cfg.win)) / static_cast<size_t>(cfg.hop);
    const int n_bins = cfg.n_fft / 2 + 1;

    std::vector<double> hann(cfg.win);
    for (int i = 0; i < cfg.win; ++i)
        hann[i] = 0.5 - 0.5 * std::cos(2.0 * M_PI * i / (cfg.win - 1));

    const auto fbank = mel_filterbank(cfg.n_mels, cfg.n_fft, w.sample_rate, cfg.fmin, fmax);

    Tensor frames({n_frames, static_cast<size_t>(cfg.n_mels)});
    auto& out = frames.data();
    std::vector<double> re(cfg.n_fft), im(cfg.n_fft), mag(n_bins);
    for (size_t t = 0; t < n_frames; ++t) {
        const size_t start = t * cfg.hop;
        std::fill(re.begin(), re.end(), 0.0);
        std::fill(im.begin(), im.end(), 0.0);
        for (int i = 0; i < cfg.win; ++i) re[i] = w.samples[start + i] * hann[i];
        fft_radix2(re, im, false);
        // power spectrum, so a 2x amplitude change moves log-mel by log(4)
        for (int k = 0; k < n_bins; ++k) mag[k] = re[k] * re[k] + im[k] * im[k];
        for (int m = 0; m < cfg.n_mels; ++m) {
            double acc = 0.0;
            const double* wrow = fbank.data() + static_cast<size_t>(m) * n_bins;
            for (int k = 0; k < n_bins; ++k) acc += wrow[k] * mag[k];
            out[t * cfg.n_mels + m] = std::log(acc + 1e-6);
        }
    }

    MelSpectrogram mel;
    mel.frames = std::move(frames);
    mel.hop_seconds = static_cast<double>(cfg.hop) / w.sample_rate;
    mel.sample_rate = w.sample_rate;
    return mel;
}

}  // namespace diffsed
