#include "diffsed/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "diffsed/rng.hpp"

namespace diffsed {

namespace {

void validate(const GeneratorSpec& s) {
    if (s.n_clips < 1) throw std::invalid_argument("generator: n_clips must be >= 1");
    if (s.n_classes < 1 || s.n_classes > 3)
        throw std::invalid_argument("generator: n_classes must be in [1,3]");
    if (s.min_events < 0 || s.max_events < s.min_events)
        throw std::invalid_argument("generator: bad events-per-clip range");
    if (s.min_event_seconds <= 0 || s.max_event_seconds < s.min_event_seconds)
        throw std::invalid_argument("generator: bad event duration range");
    if (s.min_event_seconds > s.clip_seconds)
        throw std::invalid_argument("generator: events cannot fit the clip");
    if (s.max_simultaneous < 1)
        throw std::invalid_argument("generator: max_simultaneous must be >= 1");
    if (s.event_amplitude <= 0 || s.event_amplitude > 0.45)
        throw std::invalid_argument("generator: event_amplitude must be in (0, 0.45]");
}

// 10 ms raised-cosine edges so events have sharp but click-free boundaries.
double edge_gain(size_t i, size_t n, size_t ramp) {
    if (i < ramp) return 0.5 - 0.5 * std::cos(M_PI * i / ramp);
    if (i >= n - ramp) return 0.5 - 0.5 * std::cos(M_PI * (n - 1 - i) / ramp);
    return 1.0;
}

// Band-limited noise via FFT masking: white noise, zero bins outside the
// band, back to time domain, RMS-normalized to match the tone power.
std::vector<double> bandlimited_noise(size_t n, double lo_hz, double hi_hz, int sr,
                                      double target_rms, Rng& rng) {
    size_t m = 1;
    while (m < n) m <<= 1;
    std::vector<double> re(m), im(m, 0.0);
    for (size_t i = 0; i < m; ++i) re[i] = rng.normal();
    fft_radix2(re, im, false);
    const double bin_hz = static_cast<double>(sr) / m;
    for (size_t k = 0; k <= m / 2; ++k) {
        const double f = k * bin_hz;
        if (f < lo_hz || f > hi_hz) {
            re[k] = im[k] = 0.0;
            if (k > 0 && k < m / 2) {
                re[m - k] = im[m - k] = 0.0;
            }
        }
    }
    fft_radix2(re, im, true);
    re.resize(n);
    double rms = 0.0;
    for (double x : re) rms += x * x;
    rms = std::sqrt(rms / n);
    if (rms > 0) {
        const double g = target_rms / rms;
        for (double& x : re) x *= g;
    }
    return re;
}

void render_event(std::vector<double>& mix, const GeneratorSpec& s, int label, size_t start,
                  size_t len, Rng& rng) {
    const double amp = s.event_amplitude;
    const size_t ramp = std::min<size_t>(len / 4, static_cast<size_t>(0.01 * s.sample_rate));
    const double dt = 1.0 / s.sample_rate;
    if (label == 0) {
        // pure tone
        const double phase0 = rng.uniform(0.0, 2.0 * M_PI);
        for (size_t i = 0; i < len; ++i)
            mix[start + i] +=
                amp * edge_gain(i, len, ramp) * std::sin(phase0 + 2.0 * M_PI * s.tone_hz * i * dt);
    } else if (label == 1) {
        // band-limited noise burst; RMS matched to the tone (amp/sqrt(2))
        auto nz = bandlimited_noise(len, s.noise_band_lo_hz, s.noise_band_hi_hz, s.sample_rate,
                                    amp / std::sqrt(2.0), rng);
        for (size_t i = 0; i < len; ++i) mix[start + i] += edge_gain(i, len, ramp) * nz[i];
    } else {
        // linear chirp
        const double phase0 = rng.uniform(0.0, 2.0 * M_PI);
        const double dur = len * dt;
        const double k = (s.chirp_hi_hz - s.chirp_lo_hz) / dur;
        for (size_t i = 0; i < len; ++i) {
            const double t = i * dt;
            const double phase = phase0 + 2.0 * M_PI * (s.chirp_lo_hz * t + 0.5 * k * t * t);
            mix[start + i] += amp * edge_gain(i, len, ramp) * std::sin(phase);
        }
    }
}

int overlap_count(const std::vector<EventAnnotation>& events, double onset, double offset) {
    int worst = 0;
    // piecewise-constant cover; endpoints of existing events are enough
    std::vector<double> probes{onset};
    for (const auto& e : events) {
        if (e.onset > onset && e.onset < offset) probes.push_back(e.onset);
    }
    for (double p : probes) {
        int c = 1;
        for (const auto& e : events)
            if (e.onset < offset && e.offset > p && e.onset <= p) ++c;
        worst = std::max(worst, c);
    }
    return worst;
}

}  // namespace

std::vector<LabeledClip> synth_dataset(const GeneratorSpec& spec, uint64_t seed) {
    validate(spec);
    const size_t clip_len = static_cast<size_t>(spec.clip_seconds * spec.sample_rate);

    // Event counts are drawn up front so labels can be dealt from an exactly
    // balanced shuffled deck (per-class counts differ by at most one, which
    // keeps the dataset inside the +-20% balance contract).
    std::vector<int> event_counts(spec.n_clips);
    size_t total_events = 0;
    for (int c = 0; c < spec.n_clips; ++c) {
        Rng r = Rng::derive(seed, 2, static_cast<uint64_t>(c));
        event_counts[c] = static_cast<int>(r.uniform_int(spec.min_events, spec.max_events + 1));
        total_events += static_cast<size_t>(event_counts[c]);
    }
    std::vector<int> deck(total_events);
    for (size_t i = 0; i < total_events; ++i) deck[i] = static_cast<int>(i % spec.n_classes);
    if (!deck.empty()) {
        Rng deck_rng = Rng::derive(seed, 0xdecc);
        auto perm = deck_rng.permutation(deck.size());
        std::vector<int> shuffled(deck.size());
        for (size_t i = 0; i < deck.size(); ++i) shuffled[i] = deck[perm[i]];
        deck = std::move(shuffled);
    }
    size_t deck_pos = 0;

    // event power over background power = 10^(snr/10); tone power = amp^2/2
    const double event_power = spec.event_amplitude * spec.event_amplitude / 2.0;
    const double noise_sigma = std::sqrt(event_power / std::pow(10.0, spec.snr_db / 10.0));

    std::vector<LabeledClip> clips(spec.n_clips);
    for (int c = 0; c < spec.n_clips; ++c) {
        Rng rng = Rng::derive(seed, 1, static_cast<uint64_t>(c));
        LabeledClip& clip = clips[c];
        clip.clip_id = "clip_" + std::to_string(c);
        clip.waveform.sample_rate = spec.sample_rate;
        auto& samples = clip.waveform.samples;
        samples.assign(clip_len, 0.0);
        for (auto& x : samples) x = noise_sigma * rng.normal();

        const int n_events = event_counts[c];
        for (int e = 0; e < n_events; ++e) {
            const int label = deck[deck_pos++];
            bool placed = false;
            for (int attempt = 0; attempt < 64 && !placed; ++attempt) {
                const double dur = rng.uniform(spec.min_event_seconds,
                                               std::min(spec.max_event_seconds, spec.clip_seconds));
                const double onset = rng.uniform(0.0, spec.clip_seconds - dur);
                const double offset = onset + dur;
                if (overlap_count(clip.annotations, onset, offset) > spec.max_simultaneous)
                    continue;
                const size_t s0 = static_cast<size_t>(onset * spec.sample_rate);
                const size_t n = std::min(static_cast<size_t>(dur * spec.sample_rate),
                                          clip_len - s0);
                render_event(samples, spec, label, s0, n, rng);
                clip.annotations.push_back({onset, offset, label});
                placed = true;
            }
            if (!placed)
                throw std::invalid_argument("generator: could not place event " +
                                            std::to_string(e) + " in clip " + clip.clip_id +
                                            " (spec too crowded)");
        }
        std::sort(clip.annotations.begin(), clip.annotations.end(),
                  [](const EventAnnotation& a, const EventAnnotation& b) {
                      return a.onset < b.onset;
                  });
        for (auto& x : samples) x = std::clamp(x, -1.0, 1.0);
    }
    return clips;
}

}  // namespace diffsed
