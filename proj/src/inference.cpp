#include "diffsed/inference.hpp"

#include <algorithm>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

#include "diffsed/parallel.hpp"

namespace diffsed {

std::vector<FeatClip> featurize_clips(const std::vector<LabeledClip>& clips,
                                      const StftConfig& cfg, size_t threads) {
    std::vector<FeatClip> out(clips.size());
    parallel_for(
        clips.size(),
        [&](size_t i) {
            out[i].clip_id = clips[i].clip_id;
            out[i].duration = clips[i].waveform.duration();
            out[i].mel = stft_logmel(clips[i].waveform, cfg);
            out[i].annotations = clips[i].annotations;
        },
        threads);
    return out;
}

namespace {

std::vector<ScoredEvent> emit(const HeadOutputs& ho, double duration, double threshold) {
    std::vector<ScoredEvent> events;
    for (const auto& p : ho.to_proposals()) {
        if (p.score < threshold) continue;
        ScoredEvent e;
        e.onset = p.onset * duration;
        e.offset = p.offset * duration;
        e.label = p.best_class();
        e.score = p.score;
        events.push_back(e);
    }
    return events;
}

Tensor clamp_to(const Tensor& t, double bound) {
    Tensor out = t.detach();
    for (auto& v : out.data()) v = std::clamp(v, -bound, bound);
    return out;
}

std::vector<ScoredEvent> infer_clip(const DetectorModel& model, const NoiseSchedule& sched,
                                    const FeatClip& clip, const InferParams& params, Rng rng) {
    NoGradGuard ng;
    const auto& cfg = model.config();
    const size_t n = params.n_queries ? params.n_queries : cfg.dec.n_queries;
    const size_t d = cfg.enc.d_model;
    const Tensor c_a = model.encode(clip.mel);

    if (cfg.mode == Mode::SedtBaseline) {
        HeadOutputs ho = model.heads(model.decode(model.dictionary_queries(), c_a));
        return emit(ho, clip.duration, params.threshold);
    }

    const auto plan = make_step_plan(sched.T, params.steps);

    if (cfg.mode == Mode::DiffSed) {
        Tensor z = Tensor::randn({n, d}, rng);
        HeadOutputs ho;
        for (size_t k = 0; k < plan.size(); ++k) {
            const auto [t, t_prev] = plan[k];
            QuerySet q;
            q.queries = z;
            q.timestep = t;
            q.scaled = true;
            ho = model.heads(model.decode(q, c_a));
            if (k + 1 < plan.size())
                z = ddim_step(z, clamp_to(ho.z0_hat, params.scale.scale), t, t_prev, sched);
        }
        return emit(ho, clip.duration, params.threshold);
    }

    // DiffSedBB: the diffusion state lives in 2-D box space; the clean-state
    // estimate is the predicted boundaries mapped back through the signal
    // scaling.
    Tensor zb = Tensor::randn({n, 2}, rng);
    const Tensor& proj = model.box_projection();
    HeadOutputs ho;
    for (size_t k = 0; k < plan.size(); ++k) {
        const auto [t, t_prev] = plan[k];
        QuerySet q;
        q.queries = matmul(zb, proj);
        q.timestep = t;
        q.scaled = true;
        ho = model.heads(model.decode(q, c_a));
        if (k + 1 < plan.size()) {
            Tensor z0_box = scale_signal(ho.bounds, params.scale);
            zb = ddim_step(zb, z0_box, t, t_prev, sched);
        }
    }
    return emit(ho, clip.duration, params.threshold);
}

}  // namespace

std::vector<std::vector<ScoredEvent>> run_inference(const DetectorModel& model,
                                                    const NoiseSchedule& sched,
                                                    const std::vector<FeatClip>& clips,
                                                    const InferParams& params, size_t threads) {
    std::vector<std::vector<ScoredEvent>> out(clips.size());
    parallel_for(
        clips.size(),
        [&](size_t i) {
            Rng rng = Rng::derive(params.seed, 0x1f5a11, i);
            out[i] = infer_clip(model, sched, clips[i], params, rng);
        },
        threads);
    return out;
}

std::vector<EvalClip> to_eval_clips(const std::vector<FeatClip>& clips,
                                    const std::vector<std::vector<ScoredEvent>>& preds) {
    if (clips.size() != preds.size())
        throw std::invalid_argument("to_eval_clips: clip/prediction count mismatch");
    std::vector<EvalClip> out(clips.size());
    for (size_t i = 0; i < clips.size(); ++i) {
        out[i].clip_id = clips[i].clip_id;
        out[i].duration = clips[i].duration;
        out[i].annotations = clips[i].annotations;
        out[i].predictions = preds[i];
    }
    return out;
}

void write_predictions(const std::string& path, const std::vector<FeatClip>& clips,
                       const std::vector<std::vector<ScoredEvent>>& preds) {
    if (clips.size() != preds.size())
        throw std::invalid_argument("write_predictions: clip/prediction count mismatch");
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw std::runtime_error("cannot write predictions: " + path);
    for (size_t i = 0; i < clips.size(); ++i) {
        for (const auto& e : preds[i]) {
            nlohmann::json j = {{"clip_id", clips[i].clip_id},
                                {"onset", e.onset},
                                {"offset", e.offset},
                                {"label", e.label},
                                {"score", e.score}};
            os << j.dump() << "\n";
        }
    }
}

std::map<std::string, std::vector<ScoredEvent>> read_predictions(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open predictions: " + path);
    std::map<std::string, std::vector<ScoredEvent>> out;
    std::string line;
    size_t line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw std::runtime_error("predictions parse error at line " +
                                     std::to_string(line_no) + ": " + e.what());
        }
        ScoredEvent e;
        e.onset = j.at("onset").get<double>();
        e.offset = j.at("offset").get<double>();
        e.label = j.at("label").get<int>();
        e.score = j.at("score").get<double>();
        out[j.at("clip_id").get<std::string>()].push_back(e);
    }
    return out;
}

}  // namespace diffsed
