#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>

#include "diffsed/dataset_io.hpp"
#include "diffsed/parallel.hpp"
#include "diffsed/synthgen.hpp"
#include "diffsed/trainer.hpp"

namespace fs = std::filesystem;
using namespace diffsed;

namespace {

nlohmann::json generator_spec_json(const GeneratorSpec& s, uint64_t seed) {
    return {{"n_clips", s.n_clips},
            {"clip_seconds", s.clip_seconds},
            {"sample_rate", s.sample_rate},
            {"n_classes", s.n_classes},
            {"min_events", s.min_events},
            {"max_events", s.max_events},
            {"min_event_seconds", s.min_event_seconds},
            {"max_event_seconds", s.max_event_seconds},
            {"snr_db", s.snr_db},
            {"max_simultaneous", s.max_simultaneous},
            {"event_amplitude", s.event_amplitude},
            {"seed", seed}};
}

int cmd_gen_data(const GeneratorSpec& spec, uint64_t seed, const std::string& out_dir,
                 bool force) {
    if (fs::exists(out_dir) && !fs::is_empty(out_dir) && !force) {
        std::cerr << "error: output directory " << out_dir
                  << " is not empty (use --force to overwrite)\n";
        return 1;
    }
    const auto clips = synth_dataset(spec, seed);
    save_dataset(clips, out_dir, generator_spec_json(spec, seed));

    std::map<int, size_t> class_hist;
    size_t n_events = 0;
    for (const auto& c : clips)
        for (const auto& e : c.annotations) {
            ++class_hist[e.label];
            ++n_events;
        }
    std::cout << "wrote " << clips.size() << " clips, " << n_events << " events to " << out_dir
              << "\n";
    for (const auto& [cls, n] : class_hist)
        std::cout << "  class " << cls << ": " << n << " events\n";
    return 0;
}

// Metric summary shared by eval and sweep output.
void print_report(const EvalReport& report) {
    std::cout << report.to_json().dump(2) << "\n";
}

struct InferArgs {
    std::string checkpoint;
    std::string dataset;
    std::string out = "predictions.jsonl";
    size_t steps = 1;
    uint64_t seed = 0;
    double threshold = 0.5;
    size_t n_queries = 0;
    size_t threads = 0;
};

std::vector<FeatClip> featurize_dir(const std::string& dir, const StftConfig& stft,
                                    size_t threads) {
    const Dataset ds = load_dataset(dir);
    return featurize_clips(ds.clips, stft, threads ? threads : default_threads());
}

int cmd_infer(const InferArgs& a) {
    LoadedModel lm = load_model(a.checkpoint);
    const auto clips = featurize_dir(a.dataset, lm.stft, a.threads);
    InferParams p;
    p.steps = a.steps;
    p.threshold = a.threshold;
    p.seed = a.seed;
    p.n_queries = a.n_queries;
    p.scale = lm.scale;
    const auto preds =
        run_inference(lm.model, lm.schedule, clips, p, a.threads ? a.threads : default_threads());
    write_predictions(a.out, clips, preds);
    size_t total = 0;
    for (const auto& v : preds) total += v.size();
    std::cout << "wrote " << total << " predictions for " << clips.size() << " clips to " << a.out
              << "\n";
    return 0;
}

int cmd_eval(const std::string& predictions, const std::string& dataset,
             const MetricParams& metrics, const std::string& out) {
    const Dataset ds = load_dataset(dataset);
    const auto preds = read_predictions(predictions);

    std::vector<std::string> unknown;
    for (const auto& [id, _] : preds) {
        bool found = false;
        for (const auto& c : ds.clips)
            if (c.clip_id == id) found = true;
        if (!found) unknown.push_back(id);
    }
    if (!unknown.empty()) {
        std::cerr << "error: predictions reference unknown clip_ids:";
        for (const auto& id : unknown) std::cerr << " " << id;
        std::cerr << "\n";
        return 1;
    }

    std::vector<EvalClip> corpus;
    for (const auto& c : ds.clips) {
        EvalClip ec;
        ec.clip_id = c.clip_id;
        ec.duration = c.waveform.duration();
        ec.annotations = c.annotations;
        auto it = preds.find(c.clip_id);
        if (it != preds.end()) ec.predictions = it->second;
        corpus.push_back(std::move(ec));
    }
    const auto report = evaluate_corpus(corpus, metrics);
    print_report(report);
    if (!out.empty()) {
        std::ofstream os(out, std::ios::trunc);
        os << report.to_json().dump(2) << "\n";
    }
    return 0;
}

struct SweepArgs {
    std::string axis;
    std::vector<double> values;
    std::string checkpoint;
    std::string dataset;
    std::string out = "sweep.csv";
    size_t threads = 0;
    RunConfig train_cfg;   // used for axes that retrain
    bool have_train_cfg = false;
};

EvalReport eval_inference(const LoadedModel& lm, const std::vector<FeatClip>& clips,
                          const InferParams& p, const MetricParams& metrics, size_t threads) {
    const auto preds = run_inference(lm.model, lm.schedule, clips, p, threads);
    return evaluate_corpus(to_eval_clips(clips, preds), metrics);
}

int cmd_sweep(SweepArgs& a, const MetricParams& metrics) {
    const size_t threads = a.threads ? a.threads : default_threads();
    std::ostringstream csv;
    csv << "axis,value,event_f1,segment_f1,tagging_f1\n";
    csv.precision(10);

    if (a.axis == "steps" || a.axis == "seed" || a.axis == "queries") {
        if (a.checkpoint.empty()) {
            std::cerr << "error: axis '" << a.axis << "' sweeps a trained checkpoint\n";
            return 1;
        }
        LoadedModel lm = load_model(a.checkpoint);
        const auto clips = featurize_dir(a.dataset, lm.stft, threads);
        for (double v : a.values) {
            InferParams p;
            p.scale = lm.scale;
            p.threshold = metrics.threshold;
            if (a.axis == "steps")
                p.steps = static_cast<size_t>(v);
            else if (a.axis == "seed")
                p.seed = static_cast<uint64_t>(v);
            else
                p.n_queries = static_cast<size_t>(v);
            const auto report = eval_inference(lm, clips, p, metrics, threads);
            csv << a.axis << "," << v << "," << report.event.f1 << "," << report.segment.f1 << ","
                << report.tagging.f1 << "\n";
        }
    } else if (a.axis == "scale") {
        if (!a.have_train_cfg) {
            std::cerr << "error: axis 'scale' retrains per value; pass training flags\n";
            return 1;
        }
        for (double v : a.values) {
            RunConfig cfg = a.train_cfg;
            cfg.scale = v;
            cfg.run_dir = a.train_cfg.run_dir + "/scale_" + std::to_string(v);
            const auto result = train_model(cfg);
            csv << "scale," << v << "," << result.best_event_f1 << ",";
            // re-evaluate the saved best checkpoint for the other metrics
            LoadedModel lm = load_model(result.checkpoint_path);
            const auto clips = featurize_dir(cfg.val_dir, lm.stft, threads);
            InferParams p;
            p.scale = lm.scale;
            p.threshold = metrics.threshold;
            p.steps = cfg.infer_steps;
            const auto report = eval_inference(lm, clips, p, metrics, threads);
            csv.seekp(0, std::ios::end);
            csv << report.segment.f1 << "," << report.tagging.f1 << "\n";
        }
    } else {
        std::cerr << "error: unknown sweep axis '" << a.axis
                  << "' (expected queries|steps|scale|seed)\n";
        return 1;
    }

    std::ofstream os(a.out, std::ios::trunc);
    os << csv.str();
    std::cout << csv.str();
    return 0;
}

void add_train_flags(CLI::App* cmd, RunConfig& cfg, std::string& mode_str) {
    cmd->add_option("--mode", mode_str, "diffsed | diffsed-bb | sedt-baseline");
    cmd->add_option("--train-data", cfg.train_dir, "training dataset directory")->required();
    cmd->add_option("--val-data", cfg.val_dir, "validation dataset directory")->required();
    cmd->add_option("--run-dir", cfg.run_dir, "output directory")->required();
    cmd->add_option("--epochs", cfg.epochs);
    cmd->add_option("--lr", cfg.lr);
    cmd->add_option("--batch", cfg.batch);
    cmd->add_option("--seed", cfg.seed);
    cmd->add_option("--queries", cfg.n_queries);
    cmd->add_option("--classes", cfg.n_classes);
    cmd->add_option("--scale", cfg.scale);
    cmd->add_option("--timesteps", cfg.T);
    cmd->add_option("--infer-steps", cfg.infer_steps);
    cmd->add_option("--d-model", cfg.d_model);
    cmd->add_option("--enc-layers", cfg.enc_layers);
    cmd->add_option("--dec-layers", cfg.dec_layers);
    cmd->add_option("--heads", cfg.n_heads);
    cmd->add_option("--ff-dim", cfg.ff_dim);
    cmd->add_option("--dropout", cfg.dropout);
    cmd->add_option("--lr-decay", cfg.lr_decay);
    cmd->add_option("--lr-decay-epoch", cfg.lr_decay_epoch);
    cmd->add_option("--restore-every", cfg.restore_every);
    cmd->add_option("--threads", cfg.threads);
    cmd->add_option("--collar", cfg.metrics.collar);
    cmd->add_option("--segment-length", cfg.metrics.segment_length);
    cmd->add_option("--threshold", cfg.metrics.threshold);
    cmd->add_option("--win", cfg.stft.win);
    cmd->add_option("--hop", cfg.stft.hop);
    cmd->add_option("--n-fft", cfg.stft.n_fft);
    cmd->add_option("--n-mels", cfg.stft.n_mels);
    cmd->add_option("--fmin", cfg.stft.fmin);
    cmd->add_option("--fmax", cfg.stft.fmax, "upper mel edge in Hz (<= 0: Nyquist)");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"diffusion-based sound event detection harness"};
    app.require_subcommand(1);

    // gen-data
    auto* gen = app.add_subcommand("gen-data", "generate a synthetic labeled dataset");
    GeneratorSpec gspec;
    uint64_t gen_seed = 0;
    std::string gen_out;
    bool gen_force = false;
    gen->add_option("--out", gen_out, "output dataset directory")->required();
    gen->add_option("--clips", gspec.n_clips);
    gen->add_option("--clip-seconds", gspec.clip_seconds);
    gen->add_option("--sample-rate", gspec.sample_rate);
    gen->add_option("--classes", gspec.n_classes);
    gen->add_option("--min-events", gspec.min_events);
    gen->add_option("--max-events", gspec.max_events);
    gen->add_option("--events-per-clip", [&gspec](const std::vector<std::string>& v) {
        gspec.min_events = gspec.max_events = std::stoi(v.at(0));
        return true;
    }, "fixed events per clip");
    gen->add_option("--min-event-seconds", gspec.min_event_seconds);
    gen->add_option("--max-event-seconds", gspec.max_event_seconds);
    gen->add_option("--snr-db", gspec.snr_db);
    gen->add_option("--max-simultaneous", gspec.max_simultaneous);
    gen->add_option("--seed", gen_seed);
    gen->add_flag("--force", gen_force, "allow writing into a nonempty directory");

    // train
    auto* train = app.add_subcommand("train", "train a detector");
    RunConfig tcfg;
    std::string tmode = "diffsed";
    add_train_flags(train, tcfg, tmode);

    // infer
    auto* infer = app.add_subcommand("infer", "run multi-step denoising inference");
    InferArgs iargs;
    infer->add_option("--checkpoint", iargs.checkpoint)->required();
    infer->add_option("--dataset", iargs.dataset)->required();
    infer->add_option("--out", iargs.out);
    infer->add_option("--steps", iargs.steps);
    infer->add_option("--seed", iargs.seed);
    infer->add_option("--threshold", iargs.threshold);
    infer->add_option("--queries", iargs.n_queries);
    infer->add_option("--threads", iargs.threads);

    // eval
    auto* eval = app.add_subcommand("eval", "score predictions against annotations");
    std::string eval_preds, eval_dataset, eval_out;
    MetricParams metrics;
    eval->add_option("--predictions", eval_preds)->required();
    eval->add_option("--dataset", eval_dataset)->required();
    eval->add_option("--out", eval_out, "also write the report JSON here");
    eval->add_option("--collar", metrics.collar);
    eval->add_option("--offset-ratio", metrics.offset_ratio);
    eval->add_option("--segment-length", metrics.segment_length);
    eval->add_option("--threshold", metrics.threshold);

    // sweep
    auto* sweep = app.add_subcommand("sweep", "ablation sweeps over one axis");
    SweepArgs sargs;
    std::string smode = "diffsed";
    sweep->add_option("--axis", sargs.axis, "queries | steps | scale | seed")->required();
    sweep->add_option("--values", sargs.values, "axis values")->required();
    sweep->add_option("--checkpoint", sargs.checkpoint, "trained checkpoint (steps/seed/queries)");
    sweep->add_option("--dataset", sargs.dataset, "dataset to score");
    sweep->add_option("--out", sargs.out);
    sweep->add_option("--threads", sargs.threads);
    sweep->add_option("--collar", metrics.collar);
    sweep->add_option("--segment-length", metrics.segment_length);
    sweep->add_option("--threshold", metrics.threshold);
    // optional training flags for axis=scale
    sweep->add_option("--mode", smode);
    sweep->add_option("--train-data", sargs.train_cfg.train_dir);
    sweep->add_option("--val-data", sargs.train_cfg.val_dir);
    sweep->add_option("--run-dir", sargs.train_cfg.run_dir);
    sweep->add_option("--epochs", sargs.train_cfg.epochs);
    sweep->add_option("--lr", sargs.train_cfg.lr);
    sweep->add_option("--batch", sargs.train_cfg.batch);
    sweep->add_option("--seed", sargs.train_cfg.seed);

    // schedule dump
    auto* sched_cmd = app.add_subcommand("dump-schedule", "write the noise schedule as CSV");
    size_t sched_T = 1000;
    double sched_s = 0.008;
    std::string sched_out = "schedule.csv";
    sched_cmd->add_option("--timesteps", sched_T);
    sched_cmd->add_option("--s", sched_s);
    sched_cmd->add_option("--out", sched_out);

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed()) return cmd_gen_data(gspec, gen_seed, gen_out, gen_force);
        if (train->parsed()) {
            tcfg.mode = mode_from_name(tmode);
            const auto result = train_model(tcfg);
            std::cout << "best val event-F1 " << result.best_event_f1 << " at epoch "
                      << result.best_epoch << "; checkpoint " << result.checkpoint_path << "\n";
            return 0;
        }
        if (infer->parsed()) return cmd_infer(iargs);
        if (eval->parsed()) return cmd_eval(eval_preds, eval_dataset, metrics, eval_out);
        if (sweep->parsed()) {
            sargs.train_cfg.mode = mode_from_name(smode);
            sargs.have_train_cfg = !sargs.train_cfg.train_dir.empty();
            return cmd_sweep(sargs, metrics);
        }
        if (sched_cmd->parsed()) {
            std::ofstream os(sched_out, std::ios::trunc);
            os << schedule_to_csv(cosine_schedule(sched_T, sched_s));
            std::cout << "wrote schedule to " << sched_out << "\n";
            return 0;
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
