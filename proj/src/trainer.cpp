#include "diffsed/trainer.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "diffsed/checkpoint.hpp"
#include "diffsed/dataset_io.hpp"
#include "diffsed/optim.hpp"
#include "diffsed/parallel.hpp"

namespace fs = std::filesystem;

namespace diffsed {

ModelConfig RunConfig::model_config() const {
    ModelConfig m;
    m.mode = mode;
    m.enc.conv_channels = conv_channels;
    m.enc.d_model = d_model;
    m.enc.n_layers = enc_layers;
    m.enc.n_heads = n_heads;
    m.enc.ff_dim = ff_dim;
    m.enc.dropout = dropout;
    m.dec.n_layers = dec_layers;
    m.dec.n_heads = n_heads;
    m.dec.ff_dim = ff_dim;
    m.dec.n_queries = n_queries;
    m.dec.n_classes = n_classes;
    m.n_mels = static_cast<size_t>(stft.n_mels);
    return m;
}

nlohmann::json model_config_to_json(const ModelConfig& cfg) {
    return {{"mode", mode_name(cfg.mode)},
            {"conv_channels", cfg.enc.conv_channels},
            {"d_model", cfg.enc.d_model},
            {"enc_layers", cfg.enc.n_layers},
            {"enc_heads", cfg.enc.n_heads},
            {"enc_ff", cfg.enc.ff_dim},
            {"dropout", cfg.enc.dropout},
            {"dec_layers", cfg.dec.n_layers},
            {"dec_heads", cfg.dec.n_heads},
            {"dec_ff", cfg.dec.ff_dim},
            {"n_queries", cfg.dec.n_queries},
            {"n_classes", cfg.dec.n_classes},
            {"n_mels", cfg.n_mels}};
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
    ModelConfig cfg;
    cfg.mode = mode_from_name(j.at("mode").get<std::string>());
    cfg.enc.conv_channels = j.at("conv_channels").get<std::vector<size_t>>();
    cfg.enc.d_model = j.at("d_model").get<size_t>();
    cfg.enc.n_layers = j.at("enc_layers").get<size_t>();
    cfg.enc.n_heads = j.at("enc_heads").get<size_t>();
    cfg.enc.ff_dim = j.at("enc_ff").get<size_t>();
    cfg.enc.dropout = j.at("dropout").get<double>();
    cfg.dec.n_layers = j.at("dec_layers").get<size_t>();
    cfg.dec.n_heads = j.at("dec_heads").get<size_t>();
    cfg.dec.ff_dim = j.at("dec_ff").get<size_t>();
    cfg.dec.n_queries = j.at("n_queries").get<size_t>();
    cfg.dec.n_classes = j.at("n_classes").get<size_t>();
    cfg.n_mels = j.at("n_mels").get<size_t>();
    return cfg;
}

nlohmann::json stft_config_to_json(const StftConfig& cfg) {
    return {{"win", cfg.win},     {"hop", cfg.hop},   {"n_fft", cfg.n_fft},
            {"n_mels", cfg.n_mels}, {"fmin", cfg.fmin}, {"fmax", cfg.fmax}};
}

StftConfig stft_config_from_json(const nlohmann::json& j) {
    StftConfig cfg;
    cfg.win = j.at("win").get<int>();
    cfg.hop = j.at("hop").get<int>();
    cfg.n_fft = j.at("n_fft").get<int>();
    cfg.n_mels = j.at("n_mels").get<int>();
    cfg.fmin = j.at("fmin").get<double>();
    cfg.fmax = j.at("fmax").get<double>();
    return cfg;
}

nlohmann::json RunConfig::to_json() const {
    nlohmann::json j;
    j["mode"] = mode_name(mode);
    j["model"] = model_config_to_json(model_config());
    j["diffusion"] = {{"T", T}, {"s", schedule_s}, {"scale", scale}, {"infer_steps", infer_steps}};
    j["optim"] = {{"epochs", epochs},
                  {"lr", lr},
                  {"batch", batch},
                  {"lr_decay", lr_decay},
                  {"lr_decay_epoch", lr_decay_epoch},
                  {"restore_every", restore_every},
                  {"z0_aux_weight", z0_aux_weight}};
    j["match"] = {{"lambda_cls", match.lambda_cls},
                  {"lambda_l1", match.lambda_l1},
                  {"lambda_iou", match.lambda_iou},
                  {"no_event_weight", match.no_event_weight}};
    j["seed"] = seed;
    j["train_dir"] = train_dir;
    j["val_dir"] = val_dir;
    j["run_dir"] = run_dir;
    j["stft"] = stft_config_to_json(stft);
    j["metrics"] = {{"collar", metrics.collar},
                    {"offset_ratio", metrics.offset_ratio},
                    {"segment_length", metrics.segment_length},
                    {"threshold", metrics.threshold}};
    return j;
}

RunConfig RunConfig::from_json(const nlohmann::json& j) {
    RunConfig c;
    c.mode = mode_from_name(j.at("mode").get<std::string>());
    const auto m = model_config_from_json(j.at("model"));
    c.conv_channels = m.enc.conv_channels;
    c.d_model = m.enc.d_model;
    c.enc_layers = m.enc.n_layers;
    c.dec_layers = m.dec.n_layers;
    c.n_heads = m.enc.n_heads;
    c.ff_dim = m.enc.ff_dim;
    c.dropout = m.enc.dropout;
    c.n_queries = m.dec.n_queries;
    c.n_classes = m.dec.n_classes;
    c.T = j.at("diffusion").at("T").get<size_t>();
    c.schedule_s = j.at("diffusion").at("s").get<double>();
    c.scale = j.at("diffusion").at("scale").get<double>();
    c.infer_steps = j.at("diffusion").at("infer_steps").get<size_t>();
    c.epochs = j.at("optim").at("epochs").get<size_t>();
    c.lr = j.at("optim").at("lr").get<double>();
    c.batch = j.at("optim").at("batch").get<size_t>();
    c.lr_decay = j.at("optim").at("lr_decay").get<double>();
    c.lr_decay_epoch = j.at("optim").at("lr_decay_epoch").get<size_t>();
    c.restore_every = j.at("optim").at("restore_every").get<size_t>();
    c.z0_aux_weight = j.at("optim").at("z0_aux_weight").get<double>();
    c.match.lambda_cls = j.at("match").at("lambda_cls").get<double>();
    c.match.lambda_l1 = j.at("match").at("lambda_l1").get<double>();
    c.match.lambda_iou = j.at("match").at("lambda_iou").get<double>();
    c.match.no_event_weight = j.at("match").at("no_event_weight").get<double>();
    c.seed = j.at("seed").get<uint64_t>();
    c.train_dir = j.at("train_dir").get<std::string>();
    c.val_dir = j.at("val_dir").get<std::string>();
    c.run_dir = j.at("run_dir").get<std::string>();
    c.stft = stft_config_from_json(j.at("stft"));
    c.metrics.collar = j.at("metrics").at("collar").get<double>();
    c.metrics.offset_ratio = j.at("metrics").at("offset_ratio").get<double>();
    c.metrics.segment_length = j.at("metrics").at("segment_length").get<double>();
    c.metrics.threshold = j.at("metrics").at("threshold").get<double>();
    return c;
}

std::string ConvergenceLog::to_csv() const {
    std::ostringstream os;
    os.precision(17);
    os << "epoch,train_loss,val_event_f1,val_segment_f1,val_tagging_f1,wall_seconds\n";
    for (const auto& r : records)
        os << r.epoch << "," << r.train_loss << "," << r.val_event_f1 << "," << r.val_segment_f1
           << "," << r.val_tagging_f1 << "," << r.wall_seconds << "\n";
    return os.str();
}

ConvergenceLog ConvergenceLog::from_csv(const std::string& csv) {
    ConvergenceLog log;
    std::istringstream is(csv);
    std::string line;
    std::getline(is, line);   // header
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        EpochRecord r;
        std::istringstream ls(line);
        char comma;
        ls >> r.epoch >> comma >> r.train_loss >> comma >> r.val_event_f1 >> comma >>
            r.val_segment_f1 >> comma >> r.val_tagging_f1 >> comma >> r.wall_seconds;
        log.records.push_back(r);
    }
    return log;
}

namespace {

std::string git_hash() {
    FILE* pipe = popen("git rev-parse HEAD 2>/dev/null", "r");
    if (!pipe) return "unknown";
    char buf[128] = {0};
    std::string out;
    while (fgets(buf, sizeof(buf), pipe)) out += buf;
    pclose(pipe);
    while (!out.empty() && (out.back() == '\n' || out.back() == '\r')) out.pop_back();
    return out.empty() ? "unknown" : out;
}

struct ClipBatchResult {
    GradSink sink;
    double loss = 0.0;
};

std::vector<std::pair<double, double>> normalized_boxes(const FeatClip& clip) {
    std::vector<std::pair<double, double>> boxes;
    boxes.reserve(clip.annotations.size());
    for (const auto& a : clip.annotations)
        boxes.emplace_back(a.onset / clip.duration, a.offset / clip.duration);
    return boxes;
}

std::vector<EventAnnotation> normalized_annotations(const FeatClip& clip) {
    std::vector<EventAnnotation> out = clip.annotations;
    for (auto& a : out) {
        a.onset /= clip.duration;
        a.offset /= clip.duration;
    }
    return out;
}

double grad_norm(const ParamStore& params) {
    double s = 0.0;
    for (const auto& p : params.items()) {
        if (!p.tensor.has_grad()) continue;
        for (double g : p.tensor.node()->grad) s += g * g;
    }
    return std::sqrt(s);
}

}  // namespace

TrainResult train_model(const RunConfig& cfg,
                        const std::function<bool(const EpochRecord&)>& stop_when) {
    const size_t threads = cfg.threads ? cfg.threads : default_threads();
    const auto t_start = std::chrono::steady_clock::now();

    const Dataset train_ds = load_dataset(cfg.train_dir);
    const Dataset val_ds = load_dataset(cfg.val_dir);
    const auto train = featurize_clips(train_ds.clips, cfg.stft, threads);
    const auto val = featurize_clips(val_ds.clips, cfg.stft, threads);
    if (train.empty()) throw std::invalid_argument("train: empty training dataset");

    size_t max_events = 0;
    for (const auto& c : train) max_events = std::max(max_events, c.annotations.size());
    if (max_events > cfg.n_queries)
        throw std::invalid_argument("train: n_queries must cover the most crowded clip (needs " +
                                    std::to_string(max_events) + ")");

    const ModelConfig mc = cfg.model_config();
    Rng init_rng = Rng::derive(cfg.seed, 0x1417);
    DetectorModel model = DetectorModel::init(mc, init_rng);
    const NoiseSchedule sched = cosine_schedule(cfg.T, cfg.schedule_s);
    const ScaleParams scale{cfg.scale};
    Adam adam(AdamConfig{cfg.lr, 0.9, 0.999, 1e-8, 0.0});

    fs::create_directories(cfg.run_dir);
    const std::string ckpt_path = (fs::path(cfg.run_dir) / "checkpoint.bin").string();

    InferParams val_infer;
    val_infer.steps = cfg.infer_steps;
    val_infer.threshold = cfg.metrics.threshold;
    val_infer.scale = scale;

    TrainResult result;
    result.best_event_f1 = -1.0;
    std::vector<std::vector<double>> best_values;
    double last_grad_norm = 0.0;

    for (size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        if (epoch == cfg.lr_decay_epoch && cfg.lr_decay != 1.0) adam.set_lr(cfg.lr * cfg.lr_decay);

        Rng shuffle_rng = Rng::derive(cfg.seed, 0x5u, epoch);
        const auto order = shuffle_rng.permutation(train.size());

        double epoch_loss = 0.0;
        for (size_t b0 = 0; b0 < order.size(); b0 += cfg.batch) {
            const size_t bsz = std::min(cfg.batch, order.size() - b0);
            std::vector<ClipBatchResult> results(bsz);
            parallel_for(
                bsz,
                [&](size_t bi) {
                    const FeatClip& clip = train[order[b0 + bi]];
                    Rng rng = Rng::derive(cfg.seed, epoch * 1000003ULL + 7, order[b0 + bi]);
                    Tensor c_a = model.encode(clip.mel, &rng, true);
                    const size_t t =
                        static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(cfg.T)));

                    QuerySet q;
                    Tensor z0_target;   // scaled clean queries (diffsed aux target)
                    if (cfg.mode == Mode::DiffSed) {
                        QuerySet z0;
                        // squash the dictionary into [0,1] so the scaling
                        // contract and the +-scale clamp hold
                        z0.queries = sigmoid(model.dictionary_queries().queries);
                        Tensor eps = Tensor::randn({cfg.n_queries, cfg.d_model}, rng);
                        q = corrupt_queries(z0, t, eps, sched, scale);
                        z0_target = scale_signal(z0.queries, scale).detach();
                    } else if (cfg.mode == Mode::DiffSedBB) {
                        const auto boxes = normalized_boxes(clip);
                        Tensor eps = Tensor::randn({cfg.n_queries, 2}, rng);
                        const auto perm = rng.permutation(cfg.n_queries);
                        q = corrupt_boxes(boxes, cfg.n_queries, t, eps, sched, scale,
                                          model.box_projection(), &perm);
                    } else {
                        q = model.dictionary_queries();
                    }

                    Tensor f_d = model.decode(q, c_a, &rng, true);
                    HeadOutputs ho = model.heads(f_d);
                    const auto gts = normalized_annotations(clip);
                    const auto cm = build_cost_matrix(ho.to_proposals(), gts, cfg.match);
                    const auto asg = hungarian(cm);
                    Tensor loss = set_prediction_loss(ho, gts, asg, cfg.match);
                    if (cfg.mode == Mode::DiffSed && cfg.z0_aux_weight > 0.0) {
                        Tensor d = sub(ho.z0_hat, z0_target);
                        loss = add(loss, mul_scalar(mean(mul(d, d)), cfg.z0_aux_weight));
                    }
                    results[bi].loss = loss.value();
                    loss.backward(&results[bi].sink);
                },
                threads);

            model.params().zero_grads();
            double batch_loss = 0.0;
            for (auto& r : results) {
                model.params().apply_sink(r.sink);
                batch_loss += r.loss;
            }
            // average the summed per-clip gradients over the batch
            for (auto& p : model.params().items()) {
                p.tensor.node()->ensure_grad();
                for (auto& g : p.tensor.node()->grad) g /= static_cast<double>(bsz);
            }
            epoch_loss += batch_loss;
            if (!std::isfinite(batch_loss))
                throw std::runtime_error(
                    "train: NaN loss at epoch " + std::to_string(epoch) +
                    " (lr=" + std::to_string(adam.lr()) +
                    ", last grad norm=" + std::to_string(last_grad_norm) + ")");
            last_grad_norm = grad_norm(model.params());
            adam.step(model.params());
        }
        epoch_loss /= static_cast<double>(train.size());

        // validation pass through the real inference path
        val_infer.seed = mix64(cfg.seed ^ 0xa715ULL);
        const auto val_preds = run_inference(model, sched, val, val_infer, threads);
        const auto report = evaluate_corpus(to_eval_clips(val, val_preds), cfg.metrics);

        EpochRecord rec;
        rec.epoch = epoch;
        rec.train_loss = epoch_loss;
        rec.val_event_f1 = report.event.f1;
        rec.val_segment_f1 = report.segment.f1;
        rec.val_tagging_f1 = report.tagging.f1;
        rec.wall_seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
        result.log.records.push_back(rec);

        if (report.event.f1 > result.best_event_f1) {
            result.best_event_f1 = report.event.f1;
            result.best_epoch = epoch;
            best_values = model.params().snapshot_values();
        }

        if (stop_when && stop_when(rec)) break;

        // periodic restart from the best checkpoint, optimizer state reset
        if (cfg.restore_every > 0 && (epoch + 1) % cfg.restore_every == 0 &&
            epoch + 1 < cfg.epochs && !best_values.empty()) {
            model.params().restore_values(best_values);
            adam.reset();
        }
    }

    // persist the best weights
    if (!best_values.empty()) model.params().restore_values(best_values);
    nlohmann::json meta;
    meta["arch_hash"] = mc.arch_hash();
    meta["model"] = model_config_to_json(mc);
    meta["diffusion"] = {{"T", cfg.T}, {"s", cfg.schedule_s}, {"scale", cfg.scale}};
    meta["stft"] = stft_config_to_json(cfg.stft);
    meta["best"] = {{"epoch", result.best_epoch}, {"event_f1", result.best_event_f1}};
    save_checkpoint(ckpt_path, model.params(), meta);
    result.checkpoint_path = ckpt_path;

    std::ofstream csv(fs::path(cfg.run_dir) / "convergence.csv", std::ios::trunc);
    csv << result.log.to_csv();

    nlohmann::json runj;
    runj["config"] = cfg.to_json();
    runj["git_hash"] = git_hash();
    runj["wall_seconds"] =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
    runj["best"] = {{"epoch", result.best_epoch}, {"event_f1", result.best_event_f1}};
    std::ofstream runf(fs::path(cfg.run_dir) / "run.json", std::ios::trunc);
    runf << runj.dump(2) << "\n";

    return result;
}

LoadedModel load_model(const std::string& checkpoint_path) {
    Checkpoint ck = load_checkpoint(checkpoint_path);
    const ModelConfig mc = model_config_from_json(ck.meta.at("model"));
    const std::string stored = ck.meta.at("arch_hash").get<std::string>();
    if (stored != mc.arch_hash())
        throw std::runtime_error("checkpoint arch hash mismatch (stored " + stored +
                                 ", config gives " + mc.arch_hash() + ")");
    LoadedModel lm{DetectorModel::from_params(mc, std::move(ck.params)),
                   cosine_schedule(ck.meta.at("diffusion").at("T").get<size_t>(),
                                   ck.meta.at("diffusion").at("s").get<double>()),
                   ScaleParams{ck.meta.at("diffusion").at("scale").get<double>()},
                   stft_config_from_json(ck.meta.at("stft")), ck.meta};
    return lm;
}

}  // namespace diffsed
