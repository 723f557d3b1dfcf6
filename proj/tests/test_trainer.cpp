#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "diffsed/checkpoint.hpp"
#include "diffsed/dataset_io.hpp"
#include "diffsed/synthgen.hpp"
#include "diffsed/trainer.hpp"

namespace fs = std::filesystem;
using namespace diffsed;

namespace {

struct TempTree {
    fs::path root;
    explicit TempTree(const std::string& name) : root(fs::temp_directory_path() / name) {
        fs::remove_all(root);
        fs::create_directories(root);
    }
    ~TempTree() { fs::remove_all(root); }
    std::string sub(const std::string& name) const { return (root / name).string(); }
};

void write_tiny_dataset(const std::string& dir, uint64_t seed, int n_clips) {
    GeneratorSpec spec;
    spec.n_clips = n_clips;
    spec.clip_seconds = 3.0;
    spec.sample_rate = 8000;
    spec.n_classes = 3;
    spec.min_events = 1;
    spec.max_events = 2;
    spec.min_event_seconds = 0.5;
    spec.max_event_seconds = 1.2;
    save_dataset(synth_dataset(spec, seed), dir, {{"seed", seed}});
}

RunConfig tiny_run(const TempTree& tmp, Mode mode) {
    RunConfig cfg;
    cfg.mode = mode;
    cfg.conv_channels = {4};
    cfg.d_model = 16;
    cfg.enc_layers = 1;
    cfg.dec_layers = 1;
    cfg.n_heads = 2;
    cfg.ff_dim = 24;
    cfg.n_queries = 6;
    cfg.n_classes = 3;
    cfg.T = 100;
    cfg.epochs = 2;
    cfg.lr = 1e-3;
    cfg.batch = 4;
    cfg.lr_decay_epoch = 1000;
    cfg.restore_every = 0;
    cfg.seed = 5;
    cfg.train_dir = tmp.sub("train");
    cfg.val_dir = tmp.sub("val");
    cfg.stft.win = 256;
    cfg.stft.hop = 128;
    cfg.stft.n_fft = 256;
    cfg.stft.n_mels = 16;
    cfg.stft.fmax = 4000.0;
    cfg.threads = 2;
    return cfg;
}

std::string read_file(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(is), {});
}

// all columns except the wall-clock one
std::string strip_wall(const std::string& csv) {
    std::istringstream is(csv);
    std::ostringstream os;
    std::string line;
    while (std::getline(is, line)) {
        const auto last = line.rfind(',');
        os << line.substr(0, last) << "\n";
    }
    return os.str();
}

}  // namespace

TEST_CASE("one-epoch smoke run completes with finite loss in every mode") {
    TempTree tmp("diffsed_trainer_smoke");
    write_tiny_dataset(tmp.sub("train"), 1, 8);
    write_tiny_dataset(tmp.sub("val"), 2, 4);
    for (Mode mode : {Mode::DiffSed, Mode::DiffSedBB, Mode::SedtBaseline}) {
        auto cfg = tiny_run(tmp, mode);
        cfg.epochs = 1;
        cfg.run_dir = tmp.sub("run_" + mode_name(mode));
        const auto result = train_model(cfg);
        REQUIRE(result.log.records.size() == 1);
        CHECK(std::isfinite(result.log.records[0].train_loss));
        CHECK(fs::exists(cfg.run_dir + "/checkpoint.bin"));
        CHECK(fs::exists(cfg.run_dir + "/convergence.csv"));
        CHECK(fs::exists(cfg.run_dir + "/run.json"));
    }
}

TEST_CASE("fixed seed reproduces the log and checkpoint bit-for-bit") {
    TempTree tmp("diffsed_trainer_determinism");
    write_tiny_dataset(tmp.sub("train"), 3, 8);
    write_tiny_dataset(tmp.sub("val"), 4, 4);

    auto cfg1 = tiny_run(tmp, Mode::DiffSed);
    cfg1.run_dir = tmp.sub("run1");
    auto cfg2 = tiny_run(tmp, Mode::DiffSed);
    cfg2.run_dir = tmp.sub("run2");

    const auto r1 = train_model(cfg1);
    const auto r2 = train_model(cfg2);
    CHECK(strip_wall(r1.log.to_csv()) == strip_wall(r2.log.to_csv()));
    CHECK(read_file(cfg1.run_dir + "/checkpoint.bin") ==
          read_file(cfg2.run_dir + "/checkpoint.bin"));

    auto cfg3 = tiny_run(tmp, Mode::DiffSed);
    cfg3.run_dir = tmp.sub("run3");
    cfg3.seed = 77;
    const auto r3 = train_model(cfg3);
    CHECK(strip_wall(r1.log.to_csv()) != strip_wall(r3.log.to_csv()));
}

TEST_CASE("checkpoint round trip preserves validation metrics exactly") {
    TempTree tmp("diffsed_trainer_ckpt");
    write_tiny_dataset(tmp.sub("train"), 5, 8);
    write_tiny_dataset(tmp.sub("val"), 6, 4);
    auto cfg = tiny_run(tmp, Mode::DiffSed);
    cfg.run_dir = tmp.sub("run");
    const auto result = train_model(cfg);

    LoadedModel lm = load_model(result.checkpoint_path);
    const auto val = featurize_clips(load_dataset(cfg.val_dir).clips, lm.stft, 2);
    InferParams ip;
    ip.steps = cfg.infer_steps;
    ip.threshold = cfg.metrics.threshold;
    ip.scale = lm.scale;
    ip.seed = mix64(cfg.seed ^ 0xa715ULL);
    const auto preds = run_inference(lm.model, lm.schedule, val, ip, 2);
    const auto report = evaluate_corpus(to_eval_clips(val, preds), cfg.metrics);
    CHECK(report.event.f1 == doctest::Approx(result.best_event_f1).epsilon(1e-12));
}

TEST_CASE("n_queries must cover the most crowded clip") {
    TempTree tmp("diffsed_trainer_capacity");
    write_tiny_dataset(tmp.sub("train"), 7, 6);
    write_tiny_dataset(tmp.sub("val"), 8, 3);
    auto cfg = tiny_run(tmp, Mode::DiffSed);
    cfg.run_dir = tmp.sub("run");
    cfg.n_queries = 1;   // clips can carry 2 events
    CHECK_THROWS_AS(train_model(cfg), std::invalid_argument);
}

TEST_CASE("inference: same seed gives identical predictions, steps behave") {
    TempTree tmp("diffsed_infer_dup");
    write_tiny_dataset(tmp.sub("train"), 9, 6);
    write_tiny_dataset(tmp.sub("val"), 10, 3);
    auto cfg = tiny_run(tmp, Mode::DiffSed);
    cfg.run_dir = tmp.sub("run");
    cfg.epochs = 1;
    const auto result = train_model(cfg);
    LoadedModel lm = load_model(result.checkpoint_path);
    const auto val = featurize_clips(load_dataset(cfg.val_dir).clips, lm.stft, 2);

    InferParams a;
    a.seed = 42;
    a.scale = lm.scale;
    InferParams b = a;
    const auto pa = run_inference(lm.model, lm.schedule, val, a, 2);
    const auto pb = run_inference(lm.model, lm.schedule, val, b, 2);
    REQUIRE(pa.size() == pb.size());
    for (size_t i = 0; i < pa.size(); ++i) {
        REQUIRE(pa[i].size() == pb[i].size());
        for (size_t j = 0; j < pa[i].size(); ++j) {
            CHECK(pa[i][j].onset == pb[i][j].onset);
            CHECK(pa[i][j].score == pb[i][j].score);
        }
    }

    InferParams multi = a;
    multi.steps = 5;
    const auto pm = run_inference(lm.model, lm.schedule, val, multi, 2);
    CHECK(pm.size() == val.size());   // multi-step walks the plan without error

    InferParams bad = a;
    bad.steps = 1000000;
    CHECK_THROWS_AS(run_inference(lm.model, lm.schedule, val, bad, 2), std::invalid_argument);
}

TEST_CASE("predictions JSONL round trip") {
    TempTree tmp("diffsed_pred_io");
    std::vector<FeatClip> clips(2);
    clips[0].clip_id = "a";
    clips[0].duration = 3.0;
    clips[1].clip_id = "b";
    clips[1].duration = 3.0;
    std::vector<std::vector<ScoredEvent>> preds(2);
    preds[0].push_back({0.5, 1.25, 2, 0.875});
    preds[1].push_back({1.0, 2.0, 0, 0.625});
    preds[1].push_back({0.25, 0.75, 1, 0.9375});
    const auto path = tmp.sub("preds.jsonl");
    write_predictions(path, clips, preds);
    const auto back = read_predictions(path);
    REQUIRE(back.size() == 2);
    CHECK(back.at("a")[0].offset == 1.25);
    CHECK(back.at("b")[1].label == 1);
    CHECK(back.at("b")[0].score == 0.625);
}

TEST_CASE("arch-hash mismatch is refused at load") {
    TempTree tmp("diffsed_archhash");
    write_tiny_dataset(tmp.sub("train"), 11, 6);
    write_tiny_dataset(tmp.sub("val"), 12, 3);
    auto cfg = tiny_run(tmp, Mode::DiffSed);
    cfg.run_dir = tmp.sub("run");
    cfg.epochs = 1;
    const auto result = train_model(cfg);

    // corrupt the stored hash
    Checkpoint ck = load_checkpoint(result.checkpoint_path);
    ck.meta["arch_hash"] = "0000000000000000";
    const auto tampered = tmp.sub("tampered.bin");
    save_checkpoint(tampered, ck.params, ck.meta);
    CHECK_THROWS_AS(load_model(tampered), std::runtime_error);
}
