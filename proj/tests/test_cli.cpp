#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "diffsed/dataset_io.hpp"

namespace fs = std::filesystem;

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

int run_cli(const std::string& args) {
    const std::string cmd = std::string(DIFFSED_CLI_PATH) + " " + args + " > /dev/null 2>&1";
    return std::system(cmd.c_str());
}

std::string read_file(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(is), {});
}

}  // namespace

TEST_CASE("gen-data is deterministic and refuses nonempty dirs without --force") {
    TempTree tmp("diffsed_cli_gen");
    const std::string flags =
        " --clips 4 --classes 3 --seed 7 --clip-seconds 2 --sample-rate 8000"
        " --min-event-seconds 0.4 --max-event-seconds 0.8";
    REQUIRE(run_cli("gen-data --out " + tmp.sub("a") + flags) == 0);
    REQUIRE(run_cli("gen-data --out " + tmp.sub("b") + flags) == 0);
    CHECK(read_file(tmp.sub("a") + "/meta.json") == read_file(tmp.sub("b") + "/meta.json"));
    CHECK(read_file(tmp.sub("a") + "/annotations.jsonl") ==
          read_file(tmp.sub("b") + "/annotations.jsonl"));

    // refusal without --force, success with it
    CHECK(run_cli("gen-data --out " + tmp.sub("a") + flags) != 0);
    CHECK(run_cli("gen-data --out " + tmp.sub("a") + flags + " --force") == 0);
}

TEST_CASE("gen-data --events-per-clip 0 gives an all-background dataset") {
    TempTree tmp("diffsed_cli_bg");
    REQUIRE(run_cli("gen-data --out " + tmp.sub("bg") +
                    " --clips 3 --events-per-clip 0 --clip-seconds 2 --sample-rate 8000"
                    " --seed 3") == 0);
    const auto ds = diffsed::load_dataset(tmp.sub("bg"));
    CHECK(ds.clips.size() == 3);
    for (const auto& c : ds.clips) CHECK(c.annotations.empty());
}

TEST_CASE("generated dataset passes load_dataset validation") {
    TempTree tmp("diffsed_cli_valid");
    REQUIRE(run_cli("gen-data --out " + tmp.sub("d") +
                    " --clips 6 --seed 11 --clip-seconds 3 --sample-rate 8000"
                    " --min-event-seconds 0.4 --max-event-seconds 1.0") == 0);
    const auto ds = diffsed::load_dataset(tmp.sub("d"));
    CHECK(ds.clips.size() == 6);
    CHECK(ds.meta.at("seed") == 11);
}

TEST_CASE("eval scores a perfect prediction file at 1.0 and an empty one at R=0") {
    TempTree tmp("diffsed_cli_eval");
    REQUIRE(run_cli("gen-data --out " + tmp.sub("d") +
                    " --clips 3 --seed 2 --clip-seconds 3 --sample-rate 8000"
                    " --min-event-seconds 0.5 --max-event-seconds 1.0") == 0);
    const auto ds = diffsed::load_dataset(tmp.sub("d"));

    // perfect predictions straight from the annotations
    {
        std::ofstream os(tmp.sub("perfect.jsonl"));
        for (const auto& c : ds.clips)
            for (const auto& e : c.annotations) {
                nlohmann::json j = {{"clip_id", c.clip_id},
                                    {"onset", e.onset},
                                    {"offset", e.offset},
                                    {"label", e.label},
                                    {"score", 1.0}};
                os << j.dump() << "\n";
            }
    }
    REQUIRE(run_cli("eval --predictions " + tmp.sub("perfect.jsonl") + " --dataset " +
                    tmp.sub("d") + " --out " + tmp.sub("report.json")) == 0);
    const auto report = nlohmann::json::parse(read_file(tmp.sub("report.json")));
    CHECK(report["event_based"]["f1"] == 1.0);
    CHECK(report["segment_based"]["f1"] == 1.0);
    CHECK(report["tagging"]["f1"] == 1.0);

    // empty predictions: recall 0
    {
        std::ofstream os(tmp.sub("empty.jsonl"));
    }
    REQUIRE(run_cli("eval --predictions " + tmp.sub("empty.jsonl") + " --dataset " + tmp.sub("d") +
                    " --out " + tmp.sub("report2.json")) == 0);
    const auto r2 = nlohmann::json::parse(read_file(tmp.sub("report2.json")));
    CHECK(r2["event_based"]["recall"] == 0.0);

    // unknown clip ids abort
    {
        std::ofstream os(tmp.sub("bad.jsonl"));
        os << nlohmann::json({{"clip_id", "nope"},
                              {"onset", 0.1},
                              {"offset", 0.2},
                              {"label", 0},
                              {"score", 1.0}})
                  .dump()
           << "\n";
    }
    CHECK(run_cli("eval --predictions " + tmp.sub("bad.jsonl") + " --dataset " + tmp.sub("d")) !=
          0);
}

TEST_CASE("train -> infer -> eval -> sweep round trip on a tiny config") {
    TempTree tmp("diffsed_cli_train");
    const std::string gen =
        " --clips 6 --clip-seconds 2 --sample-rate 8000 --min-event-seconds 0.4"
        " --max-event-seconds 0.8 --max-events 2";
    REQUIRE(run_cli("gen-data --out " + tmp.sub("train") + gen + " --seed 1") == 0);
    REQUIRE(run_cli("gen-data --out " + tmp.sub("val") + gen + " --seed 2") == 0);

    const std::string train_flags =
        "train --train-data " + tmp.sub("train") + " --val-data " + tmp.sub("val") +
        " --run-dir " + tmp.sub("run") +
        " --epochs 1 --batch 4 --queries 6 --d-model 16 --enc-layers 1 --dec-layers 1"
        " --heads 2 --ff-dim 24 --timesteps 50 --threads 2 --seed 3";
    REQUIRE(run_cli(train_flags) == 0);
    REQUIRE(fs::exists(tmp.sub("run") + "/checkpoint.bin"));

    REQUIRE(run_cli("infer --checkpoint " + tmp.sub("run") + "/checkpoint.bin --dataset " +
                    tmp.sub("val") + " --out " + tmp.sub("preds.jsonl") +
                    " --steps 2 --seed 9 --threads 2") == 0);
    CHECK(fs::exists(tmp.sub("preds.jsonl")));

    REQUIRE(run_cli("eval --predictions " + tmp.sub("preds.jsonl") + " --dataset " +
                    tmp.sub("val") + " --out " + tmp.sub("report.json")) == 0);
    CHECK(fs::exists(tmp.sub("report.json")));

    REQUIRE(run_cli("sweep --axis steps --values 1 2 --checkpoint " + tmp.sub("run") +
                    "/checkpoint.bin --dataset " + tmp.sub("val") + " --out " +
                    tmp.sub("sweep.csv") + " --threads 2") == 0);
    const auto csv = read_file(tmp.sub("sweep.csv"));
    CHECK(csv.find("steps,1") != std::string::npos);
    CHECK(csv.find("steps,2") != std::string::npos);

    CHECK(run_cli("sweep --axis bogus --values 1 --checkpoint x --dataset y") != 0);
}

TEST_CASE("dump-schedule writes a CSV") {
    TempTree tmp("diffsed_cli_sched");
    REQUIRE(run_cli("dump-schedule --timesteps 32 --out " + tmp.sub("sched.csv")) == 0);
    const auto csv = read_file(tmp.sub("sched.csv"));
    CHECK(csv.rfind("t,beta,alpha_cumprod", 0) == 0);
}
