#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "diffsed/checkpoint.hpp"
#include "diffsed/rng.hpp"

namespace fs = std::filesystem;
using namespace diffsed;

namespace {
std::string read_file(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(is), {});
}
}  // namespace

TEST_CASE("checkpoint round trip is bit-identical") {
    const auto dir = fs::temp_directory_path() / "diffsed_ckpt_test";
    fs::create_directories(dir);
    const auto path_a = (dir / "a.bin").string();
    const auto path_b = (dir / "b.bin").string();

    ParamStore ps;
    Rng rng(31);
    ps.add("alpha", Tensor::randn({3, 5}, rng));
    ps.add("beta", Tensor::randn({7}, rng));
    ps.add("gamma.w", Tensor::randn({2, 2}, rng));
    nlohmann::json meta = {{"arch_hash", "cafe"}, {"note", 1.25e-7}};

    save_checkpoint(path_a, ps, meta);
    Checkpoint ck = load_checkpoint(path_a);
    CHECK(ck.meta == meta);
    REQUIRE(ck.params.size() == 3);
    CHECK(ck.params.items()[0].name == "alpha");
    CHECK(ck.params.at("alpha").data() == ps.at("alpha").data());
    CHECK(ck.params.at("beta").shape() == std::vector<size_t>{7});

    save_checkpoint(path_b, ck.params, ck.meta);
    CHECK(read_file(path_a) == read_file(path_b));
    fs::remove_all(dir);
}

TEST_CASE("loader rejects foreign files and truncation") {
    const auto dir = fs::temp_directory_path() / "diffsed_ckpt_bad";
    fs::create_directories(dir);
    const auto junk = (dir / "junk.bin").string();
    {
        std::ofstream os(junk, std::ios::binary);
        os << "this is not a checkpoint";
    }
    CHECK_THROWS_AS(load_checkpoint(junk), std::runtime_error);

    // a valid file cut short
    ParamStore ps;
    Rng rng(5);
    ps.add("w", Tensor::randn({64}, rng));
    const auto good = (dir / "good.bin").string();
    save_checkpoint(good, ps, {{"k", "v"}});
    const auto bytes = read_file(good);
    const auto cut = (dir / "cut.bin").string();
    {
        std::ofstream os(cut, std::ios::binary);
        os.write(bytes.data(), static_cast<std::streamsize>(bytes.size() - 100));
    }
    CHECK_THROWS_AS(load_checkpoint(cut), std::runtime_error);
    CHECK_THROWS_AS(load_checkpoint((dir / "missing.bin").string()), std::runtime_error);
    fs::remove_all(dir);
}
