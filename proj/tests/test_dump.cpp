#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "shd/dump.hpp"
#include "shd/error.hpp"

using namespace shd;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    explicit TempDir(const char* name) : path(fs::temp_directory_path() / name) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

}  // namespace

TEST_CASE("random dump has valid shapes and row-stochastic maps") {
    const Dump dump = random_dump(7, 2, 4, 6, 8, false);
    REQUIRE(dump.maps.size() == 2);
    REQUIRE(dump.maps[0].size() == 4);
    CHECK(dump.maps[0][0].rows() == 6);
    CHECK(dump.head_values[0][0].cols() == 8);
    for (const auto& layer : dump.maps) {
        for (const Matrix& map : layer) {
            for (std::size_t i = 0; i < map.rows(); ++i) {
                double sum = 0.0;
                for (std::size_t j = 0; j < map.cols(); ++j) sum += map(i, j);
                CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
            }
        }
    }
    const Dump same = random_dump(7, 2, 4, 6, 8, false);
    CHECK(dump.maps[1][2] == same.maps[1][2]);
    const Dump causal = random_dump(7, 1, 2, 5, 8, true);
    CHECK(causal.maps[0][0](0, 3) == 0.0);
}

TEST_CASE("dump write/read round-trips f32 values exactly") {
    TempDir dir("shd_test_dump_roundtrip");
    const Dump dump = random_dump(13, 2, 3, 5, 6, false);
    write_dump(dir.path, dump);
    const Dump loaded = read_dump(dir.path);

    CHECK(loaded.manifest.layers == 2);
    CHECK(loaded.manifest.heads == 3);
    CHECK(loaded.manifest.seq_len == 5);
    CHECK(loaded.manifest.d_model == 6);
    CHECK(loaded.manifest.dtype == "f32");
    CHECK(loaded.manifest.byte_order == "little");

    for (std::size_t l = 0; l < 2; ++l) {
        for (std::size_t h = 0; h < 3; ++h) {
            for (std::size_t i = 0; i < dump.maps[l][h].size(); ++i) {
                const auto as_f32 =
                    static_cast<double>(static_cast<float>(dump.maps[l][h].data()[i]));
                CHECK(loaded.maps[l][h].data()[i] == as_f32);
            }
        }
    }

    // A second write of the loaded dump is byte-identical: f64 -> f32 is
    // exact once values already came from f32.
    TempDir dir2("shd_test_dump_roundtrip2");
    write_dump(dir2.path, loaded);
    for (const char* name : {"layer0_maps.bin", "layer1_values.bin"}) {
        std::ifstream a(dir.path / name, std::ios::binary);
        std::ifstream b(dir2.path / name, std::ios::binary);
        const std::string bytes_a((std::istreambuf_iterator<char>(a)),
                                  std::istreambuf_iterator<char>());
        const std::string bytes_b((std::istreambuf_iterator<char>(b)),
                                  std::istreambuf_iterator<char>());
        CHECK(bytes_a == bytes_b);
    }
}

TEST_CASE("read_dump validates the manifest strictly") {
    TempDir dir("shd_test_dump_validate");
    const Dump dump = random_dump(17, 1, 2, 4, 4, false);

    SUBCASE("missing directory") {
        CHECK_THROWS_AS(read_dump(dir.path / "nope"), ConfigError);
    }
    SUBCASE("missing referenced file") {
        write_dump(dir.path, dump);
        fs::remove(dir.path / "layer0_values.bin");
        CHECK_THROWS_AS(read_dump(dir.path), ConfigError);
    }
    SUBCASE("wrong byte length") {
        write_dump(dir.path, dump);
        std::ofstream f(dir.path / "layer0_maps.bin", std::ios::binary | std::ios::app);
        f << "XX";
        f.close();
        CHECK_THROWS_AS(read_dump(dir.path), ConfigError);
    }
    SUBCASE("corrupt manifest json") {
        write_dump(dir.path, dump);
        std::ofstream f(dir.path / "manifest.json", std::ios::trunc);
        f << "{ not json";
        f.close();
        CHECK_THROWS_AS(read_dump(dir.path), ConfigError);
    }
    SUBCASE("unsupported dtype") {
        Dump bad = dump;
        bad.manifest.dtype = "f64";
        write_dump(dir.path, bad);
        CHECK_THROWS_AS(read_dump(dir.path), ConfigError);
    }
}
