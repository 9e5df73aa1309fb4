#include <doctest.h>

#include <cstring>
#include <filesystem>
#include <sstream>

#include "vdrive/rng.hpp"
#include "vdrive/tensor.hpp"
#include "vdrive/vdtn.hpp"

using namespace vdrive;

TEST_SUITE_BEGIN("tensor");

TEST_CASE("tensor dims/data consistency enforced") {
    CHECK_NOTHROW(Tensor({2, 3}, std::vector<float>(6, 1.0f)));
    CHECK_THROWS_AS(Tensor({2, 3}, std::vector<float>(5, 1.0f)), ValidationError);
    CHECK_THROWS_AS(Tensor({0, 3}), ValidationError);
    CHECK_THROWS_AS(Tensor(std::vector<std::size_t>{}), ValidationError);
}

TEST_CASE("vdtn header layout is exact") {
    Tensor t({2, 3}, std::vector<float>{1, 2, 3, 4, 5, 6});
    std::ostringstream os(std::ios::binary);
    write_vdtn(os, t);
    std::string bytes = os.str();
    REQUIRE(bytes.size() == 8 + 2 * 8 + 6 * 4);
    CHECK(std::memcmp(bytes.data(), "VDTN", 4) == 0);
    CHECK(bytes[4] == 1);  // version
    CHECK(bytes[5] == 0);  // dtype f32
    CHECK(bytes[6] == 2);  // rank
    CHECK(bytes[7] == 0);
    // first extent little-endian u64 == 2
    CHECK(static_cast<unsigned char>(bytes[8]) == 2);
    for (int i = 9; i < 16; ++i) CHECK(bytes[i] == 0);
}

TEST_CASE("vdtn round-trip is bit-exact on random tensors") {
    Rng rng(1234);
    for (int trial = 0; trial < 100; ++trial) {
        std::size_t rank = 1 + rng.uniform_index(4);
        std::vector<std::size_t> dims(rank);
        for (auto& d : dims) d = 1 + rng.uniform_index(5);
        if (trial == 0) dims = {1};     // rank 1, extent 1
        if (trial == 1) dims = {1, 1};  // all-unit extents
        Tensor t(dims);
        for (auto& v : t.data) {
            // exercise odd payloads: subnormals, negative zero, exact powers
            double u = rng.uniform(-10.0, 10.0);
            if (rng.bernoulli(0.1)) u = 0.0;
            if (rng.bernoulli(0.05)) u = -0.0;
            if (rng.bernoulli(0.05)) u = 1e-42;
            v = static_cast<float>(u);
        }
        std::ostringstream os(std::ios::binary);
        write_vdtn(os, t);
        std::istringstream is(os.str(), std::ios::binary);
        Tensor back = read_vdtn(is, "roundtrip");
        REQUIRE(back.dims == t.dims);
        REQUIRE(back.data.size() == t.data.size());
        CHECK(std::memcmp(back.data.data(), t.data.data(), t.data.size() * 4) == 0);
    }
}

TEST_CASE("vdtn rejects malformed input") {
    std::istringstream bad_magic(std::string("XXXX\x01\x00\x01\x00", 8));
    CHECK_THROWS_AS(read_vdtn(bad_magic, "t"), ValidationError);
    std::istringstream bad_version(std::string("VDTN\x02\x00\x01\x00", 8));
    CHECK_THROWS_AS(read_vdtn(bad_version, "t"), ValidationError);
    std::istringstream truncated(std::string("VDTN\x01\x00\x01\x00", 8));
    CHECK_THROWS_AS(read_vdtn(truncated, "t"), ValidationError);
}

TEST_CASE("vdtn file save/load") {
    namespace fs = std::filesystem;
    auto dir = fs::temp_directory_path() / "vdtn_test";
    fs::create_directories(dir);
    Tensor t({3}, std::vector<float>{-1.5f, 0.0f, 2.25f});
    save_vdtn((dir / "t.vdtn").string(), t);
    Tensor back = load_vdtn((dir / "t.vdtn").string());
    CHECK(back.dims == t.dims);
    CHECK(back.data == t.data);
    CHECK_THROWS_AS(load_vdtn((dir / "missing.vdtn").string()), ValidationError);
}

TEST_SUITE_END();
