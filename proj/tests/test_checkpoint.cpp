// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <unistd.h>

#include <filesystem>
#include <random>

#include "ptum/checkpoint.hpp"
#include "ptum/util.hpp"

using namespace ptum;
namespace fs = std::filesystem;

namespace {

ParameterRegistry sample_registry(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    ParameterRegistry reg;
    reg.add("word_emb", {5, 3}, init_embedding(15, rng));
    reg.add("encoder.w", {3, 4}, init_glorot(3, 4, rng));
    reg.add("encoder.b", {4}, {0, 0, 0, 0});
    return reg;
}

}  // namespace

TEST_CASE("checkpoint serialize/deserialize round trip is byte-identical") {
    ParameterRegistry reg = sample_registry(1);
    ModelCheckpoint ckpt = ModelCheckpoint::from_registry(reg, R"({"profile":"desk"})");
    const std::string bytes = ckpt.serialize();
    ModelCheckpoint back = ModelCheckpoint::deserialize(bytes);
    CHECK(back.serialize() == bytes);
    CHECK(back.config_json == ckpt.config_json);
    REQUIRE(back.tensors.size() == 3);
    CHECK(back.tensors[0].name == "word_emb");
    CHECK(back.tensors[0].data == ckpt.tensors[0].data);
}

TEST_CASE("checkpoint save/load through files preserves bytes") {
    ParameterRegistry reg = sample_registry(2);
    ModelCheckpoint ckpt = ModelCheckpoint::from_registry(reg, "{}");
    fs::path p = fs::temp_directory_path() / ("ptum_ckpt_" + std::to_string(::getpid()) + ".ptum");
    ckpt.save(p);
    ModelCheckpoint loaded = ModelCheckpoint::load(p);
    CHECK(loaded.serialize() == read_file(p));

    // load -> save -> identical file
    fs::path q = p;
    q += ".again";
    loaded.save(q);
    CHECK(read_file(p) == read_file(q));
    fs::remove(p);
    fs::remove(q);
}

TEST_CASE("checkpoint load restores parameter values exactly") {
    ParameterRegistry a = sample_registry(3);
    ModelCheckpoint ckpt = ModelCheckpoint::from_registry(a, "{}");
    ParameterRegistry b = sample_registry(4);  // different init
    ckpt.load_into(b);
    for (const Parameter* pa : a.all())
        CHECK(b.at(pa->name()).tensor().data() == pa->tensor().data());
}

TEST_CASE("corruption and mismatches are rejected") {
    ParameterRegistry reg = sample_registry(5);
    ModelCheckpoint ckpt = ModelCheckpoint::from_registry(reg, "{}");
    std::string bytes = ckpt.serialize();

    SUBCASE("flipped payload byte fails the checksum") {
        bytes[bytes.size() / 2] ^= 0x1;
        CHECK_THROWS_WITH_AS(ModelCheckpoint::deserialize(bytes),
                             "checkpoint: checksum mismatch", std::runtime_error);
    }
    SUBCASE("bad magic") {
        bytes[0] = 'X';
        CHECK_THROWS_AS(ModelCheckpoint::deserialize(bytes), std::runtime_error);
    }
    SUBCASE("truncation") {
        CHECK_THROWS_AS(ModelCheckpoint::deserialize(bytes.substr(0, bytes.size() - 9)),
                        std::runtime_error);
    }
    SUBCASE("shape mismatch on load") {
        ParameterRegistry other;
        other.add("word_emb", {5, 2}, std::vector<double>(10, 0.0));
        other.add("encoder.w", {3, 4}, std::vector<double>(12, 0.0));
        other.add("encoder.b", {4}, std::vector<double>(4, 0.0));
        CHECK_THROWS_AS(ckpt.load_into(other), std::runtime_error);
    }
}

TEST_CASE("f32 dtype narrows storage and round trips") {
    ParameterRegistry reg = sample_registry(6);
    ModelCheckpoint ckpt = ModelCheckpoint::from_registry(reg, "{}", DType::f32);
    const std::string bytes = ckpt.serialize();
    ModelCheckpoint back = ModelCheckpoint::deserialize(bytes);
    CHECK(back.serialize() == bytes);
    for (std::size_t i = 0; i < back.tensors[0].data.size(); ++i) {
        const double original = reg.at("word_emb").tensor().data()[i];
        CHECK(back.tensors[0].data[i] ==
              static_cast<double>(static_cast<float>(original)));
    }
}
