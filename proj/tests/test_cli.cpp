// SPDX-License-Identifier: Apache-2.0
//
// End-to-end checks of the command line binary (exit codes, emitted files,
// determinism). Each run shells out to the real executable.

#include <doctest.h>

#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "ptum/util.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct CliResult {
    int exit_code;
};

CliResult run_cli(const std::string& args) {
    const std::string cmd = std::string(PTUM_CLI_PATH) + " " + args + " >/dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return {WEXITSTATUS(status)};
}

class TempDir {
public:
    TempDir() {
        dir_ = fs::temp_directory_path() /
               ("ptum_cli_" + std::to_string(::getpid()) + "_" + std::to_string(counter_++));
        fs::create_directories(dir_);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(dir_, ec);
    }
    const fs::path& path() const { return dir_; }

private:
    fs::path dir_;
    static inline int counter_ = 0;
};

json small_config() {
    return json{
        {"seed", 11},
        {"data",
         {{"synthetic",
           {{"n_groups", 3},
            {"n_topics", 6},
            {"vocab_size", 240},
            {"words_per_topic", 30},
            {"min_behaviors", 4},
            {"max_behaviors", 7},
            {"min_title_len", 3},
            {"max_title_len", 5},
            {"n_pretrain_users", 40},
            {"n_demo_users", 120},
            {"n_ctr_users", 60},
            {"impressions_per_ctr_user", 3},
            {"seed", 21}}}}},
        {"model",
         {{"behavior_encoder",
           {{"variant", "attn_pool"}, {"word_dim", 8}, {"n_heads", 2}, {"head_dim", 4},
            {"attn_query_dim", 8}}},
          {"user_encoder",
           {{"variant", "attn_pool"}, {"n_heads", 2}, {"head_dim", 4}, {"attn_query_dim", 8},
            {"max_positions", 32}}}}},
        {"pretrain", {{"epochs", 1}, {"batch_size", 16}, {"negatives", 2}}},
        {"finetune", {{"epochs", 2}, {"batch_size", 16}}}};
}

fs::path write_config(const TempDir& dir, const json& j) {
    fs::path p = dir.path() / "config.json";
    std::ofstream(p) << j.dump(2);
    return p;
}

std::string slurp(const fs::path& p) { return ptum::read_file(p); }

}  // namespace

TEST_CASE("cli exit codes: no args and unknown flags are usage errors") {
    CHECK(run_cli("").exit_code == 2);
    CHECK(run_cli("--definitely-not-a-flag").exit_code == 2);
    CHECK(run_cli("pretrain").exit_code == 2);  // missing required flags
    CHECK(run_cli("--help").exit_code == 0);
}

TEST_CASE("gen-data writes the dataset files deterministically") {
    TempDir dir;
    fs::path cfg = write_config(dir, small_config());
    fs::path out1 = dir.path() / "a";
    fs::path out2 = dir.path() / "b";
    REQUIRE(run_cli("gen-data --config " + cfg.string() + " --out " + out1.string()).exit_code == 0);
    REQUIRE(run_cli("gen-data --config " + cfg.string() + " --out " + out2.string()).exit_code == 0);

    for (const char* name : {"pretrain.jsonl", "demo.jsonl", "ctr.jsonl", "ctr_users.jsonl",
                             "vocab.txt", "world_meta.json"}) {
        INFO(name);
        REQUIRE(fs::exists(out1 / name));
        CHECK(slurp(out1 / name) == slurp(out2 / name));
    }

    json meta = json::parse(slurp(out1 / "world_meta.json"));
    auto lines_in = [&](const char* name) {
        std::istringstream in(slurp(out1 / name));
        std::string line;
        std::size_t n = 0;
        while (std::getline(in, line)) ++n;
        return n;
    };
    CHECK(meta["counts"]["pretrain_lines"] == lines_in("pretrain.jsonl"));
    CHECK(meta["counts"]["demo_lines"] == lines_in("demo.jsonl"));
    CHECK(meta["counts"]["ctr_lines"] == lines_in("ctr.jsonl"));
    CHECK(meta["counts"]["pretrain_users"] == 40);
}

TEST_CASE("gen-data with one group emits a single label value") {
    TempDir dir;
    json cfg_json = small_config();
    cfg_json["data"]["synthetic"]["n_groups"] = 1;
    cfg_json["data"]["synthetic"]["n_topics"] = 6;
    fs::path cfg = write_config(dir, cfg_json);
    fs::path out = dir.path() / "world";
    REQUIRE(run_cli("gen-data --config " + cfg.string() + " --out " + out.string()).exit_code == 0);
    std::istringstream in(slurp(out / "demo.jsonl"));
    std::string line;
    while (std::getline(in, line)) {
        json j = json::parse(line);
        CHECK(j["labels"]["group"] == 0);
    }
}

TEST_CASE("full pipeline: pretrain, finetune, evaluate") {
    TempDir dir;
    fs::path cfg = write_config(dir, small_config());
    fs::path ckpt = dir.path() / "model.ptum";

    REQUIRE(run_cli("pretrain --config " + cfg.string() + " --out " + ckpt.string()).exit_code == 0);
    CHECK(fs::exists(ckpt));
    CHECK(fs::exists(dir.path() / "model_loss.csv"));
    {
        std::istringstream in(slurp(dir.path() / "model_loss.csv"));
        std::string header;
        std::getline(in, header);
        CHECK(header == "epoch,step,loss_total,loss_mbp,loss_nbp");
    }

    SUBCASE("usage errors around checkpoints") {
        CHECK(run_cli("finetune --config " + cfg.string() +
                      " --task demo --regime scratch --fraction 0.5 --seed 1 --checkpoint " +
                      ckpt.string() + " --out " + dir.path().string())
                  .exit_code == 2);
        CHECK(run_cli("finetune --config " + cfg.string() +
                      " --task demo --regime frozen --fraction 0.5 --seed 1 --out " +
                      dir.path().string())
                  .exit_code == 2);
        CHECK(run_cli("finetune --config " + cfg.string() +
                      " --task juggling --regime scratch --fraction 0.5 --seed 1 --out " +
                      dir.path().string())
                  .exit_code == 2);
    }

    SUBCASE("finetune emits a results row and a loadable checkpoint") {
        fs::path out = dir.path() / "runs";
        REQUIRE(run_cli("finetune --config " + cfg.string() +
                        " --task demo --regime frozen --fraction 0.5 --seed 1 --checkpoint " +
                        ckpt.string() + " --out " + out.string())
                    .exit_code == 0);
        REQUIRE(fs::exists(out / "results.csv"));
        std::istringstream in(slurp(out / "results.csv"));
        std::string header, row;
        std::getline(in, header);
        std::getline(in, row);
        CHECK(header.find("task,regime,label_fraction,seed") == 0);
        CHECK(row.find("demo,frozen,0.5,1") == 0);

        fs::path finetuned = out / "finetuned_demo_frozen_f0.5_s1.ptum";
        REQUIRE(fs::exists(finetuned));

        // evaluate twice: identical appended rows
        fs::path results = dir.path() / "eval.csv";
        REQUIRE(run_cli("evaluate --checkpoint " + finetuned.string() +
                        " --task demo --split test --out " + results.string())
                    .exit_code == 0);
        REQUIRE(run_cli("evaluate --checkpoint " + finetuned.string() +
                        " --task demo --split test --out " + results.string())
                    .exit_code == 0);
        std::istringstream rows(slurp(results));
        std::string h, r1, r2;
        std::getline(rows, h);
        std::getline(rows, r1);
        std::getline(rows, r2);
        CHECK(!r1.empty());
        CHECK(r1 == r2);

        // wrong task against the finetuned checkpoint is a usage error
        CHECK(run_cli("evaluate --checkpoint " + finetuned.string() +
                      " --task ctr --split test")
                  .exit_code == 2);
    }

    SUBCASE("pretrain is reproducible byte for byte") {
        fs::path ckpt2 = dir.path() / "model2.ptum";
        REQUIRE(run_cli("pretrain --config " + cfg.string() + " --out " + ckpt2.string())
                    .exit_code == 0);
        CHECK(slurp(dir.path() / "model_loss.csv") == slurp(dir.path() / "model2_loss.csv"));
        CHECK(slurp(ckpt) == slurp(ckpt2));
    }
}

TEST_CASE("sweep emits one table row per value, regime and seed") {
    TempDir dir;
    json cfg_json = small_config();
    cfg_json["seeds"] = {1, 2};
    cfg_json["tasks"] = {"demo"};
    cfg_json["label_fractions"] = {0.5};
    fs::path cfg = write_config(dir, cfg_json);
    fs::path out = dir.path() / "sweep";
    REQUIRE(run_cli("sweep --config " + cfg.string() + " --axis lambda --values 0,1 --out " +
                    out.string())
                .exit_code == 0);
    std::istringstream in(slurp(out / "sweep.csv"));
    std::string line;
    std::getline(in, line);  // header
    CHECK(line.find("axis,value,task,regime") == 0);
    std::size_t rows = 0;
    std::size_t with_hash = 0;
    while (std::getline(in, line)) {
        ++rows;
        with_hash += line.find(',') != std::string::npos && line.size() > 16;
    }
    CHECK(rows == 8);  // 2 values x 2 regimes x 2 seeds
    CHECK(with_hash == rows);
    CHECK(fs::exists(out / "loss_lambda_0.csv"));
    CHECK(fs::exists(out / "loss_lambda_1.csv"));

    CHECK(run_cli("sweep --config " + cfg.string() + " --axis K --values 2.5 --out " +
                  out.string())
              .exit_code == 2);
}
