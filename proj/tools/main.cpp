// SPDX-License-Identifier: Apache-2.0
//
// ptum command line: gen-data, build-vocab, pretrain, finetune, evaluate,
// sweep. Exit codes: 0 success, 2 usage error, 1 runtime error.

#include <algorithm>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "ptum/checkpoint.hpp"
#include "ptum/config.hpp"
#include "ptum/finetune.hpp"
#include "ptum/metrics.hpp"
#include "ptum/pretrain.hpp"
#include "ptum/synthetic.hpp"
#include "ptum/util.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace ptum;

namespace {

// Command-level misuse (bad flag combinations, wrong task names) distinct
// from runtime failures.
struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

constexpr const char* kResultsHeader =
    "task,regime,label_fraction,seed,accuracy,macro_f,auc,ap,n_test,best_epoch,config_hash,"
    "build_id";

std::string metric_or_empty(const MetricsReport& report, const char* name) {
    auto it = report.metrics.find(name);
    return it == report.metrics.end() ? "" : format_double(it->second);
}

std::string results_row(const std::string& task, const std::string& regime, double fraction,
                        std::uint64_t seed, const MetricsReport& report, int best_epoch,
                        const std::string& config_hash) {
    std::ostringstream row;
    row << task << ',' << regime << ',' << format_double(fraction) << ',' << seed << ','
        << metric_or_empty(report, "accuracy") << ',' << metric_or_empty(report, "macro_f") << ','
        << metric_or_empty(report, "auc") << ',' << metric_or_empty(report, "ap") << ','
        << report.n_examples << ',' << best_epoch << ',' << config_hash << ',' << build_id();
    return row.str();
}

json report_json(const std::string& task, const std::string& regime, double fraction,
                 std::uint64_t seed, const MetricsReport& report) {
    json m(json::value_t::object);
    for (const auto& [k, v] : report.metrics) m[k] = v;
    return json{{"task", task},
                {"regime", regime},
                {"label_fraction", fraction},
                {"seed", seed},
                {"metrics", m},
                {"n_examples", report.n_examples}};
}

std::uint64_t scratch_init_seed(std::uint64_t run_seed) { return mix64(run_seed ^ 0x5C4A7C8ULL); }

json checkpoint_blob(const ExperimentConfig& cfg, const json& meta) {
    json blob = cfg.to_json();
    blob["checkpoint"] = meta;
    return blob;
}

struct LoadedCheckpoint {
    ModelCheckpoint ckpt;
    ExperimentConfig config;
    json meta;
};

LoadedCheckpoint open_checkpoint(const fs::path& path) {
    LoadedCheckpoint out;
    out.ckpt = ModelCheckpoint::load(path);
    json blob = json::parse(out.ckpt.config_json);
    if (blob.contains("checkpoint")) {
        out.meta = blob.at("checkpoint");
        blob.erase("checkpoint");
    }
    out.config = ExperimentConfig::from_json(blob);
    return out;
}

// Rebuilds the user model a checkpoint was saved from and verifies the
// vocabulary it is being used with has the same shape.
UserModel model_from_checkpoint(const LoadedCheckpoint& loaded, const Vocabulary& vocab) {
    const auto rows = loaded.meta.at("vocab_rows").get<std::size_t>();
    if (rows != vocab.table_rows())
        throw std::runtime_error(
            "checkpoint vocabulary has " + std::to_string(rows) + " rows but the configured data has " +
            std::to_string(vocab.table_rows()) + "; regenerate data or pass the matching config");
    UserModel model(resolved_model(loaded.config, rows), /*init_seed=*/0);
    ModelCheckpoint weights = loaded.ckpt;
    // Keep only user-model tensors; head tensors load separately.
    std::erase_if(weights.tensors, [&](const NamedTensor& t) {
        return !model.params().contains(t.name);
    });
    weights.load_into(model.params());
    return model;
}

ModelCheckpoint merge_registries(const std::vector<const ParameterRegistry*>& registries,
                                 std::string config_json) {
    ModelCheckpoint ckpt;
    ckpt.config_json = std::move(config_json);
    for (const ParameterRegistry* reg : registries) {
        ModelCheckpoint part = ModelCheckpoint::from_registry(*reg, "");
        for (NamedTensor& t : part.tensors) ckpt.tensors.push_back(std::move(t));
    }
    return ckpt;
}

// ---- gen-data --------------------------------------------------------------

std::size_t line_count(const std::string& text) {
    return static_cast<std::size_t>(std::count(text.begin(), text.end(), '\n'));
}

void cmd_gen_data(const std::string& config_path, const std::string& out_dir) {
    ExperimentConfig cfg = ExperimentConfig::load_file(config_path);
    if (!cfg.data.synthetic) throw UsageError("gen-data: config has no data.synthetic section");
    SyntheticWorld world = generate_synthetic(*cfg.data.synthetic);

    const std::string pretrain_text = behavior_jsonl(world.pretrain_users, "");
    const std::string demo_text = behavior_jsonl(world.demo_users, cfg.finetune.demo_label_key);
    const std::string ctr_users_text = behavior_jsonl(world.ctr_users, "");
    const std::string ctr_text = ctr_jsonl(world.impressions);

    Vocabulary vocab;
    {
        std::istringstream in(pretrain_text);
        vocab = Vocabulary::build(count_tokens(in, "<pretrain>"), cfg.data.min_frequency);
    }

    const fs::path dir(out_dir);
    fs::create_directories(dir);
    atomic_write_file(dir / "pretrain.jsonl", pretrain_text);
    atomic_write_file(dir / "demo.jsonl", demo_text);
    atomic_write_file(dir / "ctr_users.jsonl", ctr_users_text);
    atomic_write_file(dir / "ctr.jsonl", ctr_text);
    {
        std::ostringstream vocab_text;
        for (std::size_t i = 0; i < vocab.size(); ++i)
            vocab_text << vocab.token_of(static_cast<int>(i) + 2) << '\n';
        atomic_write_file(dir / "vocab.txt", vocab_text.str());
    }

    json meta;
    meta["seed"] = cfg.data.synthetic->seed;
    meta["config_hash"] = cfg.config_hash();
    meta["build_id"] = build_id();
    std::size_t clicks = 0;
    for (const auto& imp : world.impressions) clicks += imp.click;
    json label_hist(json::value_t::object);
    for (const auto& u : world.demo_users) {
        const std::string key = std::to_string(u.group);
        label_hist[key] = label_hist.value(key, 0) + 1;
    }
    meta["counts"] = {{"pretrain_users", world.pretrain_users.size()},
                      {"demo_users", world.demo_users.size()},
                      {"ctr_users", world.ctr_users.size()},
                      {"impressions", world.impressions.size()},
                      {"vocab_tokens", vocab.size()},
                      {"pretrain_lines", line_count(pretrain_text)},
                      {"demo_lines", line_count(demo_text)},
                      {"ctr_users_lines", line_count(ctr_users_text)},
                      {"ctr_lines", line_count(ctr_text)}};
    meta["click_rate"] = world.impressions.empty()
                             ? 0.0
                             : static_cast<double>(clicks) / world.impressions.size();
    meta["demo_label_histogram"] = label_hist;
    atomic_write_file(dir / "world_meta.json", meta.dump(2) + "\n");
    std::cout << "wrote " << (dir / "world_meta.json").string() << '\n';
}

// ---- build-vocab -----------------------------------------------------------

void cmd_build_vocab(const std::string& config_path, const std::string& out_path,
                     std::vector<std::string> inputs) {
    ExperimentConfig cfg = ExperimentConfig::load_file(config_path);
    if (inputs.empty()) {
        if (cfg.data.paths.pretrain.empty())
            throw UsageError("build-vocab: no input files and data.paths.pretrain unset");
        inputs.push_back(cfg.data.paths.pretrain);
    }
    std::vector<fs::path> paths(inputs.begin(), inputs.end());
    Vocabulary vocab = build_vocab(paths, cfg.data.min_frequency);
    std::ostringstream text;
    for (std::size_t i = 0; i < vocab.size(); ++i)
        text << vocab.token_of(static_cast<int>(i) + 2) << '\n';
    atomic_write_file(out_path, text.str());
    std::cout << "vocabulary: " << vocab.size() << " tokens (min_frequency "
              << cfg.data.min_frequency << ")\n";
}

// ---- pretrain ---------------------------------------------------------------

void cmd_pretrain(const std::string& config_path, const std::string& out_path,
                  std::optional<std::uint64_t> seed_override) {
    ExperimentConfig cfg = ExperimentConfig::load_file(config_path);
    if (seed_override) {
        cfg.seed = *seed_override;
        cfg.pretrain.seed = *seed_override;
    }
    DataBundle data = load_data(cfg, {.pretrain = true});
    UserModel model(resolved_model(cfg, data.vocab.table_rows()), mix64(cfg.seed ^ 0x12A7ULL));
    PretrainResult result = pretrain(model, data.pretrain, cfg.pretrain);

    const fs::path ckpt_path(out_path);
    json meta = {{"kind", "pretrained"}, {"vocab_rows", data.vocab.table_rows()}};
    ModelCheckpoint ckpt = ModelCheckpoint::from_registry(
        model.params(), checkpoint_blob(cfg, meta).dump());
    ckpt.save(ckpt_path);

    fs::path csv_path = ckpt_path;
    csv_path.replace_extension();
    csv_path += "_loss.csv";
    atomic_write_file(csv_path, result.loss_csv());

    std::cout << "pretrained on " << data.pretrain.size() << " users, "
              << cfg.pretrain.epochs << " epochs\n";
    for (std::size_t e = 0; e < result.epoch_mean_total.size(); ++e)
        std::cout << "epoch " << e << " mean loss " << format_double(result.epoch_mean_total[e])
                  << '\n';
    std::cout << "skipped user-epochs: mbp " << result.skipped_mbp << ", nbp "
              << result.skipped_nbp << '\n'
              << "checkpoint " << ckpt_path.string() << '\n';
}

// ---- finetune ---------------------------------------------------------------

void append_result(const fs::path& csv, const std::string& row) {
    append_csv_row(csv, kResultsHeader, row);
}

void cmd_finetune(const std::string& config_path, const std::string& task,
                  const std::string& regime_str, double fraction, std::uint64_t seed,
                  const std::string& checkpoint_path, const std::string& out_dir) {
    if (task != "demo" && task != "ctr") throw UsageError("finetune: task must be demo or ctr");
    const Regime regime = [&] {
        try {
            return regime_from_string(regime_str);
        } catch (const std::invalid_argument& e) {
            throw UsageError(e.what());
        }
    }();
    if (regime == Regime::scratch && !checkpoint_path.empty())
        throw UsageError("finetune: scratch regime forbids --checkpoint");
    if (regime != Regime::scratch && checkpoint_path.empty())
        throw UsageError("finetune: regime " + regime_str + " requires --checkpoint");
    if (fraction <= 0.0 || fraction > 1.0)
        throw UsageError("finetune: --fraction must lie in (0, 1]");

    ExperimentConfig cfg = ExperimentConfig::load_file(config_path);
    DataBundle data = load_data(cfg, {.demo = task == "demo", .ctr = task == "ctr"});

    std::optional<LoadedCheckpoint> loaded;
    std::optional<UserModel> model;
    if (regime == Regime::scratch) {
        model.emplace(resolved_model(cfg, data.vocab.table_rows()), scratch_init_seed(seed));
    } else {
        loaded = open_checkpoint(checkpoint_path);
        model.emplace(model_from_checkpoint(*loaded, data.vocab));
    }

    const fs::path dir(out_dir);
    fs::create_directories(dir);
    const std::string hash = cfg.config_hash();
    std::ostringstream tag;
    tag << "finetuned_" << task << '_' << regime_str << "_f" << format_double(fraction) << "_s"
        << seed << ".ptum";

    MetricsReport report;
    int best_epoch = -1;
    json meta = {{"kind", "finetuned"},      {"task", task},
                 {"regime", regime_str},     {"fraction", fraction},
                 {"run_seed", seed},         {"vocab_rows", data.vocab.table_rows()}};
    if (task == "demo") {
        ClassifierRun run = train_classifier(*model, data.demo, cfg.finetune.demo_label_key,
                                             regime, fraction, cfg.finetune, seed);
        report = run.report;
        best_epoch = run.best_epoch;
        if (run.missing_train_classes)
            std::cerr << "warning: " << run.missing_train_classes
                      << " class(es) absent from the train split\n";
        meta["n_classes"] = run.head->n_classes();
        ModelCheckpoint ckpt = merge_registries({&model->params(), &run.head->params()},
                                                checkpoint_blob(cfg, meta).dump());
        ckpt.save(dir / tag.str());
    } else {
        CtrRun run = train_ctr(*model, data.ctr_users, data.impressions, regime, fraction,
                               cfg.finetune, seed);
        report = run.report;
        best_epoch = run.best_epoch;
        ModelCheckpoint ckpt = merge_registries({&model->params(), &run.head->params()},
                                                checkpoint_blob(cfg, meta).dump());
        ckpt.save(dir / tag.str());
    }
    append_result(dir / "results.csv",
                  results_row(task, regime_str, fraction, seed, report, best_epoch, hash));
    std::cout << report_json(task, regime_str, fraction, seed, report).dump() << '\n';
}

// ---- evaluate ---------------------------------------------------------------

void cmd_evaluate(const std::string& checkpoint_path, const std::string& task,
                  const std::string& split, const std::string& config_path,
                  const std::string& out_csv) {
    if (task != "demo" && task != "ctr") throw UsageError("evaluate: task must be demo or ctr");
    if (split != "train" && split != "val" && split != "test")
        throw UsageError("evaluate: split must be train, val or test");

    LoadedCheckpoint loaded = open_checkpoint(checkpoint_path);
    if (loaded.meta.value("kind", "") != "finetuned")
        throw UsageError("evaluate: checkpoint does not contain a finetuned model");
    if (loaded.meta.value("task", "") != task)
        throw UsageError("evaluate: checkpoint was finetuned for task " +
                         loaded.meta.value("task", "?"));

    ExperimentConfig cfg =
        config_path.empty() ? loaded.config : ExperimentConfig::load_file(config_path);
    DataBundle data = load_data(cfg, {.demo = task == "demo", .ctr = task == "ctr"});
    UserModel model = model_from_checkpoint(loaded, data.vocab);

    const auto run_seed = loaded.meta.at("run_seed").get<std::uint64_t>();
    const auto fraction = loaded.meta.at("fraction").get<double>();
    const std::string regime = loaded.meta.value("regime", "?");

    MetricsReport report;
    if (task == "demo") {
        ClassificationHead head(model.behavior_dim(), loaded.meta.at("n_classes").get<int>(),
                                /*init_seed=*/0);
        ModelCheckpoint weights = loaded.ckpt;
        std::erase_if(weights.tensors,
                      [&](const NamedTensor& t) { return !head.params().contains(t.name); });
        weights.load_into(head.params());

        std::vector<int> labels;
        for (const auto& rec : data.demo)
            labels.push_back(rec.labels.at(cfg.finetune.demo_label_key));
        SplitIndices idx = stratified_split(labels, run_seed);
        const auto& chosen = split == "train" ? idx.train : split == "val" ? idx.val : idx.test;
        std::vector<UserRecord> subset;
        for (std::size_t i : chosen) subset.push_back(data.demo[i]);
        report = evaluate_classifier(model, head, subset, cfg.finetune.demo_label_key);
    } else {
        CtrHead head(model.config(), /*init_seed=*/0);
        ModelCheckpoint weights = loaded.ckpt;
        std::erase_if(weights.tensors,
                      [&](const NamedTensor& t) { return !head.params().contains(t.name); });
        weights.load_into(head.params());

        std::vector<int> clicks;
        for (const auto& imp : data.impressions) clicks.push_back(imp.click);
        SplitIndices idx = stratified_split(clicks, run_seed);
        const auto& chosen = split == "train" ? idx.train : split == "val" ? idx.val : idx.test;
        std::vector<CtrImpression> subset;
        for (std::size_t i : chosen) subset.push_back(data.impressions[i]);
        report = evaluate_ctr(model, head, data.ctr_users, subset);
    }
    if (!out_csv.empty())
        append_result(out_csv, results_row(task, regime, fraction, run_seed, report, -1,
                                           cfg.config_hash()));
    std::cout << report_json(task, regime, fraction, run_seed, report).dump() << '\n';
}

// ---- sweep ------------------------------------------------------------------

constexpr const char* kSweepHeader =
    "axis,value,task,regime,label_fraction,seed,accuracy,macro_f,auc,ap,n_test,nbp_skipped,"
    "config_hash,build_id";

void cmd_sweep(const std::string& config_path, const std::string& axis,
               const std::vector<double>& values, const std::string& out_dir) {
    if (axis != "lambda" && axis != "K") throw UsageError("sweep: axis must be lambda or K");
    if (values.empty()) throw UsageError("sweep: --values must be non-empty");
    ExperimentConfig base = ExperimentConfig::load_file(config_path);
    const fs::path dir(out_dir);
    fs::create_directories(dir);

    const bool want_demo = std::count(base.tasks.begin(), base.tasks.end(), "demo") > 0;
    const bool want_ctr = std::count(base.tasks.begin(), base.tasks.end(), "ctr") > 0;
    DataBundle data = load_data(base, {.pretrain = true, .demo = want_demo, .ctr = want_ctr});
    const double fraction = base.label_fractions.front();

    for (double value : values) {
        ExperimentConfig cfg = base;
        if (axis == "lambda") {
            if (value < 0.0) throw UsageError("sweep: lambda must be non-negative");
            cfg.pretrain.lambda = value;
        } else {
            if (value < 1.0 || value != std::floor(value))
                throw UsageError("sweep: K must be a positive integer");
            cfg.pretrain.future_k = static_cast<int>(value);
        }
        const std::string hash = cfg.config_hash();

        UserModel model(resolved_model(cfg, data.vocab.table_rows()), mix64(cfg.seed ^ 0x12A7ULL));
        PretrainResult pre = pretrain(model, data.pretrain, cfg.pretrain);
        std::ostringstream loss_name;
        loss_name << "loss_" << axis << '_' << format_double(value) << ".csv";
        atomic_write_file(dir / loss_name.str(), pre.loss_csv());
        std::cout << axis << '=' << format_double(value) << ": pretrained, nbp-skipped "
                  << pre.skipped_nbp << " user-epochs\n";

        ModelCheckpoint snapshot = ModelCheckpoint::from_registry(model.params(), "");
        for (Regime regime : {Regime::frozen, Regime::finetune}) {
            for (std::uint64_t seed : cfg.seeds) {
                UserModel run_model(resolved_model(cfg, data.vocab.table_rows()), 0);
                snapshot.load_into(run_model.params());
                auto emit = [&](const std::string& task, const MetricsReport& report) {
                    std::ostringstream row;
                    row << axis << ',' << format_double(value) << ',' << task << ','
                        << to_string(regime) << ',' << format_double(fraction) << ',' << seed
                        << ',' << metric_or_empty(report, "accuracy") << ','
                        << metric_or_empty(report, "macro_f") << ','
                        << metric_or_empty(report, "auc") << ',' << metric_or_empty(report, "ap")
                        << ',' << report.n_examples << ',' << pre.skipped_nbp << ',' << hash << ','
                        << build_id();
                    append_csv_row(dir / "sweep.csv", kSweepHeader, row.str());
                };
                if (want_demo) {
                    ClassifierRun run =
                        train_classifier(run_model, data.demo, cfg.finetune.demo_label_key,
                                         regime, fraction, cfg.finetune, seed);
                    emit("demo", run.report);
                }
                if (want_ctr) {
                    if (want_demo) snapshot.load_into(run_model.params());  // fresh weights per task
                    CtrRun run = train_ctr(run_model, data.ctr_users, data.impressions, regime,
                                           fraction, cfg.finetune, seed);
                    emit("ctr", run.report);
                }
            }
        }
    }
    std::cout << "sweep table " << (dir / "sweep.csv").string() << '\n';
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Self-supervised user-model pre-training lab"};
    app.require_subcommand(1);

    std::string config_path, out_path, checkpoint_path, task, regime, split = "test", axis;
    std::vector<std::string> vocab_inputs;
    std::vector<double> sweep_values;
    double fraction = 1.0;
    std::uint64_t seed = 1;
    bool seed_given = false;

    auto* gen = app.add_subcommand("gen-data", "Generate a synthetic world");
    gen->add_option("--config", config_path)->required();
    gen->add_option("--out", out_path, "Output directory")->required();

    auto* vocab_cmd = app.add_subcommand("build-vocab", "Build a vocabulary from JSONL corpora");
    vocab_cmd->add_option("--config", config_path)->required();
    vocab_cmd->add_option("--out", out_path, "Vocabulary file")->required();
    vocab_cmd->add_option("inputs", vocab_inputs, "JSONL corpus files");

    auto* pre = app.add_subcommand("pretrain", "Run self-supervised pre-training");
    pre->add_option("--config", config_path)->required();
    pre->add_option("--out", out_path, "Checkpoint path")->required();
    pre->add_option("--seed", seed)->each([&](const std::string&) { seed_given = true; });

    auto* ft = app.add_subcommand("finetune", "Train a downstream task");
    ft->add_option("--config", config_path)->required();
    ft->add_option("--task", task, "demo or ctr")->required();
    ft->add_option("--regime", regime, "scratch, frozen or finetune")->required();
    ft->add_option("--fraction", fraction, "Label fraction in (0, 1]")->required();
    ft->add_option("--seed", seed)->required();
    ft->add_option("--checkpoint", checkpoint_path, "Pre-trained checkpoint");
    ft->add_option("--out", out_path, "Output directory")->required();

    auto* ev = app.add_subcommand("evaluate", "Evaluate a finetuned checkpoint");
    ev->add_option("--checkpoint", checkpoint_path)->required();
    ev->add_option("--task", task, "demo or ctr")->required();
    ev->add_option("--split", split, "train, val or test");
    ev->add_option("--config", config_path, "Optional data config override");
    ev->add_option("--out", out_path, "results.csv to append to");

    auto* sw = app.add_subcommand("sweep", "Sweep lambda or K");
    sw->add_option("--config", config_path)->required();
    sw->add_option("--axis", axis, "lambda or K")->required();
    sw->add_option("--values", sweep_values, "Axis values")->required()->delimiter(',');
    sw->add_option("--out", out_path, "Output directory")->required();

    try {
        app.parse(argc, argv);
        if (gen->parsed()) cmd_gen_data(config_path, out_path);
        if (vocab_cmd->parsed()) cmd_build_vocab(config_path, out_path, vocab_inputs);
        if (pre->parsed())
            cmd_pretrain(config_path, out_path,
                         seed_given ? std::optional<std::uint64_t>(seed) : std::nullopt);
        if (ft->parsed())
            cmd_finetune(config_path, task, regime, fraction, seed, checkpoint_path, out_path);
        if (ev->parsed()) cmd_evaluate(checkpoint_path, task, split, config_path, out_path);
        if (sw->parsed()) cmd_sweep(config_path, axis, sweep_values, out_path);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    } catch (const UsageError& e) {
        std::cerr << "usage error: " << e.what() << '\n';
        return 2;
    } catch (const std::invalid_argument& e) {
        std::cerr << "usage error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
