// chainlab: reasoning-chain extraction, oracle settings, and desk-scale
// span-reader experiments over HotpotQA-style corpora.

#include "chainlab/chain.hpp"
#include "chainlab/corpus.hpp"
#include "chainlab/eval.hpp"
#include "chainlab/reader.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

namespace fs = std::filesystem;
using namespace chainlab;
using nlohmann::json;

namespace {

std::string timestamp_utc() {
    auto now = std::chrono::system_clock::now();
    std::time_t t = std::chrono::system_clock::to_time_t(now);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
    return buf;
}

// --seed falls back to CHAINLAB_SEED, then to 1.
std::uint64_t resolve_seed(const CLI::Option* opt, std::uint64_t flag_value) {
    if (opt->count() > 0) return flag_value;
    if (const char* env = std::getenv("CHAINLAB_SEED")) {
        try {
            return std::stoull(env);
        } catch (const std::exception&) {
            throw CLI::ValidationError("CHAINLAB_SEED", "must be an unsigned integer");
        }
    }
    return flag_value;
}

// Resolved-flag snapshot next to an output; timestamps stay in meta.
void write_config_snapshot(const std::string& command, const json& flags,
                           const std::string& path) {
    json doc = {{"command", command}, {"flags", flags}, {"meta", {{"timestamp", timestamp_utc()}}}};
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << doc.dump(1) << "\n";
}

void write_json(const json& doc, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << doc.dump(1) << "\n";
}

std::vector<std::vector<std::string>> token_seqs(const std::vector<chains::ReaderInput>& inputs) {
    std::vector<std::vector<std::string>> seqs;
    seqs.reserve(inputs.size() * 3);
    for (const auto& in : inputs) {
        seqs.push_back(in.question_tokens);
        seqs.push_back(in.p1_tokens);
        seqs.push_back(in.p2_tokens);
    }
    return seqs;
}

int run_gen_synthetic(int n, int candidates, std::uint64_t seed, const std::string& output) {
    auto examples = corpus::gen_synthetic(n, candidates, seed);
    corpus::save_dataset(examples, output);
    write_config_snapshot("gen-synthetic",
                          {{"n", n}, {"candidates", candidates}, {"seed", seed},
                           {"output", output}},
                          output + ".config.json");
    std::cout << "wrote " << examples.size() << " synthetic examples to " << output << "\n";
    return 0;
}

int run_build_chains(const std::string& input, const std::string& format,
                     const std::string& output, const std::string& report_path) {
    corpus::DatasetFormat fmt = format == "hotpot"
                                    ? corpus::DatasetFormat::hotpot_json
                                    : corpus::DatasetFormat::jsonl;
    corpus::LoadResult loaded = corpus::load_dataset(input, fmt);
    for (const auto& err : loaded.errors)
        std::cerr << input << ":" << err.record << ": " << err.message << "\n";

    std::vector<chains::ChainRecord> records;
    std::map<std::string, std::size_t> discards;
    for (const auto& ex : loaded.examples) {
        chains::ExtractResult r = chains::extract_chain(ex);
        if (std::holds_alternative<chains::Discard>(r)) {
            ++discards[chains::to_string(std::get<chains::Discard>(r).reason)];
            continue;
        }
        records.push_back({ex.id, ex.question, ex.answer, std::get<chains::ReasoningChain>(r)});
    }
    chains::save_chains(records, output);

    json discards_json = json::object();
    for (const auto& [k, v] : discards) discards_json[k] = v;
    json report = {{"input_records", loaded.examples.size()},
                   {"skipped_bad_support", loaded.skipped_bad_support},
                   {"malformed_records", loaded.errors.size()},
                   {"chains", records.size()},
                   {"discards", discards_json},
                   {"meta", {{"timestamp", timestamp_utc()}}}};
    write_json(report, report_path);
    std::cout << "extracted " << records.size() << " chains from " << loaded.examples.size()
              << " records\n";
    return 0;
}

int run_make_settings(const std::string& chains_path, const std::string& setting_name,
                      std::uint64_t seed, bool comatch_dup, const std::string& output) {
    chains::SettingKind kind = chains::setting_from_string(setting_name);
    auto records = chains::load_chains(chains_path);
    std::vector<chains::ReaderInput> inputs;
    inputs.reserve(records.size());
    chains::OracleSetting setting{kind, seed};
    for (const auto& rec : records) {
        corpus::QAExample ex;
        ex.id = rec.id;
        ex.question = rec.question;
        ex.question_tokens = corpus::tokenize(rec.question);
        ex.answer = rec.answer;
        inputs.push_back(chains::make_reader_input(ex, rec.chain, setting, comatch_dup));
    }
    chains::save_reader_inputs(inputs, kind, output);
    std::cout << "wrote " << inputs.size() << " reader inputs (" << setting_name << ") to "
              << output << "\n";
    return 0;
}

int run_train(const std::string& variant_name, const std::string& train_path,
              const std::string& dev_path, double dev_frac, const std::string& out_dir,
              reader::ReaderConfig cfg, int min_freq) {
    cfg.variant = reader::variant_from_string(variant_name);
    cfg.validate();

    std::vector<chains::ReaderInput> train_inputs = chains::load_reader_inputs(train_path);
    std::vector<chains::ReaderInput> dev_inputs;
    if (!dev_path.empty()) {
        dev_inputs = chains::load_reader_inputs(dev_path);
    } else if (dev_frac > 0.0) {
        std::size_t n_dev = static_cast<std::size_t>(dev_frac * static_cast<double>(train_inputs.size()));
        if (n_dev > 0 && n_dev < train_inputs.size()) {
            dev_inputs.assign(train_inputs.end() - static_cast<std::ptrdiff_t>(n_dev),
                              train_inputs.end());
            train_inputs.resize(train_inputs.size() - n_dev);
        }
    }

    corpus::Vocabulary vocab = corpus::Vocabulary::build(token_seqs(train_inputs), min_freq);
    reader::Model model(cfg, vocab);
    reader::TrainReport report = model.train(train_inputs, dev_inputs);

    fs::create_directories(out_dir);
    model.save(out_dir);
    {
        std::ofstream out(out_dir + "/report.json");
        if (!out) throw std::runtime_error("cannot write " + out_dir + "/report.json");
        out << reader::report_to_json(report) << "\n";
    }
    write_config_snapshot("train",
                          {{"variant", variant_name},
                           {"train", train_path},
                           {"dev", dev_path},
                           {"dev_frac", dev_frac},
                           {"hidden", cfg.hidden},
                           {"embed", cfg.embed},
                           {"lr", cfg.lr},
                           {"epochs", cfg.epochs},
                           {"batch", cfg.batch},
                           {"seed", cfg.seed},
                           {"max_answer_len", cfg.max_answer_len},
                           {"attn_dropout", cfg.attn_dropout},
                           {"min_freq", min_freq},
                           {"out", out_dir}},
                          out_dir + "/run_config.json");

    if (report.diverged) {
        std::cerr << "training diverged: " << report.divergence_message << "\n";
        return 1;
    }
    for (const auto& ep : report.epochs)
        std::cout << "epoch " << ep.epoch << " loss " << ep.train_loss << " dev_em " << ep.dev_em
                  << " dev_f1 " << ep.dev_f1 << "\n";
    std::cout << "best epoch " << report.best_epoch << "; model saved to " << out_dir << "\n";
    return 0;
}

int run_eval(const std::string& model_dir, const std::string& data_path,
             const std::string& predictions_path, const std::string& result_path) {
    reader::Model model = reader::Model::load(model_dir);
    auto inputs = chains::load_reader_inputs(data_path);
    std::map<std::string, std::string> predictions, gold;
    for (const auto& in : inputs) {
        predictions[in.id] = model.predict(in);
        gold[in.id] = in.answer;
    }
    eval::EvalResult result = eval::evaluate(predictions, gold);

    json preds_json = json::object();
    for (const auto& [id, answer] : predictions) preds_json[id] = answer;
    write_json(preds_json, predictions_path);
    eval::save_eval_result(result, result_path);
    write_config_snapshot("eval",
                          {{"model", model_dir}, {"data", data_path},
                           {"predictions", predictions_path}, {"result", result_path}},
                          result_path + ".config.json");
    std::cout << "em " << result.em << " f1 " << result.f1 << " over " << result.n
              << " examples\n";
    return 0;
}

int run_probe_order(const std::string& chains_path, std::uint64_t seed, eval::ProbeConfig cfg,
                    const std::string& out_path) {
    auto records = chains::load_chains(chains_path);
    std::vector<eval::ProbeExample> data;
    std::uint64_t rng = seed ^ 0xabcdef12345ULL;
    for (const auto& rec : records) {
        eval::ProbeExample ex;
        ex.question_tokens = corpus::tokenize(rec.question);
        bool ctx_first = ad::rand_below(rng, 2) == 0;
        const auto& ctx = rec.chain.context_passage.tokens;
        const auto& ans = rec.chain.answer_passage.tokens;
        ex.first_tokens = ctx_first ? ctx : ans;
        ex.second_tokens = ctx_first ? ans : ctx;
        ex.label = ctx_first ? 0 : 1;
        data.push_back(std::move(ex));
    }
    cfg.seed = seed;
    double accuracy = eval::order_probe(data, cfg);

    json doc = {{"accuracy", accuracy},
                {"n", data.size()},
                {"holdout", cfg.holdout},
                {"meta", {{"timestamp", timestamp_utc()}}}};
    write_json(doc, out_path);
    write_config_snapshot("probe-order",
                          {{"chains", chains_path}, {"seed", seed}, {"holdout", cfg.holdout},
                           {"epochs", cfg.epochs}, {"hidden", cfg.hidden}, {"embed", cfg.embed},
                           {"out", out_path}},
                          out_path + ".config.json");
    std::cout << "order probe accuracy " << accuracy << " on " << data.size() << " pairs\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"two-hop reasoning-chain experiments"};
    app.require_subcommand(1);

    // gen-synthetic
    auto* gen = app.add_subcommand("gen-synthetic", "generate a synthetic two-hop dataset");
    int gen_n = 1000, gen_candidates = 4;
    std::uint64_t gen_seed = 1;
    std::string gen_output;
    gen->add_option("--n", gen_n, "number of examples")->check(CLI::PositiveNumber);
    gen->add_option("--candidates", gen_candidates, "answer candidates per example")
        ->check(CLI::Range(2, 20));
    auto* gen_seed_opt = gen->add_option("--seed", gen_seed, "generator seed");
    gen->add_option("--output", gen_output, "output jsonl path")->required();

    // build-chains
    auto* build = app.add_subcommand("build-chains", "extract ordered reasoning chains");
    std::string bc_input, bc_format = "jsonl", bc_output, bc_report;
    build->add_option("--input", bc_input, "dataset path")->required();
    build->add_option("--format", bc_format, "input format")
        ->check(CLI::IsMember({"jsonl", "hotpot"}));
    build->add_option("--output", bc_output, "chains jsonl path")->required();
    build->add_option("--report", bc_report, "discard report path")->required();

    // make-settings
    auto* make = app.add_subcommand("make-settings", "realize an oracle setting");
    std::string ms_chains, ms_setting, ms_output;
    std::uint64_t ms_seed = 1;
    bool ms_dup = false;
    make->add_option("--chains", ms_chains, "chains jsonl path")->required();
    make->add_option("--setting", ms_setting, "single|ordered|random")
        ->required()
        ->check(CLI::IsMember({"single", "ordered", "random"}));
    auto* ms_seed_opt = make->add_option("--seed", ms_seed, "random-order seed");
    make->add_flag("--comatch-dup", ms_dup, "duplicate the answer passage into p1 (single only)");
    make->add_option("--output", ms_output, "reader-input jsonl path")->required();

    // train
    auto* train = app.add_subcommand("train", "train a reader variant");
    std::string tr_variant, tr_train, tr_dev, tr_out;
    double tr_dev_frac = 0.1;
    int tr_min_freq = 2;
    reader::ReaderConfig tr_cfg;
    train->add_option("--variant", tr_variant, "baseline|reform|comatch")
        ->required()
        ->check(CLI::IsMember({"baseline", "reform", "comatch"}));
    train->add_option("--train", tr_train, "training jsonl")->required();
    train->add_option("--dev", tr_dev, "dev jsonl (defaults to a train split)");
    train->add_option("--dev-frac", tr_dev_frac, "tail fraction for dev when --dev is absent");
    train->add_option("--out", tr_out, "output model directory")->required();
    train->add_option("--hidden", tr_cfg.hidden, "hidden size (even)");
    train->add_option("--embed", tr_cfg.embed, "embedding size");
    train->add_option("--lr", tr_cfg.lr, "learning rate");
    train->add_option("--epochs", tr_cfg.epochs, "training epochs");
    train->add_option("--batch", tr_cfg.batch, "batch size");
    auto* tr_seed_opt = train->add_option("--seed", tr_cfg.seed, "training seed");
    train->add_option("--max-answer-len", tr_cfg.max_answer_len, "span decode cap");
    train->add_option("--attn-dropout", tr_cfg.attn_dropout, "attention dropout probability");
    train->add_option("--min-freq", tr_min_freq, "vocabulary frequency cutoff");

    // eval
    auto* ev = app.add_subcommand("eval", "evaluate a trained model");
    std::string ev_model, ev_data, ev_preds, ev_result;
    ev->add_option("--model", ev_model, "model directory")->required();
    ev->add_option("--data", ev_data, "reader-input jsonl")->required();
    ev->add_option("--predictions", ev_preds, "predictions json path")->required();
    ev->add_option("--result", ev_result, "result json path")->required();

    // probe-order
    auto* probe = app.add_subcommand("probe-order", "train the passage-order probe");
    std::string po_chains, po_out;
    std::uint64_t po_seed = 1;
    eval::ProbeConfig po_cfg;
    probe->add_option("--chains", po_chains, "chains jsonl path")->required();
    auto* po_seed_opt = probe->add_option("--seed", po_seed, "probe seed");
    probe->add_option("--holdout", po_cfg.holdout, "held-out fraction");
    probe->add_option("--epochs", po_cfg.epochs, "probe epochs");
    probe->add_option("--hidden", po_cfg.hidden, "probe hidden size");
    probe->add_option("--embed", po_cfg.embed, "probe embedding size");
    probe->add_option("--out", po_out, "probe report path")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (gen->parsed())
            return run_gen_synthetic(gen_n, gen_candidates, resolve_seed(gen_seed_opt, gen_seed),
                                     gen_output);
        if (build->parsed()) return run_build_chains(bc_input, bc_format, bc_output, bc_report);
        if (make->parsed())
            return run_make_settings(ms_chains, ms_setting, resolve_seed(ms_seed_opt, ms_seed),
                                     ms_dup, ms_output);
        if (train->parsed()) {
            tr_cfg.seed = resolve_seed(tr_seed_opt, tr_cfg.seed);
            return run_train(tr_variant, tr_train, tr_dev, tr_dev_frac, tr_out, tr_cfg,
                             tr_min_freq);
        }
        if (ev->parsed()) return run_eval(ev_model, ev_data, ev_preds, ev_result);
        if (probe->parsed())
            return run_probe_order(po_chains, resolve_seed(po_seed_opt, po_seed), po_cfg, po_out);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}
