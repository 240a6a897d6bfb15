#include "chainlab/reader.hpp"

#include "chainlab/eval.hpp"

#include <json.hpp>

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>

namespace chainlab::reader {

using nn::HiddenSeq;
using nn::SpanScores;
using nn::Tape;
using nn::Var;

std::string to_string(Variant v) {
    switch (v) {
        case Variant::baseline: return "baseline";
        case Variant::reform: return "reform";
        case Variant::comatch: return "comatch";
    }
    return "?";
}

Variant variant_from_string(const std::string& s) {
    if (s == "baseline") return Variant::baseline;
    if (s == "reform") return Variant::reform;
    if (s == "comatch") return Variant::comatch;
    throw std::invalid_argument("unknown variant: " + s);
}

void ReaderConfig::validate() const {
    if (hidden <= 0 || hidden % 2 != 0)
        throw std::invalid_argument("reader config: hidden must be positive and even");
    if (embed <= 0) throw std::invalid_argument("reader config: embed must be positive");
    if (lr < 0) throw std::invalid_argument("reader config: lr must be >= 0");
    if (epochs <= 0) throw std::invalid_argument("reader config: epochs must be positive");
    if (batch <= 0) throw std::invalid_argument("reader config: batch must be positive");
    if (max_answer_len <= 0)
        throw std::invalid_argument("reader config: max_answer_len must be positive");
    if (attn_dropout < 0.0 || attn_dropout >= 1.0)
        throw std::invalid_argument("reader config: attn_dropout must be in [0,1)");
}

Model::Model(ReaderConfig config, corpus::Vocabulary vocab)
    : config_(std::move(config)), vocab_(std::move(vocab)) {
    config_.validate();
    create_params_();
    wire_();
}

namespace {

void create_bilstm(ad::ParamStore& store, const std::string& prefix, int in_dim, int cell,
                   double bound, std::uint64_t& rng) {
    for (const char* dir : {"fw", "bw"}) {
        ad::init_uniform(store.create(prefix + "." + dir + ".W", 4 * cell, in_dim), bound, rng);
        ad::init_uniform(store.create(prefix + "." + dir + ".U", 4 * cell, cell), bound, rng);
        store.create(prefix + "." + dir + ".b", 4 * cell, 1);
    }
}

void create_attention(ad::ParamStore& store, const std::string& prefix, int l, double bound,
                      std::uint64_t& rng) {
    ad::init_uniform(store.create(prefix + ".Wg", l, l), bound, rng);
    store.create(prefix + ".bg", l, 1);
}

nn::BiLstmParams wire_bilstm(ad::ParamStore& store, const std::string& prefix, int cell) {
    nn::BiLstmParams p;
    p.cell = cell;
    p.fw = {&store.at(prefix + ".fw.W"), &store.at(prefix + ".fw.U"), &store.at(prefix + ".fw.b")};
    p.bw = {&store.at(prefix + ".bw.W"), &store.at(prefix + ".bw.U"), &store.at(prefix + ".bw.b")};
    return p;
}

nn::AttentionParams wire_attention(ad::ParamStore& store, const std::string& prefix) {
    return {&store.at(prefix + ".Wg"), &store.at(prefix + ".bg")};
}

}  // namespace

void Model::create_params_() {
    const int l = config_.hidden;
    const int d = config_.embed;
    const int cell = l / 2;
    const double bound = 1.0 / std::sqrt(static_cast<double>(l));
    std::uint64_t rng = config_.seed * 0x2545f4914f6cdd1dULL + 1;

    ad::init_uniform(store_.create("embed", vocab_.size(), d), bound, rng);
    create_bilstm(store_, "enc", d, cell, bound, rng);

    switch (config_.variant) {
        case Variant::baseline:
            create_attention(store_, "base.att", l, bound, rng);
            create_attention(store_, "base.self", l, bound, rng);
            break;
        case Variant::comatch:
            create_attention(store_, "comatch.att", l, bound, rng);
            create_bilstm(store_, "comatch.fuse", 2 * l, cell, bound, rng);
            break;
        case Variant::reform:
            create_attention(store_, "reform.att1", l, bound, rng);
            create_attention(store_, "reform.att2", l, bound, rng);
            ad::init_uniform(store_.create("reform.W", l, 3 * l), bound, rng);
            ad::init_uniform(store_.create("reform.Wg", l, 3 * l), bound, rng);
            create_bilstm(store_, "reform.fuse", l, cell, bound, rng);
            create_attention(store_, "reform.self", l, bound, rng);
            break;
    }
    ad::init_uniform(store_.create("span.w_start", l, 1), bound, rng);
    ad::init_uniform(store_.create("span.w_end", l, 1), bound, rng);
}

void Model::wire_() {
    const int cell = config_.hidden / 2;
    enc_.embed = &store_.at("embed");
    enc_.rnn = wire_bilstm(store_, "enc", cell);
    switch (config_.variant) {
        case Variant::baseline:
            base_att_ = wire_attention(store_, "base.att");
            base_self_ = wire_attention(store_, "base.self");
            break;
        case Variant::comatch:
            comatch_.att = wire_attention(store_, "comatch.att");
            comatch_.fuse = wire_bilstm(store_, "comatch.fuse", cell);
            break;
        case Variant::reform:
            reform_.att_q = wire_attention(store_, "reform.att1");
            reform_.att_p2 = wire_attention(store_, "reform.att2");
            reform_.W = &store_.at("reform.W");
            reform_.Wg = &store_.at("reform.Wg");
            reform_.fuse = wire_bilstm(store_, "reform.fuse", cell);
            reform_.self_att = wire_attention(store_, "reform.self");
            break;
    }
    span_.w_start = &store_.at("span.w_start");
    span_.w_end = &store_.at("span.w_end");
}

SpanScores Model::forward(Tape& tape, const chains::ReaderInput& input, bool training,
                          std::uint64_t dropout_seed) {
    if (input.p2_tokens.empty()) throw std::invalid_argument("forward: empty answer passage");
    nn::AttnOpts opts;
    opts.dropout = config_.attn_dropout;
    opts.seed = dropout_seed;
    opts.training = training;

    std::vector<int> q_ids = vocab_.encode(input.question_tokens);
    HiddenSeq hq = nn::encode(tape, q_ids, enc_, nn::InputRole::question);

    if (config_.variant == Variant::baseline) {
        // One sequence over the passage concatenation; the span head reads
        // only the p2 suffix.
        std::vector<std::string> cat = input.p1_tokens;
        cat.insert(cat.end(), input.p2_tokens.begin(), input.p2_tokens.end());
        HiddenSeq hcat = nn::encode(tape, vocab_.encode(cat), enc_, nn::InputRole::passage2);
        HiddenSeq fused = nn::attend(tape, hq, hcat, base_att_, opts);
        nn::AttnOpts self_opts = opts;
        self_opts.seed = dropout_seed + 1;
        HiddenSeq refined = nn::self_att(tape, fused, base_self_, self_opts);
        const int p1_len = static_cast<int>(input.p1_tokens.size());
        const int p2_len = static_cast<int>(input.p2_tokens.size());
        HiddenSeq p2_part;
        p2_part.h = nn::cols(refined.h, p1_len, p2_len);
        p2_part.mask.assign(refined.mask.begin() + p1_len, refined.mask.end());
        return nn::span_head(tape, p2_part, span_);
    }

    HiddenSeq hp1 = nn::encode(tape, vocab_.encode(input.p1_tokens), enc_, nn::InputRole::passage1);
    HiddenSeq hp2 = nn::encode(tape, vocab_.encode(input.p2_tokens), enc_, nn::InputRole::passage2);

    HiddenSeq m = config_.variant == Variant::comatch
                      ? nn::co_match(tape, hq, hp1, hp2, comatch_, opts)
                      : nn::query_reform(tape, hq, hp1, hp2, reform_, opts);
    return nn::span_head(tape, m, span_);
}

Var Model::loss(const SpanScores& scores, std::pair<int, int> gold) const {
    const int n = static_cast<int>(scores.mask.size());
    auto [s, e] = gold;
    if (s < 0 || e < s || e >= n) throw std::out_of_range("loss: gold span out of range");
    if (!scores.mask[static_cast<std::size_t>(s)] || !scores.mask[static_cast<std::size_t>(e)])
        throw std::out_of_range("loss: gold span on masked position");
    Var start_col = nn::transpose(scores.start_logits);
    Var end_col = nn::transpose(scores.end_logits);
    Var nll_start = nn::sub(nn::log_sum_exp_cols(start_col), nn::pick(start_col, s, 0));
    Var nll_end = nn::sub(nn::log_sum_exp_cols(end_col), nn::pick(end_col, e, 0));
    return nn::add(nll_start, nll_end);
}

std::string Model::predict(const chains::ReaderInput& input) {
    Tape tape;
    SpanScores scores = forward(tape, input, /*training=*/false);
    auto [s, e] = nn::decode_span(scores.start_logits.value(), scores.end_logits.value(),
                                  scores.mask, config_.max_answer_len);
    std::vector<std::string> span(input.p2_tokens.begin() + s, input.p2_tokens.begin() + e + 1);
    return corpus::join_tokens(span);
}

TrainReport Model::train(const std::vector<chains::ReaderInput>& train_set,
                         const std::vector<chains::ReaderInput>& dev_set) {
    std::vector<const chains::ReaderInput*> trainable;
    for (const auto& in : train_set)
        if (in.gold_span) trainable.push_back(&in);
    if (trainable.empty()) throw std::invalid_argument("train: no examples with gold spans");

    ad::Adam opt(config_.lr);
    std::uint64_t shuffle_rng = config_.seed ^ 0x8f1bbcdcbfa53e0bULL;
    std::uint64_t dropout_counter = 0;

    TrainReport report;
    double best_f1 = -1.0;
    std::map<std::string, ad::Matrix> best_values;

    auto snapshot = [&] {
        best_values.clear();
        for (const auto& name : store_.names()) best_values[name] = store_.at(name).value;
    };

    for (int epoch = 1; epoch <= config_.epochs; ++epoch) {
        auto t0 = std::chrono::steady_clock::now();
        // Fisher-Yates, own RNG: reruns with equal seeds are bit-identical.
        std::vector<const chains::ReaderInput*> order = trainable;
        for (std::size_t i = order.size(); i > 1; --i) {
            std::size_t j = ad::rand_below(shuffle_rng, i);
            std::swap(order[i - 1], order[j]);
        }

        double loss_sum = 0.0;
        std::size_t seen = 0;
        try {
            for (std::size_t start = 0; start < order.size();
                 start += static_cast<std::size_t>(config_.batch)) {
                std::size_t stop =
                    std::min(order.size(), start + static_cast<std::size_t>(config_.batch));
                const double inv = 1.0 / static_cast<double>(stop - start);
                for (std::size_t i = start; i < stop; ++i) {
                    Tape tape;
                    SpanScores scores = forward(tape, *order[i], /*training=*/true,
                                                config_.seed + 7777 * (++dropout_counter));
                    Var l = loss(scores, *order[i]->gold_span);
                    loss_sum += l.value()(0, 0);
                    ++seen;
                    tape.backward(nn::scale(l, inv));
                }
                opt.step(store_);
            }
        } catch (const ad::NumericError& e) {
            report.diverged = true;
            report.divergence_message = e.what();
            break;
        }

        TrainReport::Epoch ep;
        ep.epoch = epoch;
        ep.train_loss = seen ? loss_sum / static_cast<double>(seen) : 0.0;
        if (!std::isfinite(ep.train_loss)) {
            report.diverged = true;
            report.divergence_message = "non-finite epoch loss";
            break;
        }

        std::size_t em_hits = 0;
        double f1_sum = 0.0;
        for (const auto& in : dev_set) {
            std::string pred = predict(in);
            em_hits += static_cast<std::size_t>(eval::exact_match(pred, in.answer));
            f1_sum += eval::f1_score(pred, in.answer);
        }
        if (!dev_set.empty()) {
            ep.dev_em = static_cast<double>(em_hits) / static_cast<double>(dev_set.size());
            ep.dev_f1 = f1_sum / static_cast<double>(dev_set.size());
        }
        ep.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        report.epochs.push_back(ep);

        if (ep.dev_f1 > best_f1) {
            best_f1 = ep.dev_f1;
            report.best_epoch = epoch;
            snapshot();
        }
        if (config_.stop_at_dev_em && ep.dev_em >= *config_.stop_at_dev_em) break;
    }

    if (!best_values.empty())
        for (auto& [name, value] : best_values) store_.at(name).value = value;
    return report;
}

void Model::save(const std::string& dir) const {
    std::filesystem::create_directories(dir);
    store_.save(dir + "/params.json");
    vocab_.save(dir + "/vocab.json");
    std::ofstream out(dir + "/config.json");
    if (!out) throw std::runtime_error("cannot write " + dir + "/config.json");
    out << config_to_json(config_) << "\n";
}

Model Model::load(const std::string& dir) {
    std::ifstream in(dir + "/config.json");
    if (!in) throw std::runtime_error("cannot read " + dir + "/config.json");
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    Model m(config_from_json(text), corpus::Vocabulary::load(dir + "/vocab.json"));
    ad::ParamStore loaded = ad::ParamStore::load(dir + "/params.json");
    for (const auto& name : m.store_.names()) {
        const ad::ParamSlot& src = loaded.at(name);
        ad::ParamSlot& dst = m.store_.at(name);
        if (src.value.rows() != dst.value.rows() || src.value.cols() != dst.value.cols())
            throw std::runtime_error("checkpoint shape mismatch for " + name);
        dst.value = src.value;
    }
    return m;
}

std::string config_to_json(const ReaderConfig& c) {
    nlohmann::json doc = {{"variant", to_string(c.variant)},
                          {"hidden", c.hidden},
                          {"embed", c.embed},
                          {"lr", c.lr},
                          {"epochs", c.epochs},
                          {"batch", c.batch},
                          {"seed", c.seed},
                          {"max_answer_len", c.max_answer_len},
                          {"attn_dropout", c.attn_dropout}};
    if (c.stop_at_dev_em) doc["stop_at_dev_em"] = *c.stop_at_dev_em;
    return doc.dump(1);
}

ReaderConfig config_from_json(const std::string& text) {
    nlohmann::json doc = nlohmann::json::parse(text);
    ReaderConfig c;
    c.variant = variant_from_string(doc.at("variant").get<std::string>());
    c.hidden = doc.at("hidden").get<int>();
    c.embed = doc.at("embed").get<int>();
    c.lr = doc.at("lr").get<double>();
    c.epochs = doc.at("epochs").get<int>();
    c.batch = doc.at("batch").get<int>();
    c.seed = doc.at("seed").get<std::uint64_t>();
    c.max_answer_len = doc.at("max_answer_len").get<int>();
    c.attn_dropout = doc.at("attn_dropout").get<double>();
    if (doc.contains("stop_at_dev_em")) c.stop_at_dev_em = doc.at("stop_at_dev_em").get<double>();
    c.validate();
    return c;
}

std::string report_to_json(const TrainReport& r) {
    nlohmann::json eps = nlohmann::json::array();
    nlohmann::json secs = nlohmann::json::array();
    for (const auto& e : r.epochs) {
        eps.push_back({{"epoch", e.epoch},
                       {"train_loss", e.train_loss},
                       {"dev_em", e.dev_em},
                       {"dev_f1", e.dev_f1}});
        secs.push_back(e.seconds);
    }
    // Wall times live in the meta block: reruns are byte-identical outside it.
    nlohmann::json doc = {{"epochs", eps},
                          {"best_epoch", r.best_epoch},
                          {"diverged", r.diverged},
                          {"meta", {{"epoch_seconds", secs}}}};
    if (r.diverged) doc["divergence_message"] = r.divergence_message;
    return doc.dump(1);
}

}  // namespace chainlab::reader
