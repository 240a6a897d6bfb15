#include "chainlab/eval.hpp"

#include "chainlab/corpus.hpp"
#include "chainlab/neural.hpp"
#include "chainlab/tensor.hpp"

#include <json.hpp>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <sstream>

namespace chainlab::eval {

namespace {

bool is_article(const std::string& w) { return w == "a" || w == "an" || w == "the"; }

// Lowercase and delete punctuation characters; whitespace preserved.
std::string strip_punct_lower(const std::string& s) {
    std::string out;
    out.reserve(s.size());
    for (unsigned char c : s) {
        if (std::ispunct(c)) continue;
        out.push_back(static_cast<char>(std::tolower(c)));
    }
    return out;
}

std::vector<std::string> split_ws(const std::string& s) {
    std::vector<std::string> out;
    std::istringstream is(s);
    std::string w;
    while (is >> w) out.push_back(w);
    return out;
}

}  // namespace

std::string normalize_answer(const std::string& s) {
    std::vector<std::string> words = split_ws(strip_punct_lower(s));
    std::string out;
    for (const auto& w : words) {
        if (is_article(w)) continue;
        if (!out.empty()) out.push_back(' ');
        out += w;
    }
    return out;
}

std::vector<std::string> f1_tokens(const std::string& s) {
    return split_ws(strip_punct_lower(s));
}

int exact_match(const std::string& pred, const std::string& gold) {
    return normalize_answer(pred) == normalize_answer(gold) ? 1 : 0;
}

double f1_score(const std::string& pred, const std::string& gold) {
    std::vector<std::string> p = f1_tokens(pred);
    std::vector<std::string> g = f1_tokens(gold);
    if (p.empty() && g.empty()) return 1.0;
    if (p.empty() || g.empty()) return 0.0;
    std::map<std::string, int> bag;
    for (const auto& w : g) ++bag[w];
    int overlap = 0;
    for (const auto& w : p) {
        auto it = bag.find(w);
        if (it != bag.end() && it->second > 0) {
            --it->second;
            ++overlap;
        }
    }
    if (overlap == 0) return 0.0;
    double prec = static_cast<double>(overlap) / static_cast<double>(p.size());
    double rec = static_cast<double>(overlap) / static_cast<double>(g.size());
    return 2.0 * prec * rec / (prec + rec);
}

EvalResult evaluate(const std::map<std::string, std::string>& predictions,
                    const std::map<std::string, std::string>& gold) {
    EvalResult r;
    r.n = gold.size();
    double em_sum = 0.0, f1_sum = 0.0;
    for (const auto& [id, answer] : gold) {
        ExampleScore s;
        s.id = id;
        auto it = predictions.find(id);
        if (it == predictions.end()) {
            s.missing = true;
            r.missing.push_back(id);
        } else {
            s.em = exact_match(it->second, answer);
            s.f1 = f1_score(it->second, answer);
        }
        em_sum += s.em;
        f1_sum += s.f1;
        r.per_example.push_back(std::move(s));
    }
    if (r.n > 0) {
        r.em = em_sum / static_cast<double>(r.n);
        r.f1 = f1_sum / static_cast<double>(r.n);
    }
    return r;
}

void save_eval_result(const EvalResult& r, const std::string& path) {
    auto round4 = [](double x) { return std::round(x * 1e4) / 1e4; };
    nlohmann::json doc = {{"em", round4(r.em)},
                          {"f1", round4(r.f1)},
                          {"n", r.n},
                          {"missing", r.missing}};
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << doc.dump(1) << "\n";
}

// ---- passage-order probe ---------------------------------------------------

namespace {

using ad::Matrix;
using ad::ParamSlot;
using ad::ParamStore;
using ad::Tape;
using ad::Var;

struct ProbeNet {
    ParamStore store;
    nn::EncoderParams enc;
    nn::AttentionParams att;
    ParamSlot* Wf = nullptr;
    ParamSlot* bf = nullptr;
    ParamSlot* v = nullptr;
    corpus::Vocabulary vocab;
    int cell = 0;

    ProbeNet(const ProbeConfig& cfg, corpus::Vocabulary vocab_in) : vocab(std::move(vocab_in)) {
        const int l = cfg.hidden;
        if (l <= 0 || l % 2 != 0) throw std::invalid_argument("probe: hidden must be even");
        cell = l / 2;
        const double bound = 1.0 / std::sqrt(static_cast<double>(l));
        std::uint64_t rng = cfg.seed * 0x9e3779b97f4a7c15ULL + 3;
        ad::init_uniform(store.create("embed", vocab.size(), cfg.embed), bound, rng);
        for (const char* dir : {"fw", "bw"}) {
            ad::init_uniform(store.create(std::string("enc.") + dir + ".W", 4 * cell, cfg.embed),
                             bound, rng);
            ad::init_uniform(store.create(std::string("enc.") + dir + ".U", 4 * cell, cell), bound,
                             rng);
            store.create(std::string("enc.") + dir + ".b", 4 * cell, 1);
        }
        ad::init_uniform(store.create("att.Wg", l, l), bound, rng);
        store.create("att.bg", l, 1);
        ad::init_uniform(store.create("Wf", l, 4 * l), bound, rng);
        store.create("bf", l, 1);
        ad::init_uniform(store.create("v", l, 1), bound, rng);

        enc.embed = &store.at("embed");
        enc.rnn.cell = cell;
        enc.rnn.fw = {&store.at("enc.fw.W"), &store.at("enc.fw.U"), &store.at("enc.fw.b")};
        enc.rnn.bw = {&store.at("enc.bw.W"), &store.at("enc.bw.U"), &store.at("enc.bw.b")};
        att = {&store.at("att.Wg"), &store.at("att.bg")};
        Wf = &store.at("Wf");
        bf = &store.at("bf");
        v = &store.at("v");
    }

    Var mean_cols(Tape& tape, const nn::HiddenSeq& h) const {
        double live = 0.0;
        for (int m : h.mask) live += m;
        Matrix w(static_cast<Eigen::Index>(h.mask.size()), 1);
        for (std::size_t i = 0; i < h.mask.size(); ++i)
            w(static_cast<Eigen::Index>(i), 0) = live > 0 ? h.mask[i] / live : 0.0;
        return nn::matmul(h.h, tape.leaf(w));
    }

    // One ordering's score: pooled question/first/second encodings plus the
    // pooled first->second attention, through a small scoring MLP.
    Var score(Tape& tape, const nn::HiddenSeq& q, const nn::HiddenSeq& first,
              const nn::HiddenSeq& second) const {
        Var attended = mean_cols(tape, nn::attend(tape, first, second, att));
        Var feats = nn::concat_rows(
            {mean_cols(tape, q), mean_cols(tape, first), mean_cols(tape, second), attended});
        Var hidden = nn::tanh(nn::add(nn::matmul(tape.param(*Wf), feats), tape.param(*bf)));
        return nn::matmul(nn::transpose(tape.param(*v)), hidden);
    }

    // 2x1 logits: ordering as given vs swapped.
    Var logits(Tape& tape, const ProbeExample& ex) {
        nn::HiddenSeq q = nn::encode(tape, vocab.encode(ex.question_tokens), enc,
                                     nn::InputRole::question);
        nn::HiddenSeq a = nn::encode(tape, vocab.encode(ex.first_tokens), enc,
                                     nn::InputRole::passage1);
        nn::HiddenSeq b = nn::encode(tape, vocab.encode(ex.second_tokens), enc,
                                     nn::InputRole::passage2);
        return nn::concat_rows({score(tape, q, a, b), score(tape, q, b, a)});
    }
};

}  // namespace

double order_probe(const std::vector<ProbeExample>& data, const ProbeConfig& config) {
    if (data.size() < 2) throw std::invalid_argument("order_probe: need at least 2 examples");
    if (config.holdout <= 0.0 || config.holdout >= 1.0)
        throw std::invalid_argument("order_probe: holdout must be in (0,1)");

    const std::size_t n_hold = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::llround(config.holdout * static_cast<double>(data.size()))));
    const std::size_t n_train = data.size() - n_hold;
    if (n_train == 0) throw std::invalid_argument("order_probe: empty training split");

    bool saw0 = false, saw1 = false;
    for (std::size_t i = 0; i < n_train; ++i) (data[i].label ? saw1 : saw0) = true;
    if (!saw0 || !saw1)
        throw std::invalid_argument("order_probe: training split has a single class");

    std::vector<std::vector<std::string>> seqs;
    for (std::size_t i = 0; i < n_train; ++i) {
        seqs.push_back(data[i].question_tokens);
        seqs.push_back(data[i].first_tokens);
        seqs.push_back(data[i].second_tokens);
    }
    ProbeNet net(config, corpus::Vocabulary::build(seqs, config.min_frequency));

    ad::Adam opt(config.lr);
    std::uint64_t shuffle_rng = config.seed ^ 0xd6e8feb86659fd93ULL;
    std::vector<std::size_t> order(n_train);
    for (std::size_t i = 0; i < n_train; ++i) order[i] = i;

    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        for (std::size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1], order[ad::rand_below(shuffle_rng, i)]);
        for (std::size_t start = 0; start < order.size();
             start += static_cast<std::size_t>(config.batch)) {
            std::size_t stop =
                std::min(order.size(), start + static_cast<std::size_t>(config.batch));
            const double inv = 1.0 / static_cast<double>(stop - start);
            for (std::size_t i = start; i < stop; ++i) {
                const ProbeExample& ex = data[order[i]];
                Tape tape;
                Var lg = net.logits(tape, ex);
                Var nll = nn::sub(nn::log_sum_exp_cols(lg), nn::pick(lg, ex.label, 0));
                tape.backward(nn::scale(nll, inv));
            }
            opt.step(net.store);
        }
    }

    std::size_t hits = 0;
    for (std::size_t i = n_train; i < data.size(); ++i) {
        Tape tape;
        Matrix lg = net.logits(tape, data[i]).value();
        int pred = lg(1, 0) > lg(0, 0) ? 1 : 0;
        hits += static_cast<std::size_t>(pred == data[i].label);
    }
    return static_cast<double>(hits) / static_cast<double>(n_hold);
}

}  // namespace chainlab::eval
